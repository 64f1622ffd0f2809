//! Matching inferred events to ground truth, per-snapshot metrics and
//! percentile bootstrap confidence intervals.

use std::cmp::Ordering;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Location;
use crate::rng::{stream, Purpose};
use crate::samplers::Snapshot;
use crate::worldgen::write_rows;

pub const DEFAULT_THRESHOLD: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchedPair {
    pub true_id: u64,
    pub inferred_id: u64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    pub precision: f64,
    pub recall: f64,
    /// Mean (x, t) distance over matched pairs; `None` when nothing matched.
    pub location_error: Option<f64>,
    pub n_true: usize,
    pub n_inferred: usize,
    pub n_matched: usize,
}

fn by_time_then_x(a: &Location, b: &Location) -> Ordering {
    a.t.total_cmp(&b.t).then(a.x.total_cmp(&b.x)).then(a.id.cmp(&b.id))
}

fn distance(a: &Location, b: &Location) -> f64 {
    (a.x - b.x).hypot(a.t - b.t)
}

/// Greedy matching: true events in ascending `(t, x)` order each take the
/// closest still-unmatched inferred event, and keep it only if both
/// `|dx|` and `|dt|` are below `threshold`. Inferred events are sorted by
/// `(t, x, id)` first and ties on distance go to the earlier one, so the result
/// does not depend on the order of either input.
pub fn match_events(truth: &[Location], inferred: &[Location], threshold: f64) -> MatchReport {
    let mut truth = truth.to_vec();
    truth.sort_by(by_time_then_x);
    let mut inferred = inferred.to_vec();
    inferred.sort_by(by_time_then_x);

    let mut taken = vec![false; inferred.len()];
    let mut pairs = Vec::new();
    for t in &truth {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in inferred.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = distance(t, e);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, d)) = best {
            let e = &inferred[i];
            if (t.t - e.t).abs() < threshold && (t.x - e.x).abs() < threshold {
                taken[i] = true;
                pairs.push(MatchedPair {
                    true_id: t.id,
                    inferred_id: e.id,
                    distance: d,
                });
            }
        }
    }
    report(pairs, truth.len(), inferred.len())
}

fn report(pairs: Vec<MatchedPair>, n_true: usize, n_inferred: usize) -> MatchReport {
    let n_matched = pairs.len();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let location_error =
        (n_matched > 0).then(|| pairs.iter().map(|p| p.distance).sum::<f64>() / n_matched as f64);
    MatchReport {
        precision: ratio(n_matched, n_inferred),
        recall: ratio(n_matched, n_true),
        location_error,
        pairs,
        n_true,
        n_inferred,
        n_matched,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub snapshot_id: usize,
    pub step: u64,
    pub wall_seconds: f64,
    pub precision: f64,
    pub recall: f64,
    pub location_error: Option<f64>,
    pub n_inferred: usize,
}

pub fn metric_trace(snapshots: &[Snapshot], truth: &[Location], threshold: f64) -> Vec<MetricRow> {
    snapshots
        .iter()
        .map(|s| {
            let r = match_events(truth, &s.events, threshold);
            MetricRow {
                snapshot_id: s.id,
                step: s.step,
                wall_seconds: s.wall_seconds,
                precision: r.precision,
                recall: r.recall,
                location_error: r.location_error,
                n_inferred: r.n_inferred,
            }
        })
        .collect()
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_metric_trace(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_rows(
        path,
        &["snapshot_id", "step", "wall_seconds", "precision", "recall", "location_error", "event_count"],
        rows.iter().map(|r| {
            vec![
                r.snapshot_id.to_string(),
                r.step.to_string(),
                r.wall_seconds.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                fmt_opt(r.location_error),
                r.n_inferred.to_string(),
            ]
        }),
    )
}

pub fn write_match_report(path: &Path, report: &MatchReport) -> Result<()> {
    write_rows(
        path,
        &["true_id", "inferred_id", "distance"],
        report
            .pairs
            .iter()
            .map(|p| vec![p.true_id.to_string(), p.inferred_id.to_string(), p.distance.to_string()]),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapCI {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) if frac > 0.0 => sorted[i] + frac * (next - sorted[i]),
        _ => sorted[i],
    }
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<BootstrapCI> {
    if values.is_empty() {
        return Err(Error::validation("bootstrap", "no values"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::validation("bootstrap", format!("level must be in (0, 1), got {level}")));
    }
    if resamples == 0 {
        return Err(Error::validation("bootstrap", "resamples must be >= 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("bootstrap", "values must be finite"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = stream(seed, Purpose::Bootstrap, &[]);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = percentile(&means, tail).min(mean);
    let hi = percentile(&means, 1.0 - tail).max(mean);
    Ok(BootstrapCI {
        mean,
        lo,
        hi,
        level,
        resamples,
    })
}
