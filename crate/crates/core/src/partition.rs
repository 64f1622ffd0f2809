//! Time-axis regions, their coloring, signal windows and Markov blankets.

use std::ops::Range;

use crate::error::{Error, Result};

/// A slice `[lo, hi)` of the time axis; the last region of a partition is
/// closed on the right so that `t = T` has a home.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl Region {
    /// The whole interval `[0, T]`.
    pub fn whole(time_span: f64) -> Self {
        Self {
            index: 0,
            lo: 0.0,
            hi: time_span,
            closed: true,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && (t < self.hi || (self.closed && t == self.hi))
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub boundaries: Vec<f64>,
    pub regions: Vec<Region>,
    /// One color per region; empty until [`color_partition`] runs.
    pub colors: Vec<usize>,
    pub n_colors: usize,
    pub offset: f64,
    pub length: f64,
    pub time_span: f64,
}

impl Partition {
    /// Index of the region holding time `t` (clamped into `[0, T]`).
    pub fn region_of(&self, t: f64) -> usize {
        let interior = &self.boundaries[1..self.boundaries.len() - 1];
        interior.partition_point(|&b| b <= t)
    }

    pub fn regions_of_color(&self, color: usize) -> impl Iterator<Item = &Region> + '_ {
        self.regions
            .iter()
            .zip(&self.colors)
            .filter(move |(_, &c)| c == color)
            .map(|(r, _)| r)
    }
}

/// Boundaries at `0, u, u + l, u + 2l, ..., T`.
pub fn build_partition(time_span: f64, length: f64, offset: f64) -> Result<Partition> {
    if !(time_span.is_finite() && time_span > 0.0) {
        return Err(Error::validation("partition", format!("T must be > 0, got {time_span}")));
    }
    if !(length > 0.0 && length <= time_span) {
        return Err(Error::validation(
            "partition",
            format!("region length must be in (0, T], got {length}"),
        ));
    }
    if !(0.0..length).contains(&offset) {
        return Err(Error::validation(
            "partition",
            format!("offset must be in [0, {length}), got {offset}"),
        ));
    }
    // boundaries closer than this to T are dropped instead of making a sliver region
    let eps = 1e-9 * time_span;
    let mut boundaries = vec![0.0];
    let mut b = offset;
    let mut k = 0u32;
    while b < time_span - eps {
        if b > eps {
            boundaries.push(b);
        }
        k += 1;
        b = offset + f64::from(k) * length;
    }
    boundaries.push(time_span);
    let n = boundaries.len() - 1;
    let regions = (0..n)
        .map(|i| Region {
            index: i,
            lo: boundaries[i],
            hi: boundaries[i + 1],
            closed: i == n - 1,
        })
        .collect();
    Ok(Partition {
        boundaries,
        regions,
        colors: Vec::new(),
        n_colors: 0,
        offset,
        length,
        time_span,
    })
}

/// Two colors when `l >= tau_max`, three when `tau_max / 2 <= l < tau_max`.
pub fn color_partition(mut partition: Partition, tau_max: f64) -> Result<Partition> {
    let l = partition.length;
    let n_colors = if l >= tau_max {
        2
    } else if l >= tau_max / 2.0 {
        3
    } else {
        return Err(Error::Coloring(format!(
            "region length {l} < tau_max / 2 = {} would need more than three colors",
            tau_max / 2.0
        )));
    };
    partition.colors = (0..partition.regions.len()).map(|i| i % n_colors).collect();
    partition.n_colors = n_colors;
    check_coloring(&partition, tau_max)?;
    Ok(partition)
}

fn check_coloring(p: &Partition, tau_max: f64) -> Result<()> {
    let tol = 1e-9 * p.time_span;
    for (i, a) in p.regions.iter().enumerate() {
        for (j, b) in p.regions.iter().enumerate().skip(i + 1) {
            if p.colors[i] != p.colors[j] {
                continue;
            }
            if j == i + 1 {
                return Err(Error::Coloring(format!("adjacent regions {i} and {j} share a color")));
            }
            if b.lo - a.hi < tau_max - tol {
                return Err(Error::Coloring(format!(
                    "regions {i} and {j} share color {} but are only {} apart (tau_max {tau_max})",
                    p.colors[i],
                    b.lo - a.hi
                )));
            }
        }
    }
    Ok(())
}

/// Sample indices covering `[region.lo, min(region.hi + tau_max, T))`.
pub fn signal_window(region: &Region, tau_max: f64, time_span: f64, sample_rate: f64) -> Range<usize> {
    let end = (region.hi + tau_max).min(time_span);
    let n = (time_span * sample_rate).round() as usize;
    let lo = ((region.lo * sample_rate).ceil() as usize).min(n);
    let hi = ((end * sample_rate).ceil() as usize).min(n);
    lo..hi.max(lo)
}

/// Regions and signal blocks a region's events are coupled to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Blanket {
    pub regions: Vec<usize>,
    /// Indices of signal blocks `s^b = [lo_b, hi_b)` touched by the region's signal window.
    pub signal_blocks: Vec<usize>,
}

/// Neighbouring regions are those whose signal windows overlap this region's.
/// With `l >= tau_max` that is exactly `{n - 1, n + 1}`.
pub fn markov_blanket(index: usize, partition: &Partition, tau_max: f64) -> Blanket {
    let window = |r: &Region| (r.lo, (r.hi + tau_max).min(partition.time_span));
    let (lo, hi) = window(&partition.regions[index]);
    let overlaps = |a: (f64, f64)| a.0 < hi && lo < a.1;
    let regions = partition
        .regions
        .iter()
        .filter(|r| r.index != index && overlaps(window(r)))
        .map(|r| r.index)
        .collect();
    let signal_blocks = partition
        .regions
        .iter()
        .filter(|r| overlaps((r.lo, r.hi)))
        .map(|r| r.index)
        .collect();
    Blanket {
        regions,
        signal_blocks,
    }
}
