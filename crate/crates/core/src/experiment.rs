//! Multi-world experiments: generate worlds, run every sampler several
//! times on each, score the runs and summarise them with bootstrap CIs.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! metrics.csv   one row per completed run
//! summary.csv   mean and CI per sampler and metric
//! plot.csv      long-format metric traces for plotting
//! world_<w>/               generated world files
//! world_<w>/run_<r>/<alg>/ trace.csv, samples.csv, snapshots.csv, metric_trace.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::{bootstrap_ci, fmt_opt, match_events, metric_trace, write_metric_trace, DEFAULT_THRESHOLD};
use crate::model::{Location, ModelConfig};
use crate::rng::{derive_key, Purpose};
use crate::samplers::{
    run, write_samples, write_snapshot_index, write_trace, Algorithm, SamplerConfig, SAMPLES_FILE,
    SNAPSHOTS_FILE, TRACE_FILE,
};
use crate::worldgen::{read_config, sample_world, set_config_key, write_world, Table};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "plot.csv";
pub const METRIC_TRACE_FILE: &str = "metric_trace.csv";

pub const SUMMARY_METRICS: [&str; 4] = ["precision", "recall", "location_error", "log_joint"];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub n_worlds: usize,
    pub runs_per_world: usize,
    pub algorithms: Vec<Algorithm>,
    /// MH steps per run, shared by every sampler.
    pub total_steps: u64,
    pub steps_per_epoch: usize,
    pub n_regions: usize,
    /// Worker threads inside one run.
    pub workers: usize,
    /// Runs executed at the same time.
    pub cell_workers: usize,
    pub base_seed: u64,
    pub resamples: usize,
    pub level: f64,
    pub threshold: f64,
    pub burn_in_fraction: f64,
    /// Defaults to `steps_per_epoch`.
    pub record_every: Option<u64>,
    pub out_dir: PathBuf,
    pub config: ModelConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            n_worlds: 2,
            runs_per_world: 1,
            algorithms: vec![Algorithm::Serial],
            total_steps: 20_000,
            steps_per_epoch: 500,
            n_regions: 4,
            workers: 1,
            cell_workers: 1,
            base_seed: 1,
            resamples: 10_000,
            level: 0.95,
            threshold: DEFAULT_THRESHOLD,
            burn_in_fraction: 0.5,
            record_every: None,
            out_dir: PathBuf::from("experiment-out"),
            config: ModelConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::validation("experiment", m));
        if self.n_worlds == 0 {
            return fail("n_worlds must be >= 1");
        }
        if self.runs_per_world == 0 {
            return fail("runs_per_world must be >= 1");
        }
        if self.algorithms.is_empty() {
            return fail("algorithms must list at least one sampler");
        }
        if self.total_steps == 0 {
            return fail("total_steps must be >= 1");
        }
        if self.cell_workers == 0 {
            return fail("cell_workers must be >= 1");
        }
        if !(self.threshold > 0.0) {
            return fail("threshold must be > 0");
        }
        self.config.validate()?;
        for &a in &self.algorithms {
            self.sampler_config(a, 0).validate()?;
        }
        Ok(())
    }

    pub fn world_seed(&self, world: usize) -> u64 {
        derive_key(self.base_seed, Purpose::WorldSeed, &[world as u64])
    }

    pub fn run_seed(&self, world: usize, run: usize) -> u64 {
        derive_key(self.base_seed, Purpose::RunSeed, &[world as u64, run as u64])
    }

    /// Sampler settings for one run; epochs are chosen so every sampler gets
    /// at least `total_steps` steps.
    pub fn sampler_config(&self, algorithm: Algorithm, seed: u64) -> SamplerConfig {
        let regions = if algorithm == Algorithm::Serial { 1 } else { self.n_regions };
        let per_epoch = (self.steps_per_epoch * regions).max(1) as u64;
        let epochs = self.total_steps.div_ceil(per_epoch).max(1) as usize;
        SamplerConfig {
            workers: self.workers,
            burn_in_fraction: self.burn_in_fraction,
            record_every: self.record_every.unwrap_or(self.steps_per_epoch as u64),
            ..SamplerConfig::new(algorithm, self.steps_per_epoch, epochs, self.n_regions, seed)
        }
    }
}

fn spec_error(path: &Path, line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

/// Parses a `key=value` experiment spec. Model keys may appear inline and
/// override the file named by `config` (resolved relative to the spec).
pub fn parse_spec(text: &str, path: &Path) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let mut overrides: Vec<(usize, String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(spec_error(path, line_no, line, "expected key=value"));
        };
        let (key, value) = (key.trim(), value.trim());
        let err = |m: String| spec_error(path, line_no, key, m);
        macro_rules! num {
            () => {
                value.parse().map_err(|e| err(format!("bad value `{value}`: {e}")))?
            };
        }
        match key {
            "n_worlds" => spec.n_worlds = num!(),
            "runs_per_world" => spec.runs_per_world = num!(),
            "total_steps" => spec.total_steps = num!(),
            "steps_per_epoch" => spec.steps_per_epoch = num!(),
            "n_regions" => spec.n_regions = num!(),
            "workers" => spec.workers = num!(),
            "cell_workers" => spec.cell_workers = num!(),
            "base_seed" => spec.base_seed = num!(),
            "resamples" => spec.resamples = num!(),
            "level" => spec.level = num!(),
            "threshold" => spec.threshold = num!(),
            "burn_in_fraction" => spec.burn_in_fraction = num!(),
            "record_every" => spec.record_every = Some(num!()),
            "out_dir" => spec.out_dir = base_dir.join(value),
            "config" => spec.config = read_config(&base_dir.join(value))?,
            "algorithms" => {
                spec.algorithms = value
                    .split(',')
                    .map(|s| s.trim().parse::<Algorithm>().map_err(|e| err(e.to_string())))
                    .collect::<Result<_>>()?
            }
            _ => overrides.push((line_no, key.to_string(), value.to_string())),
        }
    }
    for (line_no, key, value) in overrides {
        set_config_key(&mut spec.config, &key, &value).map_err(|m| spec_error(path, line_no, &key, m))?;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn read_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec(&text, path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub algorithm: Algorithm,
    pub world_seed: u64,
    pub run_seed: u64,
    pub wall_seconds: f64,
    pub precision: f64,
    pub recall: f64,
    pub location_error: Option<f64>,
    pub log_joint: f64,
}

impl MetricsRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "location_error" => self.location_error,
            "log_joint" => Some(self.log_joint),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub metric: &'static str,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub algorithm: Algorithm,
    pub metric: &'static str,
    pub wall_seconds: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub metrics: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    /// `(cell directory, error)` for runs that did not complete.
    pub failures: Vec<(PathBuf, String)>,
}

struct Cell {
    world: usize,
    run: usize,
    algorithm: Algorithm,
}

struct CellOutput {
    metrics: MetricsRow,
    plot: Vec<PlotRow>,
}

fn run_cell(spec: &ExperimentSpec, cell: &Cell, world: &crate::model::World, dir: &Path) -> Result<CellOutput> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sampler = spec.sampler_config(cell.algorithm, spec.run_seed(cell.world, cell.run));
    let trace = run(&world.config, &world.signals, &sampler)?;
    write_trace(&dir.join(TRACE_FILE), &trace)?;
    write_samples(&dir.join(SAMPLES_FILE), &trace.snapshots)?;
    write_snapshot_index(&dir.join(SNAPSHOTS_FILE), &trace.snapshots)?;

    let truth: Vec<Location> = world.events.iter().map(Location::from).collect();
    let trace_metrics = metric_trace(&trace.snapshots, &truth, spec.threshold);
    write_metric_trace(&dir.join(METRIC_TRACE_FILE), &trace_metrics)?;

    let final_events: Vec<Location> = match trace.snapshots.last() {
        Some(s) => s.events.clone(),
        None => trace.final_events.iter().map(Location::from).collect(),
    };
    let report = match_events(&truth, &final_events, spec.threshold);
    let wall_seconds = trace.rows.last().map_or(0.0, |r| r.wall_seconds);

    let algorithm = cell.algorithm;
    let mut plot = Vec::new();
    for m in &trace_metrics {
        let mut push = |metric, value: Option<f64>| {
            if let Some(value) = value {
                plot.push(PlotRow {
                    algorithm,
                    metric,
                    wall_seconds: m.wall_seconds,
                    value,
                });
            }
        };
        push("precision", Some(m.precision));
        push("recall", Some(m.recall));
        push("location_error", m.location_error);
    }
    plot.extend(trace.rows.iter().map(|r| PlotRow {
        algorithm,
        metric: "log_joint",
        wall_seconds: r.wall_seconds,
        value: r.log_joint,
    }));

    Ok(CellOutput {
        metrics: MetricsRow {
            algorithm,
            world_seed: spec.world_seed(cell.world),
            run_seed: spec.run_seed(cell.world, cell.run),
            wall_seconds,
            precision: report.precision,
            recall: report.recall,
            location_error: report.location_error,
            log_joint: trace.final_log_joint(),
        },
        plot,
    })
}

/// Bootstrap summary per sampler and metric. Metrics with no values for a
/// sampler (no run matched anything) are left out.
pub fn summarize(metrics: &[MetricsRow], spec: &ExperimentSpec) -> Result<Vec<SummaryRow>> {
    let mut algorithms: Vec<Algorithm> = metrics.iter().map(|m| m.algorithm).collect();
    algorithms.sort();
    algorithms.dedup();
    let mut out = Vec::new();
    for algorithm in algorithms {
        for (k, metric) in SUMMARY_METRICS.into_iter().enumerate() {
            let values: Vec<f64> = metrics
                .iter()
                .filter(|m| m.algorithm == algorithm)
                .filter_map(|m| m.metric(metric))
                .collect();
            if values.is_empty() {
                continue;
            }
            let seed = derive_key(spec.base_seed, Purpose::Bootstrap, &[algorithm as u64, k as u64]);
            let ci = bootstrap_ci(&values, spec.level, spec.resamples, seed)?;
            out.push(SummaryRow {
                algorithm,
                metric,
                mean: ci.mean,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
            });
        }
    }
    Ok(out)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let out = &spec.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let worlds: Vec<_> = (0..spec.n_worlds)
        .map(|w| {
            let world = sample_world(&spec.config, spec.world_seed(w));
            write_world(&world, &out.join(format!("world_{w}")))?;
            Ok(world)
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for world in 0..spec.n_worlds {
        for run in 0..spec.runs_per_world {
            for &algorithm in &spec.algorithms {
                cells.push(Cell { world, run, algorithm });
            }
        }
    }
    let cell_dir = |c: &Cell| {
        out.join(format!("world_{}", c.world))
            .join(format!("run_{}", c.run))
            .join(c.algorithm.name())
    };
    let outputs = crate::samplers::run_pool(cells, spec.cell_workers, |cell| {
        let dir = cell_dir(&cell);
        let result = run_cell(spec, &cell, &worlds[cell.world], &dir);
        (dir, result)
    });

    let mut metrics = Vec::new();
    let mut plot = Vec::new();
    let mut failures = Vec::new();
    for (dir, result) in outputs {
        match result {
            Ok(o) => {
                metrics.push(o.metrics);
                plot.extend(o.plot);
            }
            Err(e) => failures.push((dir, e.to_string())),
        }
    }
    write_metrics(&out.join(METRICS_FILE), &metrics)?;
    let summary = summarize(&metrics, spec)?;
    write_summary(&out.join(SUMMARY_FILE), &summary)?;
    write_plot(&out.join(PLOT_FILE), &plot)?;
    Ok(ExperimentReport {
        metrics,
        summary,
        failures,
    })
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    crate::worldgen::write_rows(
        path,
        &["sampler", "world_seed", "run_seed", "wall_seconds", "precision", "recall", "location_error", "log_joint"],
        rows.iter().map(|r| {
            vec![
                r.algorithm.name().to_string(),
                r.world_seed.to_string(),
                r.run_seed.to_string(),
                r.wall_seconds.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                fmt_opt(r.location_error),
                r.log_joint.to_string(),
            ]
        }),
    )
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let table = Table::read(
        path,
        &["sampler", "world_seed", "run_seed", "wall_seconds", "precision", "recall", "location_error", "log_joint"],
    )?;
    (0..table.rows.len())
        .map(|r| {
            let name: String = table.field(r, 0, "sampler")?;
            let raw_error: String = table.field(r, 6, "location_error")?;
            let location_error = if raw_error.trim().is_empty() {
                None
            } else {
                Some(table.field(r, 6, "location_error")?)
            };
            Ok(MetricsRow {
                algorithm: name
                    .parse()
                    .map_err(|e: Error| Error::table(path, r + 1, e.to_string()))?,
                world_seed: table.field(r, 1, "world_seed")?,
                run_seed: table.field(r, 2, "run_seed")?,
                wall_seconds: table.field(r, 3, "wall_seconds")?,
                precision: table.field(r, 4, "precision")?,
                recall: table.field(r, 5, "recall")?,
                location_error,
                log_joint: table.field(r, 7, "log_joint")?,
            })
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    crate::worldgen::write_rows(
        path,
        &["sampler", "metric", "mean", "ci_lo", "ci_hi"],
        rows.iter().map(|r| {
            vec![
                r.algorithm.name().to_string(),
                r.metric.to_string(),
                r.mean.to_string(),
                r.ci_lo.to_string(),
                r.ci_hi.to_string(),
            ]
        }),
    )
}

pub fn write_plot(path: &Path, rows: &[PlotRow]) -> Result<()> {
    crate::worldgen::write_rows(
        path,
        &["algorithm", "metric", "wall_seconds", "value"],
        rows.iter().map(|r| {
            vec![
                r.algorithm.name().to_string(),
                r.metric.to_string(),
                r.wall_seconds.to_string(),
                r.value.to_string(),
            ]
        }),
    )
}
