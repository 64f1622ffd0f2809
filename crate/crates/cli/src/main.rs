use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chromatic_mh::evaluation::{
    match_events, metric_trace, write_match_report, write_metric_trace, DEFAULT_THRESHOLD,
};
use chromatic_mh::experiment::{read_spec, run_experiment};
use chromatic_mh::model::Location;
use chromatic_mh::proposals::{MoveDistribution, StepSizes};
use chromatic_mh::samplers::{
    read_snapshots, run, write_samples, write_snapshot_index, write_trace, Algorithm, SamplerConfig,
    SAMPLES_FILE, SNAPSHOTS_FILE, TRACE_FILE,
};
use chromatic_mh::worldgen::{
    parse_config, read_config, read_events, read_world, sample_world, set_config_key, write_world,
    WorldFiles, CONFIG_FILE,
};
use chromatic_mh::{Error, ModelConfig, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chromatic-mh", version, about = "Parallel MH inference for a 1-D seismic event model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic world and write its files.
    Generate(GenerateArgs),
    /// Run a sampler on a world's signals.
    Infer(InferArgs),
    /// Score recorded samples against a world's true events.
    Evaluate(EvaluateArgs),
    /// Run a multi-world experiment described by a spec file.
    Experiment(ExperimentArgs),
}

/// Model parameters; each overrides the value from the config file.
#[derive(Args, Default)]
struct ModelFlags {
    #[arg(long = "lambda_rate")]
    lambda_rate: Option<String>,
    #[arg(long = "T")]
    time_span: Option<String>,
    #[arg(long = "x_max")]
    x_max: Option<String>,
    #[arg(long = "v")]
    v: Option<String>,
    #[arg(long = "sigma_arrival")]
    sigma_arrival: Option<String>,
    #[arg(long = "t_s")]
    t_s: Option<String>,
    #[arg(long = "var_noise")]
    var_noise: Option<String>,
    #[arg(long = "var_event")]
    var_event: Option<String>,
    #[arg(long = "sample_rate")]
    sample_rate: Option<String>,
    /// Comma-separated station positions.
    #[arg(long = "stations")]
    stations: Option<String>,
}

impl ModelFlags {
    fn apply(&self, config: &mut ModelConfig) -> Result<()> {
        let pairs = [
            ("lambda_rate", &self.lambda_rate),
            ("T", &self.time_span),
            ("x_max", &self.x_max),
            ("v", &self.v),
            ("sigma_arrival", &self.sigma_arrival),
            ("t_s", &self.t_s),
            ("var_noise", &self.var_noise),
            ("var_event", &self.var_event),
            ("sample_rate", &self.sample_rate),
            ("stations", &self.stations),
        ];
        for (key, value) in pairs {
            if let Some(value) = value {
                set_config_key(config, key, value).map_err(|m| Error::validation(format!("--{key}"), m))?;
            }
        }
        config.validate()
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Model config file (key=value lines); defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct InferArgs {
    /// World directory; only its config and signals are read.
    #[arg(long)]
    world: PathBuf,
    #[arg(long, default_value = "serial")]
    sampler: String,
    /// Total MH step budget; sets the number of epochs.
    #[arg(long, conflicts_with = "epochs")]
    steps: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "steps-per-epoch", default_value_t = 500)]
    steps_per_epoch: usize,
    #[arg(long, default_value_t = 4)]
    regions: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "burn-in", default_value_t = 0.5)]
    burn_in: f64,
    /// Steps between snapshots; defaults to steps-per-epoch.
    #[arg(long = "record-every")]
    record_every: Option<u64>,
    /// Birth, death, location, arrival and joint probabilities.
    #[arg(long = "move-weights", value_delimiter = ',', num_args = 5)]
    move_weights: Option<Vec<f64>>,
    /// Location x, location t, arrival and joint step sizes.
    #[arg(long = "step-sizes", value_delimiter = ',', num_args = 4)]
    step_sizes: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// World directory holding the true events.
    #[arg(long)]
    truth: PathBuf,
    /// samples.csv from `infer`.
    #[arg(long)]
    samples: PathBuf,
    /// Snapshot index; defaults to snapshots.csv beside the samples file when present.
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Output directory; defaults to the samples file's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Spec file (key=value lines).
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the spec's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::validation("config", format!("{}: {e}", path.display())))?;
            parse_config(&text, path, ModelConfig::default())?
        }
        None => ModelConfig::default(),
    };
    args.model.apply(&mut config)?;
    let world = sample_world(&config, args.seed);
    let files = write_world(&world, &args.out)?;
    println!("events: {}", world.events.len());
    println!("tau_max: {}", config.tau_max());
    println!("wrote {}", files.events.parent().unwrap_or(Path::new(".")).display());
    Ok(())
}

fn infer(args: InferArgs) -> Result<()> {
    let algorithm: Algorithm = args.sampler.parse()?;
    let mut world = read_world(&args.world)?;
    args.model.apply(&mut world.config)?;
    let mut sampler = SamplerConfig::new(algorithm, args.steps_per_epoch, 1, args.regions, args.seed);
    sampler.epochs = match (args.steps, args.epochs) {
        (Some(total), _) => total.div_ceil(sampler.steps_per_full_epoch().max(1)) as usize,
        (None, Some(e)) => e,
        (None, None) => 10,
    };
    sampler.workers = args.workers;
    sampler.burn_in_fraction = args.burn_in;
    if let Some(r) = args.record_every {
        sampler.record_every = r;
    }
    if let Some(w) = &args.move_weights {
        sampler.moves = MoveDistribution::new(w[0], w[1], w[2], w[3], w[4])?;
    }
    if let Some(s) = &args.step_sizes {
        sampler.step_sizes = StepSizes {
            location_x: s[0],
            location_t: s[1],
            arrival: s[2],
            joint: s[3],
        };
    }
    let trace = run(&world.config, &world.signals, &sampler)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::validation("out", format!("{}: {e}", args.out.display())))?;
    write_trace(&args.out.join(TRACE_FILE), &trace)?;
    write_samples(&args.out.join(SAMPLES_FILE), &trace.snapshots)?;
    write_snapshot_index(&args.out.join(SNAPSHOTS_FILE), &trace.snapshots)?;
    let last = trace.rows.last().expect("at least one epoch");
    println!(
        "{}: {} steps, {} snapshots, final event_count {}, final log_joint {:.3}, acceptance {:.3}",
        algorithm,
        last.step,
        trace.snapshots.len(),
        last.event_count,
        last.log_joint,
        trace.acceptance_rate()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    if !(args.threshold > 0.0) {
        return Err(Error::validation("--threshold", "must be > 0"));
    }
    // the config must still parse even though only events are used
    read_config(&args.truth.join(CONFIG_FILE))?;
    let truth: Vec<Location> = read_events(&WorldFiles::in_dir(&args.truth).events)?;
    let index = args.snapshots.clone().or_else(|| {
        let beside = args.samples.with_file_name(SNAPSHOTS_FILE);
        beside.exists().then_some(beside)
    });
    let snapshots = read_snapshots(&args.samples, index.as_deref())?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.samples.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&out).map_err(|e| Error::validation("out", format!("{}: {e}", out.display())))?;
    let rows = metric_trace(&snapshots, &truth, args.threshold);
    write_metric_trace(&out.join("metric_trace.csv"), &rows)?;
    let final_events = snapshots.last().map(|s| s.events.clone()).unwrap_or_default();
    let report = match_events(&truth, &final_events, args.threshold);
    write_match_report(&out.join("match.csv"), &report)?;
    let error = report
        .location_error
        .map_or_else(|| "n/a".to_string(), |e| format!("{e:.4}"));
    println!(
        "snapshots: {}, final: precision {:.4} recall {:.4} location_error {} ({} true, {} inferred, {} matched)",
        snapshots.len(),
        report.precision,
        report.recall,
        error,
        report.n_true,
        report.n_inferred,
        report.n_matched
    );
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut spec = read_spec(&args.spec)?;
    if let Some(out) = args.out {
        spec.out_dir = out;
    }
    let report = run_experiment(&spec)?;
    for row in &report.summary {
        println!(
            "{:<18} {:<15} mean {:>12.5} ci [{:.5}, {:.5}]",
            row.algorithm.name(),
            row.metric,
            row.mean,
            row.ci_lo,
            row.ci_hi
        );
    }
    for (dir, err) in &report.failures {
        eprintln!("warning: run {} failed: {err}", dir.display());
    }
    if !report.failures.is_empty() {
        eprintln!(
            "warning: {} of {} runs failed; summary covers completed runs",
            report.failures.len(),
            report.failures.len() + report.metrics.len()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Infer(a) => infer(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
