//! Serial, naive-parallel and chromatic (static and dynamic) MH drivers.
//!
//! Work is organised in phases. A phase hands a set of regions to the worker
//! pool, each region runs its own chain on a private RNG stream keyed by
//! `(seed, epoch, color, region)`, and the scheduler merges the results once
//! every region has finished. Because the streams do not depend on which
//! worker runs a region, traces are identical for any worker count.
//!
//! * serial: one region `[0, T]` per phase, `k` steps.
//! * naive: fixed partition, every region in the same phase, each scoring
//!   only its own events against its own signal window.
//! * chromatic: one phase per color; regions score against the full
//!   hypothesis with every other region's events frozen at phase start.
//!   The dynamic variant redraws the partition offset after every epoch.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{log_joint_of, Event, Location, ModelConfig, ObservedSignals};
use crate::partition::{build_partition, color_partition, signal_window, Partition, Region};
use crate::proposals::{mh_step, propose, MoveContext, MoveDistribution, MoveKind, StepSizes};
use crate::rng::{stream, Purpose};
use crate::scoring::{Change, Scope, Scorer};
use crate::worldgen::{write_rows, Table};

use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Serial,
    Naive,
    ChromaticStatic,
    ChromaticDynamic,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Serial,
        Algorithm::Naive,
        Algorithm::ChromaticStatic,
        Algorithm::ChromaticDynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Serial => "serial",
            Algorithm::Naive => "naive",
            Algorithm::ChromaticStatic => "chromatic-static",
            Algorithm::ChromaticDynamic => "chromatic-dynamic",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::validation(
                    "sampler",
                    format!("unknown sampler `{s}` (expected serial, naive, chromatic-static or chromatic-dynamic)"),
                )
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    /// `k`: MH steps per region per phase.
    pub steps_per_epoch: usize,
    pub epochs: usize,
    /// Ignored by the serial sampler.
    pub n_regions: usize,
    pub workers: usize,
    pub seed: u64,
    pub burn_in_fraction: f64,
    /// Steps between recorded snapshots after burn-in.
    pub record_every: u64,
    pub moves: MoveDistribution,
    pub step_sizes: StepSizes,
    /// Starting hypothesis; empty by default.
    pub initial_events: Vec<Event>,
}

impl SamplerConfig {
    pub fn new(algorithm: Algorithm, steps_per_epoch: usize, epochs: usize, n_regions: usize, seed: u64) -> Self {
        Self {
            algorithm,
            steps_per_epoch,
            epochs,
            n_regions,
            workers: 1,
            seed,
            burn_in_fraction: 0.5,
            record_every: steps_per_epoch as u64,
            moves: MoveDistribution::default(),
            step_sizes: StepSizes::default(),
            initial_events: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation("sampler config", m));
        if self.steps_per_epoch == 0 {
            return fail("steps_per_epoch must be >= 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.n_regions == 0 {
            return fail("n_regions must be >= 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return fail(format!("burn_in_fraction must be in [0, 1), got {}", self.burn_in_fraction));
        }
        if self.record_every == 0 {
            return fail("record_every must be >= 1".into());
        }
        self.step_sizes.validate()
    }

    /// Nominal MH steps in one epoch (all regions together).
    pub fn steps_per_full_epoch(&self) -> u64 {
        let regions = if self.algorithm == Algorithm::Serial { 1 } else { self.n_regions };
        (self.steps_per_epoch * regions) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_full_epoch() * self.epochs as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub wall_seconds: f64,
    pub step: u64,
    pub log_joint: f64,
    pub event_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub id: usize,
    pub step: u64,
    pub wall_seconds: f64,
    pub events: Vec<Location>,
}

/// One region's slot in the schedule. `start_seq` and `end_seq` come from a
/// counter shared by all workers, so they order starts and commits globally.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseRecord {
    pub phase: u64,
    pub epoch: usize,
    pub color: usize,
    pub region: usize,
    pub start_seq: u64,
    pub end_seq: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub algorithm: Algorithm,
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
    pub schedule: Vec<PhaseRecord>,
    /// Indexed by [`MoveKind::index`].
    pub moves: [MoveStats; 5],
    pub final_events: Vec<Event>,
}

impl Trace {
    pub fn final_log_joint(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.log_joint)
    }

    /// Copy with wall-clock times and the schedule log cleared, for comparing runs.
    pub fn without_timing(&self) -> Trace {
        let mut t = self.clone();
        t.rows.iter_mut().for_each(|r| r.wall_seconds = 0.0);
        t.snapshots.iter_mut().for_each(|s| s.wall_seconds = 0.0);
        t.schedule.clear();
        t
    }

    pub fn acceptance_rate(&self) -> f64 {
        let (p, a) = self
            .moves
            .iter()
            .fold((0, 0), |(p, a), m| (p + m.proposed, a + m.accepted));
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

/// Runs `f` over `tasks` on up to `workers` threads. Task `i` goes to worker
/// `i % workers`; results come back in task order. Returning from the scope
/// is the barrier.
pub(crate) fn run_pool<T, R, F>(tasks: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n = tasks.len();
    let workers = workers.min(n).max(1);
    if workers == 1 {
        return tasks.into_iter().map(f).collect();
    }
    let mut buckets: Vec<Vec<(usize, T)>> = (0..workers).map(|_| Vec::new()).collect();
    for (i, task) in tasks.into_iter().enumerate() {
        buckets[i % workers].push((i, task));
    }
    let f = &f;
    let mut slots: Vec<Option<R>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = buckets
            .into_iter()
            .map(|bucket| scope.spawn(move || bucket.into_iter().map(|(i, t)| (i, f(t))).collect::<Vec<_>>()))
            .collect();
        for handle in handles {
            for (i, r) in handle.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every task ran")).collect()
}

/// What a region's chain scores against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScopeKind {
    /// Whole world, no constraint (serial).
    Global,
    /// Others frozen, full signal (chromatic).
    Conditioned,
    /// Region-local prior and signal window, nothing else (naive).
    Isolated,
}

struct RegionTask {
    region: Region,
    color: usize,
    own: Vec<Event>,
    frozen: Vec<Event>,
    steps: usize,
}

struct RegionResult {
    own: Vec<Event>,
    moves: [MoveStats; 5],
    record: PhaseRecord,
}

struct Shared<'a> {
    config: &'a ModelConfig,
    scorer: &'a Scorer<'a>,
    sampler: &'a SamplerConfig,
    kind: ScopeKind,
    seq: &'a AtomicU64,
}

/// Runs one region's chain; `observe` sees every scored change with its delta.
fn region_chain<R, O>(
    shared: &Shared<'_>,
    region: &Region,
    own: &mut Vec<Event>,
    frozen: &[Event],
    steps: usize,
    id_base: u64,
    rng: &mut R,
    mut observe: O,
) -> [MoveStats; 5]
where
    R: Rng + ?Sized,
    O: FnMut(&[Event], &Change, f64),
{
    let config = shared.config;
    let scope = match shared.kind {
        ScopeKind::Global => Scope::global(config),
        ScopeKind::Conditioned => Scope::conditioned(config, frozen),
        ScopeKind::Isolated => Scope::isolated(
            region.lo,
            region.hi,
            signal_window(region, config.tau_max(), config.time_span, config.sample_rate),
        ),
    };
    let constraint = (shared.kind != ScopeKind::Global).then_some(region);
    let mut stats = [MoveStats::default(); 5];
    let mut born = 0u64;
    for _ in 0..steps {
        let ctx = MoveContext {
            config,
            region,
            own,
            n_total: own.len() + frozen.len(),
            moves: &shared.sampler.moves,
            steps: &shared.sampler.step_sizes,
        };
        let proposal = propose(&ctx, rng, id_base | born);
        let kind = proposal.kind;
        if kind == MoveKind::Birth {
            born += 1;
        }
        let outcome = mh_step(
            own,
            proposal,
            |own, change| {
                let d = shared.scorer.delta(own, &scope, change);
                observe(own, change, d);
                d
            },
            constraint,
            rng,
        );
        stats[kind.index()].proposed += 1;
        stats[kind.index()].accepted += u64::from(outcome.accepted);
    }
    stats
}

fn run_task(shared: &Shared<'_>, phase: u64, epoch: usize, mut task: RegionTask) -> RegionResult {
    let start_seq = shared.seq.fetch_add(1, Ordering::SeqCst);
    let index = task.region.index;
    let mut rng = stream(
        shared.sampler.seed,
        Purpose::RegionChain,
        &[epoch as u64, task.color as u64, index as u64],
    );
    let id_base = (phase << 32) | ((index as u64) << 24);
    let moves = region_chain(
        shared,
        &task.region,
        &mut task.own,
        &task.frozen,
        task.steps,
        id_base,
        &mut rng,
        |_, _, _| {},
    );
    let end_seq = shared.seq.fetch_add(1, Ordering::SeqCst);
    RegionResult {
        own: task.own,
        moves,
        record: PhaseRecord {
            phase,
            epoch,
            color: task.color,
            region: index,
            start_seq,
            end_seq,
        },
    }
}

/// Events grouped by region, in region order.
fn assign(partition: &Partition, events: Vec<Event>) -> Vec<Vec<Event>> {
    let mut by_region: Vec<Vec<Event>> = vec![Vec::new(); partition.regions.len()];
    for e in events {
        by_region[partition.region_of(e.t)].push(e);
    }
    by_region
}

fn region_steps(k: usize, region: &Region, length: f64) -> usize {
    ((k as f64 * region.length() / length).round() as usize).max(1)
}

struct Recorder<'a> {
    config: &'a ModelConfig,
    signals: &'a ObservedSignals,
    start: Instant,
    burn_in: u64,
    record_every: u64,
    next_record: u64,
    step: u64,
    trace: Trace,
}

impl<'a> Recorder<'a> {
    fn new(config: &'a ModelConfig, signals: &'a ObservedSignals, sampler: &SamplerConfig) -> Self {
        let burn_in = (sampler.burn_in_fraction * sampler.total_steps() as f64).floor() as u64;
        Self {
            config,
            signals,
            start: Instant::now(),
            burn_in,
            record_every: sampler.record_every,
            next_record: burn_in.max(1),
            step: 0,
            trace: Trace {
                algorithm: sampler.algorithm,
                rows: Vec::new(),
                snapshots: Vec::new(),
                schedule: Vec::new(),
                moves: [MoveStats::default(); 5],
                final_events: Vec::new(),
            },
        }
    }

    fn commit(&mut self, results: &[RegionResult], steps: u64) {
        self.step += steps;
        for r in results {
            self.trace.schedule.push(r.record);
            for (total, m) in self.trace.moves.iter_mut().zip(&r.moves) {
                total.proposed += m.proposed;
                total.accepted += m.accepted;
            }
        }
    }

    /// Trace row (and snapshot, if due) for the hypothesis after a phase.
    fn observe(&mut self, by_region: &[Vec<Event>]) {
        let wall_seconds = self.start.elapsed().as_secs_f64();
        let events: Vec<Event> = by_region.iter().flatten().cloned().collect();
        self.trace.rows.push(TraceRow {
            wall_seconds,
            step: self.step,
            log_joint: log_joint_of(&events, self.signals, self.config),
            event_count: events.len(),
        });
        if self.step >= self.burn_in && self.step >= self.next_record {
            self.trace.snapshots.push(Snapshot {
                id: self.trace.snapshots.len(),
                step: self.step,
                wall_seconds,
                events: events.iter().map(Location::from).collect(),
            });
            while self.next_record <= self.step {
                self.next_record += self.record_every;
            }
        }
    }

    fn finish(mut self, by_region: Vec<Vec<Event>>) -> Trace {
        self.trace.final_events = by_region.into_iter().flatten().collect();
        self.trace
    }
}

fn check_inputs(config: &ModelConfig, signals: &ObservedSignals, sampler: &SamplerConfig) -> Result<()> {
    config.validate()?;
    signals.check_shape(config)?;
    sampler.validate()?;
    for e in &sampler.initial_events {
        e.validate(config)?;
    }
    Ok(())
}

/// Runs the sampler selected by `sampler.algorithm`.
pub fn run(config: &ModelConfig, signals: &ObservedSignals, sampler: &SamplerConfig) -> Result<Trace> {
    match sampler.algorithm {
        Algorithm::Serial => run_serial(config, signals, sampler),
        Algorithm::Naive => run_naive_parallel(config, signals, sampler),
        Algorithm::ChromaticStatic => run_chromatic(config, signals, sampler, false),
        Algorithm::ChromaticDynamic => run_chromatic(config, signals, sampler, true),
    }
}

pub fn run_serial(config: &ModelConfig, signals: &ObservedSignals, sampler: &SamplerConfig) -> Result<Trace> {
    check_inputs(config, signals, sampler)?;
    let scorer = Scorer::new(config, signals);
    let seq = AtomicU64::new(0);
    let shared = Shared {
        config,
        scorer: &scorer,
        sampler,
        kind: ScopeKind::Global,
        seq: &seq,
    };
    let region = Region::whole(config.time_span);
    let mut recorder = Recorder::new(config, signals, sampler);
    let mut events = vec![sampler.initial_events.clone()];
    for epoch in 0..sampler.epochs {
        let task = RegionTask {
            region: region.clone(),
            color: 0,
            own: std::mem::take(&mut events[0]),
            frozen: Vec::new(),
            steps: sampler.steps_per_epoch,
        };
        let result = run_task(&shared, epoch as u64 + 1, epoch, task);
        recorder.commit(std::slice::from_ref(&result), sampler.steps_per_epoch as u64);
        events[0] = result.own;
        recorder.observe(&events);
    }
    Ok(recorder.finish(events))
}

pub fn run_naive_parallel(
    config: &ModelConfig,
    signals: &ObservedSignals,
    sampler: &SamplerConfig,
) -> Result<Trace> {
    check_inputs(config, signals, sampler)?;
    let scorer = Scorer::new(config, signals);
    let seq = AtomicU64::new(0);
    let shared = Shared {
        config,
        scorer: &scorer,
        sampler,
        kind: ScopeKind::Isolated,
        seq: &seq,
    };
    let length = config.time_span / sampler.n_regions as f64;
    let partition = build_partition(config.time_span, length, 0.0)?;
    let mut recorder = Recorder::new(config, signals, sampler);
    let mut by_region = assign(&partition, sampler.initial_events.clone());
    for epoch in 0..sampler.epochs {
        let tasks = partition
            .regions
            .iter()
            .zip(by_region.iter_mut())
            .map(|(region, own)| RegionTask {
                region: region.clone(),
                color: 0,
                own: std::mem::take(own),
                frozen: Vec::new(),
                steps: sampler.steps_per_epoch,
            })
            .collect();
        let phase = epoch as u64 + 1;
        let results = run_pool(tasks, sampler.workers, |task| run_task(&shared, phase, epoch, task));
        recorder.commit(&results, (sampler.steps_per_epoch * partition.regions.len()) as u64);
        for (slot, r) in by_region.iter_mut().zip(results) {
            *slot = r.own;
        }
        recorder.observe(&by_region);
    }
    Ok(recorder.finish(by_region))
}

fn colored_partition(config: &ModelConfig, length: f64, offset: f64) -> Result<Partition> {
    color_partition(build_partition(config.time_span, length, offset)?, config.tau_max())
}

pub fn run_chromatic(
    config: &ModelConfig,
    signals: &ObservedSignals,
    sampler: &SamplerConfig,
    dynamic: bool,
) -> Result<Trace> {
    check_inputs(config, signals, sampler)?;
    let scorer = Scorer::new(config, signals);
    let seq = AtomicU64::new(0);
    let shared = Shared {
        config,
        scorer: &scorer,
        sampler,
        kind: ScopeKind::Conditioned,
        seq: &seq,
    };
    let length = config.time_span / sampler.n_regions as f64;
    let mut partition = colored_partition(config, length, 0.0)?;
    let mut offsets = stream(sampler.seed, Purpose::Offset, &[]);
    let mut recorder = Recorder::new(config, signals, sampler);
    let mut by_region = assign(&partition, sampler.initial_events.clone());
    let mut phase = 0u64;
    for epoch in 0..sampler.epochs {
        for color in 0..partition.n_colors {
            phase += 1;
            let members: Vec<usize> = partition
                .regions_of_color(color)
                .map(|r| r.index)
                .collect();
            let tasks: Vec<RegionTask> = members
                .iter()
                .map(|&m| RegionTask {
                    region: partition.regions[m].clone(),
                    color,
                    own: by_region[m].clone(),
                    frozen: by_region
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != m)
                        .flat_map(|(_, evs)| evs.iter().cloned())
                        .collect(),
                    steps: region_steps(sampler.steps_per_epoch, &partition.regions[m], length),
                })
                .collect();
            let steps: usize = tasks.iter().map(|t| t.steps).sum();
            let results = run_pool(tasks, sampler.workers, |task| run_task(&shared, phase, epoch, task));
            recorder.commit(&results, steps as u64);
            for (&m, r) in members.iter().zip(results) {
                by_region[m] = r.own;
            }
            recorder.observe(&by_region);
        }
        if dynamic {
            let offset = offsets.random_range(0.0..length);
            partition = colored_partition(config, length, offset)?;
            by_region = assign(&partition, by_region.into_iter().flatten().collect());
        }
    }
    Ok(recorder.finish(by_region))
}

pub const TRACE_FILE: &str = "trace.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    write_rows(
        path,
        &["wall_seconds", "step", "log_joint", "event_count"],
        trace.rows.iter().map(|r| {
            vec![
                r.wall_seconds.to_string(),
                r.step.to_string(),
                r.log_joint.to_string(),
                r.event_count.to_string(),
            ]
        }),
    )
}

pub fn write_samples(path: &Path, snapshots: &[Snapshot]) -> Result<()> {
    write_rows(
        path,
        &["snapshot_id", "event_id", "x", "t"],
        snapshots.iter().flat_map(|s| {
            s.events
                .iter()
                .map(move |e| vec![s.id.to_string(), e.id.to_string(), e.x.to_string(), e.t.to_string()])
        }),
    )
}

pub fn write_snapshot_index(path: &Path, snapshots: &[Snapshot]) -> Result<()> {
    write_rows(
        path,
        &["snapshot_id", "step", "wall_seconds", "event_count"],
        snapshots.iter().map(|s| {
            vec![
                s.id.to_string(),
                s.step.to_string(),
                s.wall_seconds.to_string(),
                s.events.len().to_string(),
            ]
        }),
    )
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let table = Table::read(path, &["wall_seconds", "step", "log_joint", "event_count"])?;
    (0..table.rows.len())
        .map(|r| {
            Ok(TraceRow {
                wall_seconds: table.field(r, 0, "wall_seconds")?,
                step: table.field(r, 1, "step")?,
                log_joint: table.field(r, 2, "log_joint")?,
                event_count: table.field(r, 3, "event_count")?,
            })
        })
        .collect()
}

/// Reads samples.csv. With an index (snapshots.csv) the result keeps empty
/// snapshots and timing; without one, snapshots are the distinct ids seen in
/// the samples file, with step and wall time zero.
pub fn read_snapshots(samples: &Path, index: Option<&Path>) -> Result<Vec<Snapshot>> {
    let table = Table::read(samples, &["snapshot_id", "event_id", "x", "t"])?;
    let mut snapshots: Vec<Snapshot> = Vec::new();
    if let Some(index) = index {
        let idx = Table::read(index, &["snapshot_id", "step", "wall_seconds", "event_count"])?;
        for r in 0..idx.rows.len() {
            let id: usize = idx.field(r, 0, "snapshot_id")?;
            if id != r {
                return Err(Error::table(index, r + 1, format!("snapshot ids must be 0, 1, ...; found {id}")));
            }
            snapshots.push(Snapshot {
                id,
                step: idx.field(r, 1, "step")?,
                wall_seconds: idx.field(r, 2, "wall_seconds")?,
                events: Vec::new(),
            });
        }
    }
    for r in 0..table.rows.len() {
        let id: usize = table.field(r, 0, "snapshot_id")?;
        let loc = Location::new(table.field(r, 1, "event_id")?, table.field(r, 2, "x")?, table.field(r, 3, "t")?);
        if index.is_none() {
            while snapshots.len() <= id {
                let next = snapshots.len();
                snapshots.push(Snapshot {
                    id: next,
                    step: 0,
                    wall_seconds: 0.0,
                    events: Vec::new(),
                });
            }
        }
        match snapshots.get_mut(id) {
            Some(s) => s.events.push(loc),
            None => {
                return Err(Error::table(samples, r + 1, format!("snapshot {id} is not in the snapshot index")));
            }
        }
    }
    if index.is_none() {
        snapshots.retain(|s| !s.events.is_empty());
    }
    Ok(snapshots)
}
