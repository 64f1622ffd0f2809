//! Metropolis-Hastings move kernels and the accept/reject step.
//!
//! Every kernel works on the chain's own event list inside one region and
//! returns a [`Proposal`] carrying forward and reverse log proposal
//! densities. Kernels that cannot apply (death on an empty region, joint
//! move with fewer than two events, ...) return a null proposal, which the
//! step counts as a rejection.
//!
//! Birth and death pair up as an involution. The hypothesis is treated as an
//! ordered list whose target density is `log_joint`; a birth inserts the new
//! event into one of `n + 1` slots of the whole hypothesis, which is where
//! the `-ln(n + 1)` term of the birth's forward density comes from.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{ln_normal, Event, ModelConfig};
use crate::partition::Region;
use crate::scoring::Change;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Birth,
    Death,
    Location,
    Arrival,
    Joint,
}

impl MoveKind {
    pub const ALL: [MoveKind; 5] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::Location,
        MoveKind::Arrival,
        MoveKind::Joint,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
            MoveKind::Location => "location",
            MoveKind::Arrival => "arrival",
            MoveKind::Joint => "joint",
        }
    }
}

/// Probabilities of picking each move type.
#[derive(Clone, Debug, PartialEq)]
pub struct MoveDistribution {
    weights: [f64; 5],
}

impl Default for MoveDistribution {
    fn default() -> Self {
        Self {
            weights: [0.2, 0.2, 0.3, 0.2, 0.1],
        }
    }
}

impl MoveDistribution {
    pub fn new(birth: f64, death: f64, location: f64, arrival: f64, joint: f64) -> Result<Self> {
        let weights = [birth, death, location, arrival, joint];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("move weights", "weights must be finite and >= 0"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::validation("move weights", format!("weights sum to {sum}, not 1")));
        }
        if (birth > 0.0) != (death > 0.0) {
            return Err(Error::validation(
                "move weights",
                "birth and death must both be zero or both be positive",
            ));
        }
        Ok(Self { weights })
    }

    pub fn probability(&self, kind: MoveKind) -> f64 {
        self.weights[kind.index()]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for kind in MoveKind::ALL {
            acc += self.weights[kind.index()];
            if u < acc {
                return kind;
            }
        }
        // rounding left a sliver above the cumulative sum
        *MoveKind::ALL
            .iter()
            .rev()
            .find(|k| self.weights[k.index()] > 0.0)
            .expect("weights sum to one")
    }
}

/// Standard deviations of the random-walk kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSizes {
    pub location_x: f64,
    pub location_t: f64,
    pub arrival: f64,
    pub joint: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            location_x: 4.0,
            location_t: 4.0,
            arrival: 1.0,
            joint: 1.0,
        }
    }
}

impl StepSizes {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("location_x", self.location_x),
            ("location_t", self.location_t),
            ("arrival", self.arrival),
            ("joint", self.joint),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation("step sizes", format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub kind: MoveKind,
    /// `None` for a null proposal.
    pub change: Option<Change>,
    pub log_q_forward: f64,
    pub log_q_reverse: f64,
}

impl Proposal {
    pub fn null(kind: MoveKind) -> Self {
        Self {
            kind,
            change: None,
            log_q_forward: 0.0,
            log_q_reverse: 0.0,
        }
    }

    pub fn is_null(&self) -> bool {
        self.change.is_none()
    }

    fn symmetric(kind: MoveKind, change: Change, log_q: f64) -> Self {
        Self {
            kind,
            change: Some(change),
            log_q_forward: log_q,
            log_q_reverse: log_q,
        }
    }
}

/// Everything a kernel needs to know about the chain it proposes for.
#[derive(Clone, Copy, Debug)]
pub struct MoveContext<'a> {
    pub config: &'a ModelConfig,
    pub region: &'a Region,
    /// Events of the active region, which the chain may edit.
    pub own: &'a [Event],
    /// Size of the whole hypothesis the target is defined on (own plus frozen).
    pub n_total: usize,
    pub moves: &'a MoveDistribution,
    pub steps: &'a StepSizes,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sd
}

/// Gaussian log-density of a random-walk offset; zero-width kernels contribute nothing.
fn ln_offset(offset: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        ln_normal(offset, 0.0, sd)
    } else {
        0.0
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Birth and death share these two densities, each read from its own side.
fn birth_density(ctx: &MoveContext<'_>, event: &Event, n_total_before: usize) -> f64 {
    let config = ctx.config;
    let arrivals: f64 = event
        .arrivals
        .iter()
        .enumerate()
        .map(|(j, &a)| ln_normal(a, config.predicted_arrival(event.x, event.t, j), config.sigma_arrival))
        .sum();
    ctx.moves.probability(MoveKind::Birth).ln() - ctx.region.length().ln() - config.x_max.ln() + arrivals
        - ((n_total_before + 1) as f64).ln()
}

fn death_density(ctx: &MoveContext<'_>, k_after_birth: usize) -> f64 {
    ctx.moves.probability(MoveKind::Death).ln() - (k_after_birth as f64).ln()
}

/// New event uniform over the region and `[0, x_max]`, arrivals drawn from
/// the model's own arrival conditional.
pub fn propose_birth<R: Rng + ?Sized>(ctx: &MoveContext<'_>, rng: &mut R, id: u64) -> Proposal {
    let config = ctx.config;
    let t = rng.random_range(ctx.region.lo..ctx.region.hi);
    let x = rng.random_range(0.0..config.x_max);
    let noise = Normal::new(0.0, config.sigma_arrival).expect("sigma_arrival > 0");
    let arrivals = (0..config.n_stations())
        .map(|j| config.predicted_arrival(x, t, j) + noise.sample(rng))
        .collect();
    let event = Event::new(id, x, t, arrivals);
    let log_q_forward = birth_density(ctx, &event, ctx.n_total);
    let log_q_reverse = death_density(ctx, ctx.own.len() + 1);
    Proposal {
        kind: MoveKind::Birth,
        change: Some(Change::Insert(event)),
        log_q_forward,
        log_q_reverse,
    }
}

/// Removes a uniformly chosen event of the region.
pub fn propose_death<R: Rng + ?Sized>(ctx: &MoveContext<'_>, rng: &mut R) -> Proposal {
    let k = ctx.own.len();
    if k == 0 {
        return Proposal::null(MoveKind::Death);
    }
    let index = pick(rng, k);
    let victim = &ctx.own[index];
    Proposal {
        kind: MoveKind::Death,
        change: Some(Change::Remove(index)),
        log_q_forward: death_density(ctx, k),
        log_q_reverse: birth_density(ctx, victim, ctx.n_total - 1),
    }
}

/// Moves `event` to `(x, t)` keeping every arrival's residual from its predicted mean.
fn relocate(config: &ModelConfig, event: &Event, x: f64, t: f64) -> Event {
    let arrivals = event
        .arrivals
        .iter()
        .enumerate()
        .map(|(j, &a)| a - config.predicted_arrival(event.x, event.t, j) + config.predicted_arrival(x, t, j))
        .collect();
    Event::new(event.id, x, t, arrivals)
}

/// Gaussian random walk in space and time; arrivals follow their predicted means.
pub fn propose_location<R: Rng + ?Sized>(ctx: &MoveContext<'_>, rng: &mut R) -> Proposal {
    let k = ctx.own.len();
    if k == 0 {
        return Proposal::null(MoveKind::Location);
    }
    let index = pick(rng, k);
    let steps = ctx.steps;
    let dx = gaussian(rng, steps.location_x);
    let dt = gaussian(rng, steps.location_t);
    let old = &ctx.own[index];
    let event = relocate(ctx.config, old, old.x + dx, old.t + dt);
    let log_q = ctx.moves.probability(MoveKind::Location).ln() - (k as f64).ln()
        + ln_offset(dx, steps.location_x)
        + ln_offset(dt, steps.location_t);
    Proposal::symmetric(MoveKind::Location, Change::Modify { index, event }, log_q)
}

/// Gaussian random walk on one arrival of one event.
pub fn propose_arrival<R: Rng + ?Sized>(ctx: &MoveContext<'_>, rng: &mut R) -> Proposal {
    let k = ctx.own.len();
    if k == 0 {
        return Proposal::null(MoveKind::Arrival);
    }
    let index = pick(rng, k);
    let n_stations = ctx.config.n_stations();
    let station = pick(rng, n_stations);
    let da = gaussian(rng, ctx.steps.arrival);
    let mut event = ctx.own[index].clone();
    event.arrivals[station] += da;
    let log_q = ctx.moves.probability(MoveKind::Arrival).ln()
        - (k as f64).ln()
        - (n_stations as f64).ln()
        + ln_offset(da, ctx.steps.arrival);
    Proposal::symmetric(MoveKind::Arrival, Change::Modify { index, event }, log_q)
}

/// Location implied by predicted arrivals `(at_left, at_right)` at two
/// adjacent stations, for an event lying between them.
pub fn solve_between(config: &ModelConfig, left: usize, at_left: f64, at_right: f64) -> (f64, f64) {
    let (xl, xr) = (config.stations[left], config.stations[left + 1]);
    let x = 0.5 * (xl + xr) + 0.5 * config.v * (at_left - at_right);
    let t = 0.5 * (at_left + at_right) - (xr - xl) / (2.0 * config.v);
    (x, t)
}

/// The deterministic part of the joint move: two events between stations
/// `left` and `left + 1` exchange their predicted arrivals at the right-hand
/// station, and their stored arrivals re-pair accordingly (stations up to
/// `left` stay with the first event, the rest go with the other).
///
/// `jitter` is added to the exchanged predicted arrivals
/// `[first_left, first_right, second_left, second_right]` before solving.
/// Returns `None` if either input or either result leaves the station strip,
/// where the map is not its own inverse.
pub fn cross_swap(
    config: &ModelConfig,
    left: usize,
    first: &Event,
    second: &Event,
    jitter: [f64; 4],
) -> Option<(Event, Event)> {
    let (xl, xr) = (config.stations[left], config.stations[left + 1]);
    let inside = |x: f64| (xl..=xr).contains(&x);
    if !inside(first.x) || !inside(second.x) {
        return None;
    }
    let pred = |e: &Event, j: usize| config.predicted_arrival(e.x, e.t, j);
    let (x1, t1) = solve_between(
        config,
        left,
        pred(first, left) + jitter[0],
        pred(second, left + 1) + jitter[1],
    );
    let (x2, t2) = solve_between(
        config,
        left,
        pred(second, left) + jitter[2],
        pred(first, left + 1) + jitter[3],
    );
    if !inside(x1) || !inside(x2) {
        return None;
    }
    let residual = |e: &Event, j: usize| e.arrivals[j] - pred(e, j);
    let rebuild = |id: u64, x: f64, t: f64, near: &Event, far: &Event| {
        let arrivals = (0..config.n_stations())
            .map(|j| {
                let source = if j <= left { near } else { far };
                config.predicted_arrival(x, t, j) + residual(source, j)
            })
            .collect();
        Event::new(id, x, t, arrivals)
    };
    Some((
        rebuild(first.id, x1, t1, first, second),
        rebuild(second.id, x2, t2, second, first),
    ))
}

/// Jumps a pair of events to their aliased configuration (see [`cross_swap`]).
pub fn propose_joint_pair<R: Rng + ?Sized>(ctx: &MoveContext<'_>, rng: &mut R) -> Proposal {
    let k = ctx.own.len();
    if k < 2 {
        return Proposal::null(MoveKind::Joint);
    }
    let first = pick(rng, k);
    let mut second = pick(rng, k - 1);
    if second >= first {
        second += 1;
    }
    let n_pairs = ctx.config.n_stations() - 1;
    let left = pick(rng, n_pairs);
    let sd = ctx.steps.joint;
    let jitter = [
        gaussian(rng, sd),
        gaussian(rng, sd),
        gaussian(rng, sd),
        gaussian(rng, sd),
    ];
    let Some((first_event, second_event)) =
        cross_swap(ctx.config, left, &ctx.own[first], &ctx.own[second], jitter)
    else {
        return Proposal::null(MoveKind::Joint);
    };
    let pairs = (k * (k - 1) / 2) as f64;
    let log_q = ctx.moves.probability(MoveKind::Joint).ln() - pairs.ln() - (n_pairs as f64).ln()
        + jitter.iter().map(|&j| ln_offset(j, sd)).sum::<f64>();
    Proposal::symmetric(
        MoveKind::Joint,
        Change::ModifyPair {
            first,
            first_event,
            second,
            second_event,
        },
        log_q,
    )
}

/// Draws a move type from `ctx.moves` and builds its proposal.
pub fn propose<R: Rng + ?Sized>(ctx: &MoveContext<'_>, rng: &mut R, birth_id: u64) -> Proposal {
    match ctx.moves.sample(rng) {
        MoveKind::Birth => propose_birth(ctx, rng, birth_id),
        MoveKind::Death => propose_death(ctx, rng),
        MoveKind::Location => propose_location(ctx, rng),
        MoveKind::Arrival => propose_arrival(ctx, rng),
        MoveKind::Joint => propose_joint_pair(ctx, rng),
    }
}

/// `ln` of the MH acceptance ratio (capped at 0).
pub fn log_acceptance(delta_log_joint: f64, proposal: &Proposal) -> f64 {
    if delta_log_joint == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (delta_log_joint + proposal.log_q_reverse - proposal.log_q_forward).min(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    /// `ln` of the acceptance probability; `-inf` for null or forbidden proposals.
    pub log_alpha: f64,
}

/// Accepts or rejects `proposal` against `own`.
///
/// `score` returns `delta_log_joint` for the change. With `constraint` set, a
/// proposal that puts any added event's time outside that region has
/// acceptance probability zero. A uniform variate is drawn only when the
/// acceptance probability lies strictly between 0 and 1.
pub fn mh_step<R, F>(
    own: &mut Vec<Event>,
    proposal: Proposal,
    score: F,
    constraint: Option<&Region>,
    rng: &mut R,
) -> StepOutcome
where
    R: Rng + ?Sized,
    F: FnOnce(&[Event], &Change) -> f64,
{
    let rejected = StepOutcome {
        accepted: false,
        log_alpha: f64::NEG_INFINITY,
    };
    let Some(change) = proposal.change.as_ref() else {
        return rejected;
    };
    if let Some(region) = constraint {
        if change.added().iter().flatten().any(|e| !region.contains(e.t)) {
            return rejected;
        }
    }
    let log_alpha = log_acceptance(score(own, change), &proposal);
    let accepted = if log_alpha >= 0.0 {
        true
    } else if log_alpha == f64::NEG_INFINITY || log_alpha.is_nan() {
        false
    } else {
        let u: f64 = rng.random();
        u.ln() < log_alpha
    };
    if accepted {
        proposal.change.expect("checked above").apply(own);
    }
    StepOutcome { accepted, log_alpha }
}
