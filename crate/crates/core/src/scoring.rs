//! Incremental scoring of hypothesis changes.
//!
//! [`Scorer::delta`] returns `log_target(after) - log_target(before)` by
//! touching only the prior/arrival terms of the changed events and the
//! signal samples whose variance actually changes. The dense functions in
//! [`crate::model`] are the reference it is tested against.

use std::f64::consts::PI;
use std::ops::Range;

use crate::model::{
    ln_factorial, ln_normal, ln_poisson, log_arrivals, log_signal_likelihood, Event,
    ModelConfig, ObservedSignals, World,
};

/// A single hypothesis edit. Indices refer to the chain's own event list.
#[derive(Clone, Debug, PartialEq)]
pub enum Change {
    Insert(Event),
    Remove(usize),
    Modify {
        index: usize,
        event: Event,
    },
    ModifyPair {
        first: usize,
        first_event: Event,
        second: usize,
        second_event: Event,
    },
}

impl Change {
    /// Events that leave the hypothesis (old versions).
    pub fn removed<'a>(&self, own: &'a [Event]) -> [Option<&'a Event>; 2] {
        match self {
            Change::Insert(_) => [None, None],
            Change::Remove(i) => [Some(&own[*i]), None],
            Change::Modify { index, .. } => [Some(&own[*index]), None],
            Change::ModifyPair { first, second, .. } => [Some(&own[*first]), Some(&own[*second])],
        }
    }

    /// Events that enter the hypothesis (new versions).
    pub fn added(&self) -> [Option<&Event>; 2] {
        match self {
            Change::Insert(e) => [Some(e), None],
            Change::Remove(_) => [None, None],
            Change::Modify { event, .. } => [Some(event), None],
            Change::ModifyPair {
                first_event,
                second_event,
                ..
            } => [Some(first_event), Some(second_event)],
        }
    }

    pub fn apply(self, own: &mut Vec<Event>) {
        match self {
            Change::Insert(e) => own.push(e),
            Change::Remove(i) => {
                own.remove(i);
            }
            Change::Modify { index, event } => own[index] = event,
            Change::ModifyPair {
                first,
                first_event,
                second,
                second_event,
            } => {
                own[first] = first_event;
                own[second] = second_event;
            }
        }
    }
}

/// What a chain conditions on and which part of the model it scores.
///
/// * global (serial): no frozen events, prior over `[0, T]`, all samples.
/// * chromatic region: other regions' events frozen, prior over `[0, T]`, all samples.
/// * naive region: no frozen events, prior over the region only, signals clipped
///   to the region's signal window.
#[derive(Clone, Debug)]
pub struct Scope<'a> {
    pub frozen: &'a [Event],
    /// Event times are uniform on `[prior_lo, prior_hi]`.
    pub prior_lo: f64,
    pub prior_hi: f64,
    /// Sample range scored; `None` means every sample.
    pub window: Option<Range<usize>>,
}

impl<'a> Scope<'a> {
    pub fn global(config: &ModelConfig) -> Scope<'static> {
        Scope {
            frozen: &[],
            prior_lo: 0.0,
            prior_hi: config.time_span,
            window: None,
        }
    }

    pub fn conditioned(config: &ModelConfig, frozen: &'a [Event]) -> Self {
        Scope {
            frozen,
            prior_lo: 0.0,
            prior_hi: config.time_span,
            window: None,
        }
    }

    pub fn isolated(lo: f64, hi: f64, window: Range<usize>) -> Scope<'static> {
        Scope {
            frozen: &[],
            prior_lo: lo,
            prior_hi: hi,
            window: Some(window),
        }
    }

    fn span(&self) -> f64 {
        self.prior_hi - self.prior_lo
    }

    fn admits(&self, event: &Event, config: &ModelConfig) -> bool {
        (0.0..=config.x_max).contains(&event.x) && (self.prior_lo..=self.prior_hi).contains(&event.t)
    }

    fn sample_range(&self, n_samples: usize) -> Range<usize> {
        match &self.window {
            Some(w) => w.start.min(n_samples)..w.end.min(n_samples),
            None => 0..n_samples,
        }
    }
}

/// Dense reference for the scoped target: prior over the scope's interval,
/// all arrival terms, and the signal likelihood over the scope's window,
/// with `own` and `scope.frozen` together forming the hypothesis.
pub fn scoped_log_joint(
    config: &ModelConfig,
    signals: &ObservedSignals,
    own: &[Event],
    scope: &Scope<'_>,
) -> f64 {
    let all: Vec<Event> = own.iter().chain(scope.frozen).cloned().collect();
    if all.iter().any(|e| !scope.admits(e, config)) {
        return f64::NEG_INFINITY;
    }
    let n = all.len();
    let span = scope.span();
    let prior = ln_poisson(n, config.lambda_rate * span) - n as f64 * (config.x_max.ln() + span.ln());
    prior
        + log_arrivals(&all, config)
        + log_signal_likelihood(signals, &all, config, scope.sample_range(config.n_samples()))
}

const TABLE_LEVELS: usize = 64;

/// Precomputed per-sample quantities for fast delta evaluation.
#[derive(Clone, Debug)]
pub struct Scorer<'a> {
    config: &'a ModelConfig,
    squared: Vec<Vec<f64>>,
    /// `0.5 * ln(2 pi var_c)` for `c` covering events.
    half_log_var: Vec<f64>,
    /// `1 / (2 var_c)`
    inv_two_var: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(config: &'a ModelConfig, signals: &ObservedSignals) -> Self {
        let squared = (0..signals.n_stations())
            .map(|j| signals.station(j).iter().map(|s| s * s).collect())
            .collect();
        let var = |c: usize| config.var_noise + c as f64 * config.var_event;
        Self {
            config,
            squared,
            half_log_var: (0..TABLE_LEVELS).map(|c| 0.5 * (2.0 * PI * var(c)).ln()).collect(),
            inv_two_var: (0..TABLE_LEVELS).map(|c| 0.5 / var(c)).collect(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    #[inline]
    fn sample_ll(&self, covering: usize, squared: f64) -> f64 {
        if covering < TABLE_LEVELS {
            -self.half_log_var[covering] - squared * self.inv_two_var[covering]
        } else {
            let var = self.config.var_noise + covering as f64 * self.config.var_event;
            -0.5 * (2.0 * PI * var).ln() - squared / (2.0 * var)
        }
    }

    /// `log_target(after) - log_target(before)` for `change` applied to `own`
    /// under `scope`. Returns `-inf` if an added event leaves the support.
    pub fn delta(&self, own: &[Event], scope: &Scope<'_>, change: &Change) -> f64 {
        let config = self.config;
        let removed = change.removed(own);
        let added = change.added();
        if added.iter().flatten().any(|e| !scope.admits(e, config)) {
            return f64::NEG_INFINITY;
        }

        let n_removed = removed.iter().flatten().count();
        let n_added = added.iter().flatten().count();
        let n_before = own.len() + scope.frozen.len();
        let n_after = n_before + n_added - n_removed;
        let span = scope.span();
        let mut total = if n_after == n_before {
            0.0
        } else {
            let mu = config.lambda_rate * span;
            let dn = n_after as f64 - n_before as f64;
            let ln_fact = match n_after as isize - n_before as isize {
                1 => (n_after as f64).ln(),
                -1 => -(n_before as f64).ln(),
                _ => ln_factorial(n_after) - ln_factorial(n_before),
            };
            dn * mu.ln() - ln_fact - dn * (config.x_max.ln() + span.ln())
        };

        let sd = config.sigma_arrival;
        for e in added.iter().flatten() {
            for (j, &a) in e.arrivals.iter().enumerate() {
                total += ln_normal(a, config.predicted_arrival(e.x, e.t, j), sd);
            }
        }
        for e in removed.iter().flatten() {
            for (j, &a) in e.arrivals.iter().enumerate() {
                total -= ln_normal(a, config.predicted_arrival(e.x, e.t, j), sd);
            }
        }

        let clip = scope.sample_range(config.n_samples());
        for j in 0..config.n_stations() {
            total += self.station_delta(j, own, scope.frozen, &removed, &added, &clip);
        }
        total
    }

    fn station_delta(
        &self,
        j: usize,
        own: &[Event],
        frozen: &[Event],
        removed: &[Option<&Event>; 2],
        added: &[Option<&Event>; 2],
        clip: &Range<usize>,
    ) -> f64 {
        let config = self.config;
        let window = |e: &Event| intersect(config.arrival_window(e.arrivals[j]), clip);
        let mut gone: [Range<usize>; 2] = [0..0, 0..0];
        let mut new: [Range<usize>; 2] = [0..0, 0..0];
        for (slot, e) in gone.iter_mut().zip(removed) {
            if let Some(e) = e {
                *slot = window(e);
            }
        }
        for (slot, e) in new.iter_mut().zip(added) {
            if let Some(e) = e {
                *slot = window(e);
            }
        }
        if same_ranges(&gone, &new) {
            return 0.0;
        }

        let mut spans: Vec<Range<usize>> = gone
            .iter()
            .chain(new.iter())
            .filter(|r| !r.is_empty())
            .cloned()
            .collect();
        spans.sort_by_key(|r| r.start);
        let mut merged: Vec<Range<usize>> = Vec::with_capacity(spans.len());
        for r in spans {
            match merged.last_mut() {
                Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
                _ => merged.push(r),
            }
        }

        let squared = &self.squared[j];
        let mut total = 0.0;
        for span in merged {
            let len = span.len();
            let mut base = vec![0usize; len];
            let mut diff = vec![0isize; len];
            for e in own.iter().chain(frozen) {
                let w = intersect(config.arrival_window(e.arrivals[j]), &span);
                for c in &mut base[w.start - span.start..w.end - span.start] {
                    *c += 1;
                }
            }
            for w in &gone {
                let w = intersect(w.clone(), &span);
                for d in &mut diff[w.start - span.start..w.end - span.start] {
                    *d -= 1;
                }
            }
            for w in &new {
                let w = intersect(w.clone(), &span);
                for d in &mut diff[w.start - span.start..w.end - span.start] {
                    *d += 1;
                }
            }
            for (offset, (&b, &d)) in base.iter().zip(&diff).enumerate() {
                if d != 0 {
                    let s2 = squared[span.start + offset];
                    let after = (b as isize + d) as usize;
                    total += self.sample_ll(after, s2) - self.sample_ll(b, s2);
                }
            }
        }
        total
    }
}

fn intersect(a: Range<usize>, b: &Range<usize>) -> Range<usize> {
    let start = a.start.max(b.start);
    let end = a.end.min(b.end);
    if start < end {
        start..end
    } else {
        b.start..b.start
    }
}

fn same_ranges(a: &[Range<usize>; 2], b: &[Range<usize>; 2]) -> bool {
    let norm = |r: &Range<usize>| if r.is_empty() { 0..0 } else { r.clone() };
    let mut x = [norm(&a[0]), norm(&a[1])];
    let mut y = [norm(&b[0]), norm(&b[1])];
    x.sort_by_key(|r| (r.start, r.end));
    y.sort_by_key(|r| (r.start, r.end));
    x == y
}

/// `log_joint(world after change) - log_joint(world)`.
pub fn delta_log_joint(world: &World, change: &Change) -> f64 {
    let scorer = Scorer::new(&world.config, &world.signals);
    scorer.delta(&world.events, &Scope::global(&world.config), change)
}
