//! Generative model: configuration, events, observed signals and the
//! reference (dense) log-density computations.
//!
//! Log-densities are plain `f64`. A support violation is reported as
//! `f64::NEG_INFINITY`; callers never subtract two infinities because the
//! scoring paths check support before differencing.

use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// All constants of the generative model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Poisson event rate (events per time unit).
    pub lambda_rate: f64,
    /// Total time span `T`.
    pub time_span: f64,
    /// Spatial extent; locations live in `[0, x_max]`.
    pub x_max: f64,
    /// Wave velocity.
    pub v: f64,
    /// Standard deviation of arrival-time noise.
    pub sigma_arrival: f64,
    /// Duration of one event signal at a station.
    pub t_s: f64,
    pub var_noise: f64,
    pub var_event: f64,
    /// Signal samples per time unit.
    pub sample_rate: f64,
    /// Station positions, ascending.
    pub stations: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lambda_rate: 0.02,
            time_span: 240.0,
            x_max: 100.0,
            v: 2.0,
            sigma_arrival: 2.0,
            t_s: 20.0,
            var_noise: 1.0,
            var_event: 4.0,
            sample_rate: 1.0,
            stations: vec![0.0, 33.0, 66.0, 100.0],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_rate", self.lambda_rate),
            ("T", self.time_span),
            ("x_max", self.x_max),
            ("v", self.v),
            ("sigma_arrival", self.sigma_arrival),
            ("t_s", self.t_s),
            ("var_noise", self.var_noise),
            ("sample_rate", self.sample_rate),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::validation(
                    "model config",
                    format!("{name} must be finite and > 0, got {value}"),
                ));
            }
        }
        if !(self.var_event.is_finite() && self.var_event > self.var_noise) {
            return Err(Error::validation(
                "model config",
                format!(
                    "var_event ({}) must exceed var_noise ({})",
                    self.var_event, self.var_noise
                ),
            ));
        }
        if self.stations.len() < 2 {
            return Err(Error::validation(
                "model config",
                "at least two stations are required",
            ));
        }
        if self.stations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "model config",
                "stations must be strictly ascending",
            ));
        }
        if self
            .stations
            .iter()
            .any(|&s| !(s.is_finite() && (0.0..=self.x_max).contains(&s)))
        {
            return Err(Error::validation(
                "model config",
                format!("stations must lie in [0, {}]", self.x_max),
            ));
        }
        let n = self.sample_rate * self.time_span;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
            return Err(Error::validation(
                "model config",
                format!("sample_rate * T must be a positive integer, got {n}"),
            ));
        }
        Ok(())
    }

    pub fn tau_max(&self) -> f64 {
        self.x_max / self.v
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    /// Number of signal samples per station.
    pub fn n_samples(&self) -> usize {
        (self.sample_rate * self.time_span).round() as usize
    }

    pub fn sample_time(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate
    }

    /// Mean arrival time of an event at `station`.
    pub fn predicted_arrival(&self, x: f64, t: f64, station: usize) -> f64 {
        t + (x - self.stations[station]).abs() / self.v
    }

    pub fn predicted_arrivals(&self, x: f64, t: f64) -> Vec<f64> {
        (0..self.n_stations())
            .map(|j| self.predicted_arrival(x, t, j))
            .collect()
    }

    /// Smallest sample index whose time is `>= time`, clamped to `[0, n_samples]`.
    pub fn first_sample_at_or_after(&self, time: f64) -> usize {
        let n = self.n_samples();
        let scaled = time * self.sample_rate;
        if scaled.is_nan() || scaled <= 0.0 {
            return 0;
        }
        if scaled >= n as f64 {
            return n;
        }
        let mut idx = scaled.ceil() as usize;
        while idx > 0 && self.sample_time(idx - 1) >= time {
            idx -= 1;
        }
        while idx < n && self.sample_time(idx) < time {
            idx += 1;
        }
        idx
    }

    /// Samples covered by a signal arriving at `arrival`:
    /// every index `i` with `arrival <= i / rate < arrival + t_s`.
    pub fn arrival_window(&self, arrival: f64) -> Range<usize> {
        let lo = self.first_sample_at_or_after(arrival);
        let hi = self.first_sample_at_or_after(arrival + self.t_s);
        lo..hi.max(lo)
    }
}

/// Returns `x_max / v`.
pub fn tau_max(config: &ModelConfig) -> f64 {
    config.tau_max()
}

/// One latent event and its per-station arrival times.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub id: u64,
    pub x: f64,
    pub t: f64,
    pub arrivals: Vec<f64>,
}

impl Event {
    pub fn new(id: u64, x: f64, t: f64, arrivals: Vec<f64>) -> Self {
        Self { id, x, t, arrivals }
    }

    /// Event whose arrivals sit exactly at their predicted means.
    pub fn at_mean(id: u64, x: f64, t: f64, config: &ModelConfig) -> Self {
        Self::new(id, x, t, config.predicted_arrivals(x, t))
    }

    pub fn in_support(&self, config: &ModelConfig) -> bool {
        (0.0..=config.x_max).contains(&self.x) && (0.0..=config.time_span).contains(&self.t)
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.arrivals.len() != config.n_stations() {
            return Err(Error::validation(
                "event",
                format!(
                    "event {} has {} arrivals, expected {}",
                    self.id,
                    self.arrivals.len(),
                    config.n_stations()
                ),
            ));
        }
        if !self.in_support(config) {
            return Err(Error::validation(
                "event",
                format!("event {} at (x={}, t={}) is out of bounds", self.id, self.x, self.t),
            ));
        }
        if self.arrivals.iter().any(|a| !a.is_finite()) {
            return Err(Error::validation(
                "event",
                format!("event {} has a non-finite arrival", self.id),
            ));
        }
        Ok(())
    }
}

/// An event's identity and position without its arrivals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub id: u64,
    pub x: f64,
    pub t: f64,
}

impl Location {
    pub fn new(id: u64, x: f64, t: f64) -> Self {
        Self { id, x, t }
    }
}

impl From<&Event> for Location {
    fn from(e: &Event) -> Self {
        Self::new(e.id, e.x, e.t)
    }
}

/// Per-station observed signal samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedSignals {
    stations: Vec<Vec<f64>>,
}

impl ObservedSignals {
    pub fn new(stations: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = stations.first() {
            if stations.iter().any(|s| s.len() != first.len()) {
                return Err(Error::validation(
                    "signals",
                    "all stations must have the same number of samples",
                ));
            }
        }
        Ok(Self { stations })
    }

    /// All-zero signals with the shape implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            stations: vec![vec![0.0; config.n_samples()]; config.n_stations()],
        }
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_samples(&self) -> usize {
        self.stations.first().map_or(0, Vec::len)
    }

    pub fn station(&self, j: usize) -> &[f64] {
        &self.stations[j]
    }

    pub fn station_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.stations[j]
    }

    pub fn check_shape(&self, config: &ModelConfig) -> Result<()> {
        if self.n_stations() != config.n_stations() || self.n_samples() != config.n_samples() {
            return Err(Error::validation(
                "signals",
                format!(
                    "expected {} stations x {} samples, found {} x {}",
                    config.n_stations(),
                    config.n_samples(),
                    self.n_stations(),
                    self.n_samples()
                ),
            ));
        }
        Ok(())
    }
}

/// A complete hypothesis together with the observations it explains.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub config: ModelConfig,
    pub events: Vec<Event>,
    pub signals: ObservedSignals,
}

impl World {
    pub fn new(config: ModelConfig, events: Vec<Event>, signals: ObservedSignals) -> Result<Self> {
        config.validate()?;
        signals.check_shape(&config)?;
        for e in &events {
            e.validate(&config)?;
        }
        Ok(Self {
            config,
            events,
            signals,
        })
    }
}

/// Per-station per-sample variances over a window of sample indices.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceProfile {
    pub window: Range<usize>,
    /// `values[j][i]` is the variance of station `j` at sample `window.start + i`.
    pub values: Vec<Vec<f64>>,
}

/// `ln(n!)`
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Poisson log-pmf.
pub fn ln_poisson(n: usize, mean: f64) -> f64 {
    n as f64 * mean.ln() - mean - ln_factorial(n)
}

pub fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Log prior of an event set: Poisson count times uniform locations and times.
pub fn log_event_prior(events: &[Event], config: &ModelConfig) -> f64 {
    if events.iter().any(|e| !e.in_support(config)) {
        return f64::NEG_INFINITY;
    }
    let n = events.len();
    ln_poisson(n, config.lambda_rate * config.time_span)
        - n as f64 * (config.x_max.ln() + config.time_span.ln())
}

/// Gaussian log-density of one stored arrival given its event's location.
pub fn log_arrival_density(event: &Event, station: usize, config: &ModelConfig) -> f64 {
    let mean = config.predicted_arrival(event.x, event.t, station);
    ln_normal(event.arrivals[station], mean, config.sigma_arrival)
}

/// Dense variance profile: every sample of every station checks every event.
pub fn variance_profile(events: &[Event], config: &ModelConfig, window: Range<usize>) -> VarianceProfile {
    let window = window.start.min(config.n_samples())..window.end.min(config.n_samples());
    let values = (0..config.n_stations())
        .map(|j| {
            window
                .clone()
                .map(|i| {
                    let time = config.sample_time(i);
                    let covering = events
                        .iter()
                        .filter(|e| e.arrivals[j] <= time && time < e.arrivals[j] + config.t_s)
                        .count();
                    config.var_noise + covering as f64 * config.var_event
                })
                .collect()
        })
        .collect();
    VarianceProfile { window, values }
}

/// Zero-mean diagonal Gaussian log-likelihood of the signals over `window`.
pub fn log_signal_likelihood(
    signals: &ObservedSignals,
    events: &[Event],
    config: &ModelConfig,
    window: Range<usize>,
) -> f64 {
    let profile = variance_profile(events, config, window);
    let mut total = 0.0;
    for (j, vars) in profile.values.iter().enumerate() {
        let s = signals.station(j);
        for (offset, &var) in vars.iter().enumerate() {
            let x = s[profile.window.start + offset];
            total += -0.5 * (2.0 * PI * var).ln() - x * x / (2.0 * var);
        }
    }
    total
}

/// Sum of all arrival log-densities.
pub fn log_arrivals(events: &[Event], config: &ModelConfig) -> f64 {
    events
        .iter()
        .map(|e| {
            (0..config.n_stations())
                .map(|j| log_arrival_density(e, j, config))
                .sum::<f64>()
        })
        .sum()
}

/// `ln P(e, a, s)` over the full signal window.
pub fn log_joint(world: &World) -> f64 {
    log_joint_of(&world.events, &world.signals, &world.config)
}

pub fn log_joint_of(events: &[Event], signals: &ObservedSignals, config: &ModelConfig) -> f64 {
    let prior = log_event_prior(events, config);
    if prior == f64::NEG_INFINITY {
        return prior;
    }
    prior
        + log_arrivals(events, config)
        + log_signal_likelihood(signals, events, config, 0..config.n_samples())
}
