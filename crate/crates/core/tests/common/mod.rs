//! Shared fixtures and independent oracles for the integration tests.

#![allow(dead_code)]

use chromatic_mh::model::{Event, ModelConfig, ObservedSignals, World};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erfc;

/// Small world for the grid-oracle check: `T = 60`, four stations.
pub fn grid_config(var_event: f64, t_s: f64) -> ModelConfig {
    ModelConfig {
        lambda_rate: 0.005,
        time_span: 60.0,
        x_max: 100.0,
        sigma_arrival: 0.5,
        var_event,
        t_s,
        stations: vec![0.0, 33.0, 66.0, 100.0],
        ..ModelConfig::default()
    }
}

/// World holding exactly `events`, with arrivals perturbed by the model's
/// arrival noise and signals drawn from the resulting variance profile.
pub fn planted_world(config: &ModelConfig, positions: &[(f64, f64)], seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.sigma_arrival).unwrap();
    let events: Vec<Event> = positions
        .iter()
        .enumerate()
        .map(|(i, &(x, t))| {
            let arrivals = (0..config.n_stations())
                .map(|j| config.predicted_arrival(x, t, j) + noise.sample(&mut rng))
                .collect();
            Event::new(i as u64, x, t, arrivals)
        })
        .collect();
    let signals = signals_for(config, &events, &mut rng);
    World::new(config.clone(), events, signals).unwrap()
}

/// Zero-mean Gaussian signals with per-sample variance from `events`,
/// computed here sample by sample rather than through the library.
pub fn signals_for(config: &ModelConfig, events: &[Event], rng: &mut ChaCha8Rng) -> ObservedSignals {
    let n = config.n_samples();
    let stations = (0..config.n_stations())
        .map(|j| {
            (0..n)
                .map(|i| {
                    let time = i as f64 / config.sample_rate;
                    let c = events
                        .iter()
                        .filter(|e| e.arrivals[j] <= time && time < e.arrivals[j] + config.t_s)
                        .count();
                    let var = config.var_noise + c as f64 * config.var_event;
                    Normal::new(0.0, var.sqrt()).unwrap().sample(rng)
                })
                .collect()
        })
        .collect();
    ObservedSignals::new(stations).unwrap()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Posterior over "no event" versus "one event in cell (ix, it)" for a
/// single-event-or-empty hypothesis space, with arrivals integrated out.
pub struct GridPosterior {
    pub p_one: f64,
    /// `cells[ix][it]`: posterior mass of one event in that cell, given one event.
    pub cells: Vec<Vec<f64>>,
    pub cell_x: f64,
    pub cell_t: f64,
}

impl GridPosterior {
    pub fn mode(&self) -> (usize, usize) {
        argmax(&self.cells)
    }
}

pub fn argmax(cells: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 0);
    for (i, row) in cells.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > cells[best.0][best.1] {
                best = (i, j);
            }
        }
    }
    best
}

/// Brute-force oracle on an `nx x nt` cell grid, each cell integrated with
/// `refine x refine` midpoints.
///
/// Requires `sample_rate = 1` and integer `t_s`: a station's coverage is then
/// the samples `ceil(a) .. ceil(a) + t_s`, constant for `a` in `(m - 1, m]`,
/// so the arrival integral is a sum of normal-CDF differences times the
/// likelihood ratio of the covered samples.
pub fn grid_posterior(world: &World, nx: usize, nt: usize, refine: usize) -> GridPosterior {
    let c = &world.config;
    assert_eq!(c.sample_rate, 1.0);
    assert_eq!(c.t_s.fract(), 0.0);
    let n = c.n_samples() as i64;
    let ts = c.t_s as i64;
    let sigma = c.sigma_arrival;
    let (v0, v1) = (c.var_noise, c.var_noise + c.var_event);
    // ln N(s; 0, v1) - ln N(s; 0, v0) per sample, then prefix sums
    let prefix: Vec<Vec<f64>> = (0..c.n_stations())
        .map(|j| {
            let mut acc = vec![0.0];
            for &s in world.signals.station(j) {
                let r = -0.5 * (v1 / v0).ln() - s * s / (2.0 * v1) + s * s / (2.0 * v0);
                acc.push(acc.last().unwrap() + r);
            }
            acc
        })
        .collect();
    let window_ln_ratio = |j: usize, m: i64| {
        let lo = m.clamp(0, n) as usize;
        let hi = (m + ts).clamp(0, n) as usize;
        prefix[j][hi] - prefix[j][lo]
    };
    let station_integral = |j: usize, mu: f64| {
        let lo = (mu - 9.0 * sigma).floor() as i64;
        let hi = (mu + 9.0 * sigma).ceil() as i64 + 1;
        let mut total = 0.0;
        for m in lo..=hi {
            let mass = std_normal_cdf((m as f64 - mu) / sigma) - std_normal_cdf((m as f64 - 1.0 - mu) / sigma);
            total += mass * window_ln_ratio(j, m).exp();
        }
        total
    };

    let (cell_x, cell_t) = (c.x_max / nx as f64, c.time_span / nt as f64);
    let (dx, dt) = (cell_x / refine as f64, cell_t / refine as f64);
    let mut cells = vec![vec![0.0; nt]; nx];
    let mut integral = 0.0;
    for (ix, row) in cells.iter_mut().enumerate() {
        for (it, cell) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for a in 0..refine {
                let x = ix as f64 * cell_x + (a as f64 + 0.5) * dx;
                for b in 0..refine {
                    let t = it as f64 * cell_t + (b as f64 + 0.5) * dt;
                    sum += (0..c.n_stations())
                        .map(|j| station_integral(j, c.predicted_arrival(x, t, j)))
                        .product::<f64>();
                }
            }
            *cell = sum * dx * dt;
            integral += *cell;
        }
    }
    for row in &mut cells {
        for v in row.iter_mut() {
            *v /= integral;
        }
    }
    // P(1)/P(0) = lambda T * (1 / (x_max T)) * integral
    let mean = c.lambda_rate * c.time_span;
    let odds = mean * integral / (c.x_max * c.time_span);
    GridPosterior {
        p_one: odds / (1.0 + odds),
        cells,
        cell_x,
        cell_t,
    }
}

/// Reference greedy matcher written independently of the library: true
/// events in `(t, x, id)` order; every remaining candidate is ranked by
/// `(distance, t, x, id)` and the best one is kept if it is inside the
/// threshold on both axes. Returns `(true_id, inferred_id)` pairs.
pub fn brute_force_match(
    truth: &[chromatic_mh::model::Location],
    inferred: &[chromatic_mh::model::Location],
    threshold: f64,
) -> Vec<(u64, u64)> {
    let mut order: Vec<_> = truth.to_vec();
    order.sort_by(|a, b| (a.t, a.x, a.id).partial_cmp(&(b.t, b.x, b.id)).unwrap());
    let mut remaining: Vec<_> = inferred.to_vec();
    let mut out = Vec::new();
    for t in order {
        let best = remaining
            .iter()
            .enumerate()
            .map(|(k, e)| ((t.x - e.x).hypot(t.t - e.t), e.t, e.x, e.id, k))
            .min_by(|a, b| a.partial_cmp(b).unwrap());
        if let Some((_, _, _, _, k)) = best {
            let e = remaining[k];
            if (t.t - e.t).abs() < threshold && (t.x - e.x).abs() < threshold {
                out.push((t.id, e.id));
                remaining.remove(k);
            }
        }
    }
    out
}
