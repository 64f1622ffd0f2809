//! Forward sampling of synthetic worlds and their on-disk representation.
//!
//! A world directory holds four files:
//!
//! | file           | header                   |
//! |----------------|--------------------------|
//! | `events.csv`   | `id,x,t`                 |
//! | `arrivals.csv` | `event_id,station,arrival` |
//! | `signals.csv`  | `station,sample,value`   |
//! | `config.txt`   | `key=value` per line     |
//!
//! Floats are written in Rust's shortest round-trip decimal form, so
//! `read_world(write_world(w)) == w` bit for bit.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{variance_profile, Event, Location, ModelConfig, ObservedSignals, World};
use crate::rng::{stream, Purpose};

pub const EVENTS_FILE: &str = "events.csv";
pub const ARRIVALS_FILE: &str = "arrivals.csv";
pub const SIGNALS_FILE: &str = "signals.csv";
pub const CONFIG_FILE: &str = "config.txt";

/// Draws a world from the generative model. `config` must be valid.
///
/// Event count, locations and arrivals come from the `(seed, WorldEvents)`
/// stream; signal samples from `(seed, WorldSignals)`.
pub fn sample_world(config: &ModelConfig, seed: u64) -> World {
    debug_assert!(config.validate().is_ok());
    let mut rng = stream(seed, Purpose::WorldEvents, &[]);
    let mean_count = config.lambda_rate * config.time_span;
    let count = Poisson::new(mean_count)
        .map(|p| p.sample(&mut rng) as usize)
        .unwrap_or(0);
    let noise = Normal::new(0.0, config.sigma_arrival).expect("sigma_arrival > 0");
    let events: Vec<Event> = (0..count)
        .map(|i| {
            let x = rng.random_range(0.0..config.x_max);
            let t = rng.random_range(0.0..config.time_span);
            let arrivals = (0..config.n_stations())
                .map(|j| config.predicted_arrival(x, t, j) + noise.sample(&mut rng))
                .collect();
            Event::new(i as u64, x, t, arrivals)
        })
        .collect();

    let mut rng = stream(seed, Purpose::WorldSignals, &[]);
    let profile = variance_profile(&events, config, 0..config.n_samples());
    let signals = profile
        .values
        .iter()
        .map(|vars| {
            vars.iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * v.sqrt()
                })
                .collect()
        })
        .collect();
    World {
        config: config.clone(),
        events,
        signals: ObservedSignals::new(signals).expect("equal-length stations"),
    }
}

const CONFIG_KEYS: [&str; 10] = [
    "lambda_rate",
    "T",
    "x_max",
    "v",
    "sigma_arrival",
    "t_s",
    "var_noise",
    "var_event",
    "sample_rate",
    "stations",
];

/// Sets one config field from its textual key and value.
pub fn set_config_key(config: &mut ModelConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let number = || {
        value
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("expected a number, got `{value}` ({e})"))
    };
    match key {
        "lambda_rate" => config.lambda_rate = number()?,
        "T" => config.time_span = number()?,
        "x_max" => config.x_max = number()?,
        "v" => config.v = number()?,
        "sigma_arrival" => config.sigma_arrival = number()?,
        "t_s" => config.t_s = number()?,
        "var_noise" => config.var_noise = number()?,
        "var_event" => config.var_event = number()?,
        "sample_rate" => config.sample_rate = number()?,
        "stations" => {
            config.stations = value
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("bad station position `{s}` ({e})"))
                })
                .collect::<std::result::Result<_, _>>()?
        }
        _ => return Err(format!("unknown key (expected one of {})", CONFIG_KEYS.join(", "))),
    }
    Ok(())
}

/// Parses `key=value` lines on top of `base`. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str, path: &Path, base: ModelConfig) -> Result<ModelConfig> {
    let mut config = base;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config {
                path: path.to_path_buf(),
                line: n + 1,
                key: line.to_string(),
                message: "expected key=value".into(),
            });
        };
        let key = key.trim();
        set_config_key(&mut config, key, value).map_err(|message| Error::Config {
            path: path.to_path_buf(),
            line: n + 1,
            key: key.to_string(),
            message,
        })?;
    }
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = parse_config(&text, path, ModelConfig::default())?;
    config.validate()?;
    Ok(config)
}

pub fn format_config(config: &ModelConfig) -> String {
    let stations: Vec<String> = config.stations.iter().map(|s| s.to_string()).collect();
    format!(
        "lambda_rate={}\nT={}\nx_max={}\nv={}\nsigma_arrival={}\nt_s={}\nvar_noise={}\nvar_event={}\nsample_rate={}\nstations={}\n",
        config.lambda_rate,
        config.time_span,
        config.x_max,
        config.v,
        config.sigma_arrival,
        config.t_s,
        config.var_noise,
        config.var_event,
        config.sample_rate,
        stations.join(",")
    )
}

/// Paths of the files making up a world directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldFiles {
    pub events: PathBuf,
    pub arrivals: PathBuf,
    pub signals: PathBuf,
    pub config: PathBuf,
}

impl WorldFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            events: dir.join(EVENTS_FILE),
            arrivals: dir.join(ARRIVALS_FILE),
            signals: dir.join(SIGNALS_FILE),
            config: dir.join(CONFIG_FILE),
        }
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

pub(crate) fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    write_rows(
        path,
        &["id", "x", "t"],
        events
            .iter()
            .map(|e| [e.id.to_string(), e.x.to_string(), e.t.to_string()]),
    )
}

pub fn write_world(world: &World, dir: &Path) -> Result<WorldFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = WorldFiles::in_dir(dir);
    fs::write(&files.config, format_config(&world.config)).map_err(|e| Error::io(&files.config, e))?;
    write_events(&files.events, &world.events)?;
    write_rows(
        &files.arrivals,
        &["event_id", "station", "arrival"],
        world.events.iter().flat_map(|e| {
            e.arrivals
                .iter()
                .enumerate()
                .map(move |(j, a)| [e.id.to_string(), j.to_string(), a.to_string()])
        }),
    )?;
    let signals = &world.signals;
    write_rows(
        &files.signals,
        &["station", "sample", "value"],
        (0..signals.n_stations()).flat_map(|j| {
            signals
                .station(j)
                .iter()
                .enumerate()
                .map(move |(i, v)| [j.to_string(), i.to_string(), v.to_string()])
        }),
    )?;
    Ok(files)
}

/// A parsed CSV table: rows of raw fields with 1-based row numbers.
pub(crate) struct Table {
    pub path: PathBuf,
    pub rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path, header: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let found = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        for (i, expected) in header.iter().enumerate() {
            match found.get(i) {
                Some(col) if col.trim() == *expected => {}
                Some(col) => {
                    return Err(Error::table(
                        path,
                        0,
                        format!("column {} is `{col}`, expected `{expected}`", i + 1),
                    ))
                }
                None => return Err(Error::table(path, 0, format!("missing column `{expected}`"))),
            }
        }
        let rows = reader
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::csv(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            rows,
        })
    }

    pub fn field<T: std::str::FromStr>(&self, row: usize, col: usize, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.rows[row]
            .get(col)
            .ok_or_else(|| Error::table(&self.path, row + 1, format!("missing field `{name}`")))?;
        raw.trim()
            .parse::<T>()
            .map_err(|e| Error::table(&self.path, row + 1, format!("bad `{name}` value `{raw}`: {e}")))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Location>> {
    let table = Table::read(path, &["id", "x", "t"])?;
    (0..table.rows.len())
        .map(|r| {
            Ok(Location::new(
                table.field(r, 0, "id")?,
                table.field(r, 1, "x")?,
                table.field(r, 2, "t")?,
            ))
        })
        .collect()
}

pub fn read_world(dir: &Path) -> Result<World> {
    let files = WorldFiles::in_dir(dir);
    let config = read_config(&files.config)?;
    let n_stations = config.n_stations();
    let n_samples = config.n_samples();

    let rows = read_events(&files.events)?;
    let mut index = HashMap::with_capacity(rows.len());
    for (r, Location { id, .. }) in rows.iter().enumerate() {
        if index.insert(*id, r).is_some() {
            return Err(Error::table(&files.events, r + 1, format!("duplicate event id {id}")));
        }
    }
    let mut arrivals: Vec<Vec<Option<f64>>> = vec![vec![None; n_stations]; rows.len()];
    let table = Table::read(&files.arrivals, &["event_id", "station", "arrival"])?;
    for r in 0..table.rows.len() {
        let id: u64 = table.field(r, 0, "event_id")?;
        let station: usize = table.field(r, 1, "station")?;
        let value: f64 = table.field(r, 2, "arrival")?;
        let Some(&e) = index.get(&id) else {
            return Err(Error::table(
                &files.arrivals,
                r + 1,
                format!("arrival references unknown event id {id}"),
            ));
        };
        if station >= n_stations {
            return Err(Error::table(
                &files.arrivals,
                r + 1,
                format!("station {station} out of range (config has {n_stations})"),
            ));
        }
        if arrivals[e][station].replace(value).is_some() {
            return Err(Error::table(
                &files.arrivals,
                r + 1,
                format!("duplicate arrival for event {id} station {station}"),
            ));
        }
    }
    let mut events = Vec::with_capacity(rows.len());
    for (r, (Location { id, x, t }, arr)) in rows.into_iter().zip(arrivals).enumerate() {
        let arr: Option<Vec<f64>> = arr.into_iter().collect();
        let Some(arr) = arr else {
            return Err(Error::table(
                &files.events,
                r + 1,
                format!("event {id} is missing arrivals for some stations"),
            ));
        };
        let event = Event::new(id, x, t, arr);
        event
            .validate(&config)
            .map_err(|e| Error::table(&files.events, r + 1, e.to_string()))?;
        events.push(event);
    }

    let table = Table::read(&files.signals, &["station", "sample", "value"])?;
    let expected = n_stations * n_samples;
    if table.rows.len() != expected {
        return Err(Error::table(
            &files.signals,
            table.rows.len(),
            format!(
                "expected {expected} rows ({n_stations} stations x {n_samples} samples), found {}",
                table.rows.len()
            ),
        ));
    }
    let mut values: Vec<Vec<Option<f64>>> = vec![vec![None; n_samples]; n_stations];
    for r in 0..table.rows.len() {
        let station: usize = table.field(r, 0, "station")?;
        let sample: usize = table.field(r, 1, "sample")?;
        let value: f64 = table.field(r, 2, "value")?;
        if station >= n_stations || sample >= n_samples {
            return Err(Error::table(
                &files.signals,
                r + 1,
                format!("(station {station}, sample {sample}) out of range"),
            ));
        }
        if values[station][sample].replace(value).is_some() {
            return Err(Error::table(
                &files.signals,
                r + 1,
                format!("duplicate (station {station}, sample {sample})"),
            ));
        }
    }
    let signals = values
        .into_iter()
        .map(|s| s.into_iter().map(|v| v.expect("row count checked")).collect())
        .collect();
    World::new(config, events, ObservedSignals::new(signals)?)
}
