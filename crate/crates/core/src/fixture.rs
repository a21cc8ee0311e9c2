//! Synthetic bike-share data with a known time-of-day effect.
//!
//! Files mirror real exports: rides with wall-clock stamps and string station
//! ids, hourly weather series and a station travel-time matrix. A handful of
//! out-of-window rides, round trips and one malformed row are mixed in.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateCatalog, CovariateKind, DyadicAttr, GlobalSeries, StepFunction};
use crate::endostats::{competition, DecayKind, DecayStat, DistanceMatrix, EndogenousStat};
use crate::error::{RemError, Result};
use crate::event::{Dyad, EventSequence};
use crate::ingest::StudyWindow;
use crate::intensity::{IntensitySpec, RiskPolicy};
use crate::rng::{stream_rng, streams};
use crate::simulator::{simulate_tau_leap, TauLeapConfig};

const HOUR: f64 = 3600.0;
const PILOT_ROUNDS: u64 = 3;

/// Planted time-of-day effect: morning and evening peaks, mean zero over a day.
pub fn planted_time_of_day(hour: f64) -> f64 {
    let bump = |h: f64, centre: f64, width: f64| {
        let d = (h - centre).rem_euclid(24.0);
        let d = d.min(24.0 - d);
        (-0.5 * (d / width).powi(2)).exp()
    };
    let raw = |h: f64| 1.4 * bump(h, 8.5, 1.5) + 1.1 * bump(h, 17.5, 2.0);
    // Daily mean of the raw curve by the midpoint rule.
    let mean = (0..2400).map(|k| raw((k as f64 + 0.5) / 100.0)).sum::<f64>() / 2400.0;
    raw(hour) - mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BikeFixtureConfig {
    pub stations: usize,
    pub events: usize,
    pub window_start: String,
    pub window_end: String,
    pub utc_offset: String,
    /// Fraction of the window the simulated rides are expected to span.
    pub fill_fraction: f64,
    pub temperature_effect: f64,
    pub precipitation_effect: f64,
    pub distance_effect: f64,
    pub competition_effect: f64,
    pub repetition_effect: f64,
    pub reciprocity_effect: f64,
    pub repetition_half_scale_hours: f64,
    pub reciprocity_half_scale_hours: f64,
    /// Station left out of the travel-time file.
    pub unmapped_stations: usize,
}

impl Default for BikeFixtureConfig {
    fn default() -> Self {
        Self {
            stations: 30,
            events: 5000,
            window_start: "2023-07-09T00:00:00".into(),
            window_end: "2023-08-01T00:00:00".into(),
            utc_offset: "-04:00".into(),
            fill_fraction: 0.75,
            temperature_effect: 0.04,
            precipitation_effect: -0.6,
            distance_effect: -0.8,
            competition_effect: 0.05,
            repetition_effect: 1.2,
            reciprocity_effect: 0.6,
            repetition_half_scale_hours: 36.0,
            reciprocity_half_scale_hours: 24.0,
            unmapped_stations: 1,
        }
    }
}

/// Paths of the generated files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BikeFixtureFiles {
    pub rides: PathBuf,
    pub temperature: PathBuf,
    pub precipitation: PathBuf,
    pub distances: PathBuf,
}

impl BikeFixtureFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            rides: dir.join("rides.csv"),
            temperature: dir.join("temperature.csv"),
            precipitation: dir.join("precipitation.csv"),
            distances: dir.join("distances.csv"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.rides, &self.temperature, &self.precipitation, &self.distances]
    }
}

fn station_name(k: usize) -> String {
    format!("{}", 31001 + k)
}

struct Weather {
    temperature: Vec<f64>,
    precipitation: Vec<f64>,
}

fn weather(hours: usize, seed: u64) -> Weather {
    let mut rng = stream_rng(seed, streams::COVARIATES + 16);
    let daily = Normal::new(27.0, 3.0).expect("valid");
    let noise = Normal::new(0.0, 0.6).expect("valid");
    let amount = Exp::new(0.8).expect("valid");
    let days = hours.div_ceil(24) + 1;
    let day_mean: Vec<f64> = (0..days).map(|_| daily.sample(&mut rng)).collect();
    let mut temperature = Vec::with_capacity(hours);
    let mut precipitation = Vec::with_capacity(hours);
    let mut raining = 0usize;
    for h in 0..hours {
        let clock = (h % 24) as f64;
        let t = day_mean[h / 24] + 3.0 * (2.0 * PI * (clock - 9.0) / 24.0).sin() + noise.sample(&mut rng);
        temperature.push((t * 10.0).round() / 10.0);
        if raining == 0 && rng.random::<f64>() < 0.03 {
            raining = rng.random_range(1..6);
        }
        let p: f64 = if raining > 0 {
            raining -= 1;
            amount.sample(&mut rng)
        } else {
            0.0
        };
        precipitation.push((p * 100.0).round() / 100.0);
    }
    Weather { temperature, precipitation }
}

fn hourly_step(values: &[f64]) -> Result<StepFunction> {
    StepFunction::new((0..values.len()).map(|k| k as f64 * HOUR).collect(), values.to_vec())
}

/// Catalog used to generate the rides, on the window timeline in seconds.
fn generating_catalog(
    cfg: &BikeFixtureConfig,
    window: &StudyWindow,
    weather: &Weather,
    distances: &DistanceMatrix,
) -> Result<CovariateCatalog> {
    let p = cfg.stations;
    let origin = window.origin_hour();
    let mut log_dist = vec![f64::NAN; p * p];
    for s in 0..p {
        for r in 0..p {
            let m = distances.get(s as u32, r as u32);
            if s != r && m.is_finite() && m > 0.0 {
                log_dist[s * p + r] = m.ln();
            }
        }
    }
    let comp: Vec<f64> = (0..p as u32).map(|s| competition(s, distances).unwrap_or(f64::NAN)).collect();
    let prec: Vec<f64> = weather.precipitation.iter().map(|v| v.ln_1p()).collect();
    Ok(CovariateCatalog::new()
        .with_global("temp", GlobalSeries::Step(hourly_step(&weather.temperature)?))
        .with_global("prec", GlobalSeries::Step(hourly_step(&prec)?))
        .with_global(
            "tod",
            GlobalSeries::Function(Arc::new(move |t| crate::ingest::derive_time_of_day(t, origin))),
        )
        .with_node_attr("comp", comp)
        .with_dyadic_attr("log_dist", DyadicAttr::Dense { node_count: p, values: log_dist })
        .with_endogenous(
            "rep",
            EndogenousStat::Decay(DecayStat {
                kind: DecayKind::Repetition,
                half_scale: cfg.repetition_half_scale_hours * HOUR,
            }),
        )
        .with_endogenous(
            "rec",
            EndogenousStat::Decay(DecayStat {
                kind: DecayKind::Reciprocity,
                half_scale: cfg.reciprocity_half_scale_hours * HOUR,
            }),
        ))
}

fn generating_spec(cfg: &BikeFixtureConfig, lambda0: f64) -> IntensitySpec {
    IntensitySpec::homogeneous(lambda0, RiskPolicy::NoSelfLoops)
        .with_smooth("global:tod", Arc::new(planted_time_of_day))
        .with_smooth("global:temp", {
            let b = cfg.temperature_effect;
            Arc::new(move |x| b * (x - 27.0))
        })
        .with_linear("global:prec", cfg.precipitation_effect)
        .with_linear("dyad:log_dist", cfg.distance_effect)
        .with_linear("sender:comp", cfg.competition_effect)
        .with_linear("receiver:comp", cfg.competition_effect)
        .with_linear("endo:rep", cfg.repetition_effect)
        .with_linear("endo:rec", cfg.reciprocity_effect)
}

/// λ₀ for which the exogenous part alone yields `events` over the filled
/// fraction of the window.
fn calibrate_lambda0(cfg: &BikeFixtureConfig, catalog: &CovariateCatalog, horizon: f64) -> Result<f64> {
    let spec = generating_spec(cfg, 1.0);
    let model = spec.compile(catalog)?;
    let empty = crate::event::HistoryIndex::new();
    let dyads = RiskPolicy::NoSelfLoops.candidate_dyads(cfg.stations);
    let reference = dyads[0];
    let mut static_sum = 0.0;
    for &d in &dyads {
        static_sum += model.partial_eta(CovariateKind::Static, catalog, d, 1.0, &empty)?.exp();
    }
    let steps = (horizon / 600.0) as usize;
    let mut global_sum = 0.0;
    for k in 0..steps {
        let t = (k as f64 + 0.5) * 600.0;
        global_sum += model.partial_eta(CovariateKind::Global, catalog, reference, t, &empty)?.exp();
    }
    let mean_global = global_sum / steps as f64;
    Ok(cfg.events as f64 / (static_sum * mean_global * cfg.fill_fraction * horizon))
}

/// Generated data plus the sequence the rides came from.
pub struct BikeFixture {
    pub files: BikeFixtureFiles,
    pub sequence: EventSequence,
    pub lambda0: f64,
}

/// Writes the fixture into `dir` deterministically from `seed`.
pub fn write_bike_fixture(dir: &Path, cfg: &BikeFixtureConfig, seed: u64) -> Result<BikeFixture> {
    if cfg.stations < 3 || cfg.events == 0 {
        return Err(RemError::Parameter("fixture needs at least three stations and one ride".into()));
    }
    fs::create_dir_all(dir)?;
    let window = StudyWindow::parse(&cfg.window_start, &cfg.window_end, &cfg.utc_offset)?;
    let horizon = window.length_seconds();
    let hours = (horizon / HOUR).ceil() as usize;
    let wx = weather(hours, seed);

    let mut rng = stream_rng(seed, streams::COVARIATES);
    let xy: Vec<(f64, f64)> = (0..cfg.stations)
        .map(|_| (rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0))
        .collect();
    let mut distances = DistanceMatrix::new(cfg.stations);
    for (s, a) in xy.iter().enumerate() {
        for (r, b) in xy.iter().enumerate() {
            let km = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            let minutes = if s == r { 0.0 } else { ((1.0 + 4.0 * km) * 10.0).round() / 10.0 };
            distances.set(s as u32, r as u32, minutes);
        }
    }

    let catalog = generating_catalog(cfg, &window, &wx, &distances)?;
    // Self-excitation shortens the span; pilot runs correct λ₀ for it.
    let mut lambda0 = calibrate_lambda0(cfg, &catalog, horizon)?;
    for round in 0..PILOT_ROUNDS {
        let pilot_cfg = TauLeapConfig {
            stream: streams::replication(round, streams::PILOT),
            ..TauLeapConfig::new(cfg.events, seed)
        };
        let pilot = simulate_tau_leap(&generating_spec(cfg, lambda0), &catalog, cfg.stations, &pilot_cfg)?;
        lambda0 *= pilot.horizon() / (cfg.fill_fraction * horizon);
    }
    let sim = TauLeapConfig {
        max_time: Some(horizon),
        ..TauLeapConfig::new(cfg.events, seed)
    };
    let sequence = simulate_tau_leap(&generating_spec(cfg, lambda0), &catalog, cfg.stations, &sim)?;

    let files = BikeFixtureFiles::in_dir(dir);
    let stamp = |t: f64| {
        let at = window.start + chrono::Duration::seconds(t.ceil() as i64);
        at.naive_local().format("%Y-%m-%d %H:%M:%S").to_string()
    };
    let mut rides = csv::Writer::from_path(&files.rides)?;
    rides.write_record(["ride_id", "start_time", "start_station", "end_station"])?;
    let mut id = 0usize;
    let mut ride = |w: &mut csv::Writer<fs::File>, time: String, a: String, b: String| -> Result<()> {
        id += 1;
        w.write_record([format!("R{id:06}"), time, a, b])?;
        Ok(())
    };
    let mut extra = stream_rng(seed, streams::COVARIATES + 32);
    let name = |k: u32| station_name(k as usize);
    let pick = |r: &mut rand_chacha::ChaCha8Rng| r.random_range(0..cfg.stations as u32);
    // Rides before the window opens.
    for k in 0..4 {
        let before = window.start - chrono::Duration::minutes(30 * (k + 1));
        ride(&mut rides, before.naive_local().format("%Y-%m-%d %H:%M:%S").to_string(), name(pick(&mut extra)), name(pick(&mut extra)))?;
    }
    let loops_every = (sequence.len() / 10).max(1);
    for (k, e) in sequence.events().iter().enumerate() {
        ride(&mut rides, stamp(e.time), name(e.dyad.sender), name(e.dyad.receiver))?;
        if k % loops_every == loops_every / 2 {
            let s = name(e.dyad.sender);
            ride(&mut rides, stamp(e.time), s.clone(), s)?;
        }
        if k == sequence.len() / 2 {
            ride(&mut rides, "not a time".into(), name(e.dyad.sender), name(e.dyad.receiver))?;
        }
    }
    for k in 0..2 {
        let after = window.end + chrono::Duration::hours(k + 1);
        ride(&mut rides, after.naive_local().format("%Y-%m-%d %H:%M:%S").to_string(), name(pick(&mut extra)), name(pick(&mut extra)))?;
    }
    rides.flush()?;

    for (path, values) in [(&files.temperature, &wx.temperature), (&files.precipitation, &wx.precipitation)] {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["timestamp", "value"])?;
        for (h, v) in values.iter().enumerate() {
            let at = window.start + chrono::Duration::hours(h as i64);
            w.write_record([at.naive_local().format("%Y-%m-%d %H:%M").to_string(), v.to_string()])?;
        }
        w.flush()?;
    }

    let mapped = cfg.stations - cfg.unmapped_stations.min(cfg.stations - 2);
    let mut w = csv::Writer::from_path(&files.distances)?;
    w.write_record(["station_id_from", "station_id_to", "minutes"])?;
    for s in 0..mapped as u32 {
        for r in 0..mapped as u32 {
            if s != r {
                w.write_record([name(s), name(r), distances.get(s, r).to_string()])?;
            }
        }
    }
    w.flush()?;

    Ok(BikeFixture { files, sequence, lambda0 })
}

/// Pair (s, r) of the generating sequence, as written station labels.
pub fn station_labels(dyad: Dyad) -> (String, String) {
    (station_name(dyad.sender as usize), station_name(dyad.receiver as usize))
}
