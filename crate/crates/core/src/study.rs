//! Replication studies over sample size, node count and shift scale.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{breslow_with_fit, estimate_lambda0};
use crate::design::{assemble_difference_design, DesignOptions};
use crate::error::{RemError, Result};
use crate::fitter::{fit_degenerate_logistic, FitOptions, FitResult, SmoothingPolicy};
use crate::fullik::quantile;
use crate::intensity::RiskPolicy;
use crate::rng::{replicate_seed, streams};
use crate::scenario::CovariateScenario;
use crate::timeshift::{draw_shifts, sample_case_control, shift_process};

/// Points of the quadrature grid for the g₀ distance.
pub const L2_GRID_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub setting: String,
    pub n: usize,
    pub p: usize,
    pub nu: f64,
    pub replication: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta_rep: f64,
    pub beta0: f64,
    pub se_beta0: f64,
    pub lambda0: f64,
    pub l2_g0: f64,
    pub edf_g0: f64,
    pub dropped_fraction: f64,
    pub converged: bool,
}

impl StudyRecord {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        match name {
            "beta1" => Some(self.beta1),
            "beta2" => Some(self.beta2),
            "beta_rep" => Some(self.beta_rep),
            "beta0" => Some(self.beta0),
            _ => None,
        }
    }
}

/// Trapezoid rule for ∫ f² over `[0, upper]` on `points` nodes, square-rooted.
pub fn l2_distance(f: impl Fn(f64) -> f64, upper: f64, points: usize) -> f64 {
    let points = points.max(2);
    let h = upper / (points - 1) as f64;
    let mut acc = 0.0;
    for i in 0..points {
        let t = i as f64 * h;
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        acc += w * f(t).powi(2);
    }
    (acc * h).sqrt()
}

/// Distance between the true g₀ and ĝ₀ + log λ̂₀ over [0, last event time].
pub fn g0_distance(fit: &FitResult, lambda0: f64, upper: f64) -> f64 {
    let shift = lambda0.ln();
    l2_distance(
        |t| fit.term_value("g0", t).unwrap_or(f64::NAN) + shift - CovariateScenario::true_time_effect(t),
        upper,
        L2_GRID_POINTS,
    )
}

/// Simulates, shifts, samples, fits and post-processes one replication.
pub fn run_replicate(scenario: &CovariateScenario, nu: f64, seed: u64, smoothing: &SmoothingPolicy) -> Result<(StudyRecord, FitResult)> {
    let inst = scenario.realize(seed)?;
    let seq = &inst.sequence;
    let policy = RiskPolicy::NoSelfLoops;
    let dyads = policy.candidate_dyads(scenario.node_count);
    let shifts = draw_shifts(&dyads, nu, seq.mean_event_time(), seed)?;
    let shifted = shift_process(seq, &shifts)?;
    let ccs = sample_case_control(&shifted, &shifts, &policy, seed)?;
    let design = assemble_difference_design(&ccs, &inst.catalog, seq.history(), &CovariateScenario::fitted_terms(), DesignOptions::default())?;
    let smoothing = match smoothing {
        SmoothingPolicy::CrossValidated { grid, folds, sweeps, .. } => SmoothingPolicy::CrossValidated {
            grid: grid.clone(),
            folds: *folds,
            seed,
            sweeps: *sweeps,
        },
        fixed => fixed.clone(),
    };
    let fit = fit_degenerate_logistic(&design, &smoothing, FitOptions::default())?;
    let curve = breslow_with_fit(seq, &fit, &inst.catalog, policy)?;
    let lambda0 = estimate_lambda0(&curve)?.lambda0;
    let upper = seq.last_time().unwrap_or(0.0);
    let get = |name: &str| fit.coefficient(name).unwrap_or(f64::NAN);
    let record = StudyRecord {
        setting: String::new(),
        n: scenario.events,
        p: scenario.node_count,
        nu,
        replication: 0,
        seed,
        beta1: get("beta1"),
        beta2: get("beta2"),
        beta_rep: get("beta_rep"),
        beta0: get("beta0"),
        se_beta0: fit.std_error("beta0").unwrap_or(f64::NAN),
        lambda0,
        l2_g0: g0_distance(&fit, lambda0, upper),
        edf_g0: fit.edf_of("g0").unwrap_or(f64::NAN),
        dropped_fraction: ccs.dropped_fraction(),
        converged: fit.converged,
    };
    Ok((record, fit))
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySetting {
    pub label: String,
    pub n: usize,
    pub p: usize,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub settings: Vec<StudySetting>,
    pub replications: usize,
    pub seed: u64,
    pub workers: usize,
    #[serde(default)]
    pub smoothing: SmoothingPolicy,
}

impl StudyConfig {
    /// The three one-at-a-time sweeps around n=3000, p=15, ν=1.
    pub fn standard(replications: usize, seed: u64) -> Self {
        let mut settings = Vec::new();
        for n in [1000, 3000, 9000] {
            settings.push(StudySetting { label: "n".into(), n, p: 15, nu: 1.0 });
        }
        for p in [5, 15, 45] {
            settings.push(StudySetting { label: "p".into(), n: 3000, p, nu: 1.0 });
        }
        for nu in [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0] {
            settings.push(StudySetting { label: "nu".into(), n: 3000, p: 15, nu });
        }
        Self {
            settings,
            replications,
            seed,
            workers: 1,
            smoothing: SmoothingPolicy::default(),
        }
    }
}

/// Seed of replication `rep` of a setting; shared across settings so that
/// sweeps are paired by replication index.
pub fn study_seed(base: u64, rep: usize) -> u64 {
    replicate_seed(base, streams::replication(rep as u64, 0))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RemError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs `replications` replicates of one setting; output order is by
/// replication regardless of the worker count.
pub fn run_setting(
    setting: &StudySetting,
    replications: usize,
    seed: u64,
    workers: usize,
    smoothing: &SmoothingPolicy,
) -> Result<Vec<StudyRecord>> {
    let scenario = CovariateScenario {
        node_count: setting.p,
        events: setting.n,
        ..CovariateScenario::default()
    };
    let results: Vec<Result<StudyRecord>> = pool(workers)?.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|rep| {
                let s = study_seed(seed, rep);
                run_replicate(&scenario, setting.nu, s, smoothing).map(|(mut r, _)| {
                    r.setting = setting.label.clone();
                    r.replication = rep;
                    r
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn run_study(config: &StudyConfig) -> Result<Vec<StudyRecord>> {
    let mut all = Vec::new();
    for s in &config.settings {
        all.extend(run_setting(s, config.replications, config.seed, config.workers, &config.smoothing)?);
    }
    Ok(all)
}

/// Five-number summary plus mean of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub setting: String,
    pub n: usize,
    pub p: usize,
    pub nu: f64,
    pub quantity: String,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

pub fn box_stats(values: &[f64]) -> (f64, f64, f64, f64, f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
    (mean, quantile(&v, 0.0), quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75), quantile(&v, 1.0))
}

/// Per-setting summaries of β̂₀, the other coefficients, L2(g₀) and drop-out.
pub fn summarize(records: &[StudyRecord]) -> Vec<BoxStats> {
    let mut keys: Vec<(String, usize, usize, u64)> = Vec::new();
    for r in records {
        let k = (r.setting.clone(), r.n, r.p, r.nu.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let quantities: [(&str, fn(&StudyRecord) -> f64); 7] = [
        ("beta0", |r| r.beta0),
        ("beta1", |r| r.beta1),
        ("beta2", |r| r.beta2),
        ("beta_rep", |r| r.beta_rep),
        ("l2_g0", |r| r.l2_g0),
        ("lambda0", |r| r.lambda0),
        ("dropped_fraction", |r| r.dropped_fraction),
    ];
    let mut out = Vec::new();
    for (setting, n, p, nu) in keys {
        let group: Vec<&StudyRecord> = records
            .iter()
            .filter(|r| r.setting == setting && r.n == n && r.p == p && r.nu.to_bits() == nu)
            .collect();
        for (name, get) in quantities {
            let vals: Vec<f64> = group.iter().map(|r| get(r)).collect();
            let (mean, min, q25, median, q75, max) = box_stats(&vals);
            out.push(BoxStats {
                setting: setting.clone(),
                n,
                p,
                nu: f64::from_bits(nu),
                quantity: name.to_string(),
                count: group.len(),
                mean,
                min,
                q25,
                median,
                q75,
                max,
            });
        }
    }
    out
}

pub fn write_records_csv(records: &[StudyRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(rows: &[BoxStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_l2() {
        // ∫₀² 1 dt = 2.
        assert!((l2_distance(|_| 1.0, 2.0, 512) - 2f64.sqrt()).abs() < 1e-12);
        // ∫₀¹ t² dt = 1/3 up to O(h²).
        assert!((l2_distance(|t| t, 1.0, 512).powi(2) - 1.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn small_replicate_runs() {
        let sc = CovariateScenario {
            node_count: 6,
            events: 600,
            ..CovariateScenario::default()
        };
        let (rec, fit) = run_replicate(&sc, 1.0, 4, &SmoothingPolicy::default()).unwrap();
        assert!(rec.beta0.is_finite() && rec.l2_g0.is_finite());
        assert!(rec.lambda0 > 0.0);
        assert!(fit.edf_of("g0").unwrap() >= 1.0 - 1e-6);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let setting = StudySetting { label: "n".into(), n: 300, p: 5, nu: 1.0 };
        let policy = SmoothingPolicy::Fixed { lambdas: vec![1.0] };
        let a = run_setting(&setting, 3, 9, 1, &policy).unwrap();
        let b = run_setting(&setting, 3, 9, 2, &policy).unwrap();
        assert_eq!(a, b);
    }
}
