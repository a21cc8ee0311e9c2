//! Approximate full likelihood with hazards held constant between consecutive
//! events, and the paired bias comparison against the shifted partial
//! likelihood on Weibull data.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateCatalog, CovariateRef, GlobalSeries};
use crate::design::{assemble_difference_design, DesignOptions, TermSpec};
use crate::error::{RemError, Result};
use crate::event::{next_time_after, EventSequence, HistoryIndex};
use crate::fitter::{firth_adjust, fit_degenerate_logistic, FitOptions, SmoothingPolicy};
use crate::glm::{fit_glm, GlmOptions, Response};
use crate::intensity::RiskPolicy;
use crate::rng::{replicate_seed, streams};
use crate::simulator::simulate_weibull;
use crate::timeshift::{draw_shifts_on_stream, sample_case_control_on_stream, shift_process};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullLikEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullLikFit {
    /// log λ₀.
    pub intercept: FullLikEstimate,
    pub coefficients: Vec<FullLikEstimate>,
    pub converged: bool,
    pub iterations: usize,
    pub excluded_intervals: usize,
    /// Poisson rows after merging identical covariate patterns.
    pub rows: usize,
}

impl FullLikFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.estimate)
    }
}

/// Where the hazard of an inter-event interval (t_{i−1}, t_i] is frozen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePoint {
    /// Covariates just after t_{i−1}, history included. The first interval,
    /// which starts at the origin, is excluded and counted.
    #[default]
    Left,
    /// Covariates at t_i from the history strictly before t_i.
    Right,
}

/// Maximizes Σ_i [log λ_{e_i} − Σ_{ℛ} λ_sr·(t_i − t_{i−1})] with each hazard
/// λ = exp(α + Σ β_l x_l) frozen over its interval, as a Poisson regression
/// with log-exposure offset.
pub fn fit_piecewise_full_likelihood(
    seq: &EventSequence,
    catalog: &CovariateCatalog,
    terms: &[(String, CovariateRef)],
    risk_policy: &RiskPolicy,
    firth: bool,
) -> Result<FullLikFit> {
    fit_piecewise_full_likelihood_at(seq, catalog, terms, risk_policy, firth, FreezePoint::default())
}

pub fn fit_piecewise_full_likelihood_at(
    seq: &EventSequence,
    catalog: &CovariateCatalog,
    terms: &[(String, CovariateRef)],
    risk_policy: &RiskPolicy,
    firth: bool,
    freeze: FreezePoint,
) -> Result<FullLikFit> {
    if seq.is_empty() {
        return Err(RemError::Config("full likelihood needs at least one event".into()));
    }
    for (_, c) in terms {
        catalog.resolve(c)?;
    }
    let dyads = risk_policy.candidate_dyads(seq.node_count());
    let p = terms.len() + 1;
    let mut xs: Vec<f64> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    let mut exposure: Vec<f64> = Vec::new();
    let mut history = HistoryIndex::new();
    let mut prev = 0.0;
    let mut excluded = 0;
    let mut pattern: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut covs = vec![0.0; terms.len()];
    for e in seq.events() {
        let dt = e.time - prev;
        prev = e.time;
        if !(dt > 0.0) {
            excluded += 1;
            history.push(*e)?;
            continue;
        }
        let at = match freeze {
            FreezePoint::Left => next_time_after(e.time - dt),
            FreezePoint::Right => e.time,
        };
        if freeze == FreezePoint::Left && e.time - dt == 0.0 {
            excluded += 1;
            history.push(*e)?;
            continue;
        }
        pattern.clear();
        let mut event_seen = false;
        for &d in &dyads {
            if !risk_policy.at_risk(d, at) {
                continue;
            }
            let mut defined = true;
            for (k, (_, c)) in terms.iter().enumerate() {
                match catalog.value(c, d, at, &history) {
                    Some(v) => covs[k] = v,
                    None => {
                        defined = false;
                        break;
                    }
                }
            }
            if !defined {
                if d == e.dyad {
                    return Err(RemError::Ingest(format!("covariates undefined for event {} at t={}", d, e.time)));
                }
                continue;
            }
            let key: Vec<u64> = covs.iter().map(|v| v.to_bits()).collect();
            let row = *pattern.entry(key).or_insert_with(|| {
                xs.push(1.0);
                xs.extend_from_slice(&covs);
                y.push(0.0);
                exposure.push(0.0);
                y.len() - 1
            });
            exposure[row] += dt;
            if d == e.dyad {
                y[row] += 1.0;
                event_seen = true;
            }
        }
        if !event_seen {
            return Err(RemError::Config(format!("event dyad {} not at risk at t={}", e.dyad, e.time)));
        }
        history.push(*e)?;
    }
    let offset: Vec<f64> = exposure.iter().map(|e| e.ln()).collect();
    let x = DMatrix::from_row_slice(y.len(), p, &xs);
    let glm = fit_glm(
        &x,
        Response::Poisson { y: &y, offset: &offset },
        &DMatrix::zeros(p, p),
        &GlmOptions {
            firth,
            ..GlmOptions::default()
        },
    );
    let se = |j: usize| glm.covariance[(j, j)].max(0.0).sqrt();
    Ok(FullLikFit {
        intercept: FullLikEstimate {
            name: "(intercept)".into(),
            estimate: glm.beta[0],
            std_error: se(0),
        },
        coefficients: terms
            .iter()
            .enumerate()
            .map(|(k, (name, _))| FullLikEstimate {
                name: name.clone(),
                estimate: glm.beta[k + 1],
                std_error: se(k + 1),
            })
            .collect(),
        converged: glm.converged,
        iterations: glm.iterations,
        excluded_intervals: excluded,
        rows: y.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "shifted-PL")]
    ShiftedPl,
    #[serde(rename = "shifted-PL+Firth")]
    ShiftedPlFirth,
    #[serde(rename = "full-likelihood")]
    FullLikelihood,
    #[serde(rename = "full-likelihood+Firth")]
    FullLikelihoodFirth,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::ShiftedPl, Self::ShiftedPlFirth, Self::FullLikelihood, Self::FullLikelihoodFirth];

    pub fn label(self) -> &'static str {
        match self {
            Self::ShiftedPl => "shifted-PL",
            Self::ShiftedPlFirth => "shifted-PL+Firth",
            Self::FullLikelihood => "full-likelihood",
            Self::FullLikelihoodFirth => "full-likelihood+Firth",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = RemError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| RemError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub ns: Vec<usize>,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub node_count: usize,
    pub shape: f64,
    pub nu: f64,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            ns: vec![100, 500, 2000],
            replications: 500,
            methods: Method::ALL.to_vec(),
            node_count: 5,
            shape: 0.1,
            nu: 1.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub method: Method,
    pub n: usize,
    pub replication: usize,
    pub estimate: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub method: String,
    pub n: usize,
    pub mean: f64,
    #[serde(rename = "q2.5")]
    pub q025: f64,
    #[serde(rename = "q97.5")]
    pub q975: f64,
    pub mean_runtime_seconds: f64,
    #[serde(skip)]
    pub sd: f64,
    #[serde(skip)]
    pub count: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub(crate) fn log_time_catalog() -> CovariateCatalog {
    CovariateCatalog::new().with_global("log_t", GlobalSeries::Function(Arc::new(f64::ln)))
}

/// Slope of log t by every requested method on one Weibull sequence.
pub fn estimate_weibull_slope(seq: &EventSequence, methods: &[Method], nu: f64, seed: u64) -> Result<Vec<(Method, f64, f64)>> {
    let catalog = log_time_catalog();
    let policy = RiskPolicy::WithSelfLoops;
    let mut out = Vec::with_capacity(methods.len());
    let needs_pl = methods.iter().any(|m| matches!(m, Method::ShiftedPl | Method::ShiftedPlFirth));
    let mut design = None;
    let mut design_time = 0.0;
    if needs_pl {
        let start = Instant::now();
        let dyads = policy.candidate_dyads(seq.node_count());
        let shifts = draw_shifts_on_stream(&dyads, nu, seq.mean_event_time(), seed, streams::SHIFTS)?;
        let shifted = shift_process(seq, &shifts)?;
        let ccs = sample_case_control_on_stream(&shifted, &shifts, &policy, seed, streams::CONTROLS)?;
        let terms = [TermSpec::linear("log_t", "global:log_t")?];
        design = Some(assemble_difference_design(&ccs, &catalog, seq.history(), &terms, DesignOptions::default())?);
        design_time = start.elapsed().as_secs_f64();
    }
    for &m in methods {
        let start = Instant::now();
        let est = match m {
            Method::ShiftedPl => {
                let fit = fit_degenerate_logistic(design.as_ref().expect("built above"), &SmoothingPolicy::default(), FitOptions::default())?;
                fit.coefficients[0]
            }
            Method::ShiftedPlFirth => firth_adjust(design.as_ref().expect("built above"), FitOptions::default())?.coefficients[0],
            Method::FullLikelihood | Method::FullLikelihoodFirth => {
                let terms = [("log_t".to_string(), CovariateRef::Global("log_t".into()))];
                let fit = fit_piecewise_full_likelihood(seq, &catalog, &terms, &policy, m == Method::FullLikelihoodFirth)?;
                fit.coefficients[0].estimate
            }
        };
        let mut secs = start.elapsed().as_secs_f64();
        if matches!(m, Method::ShiftedPl | Method::ShiftedPlFirth) {
            secs += design_time;
        }
        out.push((m, est, secs));
    }
    Ok(out)
}

/// Paired replications: every method sees the same simulated sequence.
pub fn compare_bias_replicates(config: &CompareConfig) -> Result<Vec<ReplicateEstimate>> {
    if config.replications == 0 || config.ns.is_empty() || config.methods.is_empty() {
        return Err(RemError::Config("comparison needs replications, sample sizes and methods".into()));
    }
    let mut out = Vec::new();
    for (ni, &n) in config.ns.iter().enumerate() {
        for rep in 0..config.replications {
            let seed = replicate_seed(config.seed, streams::replication(rep as u64, ni as u64));
            let seq = simulate_weibull(config.node_count, n, config.shape, seed)?;
            for (method, estimate, secs) in estimate_weibull_slope(&seq, &config.methods, config.nu, seed)? {
                out.push(ReplicateEstimate {
                    method,
                    n,
                    replication: rep,
                    estimate,
                    runtime_seconds: secs,
                });
            }
        }
    }
    Ok(out)
}

pub fn summarize_bias(estimates: &[ReplicateEstimate]) -> Vec<BiasSummary> {
    let mut groups: std::collections::BTreeMap<(usize, Method), Vec<&ReplicateEstimate>> = Default::default();
    for e in estimates {
        groups.entry((e.n, e.method)).or_default().push(e);
    }
    groups
        .into_iter()
        .map(|((n, method), rows)| {
            let mut v: Vec<f64> = rows.iter().map(|r| r.estimate).filter(|x| x.is_finite()).collect();
            v.sort_by(f64::total_cmp);
            let count = v.len();
            let mean = v.iter().sum::<f64>() / count.max(1) as f64;
            let sd = if count > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
            } else {
                0.0
            };
            BiasSummary {
                method: method.label().to_string(),
                n,
                mean,
                q025: quantile(&v, 0.025),
                q975: quantile(&v, 0.975),
                mean_runtime_seconds: rows.iter().map(|r| r.runtime_seconds).sum::<f64>() / rows.len() as f64,
                sd,
                count,
            }
        })
        .collect()
}

pub fn compare_bias(config: &CompareConfig) -> Result<Vec<BiasSummary>> {
    Ok(summarize_bias(&compare_bias_replicates(config)?))
}

pub fn write_bias_csv(rows: &[BiasSummary], path: &Path) -> Result<()> {
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
    use crate::event::{Dyad, Event};

    #[test]
    fn constant_rate_single_dyad_is_n_over_t() {
        let only = Dyad::new(0, 1);
        let seq = EventSequence::new(
            [0.4, 1.1, 1.5, 2.9, 3.2].iter().map(|&t| Event::new(t, only)).collect(),
            2,
            3.2,
        )
        .unwrap();
        let policy = RiskPolicy::Custom(Arc::new(move |d, _| d == only));
        let fit = fit_piecewise_full_likelihood(&seq, &CovariateCatalog::new(), &[], &policy, false).unwrap();
        // The interval from 0 is excluded, leaving 4 events over 2.8 time units.
        assert!((fit.intercept.estimate.exp() - 4.0 / 2.8).abs() < 1e-8);
        assert_eq!(fit.rows, 4);
        assert_eq!(fit.excluded_intervals, 1);
    }

    #[test]
    fn homogeneous_multi_dyad_matches_poisson_mle() {
        let seq = simulate_weibull(3, 400, 1.0, 5).unwrap();
        let fit = fit_piecewise_full_likelihood(&seq, &CovariateCatalog::new(), &[], &RiskPolicy::WithSelfLoops, false).unwrap();
        let first = seq.events()[0].time;
        let mle = 399.0 / (9.0 * (seq.last_time().unwrap() - first));
        assert!((fit.intercept.estimate.exp() / mle - 1.0).abs() < 1e-8);
    }

    #[test]
    fn one_replication_collapses_bounds() {
        let cfg = CompareConfig {
            ns: vec![60],
            replications: 1,
            ..CompareConfig::default()
        };
        let rows = compare_bias(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert_eq!(r.q025, r.mean);
            assert_eq!(r.q975, r.mean);
        }
    }

    #[test]
    fn methods_share_data() {
        let cfg = CompareConfig {
            ns: vec![80],
            replications: 2,
            methods: vec![Method::FullLikelihood],
            ..CompareConfig::default()
        };
        let a = compare_bias_replicates(&cfg).unwrap();
        let b = compare_bias_replicates(&CompareConfig { methods: Method::ALL.to_vec(), ..cfg }).unwrap();
        let full: Vec<f64> = b.iter().filter(|r| r.method == Method::FullLikelihood).map(|r| r.estimate).collect();
        assert_eq!(full, a.iter().map(|r| r.estimate).collect::<Vec<_>>());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.875), 4.5);
    }
}
