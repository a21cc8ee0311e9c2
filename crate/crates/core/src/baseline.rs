//! Post-fit baseline: Breslow cumulative hazard on the original time line and
//! the constant λ₀ as its slope through the origin.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::BasisKind;
use crate::covariates::CovariateCatalog;
use crate::error::{RemError, Result};
use crate::event::{EventSequence, HistoryIndex};
use crate::fitter::FitResult;
use crate::intensity::{CompiledIntensity, CompiledTerm, RiskPolicy};
use crate::rates::RateEngine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreslowCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl BreslowCurve {
    /// Step value at `t` (right-continuous: includes a jump at `t`).
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["event_time", "cumulative_value"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fitted linear predictor as an intensity with λ₀ = 1. Linear terms use the
/// raw covariate (θ·x); smooths use their centered curves.
pub fn fitted_model(fit: &FitResult, risk_policy: RiskPolicy) -> CompiledIntensity {
    let terms = fit
        .blocks
        .iter()
        .filter(|b| !fit.inestimable.contains(&b.name))
        .map(|b| {
            let theta: Vec<f64> = fit.coefficients.rows(b.columns.start, b.columns.len()).iter().copied().collect();
            let basis = b.basis.clone();
            let effect: Arc<dyn Fn(f64) -> f64 + Send + Sync> = if basis.kind == BasisKind::Linear {
                let beta = theta[0];
                Arc::new(move |x| beta * x)
            } else {
                Arc::new(move |x| basis.eval(x).iter().zip(&theta).map(|(a, c)| a * c).sum())
            };
            CompiledTerm {
                name: b.name.clone(),
                covariate: b.covariate.clone(),
                effect,
            }
        })
        .collect();
    CompiledIntensity::new(0.0, terms, risk_policy)
}

/// Λ̂(t_i) = Σ_{j ≤ i} 1 / Σ_{(s,r) ∈ ℛ(t_j)} exp η̂_sr(t_j), with the risk
/// set and history taken from the original process.
pub fn breslow_cumulative(seq: &EventSequence, model: &CompiledIntensity, catalog: &CovariateCatalog) -> Result<BreslowCurve> {
    let mut engine = RateEngine::new(model, catalog, seq.node_count())?;
    let mut history = HistoryIndex::new();
    let mut acc = 0.0;
    let mut times = Vec::with_capacity(seq.len());
    let mut values = Vec::with_capacity(seq.len());
    for e in seq.events() {
        engine.refresh(e.time, &history)?;
        let denom = engine.total_rate(e.time)?;
        if !(denom > 0.0) {
            return Err(RemError::Config(format!("empty risk set at event time {}", e.time)));
        }
        acc += 1.0 / denom;
        times.push(e.time);
        values.push(acc);
        history.push(*e)?;
        engine.on_event(e.dyad, e.time, &history)?;
    }
    Ok(BreslowCurve { times, values })
}

pub fn breslow_with_fit(
    seq: &EventSequence,
    fit: &FitResult,
    catalog: &CovariateCatalog,
    risk_policy: RiskPolicy,
) -> Result<BreslowCurve> {
    breslow_cumulative(seq, &fitted_model(fit, risk_policy), catalog)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambda0Estimate {
    pub lambda0: f64,
    pub std_error: f64,
}

/// Least squares of the Breslow values on event times through the origin.
pub fn estimate_lambda0(curve: &BreslowCurve) -> Result<Lambda0Estimate> {
    let n = curve.times.len();
    let distinct = curve.times.windows(2).any(|w| w[0] != w[1]);
    if n < 2 || !distinct {
        return Err(RemError::DegenerateRegression("need at least two distinct event times".into()));
    }
    let sxx: f64 = curve.times.iter().map(|t| t * t).sum();
    let sxy: f64 = curve.times.iter().zip(&curve.values).map(|(t, v)| t * v).sum();
    let slope = sxy / sxx;
    let rss: f64 = curve.times.iter().zip(&curve.values).map(|(t, v)| (v - slope * t).powi(2)).sum();
    let sigma2 = rss / (n - 1) as f64;
    Ok(Lambda0Estimate {
        lambda0: slope,
        std_error: (sigma2 / sxx).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Dyad, Event};
    use crate::intensity::IntensitySpec;
    use crate::simulator::{simulate_tau_leap, TauLeapConfig};

    #[test]
    fn single_event_jumps_by_one() {
        let only = Dyad::new(0, 1);
        let seq = EventSequence::new(vec![Event::new(2.0, only)], 2, 3.0).unwrap();
        let policy = RiskPolicy::Custom(Arc::new(move |d, _| d == only));
        let model = CompiledIntensity::new(0.0, Vec::new(), policy);
        let curve = breslow_cumulative(&seq, &model, &CovariateCatalog::new()).unwrap();
        assert_eq!(curve.values, vec![1.0]);
        assert_eq!(curve.value_at(1.9), 0.0);
        assert_eq!(curve.value_at(2.0), 1.0);
    }

    #[test]
    fn exact_line_gives_exact_slope() {
        let curve = BreslowCurve {
            times: vec![0.5, 1.0, 2.5, 4.0],
            values: vec![1.25, 2.5, 6.25, 10.0],
        };
        let est = estimate_lambda0(&curve).unwrap();
        assert!((est.lambda0 - 2.5).abs() < 1e-15);
        assert!(est.std_error < 1e-12);
        let flat = BreslowCurve { times: vec![1.0, 1.0], values: vec![1.0, 2.0] };
        assert!(matches!(estimate_lambda0(&flat), Err(RemError::DegenerateRegression(_))));
    }

    #[test]
    fn log_two_shift_halves() {
        let seq = simulate_tau_leap(&IntensitySpec::homogeneous(1.0, RiskPolicy::NoSelfLoops), &CovariateCatalog::new(), 4, &TauLeapConfig::new(200, 3)).unwrap();
        let base = CompiledIntensity::new(0.0, Vec::new(), RiskPolicy::NoSelfLoops);
        let doubled = CompiledIntensity::new(2f64.ln(), Vec::new(), RiskPolicy::NoSelfLoops);
        let a = breslow_cumulative(&seq, &base, &CovariateCatalog::new()).unwrap();
        let b = breslow_cumulative(&seq, &doubled, &CovariateCatalog::new()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x / 2.0 - y).abs() <= 1e-12 * x);
        }
        assert!(a.values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn homogeneous_slope_recovers_rate() {
        let seq = simulate_tau_leap(&IntensitySpec::homogeneous(2.0, RiskPolicy::NoSelfLoops), &CovariateCatalog::new(), 5, &TauLeapConfig::new(5000, 11)).unwrap();
        let model = CompiledIntensity::new(0.0, Vec::new(), RiskPolicy::NoSelfLoops);
        let est = estimate_lambda0(&breslow_cumulative(&seq, &model, &CovariateCatalog::new()).unwrap()).unwrap();
        assert!((est.lambda0 / 2.0 - 1.0).abs() < 0.05, "{est:?}");
    }
}
