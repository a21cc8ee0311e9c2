//! Generating models of the simulation experiments.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateCatalog, GlobalSeries, SquareWave};
use crate::design::TermSpec;
use crate::endostats::EndogenousStat;
use crate::error::{RemError, Result};
use crate::event::EventSequence;
use crate::intensity::{IntensitySpec, RiskPolicy};
use crate::rng::{stream_rng, streams};
use crate::simulator::{simulate_tau_leap, TauLeapConfig};

/// True coefficients of the covariate scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioCoefficients {
    pub sender: f64,
    pub dyadic: f64,
    pub repetition: f64,
    pub global: f64,
}

impl Default for ScenarioCoefficients {
    fn default() -> Self {
        Self {
            sender: 0.5,
            dyadic: -1.0,
            repetition: 1.5,
            global: -0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateScenario {
    pub node_count: usize,
    pub events: usize,
    pub lambda0: f64,
    pub coefficients: ScenarioCoefficients,
    /// Mean and standard deviation of the sender attribute.
    pub sender_mean: f64,
    pub sender_sd: f64,
    /// Wave period as a fraction of a pilot estimate of the horizon.
    pub wave_period_fraction: f64,
    pub wave_low: f64,
    pub wave_high: f64,
}

impl Default for CovariateScenario {
    fn default() -> Self {
        Self {
            node_count: 15,
            events: 3000,
            lambda0: 1.0,
            coefficients: ScenarioCoefficients::default(),
            sender_mean: 5.0,
            sender_sd: 1.0,
            wave_period_fraction: 0.1,
            wave_low: 0.0,
            wave_high: 1.0,
        }
    }
}

/// One realized instance: covariates, wave and the intensity that generated it.
#[derive(Clone)]
pub struct ScenarioInstance {
    pub catalog: CovariateCatalog,
    pub spec: IntensitySpec,
    pub wave: SquareWave,
    pub sequence: EventSequence,
}

impl CovariateScenario {
    /// g₀(t) = t.
    pub fn true_time_effect(t: f64) -> f64 {
        t
    }

    fn base_catalog(&self, seed: u64) -> Result<CovariateCatalog> {
        let normal = Normal::new(self.sender_mean, self.sender_sd).map_err(|e| RemError::Parameter(e.to_string()))?;
        let mut rng = stream_rng(seed, streams::COVARIATES);
        let x: Vec<f64> = (0..self.node_count).map(|_| normal.sample(&mut rng)).collect();
        CovariateCatalog::new()
            .with_node_attr("x", x)
            .with_endogenous("rep", EndogenousStat::RepetitionIndicator)
            .with_abs_difference("absdiff", "x")
    }

    fn spec(&self, with_wave: bool) -> IntensitySpec {
        let c = self.coefficients;
        let mut spec = IntensitySpec::homogeneous(self.lambda0, RiskPolicy::NoSelfLoops)
            .with_time_effect(Arc::new(Self::true_time_effect))
            .with_linear("sender:x", c.sender)
            .with_linear("dyad:absdiff", c.dyadic)
            .with_linear("endo:rep", c.repetition);
        if with_wave {
            spec = spec.with_linear("global:wave", c.global);
        }
        spec
    }

    /// Simulates one instance. The wave period is fixed from a pilot run of
    /// the same model without the wave, on its own stream.
    pub fn realize(&self, seed: u64) -> Result<ScenarioInstance> {
        if self.node_count < 2 {
            return Err(RemError::Parameter("the scenario needs at least two nodes".into()));
        }
        let base = self.base_catalog(seed)?;
        let pilot_cfg = TauLeapConfig {
            stream: streams::PILOT,
            ..TauLeapConfig::new(self.events, seed)
        };
        let pilot = simulate_tau_leap(&self.spec(false), &base, self.node_count, &pilot_cfg)?;
        let wave = SquareWave {
            period: self.wave_period_fraction * pilot.horizon(),
            low: self.wave_low,
            high: self.wave_high,
            duty: 0.5,
        };
        let catalog = base.with_global("wave", GlobalSeries::SquareWave(wave));
        let spec = self.spec(true);
        let sequence = simulate_tau_leap(&spec, &catalog, self.node_count, &TauLeapConfig::new(self.events, seed))?;
        Ok(ScenarioInstance {
            catalog,
            spec,
            wave,
            sequence,
        })
    }

    /// Terms fitted by the shifted partial likelihood.
    pub fn fitted_terms() -> Vec<TermSpec> {
        vec![
            TermSpec::smooth("g0", "time").expect("valid").with_rank(10),
            TermSpec::linear("beta1", "sender:x").expect("valid"),
            TermSpec::linear("beta2", "dyad:absdiff").expect("valid"),
            TermSpec::linear("beta_rep", "endo:rep").expect("valid"),
            TermSpec::linear("beta0", "global:wave").expect("valid"),
        ]
    }

    pub fn truth(&self) -> [(&'static str, f64); 4] {
        let c = self.coefficients;
        [("beta1", c.sender), ("beta2", c.dyadic), ("beta_rep", c.repetition), ("beta0", c.global)]
    }
}

/// Constant rate λ₀ on every non-loop pair.
pub fn simulate_homogeneous(node_count: usize, lambda0: f64, events: usize, seed: u64) -> Result<EventSequence> {
    simulate_tau_leap(
        &IntensitySpec::homogeneous(lambda0, RiskPolicy::NoSelfLoops),
        &CovariateCatalog::new(),
        node_count,
        &TauLeapConfig::new(events, seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realizes_requested_event_count() {
        let sc = CovariateScenario {
            node_count: 6,
            events: 400,
            ..CovariateScenario::default()
        };
        let inst = sc.realize(3).unwrap();
        assert_eq!(inst.sequence.len(), 400);
        assert!(inst.wave.period > 0.0);
        assert!(inst.sequence.events().iter().all(|e| !e.dyad.is_loop()));
        let again = sc.realize(3).unwrap();
        assert_eq!(again.sequence.events(), inst.sequence.events());
    }
}
