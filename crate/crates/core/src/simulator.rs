//! Event generation: τ-leaping for general intensities and exact inversion for
//! the Weibull benchmark process.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::covariates::CovariateCatalog;
use crate::error::{RemError, Result};
use crate::event::{next_time_after, Dyad, Event, EventSequence, HistoryIndex};
use crate::intensity::IntensitySpec;
use crate::rates::RateEngine;
use crate::rng::stream_rng;

/// Relative change of the global rate factor allowed across one leap.
const MAX_LEAP_CHANGE: f64 = 0.10;
const MAX_ZERO_RATE_LEAPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauLeapConfig {
    /// Leap width; `None` picks one from the initial rate and adapts it.
    pub tau: Option<f64>,
    pub target_events: usize,
    pub rng_seed: u64,
    pub stream: u64,
    pub max_time: Option<f64>,
}

impl TauLeapConfig {
    pub fn new(target_events: usize, rng_seed: u64) -> Self {
        Self {
            tau: None,
            target_events,
            rng_seed,
            stream: crate::rng::streams::EVENTS,
            max_time: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.target_events == 0 {
            return Err(RemError::Parameter("target_events must be at least 1".into()));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(RemError::Parameter(format!("tau must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

/// Simulates until `cfg.target_events` events have occurred.
///
/// Rates are frozen at the start of each leap and re-anchored after every
/// accepted event, so endogenous covariates jump exactly at events. Leaps also
/// end at switch points of piecewise-constant global series.
pub fn simulate_tau_leap(
    spec: &IntensitySpec,
    catalog: &CovariateCatalog,
    node_count: usize,
    cfg: &TauLeapConfig,
) -> Result<EventSequence> {
    cfg.validate()?;
    let compiled = spec.compile(catalog)?;
    let mut engine = RateEngine::new(&compiled, catalog, node_count)?;
    let mut rng = stream_rng(cfg.rng_seed, cfg.stream);
    let mut history = HistoryIndex::new();
    let mut events = Vec::with_capacity(cfg.target_events);

    let mut t = 0.0;
    let initial = engine.total_rate(0.0)?;
    let adaptive = cfg.tau.is_none();
    let mut tau = cfg.tau.unwrap_or_else(|| {
        if initial > 0.0 {
            // Rough horizon guess n / Λ(0); ten leaps across it to start with.
            cfg.target_events as f64 / initial / 10.0
        } else {
            1.0
        }
    });
    let mut zero_leaps = 0;

    while events.len() < cfg.target_events {
        if let Some(max_time) = cfg.max_time {
            if t >= max_time {
                return Err(RemError::Truncated {
                    obtained: events.len(),
                    target: cfg.target_events,
                    max_time,
                });
            }
        }
        let g_now = engine.global_eta(t)?;
        let mut leap_end = t + tau;
        if let Some(b) = catalog.next_global_change_after(t) {
            leap_end = leap_end.min(b);
        }
        if let Some(max_time) = cfg.max_time {
            leap_end = leap_end.min(max_time);
        }
        if adaptive {
            let change = (engine.global_eta(leap_end)? - g_now).exp_m1().abs();
            if change > MAX_LEAP_CHANGE && tau > 1e-12 * (1.0 + t) {
                tau *= 0.5;
                continue;
            }
            if change < MAX_LEAP_CHANGE / 4.0 {
                tau = (tau * 2.0).min(1e12);
            }
        }
        let rate = g_now.exp() * engine.weight_sum();
        if !rate.is_finite() {
            return Err(RemError::Numeric {
                term: "total rate".into(),
                detail: format!("non-finite total rate at t={t}"),
            });
        }
        if rate <= 0.0 {
            zero_leaps += 1;
            if zero_leaps > MAX_ZERO_RATE_LEAPS {
                return Err(RemError::DegenerateProcess(format!(
                    "total rate stayed zero up to t={t} after {} events",
                    events.len()
                )));
            }
            t = leap_end;
            engine.refresh(t, &history)?;
            continue;
        }
        zero_leaps = 0;
        let wait: f64 = Exp1.sample(&mut rng);
        let wait = wait / rate;
        if t + wait > leap_end {
            t = leap_end;
            engine.refresh(t, &history)?;
            continue;
        }
        let mut t_event = t + wait;
        if t_event <= t {
            t_event = next_time_after(t);
        }
        let dyad = engine.sample(rng.random::<f64>());
        let event = Event::new(t_event, dyad);
        history.push(event)?;
        events.push(event);
        engine.on_event(dyad, t_event, &history)?;
        t = t_event;
        engine.refresh(next_time_after(t), &history)?;
    }

    let horizon = events.last().map_or(1.0, |e| e.time);
    Ok(EventSequence::from_index(events, history, node_count, horizon))
}

/// `n` events where every ordered pair (self-loops included) has the Weibull
/// hazard κ·t^(κ−1). Times come from the time change Λ(t) = p²·t^κ applied to
/// unit-rate Poisson arrivals; dyads are uniform.
pub fn simulate_weibull(node_count: usize, n: usize, shape: f64, seed: u64) -> Result<EventSequence> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(RemError::Parameter(format!("Weibull shape must be positive, got {shape}")));
    }
    if node_count == 0 || n == 0 {
        return Err(RemError::Parameter("need at least one node and one event".into()));
    }
    let mut rng = stream_rng(seed, crate::rng::streams::EVENTS);
    let dyad_count = (node_count * node_count) as f64;
    let mut arrivals = 0.0;
    let mut prev = 0.0;
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let e: f64 = Exp1.sample(&mut rng);
        arrivals += e;
        let mut t = (arrivals / dyad_count).powf(1.0 / shape);
        if t <= prev {
            t = next_time_after(prev);
        }
        prev = t;
        let k = rng.random_range(0..node_count * node_count);
        events.push(Event::new(t, Dyad::from_dense_index(k, node_count)));
    }
    let horizon = prev;
    EventSequence::new(events, node_count, horizon)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::covariates::DyadicAttr;
    use crate::endostats::{DecayKind, DecayStat, EndogenousStat};
    use crate::intensity::RiskPolicy;

    fn one_dyad(rate: f64) -> (IntensitySpec, CovariateCatalog) {
        let only = Dyad::new(0, 1);
        let spec = IntensitySpec::homogeneous(rate, RiskPolicy::Custom(Arc::new(move |d, _| d == only)));
        (spec, CovariateCatalog::new())
    }

    #[test]
    fn constant_rate_mean_interarrival() {
        let (spec, cat) = one_dyad(2.0);
        let n = 10_000;
        let seq = simulate_tau_leap(&spec, &cat, 2, &TauLeapConfig::new(n, 11)).unwrap();
        assert_eq!(seq.len(), n);
        let mean = seq.last_time().unwrap() / n as f64;
        let se = 0.5 / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean inter-arrival {mean}");
        assert!(seq.events().iter().all(|e| e.dyad == Dyad::new(0, 1)));
    }

    #[test]
    fn multinomial_dyad_shares() {
        let allowed = |d: Dyad| !d.is_loop();
        let spec = IntensitySpec::homogeneous(1.0, RiskPolicy::Custom(Arc::new(move |d, _| allowed(d))))
            .with_linear("dyad:logw", 1.0);
        let n = 10_000;
        let seq = simulate_tau_leap(&spec, &restricted_catalog(), 2, &TauLeapConfig::new(n, 5)).unwrap();
        let share = seq.events().iter().filter(|e| e.dyad == Dyad::new(1, 0)).count() as f64 / n as f64;
        let se = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((share - 0.75).abs() < 3.0 * se, "share {share}");
    }

    fn restricted_catalog() -> CovariateCatalog {
        // Dense table on 2 nodes; the self-loop cells are never at risk.
        let values = vec![f64::NAN, 0.0, 3f64.ln(), f64::NAN];
        CovariateCatalog::new().with_dyadic_attr("logw", DyadicAttr::Dense { node_count: 2, values })
    }

    #[test]
    fn determinism() {
        let (spec, cat) = one_dyad(1.5);
        let a = simulate_tau_leap(&spec, &cat, 2, &TauLeapConfig::new(200, 3)).unwrap();
        let b = simulate_tau_leap(&spec, &cat, 2, &TauLeapConfig::new(200, 3)).unwrap();
        assert_eq!(a.events(), b.events());
        let c = simulate_tau_leap(&spec, &cat, 2, &TauLeapConfig::new(200, 4)).unwrap();
        assert_ne!(a.events(), c.events());
    }

    #[test]
    fn truncation_reports_events_obtained() {
        let (spec, cat) = one_dyad(1.0);
        let cfg = TauLeapConfig { max_time: Some(5.0), ..TauLeapConfig::new(1_000, 1) };
        match simulate_tau_leap(&spec, &cat, 2, &cfg) {
            Err(RemError::Truncated { obtained, target, .. }) => {
                assert!(obtained > 0 && obtained < 50);
                assert_eq!(target, 1_000);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn zero_rate_is_degenerate() {
        let spec = IntensitySpec::homogeneous(1.0, RiskPolicy::Custom(Arc::new(|_, _| false)));
        let err = simulate_tau_leap(&spec, &CovariateCatalog::new(), 2, &TauLeapConfig::new(10, 1)).unwrap_err();
        assert!(matches!(err, RemError::DegenerateProcess(_)));
    }

    #[test]
    fn repetition_feedback_raises_immediate_repeats() {
        // A fast-decaying repetition memory: once every dyad has occurred an
        // indicator is constant, the decay keeps favouring recent dyads.
        let stat = EndogenousStat::Decay(DecayStat { kind: DecayKind::Repetition, half_scale: 0.01 });
        let cat = CovariateCatalog::new().with_endogenous("rep", stat);
        let base = IntensitySpec::homogeneous(1.0, RiskPolicy::NoSelfLoops);
        let feedback = base.clone().with_linear("endo:rep", 3.0);
        let repeats = |spec: &IntensitySpec| {
            let seq = simulate_tau_leap(spec, &cat, 6, &TauLeapConfig::new(3_000, 9)).unwrap();
            let e = seq.events();
            e.windows(2).filter(|w| w[0].dyad == w[1].dyad).count() as f64 / (e.len() - 1) as f64
        };
        let none = repeats(&base.with_linear("endo:rep", 0.0));
        let some = repeats(&feedback);
        assert!(some > none, "feedback {some} vs none {none}");
    }

    #[test]
    fn weibull_shape_one_is_unit_poisson() {
        let seq = simulate_weibull(1, 20_000, 1.0, 2).unwrap();
        // Count in [0, t] has mean t: the n-th arrival is near n.
        let last = seq.last_time().unwrap();
        assert!((last - 20_000.0).abs() < 3.0 * (20_000f64).sqrt(), "{last}");
        assert!(seq.events().iter().all(|e| e.dyad == Dyad::new(0, 0)));
    }

    #[test]
    fn weibull_rejects_bad_shape() {
        assert!(matches!(simulate_weibull(5, 10, 0.0, 1), Err(RemError::Parameter(_))));
    }
}
