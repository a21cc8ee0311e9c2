//! Incrementally maintained dyad rates for simulation and risk-set sums.
//!
//! The log-intensity splits into a global part (time only), a static part
//! (dyad only, cached) and an endogenous part (history). Only dyads whose
//! history changed, or whose endogenous value drifts with time, are refreshed.

use crate::covariates::{CovariateCatalog, CovariateKind, CovariateRef};
use crate::endostats::EndogenousStat;
use crate::error::{RemError, Result};
use crate::event::{next_time_after, Dyad, HistoryIndex};
use crate::intensity::CompiledIntensity;

const RESUM_EVERY: usize = 4096;
const ABSENT: u32 = u32::MAX;

pub struct RateEngine<'a> {
    model: &'a CompiledIntensity,
    catalog: &'a CovariateCatalog,
    node_count: usize,
    dyads: Vec<Dyad>,
    position: Vec<u32>,
    static_eta: Vec<f64>,
    endo_eta: Vec<f64>,
    weight: Vec<f64>,
    weight_sum: f64,
    endo_stats: Vec<EndogenousStat>,
    drifting: bool,
    active: Vec<usize>,
    is_active: Vec<bool>,
    updates: usize,
}

impl<'a> RateEngine<'a> {
    pub fn new(model: &'a CompiledIntensity, catalog: &'a CovariateCatalog, node_count: usize) -> Result<Self> {
        let dyads = model.risk_policy.candidate_dyads(node_count);
        if dyads.is_empty() {
            return Err(RemError::DegenerateProcess("no dyad can ever be at risk".into()));
        }
        let mut position = vec![ABSENT; node_count * node_count];
        for (k, d) in dyads.iter().enumerate() {
            position[d.dense_index(node_count)] = k as u32;
        }
        let empty = HistoryIndex::new();
        let mut static_eta = Vec::with_capacity(dyads.len());
        for &d in &dyads {
            match model.partial_eta(CovariateKind::Static, catalog, d, 0.0, &empty) {
                Ok(v) => static_eta.push(v),
                // Custom policies enumerate every pair; pairs without covariate
                // values are excluded from the risk set instead of failing.
                Err(_) if !model.risk_policy.is_static() => static_eta.push(f64::NAN),
                Err(e) => return Err(e),
            }
        }
        let empty_endo = model.partial_eta(CovariateKind::Endogenous, catalog, dyads[0], 0.0, &empty)?;
        let endo_stats: Vec<EndogenousStat> = model
            .terms_of_kind(CovariateKind::Endogenous)
            .map(|t| match &t.covariate {
                CovariateRef::Endogenous(name) => *catalog.endogenous(name).expect("resolved at compile"),
                _ => unreachable!(),
            })
            .collect();
        let drifting = endo_stats.iter().any(EndogenousStat::varies_between_events);
        let n = dyads.len();
        let mut engine = Self {
            model,
            catalog,
            node_count,
            dyads,
            position,
            static_eta,
            endo_eta: vec![empty_endo; n],
            weight: vec![0.0; n],
            weight_sum: 0.0,
            endo_stats,
            drifting,
            active: Vec::new(),
            is_active: vec![false; n],
            updates: 0,
        };
        engine.recompute_all_weights(0.0);
        Ok(engine)
    }

    pub fn dyads(&self) -> &[Dyad] {
        &self.dyads
    }

    fn position_of(&self, dyad: Dyad) -> Option<usize> {
        if dyad.sender as usize >= self.node_count || dyad.receiver as usize >= self.node_count {
            return None;
        }
        let p = self.position[dyad.dense_index(self.node_count)];
        (p != ABSENT).then_some(p as usize)
    }

    fn weight_at(&self, k: usize, t: f64) -> f64 {
        if self.static_eta[k].is_nan() {
            return 0.0;
        }
        if self.model.risk_policy.is_static() || self.model.risk_policy.at_risk(self.dyads[k], t) {
            (self.static_eta[k] + self.endo_eta[k]).exp()
        } else {
            0.0
        }
    }

    fn recompute_all_weights(&mut self, t: f64) {
        let mut sum = 0.0;
        for k in 0..self.dyads.len() {
            let w = self.weight_at(k, t);
            self.weight[k] = w;
            sum += w;
        }
        self.weight_sum = sum;
        self.updates = 0;
    }

    fn set_weight(&mut self, k: usize, w: f64) {
        self.weight_sum += w - self.weight[k];
        self.weight[k] = w;
        self.updates += 1;
    }

    /// Brings the cached rates to time `t`; `history` must hold exactly the
    /// events strictly before `t` that have been passed to [`Self::on_event`].
    pub fn refresh(&mut self, t: f64, history: &HistoryIndex) -> Result<()> {
        if self.drifting {
            for i in 0..self.active.len() {
                let k = self.active[i];
                self.endo_eta[k] =
                    self.model
                        .partial_eta(CovariateKind::Endogenous, self.catalog, self.dyads[k], t, history)?;
            }
        }
        if !self.model.risk_policy.is_static() || self.updates >= RESUM_EVERY {
            self.recompute_all_weights(t);
        } else if self.drifting {
            for i in 0..self.active.len() {
                let k = self.active[i];
                let w = self.weight_at(k, t);
                self.set_weight(k, w);
            }
        }
        Ok(())
    }

    /// Registers an event already appended to `history`.
    pub fn on_event(&mut self, dyad: Dyad, time: f64, history: &HistoryIndex) -> Result<()> {
        let just_after = next_time_after(time);
        for i in 0..self.endo_stats.len() {
            for target in self.endo_stats[i].affected_by(dyad).into_iter().flatten() {
                let Some(k) = self.position_of(target) else { continue };
                if !self.is_active[k] {
                    self.is_active[k] = true;
                    self.active.push(k);
                }
                self.endo_eta[k] =
                    self.model
                        .partial_eta(CovariateKind::Endogenous, self.catalog, target, just_after, history)?;
                let w = self.weight_at(k, just_after);
                self.set_weight(k, w);
            }
        }
        Ok(())
    }

    /// log λ₀ + global contributions at `t`.
    pub fn global_eta(&self, t: f64) -> Result<f64> {
        Ok(self.model.log_lambda0
            + self
                .model
                .partial_eta(CovariateKind::Global, self.catalog, self.dyads[0], t, &HistoryIndex::new())?)
    }

    /// Σ over at-risk dyads of exp(static + endogenous).
    pub fn weight_sum(&self) -> f64 {
        self.weight_sum.max(0.0)
    }

    /// Total rate Σ_sr λ_sr(t) with cached dyad weights.
    pub fn total_rate(&self, t: f64) -> Result<f64> {
        let total = self.global_eta(t)?.exp() * self.weight_sum();
        if !total.is_finite() {
            return Err(RemError::Numeric {
                term: "total rate".into(),
                detail: format!("non-finite total rate at t={t}"),
            });
        }
        Ok(total)
    }

    /// Dyad drawn with probability proportional to its cached weight; `u` in [0,1).
    pub fn sample(&self, u: f64) -> Dyad {
        let target = u * self.weight.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &w) in self.weight.iter().enumerate() {
            if w > 0.0 {
                last_positive = k;
                acc += w;
                if acc > target {
                    return self.dyads[k];
                }
            }
        }
        self.dyads[last_positive]
    }

    pub fn weight(&self, dyad: Dyad) -> f64 {
        self.position_of(dyad).map_or(0.0, |k| self.weight[k])
    }
}
