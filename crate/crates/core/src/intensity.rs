//! Intensity specifications λ_sr(t) = Y_sr(t)·λ₀·exp{Σ f_l(x_sr(t)) + g₀(t) + Σ g_h(x_h(t))}.

use std::fmt;
use std::sync::Arc;

use crate::covariates::{CovariateCatalog, CovariateKind, CovariateRef, TimeFunction};
use crate::error::{RemError, Result};
use crate::event::{Dyad, HistoryIndex, NodeId};

pub type RiskIndicator = Arc<dyn Fn(Dyad, f64) -> bool + Send + Sync>;

/// Which dyads are at risk, Y_sr(t).
#[derive(Clone, Default)]
pub enum RiskPolicy {
    #[default]
    NoSelfLoops,
    WithSelfLoops,
    /// Arbitrary indicator over all ordered pairs (self-loops included).
    Custom(RiskIndicator),
}

impl fmt::Debug for RiskPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoSelfLoops => f.write_str("NoSelfLoops"),
            Self::WithSelfLoops => f.write_str("WithSelfLoops"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl RiskPolicy {
    pub fn at_risk(&self, dyad: Dyad, t: f64) -> bool {
        match self {
            Self::NoSelfLoops => !dyad.is_loop(),
            Self::WithSelfLoops => true,
            Self::Custom(ind) => ind(dyad, t),
        }
    }

    /// Membership does not depend on time.
    pub fn is_static(&self) -> bool {
        !matches!(self, Self::Custom(_))
    }

    /// Dyads that can ever be at risk, in dense-index order.
    pub fn candidate_dyads(&self, node_count: usize) -> Vec<Dyad> {
        let p = node_count as NodeId;
        let mut out = Vec::with_capacity(node_count * node_count);
        for s in 0..p {
            for r in 0..p {
                let d = Dyad::new(s, r);
                if matches!(self, Self::NoSelfLoops) && d.is_loop() {
                    continue;
                }
                out.push(d);
            }
        }
        out
    }
}

/// Generating (or fitted) intensity.
#[derive(Clone)]
pub struct IntensitySpec {
    pub lambda0: f64,
    /// (covariate reference, coefficient)
    pub linear_terms: Vec<(String, f64)>,
    /// (covariate reference, effect function)
    pub smooth_terms: Vec<(String, TimeFunction)>,
    /// g₀(t).
    pub global_time_effect: TimeFunction,
    pub risk_policy: RiskPolicy,
}

impl fmt::Debug for IntensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntensitySpec")
            .field("lambda0", &self.lambda0)
            .field("linear_terms", &self.linear_terms)
            .field("smooth_terms", &self.smooth_terms.iter().map(|(n, _)| n).collect::<Vec<_>>())
            .field("risk_policy", &self.risk_policy)
            .finish()
    }
}

impl IntensitySpec {
    /// λ₀ only, g₀ ≡ 0, no covariates.
    pub fn homogeneous(lambda0: f64, risk_policy: RiskPolicy) -> Self {
        Self {
            lambda0,
            linear_terms: Vec::new(),
            smooth_terms: Vec::new(),
            global_time_effect: Arc::new(|_| 0.0),
            risk_policy,
        }
    }

    pub fn with_linear(mut self, covariate: &str, coefficient: f64) -> Self {
        self.linear_terms.push((covariate.to_string(), coefficient));
        self
    }

    pub fn with_smooth(mut self, covariate: &str, effect: TimeFunction) -> Self {
        self.smooth_terms.push((covariate.to_string(), effect));
        self
    }

    pub fn with_time_effect(mut self, g0: TimeFunction) -> Self {
        self.global_time_effect = g0;
        self
    }

    pub fn compile(&self, catalog: &CovariateCatalog) -> Result<CompiledIntensity> {
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(RemError::Parameter(format!("lambda0 must be positive, got {}", self.lambda0)));
        }
        let mut terms = Vec::new();
        for (name, beta) in &self.linear_terms {
            let cref: CovariateRef = name.parse()?;
            catalog.resolve(&cref)?;
            let beta = *beta;
            terms.push(CompiledTerm {
                name: name.clone(),
                covariate: cref,
                effect: Arc::new(move |x| beta * x),
            });
        }
        for (name, f) in &self.smooth_terms {
            let cref: CovariateRef = name.parse()?;
            catalog.resolve(&cref)?;
            terms.push(CompiledTerm {
                name: name.clone(),
                covariate: cref,
                effect: f.clone(),
            });
        }
        terms.push(CompiledTerm {
            name: "g0".into(),
            covariate: CovariateRef::Time,
            effect: self.global_time_effect.clone(),
        });
        let mut compiled = CompiledIntensity::new(self.lambda0.ln(), terms, self.risk_policy.clone());
        compiled.lambda0 = self.lambda0;
        Ok(compiled)
    }
}

#[derive(Clone)]
pub struct CompiledTerm {
    pub name: String,
    pub covariate: CovariateRef,
    pub effect: TimeFunction,
}

/// Intensity with covariates resolved and terms in canonical order, so that
/// evaluation does not depend on the order terms were declared in.
#[derive(Clone)]
pub struct CompiledIntensity {
    pub log_lambda0: f64,
    lambda0: f64,
    terms: Vec<CompiledTerm>,
    pub risk_policy: RiskPolicy,
    /// Undefined covariates contribute 0 instead of failing.
    pub missing_as_zero: bool,
}

impl CompiledIntensity {
    pub fn new(log_lambda0: f64, mut terms: Vec<CompiledTerm>, risk_policy: RiskPolicy) -> Self {
        terms.sort_by(|a, b| a.covariate.cmp(&b.covariate).then_with(|| a.name.cmp(&b.name)));
        Self {
            log_lambda0,
            lambda0: log_lambda0.exp(),
            terms,
            risk_policy,
            missing_as_zero: false,
        }
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn terms(&self) -> &[CompiledTerm] {
        &self.terms
    }

    pub fn terms_of_kind(&self, kind: CovariateKind) -> impl Iterator<Item = &CompiledTerm> {
        self.terms.iter().filter(move |t| t.covariate.kind() == kind)
    }

    fn term_value(
        &self,
        term: &CompiledTerm,
        catalog: &CovariateCatalog,
        dyad: Dyad,
        t: f64,
        history: &HistoryIndex,
    ) -> Result<f64> {
        let value = catalog.value(&term.covariate, dyad, t, history);
        if value.is_none() && self.missing_as_zero {
            return Ok(0.0);
        }
        let x = value.ok_or_else(|| RemError::Numeric {
            term: term.name.clone(),
            detail: format!("covariate {} undefined for {dyad} at t={t}", term.covariate),
        })?;
        let v = (term.effect)(x);
        if !v.is_finite() {
            return Err(RemError::Numeric {
                term: term.name.clone(),
                detail: format!("non-finite contribution {v} at x={x}, t={t}"),
            });
        }
        Ok(v)
    }

    /// Sum of the contributions of one covariate kind.
    pub fn partial_eta(
        &self,
        kind: CovariateKind,
        catalog: &CovariateCatalog,
        dyad: Dyad,
        t: f64,
        history: &HistoryIndex,
    ) -> Result<f64> {
        let mut eta = 0.0;
        for term in self.terms_of_kind(kind) {
            eta += self.term_value(term, catalog, dyad, t, history)?;
        }
        Ok(eta)
    }

    /// Log-intensity without the at-risk indicator.
    pub fn eta(&self, catalog: &CovariateCatalog, dyad: Dyad, t: f64, history: &HistoryIndex) -> Result<f64> {
        Ok(self.log_lambda0 + self.eta_terms(catalog, dyad, t, history)?)
    }

    /// Covariate part of the log-intensity (excludes log λ₀).
    pub fn eta_terms(&self, catalog: &CovariateCatalog, dyad: Dyad, t: f64, history: &HistoryIndex) -> Result<f64> {
        let mut eta = 0.0;
        for term in &self.terms {
            eta += self.term_value(term, catalog, dyad, t, history)?;
        }
        Ok(eta)
    }

    pub fn intensity(&self, catalog: &CovariateCatalog, dyad: Dyad, t: f64, history: &HistoryIndex) -> Result<f64> {
        if !self.risk_policy.at_risk(dyad, t) {
            return Ok(0.0);
        }
        let rate = self.lambda0 * self.eta_terms(catalog, dyad, t, history)?.exp();
        if !rate.is_finite() {
            return Err(RemError::Numeric {
                term: "exponent".into(),
                detail: format!("intensity overflow for {dyad} at t={t}"),
            });
        }
        Ok(rate)
    }
}

/// λ_sr(t) given history strictly before `t`.
pub fn eval_intensity(
    spec: &IntensitySpec,
    catalog: &CovariateCatalog,
    dyad: Dyad,
    t: f64,
    history: &HistoryIndex,
) -> Result<f64> {
    spec.compile(catalog)?.intensity(catalog, dyad, t, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::{GlobalSeries, StepFunction};
    use crate::endostats::EndogenousStat;

    fn scenario_catalog() -> CovariateCatalog {
        CovariateCatalog::new()
            .with_node_attr("x", vec![0.0, 5.0, 3.0])
            .with_abs_difference("xd", "x")
            .unwrap()
            .with_endogenous("rep", EndogenousStat::RepetitionIndicator)
            .with_global("wave", GlobalSeries::Step(StepFunction::constant(1.0)))
    }

    fn scenario_spec() -> IntensitySpec {
        IntensitySpec::homogeneous(1.0, RiskPolicy::NoSelfLoops)
            .with_time_effect(Arc::new(|t| t))
            .with_linear("sender:x", 0.5)
            .with_linear("dyad:xd", -1.0)
            .with_linear("endo:rep", 1.5)
            .with_linear("global:wave", -0.7)
    }

    #[test]
    fn unit_rate_at_time_zero() {
        let spec = IntensitySpec::homogeneous(1.0, RiskPolicy::NoSelfLoops).with_time_effect(Arc::new(|t| t));
        let v = eval_intensity(&spec, &CovariateCatalog::new(), Dyad::new(1, 2), 0.0, &HistoryIndex::new()).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn hand_evaluated_exponent() {
        // x_s = 5, x_sr = |5 - 3| = 2, rep = 0, wave = 1, t = 0.1
        let v = eval_intensity(&scenario_spec(), &scenario_catalog(), Dyad::new(1, 2), 0.1, &HistoryIndex::new()).unwrap();
        let expected = (0.1f64 + 2.5 - 2.0 + 0.0 - 0.7).exp();
        assert!((v - expected).abs() < 1e-14 * expected, "{v} vs {expected}");
    }

    #[test]
    fn self_loops_are_not_at_risk() {
        let v = eval_intensity(&scenario_spec(), &scenario_catalog(), Dyad::new(2, 2), 0.3, &HistoryIndex::new()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn unknown_covariate_is_config_error() {
        let spec = scenario_spec().with_linear("global:missing", 1.0);
        let err = eval_intensity(&spec, &scenario_catalog(), Dyad::new(1, 2), 0.1, &HistoryIndex::new()).unwrap_err();
        assert!(matches!(err, RemError::Config(_)));
    }

    #[test]
    fn non_finite_exponent_names_the_term() {
        let spec = scenario_spec().with_smooth("sender:x", Arc::new(|x| (x - 5.0).ln()));
        let err = eval_intensity(&spec, &scenario_catalog(), Dyad::new(1, 2), 0.1, &HistoryIndex::new()).unwrap_err();
        match err {
            RemError::Numeric { term, .. } => assert_eq!(term, "sender:x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn term_order_does_not_matter() {
        let mut rev = scenario_spec();
        rev.linear_terms.reverse();
        let cat = scenario_catalog();
        for t in [0.05, 0.4, 1.3] {
            let a = eval_intensity(&scenario_spec(), &cat, Dyad::new(0, 2), t, &HistoryIndex::new()).unwrap();
            let b = eval_intensity(&rev, &cat, Dyad::new(0, 2), t, &HistoryIndex::new()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lambda0_scales_exactly() {
        let cat = scenario_catalog();
        let base = scenario_spec();
        let mut scaled = scenario_spec();
        scaled.lambda0 = 3.7;
        let a = eval_intensity(&base, &cat, Dyad::new(1, 0), 0.7, &HistoryIndex::new()).unwrap();
        let b = eval_intensity(&scaled, &cat, Dyad::new(1, 0), 0.7, &HistoryIndex::new()).unwrap();
        assert!((b - 3.7 * a).abs() <= 2e-16 * b);
    }
}
