//! Shared instance generators, independent oracles and invariant checks for
//! the integration and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};

use remshift::covariates::DyadicAttr;
use remshift::endostats::EndogenousStat;
use remshift::fitter::{fit_degenerate_logistic, FitOptions, FitResult, SmoothingPolicy};
use remshift::timeshift::{draw_shifts, sample_case_control, shift_process, ShiftedCaseControlSet};
use remshift::{
    assemble_difference_design, CovariateCatalog, DesignOptions, DifferenceDesign, Dyad, Event, EventSequence,
    GlobalSeries, IntensitySpec, RiskPolicy, StepFunction, TauLeapConfig, TermSpec,
};

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-rate arrivals on uniformly drawn non-loop dyads.
pub fn random_sequence(seed: u64, nodes: usize, n: usize) -> EventSequence {
    let mut r = rng(seed);
    let mut t = 0.0;
    let mut events = Vec::with_capacity(n);
    for _ in 0..n {
        let e: f64 = Exp1.sample(&mut r);
        t += e;
        let s = r.random_range(0..nodes as u32);
        let mut d = r.random_range(0..nodes as u32 - 1);
        if d >= s {
            d += 1;
        }
        events.push(Event::new(t, Dyad::new(s, d)));
    }
    EventSequence::new(events, nodes, t).unwrap()
}

/// Raw covariate values of a tiny instance, kept outside the catalog so an
/// oracle can evaluate them by direct lookup.
#[derive(Debug, Clone)]
pub struct TinyCovariates {
    pub nodes: usize,
    pub sender: Vec<f64>,
    pub receiver: Vec<f64>,
    pub dyadic: Vec<f64>,
    pub stamps: Vec<f64>,
    pub levels: Vec<f64>,
}

impl TinyCovariates {
    pub fn draw(seed: u64, nodes: usize, horizon: f64) -> Self {
        let mut r = rng(seed ^ 0xC0FFEE);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let sender = (0..nodes).map(|_| normal.sample(&mut r)).collect();
        let receiver = (0..nodes).map(|_| normal.sample(&mut r)).collect();
        let dyadic = (0..nodes * nodes).map(|_| normal.sample(&mut r)).collect();
        let steps = 8;
        let stamps = (0..steps).map(|k| horizon * k as f64 / steps as f64).collect();
        let levels = (0..steps).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
        Self { nodes, sender, receiver, dyadic, stamps, levels }
    }

    pub fn catalog(&self) -> CovariateCatalog {
        CovariateCatalog::new()
            .with_node_attr("a", self.sender.clone())
            .with_node_attr("b", self.receiver.clone())
            .with_dyadic_attr("w", DyadicAttr::Dense { node_count: self.nodes, values: self.dyadic.clone() })
            .with_endogenous("rep", EndogenousStat::RepetitionIndicator)
            .with_global(
                "g",
                GlobalSeries::Step(StepFunction::new(self.stamps.clone(), self.levels.clone()).unwrap()),
            )
    }

    /// Left-continuous lookup by linear scan.
    pub fn global(&self, t: f64) -> f64 {
        let mut v = self.levels[0];
        for (s, l) in self.stamps.iter().zip(&self.levels) {
            if *s < t {
                v = *l;
            }
        }
        v
    }

    /// Covariate vector (a_s, b_r, w_sr, rep, g) by brute force over `events`.
    pub fn vector(&self, events: &[Event], dyad: Dyad, t: f64) -> [f64; 5] {
        let (s, r) = (dyad.sender as usize, dyad.receiver as usize);
        let rep = events.iter().any(|e| e.dyad == dyad && e.time < t);
        [
            self.sender[s],
            self.receiver[r],
            self.dyadic[s * self.nodes + r],
            if rep { 1.0 } else { 0.0 },
            self.global(t),
        ]
    }
}

pub fn tiny_terms() -> Vec<TermSpec> {
    vec![
        TermSpec::linear("a", "sender:a").unwrap(),
        TermSpec::linear("b", "receiver:b").unwrap(),
        TermSpec::linear("w", "dyad:w").unwrap(),
        TermSpec::linear("rep", "endo:rep").unwrap(),
        TermSpec::linear("g", "global:g").unwrap(),
    ]
}

pub fn shifted_sample(seq: &EventSequence, nu: f64, seed: u64) -> ShiftedCaseControlSet {
    let policy = RiskPolicy::NoSelfLoops;
    let shifts = draw_shifts(&policy.candidate_dyads(seq.node_count()), nu, seq.mean_event_time(), seed).unwrap();
    let shifted = shift_process(seq, &shifts).unwrap();
    sample_case_control(&shifted, &shifts, &policy, seed).unwrap()
}

pub fn unpenalized() -> SmoothingPolicy {
    SmoothingPolicy::Fixed { lambdas: Vec::new() }
}

pub fn fit_fixed(design: &DifferenceDesign, lambdas: Vec<f64>) -> FitResult {
    fit_degenerate_logistic(design, &SmoothingPolicy::Fixed { lambdas }, FitOptions::default()).unwrap()
}

/// Sampled partial log-likelihood Σ_k −log(1 + exp(η_c − η_e)).
pub fn sampled_log_pl(pairs: &[([f64; 5], [f64; 5])], theta: &[f64]) -> f64 {
    pairs
        .iter()
        .map(|(e, c)| {
            let d: f64 = (0..theta.len()).map(|j| theta[j] * (c[j] - e[j])).sum();
            -(d.exp().ln_1p())
        })
        .sum()
}

/// Newton ascent with central finite-difference derivatives.
pub fn maximize_fd(f: impl Fn(&[f64]) -> f64, dim: usize) -> Option<Vec<f64>> {
    let grad = |x: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|j| {
                let h = 1e-6 * (1.0 + x[j].abs());
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[j] += h;
                dn[j] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    };
    let mut x = vec![0.0; dim];
    for _ in 0..200 {
        let g = grad(&x);
        let mut hess = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for j in 0..dim {
            let h = 1e-4 * (1.0 + x[j].abs());
            let mut up = x.clone();
            let mut dn = x.clone();
            up[j] += h;
            dn[j] -= h;
            let (gu, gd) = (grad(&up), grad(&dn));
            for i in 0..dim {
                hess[(i, j)] = (gu[i] - gd[i]) / (2.0 * h);
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let step = (-hess).lu().solve(&nalgebra::DVector::from_vec(g.clone()))?;
        let mut scale = 1.0;
        let f0 = f(&x);
        let mut next;
        loop {
            next = x.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect::<Vec<_>>();
            if f(&next) >= f0 - 1e-12 || scale < 1e-8 {
                break;
            }
            scale *= 0.5;
        }
        let moved = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if moved < 1e-12 {
            return Some(x);
        }
    }
    Some(x)
}

/// Oracle outcome of one tiny instance: (library θ̂, oracle θ̂), or `None`
/// when the maximizer does not exist (separation) or a fit fails.
pub fn tiny_oracle_instance(seed: u64) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut r = rng(seed);
    let n = r.random_range(40..=100);
    let seq = random_sequence(seed, 3, n);
    let cov = TinyCovariates::draw(seed, 3, seq.horizon());
    let ccs = shifted_sample(&seq, 1.0, seed);
    let design =
        assemble_difference_design(&ccs, &cov.catalog(), seq.history(), &tiny_terms(), DesignOptions::default()).ok()?;
    let fit = fit_degenerate_logistic(&design, &unpenalized(), FitOptions::default()).ok()?;
    if !fit.converged || fit.separated || !fit.inestimable.is_empty() {
        return None;
    }
    let events = seq.events();
    let pairs: Vec<([f64; 5], [f64; 5])> = ccs
        .rows
        .iter()
        .map(|row| {
            (
                cov.vector(events, row.event_dyad(), row.event_time),
                cov.vector(events, row.control_dyad(), row.control_time),
            )
        })
        .collect();
    let oracle = maximize_fd(|th| sampled_log_pl(&pairs, th), 5)?;
    let lib: Vec<f64> = fit.coefficients.iter().copied().collect();
    if lib.iter().chain(&oracle).any(|v| !v.is_finite() || v.abs() > 10.0) {
        return None;
    }
    Some((lib, oracle))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- invariants -----------------------------------------------------------

/// Shifting keeps every event, per dyad, and each event yields either a row
/// or an uninformative drop.
pub fn check_count_preservation(seq: &EventSequence, nu: f64, seed: u64) -> Check {
    let policy = RiskPolicy::NoSelfLoops;
    let shifts = draw_shifts(&policy.candidate_dyads(seq.node_count()), nu, seq.mean_event_time(), seed)
        .map_err(|e| e.to_string())?;
    let shifted = shift_process(seq, &shifts).map_err(|e| e.to_string())?;
    if shifted.sequence.len() != seq.len() {
        return Err(format!("{} events became {}", seq.len(), shifted.sequence.len()));
    }
    for (d, times) in seq.history().dyads() {
        let after = shifted.sequence.history().times(*d).len();
        if after != times.len() {
            return Err(format!("dyad {d}: {} events became {after}", times.len()));
        }
    }
    let ccs = sample_case_control(&shifted, &shifts, &policy, seed).map_err(|e| e.to_string())?;
    if ccs.rows.len() + ccs.dropped_uninformative != seq.len() {
        return Err(format!(
            "{} rows + {} dropped != {} events",
            ccs.rows.len(),
            ccs.dropped_uninformative,
            seq.len()
        ));
    }
    Ok(())
}

pub fn swapped(ccs: &ShiftedCaseControlSet) -> ShiftedCaseControlSet {
    ShiftedCaseControlSet { rows: ccs.rows.iter().map(|r| r.swapped()).collect(), ..ccs.clone() }
}

/// Swapping event and control negates every design row exactly.
pub fn check_row_antisymmetry(
    ccs: &ShiftedCaseControlSet,
    catalog: &CovariateCatalog,
    seq: &EventSequence,
    terms: &[TermSpec],
) -> Check {
    let a = assemble_difference_design(ccs, catalog, seq.history(), terms, DesignOptions::default())
        .map_err(|e| e.to_string())?;
    let b = assemble_difference_design(&swapped(ccs), catalog, seq.history(), terms, DesignOptions::default())
        .map_err(|e| e.to_string())?;
    for (x, y) in a.x.iter().zip(b.x.iter()) {
        if *x != -*y {
            return Err(format!("entry {x} vs swapped {y}"));
        }
    }
    Ok(())
}

/// Fitting the negated design negates θ̂.
pub fn check_theta_antisymmetry(design: &DifferenceDesign, lambdas: Vec<f64>) -> Check {
    let a = fit_fixed(design, lambdas.clone());
    let neg = DifferenceDesign { x: -design.x.clone(), ..design.clone() };
    let b = fit_fixed(&neg, lambdas);
    if a.separated || b.separated {
        return Ok(());
    }
    let gap = a.coefficients.iter().zip(b.coefficients.iter()).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    let scale = a.coefficients.amax().max(1.0);
    if gap > 1e-8 * scale {
        return Err(format!("θ̂ + θ̂(swapped) has max {gap:e}"));
    }
    Ok(())
}

/// Multiplying λ₀ by `scale` (a power of two) rescales every event time and
/// leaves all estimates of time-invariant covariate effects unchanged.
pub fn check_lambda0_invariance(seed: u64, nodes: usize, n: usize, scale: f64) -> Check {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..nodes).map(|_| normal.sample(&mut r)).collect();
    let catalog = CovariateCatalog::new()
        .with_node_attr("x", x)
        .with_endogenous("rep", EndogenousStat::RepetitionIndicator)
        .with_abs_difference("absdiff", "x")
        .unwrap();
    let terms = vec![
        TermSpec::linear("beta1", "sender:x").unwrap(),
        TermSpec::linear("beta2", "dyad:absdiff").unwrap(),
        TermSpec::linear("beta_rep", "endo:rep").unwrap(),
    ];
    let estimate = |lambda0: f64| -> Result<Vec<f64>, String> {
        let spec = IntensitySpec::homogeneous(lambda0, RiskPolicy::NoSelfLoops)
            .with_linear("sender:x", 0.5)
            .with_linear("dyad:absdiff", -1.0)
            .with_linear("endo:rep", 1.0);
        let seq = remshift::simulate_tau_leap(&spec, &catalog, nodes, &TauLeapConfig::new(n, seed))
            .map_err(|e| e.to_string())?;
        let ccs = shifted_sample(&seq, 1.0, seed);
        let design = assemble_difference_design(&ccs, &catalog, seq.history(), &terms, DesignOptions::default())
            .map_err(|e| e.to_string())?;
        let fit = fit_degenerate_logistic(&design, &unpenalized(), FitOptions::default()).map_err(|e| e.to_string())?;
        Ok(fit.coefficients.iter().copied().collect())
    };
    let a = estimate(1.0)?;
    let b = estimate(scale)?;
    let gap = max_abs_diff(&a, &b);
    if gap > 1e-9 {
        return Err(format!("λ₀ ×{scale} moved estimates by {gap:e}: {a:?} vs {b:?}"));
    }
    Ok(())
}

/// Every smooth, evaluated over the values its basis was centered on (event
/// and control covariate values), averages to zero.
pub fn check_centering(
    fit: &FitResult,
    ccs: &ShiftedCaseControlSet,
    catalog: &CovariateCatalog,
    seq: &EventSequence,
) -> Check {
    for b in fit.blocks.iter().filter(|b| b.is_penalized()) {
        let mut values = Vec::with_capacity(2 * ccs.rows.len());
        for row in &ccs.rows {
            for (d, t) in [(row.event_dyad(), row.event_time), (row.control_dyad(), row.control_time)] {
                if let Some(v) = catalog.value(&b.covariate, d, t, seq.history()) {
                    values.push(v);
                }
            }
        }
        let mean = values.iter().map(|&v| fit.term_value(&b.name, v).unwrap()).sum::<f64>() / values.len() as f64;
        if mean.abs() > 1e-8 {
            return Err(format!("smooth `{}` has mean {mean:e} over its sample", b.name));
        }
    }
    Ok(())
}
