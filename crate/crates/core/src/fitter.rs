//! Degenerate logistic additive model: every response is 1, no intercept,
//! rows are basis differences. Fitted by penalized Newton/IRLS with
//! cross-validated smoothing selection.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::design::{DifferenceDesign, TermBlock};
use crate::error::{RemError, Result};
use crate::glm::{fit_glm, log_sigmoid, sigmoid, GlmFit, GlmOptions, Response};
use crate::rng::{stream_rng, streams};

/// Range below which a cross-validation profile counts as flat.
const FLAT_CRITERION: f64 = 1e-4;

/// Log-spaced grid `10^lo … 10^hi` with `count` points.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![10f64.powf(lo)];
    }
    (0..count)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SmoothingPolicy {
    /// One λ per penalized term, in term order.
    Fixed { lambdas: Vec<f64> },
    /// K-fold cross-validated mean predicted deviance over a grid, searched
    /// coordinate-wise when there are several smooths.
    CrossValidated {
        grid: Vec<f64>,
        folds: usize,
        seed: u64,
        sweeps: usize,
    },
}

impl SmoothingPolicy {
    pub fn cross_validated(seed: u64) -> Self {
        Self::CrossValidated {
            grid: log_grid(-3.0, 6.0, 13),
            folds: 10,
            seed,
            sweeps: 2,
        }
    }
}

impl Default for SmoothingPolicy {
    fn default() -> Self {
        Self::cross_validated(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionPoint {
    pub term: String,
    pub lambda: f64,
    pub criterion: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub lambdas: Vec<(String, f64)>,
    pub profile: Vec<CriterionPoint>,
    /// Terms whose profile was flat; the largest λ was taken.
    pub flat: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: DVector<f64>,
    /// (XᵀWX + S)⁻¹.
    pub covariance: DMatrix<f64>,
    pub smoothing_params: Vec<(String, f64)>,
    pub edf: Vec<(String, f64)>,
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub dropped_rows: usize,
    pub n_rows: usize,
    pub separated: bool,
    pub firth: bool,
    pub blocks: Vec<TermBlock>,
    /// Terms whose design columns are identically zero.
    pub inestimable: Vec<String>,
    pub selection: Option<SelectionReport>,
    pub notes: Vec<String>,
}

impl FitResult {
    pub fn block(&self, name: &str) -> Option<&TermBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Coefficient of a single-column term.
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        let b = self.block(name)?;
        (b.columns.len() == 1).then(|| self.coefficients[b.columns.start])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        let b = self.block(name)?;
        (b.columns.len() == 1).then(|| self.covariance[(b.columns.start, b.columns.start)].max(0.0).sqrt())
    }

    pub fn edf_of(&self, name: &str) -> Option<f64> {
        self.edf.iter().find(|(n, _)| n == name).map(|e| e.1)
    }

    pub fn lambda_of(&self, name: &str) -> Option<f64> {
        self.smoothing_params.iter().find(|(n, _)| n == name).map(|e| e.1)
    }

    /// Fitted probability π = σ(row · θ) for a design row.
    pub fn probability(&self, row: &[f64]) -> f64 {
        sigmoid(row.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum())
    }

    /// Centered smooth (or linear) contribution of a term at `x`.
    pub fn term_value(&self, name: &str, x: f64) -> Option<f64> {
        let b = self.block(name)?;
        let basis = b.basis.eval(x);
        Some(basis.iter().zip(self.coefficients.rows(b.columns.start, b.columns.len()).iter()).map(|(a, c)| a * c).sum())
    }
}

fn all_zero_blocks(design: &DifferenceDesign) -> Vec<String> {
    design
        .blocks
        .iter()
        .filter(|b| b.columns.clone().all(|j| design.x.column(j).iter().all(|&v| v == 0.0)))
        .map(|b| b.name.clone())
        .collect()
}

fn penalized_indices(design: &DifferenceDesign) -> Vec<usize> {
    design.blocks.iter().enumerate().filter(|(_, b)| b.is_penalized()).map(|(i, _)| i).collect()
}

fn total_penalty(design: &DifferenceDesign, lambdas: &[f64]) -> DMatrix<f64> {
    let p = design.ncols();
    let mut s = DMatrix::zeros(p, p);
    for (lam, idx) in lambdas.iter().zip(penalized_indices(design)) {
        let b = &design.blocks[idx];
        let w = b.columns.len();
        let mut view = s.view_mut((b.columns.start, b.columns.start), (w, w));
        view += &b.basis.penalty * *lam;
    }
    s
}

fn glm_options(options: FitOptions, firth: bool, start: Option<DVector<f64>>) -> GlmOptions {
    GlmOptions {
        max_iter: options.max_iter,
        tol: options.tol,
        firth,
        start,
    }
}

/// Mean held-out deviance −2 log σ(row·θ) over K folds.
fn cv_criterion(
    x: &DMatrix<f64>,
    folds: &[Vec<usize>],
    train: &[Vec<usize>],
    penalty: &DMatrix<f64>,
    options: FitOptions,
    start: &DVector<f64>,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (held, keep) in folds.iter().zip(train) {
        let xt = x.select_rows(keep);
        let fit = fit_glm(&xt, Response::AllOnes, penalty, &glm_options(options, false, Some(start.clone())));
        for &i in held {
            total += -2.0 * log_sigmoid(x.row(i).dot(&fit.beta.transpose()));
            count += 1;
        }
    }
    total / count.max(1) as f64
}

fn fold_indices(n: usize, k: usize, seed: u64) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, streams::FOLDS));
    let k = k.clamp(2, n.max(2));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    let train = (0..k)
        .map(|f| (0..n).filter(|i| folds[f].binary_search(i).is_err()).collect())
        .collect();
    (folds, train)
}

/// Chooses one λ per penalized term.
pub fn select_smoothing(design: &DifferenceDesign, policy: &SmoothingPolicy, options: FitOptions) -> Result<SelectionReport> {
    let pen = penalized_indices(design);
    if pen.is_empty() {
        return Err(RemError::Config("smoothing selection needs at least one penalized term".into()));
    }
    let names: Vec<String> = pen.iter().map(|&i| design.blocks[i].name.clone()).collect();
    match policy {
        SmoothingPolicy::Fixed { lambdas } => {
            if lambdas.len() != pen.len() {
                return Err(RemError::Config(format!(
                    "{} fixed smoothing parameters given for {} penalized terms",
                    lambdas.len(),
                    pen.len()
                )));
            }
            Ok(SelectionReport {
                lambdas: names.into_iter().zip(lambdas.iter().copied()).collect(),
                ..SelectionReport::default()
            })
        }
        SmoothingPolicy::CrossValidated { grid, folds, seed, sweeps } => {
            if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return Err(RemError::Config("smoothing grid must be non-empty and non-negative".into()));
            }
            let mut grid = grid.clone();
            grid.sort_by(f64::total_cmp);
            let mut lambdas = vec![grid[grid.len() / 2]; pen.len()];
            let mut report = SelectionReport::default();
            if grid.len() == 1 {
                report.lambdas = names.into_iter().zip(lambdas).collect();
                return Ok(report);
            }
            let (held, train) = fold_indices(design.nrows(), *folds, *seed);
            let mut start = fit_glm(&design.x, Response::AllOnes, &total_penalty(design, &lambdas), &glm_options(options, false, None)).beta;
            let mut flat = vec![false; pen.len()];
            for sweep in 0..(*sweeps).max(1) {
                let before = lambdas.clone();
                for s in 0..pen.len() {
                    let mut profile = Vec::with_capacity(grid.len());
                    for &lam in &grid {
                        lambdas[s] = lam;
                        let penalty = total_penalty(design, &lambdas);
                        profile.push(cv_criterion(&design.x, &held, &train, &penalty, options, &start));
                    }
                    let lo = profile.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let best = if !(hi - lo >= FLAT_CRITERION) {
                        flat[s] = true;
                        grid.len() - 1
                    } else {
                        flat[s] = false;
                        profile.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
                    };
                    lambdas[s] = grid[best];
                    if sweep == 0 || s == pen.len() - 1 {
                        report.profile.retain(|p| p.term != names[s]);
                        report.profile.extend(grid.iter().zip(&profile).map(|(&lambda, &criterion)| CriterionPoint {
                            term: names[s].clone(),
                            lambda,
                            criterion,
                        }));
                    }
                    start = fit_glm(&design.x, Response::AllOnes, &total_penalty(design, &lambdas), &glm_options(options, false, Some(start))).beta;
                }
                if pen.len() == 1 || lambdas == before {
                    break;
                }
            }
            report.flat = names.iter().zip(&flat).filter(|(_, f)| **f).map(|(n, _)| n.clone()).collect();
            report.lambdas = names.into_iter().zip(lambdas).collect();
            Ok(report)
        }
    }
}

fn check_design(design: &DifferenceDesign) -> Result<Vec<String>> {
    if design.nrows() == 0 {
        return Err(RemError::Config(format!(
            "empty case-control set: all {} events were dropped as uninformative",
            design.dropped_rows
        )));
    }
    let dead = all_zero_blocks(design);
    if dead.len() == design.blocks.len() {
        return Err(RemError::DegenerateCovariate("every design column is identically zero".into()));
    }
    Ok(dead)
}

fn assemble_result(
    design: &DifferenceDesign,
    glm: GlmFit,
    lambdas: Vec<(String, f64)>,
    firth: bool,
    inestimable: Vec<String>,
    selection: Option<SelectionReport>,
) -> FitResult {
    let mut covariance = glm.covariance;
    let f = &covariance * &glm.xtwx;
    let edf = design
        .blocks
        .iter()
        .map(|b| (b.name.clone(), b.columns.clone().map(|j| f[(j, j)]).sum()))
        .collect();
    for b in design.blocks.iter().filter(|b| inestimable.contains(&b.name)) {
        for j in b.columns.clone() {
            covariance.row_mut(j).fill(f64::NAN);
            covariance.column_mut(j).fill(f64::NAN);
        }
    }
    let mut notes = Vec::new();
    if !glm.converged && !glm.separated {
        notes.push(format!("Newton iterations did not converge in {} steps", glm.iterations));
    }
    if glm.separated {
        notes.push("estimates diverge (separation); consider the bias-reduced fit".into());
    }
    for name in &inestimable {
        notes.push(format!("term `{name}` is inestimable: its design columns are all zero"));
    }
    if let Some(sel) = &selection {
        for name in &sel.flat {
            notes.push(format!("flat smoothing criterion for `{name}`; largest λ taken"));
        }
    }
    FitResult {
        coefficients: glm.beta,
        covariance,
        smoothing_params: lambdas,
        edf,
        deviance: glm.deviance,
        converged: glm.converged,
        iterations: glm.iterations,
        dropped_rows: design.dropped_rows,
        n_rows: design.nrows(),
        separated: glm.separated,
        firth,
        blocks: design.blocks.clone(),
        inestimable,
        selection,
        notes,
    }
}

/// Maximizes Σ log σ(row·θ) − ½ Σ λ θᵀSθ.
pub fn fit_degenerate_logistic(design: &DifferenceDesign, policy: &SmoothingPolicy, options: FitOptions) -> Result<FitResult> {
    let inestimable = check_design(design)?;
    let (lambdas, selection) = if penalized_indices(design).is_empty() {
        (Vec::new(), None)
    } else {
        let report = select_smoothing(design, policy, options)?;
        (report.lambdas.clone(), matches!(policy, SmoothingPolicy::CrossValidated { .. }).then_some(report))
    };
    let values: Vec<f64> = lambdas.iter().map(|l| l.1).collect();
    let glm = fit_glm(&design.x, Response::AllOnes, &total_penalty(design, &values), &glm_options(options, false, None));
    if !glm.converged && !glm.separated {
        log::warn!("degenerate logistic fit did not converge after {} iterations", glm.iterations);
    }
    Ok(assemble_result(design, glm, lambdas, false, inestimable, selection))
}

/// Bias-reduced fit (Jeffreys-prior penalized likelihood) for parametric terms.
pub fn firth_adjust(design: &DifferenceDesign, options: FitOptions) -> Result<FitResult> {
    if let Some(b) = design.blocks.iter().find(|b| b.is_penalized()) {
        return Err(RemError::Unsupported(format!(
            "bias reduction is only available for parametric terms; `{}` is a penalized smooth",
            b.name
        )));
    }
    let inestimable = check_design(design)?;
    let p = design.ncols();
    let glm = fit_glm(&design.x, Response::AllOnes, &DMatrix::zeros(p, p), &glm_options(options, true, None));
    Ok(assemble_result(design, glm, Vec::new(), true, inestimable, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothCurve {
    pub term: String,
    pub x: Vec<f64>,
    pub fit: Vec<f64>,
    pub se: Vec<f64>,
    pub extrapolated: Vec<bool>,
}

impl SmoothCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "fit", "se", "extrapolated"])?;
        for i in 0..self.x.len() {
            w.write_record([
                self.x[i].to_string(),
                self.fit[i].to_string(),
                self.se[i].to_string(),
                self.extrapolated[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Centered term curve on `grid` with pointwise standard errors.
pub fn predict_smooth(fit: &FitResult, term: &str, grid: &[f64]) -> Result<SmoothCurve> {
    let block = fit.block(term).ok_or_else(|| RemError::Config(format!("unknown term `{term}`")))?;
    let cols = block.columns.clone();
    let theta = fit.coefficients.rows(cols.start, cols.len());
    let v = fit.covariance.view((cols.start, cols.start), (cols.len(), cols.len()));
    let mut out = SmoothCurve {
        term: term.to_string(),
        x: grid.to_vec(),
        fit: Vec::with_capacity(grid.len()),
        se: Vec::with_capacity(grid.len()),
        extrapolated: Vec::with_capacity(grid.len()),
    };
    for &x in grid {
        let b = DVector::from_vec(block.basis.eval(x));
        out.fit.push(b.dot(&theta));
        out.se.push((b.transpose() * v * &b)[(0, 0)].max(0.0).sqrt());
        out.extrapolated.push(!block.basis.in_range(x));
    }
    Ok(out)
}

/// Evenly spaced grid over a term's construction range (one period if cyclic).
pub fn default_grid(block: &TermBlock, points: usize) -> Vec<f64> {
    let (lo, hi) = match block.basis.period {
        Some(p) => (0.0, p),
        None => (block.basis.lower, block.basis.upper),
    };
    let points = points.max(2);
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

/// π(1−π)·Δ_j² for every coefficient j of one design row.
pub fn observed_information_row(fit: &FitResult, row: &[f64]) -> Vec<f64> {
    let pi = fit.probability(row);
    row.iter().map(|d| pi * (1.0 - pi) * d * d).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub term: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub estimate: Option<f64>,
    pub edf: f64,
    pub std_error: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
}

/// Wald tests: z for single-column terms, χ² on the rank-truncated block
/// covariance for smooths.
pub fn summary_table(fit: &FitResult) -> Vec<SummaryRow> {
    let normal = Normal::standard();
    fit.blocks
        .iter()
        .map(|b| {
            let edf = fit.edf_of(&b.name).unwrap_or(f64::NAN);
            let kind = if b.is_penalized() { "smooth" } else { "parametric" }.to_string();
            if fit.inestimable.contains(&b.name) {
                return SummaryRow {
                    term: b.name.clone(),
                    kind,
                    estimate: None,
                    edf: 0.0,
                    std_error: None,
                    statistic: f64::NAN,
                    p_value: f64::NAN,
                };
            }
            if !b.is_penalized() && b.columns.len() == 1 {
                let j = b.columns.start;
                let est = fit.coefficients[j];
                let se = fit.covariance[(j, j)].max(0.0).sqrt();
                let z = est / se;
                return SummaryRow {
                    term: b.name.clone(),
                    kind,
                    estimate: Some(est),
                    edf,
                    std_error: Some(se),
                    statistic: z,
                    p_value: 2.0 * normal.cdf(-z.abs()),
                };
            }
            let cols = b.columns.clone();
            let theta = fit.coefficients.rows(cols.start, cols.len()).into_owned();
            let v = fit.covariance.view((cols.start, cols.start), (cols.len(), cols.len())).into_owned();
            let rank = (edf.round() as usize).clamp(1, cols.len());
            let eig = v.symmetric_eigen();
            let mut order: Vec<usize> = (0..cols.len()).collect();
            order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
            let mut stat = 0.0;
            for &k in order.iter().take(rank) {
                let ev = eig.eigenvalues[k];
                if ev > 0.0 {
                    let proj = eig.eigenvectors.column(k).dot(&theta);
                    stat += proj * proj / ev;
                }
            }
            let p = ChiSquared::new(rank as f64).map(|c| 1.0 - c.cdf(stat)).unwrap_or(f64::NAN);
            SummaryRow {
                term: b.name.clone(),
                kind,
                estimate: None,
                edf,
                std_error: None,
                statistic: stat,
                p_value: p,
            }
        })
        .collect()
}

pub fn write_summary_csv(fit: &FitResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in summary_table(fit) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
