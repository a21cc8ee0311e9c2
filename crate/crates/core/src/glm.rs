//! Penalized Newton iterations shared by the degenerate logistic model and the
//! Poisson piecewise-exponential likelihood, with optional Jeffreys-prior
//! (Firth) bias reduction.

use nalgebra::{DMatrix, DVector};

pub(crate) const JITTER: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;
const SEPARATION_NORM: f64 = 1e3;
const SEPARATION_DEVIANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Response<'a> {
    /// Every response is 1: log-likelihood Σ log σ(η).
    AllOnes,
    /// Counts `y` with log-exposure `offset`.
    Poisson { y: &'a [f64], offset: &'a [f64] },
}

#[derive(Debug, Clone)]
pub(crate) struct GlmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub firth: bool,
    pub start: Option<DVector<f64>>,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            firth: false,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GlmFit {
    pub beta: DVector<f64>,
    /// Unpenalized deviance.
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub separated: bool,
    /// XᵀWX at the estimate.
    pub xtwx: DMatrix<f64>,
    /// (XᵀWX + S)⁻¹.
    pub covariance: DMatrix<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log σ(z) without overflow.
pub(crate) fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

struct State {
    beta: DVector<f64>,
    /// Penalized (and Firth-adjusted) log-likelihood being maximized.
    objective: f64,
    loglik: f64,
    weights: DVector<f64>,
    /// Working residual: score = Xᵀ resid − Sβ.
    resid: DVector<f64>,
}

fn loglik_terms(x: &DMatrix<f64>, beta: &DVector<f64>, response: Response) -> (f64, DVector<f64>, DVector<f64>) {
    let eta = x * beta;
    let n = eta.len();
    let mut w = DVector::zeros(n);
    let mut r = DVector::zeros(n);
    let mut ll = 0.0;
    match response {
        Response::AllOnes => {
            for i in 0..n {
                let p = sigmoid(eta[i]);
                ll += log_sigmoid(eta[i]);
                w[i] = p * (1.0 - p);
                r[i] = 1.0 - p;
            }
        }
        Response::Poisson { y, offset } => {
            for i in 0..n {
                let e = eta[i] + offset[i];
                let mu = e.exp();
                ll += y[i] * e - mu;
                w[i] = mu;
                r[i] = y[i] - mu;
            }
        }
    }
    (ll, w, r)
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i].max(0.0).sqrt();
    }
    xw.transpose() * &xw
}

/// Solves `a z = b` by column-pivoted QR, adding a small ridge if `a` is singular.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(z) = a.clone().col_piv_qr().solve(b) {
        if z.iter().all(|v| v.is_finite()) {
            return z;
        }
    }
    let scale = (a.trace().abs() / a.nrows().max(1) as f64).max(1.0);
    let mut reg = a.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += JITTER * scale;
    }
    reg.col_piv_qr()
        .solve(b)
        .unwrap_or_else(|| DMatrix::from_element(b.nrows(), b.ncols(), f64::NAN))
}

pub(crate) fn inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let inv = solve(a, &DMatrix::identity(a.nrows(), a.ncols()));
    (&inv + inv.transpose()) * 0.5
}

fn log_det_spd(a: &DMatrix<f64>) -> f64 {
    match a.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    }
}

fn evaluate(x: &DMatrix<f64>, beta: DVector<f64>, response: Response, penalty: &DMatrix<f64>, firth: bool) -> State {
    let (ll, w, mut r) = loglik_terms(x, &beta, response);
    let pen = 0.5 * (beta.transpose() * penalty * &beta)[(0, 0)];
    let mut objective = ll - pen;
    if firth {
        let info = weighted_gram(x, &w);
        objective += 0.5 * log_det_spd(&info);
        // Leverages h_i = w_i x_iᵀ (XᵀWX)⁻¹ x_i.
        let inv = inverse(&info);
        let xinv = x * &inv;
        for i in 0..x.nrows() {
            let h = w[i] * xinv.row(i).dot(&x.row(i));
            r[i] += match response {
                // Here r = 1 − π, so h (½ − π) = h (r − ½).
                Response::AllOnes => h * (r[i] - 0.5),
                Response::Poisson { .. } => 0.5 * h,
            };
        }
    }
    State {
        beta,
        objective,
        loglik: ll,
        weights: w,
        resid: r,
    }
}

fn deviance(loglik: f64, response: Response) -> f64 {
    match response {
        Response::AllOnes => -2.0 * loglik,
        Response::Poisson { y, offset: _ } => {
            // Saturated log-likelihood Σ y log y − y.
            let sat: f64 = y.iter().map(|&v| if v > 0.0 { v * v.ln() - v } else { 0.0 }).sum();
            2.0 * (sat - loglik)
        }
    }
}

/// Maximizes ℓ(β) − ½βᵀSβ (+ ½ log|XᵀWX| with Firth) by damped Newton steps.
pub(crate) fn fit_glm(x: &DMatrix<f64>, response: Response, penalty: &DMatrix<f64>, options: &GlmOptions) -> GlmFit {
    let p = x.ncols();
    let n = x.nrows();
    let start = options.start.clone().unwrap_or_else(|| DVector::zeros(p));
    let mut state = evaluate(x, start, response, penalty, options.firth);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let mut prev_dev = deviance(state.loglik, response);

    while iterations < options.max_iter {
        iterations += 1;
        let score = x.transpose() * &state.resid - penalty * &state.beta;
        let h = weighted_gram(x, &state.weights) + penalty;
        let step = solve(&h, &DMatrix::from_column_slice(p, 1, score.as_slice())).column(0).into_owned();
        if step.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = evaluate(x, &state.beta + &step * alpha, response, penalty, options.firth);
            if cand.objective.is_finite() && cand.objective >= state.objective - 1e-12 * state.objective.abs() {
                accepted = Some(cand);
                break;
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            // No ascent direction left at working precision.
            converged = score.amax() <= 1e-6 * (n.max(1) as f64);
            break;
        };
        let change = (next.objective - state.objective).abs() / (next.objective.abs() + 0.1);
        let moved = (&step * alpha).amax();
        let size = next.beta.amax();
        state = next;
        let dev = deviance(state.loglik, response);
        if size > SEPARATION_NORM
            || (matches!(response, Response::AllOnes) && penalty.amax() == 0.0 && dev / n.max(1) as f64 <= SEPARATION_DEVIANCE && dev < prev_dev)
        {
            separated = true;
            break;
        }
        prev_dev = dev;
        if change < options.tol && moved <= 1e-6 * (1.0 + size) {
            converged = true;
            break;
        }
    }
    let xtwx = weighted_gram(x, &state.weights);
    let covariance = inverse(&(&xtwx + penalty));
    GlmFit {
        deviance: deviance(state.loglik, response),
        beta: state.beta,
        converged,
        iterations,
        separated,
        xtwx,
        covariance,
    }
}
