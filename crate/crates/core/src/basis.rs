//! Penalized spline bases with sum-to-zero centering.
//!
//! Ordinary smooths use cubic B-splines on evenly spaced knots with a
//! second-order difference penalty. Cyclic smooths wrap a uniform cubic
//! B-spline kernel on the period with a circulant difference penalty. Linear
//! terms are a single mean-centered column with no penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{RemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Linear,
    #[serde(alias = "pspline")]
    PenalizedSpline,
    #[serde(alias = "cyclic")]
    CyclicPenalizedSpline,
}

impl BasisKind {
    pub fn is_penalized(self) -> bool {
        !matches!(self, Self::Linear)
    }
}

/// A fitted basis: raw functions, penalty and the centering transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    /// Number of raw basis functions B.
    pub rank: usize,
    pub knots: Vec<f64>,
    pub period: Option<f64>,
    /// Range of the construction sample.
    pub lower: f64,
    pub upper: f64,
    /// Mean of the construction sample (linear kind).
    pub center: f64,
    /// B × (B − 1) null-space basis of the column means (identity 1×1 for linear).
    pub centering: DMatrix<f64>,
    /// Penalty on the centered coefficients.
    pub penalty: DMatrix<f64>,
    degree: usize,
}

impl BasisSpec {
    /// Number of coefficients after centering.
    pub fn ncols(&self) -> usize {
        self.centering.ncols()
    }

    /// Dimension of the unpenalized space after centering.
    pub fn null_space_dim(&self) -> usize {
        match self.kind {
            BasisKind::Linear => 1,
            BasisKind::PenalizedSpline => 1,
            BasisKind::CyclicPenalizedSpline => 0,
        }
    }

    pub fn in_range(&self, x: f64) -> bool {
        self.kind == BasisKind::CyclicPenalizedSpline || (x >= self.lower && x <= self.upper)
    }

    /// Raw (uncentered) basis at `x`; ordinary splines clamp to the data range.
    pub fn eval_raw(&self, x: f64) -> Vec<f64> {
        match self.kind {
            BasisKind::Linear => vec![x - self.center],
            BasisKind::PenalizedSpline => bspline_row(&self.knots, self.degree, x.clamp(self.lower, self.upper), self.rank),
            BasisKind::CyclicPenalizedSpline => cyclic_row(self.period.expect("cyclic basis has a period"), self.rank, x),
        }
    }

    /// Centered basis at `x`, length [`Self::ncols`].
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let raw = self.eval_raw(x);
        if self.kind == BasisKind::Linear {
            return raw;
        }
        let z = &self.centering;
        (0..z.ncols())
            .map(|j| raw.iter().enumerate().map(|(i, r)| r * z[(i, j)]).sum())
            .collect()
    }

    /// `eval(a) − eval(b)`, formed on the raw basis so that swapping the
    /// arguments negates the result exactly.
    pub fn eval_difference(&self, a: f64, b: f64) -> Vec<f64> {
        if self.kind == BasisKind::Linear {
            return vec![a - b];
        }
        let ra = self.eval_raw(a);
        let rb = self.eval_raw(b);
        let diff: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| x - y).collect();
        let z = &self.centering;
        (0..z.ncols())
            .map(|j| diff.iter().enumerate().map(|(i, r)| r * z[(i, j)]).sum())
            .collect()
    }

    pub fn eval_matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.ncols());
        for (i, &x) in xs.iter().enumerate() {
            for (j, v) in self.eval(x).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BasisOptions {
    /// Period of the cyclic kind; the domain is [0, period).
    pub period: Option<f64>,
}

/// Builds a basis of the given kind on the construction sample `data`.
pub fn build_basis(kind: BasisKind, rank: usize, data: &[f64], options: BasisOptions) -> Result<BasisSpec> {
    let finite: Vec<f64> = data.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return Err(RemError::DegenerateCovariate("no finite covariate values".into()));
    }
    let lower = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = finite.iter().sum::<f64>() / finite.len() as f64;
    if kind != BasisKind::CyclicPenalizedSpline && !(upper > lower) {
        return Err(RemError::DegenerateCovariate(format!("covariate has zero variance (all values {lower})")));
    }
    if kind == BasisKind::Linear {
        return Ok(BasisSpec {
            kind,
            rank: 1,
            knots: Vec::new(),
            period: None,
            lower,
            upper,
            center,
            centering: DMatrix::identity(1, 1),
            penalty: DMatrix::zeros(1, 1),
            degree: 1,
        });
    }
    if rank < 3 {
        return Err(RemError::Config(format!("spline rank must be at least 3, got {rank}")));
    }
    let mut distinct = finite.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let rank = if distinct.len() < rank {
        let reduced = distinct.len().max(3);
        log::warn!("only {} distinct covariate values; reducing spline rank {rank} to {reduced}", distinct.len());
        reduced
    } else {
        rank
    };
    if distinct.len() < 2 {
        return Err(RemError::DegenerateCovariate(format!("covariate has zero variance (all values {lower})")));
    }

    let (knots, degree, period, raw_penalty) = match kind {
        BasisKind::PenalizedSpline => {
            let degree = 3.min(rank - 1);
            let intervals = rank - degree;
            let step = (upper - lower) / intervals as f64;
            let knots: Vec<f64> = (0..=rank + degree)
                .map(|i| lower + (i as f64 - degree as f64) * step)
                .collect();
            (knots, degree, None, difference_penalty(rank))
        }
        BasisKind::CyclicPenalizedSpline => {
            let period = options
                .period
                .filter(|p| *p > 0.0 && p.is_finite())
                .ok_or_else(|| RemError::Config("cyclic basis needs a positive period".into()))?;
            let knots = (0..rank).map(|j| j as f64 * period / rank as f64).collect();
            (knots, 3, Some(period), circulant_penalty(rank))
        }
        BasisKind::Linear => unreachable!(),
    };
    let mut spec = BasisSpec {
        kind,
        rank,
        knots,
        period,
        lower,
        upper,
        center,
        centering: DMatrix::identity(rank, rank),
        penalty: raw_penalty.clone(),
        degree,
    };
    let raw = DMatrix::from_row_iterator(finite.len(), rank, finite.iter().flat_map(|&x| spec.eval_raw(x)));
    let means = raw.row_mean().transpose();
    let z = householder_null_space(&means);
    let xc = &raw * &z;
    let s = z.transpose() * raw_penalty * &z;
    let xtx_norm = (xc.transpose() * &xc).norm();
    let s_norm = s.norm();
    spec.penalty = if s_norm > 0.0 { s * (xtx_norm / s_norm) } else { s };
    spec.centering = z;
    Ok(spec)
}

/// Columns 2..B of the Householder reflection mapping `c` onto e₁: an
/// orthonormal basis of the complement of `c`.
fn householder_null_space(c: &DVector<f64>) -> DMatrix<f64> {
    let b = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = if vv > 0.0 {
        DMatrix::identity(b, b) - (&v * v.transpose()) * (2.0 / vv)
    } else {
        DMatrix::identity(b, b)
    };
    h.columns(1, b - 1).into_owned()
}

/// DᵀD for the (B−2)×B second-difference operator.
fn difference_penalty(b: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(b - 2, b);
    for i in 0..b - 2 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d.transpose() * d
}

/// DᵀD for the wrapped B×B second-difference operator.
fn circulant_penalty(b: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(b, b);
    for i in 0..b {
        d[(i, (i + b - 1) % b)] += 1.0;
        d[(i, i)] += -2.0;
        d[(i, (i + 1) % b)] += 1.0;
    }
    d.transpose() * d
}

/// B-spline values of the given degree at `x` (Cox–de Boor).
fn bspline_row(knots: &[f64], degree: usize, x: f64, count: usize) -> Vec<f64> {
    let m = knots.len() - 1;
    // Interval index with the right end of the data range folded into the last interval.
    let last = count - 1;
    let mut span = degree;
    while span < last && x >= knots[span + 1] {
        span += 1;
    }
    let mut n = vec![0.0; degree + 1];
    n[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[(span + j).min(m)] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    let mut row = vec![0.0; count];
    for (r, v) in n.into_iter().enumerate() {
        row[span - degree + r] = v;
    }
    row
}

/// Uniform cubic B-spline kernel on [−2, 2].
fn cubic_kernel(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    } else if a < 2.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        0.0
    }
}

fn cyclic_row(period: f64, b: usize, x: f64) -> Vec<f64> {
    let u = (x / period).rem_euclid(1.0) * b as f64;
    let mut row = vec![0.0; b];
    for (j, out) in row.iter_mut().enumerate() {
        let mut d = (u - j as f64).rem_euclid(b as f64);
        if d > b as f64 / 2.0 {
            d -= b as f64;
        }
        // Sum over wraps so small ranks stay a partition of unity.
        let mut v = 0.0;
        for k in -2i32..=2 {
            v += cubic_kernel(d + (k * b as i32) as f64);
        }
        *out = v;
    }
    row
}
