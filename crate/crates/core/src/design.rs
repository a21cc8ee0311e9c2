//! Difference design of the degenerate logistic model.
//!
//! Each kept case-control row becomes `b(x_event) − b(x_control)` for every
//! term, concatenated. There is no intercept column.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, BasisKind, BasisOptions, BasisSpec};
use crate::covariates::{CovariateCatalog, CovariateKind, CovariateRef};
use crate::error::{RemError, Result};
use crate::event::HistoryIndex;
use crate::timeshift::{CaseControlRow, ShiftedCaseControlSet};

pub const DEFAULT_RANK: usize = 10;
pub const DEFAULT_ENDOGENOUS_RANK: usize = 20;

/// One model term as written in the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub name: String,
    pub covariate: CovariateRef,
    pub kind: BasisKind,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub period: Option<f64>,
}

impl TermSpec {
    pub fn linear(name: &str, covariate: &str) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            covariate: covariate.parse()?,
            kind: BasisKind::Linear,
            rank: None,
            period: None,
        })
    }

    pub fn smooth(name: &str, covariate: &str) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            covariate: covariate.parse()?,
            kind: BasisKind::PenalizedSpline,
            rank: None,
            period: None,
        })
    }

    pub fn cyclic(name: &str, covariate: &str, period: f64) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            covariate: covariate.parse()?,
            kind: BasisKind::CyclicPenalizedSpline,
            rank: None,
            period: Some(period),
        })
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = Some(rank);
        self
    }

    pub fn effective_rank(&self) -> usize {
        self.rank.unwrap_or(match self.covariate {
            CovariateRef::Endogenous(_) => DEFAULT_ENDOGENOUS_RANK,
            _ => DEFAULT_RANK,
        })
    }
}

/// What to do when a covariate has no value for a row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Error,
    /// Zero the term's block in that row; the term drops out for the pair.
    ZeroRow,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DesignOptions {
    pub missing: MissingPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermBlock {
    pub name: String,
    pub covariate: CovariateRef,
    pub basis: BasisSpec,
    pub columns: Range<usize>,
}

impl TermBlock {
    pub fn is_penalized(&self) -> bool {
        self.basis.kind.is_penalized()
    }
}

#[derive(Debug, Clone)]
pub struct DifferenceDesign {
    /// n_kept × P difference matrix.
    pub x: DMatrix<f64>,
    pub blocks: Vec<TermBlock>,
    /// Rows dropped upstream for lack of a control.
    pub dropped_rows: usize,
    /// (row, term) pairs zeroed for missing covariates.
    pub zeroed_entries: usize,
}

impl DifferenceDesign {
    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn block(&self, name: &str) -> Option<&TermBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Block penalties embedded in P × P matrices, one per penalized term.
    pub fn penalties(&self) -> Vec<(usize, DMatrix<f64>)> {
        let p = self.ncols();
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_penalized())
            .map(|(i, b)| {
                let mut s = DMatrix::zeros(p, p);
                s.view_mut((b.columns.start, b.columns.start), (b.columns.len(), b.columns.len()))
                    .copy_from(&b.basis.penalty);
                (i, s)
            })
            .collect()
    }

    /// Rows with the given indices, same blocks.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            blocks: self.blocks.clone(),
            dropped_rows: 0,
            zeroed_entries: 0,
        }
    }
}

fn covariate_value(
    catalog: &CovariateCatalog,
    term: &TermSpec,
    row: &CaseControlRow,
    history: &HistoryIndex,
    control: bool,
) -> Option<f64> {
    let (dyad, t) = if control {
        (row.control_dyad(), row.control_time)
    } else {
        (row.event_dyad(), row.event_time)
    };
    catalog.value(&term.covariate, dyad, t, history)
}

/// Builds the difference design. `history` is the original (unshifted)
/// process, so endogenous values use events strictly before each time.
pub fn assemble_difference_design(
    ccs: &ShiftedCaseControlSet,
    catalog: &CovariateCatalog,
    history: &HistoryIndex,
    terms: &[TermSpec],
    options: DesignOptions,
) -> Result<DifferenceDesign> {
    if terms.is_empty() {
        return Err(RemError::Config("model has no terms".into()));
    }
    let mut names: Vec<&str> = terms.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(RemError::Config(format!("duplicate term name `{}`", w[0])));
    }
    let n = ccs.rows.len();
    let mut values = Vec::with_capacity(terms.len());
    let mut zeroed = 0;
    for term in terms {
        catalog.resolve(&term.covariate)?;
        let mut ev = Vec::with_capacity(n);
        let mut cv = Vec::with_capacity(n);
        for (k, row) in ccs.rows.iter().enumerate() {
            let e = covariate_value(catalog, term, row, history, false);
            let c = covariate_value(catalog, term, row, history, true);
            match (e, c) {
                (Some(e), Some(c)) => {
                    ev.push(e);
                    cv.push(c);
                }
                _ => match options.missing {
                    MissingPolicy::Error => {
                        let which = if e.is_none() { "event" } else { "control" };
                        return Err(RemError::Ingest(format!(
                            "row {k}: covariate `{}` of term `{}` is undefined for the {which}",
                            term.covariate, term.name
                        )));
                    }
                    MissingPolicy::ZeroRow => {
                        zeroed += 1;
                        ev.push(f64::NAN);
                        cv.push(f64::NAN);
                    }
                },
            }
        }
        values.push((ev, cv));
    }

    let mut blocks = Vec::with_capacity(terms.len());
    let mut col = 0;
    for (term, (ev, cv)) in terms.iter().zip(&values) {
        let mut sample: Vec<f64> = ev.iter().chain(cv).copied().filter(|v| v.is_finite()).collect();
        sample.sort_by(f64::total_cmp);
        let basis = build_basis(term.kind, term.effective_rank(), &sample, BasisOptions { period: term.period })
            .map_err(|e| match e {
                RemError::DegenerateCovariate(d) => RemError::DegenerateCovariate(format!("term `{}`: {d}", term.name)),
                other => other,
            })?;
        let width = basis.ncols();
        blocks.push(TermBlock {
            name: term.name.clone(),
            covariate: term.covariate.clone(),
            basis,
            columns: col..col + width,
        });
        col += width;
    }

    let mut x = DMatrix::zeros(n, col);
    for (block, (ev, cv)) in blocks.iter().zip(&values) {
        let global = block.covariate.kind() == CovariateKind::Global;
        for k in 0..n {
            let (e, c) = (ev[k], cv[k]);
            if !e.is_finite() || (global && e == c) {
                continue;
            }
            for (j, v) in block.basis.eval_difference(e, c).into_iter().enumerate() {
                x[(k, block.columns.start + j)] = v;
            }
        }
    }
    Ok(DifferenceDesign {
        x,
        blocks,
        dropped_rows: ccs.dropped_uninformative,
        zeroed_entries: zeroed,
    })
}
