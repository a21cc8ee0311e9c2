//! Relational event models with global covariates.
//!
//! Global (time-only) covariate effects cancel from the ordinary partial
//! likelihood of a relational event process. Shifting every dyad's events by an
//! independent random delay and sampling one non-event per shifted event yields
//! a sampled partial likelihood in which they do not cancel, and which is the
//! likelihood of a logistic additive model with all-success responses and no
//! intercept. This crate builds that pipeline end to end.

pub mod baseline;
pub mod basis;
pub mod config;
pub mod covariates;
pub mod design;
pub mod endostats;
pub mod error;
pub mod event;
pub mod fitter;
pub mod fixture;
pub mod fullik;
mod glm;
pub mod ingest;
pub mod intensity;
pub mod pipeline;
pub mod rates;
pub mod rng;
pub mod scenario;
pub mod simulator;
pub mod study;
pub mod timeshift;

pub use covariates::{CovariateCatalog, CovariateRef, GlobalSeries, SquareWave, StepFunction};
pub use design::{assemble_difference_design, DesignOptions, DifferenceDesign, MissingPolicy, TermSpec};
pub use error::{RemError, Result};
pub use event::{Dyad, Event, EventSequence, HistoryIndex};
pub use fitter::{fit_degenerate_logistic, FitOptions, FitResult, SmoothingPolicy};
pub use intensity::{eval_intensity, IntensitySpec, RiskPolicy};
pub use simulator::{simulate_tau_leap, simulate_weibull, TauLeapConfig};
pub use timeshift::{draw_shifts, sample_case_control, shift_process, ShiftAssignment, ShiftedCaseControlSet};
