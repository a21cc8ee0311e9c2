//! Covariate catalog: global time series, node and dyadic attributes, and
//! named endogenous statistics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::endostats::EndogenousStat;
use crate::error::{RemError, Result};
use crate::event::{Dyad, HistoryIndex};

pub type TimeFunction = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Left-continuous step function: the value over `(stamp[i-1], stamp[i]]` is the
/// value stamped at `stamp[i-1]`. Before the first stamp the first value
/// applies; after the last stamp the last value.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    stamps: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(stamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if stamps.is_empty() || stamps.len() != values.len() {
            return Err(RemError::Config("step function needs matching, non-empty stamps and values".into()));
        }
        if stamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RemError::Config("step function stamps must be strictly increasing".into()));
        }
        Ok(Self { stamps, values })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            stamps: vec![0.0],
            values: vec![value],
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = self.stamps.partition_point(|&s| s < t);
        self.values[k.saturating_sub(1)]
    }

    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        let k = self.stamps.partition_point(|&s| s <= t);
        // The value changes just after stamp k, so the switch point is the stamp.
        self.stamps.get(k).copied()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Periodic two-level piecewise-constant signal, left-continuous.
/// `high` holds over `(kP, kP + duty·P]`, `low` over `(kP + duty·P, (k+1)P]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareWave {
    pub period: f64,
    pub low: f64,
    pub high: f64,
    pub duty: f64,
}

impl SquareWave {
    pub fn value(&self, t: f64) -> f64 {
        let cycles = t / self.period;
        let u = cycles - cycles.floor();
        if u > 0.0 && u <= self.duty {
            self.high
        } else {
            self.low
        }
    }

    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        let k = (t / self.period).floor();
        let candidates = [
            k * self.period,
            (k + self.duty) * self.period,
            (k + 1.0) * self.period,
            (k + 1.0 + self.duty) * self.period,
        ];
        candidates.into_iter().find(|&c| c > t)
    }
}

#[derive(Clone)]
pub enum GlobalSeries {
    Step(StepFunction),
    SquareWave(SquareWave),
    Function(TimeFunction),
}

impl fmt::Debug for GlobalSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Step(s) => f.debug_tuple("Step").field(&s.stamps.len()).finish(),
            Self::SquareWave(w) => f.debug_tuple("SquareWave").field(w).finish(),
            Self::Function(_) => f.write_str("Function"),
        }
    }
}

impl GlobalSeries {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Self::Step(s) => s.value(t),
            Self::SquareWave(w) => w.value(t),
            Self::Function(g) => g(t),
        }
    }

    /// Next time after `t` at which a piecewise-constant series switches value.
    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        match self {
            Self::Step(s) => s.next_change_after(t),
            Self::SquareWave(w) => w.next_change_after(t),
            Self::Function(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum DyadicAttr {
    /// Row-major `node_count × node_count`; NaN marks a missing value.
    Dense { node_count: usize, values: Vec<f64> },
    Sparse(HashMap<Dyad, f64>),
}

impl DyadicAttr {
    pub fn get(&self, dyad: Dyad) -> Option<f64> {
        let v = match self {
            Self::Dense { node_count, values } => {
                if dyad.sender as usize >= *node_count || dyad.receiver as usize >= *node_count {
                    return None;
                }
                values[dyad.dense_index(*node_count)]
            }
            Self::Sparse(map) => *map.get(&dyad)?,
        };
        v.is_finite().then_some(v)
    }
}

/// Reference to a covariate by role. Textual form: `time`, `global:NAME`,
/// `sender:NAME`, `receiver:NAME`, `dyad:NAME`, `endo:NAME`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CovariateRef {
    /// x⁽⁰⁾(t) = t, the argument of the global time effect.
    Time,
    Global(String),
    Sender(String),
    Receiver(String),
    Dyadic(String),
    Endogenous(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    /// Depends on time only (same for every dyad).
    Global,
    /// Depends on the dyad only.
    Static,
    /// Depends on dyad and the process history.
    Endogenous,
}

impl CovariateRef {
    pub fn kind(&self) -> CovariateKind {
        match self {
            Self::Time | Self::Global(_) => CovariateKind::Global,
            Self::Sender(_) | Self::Receiver(_) | Self::Dyadic(_) => CovariateKind::Static,
            Self::Endogenous(_) => CovariateKind::Endogenous,
        }
    }
}

impl fmt::Display for CovariateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Time => f.write_str("time"),
            Self::Global(n) => write!(f, "global:{n}"),
            Self::Sender(n) => write!(f, "sender:{n}"),
            Self::Receiver(n) => write!(f, "receiver:{n}"),
            Self::Dyadic(n) => write!(f, "dyad:{n}"),
            Self::Endogenous(n) => write!(f, "endo:{n}"),
        }
    }
}

impl FromStr for CovariateRef {
    type Err = RemError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "time" {
            return Ok(Self::Time);
        }
        let (role, name) = s
            .split_once(':')
            .ok_or_else(|| RemError::Config(format!("covariate reference `{s}` must look like `role:name` or `time`")))?;
        if name.is_empty() {
            return Err(RemError::Config(format!("covariate reference `{s}` has an empty name")));
        }
        let name = name.to_string();
        Ok(match role {
            "global" => Self::Global(name),
            "sender" => Self::Sender(name),
            "receiver" => Self::Receiver(name),
            "dyad" => Self::Dyadic(name),
            "endo" => Self::Endogenous(name),
            other => return Err(RemError::Config(format!("unknown covariate role `{other}` in `{s}`"))),
        })
    }
}

impl Serialize for CovariateRef {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CovariateRef {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every covariate the intensity or the design can reference.
#[derive(Debug, Clone, Default)]
pub struct CovariateCatalog {
    globals: BTreeMap<String, GlobalSeries>,
    node_attrs: BTreeMap<String, Vec<f64>>,
    dyadic_attrs: BTreeMap<String, DyadicAttr>,
    endogenous: BTreeMap<String, EndogenousStat>,
}

impl CovariateCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_global(mut self, name: impl Into<String>, series: GlobalSeries) -> Self {
        self.globals.insert(name.into(), series);
        self
    }

    pub fn with_node_attr(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.node_attrs.insert(name.into(), values);
        self
    }

    pub fn with_dyadic_attr(mut self, name: impl Into<String>, attr: DyadicAttr) -> Self {
        self.dyadic_attrs.insert(name.into(), attr);
        self
    }

    pub fn with_endogenous(mut self, name: impl Into<String>, stat: EndogenousStat) -> Self {
        self.endogenous.insert(name.into(), stat);
        self
    }

    /// Dyadic attribute `|x_s − x_r|` derived from a node attribute.
    pub fn with_abs_difference(self, name: impl Into<String>, node_attr: &str) -> Result<Self> {
        let x = self
            .node_attrs
            .get(node_attr)
            .ok_or_else(|| RemError::Config(format!("unknown node attribute `{node_attr}`")))?;
        let p = x.len();
        let mut values = vec![f64::NAN; p * p];
        for s in 0..p {
            for r in 0..p {
                values[s * p + r] = (x[s] - x[r]).abs();
            }
        }
        Ok(self.with_dyadic_attr(name, DyadicAttr::Dense { node_count: p, values }))
    }

    pub fn global(&self, name: &str) -> Option<&GlobalSeries> {
        self.globals.get(name)
    }

    pub fn node_attr(&self, name: &str) -> Option<&[f64]> {
        self.node_attrs.get(name).map(Vec::as_slice)
    }

    pub fn dyadic_attr(&self, name: &str) -> Option<&DyadicAttr> {
        self.dyadic_attrs.get(name)
    }

    pub fn endogenous(&self, name: &str) -> Option<&EndogenousStat> {
        self.endogenous.get(name)
    }

    pub fn globals(&self) -> impl Iterator<Item = (&String, &GlobalSeries)> {
        self.globals.iter()
    }

    /// Checks that a reference names something in the catalog.
    pub fn resolve(&self, cref: &CovariateRef) -> Result<()> {
        let known = match cref {
            CovariateRef::Time => true,
            CovariateRef::Global(n) => self.globals.contains_key(n),
            CovariateRef::Sender(n) | CovariateRef::Receiver(n) => self.node_attrs.contains_key(n),
            CovariateRef::Dyadic(n) => self.dyadic_attrs.contains_key(n),
            CovariateRef::Endogenous(n) => self.endogenous.contains_key(n),
        };
        if known {
            Ok(())
        } else {
            Err(RemError::Config(format!("unknown covariate `{cref}`")))
        }
    }

    /// Value of a covariate for `dyad` at time `t`, using only history strictly
    /// before `t`. `None` when the covariate is unknown or undefined there.
    pub fn value(&self, cref: &CovariateRef, dyad: Dyad, t: f64, history: &HistoryIndex) -> Option<f64> {
        let v = match cref {
            CovariateRef::Time => t,
            CovariateRef::Global(n) => self.globals.get(n)?.value(t),
            CovariateRef::Sender(n) => *self.node_attrs.get(n)?.get(dyad.sender as usize)?,
            CovariateRef::Receiver(n) => *self.node_attrs.get(n)?.get(dyad.receiver as usize)?,
            CovariateRef::Dyadic(n) => self.dyadic_attrs.get(n)?.get(dyad)?,
            CovariateRef::Endogenous(n) => self.endogenous.get(n)?.value(dyad, t, history),
        };
        v.is_finite().then_some(v)
    }

    /// Earliest time after `t` at which any global series switches value.
    pub fn next_global_change_after(&self, t: f64) -> Option<f64> {
        self.globals
            .values()
            .filter_map(|g| g.next_change_after(t))
            .min_by(f64::total_cmp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_is_left_continuous() {
        let f = StepFunction::new(vec![0.0, 3600.0, 7200.0], vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(f.value(0.0), 10.0);
        assert_eq!(f.value(1800.0), 10.0);
        assert_eq!(f.value(3600.0), 10.0);
        assert_eq!(f.value(3600.5), 20.0);
        assert_eq!(f.value(1e9), 30.0);
        assert_eq!(f.next_change_after(100.0), Some(3600.0));
        assert_eq!(f.next_change_after(3600.0), Some(7200.0));
        assert_eq!(f.next_change_after(7200.0), None);
    }

    #[test]
    fn square_wave_levels_and_breakpoints() {
        let w = SquareWave { period: 1.0, low: 0.0, high: 1.0, duty: 0.5 };
        assert_eq!(w.value(0.0), 0.0);
        assert_eq!(w.value(0.25), 1.0);
        assert_eq!(w.value(0.5), 1.0);
        assert_eq!(w.value(0.75), 0.0);
        assert_eq!(w.value(1.0), 0.0);
        assert_eq!(w.value(1.2), 1.0);
        assert_eq!(w.next_change_after(0.0), Some(0.5));
        assert_eq!(w.next_change_after(0.5), Some(1.0));
        assert_eq!(w.next_change_after(0.7), Some(1.0));
    }

    #[test]
    fn covariate_refs_round_trip() {
        for s in ["time", "global:temp", "sender:comp", "receiver:comp", "dyad:dist", "endo:rep"] {
            let c: CovariateRef = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert!("bogus".parse::<CovariateRef>().is_err());
        assert!("node:x".parse::<CovariateRef>().is_err());
    }

    #[test]
    fn catalog_values() {
        let cat = CovariateCatalog::new()
            .with_node_attr("x", vec![5.0, 3.0])
            .with_abs_difference("xd", "x")
            .unwrap()
            .with_global("w", GlobalSeries::Function(Arc::new(|t| 2.0 * t)));
        let h = HistoryIndex::new();
        let d = Dyad::new(0, 1);
        assert_eq!(cat.value(&CovariateRef::Sender("x".into()), d, 0.0, &h), Some(5.0));
        assert_eq!(cat.value(&CovariateRef::Receiver("x".into()), d, 0.0, &h), Some(3.0));
        assert_eq!(cat.value(&CovariateRef::Dyadic("xd".into()), d, 0.0, &h), Some(2.0));
        assert_eq!(cat.value(&CovariateRef::Global("w".into()), d, 1.5, &h), Some(3.0));
        assert_eq!(cat.value(&CovariateRef::Time, d, 1.5, &h), Some(1.5));
        assert!(cat.resolve(&CovariateRef::Global("nope".into())).is_err());
    }
}
