//! Endogenous (history-driven) and geography-derived covariates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::event::{Dyad, EventSequence, HistoryIndex, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    Repetition,
    Reciprocity,
}

/// Exponentially decaying memory of the last same (or reversed) event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayStat {
    pub kind: DecayKind,
    /// Median elapsed time `m`; the exponent is `-(t - t_last) / (2m)`.
    pub half_scale: f64,
}

impl DecayStat {
    pub fn value(&self, dyad: Dyad, t: f64, history: &HistoryIndex) -> f64 {
        decay_value(*self, dyad, t, history)
    }
}

/// Endogenous statistic definitions available to intensity and design terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EndogenousStat {
    /// 1 iff the dyad occurred strictly before t.
    RepetitionIndicator,
    Decay(DecayStat),
}

impl EndogenousStat {
    pub fn value(&self, dyad: Dyad, t: f64, history: &HistoryIndex) -> f64 {
        match self {
            Self::RepetitionIndicator => repetition_indicator(dyad, t, history),
            Self::Decay(d) => d.value(dyad, t, history),
        }
    }

    /// Value for a dyad with no relevant history.
    pub fn empty_value(&self) -> f64 {
        0.0
    }

    /// Whether the value drifts between events (not just at them).
    pub fn varies_between_events(&self) -> bool {
        matches!(self, Self::Decay(_))
    }

    /// Dyads whose value may change when `dyad` occurs.
    pub fn affected_by(&self, dyad: Dyad) -> [Option<Dyad>; 2] {
        match self {
            Self::RepetitionIndicator => [Some(dyad), None],
            Self::Decay(DecayStat { kind: DecayKind::Repetition, .. }) => [Some(dyad), None],
            Self::Decay(DecayStat { kind: DecayKind::Reciprocity, .. }) => [Some(dyad.reversed()), None],
        }
    }
}

pub fn decay_value(stat: DecayStat, dyad: Dyad, t: f64, history: &HistoryIndex) -> f64 {
    let source = match stat.kind {
        DecayKind::Repetition => dyad,
        DecayKind::Reciprocity => dyad.reversed(),
    };
    match history.last_before(source, t) {
        Some(last) => (-(t - last) / (2.0 * stat.half_scale)).exp(),
        None => 0.0,
    }
}

pub fn repetition_indicator(dyad: Dyad, t: f64, history: &HistoryIndex) -> f64 {
    if history.count_before(dyad, t) > 0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub repetition: Option<f64>,
    pub reciprocity: Option<f64>,
}

/// Medians of the finite repetition and reciprocity gaps observed at event
/// times, computed in a single pass over the sequence.
pub fn estimate_medians(seq: &EventSequence) -> Medians {
    let mut last: HashMap<Dyad, f64> = HashMap::new();
    let mut rep = Vec::new();
    let mut rec = Vec::new();
    for e in seq.events() {
        if let Some(&t) = last.get(&e.dyad) {
            rep.push(e.time - t);
        }
        if let Some(&t) = last.get(&e.dyad.reversed()) {
            rec.push(e.time - t);
        }
        last.insert(e.dyad, e.time);
    }
    let rep_m = median(&mut rep);
    let rec_m = median(&mut rec);
    if rep_m.is_none() {
        log::warn!("no repeated dyads observed; repetition covariate disabled");
    }
    if rec_m.is_none() {
        log::warn!("no reciprocated dyads observed; reciprocity covariate disabled");
    }
    Medians {
        repetition: rep_m,
        reciprocity: rec_m,
    }
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Travel times between stations, in minutes. Missing pairs are infinite.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    node_count: usize,
    minutes: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            minutes: vec![f64::INFINITY; node_count * node_count],
        }
    }

    pub fn from_dense(node_count: usize, minutes: Vec<f64>) -> Self {
        assert_eq!(minutes.len(), node_count * node_count);
        Self { node_count, minutes }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn set(&mut self, from: NodeId, to: NodeId, minutes: f64) {
        let d = Dyad::new(from, to);
        self.minutes[d.dense_index(self.node_count)] = minutes;
    }

    pub fn get(&self, from: NodeId, to: NodeId) -> f64 {
        if from as usize >= self.node_count || to as usize >= self.node_count {
            return f64::INFINITY;
        }
        self.minutes[Dyad::new(from, to).dense_index(self.node_count)]
    }
}

/// Travel time from `node` to its closest other station; `None` when the node
/// has no finite distance to any other station.
pub fn competition(node: NodeId, distances: &DistanceMatrix) -> Option<f64> {
    (0..distances.node_count() as NodeId)
        .filter(|&other| other != node)
        .map(|other| distances.get(node, other))
        .filter(|d| d.is_finite())
        .min_by(f64::total_cmp)
}
