//! Time-shifted event process and nested case-control sampling on it.
//!
//! Every dyad `d` gets an independent shift `h_d ≥ 0`; its events move from
//! `t` to `t + h_d`. At a shifted event time `τ` the shifted risk set holds the
//! dyads with `h_d ≤ τ ≤ h_d + T` that are at risk at `τ − h_d` in the original
//! process. One non-event is drawn uniformly from it, and the pair is recorded
//! on the original time line: the event at `t_k`, the control at
//! `t*_k = t_k + h_event − h_control`.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{RemError, Result};
use crate::event::{Dyad, Event, EventSequence};
use crate::intensity::RiskPolicy;
use crate::rng::stream_rng;

/// Independent non-negative shift per dyad.
#[derive(Debug, Clone)]
pub struct ShiftAssignment {
    /// (shift, dyad) sorted by shift, then dyad.
    sorted: Vec<(f64, Dyad)>,
    rank: HashMap<Dyad, usize>,
    pub nu: f64,
    pub mean_event_time: f64,
}

impl ShiftAssignment {
    pub fn from_shifts(shifts: Vec<(Dyad, f64)>, nu: f64, mean_event_time: f64) -> Result<Self> {
        if shifts.is_empty() {
            return Err(RemError::Config("shift assignment needs at least one dyad".into()));
        }
        if let Some((d, h)) = shifts.iter().find(|(_, h)| !(h.is_finite() && *h >= 0.0)) {
            return Err(RemError::Parameter(format!("shift for {d} must be finite and non-negative, got {h}")));
        }
        let mut sorted: Vec<(f64, Dyad)> = shifts.into_iter().map(|(d, h)| (h, d)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let rank = sorted.iter().enumerate().map(|(k, &(_, d))| (d, k)).collect();
        Ok(Self {
            sorted,
            rank,
            nu,
            mean_event_time,
        })
    }

    pub fn shift(&self, dyad: Dyad) -> Option<f64> {
        self.rank.get(&dyad).map(|&k| self.sorted[k].0)
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn max_shift(&self) -> f64 {
        self.sorted.last().map_or(0.0, |s| s.0)
    }

    /// (dyad, shift) pairs in ascending shift order.
    pub fn iter(&self) -> impl Iterator<Item = (Dyad, f64)> + '_ {
        self.sorted.iter().map(|&(h, d)| (d, h))
    }

    /// Rank range of dyads whose shift lies in `[lo, hi]`.
    fn range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.sorted.partition_point(|s| s.0 < lo);
        let b = self.sorted.partition_point(|s| s.0 <= hi);
        a..b.max(a)
    }
}

/// One exponential shift with mean `nu · mean_event_time` per dyad.
pub fn draw_shifts(dyads: &[Dyad], nu: f64, mean_event_time: f64, seed: u64) -> Result<ShiftAssignment> {
    draw_shifts_on_stream(dyads, nu, mean_event_time, seed, crate::rng::streams::SHIFTS)
}

pub fn draw_shifts_on_stream(
    dyads: &[Dyad],
    nu: f64,
    mean_event_time: f64,
    seed: u64,
    stream: u64,
) -> Result<ShiftAssignment> {
    if dyads.is_empty() {
        return Err(RemError::Config("cannot draw shifts for an empty dyad set".into()));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(RemError::Parameter(format!("nu must be positive, got {nu}")));
    }
    if !(mean_event_time > 0.0 && mean_event_time.is_finite()) {
        return Err(RemError::Parameter(format!("mean event time must be positive, got {mean_event_time}")));
    }
    let mean = nu * mean_event_time;
    let exp = Exp::new(1.0 / mean).map_err(|e| RemError::Parameter(e.to_string()))?;
    let mut rng = stream_rng(seed, stream);
    let shifts = dyads.iter().map(|&d| (d, exp.sample(&mut rng))).collect();
    ShiftAssignment::from_shifts(shifts, nu, mean_event_time)
}

/// The shifted process together with the link back to the original events.
#[derive(Debug, Clone)]
pub struct ShiftedProcess {
    pub sequence: EventSequence,
    /// For each shifted event, the index of its original event.
    pub original_index: Vec<usize>,
    /// Original event times, aligned with the original sequence.
    pub original_times: Vec<f64>,
    /// Observation horizon T of the original process.
    pub original_horizon: f64,
    pub ties_broken: usize,
}

impl ShiftedProcess {
    /// Shifted event time computed without tie nudging.
    pub fn exact_shifted_time(&self, k: usize, shifts: &ShiftAssignment) -> f64 {
        let j = self.original_index[k];
        let dyad = self.sequence.events()[k].dyad;
        self.original_times[j] + shifts.shift(dyad).unwrap_or(0.0)
    }
}

/// Moves every event of dyad `d` from `t` to `t + h_d` and re-sorts.
pub fn shift_process(seq: &EventSequence, shifts: &ShiftAssignment) -> Result<ShiftedProcess> {
    let mut keyed = Vec::with_capacity(seq.len());
    for (j, e) in seq.events().iter().enumerate() {
        let h = shifts
            .shift(e.dyad)
            .ok_or_else(|| RemError::Config(format!("no shift assigned to dyad {}", e.dyad)))?;
        keyed.push((e.time + h, j, e.dyad));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let original_index: Vec<usize> = keyed.iter().map(|k| k.1).collect();
    let events: Vec<Event> = keyed.iter().map(|&(t, _, d)| Event::new(t, d)).collect();
    let horizon = seq.horizon() + shifts.max_shift();
    let horizon = events.last().map_or(horizon, |e| horizon.max(e.time));
    let shifted = EventSequence::new(events, seq.node_count(), horizon)?;
    let ties = shifted.ties_broken();
    if ties > 0 {
        log::warn!("{ties} tied shifted event times were separated");
    }
    Ok(ShiftedProcess {
        sequence: shifted,
        original_index,
        original_times: seq.events().iter().map(|e| e.time).collect(),
        original_horizon: seq.horizon(),
        ties_broken: ties,
    })
}

/// Dyads at risk in the shifted process at time `t`.
pub fn shifted_risk_set(t: f64, shifts: &ShiftAssignment, base_risk: &RiskPolicy, horizon: f64) -> Vec<Dyad> {
    let range = shifts.range(t - horizon, t);
    shifts.sorted[range]
        .iter()
        .filter(|&&(h, d)| {
            let back = t - h;
            (0.0..=horizon).contains(&back) && base_risk.at_risk(d, back)
        })
        .map(|&(_, d)| d)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseControlRow {
    pub event_time: f64,
    pub event_sender: u32,
    pub event_receiver: u32,
    pub control_time: f64,
    pub control_sender: u32,
    pub control_receiver: u32,
}

impl CaseControlRow {
    pub fn event_dyad(&self) -> Dyad {
        Dyad::new(self.event_sender, self.event_receiver)
    }

    pub fn control_dyad(&self) -> Dyad {
        Dyad::new(self.control_sender, self.control_receiver)
    }

    /// Event and control swapped.
    pub fn swapped(&self) -> Self {
        Self {
            event_time: self.control_time,
            event_sender: self.control_sender,
            event_receiver: self.control_receiver,
            control_time: self.event_time,
            control_sender: self.event_sender,
            control_receiver: self.event_receiver,
        }
    }
}

/// One row per informative shifted event.
#[derive(Debug, Clone, Default)]
pub struct ShiftedCaseControlSet {
    pub rows: Vec<CaseControlRow>,
    /// Events whose shifted risk set held only the event itself.
    pub dropped_uninformative: usize,
    pub total_events: usize,
    /// Original horizon T; every row time lies in [0, T].
    pub horizon: f64,
}

impl ShiftedCaseControlSet {
    pub fn dropped_fraction(&self) -> f64 {
        if self.total_events == 0 {
            0.0
        } else {
            self.dropped_uninformative as f64 / self.total_events as f64
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, horizon: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<CaseControlRow>, _>>()?;
        let total = rows.len();
        Ok(Self {
            rows,
            dropped_uninformative: 0,
            total_events: total,
            horizon,
        })
    }
}

/// An event with several sampled non-events, for conditional-logit fitters.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseControlGroup {
    pub event: (Dyad, f64),
    pub controls: Vec<(Dyad, f64)>,
}

struct Sampler<'a> {
    shifted: &'a ShiftedProcess,
    shifts: &'a ShiftAssignment,
    base_risk: &'a RiskPolicy,
    horizon: f64,
}

impl Sampler<'_> {
    /// (event dyad, event time, event shift, shifted time, candidates excluding the event).
    fn candidates(&self, k: usize) -> Result<(Dyad, f64, f64, f64, Candidates)> {
        let e = self.shifted.sequence.events()[k];
        let j = self.shifted.original_index[k];
        let t_event = self.shifted.original_times[j];
        let h_event = self
            .shifts
            .shift(e.dyad)
            .ok_or_else(|| RemError::Config(format!("no shift assigned to dyad {}", e.dyad)))?;
        let tau = t_event + h_event;
        let range = self.shifts.range(tau - self.horizon, tau);
        let own = self.shifts.rank[&e.dyad];
        let cands = if self.base_risk.is_static() {
            Candidates::Range { range, skip: own }
        } else {
            let list = self.shifts.sorted[range]
                .iter()
                .enumerate()
                .filter(|&(_, &(h, d))| d != e.dyad && self.base_risk.at_risk(d, tau - h))
                .map(|(_, &(_, d))| d)
                .collect();
            Candidates::List(list)
        };
        Ok((e.dyad, t_event, h_event, tau, cands))
    }

    /// t_k + (h_event − h_control); grouping the shifts first keeps small
    /// event times exact when shifts are large.
    fn control_time(&self, t_event: f64, h_event: f64, control: Dyad) -> f64 {
        let h = self.shifts.shift(control).expect("control comes from the assignment");
        (t_event + (h_event - h)).clamp(0.0, self.horizon)
    }
}

enum Candidates {
    Range { range: std::ops::Range<usize>, skip: usize },
    List(Vec<Dyad>),
}

impl Candidates {
    fn len(&self) -> usize {
        match self {
            Self::Range { range, skip } => range.len() - usize::from(range.contains(skip)),
            Self::List(l) => l.len(),
        }
    }

    fn get(&self, i: usize, shifts: &ShiftAssignment) -> Dyad {
        match self {
            Self::Range { range, skip } => {
                let mut r = range.start + i;
                if range.contains(skip) && r >= *skip {
                    r += 1;
                }
                shifts.sorted[r].1
            }
            Self::List(l) => l[i],
        }
    }
}

/// Draws one control per shifted event, uniformly from the shifted risk set
/// minus the event dyad. Controls are drawn with replacement across events.
pub fn sample_case_control(
    shifted: &ShiftedProcess,
    shifts: &ShiftAssignment,
    base_risk: &RiskPolicy,
    seed: u64,
) -> Result<ShiftedCaseControlSet> {
    sample_case_control_on_stream(shifted, shifts, base_risk, seed, crate::rng::streams::CONTROLS)
}

pub fn sample_case_control_on_stream(
    shifted: &ShiftedProcess,
    shifts: &ShiftAssignment,
    base_risk: &RiskPolicy,
    seed: u64,
    stream: u64,
) -> Result<ShiftedCaseControlSet> {
    let sampler = Sampler {
        shifted,
        shifts,
        base_risk,
        horizon: shifted.original_horizon,
    };
    let mut rng = stream_rng(seed, stream);
    let n = shifted.sequence.len();
    let mut out = ShiftedCaseControlSet {
        rows: Vec::with_capacity(n),
        dropped_uninformative: 0,
        total_events: n,
        horizon: shifted.original_horizon,
    };
    for k in 0..n {
        let (dyad, t_event, h_event, _, cands) = sampler.candidates(k)?;
        let m = cands.len();
        if m == 0 {
            out.dropped_uninformative += 1;
            continue;
        }
        let control = cands.get(rng.random_range(0..m), shifts);
        let control_time = sampler.control_time(t_event, h_event, control);
        out.rows.push(CaseControlRow {
            event_time: t_event,
            event_sender: dyad.sender,
            event_receiver: dyad.receiver,
            control_time,
            control_sender: control.sender,
            control_receiver: control.receiver,
        });
    }
    Ok(out)
}

/// Several controls per event, without replacement within an event. Events
/// with fewer eligible non-events than requested keep all of them; events with
/// none are dropped and counted.
pub fn sample_case_control_groups(
    shifted: &ShiftedProcess,
    shifts: &ShiftAssignment,
    base_risk: &RiskPolicy,
    controls_per_event: usize,
    seed: u64,
) -> Result<(Vec<CaseControlGroup>, usize)> {
    if controls_per_event == 0 {
        return Err(RemError::Config("controls_per_event must be at least 1".into()));
    }
    let sampler = Sampler {
        shifted,
        shifts,
        base_risk,
        horizon: shifted.original_horizon,
    };
    let mut rng = stream_rng(seed, crate::rng::streams::CONTROLS);
    let mut groups = Vec::new();
    let mut dropped = 0;
    for k in 0..shifted.sequence.len() {
        let (dyad, t_event, h_event, _, cands) = sampler.candidates(k)?;
        let m = cands.len();
        if m == 0 {
            dropped += 1;
            continue;
        }
        let picks = rand::seq::index::sample(&mut rng, m, controls_per_event.min(m));
        let controls = picks
            .into_iter()
            .map(|i| {
                let c = cands.get(i, shifts);
                (c, sampler.control_time(t_event, h_event, c))
            })
            .collect();
        groups.push(CaseControlGroup {
            event: (dyad, t_event),
            controls,
        });
    }
    Ok((groups, dropped))
}
