//! Relational events, dyads and the per-dyad history index.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{RemError, Result};

pub type NodeId = u32;

/// Ordered sender → receiver pair; the mark of a relational event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dyad {
    pub sender: NodeId,
    pub receiver: NodeId,
}

impl Dyad {
    pub const fn new(sender: NodeId, receiver: NodeId) -> Self {
        Self { sender, receiver }
    }

    pub const fn reversed(self) -> Self {
        Self {
            sender: self.receiver,
            receiver: self.sender,
        }
    }

    pub const fn is_loop(self) -> bool {
        self.sender == self.receiver
    }

    /// Dense row-major index in a `node_count × node_count` table.
    #[inline]
    pub fn dense_index(self, node_count: usize) -> usize {
        self.sender as usize * node_count + self.receiver as usize
    }

    pub fn from_dense_index(index: usize, node_count: usize) -> Self {
        Self::new((index / node_count) as NodeId, (index % node_count) as NodeId)
    }
}

impl std::fmt::Display for Dyad {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}→{})", self.sender, self.receiver)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub dyad: Dyad,
}

impl Event {
    pub const fn new(time: f64, dyad: Dyad) -> Self {
        Self { time, dyad }
    }
}

/// Smallest representable time strictly after `t`.
pub fn next_time_after(t: f64) -> f64 {
    t.next_up()
}

/// Sorted occurrence times per dyad. Queries at an arbitrary time are binary
/// searches, so control times that interleave with events are cheap.
#[derive(Debug, Clone, Default)]
pub struct HistoryIndex {
    per_dyad: HashMap<Dyad, Vec<f64>>,
    total: usize,
    last_time: f64,
}

impl HistoryIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event. Times must arrive in strictly increasing order.
    pub fn push(&mut self, event: Event) -> Result<()> {
        if self.total > 0 && event.time <= self.last_time {
            return Err(RemError::InvalidSequence(format!(
                "event time {} does not exceed previous time {}",
                event.time, self.last_time
            )));
        }
        self.per_dyad.entry(event.dyad).or_default().push(event.time);
        self.total += 1;
        self.last_time = event.time;
        Ok(())
    }

    pub fn times(&self, dyad: Dyad) -> &[f64] {
        self.per_dyad.get(&dyad).map(Vec::as_slice).unwrap_or(&[])
    }

    /// N_sr(t): occurrences with time ≤ t.
    pub fn count_at(&self, dyad: Dyad, t: f64) -> usize {
        self.times(dyad).partition_point(|&x| x <= t)
    }

    /// Occurrences strictly before t.
    pub fn count_before(&self, dyad: Dyad, t: f64) -> usize {
        self.times(dyad).partition_point(|&x| x < t)
    }

    /// Most recent occurrence strictly before t.
    pub fn last_before(&self, dyad: Dyad, t: f64) -> Option<f64> {
        let times = self.times(dyad);
        let k = times.partition_point(|&x| x < t);
        (k > 0).then(|| times[k - 1])
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn dyads(&self) -> impl Iterator<Item = (&Dyad, &Vec<f64>)> {
        self.per_dyad.iter()
    }
}

/// A realized relational event process on (0, horizon].
#[derive(Debug, Clone)]
pub struct EventSequence {
    events: Vec<Event>,
    horizon: f64,
    node_count: usize,
    index: HistoryIndex,
    ties_broken: usize,
}

impl EventSequence {
    /// Builds a sequence from events given in sequence order.
    ///
    /// Events are stably sorted by time; equal times are separated by nudging
    /// later events to the next representable time, and the number of nudges is
    /// reported by [`EventSequence::ties_broken`].
    pub fn new(mut events: Vec<Event>, node_count: usize, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(RemError::InvalidSequence(format!("horizon must be positive, got {horizon}")));
        }
        for (k, e) in events.iter().enumerate() {
            if !(e.time.is_finite() && e.time > 0.0) {
                return Err(RemError::InvalidSequence(format!(
                    "event {k} has non-positive or non-finite time {}",
                    e.time
                )));
            }
            if e.dyad.sender as usize >= node_count || e.dyad.receiver as usize >= node_count {
                return Err(RemError::InvalidSequence(format!(
                    "event {k} references node outside 0..{node_count}: {}",
                    e.dyad
                )));
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut ties = 0;
        for k in 1..events.len() {
            if events[k].time <= events[k - 1].time {
                events[k].time = next_time_after(events[k - 1].time);
                ties += 1;
            }
        }
        if let Some(last) = events.last() {
            if last.time > horizon {
                return Err(RemError::InvalidSequence(format!(
                    "event time {} exceeds horizon {horizon}",
                    last.time
                )));
            }
        }
        let mut index = HistoryIndex::new();
        for e in &events {
            index.push(*e)?;
        }
        Ok(Self {
            events,
            horizon,
            node_count,
            index,
            ties_broken: ties,
        })
    }

    /// Wraps events that are already strictly increasing, e.g. simulator output.
    pub(crate) fn from_index(events: Vec<Event>, index: HistoryIndex, node_count: usize, horizon: f64) -> Self {
        Self {
            events,
            horizon,
            node_count,
            index,
            ties_broken: 0,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn history(&self) -> &HistoryIndex {
        &self.index
    }

    pub fn ties_broken(&self) -> usize {
        self.ties_broken
    }

    /// N_sr(t), the number of events of `dyad` at or before `t`.
    pub fn count_process(&self, dyad: Dyad, t: f64) -> usize {
        self.index.count_at(dyad, t)
    }

    pub fn mean_event_time(&self) -> f64 {
        if self.events.is_empty() {
            return 0.0;
        }
        self.events.iter().map(|e| e.time).sum::<f64>() / self.events.len() as f64
    }

    pub fn last_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.time)
    }

    /// Same events observed over the first `n` occurrences only.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let events = self.events[..n.min(self.events.len())].to_vec();
        let horizon = events.last().map_or(self.horizon, |e| e.time);
        Self::new(events, self.node_count, horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> EventSequence {
        EventSequence::new(
            vec![
                Event::new(1.0, Dyad::new(1, 2)),
                Event::new(2.0, Dyad::new(1, 2)),
                Event::new(3.0, Dyad::new(2, 1)),
            ],
            3,
            3.0,
        )
        .unwrap()
    }

    #[test]
    fn count_process_examples() {
        let empty = EventSequence::new(vec![], 3, 1.0).unwrap();
        assert_eq!(empty.count_process(Dyad::new(0, 1), 0.5), 0);
        let s = seq();
        assert_eq!(s.count_process(Dyad::new(1, 2), 2.0), 2);
        assert_eq!(s.count_process(Dyad::new(2, 1), 2.999), 0);
        assert_eq!(s.count_process(Dyad::new(2, 1), 3.0), 1);
    }

    #[test]
    fn ties_are_nudged_in_sequence_order() {
        let s = EventSequence::new(
            vec![
                Event::new(5.0, Dyad::new(0, 1)),
                Event::new(5.0, Dyad::new(1, 0)),
                Event::new(5.0, Dyad::new(0, 2)),
            ],
            3,
            10.0,
        )
        .unwrap();
        assert_eq!(s.ties_broken(), 2);
        let t: Vec<f64> = s.events().iter().map(|e| e.time).collect();
        assert!(t[0] < t[1] && t[1] < t[2]);
        assert_eq!(s.events()[1].dyad, Dyad::new(1, 0));
        assert_eq!(t[1], 5.0f64.next_up());
    }

    #[test]
    fn rejects_time_zero_and_bad_nodes() {
        assert!(EventSequence::new(vec![Event::new(0.0, Dyad::new(0, 1))], 2, 1.0).is_err());
        assert!(EventSequence::new(vec![Event::new(0.5, Dyad::new(0, 2))], 2, 1.0).is_err());
        assert!(EventSequence::new(vec![Event::new(1.5, Dyad::new(0, 1))], 2, 1.0).is_err());
    }

    #[test]
    fn last_before_is_strict() {
        let s = seq();
        let d = Dyad::new(1, 2);
        assert_eq!(s.history().last_before(d, 2.0), Some(1.0));
        assert_eq!(s.history().last_before(d, 2.0001), Some(2.0));
        assert_eq!(s.history().last_before(d, 1.0), None);
    }
}
