//! Per-event local history used by score models.

use crate::events::{Event, LocalIndex};

/// What a score model needs to see of the past.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryNeeds {
    /// Localization radius δ defining `t_n`.
    pub delta: f64,
    /// ℓ∞ radius around the event within which prior events are kept.
    pub radius: f64,
    /// Events older than `t_n − memory` are dropped.
    pub memory: f64,
    /// Keep at most this many of the most recent qualifying events.
    pub max_events: Option<usize>,
}

impl HistoryNeeds {
    /// Smallest requirement covering both.
    pub fn merge(&self, o: &HistoryNeeds) -> HistoryNeeds {
        let max_events = match (self.max_events, o.max_events) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        HistoryNeeds {
            delta: self.delta.max(o.delta),
            radius: self.radius.max(o.radius),
            memory: self.memory.max(o.memory),
            max_events,
        }
    }
}

/// Local history of one event: the anchor time `t_n` and the prior events a model may use.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreContext {
    /// Location of the scored event; neural encodings are relative to it.
    pub center: [f64; 2],
    /// Time of the most recent prior event within δ (0 when there is none).
    pub t_n: f64,
    /// True when no prior event lies within δ.
    pub censored: bool,
    /// Prior events in increasing time.
    pub history: Vec<Event>,
}

impl ScoreContext {
    /// Builds the context for `events[index]` by a linear scan (reference path).
    pub fn from_slice(events: &[Event], index: usize, needs: &HistoryNeeds) -> Self {
        let x = events[index];
        let prior = &events[..index];
        let last = prior.iter().rposition(|e| e.linf(x.s) <= needs.delta);
        let t_n = last.map_or(0.0, |k| prior[k].t);
        let mut history: Vec<Event> = prior
            .iter()
            .filter(|e| e.t >= t_n - needs.memory && e.linf(x.s) <= needs.radius)
            .copied()
            .collect();
        if let Some(m) = needs.max_events {
            let skip = history.len().saturating_sub(m);
            history.drain(..skip);
        }
        ScoreContext { center: x.s, t_n, censored: last.is_none(), history }
    }

    /// Same as [`ScoreContext::from_slice`] using a spatial index over `events[..index]`.
    pub fn from_index(events: &[Event], index: usize, idx: &LocalIndex, needs: &HistoryNeeds) -> Self {
        let x = events[index];
        let last = idx.last_within(events, index, x.s, needs.delta);
        let t_n = last.map_or(0.0, |k| events[k].t);
        let ids = match needs.max_events {
            Some(m) => idx
                .recent_within(events, index, x.s, needs.radius, m)
                .into_iter()
                .filter(|&k| events[k].t >= t_n - needs.memory)
                .collect(),
            None => idx.within(events, index, x.s, needs.radius, t_n - needs.memory),
        };
        ScoreContext {
            center: x.s,
            t_n,
            censored: last.is_none(),
            history: ids.into_iter().map(|k| events[k]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    #[test]
    fn index_and_scan_agree() {
        let ev: Vec<Event> = (0..300)
            .map(|i| {
                let x = (i as f64 * 0.754_877_666).fract();
                let y = (i as f64 * 0.569_840_29).fract();
                Event::new(0.01 * i as f64, x, y)
            })
            .collect();
        let idx = LocalIndex::build(&ev, &Rect::unit(), 0.1);
        for needs in [
            HistoryNeeds { delta: 0.1, radius: 0.25, memory: 0.5, max_events: None },
            HistoryNeeds { delta: 0.1, radius: 0.1, memory: f64::INFINITY, max_events: Some(4) },
        ] {
            for i in [0usize, 5, 120, 299] {
                assert_eq!(
                    ScoreContext::from_slice(&ev, i, &needs),
                    ScoreContext::from_index(&ev, i, &idx, &needs)
                );
            }
        }
        let first = ScoreContext::from_slice(&ev, 0, &HistoryNeeds {
            delta: 0.1,
            radius: 0.1,
            memory: 1.0,
            max_events: None,
        });
        assert!(first.censored && first.t_n == 0.0 && first.history.is_empty());
    }
}
