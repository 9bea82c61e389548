//! Debounced, edge-triggered occupancy alarms.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use wisense_csi::Occupancy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlarmKind {
    RoomEmpty,
    ContactDetected,
}

impl AlarmKind {
    /// The occupancy that raises this alarm, if any.
    pub fn for_label(label: Occupancy) -> Option<Self> {
        match label {
            Occupancy::Nobody => Some(AlarmKind::RoomEmpty),
            Occupancy::TwoPersons => Some(AlarmKind::ContactDetected),
            Occupancy::OnePerson => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub kind: AlarmKind,
    pub timestamp_us: u64,
    pub window_id: u64,
    pub rod_probs: Vec<f64>,
}

/// Alarm raised by the newest entry of `history`, if any.
///
/// The debounced state is the label shared by the last `debounce` windows.
/// An alarm fires when that state is {nobody, two persons} and it was not
/// already the debounced state one window earlier.
pub fn alarm_decision(history: &[Occupancy], debounce: usize) -> Option<AlarmKind> {
    let debounce = debounce.max(1);
    if history.len() < debounce {
        return None;
    }
    let tail = &history[history.len() - debounce..];
    let state = tail[0];
    if tail.iter().any(|l| *l != state) {
        return None;
    }
    let kind = AlarmKind::for_label(state)?;
    let held_before = history.len() > debounce && history[history.len() - debounce - 1] == state;
    (!held_before).then_some(kind)
}

/// Streaming form of [`alarm_decision`] that keeps only the labels it needs.
#[derive(Clone, Debug)]
pub struct AlarmTracker {
    debounce: usize,
    recent: VecDeque<Occupancy>,
}

impl AlarmTracker {
    pub fn new(debounce: usize) -> Self {
        let debounce = debounce.max(1);
        AlarmTracker {
            debounce,
            recent: VecDeque::with_capacity(debounce + 1),
        }
    }

    pub fn observe(&mut self, label: Occupancy) -> Option<AlarmKind> {
        if self.recent.len() == self.debounce + 1 {
            self.recent.pop_front();
        }
        self.recent.push_back(label);
        alarm_decision(self.recent.make_contiguous(), self.debounce)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Occupancy::{Nobody as N, OnePerson as O, TwoPersons as T};

    fn fired(labels: &[Occupancy], debounce: usize) -> Vec<(usize, AlarmKind)> {
        let mut t = AlarmTracker::new(debounce);
        labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| t.observe(*l).map(|k| (i, k)))
            .collect()
    }

    #[test]
    fn documented_sequences() {
        assert_eq!(alarm_decision(&[O, O, N, N], 2), Some(AlarmKind::RoomEmpty));
        assert_eq!(fired(&[O, O, N, N], 2), [(3, AlarmKind::RoomEmpty)]);
        assert_eq!(fired(&[N, N, N], 2), [(1, AlarmKind::RoomEmpty)]);
        assert!(fired(&[T, O, T, O], 2).is_empty());
        assert!(fired(&[T], 2).is_empty());
        assert_eq!(fired(&[T], 1), [(0, AlarmKind::ContactDetected)]);
    }

    #[test]
    fn refires_only_after_leaving() {
        assert_eq!(
            fired(&[N, N, O, N, N, T, T, T], 2),
            [(1, AlarmKind::RoomEmpty), (4, AlarmKind::RoomEmpty), (6, AlarmKind::ContactDetected)]
        );
    }

    fn label() -> impl Strategy<Value = Occupancy> {
        prop_oneof![Just(N), Just(O), Just(T)]
    }

    /// Entries into a debounced alarm state, counted from the definition.
    fn entries(labels: &[Occupancy], d: usize) -> usize {
        let state = |i: usize| -> Option<Occupancy> {
            (i + 1 >= d && labels[i + 1 - d..=i].iter().all(|l| *l == labels[i])).then_some(labels[i])
        };
        (0..labels.len())
            .filter(|&i| {
                let s = state(i).filter(|s| *s != O);
                s.is_some() && (i == 0 || state(i - 1) != s)
            })
            .count()
    }

    proptest! {
        #[test]
        fn tracker_matches_full_history(labels in prop::collection::vec(label(), 0..60), d in 1usize..5) {
            let mut t = AlarmTracker::new(d);
            for i in 0..labels.len() {
                prop_assert_eq!(t.observe(labels[i]), alarm_decision(&labels[..=i], d));
            }
        }

        #[test]
        fn one_event_per_state_entry(labels in prop::collection::vec(label(), 0..60), d in 1usize..5) {
            prop_assert_eq!(fired(&labels, d).len(), entries(&labels, d));
        }
    }
}
