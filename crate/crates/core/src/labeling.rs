//! Supervised targets: seconds until each phase's green/not-green indication
//! flips, capped at the horizon and masked where the flip is uncertifiable.

use crate::ingest::flatten::{FlatRow, Leaf};
use crate::sim::record::phase_state_key;
use crate::sim::PhaseId;

/// Number of predicted phases.
pub const PHASES: usize = 6;
/// Prediction horizon in seconds.
pub const HORIZON: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetState {
    Green,
    NotGreen,
    Missing,
}

/// Yellow counts as not-green. This is the only place that convention lives.
pub fn fold_indication(label: Option<&str>) -> TargetState {
    match label {
        Some("green") => TargetState::Green,
        Some("yellow") | Some("red") => TargetState::NotGreen,
        _ => TargetState::Missing,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTargets {
    pub timestamp: i64,
    pub remaining: [Option<u16>; PHASES],
    pub normalized: [Option<f64>; PHASES],
}

impl PhaseTargets {
    pub fn mask(&self) -> [bool; PHASES] {
        self.remaining.map(|r| r.is_some())
    }

    pub fn any_valid(&self) -> bool {
        self.remaining.iter().any(Option::is_some)
    }
}

/// Folded states of `phases` in one row.
pub fn row_phase_states(row: &FlatRow, phases: &[PhaseId; PHASES]) -> [TargetState; PHASES] {
    std::array::from_fn(|j| match row.get(&phase_state_key(phases[j])) {
        Leaf::Label(s) => fold_indication(Some(s)),
        _ => TargetState::Missing,
    })
}

/// Per-second folded states read from a reindexed grid.
pub fn phase_states(grid: &[Option<FlatRow>], phases: &[PhaseId; PHASES]) -> Vec<[TargetState; PHASES]> {
    grid.iter()
        .map(|row| match row {
            Some(r) => row_phase_states(r, phases),
            None => [TargetState::Missing; PHASES],
        })
        .collect()
}

/// Backward rolling recurrence: a second that keeps its state into the next
/// second inherits that second's remaining time plus one.
pub fn compute_targets(states: &[[TargetState; PHASES]], start: i64, horizon: u32) -> Vec<PhaseTargets> {
    let n = states.len();
    let mut out = vec![
        PhaseTargets {
            timestamp: 0,
            remaining: [None; PHASES],
            normalized: [None; PHASES],
        };
        n
    ];
    for t in (0..n).rev() {
        out[t].timestamp = start + t as i64;
        for p in 0..PHASES {
            let s = states[t][p];
            if s == TargetState::Missing || t + 1 == n {
                continue;
            }
            let next = states[t + 1][p];
            let r = match next {
                TargetState::Missing => None,
                x if x != s => Some(1u32),
                _ => out[t + 1].remaining[p].map(|r| r as u32 + 1),
            };
            out[t].remaining[p] = r.filter(|&r| r <= horizon).map(|r| r as u16);
        }
    }
    normalize_targets(&mut out, horizon);
    out
}

pub fn normalize_targets(targets: &mut [PhaseTargets], horizon: u32) {
    for t in targets {
        t.normalized = t.remaining.map(|r| r.map(|r| r as f64 / horizon as f64));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use TargetState::*;

    fn scan(states: &[TargetState], t: usize, horizon: usize) -> Option<u16> {
        let s = states[t];
        if s == Missing {
            return None;
        }
        for k in 1..=horizon {
            match states.get(t + k) {
                None | Some(Missing) => return None,
                Some(&x) if x != s => return Some(k as u16),
                _ => {}
            }
        }
        None
    }

    fn one_phase(seq: &[TargetState]) -> Vec<[TargetState; PHASES]> {
        seq.iter().map(|&s| [s, Green, NotGreen, Missing, s, s]).collect()
    }

    #[test]
    fn three_seconds_to_red() {
        let t = compute_targets(&one_phase(&[Green, Green, Green, NotGreen]), 10, 200);
        assert_eq!(t[0].remaining[0], Some(3));
        assert_eq!(t[0].timestamp, 10);
        assert_eq!(t[3].remaining[0], None);
    }

    #[test]
    fn beyond_horizon_is_masked() {
        let mut seq = vec![Green; 250];
        seq.push(NotGreen);
        let t = compute_targets(&one_phase(&seq), 0, 200);
        assert_eq!(t[0].remaining[0], None);
        assert_eq!(t[50].remaining[0], Some(200));
        assert_eq!(t[50].normalized[0], Some(1.0));
    }

    #[test]
    fn missing_blocks_certification() {
        let t = compute_targets(&one_phase(&[Green, Missing, NotGreen]), 0, 200);
        assert_eq!(t[0].remaining[0], None);
    }

    #[test]
    fn yellow_is_not_green() {
        assert_eq!(fold_indication(Some("yellow")), NotGreen);
        assert_eq!(fold_indication(None), Missing);
    }

    #[test]
    fn normalization() {
        let mut t = vec![PhaseTargets {
            timestamp: 0,
            remaining: [Some(200), Some(50), None, None, None, None],
            normalized: [None; PHASES],
        }];
        normalize_targets(&mut t, 200);
        assert_eq!(t[0].normalized[..3], [Some(1.0), Some(0.25), None]);
    }

    fn state() -> impl Strategy<Value = TargetState> {
        prop_oneof![4 => Just(Green), 4 => Just(NotGreen), 1 => Just(Missing)]
    }

    proptest! {
        #[test]
        fn rolling_equals_scan(seq in prop::collection::vec(state(), 1..400), horizon in 1usize..60) {
            let t = compute_targets(&one_phase(&seq), 0, horizon as u32);
            for i in 0..seq.len() {
                prop_assert_eq!(t[i].remaining[0], scan(&seq, i, horizon));
            }
        }

        #[test]
        fn valid_entries_mark_the_first_switch(seq in prop::collection::vec(state(), 1..300)) {
            let t = compute_targets(&one_phase(&seq), 0, 200);
            for i in 0..seq.len() {
                if let Some(r) = t[i].remaining[0] {
                    let r = r as usize;
                    prop_assert!(r >= 1);
                    prop_assert_ne!(seq[i + r], seq[i]);
                    prop_assert!((1..r).all(|j| seq[i + j] == seq[i]));
                }
            }
        }
    }
}
