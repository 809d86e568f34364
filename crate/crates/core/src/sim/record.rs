//! The per-second wire record. Field names are the contract consumed by
//! `ingest`; see `docs/record-schema.md`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{IntersectionConfig, PhaseId};
use super::controller::{ControllerState, ExitMode, Indication, Indications, PedInterval, PhaseSet};
use super::traffic::DetectorOutput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStatus {
    pub id: u32,
    pub cycle_length: u32,
    pub offset: u32,
    pub cycle_second: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStatus {
    pub state: Indication,
    pub exit_mode: ExitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalStatus {
    pub plan: PlanStatus,
    pub phases: BTreeMap<String, PhaseStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedStatus {
    pub state: PedInterval,
    pub call: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorStatus {
    pub actuation: u8,
    pub volume: u32,
    pub occupancy: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSecondRecord {
    pub timestamp: i64,
    pub signal: SignalStatus,
    pub pedestrian: BTreeMap<String, PedStatus>,
    pub detectors: BTreeMap<String, DetectorStatus>,
}

pub fn phase_key(p: PhaseId) -> String {
    format!("p{p}")
}

pub fn detector_key(id: u8) -> String {
    format!("d{id:02}")
}

/// Flattened key of a phase's signal state.
pub fn phase_state_key(p: PhaseId) -> String {
    format!("signal.phases.{}.state", phase_key(p))
}

impl PerSecondRecord {
    pub fn capture(
        config: &IntersectionConfig,
        state: &ControllerState,
        indications: &Indications,
        detectors: &[DetectorOutput],
        presses: PhaseSet,
    ) -> Self {
        let phases = indications
            .0
            .iter()
            .map(|&(p, ind)| {
                (
                    phase_key(p),
                    PhaseStatus {
                        state: ind,
                        exit_mode: state.exit_modes.get(&p).copied().unwrap_or(ExitMode::None),
                    },
                )
            })
            .collect();
        let pedestrian = config
            .ped_phases
            .keys()
            .map(|&p| {
                let call = state.ped_calls.contains(p) || presses.contains(p);
                (
                    phase_key(p),
                    PedStatus {
                        state: state.ped_interval(p),
                        call: call as u8,
                    },
                )
            })
            .collect();
        let detectors = config
            .detectors
            .iter()
            .zip(detectors)
            .map(|(d, o)| {
                (
                    detector_key(d.id),
                    DetectorStatus {
                        actuation: o.actuation as u8,
                        volume: o.volume,
                        occupancy: o.occupancy,
                        speed: o.speed,
                    },
                )
            })
            .collect();
        PerSecondRecord {
            timestamp: state.clock,
            signal: SignalStatus {
                plan: PlanStatus {
                    id: state.plan.id,
                    cycle_length: state.plan.cycle_length,
                    offset: state.plan.offset,
                    cycle_second: state.cycle_second,
                },
                phases,
            },
            pedestrian,
            detectors,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}
