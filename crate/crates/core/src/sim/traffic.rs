//! Lane queues and detector emulation.
//!
//! Arrivals are Poisson per lane per second. A lane with standing vehicles
//! discharges at the saturation flow while its phase is green; a fractional
//! accumulator turns the continuous discharge into whole-vehicle counts.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::config::IntersectionConfig;
use super::controller::{Indications, PhaseSet};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LaneState {
    /// Vehicles standing at the stop bar (fractional while discharging).
    pub queue: f64,
    /// Fractional part of the vehicles discharged so far.
    pub discharge_acc: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetectorOutput {
    pub actuation: bool,
    pub volume: u32,
    pub occupancy: f64,
    pub speed: f64,
}

/// One lane per detector, in configuration order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    pub lanes: Vec<LaneState>,
}

impl TrafficState {
    pub fn new(config: &IntersectionConfig) -> Self {
        TrafficState {
            lanes: vec![LaneState::default(); config.detectors.len()],
        }
    }
}

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|d| d.sample(rng) as u32).unwrap_or(0)
}

pub fn step_traffic<R: Rng + ?Sized>(
    state: &TrafficState,
    config: &IntersectionConfig,
    indications: &Indications,
    time_of_day: u32,
    rng: &mut R,
) -> (TrafficState, Vec<DetectorOutput>) {
    let t = &config.traffic;
    let mut next = state.clone();
    let mut outputs = Vec::with_capacity(config.detectors.len());
    for (det, lane) in config.detectors.iter().zip(next.lanes.iter_mut()) {
        let rate = config
            .arrival_model
            .vehicles
            .get(&det.approach)
            .map(|p| p.rate_at(time_of_day))
            .unwrap_or(0.0)
            * det.demand_scale;
        let arrivals = poisson(rate, rng);
        let out = if indications.is_green(det.phase) {
            if lane.queue <= 0.0 {
                // Nothing standing: arrivals pass at free-flow speed.
                DetectorOutput {
                    actuation: arrivals > 0,
                    volume: arrivals,
                    occupancy: (arrivals as f64 * t.vehicle_occupancy).min(1.0),
                    speed: if arrivals > 0 { t.free_flow_speed } else { 0.0 },
                }
            } else {
                lane.queue += arrivals as f64;
                let served = lane.queue.min(t.saturation_flow);
                lane.queue -= served;
                let acc = lane.discharge_acc + served;
                let volume = acc.floor();
                lane.discharge_acc = acc - volume;
                DetectorOutput {
                    actuation: true,
                    volume: volume as u32,
                    occupancy: (served / t.saturation_flow).min(1.0),
                    speed: t.discharge_speed,
                }
            }
        } else {
            lane.queue += arrivals as f64;
            let present = lane.queue > 0.0;
            DetectorOutput {
                actuation: present,
                volume: 0,
                occupancy: if present { 1.0 } else { 0.0 },
                speed: 0.0,
            }
        };
        outputs.push(out);
    }
    (next, outputs)
}

/// Phases with at least one actuated detector.
pub fn phase_actuations(config: &IntersectionConfig, outputs: &[DetectorOutput]) -> PhaseSet {
    config
        .detectors
        .iter()
        .zip(outputs)
        .filter(|(_, o)| o.actuation)
        .map(|(d, _)| d.phase)
        .collect()
}

/// Push-button presses during one second, one Poisson draw per ped phase.
pub fn ped_presses<R: Rng + ?Sized>(
    config: &IntersectionConfig,
    time_of_day: u32,
    rng: &mut R,
) -> PhaseSet {
    config
        .ped_phases
        .keys()
        .filter(|p| {
            let rate = config
                .arrival_model
                .pedestrians
                .get(p)
                .map(|r| r.rate_at(time_of_day))
                .unwrap_or(0.0);
            poisson(rate, rng) > 0
        })
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::RateProfile;
    use crate::sim::controller::Indication;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_lane(rate: f64, saturation: f64) -> IntersectionConfig {
        let mut cfg = IntersectionConfig::reference();
        cfg.detectors.truncate(1);
        cfg.detectors[0].demand_scale = 1.0;
        cfg.traffic.saturation_flow = saturation;
        cfg.arrival_model.vehicles.clear();
        cfg.arrival_model
            .vehicles
            .insert(cfg.detectors[0].approach.clone(), RateProfile(vec![(0, rate)]));
        cfg
    }

    fn showing(cfg: &IntersectionConfig, ind: Indication) -> Indications {
        Indications(cfg.phase_ids().map(|p| (p, ind)).collect())
    }

    #[test]
    fn zero_demand_is_a_fixed_point() {
        let cfg = IntersectionConfig::reference();
        let mut cfg = cfg;
        for p in cfg.arrival_model.vehicles.values_mut() {
            *p = RateProfile(vec![(0, 0.0)]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = TrafficState::new(&cfg);
        for ind in [Indication::Green, Indication::Red] {
            let (s1, out) = step_traffic(&s0, &cfg, &showing(&cfg, ind), 30_000, &mut rng);
            assert_eq!(s1, s0);
            assert!(out.iter().all(|o| *o == DetectorOutput::default()));
        }
    }

    #[test]
    fn queue_discharges_fractionally_on_green() {
        let cfg = single_lane(0.0, 0.5);
        let mut s = TrafficState::new(&cfg);
        s.lanes[0].queue = 5.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s1, out) = step_traffic(&s, &cfg, &showing(&cfg, Indication::Green), 0, &mut rng);
        assert_eq!(s1.lanes[0].queue, 4.5);
        assert!(out[0].actuation);
        assert_eq!(out[0].volume, 0);
        let (s2, out) = step_traffic(&s1, &cfg, &showing(&cfg, Indication::Green), 0, &mut rng);
        assert_eq!(s2.lanes[0].queue, 4.0);
        assert_eq!(out[0].volume, 1);
    }

    #[test]
    fn arrival_on_red_queues_and_occupies() {
        // Rate high enough that a draw of exactly one arrival turns up quickly.
        let cfg = single_lane(1.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = TrafficState::new(&cfg);
        let red = showing(&cfg, Indication::Red);
        let found = (0..100).any(|_| {
            let (s1, out) = step_traffic(&s, &cfg, &red, 0, &mut rng);
            if s1.lanes[0].queue == 1.0 {
                assert!(out[0].actuation);
                assert_eq!(out[0].occupancy, 1.0);
                assert_eq!(out[0].speed, 0.0);
                true
            } else {
                false
            }
        });
        assert!(found);
    }

    #[test]
    fn outputs_stay_in_range() {
        let cfg = IntersectionConfig::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = TrafficState::new(&cfg);
        for t in 0..2000u32 {
            let ind = if (t / 40) % 2 == 0 { Indication::Green } else { Indication::Red };
            let (n, out) = step_traffic(&s, &cfg, &showing(&cfg, ind), 30_000, &mut rng);
            for (lane, o) in n.lanes.iter().zip(&out) {
                assert!(lane.queue >= 0.0);
                assert!((0.0..=1.0).contains(&o.occupancy));
            }
            s = n;
        }
    }
}
