//! Intersection configuration: phases, ring-barrier layout, detectors,
//! time-of-day plans, demand profiles and feed corruption settings.
//!
//! The on-disk form is TOML (see `docs/config.md`). [`IntersectionConfig`]
//! is the validated form; every constructor goes through
//! [`IntersectionConfig::validate`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PhaseId = u8;

pub const SECONDS_PER_DAY: u32 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub id: PhaseId,
    pub ring: u8,
    pub barrier_group: u8,
    pub min_green: u32,
    pub max_green: u32,
    pub yellow: u32,
    pub all_red: u32,
    pub gap_extension: u32,
    #[serde(default)]
    pub coordinated: bool,
}

impl PhaseConfig {
    pub fn clearance(&self) -> u32 {
        self.yellow + self.all_red
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedTiming {
    pub walk: u32,
    pub flashing_clearance: u32,
}

impl PedTiming {
    pub fn total(&self) -> u32 {
        self.walk + self.flashing_clearance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub id: u8,
    pub approach: String,
    pub lane: u8,
    pub phase: PhaseId,
    /// Multiplier on the approach's per-lane arrival rate.
    #[serde(default = "one")]
    pub demand_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub id: u32,
    pub cycle_length: u32,
    pub offset: u32,
    /// Allotted seconds per phase, clearance included.
    pub splits: BTreeMap<PhaseId, u32>,
}

impl PlanConfig {
    pub fn split(&self, phase: PhaseId) -> u32 {
        self.splits.get(&phase).copied().unwrap_or(0)
    }
}

/// Piecewise-constant rate profile over time of day: `(start s, rate per s)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateProfile(pub Vec<(u32, f64)>);

impl RateProfile {
    pub fn rate_at(&self, time_of_day: u32) -> f64 {
        self.0
            .iter()
            .take_while(|(start, _)| *start <= time_of_day)
            .last()
            .map(|&(_, r)| r)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    /// Per-lane vehicle arrival rate (veh/s) keyed by approach name.
    pub vehicles: BTreeMap<String, RateProfile>,
    /// Pedestrian push-button call rate (calls/s) keyed by vehicle phase.
    pub pedestrians: BTreeMap<PhaseId, RateProfile>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedCorruption {
    pub dropout_prob: f64,
    pub duplicate_prob: f64,
}

/// Emitted span of a simulated day, as seconds of day. `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingSpan {
    pub start: u32,
    pub end: u32,
    /// Seconds simulated before `start` without emitting records.
    pub warmup: u32,
}

impl OperatingSpan {
    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficParams {
    /// Discharge rate of a queued lane on green, veh/s/lane.
    pub saturation_flow: f64,
    /// Speed reported for free-flowing vehicles, m/s.
    pub free_flow_speed: f64,
    /// Speed reported while a queue discharges, m/s.
    pub discharge_speed: f64,
    /// Seconds a free-flowing vehicle occupies a detector.
    pub vehicle_occupancy: f64,
}

/// One ring's phase sequence, split by barrier group in cycle order.
#[derive(Debug, Clone, PartialEq)]
pub struct RingLayout {
    pub ring: u8,
    /// `groups[g]` lists this ring's phases served in cycle group `g`.
    pub groups: Vec<Vec<PhaseId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionConfig {
    pub phases: Vec<PhaseConfig>,
    pub overlaps: Vec<(PhaseId, PhaseId)>,
    pub ped_phases: BTreeMap<PhaseId, PedTiming>,
    pub detectors: Vec<DetectorConfig>,
    pub tod_schedule: Vec<(u32, PlanConfig)>,
    pub arrival_model: ArrivalModel,
    pub traffic: TrafficParams,
    pub feed_corruption: FeedCorruption,
    pub span: OperatingSpan,
    /// Barrier groups in cycle order; the coordinated group comes first.
    pub group_order: Vec<u8>,
    pub rings: Vec<RingLayout>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    id: u32,
    cycle_length: u32,
    offset: u32,
    splits: BTreeMap<String, u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheduleEntry {
    start: u32,
    plan: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPed {
    phase: PhaseId,
    walk: u32,
    flashing_clearance: u32,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArrivals {
    #[serde(default)]
    vehicles: BTreeMap<String, Vec<(u32, f64)>>,
    #[serde(default)]
    pedestrians: BTreeMap<String, Vec<(u32, f64)>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    span: OperatingSpan,
    traffic: TrafficParams,
    #[serde(default)]
    feed_corruption: FeedCorruption,
    phases: Vec<PhaseConfig>,
    #[serde(default)]
    overlaps: Vec<(PhaseId, PhaseId)>,
    #[serde(default)]
    ped_phases: Vec<RawPed>,
    detectors: Vec<DetectorConfig>,
    plans: Vec<RawPlan>,
    schedule: Vec<RawScheduleEntry>,
    #[serde(default)]
    arrivals: RawArrivals,
}

fn parse_phase_key(key: &str) -> Result<PhaseId> {
    key.trim_start_matches('p')
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` is not a phase id")))
}

impl IntersectionConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;

        let mut plans = BTreeMap::new();
        for p in raw.plans {
            let mut splits = BTreeMap::new();
            for (k, v) in p.splits {
                splits.insert(parse_phase_key(&k)?, v);
            }
            let plan = PlanConfig {
                id: p.id,
                cycle_length: p.cycle_length,
                offset: p.offset,
                splits,
            };
            if plans.insert(p.id, plan).is_some() {
                return Err(Error::Config(format!("plan {} defined twice", p.id)));
            }
        }
        let tod_schedule = raw
            .schedule
            .iter()
            .map(|e| {
                plans
                    .get(&e.plan)
                    .cloned()
                    .map(|p| (e.start, p))
                    .ok_or_else(|| Error::Config(format!("schedule names unknown plan {}", e.plan)))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut pedestrians = BTreeMap::new();
        for (k, v) in raw.arrivals.pedestrians {
            pedestrians.insert(parse_phase_key(&k)?, RateProfile(v));
        }
        let arrival_model = ArrivalModel {
            vehicles: raw
                .arrivals
                .vehicles
                .into_iter()
                .map(|(k, v)| (k, RateProfile(v)))
                .collect(),
            pedestrians,
        };

        let ped_phases = raw
            .ped_phases
            .iter()
            .map(|p| {
                (
                    p.phase,
                    PedTiming {
                        walk: p.walk,
                        flashing_clearance: p.flashing_clearance,
                    },
                )
            })
            .collect();

        Self::new(
            raw.phases,
            raw.overlaps,
            ped_phases,
            raw.detectors,
            tod_schedule,
            arrival_model,
            raw.traffic,
            raw.feed_corruption,
            raw.span,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        phases: Vec<PhaseConfig>,
        overlaps: Vec<(PhaseId, PhaseId)>,
        ped_phases: BTreeMap<PhaseId, PedTiming>,
        detectors: Vec<DetectorConfig>,
        tod_schedule: Vec<(u32, PlanConfig)>,
        arrival_model: ArrivalModel,
        traffic: TrafficParams,
        feed_corruption: FeedCorruption,
        span: OperatingSpan,
    ) -> Result<Self> {
        let mut cfg = IntersectionConfig {
            phases,
            overlaps,
            ped_phases,
            detectors,
            tod_schedule,
            arrival_model,
            traffic,
            feed_corruption,
            span,
            group_order: Vec::new(),
            rings: Vec::new(),
        };
        cfg.derive_layout()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn phase(&self, id: PhaseId) -> &PhaseConfig {
        self.phases
            .iter()
            .find(|p| p.id == id)
            .expect("phase ids are validated at construction")
    }

    pub fn phase_ids(&self) -> impl Iterator<Item = PhaseId> + '_ {
        self.phases.iter().map(|p| p.id)
    }

    pub fn coordinated_phases(&self) -> impl Iterator<Item = PhaseId> + '_ {
        self.phases.iter().filter(|p| p.coordinated).map(|p| p.id)
    }

    /// Index of a phase's barrier group within [`Self::group_order`].
    pub fn group_index(&self, phase: PhaseId) -> usize {
        let g = self.phase(phase).barrier_group;
        self.group_order.iter().position(|&x| x == g).unwrap()
    }

    fn derive_layout(&mut self) -> Result<()> {
        let coord_groups: Vec<u8> = {
            let mut g: Vec<u8> = self
                .phases
                .iter()
                .filter(|p| p.coordinated)
                .map(|p| p.barrier_group)
                .collect();
            g.sort_unstable();
            g.dedup();
            g
        };
        if coord_groups.len() != 1 {
            return Err(Error::Config(
                "coordinated phases must all sit in exactly one barrier group".into(),
            ));
        }
        let mut groups: Vec<u8> = self.phases.iter().map(|p| p.barrier_group).collect();
        groups.sort_unstable();
        groups.dedup();
        let first = groups.iter().position(|&g| g == coord_groups[0]).unwrap();
        groups.rotate_left(first);
        self.group_order = groups;

        let mut ring_ids: Vec<u8> = self.phases.iter().map(|p| p.ring).collect();
        ring_ids.sort_unstable();
        ring_ids.dedup();
        self.rings = ring_ids
            .iter()
            .map(|&ring| RingLayout {
                ring,
                groups: self
                    .group_order
                    .iter()
                    .map(|&g| {
                        self.phases
                            .iter()
                            .filter(|p| p.ring == ring && p.barrier_group == g)
                            .map(|p| p.id)
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        Ok(())
    }

    /// Length of each barrier group (cycle order) under a plan.
    pub fn group_lengths(&self, plan: &PlanConfig) -> Vec<u32> {
        (0..self.group_order.len())
            .map(|g| {
                self.rings
                    .iter()
                    .map(|r| r.groups[g].iter().map(|&p| plan.split(p)).sum::<u32>())
                    .max()
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Cycle second at which each ring's coordinated phase must begin its
    /// clearance so that every ring reaches the barrier together.
    pub fn yield_points(&self, plan: &PlanConfig) -> BTreeMap<u8, u32> {
        let coord_len = self.group_lengths(plan)[0];
        self.rings
            .iter()
            .filter_map(|r| {
                r.groups[0]
                    .last()
                    .map(|&p| (r.ring, coord_len - self.phase(p).clearance()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.phases {
            if !seen.insert(p.id) {
                return bad(format!("phase {} defined twice", p.id));
            }
            if p.min_green == 0 || p.max_green == 0 || p.yellow == 0 || p.gap_extension == 0 {
                return bad(format!("phase {}: durations must be positive", p.id));
            }
            if p.min_green > p.max_green {
                return bad(format!("phase {}: min-green exceeds max-green", p.id));
            }
        }
        for r in &self.rings {
            let coord_group = &r.groups[0];
            let n_coord = coord_group
                .iter()
                .filter(|&&p| self.phase(p).coordinated)
                .count();
            if !coord_group.is_empty() && n_coord != 1 {
                return bad(format!(
                    "ring {} needs exactly one coordinated phase in the coordinated group",
                    r.ring
                ));
            }
            if let Some(&last) = coord_group.last() {
                if !self.phase(last).coordinated {
                    return bad(format!(
                        "ring {}: coordinated phase must be last in its barrier group",
                        r.ring
                    ));
                }
            }
        }
        if self.rings.iter().all(|r| r.groups[0].is_empty()) {
            return bad("no coordinated phase".into());
        }
        for &(a, b) in &self.overlaps {
            if !seen.contains(&a) || !seen.contains(&b) {
                return bad(format!("overlap ({a}, {b}) names an unknown phase"));
            }
            if self.phase(a).barrier_group != self.phase(b).barrier_group {
                return bad(format!("overlap ({a}, {b}) crosses a barrier"));
            }
        }
        for (&p, ped) in &self.ped_phases {
            if !seen.contains(&p) {
                return bad(format!("pedestrian phase on unknown phase {p}"));
            }
            if ped.walk == 0 || ped.flashing_clearance == 0 {
                return bad(format!("pedestrian phase {p}: durations must be positive"));
            }
            let ph = self.phase(p);
            if !ph.coordinated && ped.total() > ph.max_green {
                return bad(format!(
                    "pedestrian phase {p}: walk + clearance exceeds max-green"
                ));
            }
        }
        for d in &self.detectors {
            if !seen.contains(&d.phase) {
                return bad(format!("detector {} owned by unknown phase {}", d.id, d.phase));
            }
            if d.demand_scale < 0.0 || !d.demand_scale.is_finite() {
                return bad(format!("detector {}: bad demand scale", d.id));
            }
        }
        if self.tod_schedule.is_empty() {
            return bad("empty time-of-day schedule".into());
        }
        for w in self.tod_schedule.windows(2) {
            if w[0].0 >= w[1].0 {
                return bad("schedule start times must be strictly increasing".into());
            }
        }
        let first_instant = self.span.start.saturating_sub(self.span.warmup);
        if self.tod_schedule[0].0 > first_instant {
            return bad(format!(
                "schedule starts at {} s but simulation starts at {} s",
                self.tod_schedule[0].0, first_instant
            ));
        }
        if self.span.is_empty() || self.span.end > SECONDS_PER_DAY || self.span.warmup > self.span.start {
            return bad("operating span must satisfy warmup <= start < end <= 86400".into());
        }
        for (_, plan) in &self.tod_schedule {
            self.validate_plan(plan)?;
        }
        let fc = &self.feed_corruption;
        for p in [fc.dropout_prob, fc.duplicate_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("corruption probabilities must lie in [0, 1]".into());
            }
        }
        let t = &self.traffic;
        if !(t.saturation_flow > 0.0) || t.free_flow_speed < 0.0 || t.discharge_speed < 0.0 {
            return bad("traffic parameters must be positive".into());
        }
        for profile in self
            .arrival_model
            .vehicles
            .values()
            .chain(self.arrival_model.pedestrians.values())
        {
            if profile.0.iter().any(|&(_, r)| !(r >= 0.0) || !r.is_finite()) {
                return bad("arrival rates must be finite and non-negative".into());
            }
        }
        Ok(())
    }

    fn validate_plan(&self, plan: &PlanConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("plan {}: {m}", plan.id)));
        if plan.offset >= plan.cycle_length {
            return bad("offset must be below the cycle length".into());
        }
        for p in &self.phases {
            let split = plan.split(p.id);
            let need = p.clearance()
                + p.min_green.max(
                    self.ped_phases
                        .get(&p.id)
                        .map(PedTiming::total)
                        .unwrap_or(0),
                );
            if split < need {
                return bad(format!(
                    "split {split} for phase {} cannot hold its minimum service {need}",
                    p.id
                ));
            }
        }
        for (g, _) in self.group_order.iter().enumerate() {
            let sums: Vec<u32> = self
                .rings
                .iter()
                .filter(|r| !r.groups[g].is_empty())
                .map(|r| r.groups[g].iter().map(|&p| plan.split(p)).sum())
                .collect();
            if sums.windows(2).any(|w| w[0] != w[1]) {
                return bad(format!("rings disagree on barrier group length: {sums:?}"));
            }
        }
        let total: u32 = self.group_lengths(plan).iter().sum();
        if total != plan.cycle_length {
            return bad(format!(
                "splits sum to {total} but the cycle length is {}",
                plan.cycle_length
            ));
        }
        Ok(())
    }

    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_INTERSECTION).expect("bundled reference config is valid")
    }
}

/// The committed reference intersection (6 phases, 18 detectors, 3 pedestrian
/// phases, split east-west phasing).
pub const REFERENCE_INTERSECTION: &str =
    include_str!("../../../../configs/reference-intersection.toml");

/// Latest schedule entry whose start is at or before `time_of_day`.
pub fn build_plan(config: &IntersectionConfig, time_of_day: u32) -> Result<PlanConfig> {
    if time_of_day >= SECONDS_PER_DAY {
        return Err(Error::UncoveredTime(time_of_day));
    }
    config
        .tod_schedule
        .iter()
        .take_while(|(start, _)| *start <= time_of_day)
        .last()
        .map(|(_, p)| p.clone())
        .ok_or(Error::UncoveredTime(time_of_day))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(id: u32) -> PlanConfig {
        let reference = IntersectionConfig::reference();
        let mut p = reference.tod_schedule[0].1.clone();
        p.id = id;
        p
    }

    fn with_schedule(entries: Vec<(u32, PlanConfig)>) -> IntersectionConfig {
        let mut cfg = IntersectionConfig::reference();
        cfg.tod_schedule = entries;
        cfg
    }

    #[test]
    fn plan_lookup_is_inclusive_on_start() {
        let cfg = with_schedule(vec![(21600, plan(1)), (36000, plan(2))]);
        assert_eq!(build_plan(&cfg, 21600).unwrap().id, 1);
        assert_eq!(build_plan(&cfg, 35999).unwrap().id, 1);
        assert_eq!(build_plan(&cfg, 36000).unwrap().id, 2);
    }

    #[test]
    fn plan_lookup_before_first_entry_is_uncovered() {
        let cfg = with_schedule(vec![(21600, plan(1))]);
        assert!(matches!(build_plan(&cfg, 0), Err(Error::UncoveredTime(0))));
        assert!(matches!(build_plan(&cfg, 86400), Err(Error::UncoveredTime(_))));
    }

    #[test]
    fn reference_layout() {
        let cfg = IntersectionConfig::reference();
        assert_eq!(cfg.phases.len(), 6);
        assert_eq!(cfg.detectors.len(), 18);
        assert_eq!(cfg.ped_phases.keys().copied().collect::<Vec<_>>(), vec![2, 4, 6]);
        assert_eq!(cfg.group_order, vec![1, 2]);
        assert_eq!(cfg.rings[0].groups, vec![vec![1, 2], vec![3, 4]]);
        assert_eq!(cfg.rings[1].groups, vec![vec![5, 6], vec![]]);
        assert_eq!(cfg.coordinated_phases().collect::<Vec<_>>(), vec![2, 6]);
        for p in &cfg.phases {
            let ring = if p.id <= 4 { 1 } else { 2 };
            assert_eq!(p.ring, ring);
            let group = if p.id == 3 || p.id == 4 { 2 } else { 1 };
            assert_eq!(p.barrier_group, group);
        }
    }

    #[test]
    fn split_sum_must_match_cycle() {
        let mut cfg = IntersectionConfig::reference();
        let mut p = cfg.tod_schedule[0].1.clone();
        *p.splits.get_mut(&3).unwrap() += 1;
        cfg.tod_schedule[0].1 = p;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn min_above_max_rejected() {
        let mut cfg = IntersectionConfig::reference();
        cfg.phases[0].min_green = cfg.phases[0].max_green + 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rate_profile_steps() {
        let r = RateProfile(vec![(0, 0.1), (100, 0.5)]);
        assert_eq!(r.rate_at(0), 0.1);
        assert_eq!(r.rate_at(99), 0.1);
        assert_eq!(r.rate_at(100), 0.5);
        assert_eq!(RateProfile(vec![(10, 1.0)]).rate_at(5), 0.0);
    }
}
