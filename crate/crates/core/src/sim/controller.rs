//! Coordinated-actuated NEMA ring-barrier controller, one tick per second.
//!
//! Timing model:
//! - The coordinated group is served first in the cycle; within it each
//!   ring's coordinated phase comes last and is forced off at its yield
//!   point so every ring reaches the barrier together.
//! - Coordinated phases only leave green when a conflicting call is
//!   pending at the yield point; otherwise they dwell for another cycle.
//! - Non-coordinated greens end by gap-out, max-out or force-off. Force-off
//!   is floating: a phase may hold green for at most its split minus its
//!   clearance, counted from its own onset. Slack from skips and early
//!   gap-outs therefore flows forward to the coordinated phases.
//! - A plan change waits for the old plan's yield point, then the
//!   coordinated phases dwell until the new plan's yield point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{IntersectionConfig, PhaseId, PlanConfig};
use crate::error::{Error, Result};

/// Bit set of phase ids (ids below 64).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct PhaseSet(u64);

impl PhaseSet {
    pub const EMPTY: PhaseSet = PhaseSet(0);

    pub fn insert(&mut self, p: PhaseId) {
        self.0 |= 1u64 << p;
    }

    pub fn remove(&mut self, p: PhaseId) {
        self.0 &= !(1u64 << p);
    }

    pub fn contains(&self, p: PhaseId) -> bool {
        self.0 & (1u64 << p) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = PhaseId> + '_ {
        (0..64u8).filter(move |&p| self.contains(p))
    }
}

impl FromIterator<PhaseId> for PhaseSet {
    fn from_iter<I: IntoIterator<Item = PhaseId>>(iter: I) -> Self {
        let mut s = PhaseSet::EMPTY;
        for p in iter {
            s.insert(p);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Indication {
    Green,
    Yellow,
    Red,
}

impl Indication {
    pub fn as_str(self) -> &'static str {
        match self {
            Indication::Green => "green",
            Indication::Yellow => "yellow",
            Indication::Red => "red",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interval {
    Green,
    Yellow,
    AllRed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitMode {
    GapOut,
    MaxOut,
    ForceOff,
    Skip,
    None,
}

impl ExitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitMode::GapOut => "gap-out",
            ExitMode::MaxOut => "max-out",
            ExitMode::ForceOff => "force-off",
            ExitMode::Skip => "skip",
            ExitMode::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PedInterval {
    Walk,
    Flashing,
    DontWalk,
}

impl PedInterval {
    pub fn as_str(self) -> &'static str {
        match self {
            PedInterval::Walk => "walk",
            PedInterval::Flashing => "flashing",
            PedInterval::DontWalk => "dont-walk",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingState {
    pub ring: u8,
    /// Active phase; `None` while the ring rests at the barrier.
    pub phase: Option<PhaseId>,
    pub interval: Interval,
    /// Seconds the current interval has been shown, current second included.
    pub elapsed: u32,
    /// Consecutive seconds without an actuation on the green phase.
    pub quiet: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedState {
    pub interval: PedInterval,
    pub elapsed: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub clock: i64,
    pub rings: Vec<RingState>,
    /// Index into `IntersectionConfig::group_order`.
    pub group: usize,
    /// Latched vehicle calls.
    pub calls: PhaseSet,
    /// Latched pedestrian calls, keyed by vehicle phase.
    pub ped_calls: PhaseSet,
    pub ped: BTreeMap<PhaseId, PedState>,
    pub plan: PlanConfig,
    pub pending_plan: Option<PlanConfig>,
    /// A new plan was adopted; coordinated phases hold until its yield point.
    pub syncing: bool,
    /// The coordinated phases terminate at this cycle's yield point.
    pub yield_committed: bool,
    pub cycle_second: u32,
    pub exit_modes: BTreeMap<PhaseId, ExitMode>,
}

/// Per-phase indications for one second, in configuration phase order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Indications(pub Vec<(PhaseId, Indication)>);

impl Indications {
    pub fn get(&self, phase: PhaseId) -> Indication {
        self.0
            .iter()
            .find(|(p, _)| *p == phase)
            .map(|&(_, i)| i)
            .unwrap_or(Indication::Red)
    }

    pub fn is_green(&self, phase: PhaseId) -> bool {
        self.get(phase) == Indication::Green
    }

    pub fn greens(&self) -> impl Iterator<Item = PhaseId> + '_ {
        self.0
            .iter()
            .filter(|(_, i)| *i == Indication::Green)
            .map(|&(p, _)| p)
    }
}

fn cycle_second(plan: &PlanConfig, clock: i64) -> u32 {
    (clock - plan.offset as i64).rem_euclid(plan.cycle_length as i64) as u32
}

fn time_of_day(clock: i64) -> u32 {
    clock.rem_euclid(super::config::SECONDS_PER_DAY as i64) as u32
}

impl ControllerState {
    /// Controller resting in the coordinated phases at `clock`.
    pub fn new(config: &IntersectionConfig, clock: i64) -> Result<Self> {
        let plan = super::config::build_plan(config, time_of_day(clock))?;
        let rings = config
            .rings
            .iter()
            .map(|r| RingState {
                ring: r.ring,
                phase: r.groups[0].last().copied(),
                interval: Interval::Green,
                elapsed: 1,
                quiet: 0,
            })
            .collect();
        let ped = config
            .ped_phases
            .keys()
            .map(|&p| {
                (
                    p,
                    PedState {
                        interval: PedInterval::DontWalk,
                        elapsed: 1,
                    },
                )
            })
            .collect();
        Ok(ControllerState {
            clock,
            rings,
            group: 0,
            calls: PhaseSet::EMPTY,
            ped_calls: PhaseSet::EMPTY,
            ped,
            cycle_second: cycle_second(&plan, clock),
            plan,
            pending_plan: None,
            syncing: false,
            yield_committed: false,
            exit_modes: config.phase_ids().map(|p| (p, ExitMode::None)).collect(),
        })
    }

    pub fn indications(&self, config: &IntersectionConfig) -> Indications {
        Indications(
            config
                .phase_ids()
                .map(|p| {
                    let shown = self
                        .rings
                        .iter()
                        .find(|r| r.phase == Some(p))
                        .map(|r| match r.interval {
                            Interval::Green => Indication::Green,
                            Interval::Yellow => Indication::Yellow,
                            Interval::AllRed => Indication::Red,
                        })
                        .unwrap_or(Indication::Red);
                    (p, shown)
                })
                .collect(),
        )
    }

    pub fn ped_interval(&self, phase: PhaseId) -> PedInterval {
        self.ped
            .get(&phase)
            .map(|s| s.interval)
            .unwrap_or(PedInterval::DontWalk)
    }

    fn is_green(&self, phase: PhaseId) -> bool {
        self.rings
            .iter()
            .any(|r| r.phase == Some(phase) && r.interval == Interval::Green)
    }

    /// Pedestrian service on `phase` still needs the current second's
    /// successor to be green.
    fn ped_busy(&self, config: &IntersectionConfig, phase: PhaseId) -> bool {
        match (self.ped.get(&phase), config.ped_phases.get(&phase)) {
            (Some(s), Some(t)) => match s.interval {
                PedInterval::Walk => true,
                PedInterval::Flashing => s.elapsed < t.flashing_clearance,
                PedInterval::DontWalk => false,
            },
            _ => false,
        }
    }

    fn has_call(&self, config: &IntersectionConfig, phase: PhaseId) -> bool {
        config.phase(phase).coordinated
            || self.calls.contains(phase)
            || self.ped_calls.contains(phase)
    }

    fn conflicting_call_pending(&self, config: &IntersectionConfig) -> bool {
        config
            .phases
            .iter()
            .filter(|p| !p.coordinated)
            .any(|p| self.calls.contains(p.id) || self.ped_calls.contains(p.id))
    }

    fn start_green(&mut self, config: &IntersectionConfig, ring_idx: usize, phase: PhaseId) {
        let ring = &mut self.rings[ring_idx];
        ring.phase = Some(phase);
        ring.interval = Interval::Green;
        ring.elapsed = 1;
        ring.quiet = 0;
        self.calls.remove(phase);
        if !config.phase(phase).coordinated && self.ped_calls.contains(phase) {
            self.ped_calls.remove(phase);
            if let Some(s) = self.ped.get_mut(&phase) {
                *s = PedState {
                    interval: PedInterval::Walk,
                    elapsed: 1,
                };
            }
        }
    }

    /// Serve the first called phase of `ring_idx` in the current group
    /// strictly after sequence position `after`; passed phases are skipped.
    fn advance_ring(&mut self, config: &IntersectionConfig, ring_idx: usize, after: Option<usize>) -> bool {
        let seq = config.rings[ring_idx].groups[self.group].clone();
        let from = after.map(|i| i + 1).unwrap_or(0);
        for &p in &seq[from.min(seq.len())..] {
            if self.has_call(config, p) {
                self.start_green(config, ring_idx, p);
                return true;
            }
            self.exit_modes.insert(p, ExitMode::Skip);
        }
        let ring = &mut self.rings[ring_idx];
        ring.phase = None;
        ring.interval = Interval::AllRed;
        ring.elapsed = 0;
        false
    }

    fn cross_barrier(&mut self, config: &IntersectionConfig) {
        let n_groups = config.group_order.len();
        loop {
            self.group = (self.group + 1) % n_groups;
            let mut served = false;
            for ring_idx in 0..self.rings.len() {
                served |= self.advance_ring(config, ring_idx, None);
            }
            if self.group == 0 {
                self.yield_committed = false;
            }
            if served {
                return;
            }
        }
    }
}

/// Advance the controller by one second.
///
/// `actuations` and `ped_presses` are the detector and push-button inputs
/// observed during the second described by `state`; `scheduled` is the plan
/// the time-of-day schedule calls for at the new clock. Returns the state
/// and indications for the next second.
pub fn step_controller(
    state: &ControllerState,
    actuations: PhaseSet,
    ped_presses: PhaseSet,
    config: &IntersectionConfig,
    scheduled: &PlanConfig,
) -> Result<(ControllerState, Indications)> {
    let mut s = state.clone();
    s.clock += 1;

    for p in actuations.iter() {
        if !state.is_green(p) {
            s.calls.insert(p);
        }
    }
    for p in ped_presses.iter() {
        if config.ped_phases.contains_key(&p) && state.ped_interval(p) != PedInterval::Walk {
            s.ped_calls.insert(p);
        }
    }
    for ring in s.rings.iter_mut() {
        if let (Some(p), Interval::Green) = (ring.phase, ring.interval) {
            ring.quiet = if actuations.contains(p) { 0 } else { ring.quiet + 1 };
        }
    }

    if *scheduled != s.plan {
        s.pending_plan = Some(scheduled.clone());
    } else {
        s.pending_plan = None;
    }

    // Yield-point bookkeeping happens against the second being entered.
    let coordinated_green = s.group == 0
        && s.rings.iter().all(|r| match config.rings.iter().find(|l| l.ring == r.ring) {
            Some(l) if !l.groups[0].is_empty() => {
                r.phase == l.groups[0].last().copied() && r.interval == Interval::Green
            }
            _ => true,
        });
    let mut cs = cycle_second(&s.plan, s.clock);
    let min_yield = |plan: &PlanConfig| config.yield_points(plan).values().copied().min().unwrap();
    if coordinated_green && !s.yield_committed {
        if s.pending_plan.is_some() && !s.syncing && cs == min_yield(&s.plan) {
            s.plan = s.pending_plan.take().unwrap();
            s.syncing = true;
            cs = cycle_second(&s.plan, s.clock);
        }
        if cs == min_yield(&s.plan) {
            s.syncing = false;
            let coord_ped_busy = config
                .coordinated_phases()
                .any(|p| state.ped_busy(config, p));
            s.yield_committed = s.conflicting_call_pending(config) && !coord_ped_busy;
        }
    }
    s.cycle_second = cs;
    let yields = config.yield_points(&s.plan);

    // Pedestrian timers.
    for (p, ped) in s.ped.iter_mut() {
        let timing = config.ped_phases[p];
        match ped.interval {
            PedInterval::Walk if ped.elapsed >= timing.walk => {
                *ped = PedState {
                    interval: PedInterval::Flashing,
                    elapsed: 1,
                }
            }
            PedInterval::Flashing if ped.elapsed >= timing.flashing_clearance => {
                *ped = PedState {
                    interval: PedInterval::DontWalk,
                    elapsed: 1,
                }
            }
            _ => ped.elapsed += 1,
        }
    }

    // Ring timing.
    let mut finished: Vec<(usize, PhaseId)> = Vec::new();
    for ring_idx in 0..s.rings.len() {
        let ring = s.rings[ring_idx].clone();
        let Some(p) = ring.phase else { continue };
        let phase = config.phase(p);
        match ring.interval {
            Interval::Green => {
                let exit = if phase.coordinated {
                    let y = yields[&ring.ring];
                    (s.yield_committed && cs == y).then_some(ExitMode::ForceOff)
                } else {
                    let split_room = s.plan.split(p).saturating_sub(phase.clearance());
                    let limit = phase.max_green.min(split_room);
                    let busy = state.ped_busy(config, p);
                    if ring.elapsed >= limit {
                        if busy {
                            return Err(Error::InvariantViolation {
                                clock: s.clock,
                                detail: format!("phase {p} reached its green limit with pedestrians timing"),
                            });
                        }
                        Some(if phase.max_green <= split_room {
                            ExitMode::MaxOut
                        } else {
                            ExitMode::ForceOff
                        })
                    } else if ring.elapsed >= phase.min_green
                        && !busy
                        && ring.quiet >= phase.gap_extension
                    {
                        Some(ExitMode::GapOut)
                    } else {
                        None
                    }
                };
                let r = &mut s.rings[ring_idx];
                match exit {
                    Some(mode) => {
                        s.exit_modes.insert(p, mode);
                        r.interval = Interval::Yellow;
                        r.elapsed = 1;
                    }
                    None => r.elapsed += 1,
                }
            }
            Interval::Yellow => {
                let r = &mut s.rings[ring_idx];
                if r.elapsed >= phase.yellow {
                    if phase.all_red == 0 {
                        finished.push((ring_idx, p));
                    } else {
                        r.interval = Interval::AllRed;
                        r.elapsed = 1;
                    }
                } else {
                    r.elapsed += 1;
                }
            }
            Interval::AllRed => {
                let r = &mut s.rings[ring_idx];
                if r.elapsed >= phase.all_red {
                    finished.push((ring_idx, p));
                } else {
                    r.elapsed += 1;
                }
            }
        }
    }
    for (ring_idx, p) in finished {
        let pos = config.rings[ring_idx].groups[s.group]
            .iter()
            .position(|&q| q == p);
        s.advance_ring(config, ring_idx, pos);
    }
    if s.rings.iter().all(|r| r.phase.is_none()) {
        s.cross_barrier(config);
    }

    // Walk for coordinated phases starts only if it clears before the
    // next yield point.
    if !s.syncing {
        for ring in &s.rings {
            let Some(p) = ring.phase else { continue };
            if !config.phase(p).coordinated || ring.interval != Interval::Green {
                continue;
            }
            let (Some(timing), true) = (config.ped_phases.get(&p), s.ped_calls.contains(p)) else {
                continue;
            };
            if s.ped[&p].interval != PedInterval::DontWalk {
                continue;
            }
            let c = s.plan.cycle_length;
            let mut room = (yields[&ring.ring] + c - cs) % c;
            if room == 0 {
                room = c;
            }
            if room >= timing.total() {
                s.ped_calls.remove(p);
                s.ped.insert(
                    p,
                    PedState {
                        interval: PedInterval::Walk,
                        elapsed: 1,
                    },
                );
            }
        }
    }

    let ind = s.indications(config);
    check_tick(&s, &ind, config)?;
    Ok((s, ind))
}

fn check_tick(s: &ControllerState, ind: &Indications, config: &IntersectionConfig) -> Result<()> {
    let mut group = None;
    for p in ind.greens() {
        let g = config.phase(p).barrier_group;
        if *group.get_or_insert(g) != g {
            return Err(Error::InvariantViolation {
                clock: s.clock,
                detail: "two barrier groups green".into(),
            });
        }
    }
    for r in &s.rings {
        if let (Some(p), Interval::Green) = (r.phase, r.interval) {
            let ph = config.phase(p);
            if !ph.coordinated && r.elapsed > ph.max_green {
                return Err(Error::InvariantViolation {
                    clock: s.clock,
                    detail: format!("phase {p} green beyond max-green"),
                });
            }
        }
    }
    for (&p, ped) in &s.ped {
        if ped.interval != PedInterval::DontWalk && !ind.is_green(p) {
            return Err(Error::InvariantViolation {
                clock: s.clock,
                detail: format!("pedestrian phase {p} timing outside vehicle green"),
            });
        }
    }
    Ok(())
}
