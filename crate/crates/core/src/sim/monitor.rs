//! Runtime checker for the simulator's ring-barrier invariants. Feed it every
//! tick in order; it never influences the simulation.

use std::collections::BTreeMap;

use super::config::{IntersectionConfig, PhaseId};
use super::controller::{Indication, PedInterval, PhaseSet};
use super::Tick;

#[derive(Debug, Default, Clone, Copy)]
pub struct MonitorStats {
    pub ticks: u64,
    pub completed_greens: u64,
    pub coordinated_cycles: u64,
    pub skipped_cycles: u64,
    pub ped_services: u64,
}

#[derive(Debug, Clone, Copy)]
struct PedRun {
    interval: PedInterval,
    len: u32,
}

pub struct InvariantMonitor {
    config: IntersectionConfig,
    stats: MonitorStats,
    violations: Vec<String>,
    prev: Option<PrevTick>,
    green_run: BTreeMap<PhaseId, u32>,
    /// Phases whose current green began while the monitor was watching.
    onset_seen: PhaseSet,
    last_yield: BTreeMap<PhaseId, (u32, i64)>,
    cycle_calls: PhaseSet,
    cycle_greens: PhaseSet,
    carried_green: PhaseSet,
    ped_runs: BTreeMap<PhaseId, PedRun>,
}

struct PrevTick {
    clock: i64,
    plan_id: u32,
    cycle_length: u32,
    cycle_second: u32,
    indications: Vec<(PhaseId, Indication)>,
    calls: PhaseSet,
}

impl InvariantMonitor {
    pub fn new(config: &IntersectionConfig) -> Self {
        InvariantMonitor {
            config: config.clone(),
            stats: MonitorStats::default(),
            violations: Vec::new(),
            prev: None,
            green_run: BTreeMap::new(),
            onset_seen: PhaseSet::EMPTY,
            last_yield: BTreeMap::new(),
            cycle_calls: PhaseSet::EMPTY,
            cycle_greens: PhaseSet::EMPTY,
            carried_green: PhaseSet::EMPTY,
            ped_runs: BTreeMap::new(),
        }
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn stats(&self) -> MonitorStats {
        self.stats
    }

    fn fail(&mut self, clock: i64, msg: String) {
        if self.violations.len() < 1000 {
            self.violations.push(format!("t={clock}: {msg}"));
        }
    }

    pub fn observe(&mut self, tick: &Tick<'_>) {
        let cfg = self.config.clone();
        let clock = tick.clock;
        let st = tick.state;
        self.stats.ticks += 1;

        if let Some(prev) = &self.prev {
            if prev.clock + 1 != clock {
                self.fail(clock, "ticks out of order".into());
            }
        }

        // One active phase per ring, one barrier group green.
        for ring in &cfg.rings {
            let active = ring
                .groups
                .iter()
                .flatten()
                .filter(|&&p| tick.indications.get(p) != Indication::Red)
                .count();
            if active > 1 {
                self.fail(clock, format!("ring {} shows {active} phases", ring.ring));
            }
        }
        let groups: Vec<u8> = tick
            .indications
            .greens()
            .map(|p| cfg.phase(p).barrier_group)
            .collect();
        if groups.windows(2).any(|w| w[0] != w[1]) {
            self.fail(clock, format!("greens span barrier groups {groups:?}"));
        }

        // Green durations and onsets.
        let prev_ind = self.prev.as_ref().map(|p| p.indications.clone());
        let was_green = |p: PhaseId| {
            prev_ind
                .as_ref()
                .map(|v| v.iter().any(|&(q, i)| q == p && i == Indication::Green))
                .unwrap_or(false)
        };
        for ph in &cfg.phases {
            let p = ph.id;
            let green = tick.indications.is_green(p);
            if green {
                *self.green_run.entry(p).or_insert(0) += 1;
                if !was_green(p) && self.prev.is_some() {
                    self.onset_seen.insert(p);
                    self.cycle_greens.insert(p);
                    if !ph.coordinated {
                        let prev = self.prev.as_ref().unwrap();
                        if !prev.calls.contains(p) {
                            self.fail(clock, format!("phase {p} served without a call"));
                        }
                    }
                }
                if !ph.coordinated && self.green_run[&p] > ph.max_green {
                    self.fail(clock, format!("phase {p} green beyond max-green"));
                }
            } else if was_green(p) {
                let run = self.green_run.remove(&p).unwrap_or(0);
                if self.onset_seen.contains(p) {
                    self.onset_seen.remove(p);
                    self.stats.completed_greens += 1;
                    if !ph.coordinated && (run < ph.min_green || run > ph.max_green) {
                        self.fail(
                            clock,
                            format!("phase {p} green lasted {run} s, outside [{}, {}]", ph.min_green, ph.max_green),
                        );
                    }
                }
                if ph.coordinated {
                    self.check_yield(clock, p, st.plan.id, st.plan.cycle_length, st.cycle_second);
                }
            }
        }

        // Cycle accounting: a phase never called in a cycle is never served.
        let wrapped = self
            .prev
            .as_ref()
            .map(|p| p.plan_id != st.plan.id || st.cycle_second < p.cycle_second)
            .unwrap_or(false);
        if let Some(prev) = &self.prev {
            if prev.plan_id == st.plan.id && (prev.cycle_second + 1) % prev.cycle_length != st.cycle_second {
                let msg = format!("cycle second jumped {} -> {}", prev.cycle_second, st.cycle_second);
                self.fail(clock, msg);
            }
        }
        if wrapped {
            for ph in cfg.phases.iter().filter(|p| !p.coordinated) {
                let served = self.cycle_greens.contains(ph.id) && !self.carried_green.contains(ph.id);
                if served && !self.cycle_calls.contains(ph.id) {
                    self.fail(clock, format!("phase {} green in a cycle without calls", ph.id));
                }
                if !self.cycle_calls.contains(ph.id) {
                    self.stats.skipped_cycles += 1;
                }
            }
            self.cycle_calls = PhaseSet::EMPTY;
            self.cycle_greens = PhaseSet::EMPTY;
            self.carried_green = tick.indications.greens().collect();
        }
        for p in tick.actuations.iter().chain(tick.presses.iter()) {
            self.cycle_calls.insert(p);
        }
        for p in st.calls.iter().chain(st.ped_calls.iter()) {
            self.cycle_calls.insert(p);
        }

        // Pedestrian intervals sit inside vehicle green and run in full.
        for (&p, timing) in &cfg.ped_phases {
            let interval = st.ped_interval(p);
            if interval != PedInterval::DontWalk && !tick.indications.is_green(p) {
                self.fail(clock, format!("pedestrian phase {p} {interval:?} outside green"));
            }
            let run = self.ped_runs.get(&p).copied();
            match run {
                Some(r) if r.interval == interval => {
                    self.ped_runs.insert(p, PedRun { interval, len: r.len + 1 });
                }
                _ => {
                    if let Some(r) = run {
                        let expect = match r.interval {
                            PedInterval::Walk => Some(timing.walk),
                            PedInterval::Flashing => Some(timing.flashing_clearance),
                            PedInterval::DontWalk => None,
                        };
                        if let Some(e) = expect {
                            if r.len != e {
                                self.fail(clock, format!("pedestrian phase {p} {:?} lasted {} s, expected {e}", r.interval, r.len));
                            }
                        }
                        if r.interval == PedInterval::Flashing {
                            self.stats.ped_services += 1;
                        }
                    }
                    self.ped_runs.insert(p, PedRun { interval, len: 1 });
                }
            }
        }

        let mut calls = st.calls;
        for p in st.ped_calls.iter().chain(tick.actuations.iter()).chain(tick.presses.iter()) {
            calls.insert(p);
        }
        self.prev = Some(PrevTick {
            clock,
            plan_id: st.plan.id,
            cycle_length: st.plan.cycle_length,
            cycle_second: st.cycle_second,
            indications: tick.indications.0.clone(),
            calls,
        });
    }

    /// Coordinated greens end only at the plan's yield point, so successive
    /// terminations under one plan are whole cycles apart.
    fn check_yield(&mut self, clock: i64, p: PhaseId, plan_id: u32, cycle: u32, cs: u32) {
        if let Some(&(prev_plan, prev_clock)) = self.last_yield.get(&p) {
            if prev_plan == plan_id {
                let gap = clock - prev_clock;
                if gap % cycle as i64 != 0 {
                    self.fail(clock, format!("coordinated phase {p}: cycle of {gap} s under a {cycle} s plan"));
                } else if gap == cycle as i64 {
                    self.stats.coordinated_cycles += 1;
                }
            }
        }
        let plan = self
            .config
            .tod_schedule
            .iter()
            .map(|(_, pl)| pl)
            .find(|pl| pl.id == plan_id)
            .cloned();
        if let Some(plan) = plan {
            let ring = self.config.phase(p).ring;
            let y = self.config.yield_points(&plan)[&ring];
            if cs != y {
                self.fail(clock, format!("coordinated phase {p} yielded at cycle second {cs}, expected {y}"));
            }
        }
        self.last_yield.insert(p, (plan_id, clock));
    }
}
