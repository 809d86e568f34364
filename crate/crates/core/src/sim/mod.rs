//! Discrete-time (1 s) simulator of a coordinated-actuated NEMA intersection
//! producing the per-second record feed.

pub mod config;
pub mod controller;
pub mod monitor;
pub mod record;
pub mod traffic;

use std::io::{BufRead, Write};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{build_plan, IntersectionConfig, PhaseId, PlanConfig};
pub use controller::{step_controller, ControllerState, Indication, Indications, PhaseSet};
pub use monitor::InvariantMonitor;
pub use record::PerSecondRecord;
pub use traffic::{step_traffic, DetectorOutput, TrafficState};

use crate::error::{Error, Result};

/// Everything observed during one simulated second.
pub struct Tick<'a> {
    pub clock: i64,
    pub state: &'a ControllerState,
    pub indications: &'a Indications,
    pub detectors: &'a [DetectorOutput],
    pub actuations: PhaseSet,
    pub presses: PhaseSet,
    /// Inside the operating span (a record is emitted for this second).
    pub emitted: bool,
}

pub fn day_start(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp()
}

/// Unix second range `[first, last]` of the records of one day.
pub fn span_bounds(config: &IntersectionConfig, date: NaiveDate) -> (i64, i64) {
    let midnight = day_start(date);
    (
        midnight + config.span.start as i64,
        midnight + config.span.end as i64 - 1,
    )
}

fn day_rng(date: NaiveDate, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(day_start(date).div_euclid(86_400) as u64);
    rng
}

/// Run one day, handing every tick (warm-up included) to `observer`.
pub fn simulate_day_with<F>(
    config: &IntersectionConfig,
    date: NaiveDate,
    seed: u64,
    mut observer: F,
) -> Result<()>
where
    F: FnMut(&Tick<'_>),
{
    let midnight = day_start(date);
    let first = midnight + (config.span.start - config.span.warmup) as i64;
    let emit_from = midnight + config.span.start as i64;
    let end = midnight + config.span.end as i64;
    let mut rng = day_rng(date, seed);
    let mut ctl = ControllerState::new(config, first)?;
    let mut traffic = TrafficState::new(config);
    let mut indications = ctl.indications(config);

    for clock in first..end {
        let tod = clock.rem_euclid(86_400) as u32;
        let (next_traffic, detectors) = step_traffic(&traffic, config, &indications, tod, &mut rng);
        let presses = traffic::ped_presses(config, tod, &mut rng);
        let actuations = traffic::phase_actuations(config, &detectors);
        observer(&Tick {
            clock,
            state: &ctl,
            indications: &indications,
            detectors: &detectors,
            actuations,
            presses,
            emitted: clock >= emit_from,
        });
        let plan = build_plan(config, (clock + 1).rem_euclid(86_400) as u32)?;
        let (next_ctl, next_ind) = step_controller(&ctl, actuations, presses, config, &plan)?;
        ctl = next_ctl;
        indications = next_ind;
        traffic = next_traffic;
    }
    Ok(())
}

/// One record per second of the operating span.
pub fn simulate_day(
    config: &IntersectionConfig,
    date: NaiveDate,
    seed: u64,
) -> Result<Vec<PerSecondRecord>> {
    let mut out = Vec::with_capacity(config.span.len() as usize);
    simulate_day_with(config, date, seed, |tick| {
        if tick.emitted {
            out.push(PerSecondRecord::capture(
                config,
                tick.state,
                tick.indications,
                tick.detectors,
                tick.presses,
            ));
        }
    })?;
    Ok(out)
}

/// Drop each record with `dropout_prob`, then duplicate survivors with
/// `duplicate_prob`. Order is preserved; duplicates are identical.
pub fn corrupt_feed<T: Clone>(
    records: &[T],
    dropout_prob: f64,
    duplicate_prob: f64,
    seed: u64,
) -> Result<Vec<T>> {
    for p in [dropout_prob, duplicate_prob] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let drop = rng.gen::<f64>() < dropout_prob;
        let dup = rng.gen::<f64>() < duplicate_prob;
        if drop {
            continue;
        }
        out.push(r.clone());
        if dup {
            out.push(r.clone());
        }
    }
    Ok(out)
}

pub fn write_records<W: Write>(mut w: W, records: &[PerSecondRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Raw record lines, blank lines skipped.
pub fn read_record_lines<R: BufRead>(r: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 12, 14).unwrap()
    }

    fn short_config() -> IntersectionConfig {
        let mut cfg = IntersectionConfig::reference();
        cfg.span.start = 25_200;
        cfg.span.end = 28_800;
        cfg
    }

    #[test]
    fn full_span_record_count() {
        let cfg = IntersectionConfig::reference();
        let recs = simulate_day(&cfg, date(), 1).unwrap();
        assert_eq!(recs.len(), 57_600);
        let (first, last) = span_bounds(&cfg, date());
        assert_eq!(recs[0].timestamp, first);
        assert_eq!(recs.last().unwrap().timestamp, last);
        assert!(recs.windows(2).all(|w| w[1].timestamp == w[0].timestamp + 1));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = short_config();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_records(&mut a, &simulate_day(&cfg, date(), 7).unwrap()).unwrap();
        write_records(&mut b, &simulate_day(&cfg, date(), 7).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ_but_hold_invariants() {
        let cfg = short_config();
        let mut streams = Vec::new();
        for seed in [1, 2] {
            let mut monitor = InvariantMonitor::new(&cfg);
            let mut recs = Vec::new();
            simulate_day_with(&cfg, date(), seed, |t| {
                monitor.observe(t);
                if t.emitted {
                    recs.push(PerSecondRecord::capture(&cfg, t.state, t.indications, t.detectors, t.presses));
                }
            })
            .unwrap();
            assert!(monitor.violations().is_empty(), "{:?}", monitor.violations());
            streams.push(recs);
        }
        let differs = streams[0]
            .iter()
            .zip(&streams[1])
            .any(|(a, b)| a.detectors != b.detectors);
        assert!(differs);
    }

    #[test]
    fn record_field_set_is_stable() {
        let cfg = short_config();
        let recs = simulate_day(&cfg, date(), 3).unwrap();
        let keys = |r: &PerSecondRecord| {
            let v = serde_json::to_value(r).unwrap();
            let mut out = Vec::new();
            crate::ingest::flatten::collect_keys(&v, "", &mut out);
            out
        };
        let first = keys(&recs[0]);
        assert!(recs.iter().step_by(97).all(|r| keys(r) == first));
        assert!(first.contains(&"signal.phases.p1.state".to_string()));
        assert!(first.contains(&"detectors.d18.occupancy".to_string()));
        assert!(first.contains(&"pedestrian.p4.call".to_string()));
    }

    #[test]
    fn corruption_extremes() {
        let items: Vec<u32> = (0..1000).collect();
        assert_eq!(corrupt_feed(&items, 0.0, 0.0, 1).unwrap(), items);
        assert!(corrupt_feed(&items, 1.0, 0.5, 1).unwrap().is_empty());
        let dup = corrupt_feed(&items, 0.0, 1.0, 1).unwrap();
        assert_eq!(dup.len(), 2000);
        assert!(dup.windows(2).all(|w| w[0] <= w[1]));
        assert!(corrupt_feed(&items, 1.5, 0.0, 1).is_err());
    }

    #[test]
    fn dropout_count_within_three_sigma() {
        let items: Vec<u32> = (0..57_600).collect();
        let kept = corrupt_feed(&items, 0.10, 0.0, 2024).unwrap().len() as f64;
        let n = 57_600f64;
        let sigma = (n * 0.1 * 0.9).sqrt();
        assert!((kept - 51_840.0).abs() <= 3.0 * sigma, "kept {kept}");
    }
}
