//! End-to-end loss-function study driven by one TOML file: simulate days,
//! freeze a manifest, encode and label, train one model per (seed, loss),
//! evaluate on the test days and compare.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{compare_models, evaluate_model, Comparison, HorizonReport, BUCKETS};
use crate::ingest::{flatten_value, prepare_day, EncodedDay, FlatRow, SchemaBuilder, SchemaHints, SchemaManifest};
use crate::labeling::PHASES;
use crate::neural::Peephole;
use crate::sequencer::{Dataset, WINDOW};
use crate::sim::{corrupt_feed, simulate_day, span_bounds, IntersectionConfig, PerSecondRecord, PhaseId};
use crate::training::{train, AdamConfig, LossKind, TrainConfig, MAPE_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPlan {
    pub first_date: NaiveDate,
    pub train_days: u32,
    pub val_days: u32,
    pub test_days: u32,
    /// Leading training days used to freeze the manifest.
    pub schema_days: u32,
    pub sim_seed: u64,
    /// Feed corruption; defaults to the intersection config's values.
    pub dropout: Option<f64>,
    pub duplicate: Option<f64>,
    /// Operating span override, seconds of day `[start, end)`.
    pub span_start: Option<u32>,
    pub span_end: Option<u32>,
}

fn default_losses() -> Vec<LossKind> {
    LossKind::ALL.to_vec()
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyPlan {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossKind>,
    pub neurons: usize,
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: usize,
    #[serde(default = "one")]
    pub train_stride: usize,
    #[serde(default = "one")]
    pub val_stride: usize,
    #[serde(default = "one")]
    pub test_stride: usize,
    #[serde(default)]
    pub peephole: Peephole,
    pub chunk_size: Option<usize>,
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Paths are relative to the experiment file.
    pub intersection: PathBuf,
    pub schema_hints: PathBuf,
    pub output_dir: PathBuf,
    pub data: DataPlan,
    pub training: StudyPlan,
}

impl ExperimentConfig {
    /// Load and resolve relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ExperimentConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.intersection, &mut cfg.schema_hints, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.train_days == 0 || d.val_days == 0 || d.test_days == 0 {
            return Err(Error::Config("train, validation and test day counts must be positive".into()));
        }
        if d.schema_days == 0 || d.schema_days > d.train_days {
            return Err(Error::Config("schema days must be between 1 and the training day count".into()));
        }
        if self.training.seeds.is_empty() || self.training.losses.is_empty() {
            return Err(Error::Config("at least one seed and one loss are required".into()));
        }
        Ok(())
    }

    /// Chronological split: training days, then validation, then test.
    pub fn days(&self) -> (Vec<NaiveDate>, Vec<NaiveDate>, Vec<NaiveDate>) {
        let d = &self.data;
        let day = |i: u32| d.first_date + chrono::Days::new(i as u64);
        let train = (0..d.train_days).map(day).collect();
        let val = (d.train_days..d.train_days + d.val_days).map(day).collect();
        let test = (d.train_days + d.val_days..d.train_days + d.val_days + d.test_days).map(day).collect();
        (train, val, test)
    }

    pub fn train_config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            loss,
            learning_rate: t.learning_rate,
            adam: AdamConfig::default(),
            plateau_factor: 0.3,
            plateau_patience: 1,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed,
            mape_floor: MAPE_FLOOR,
            neurons: t.neurons,
            peephole: t.peephole,
            train_stride: t.train_stride,
            val_stride: t.val_stride,
            chunk_size: t.chunk_size.unwrap_or(25),
        }
    }
}

/// Ordered phase ids as the label columns.
pub fn label_phases(config: &IntersectionConfig) -> Result<[PhaseId; PHASES]> {
    let ids: Vec<PhaseId> = config.phase_ids().collect();
    ids.try_into()
        .map_err(|v: Vec<PhaseId>| Error::Config(format!("labeling needs exactly {PHASES} phases, found {}", v.len())))
}

fn corruption_seed(base: u64, date: NaiveDate) -> u64 {
    base ^ (date.num_days_from_ce() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Simulate one day, corrupt its feed and hand the flattened records, in
/// feed order, to `consume` one at a time.
pub fn with_feed<R>(
    config: &IntersectionConfig,
    date: NaiveDate,
    plan: &DataPlan,
    consume: impl FnOnce(&mut dyn Iterator<Item = Result<FlatRow>>) -> Result<R>,
) -> Result<R> {
    let records = simulate_day(config, date, plan.sim_seed)?;
    let dropout = plan.dropout.unwrap_or(config.feed_corruption.dropout_prob);
    let duplicate = plan.duplicate.unwrap_or(config.feed_corruption.duplicate_prob);
    let refs: Vec<&PerSecondRecord> = records.iter().collect();
    let fed = corrupt_feed(&refs, dropout, duplicate, corruption_seed(plan.sim_seed, date))?;
    let mut rows = fed.into_iter().map(|r| flatten_value(&serde_json::to_value(r)?));
    consume(&mut rows)
}

/// Simulated and corrupted feed of one day, flattened.
pub fn feed_rows(config: &IntersectionConfig, date: NaiveDate, plan: &DataPlan) -> Result<Vec<FlatRow>> {
    with_feed(config, date, plan, |rows| rows.collect())
}

pub fn build_manifest(config: &IntersectionConfig, dates: &[NaiveDate], plan: &DataPlan, hints: &SchemaHints) -> Result<SchemaManifest> {
    let mut b = SchemaBuilder::new(hints);
    for &d in dates {
        with_feed(config, d, plan, |rows| {
            for row in rows {
                b.observe(&row?)?;
            }
            Ok(())
        })?;
    }
    b.finish()
}

pub fn encode_days(config: &IntersectionConfig, dates: &[NaiveDate], plan: &DataPlan, manifest: &SchemaManifest) -> Result<Vec<EncodedDay>> {
    let phases = label_phases(config)?;
    dates
        .par_iter()
        .map(|&d| {
            let (first, last) = span_bounds(config, d);
            with_feed(config, d, plan, |rows| prepare_day(rows, first, last, manifest, &phases))
        })
        .collect()
}

/// Per-seed verdict on the three qualitative findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub seed: u64,
    /// MAPE has the lowest MAE in the 0-20 s bucket.
    pub mape_wins_first_bucket: bool,
    /// TDSE has the lowest mean bucket MAE over 0-100 s.
    pub tdse_wins_short_horizon: bool,
    /// MSE beats MAPE in every non-empty bucket from 100 s on.
    pub mse_beats_mape_long_horizon: bool,
}

pub fn trend_check(seed: u64, reports: &BTreeMap<LossKind, HorizonReport>, cmp: &Comparison) -> Option<TrendCheck> {
    let (mse, mape, tdse) = (reports.get(&LossKind::Mse)?, reports.get(&LossKind::Mape)?, reports.get(&LossKind::Tdse)?);
    let short = |r: &HorizonReport| r.mean_bucket_mae(0..5);
    let tdse_short = short(tdse);
    Some(TrendCheck {
        seed,
        mape_wins_first_bucket: cmp.rank_of(LossKind::Mape, 0) == Some(1),
        tdse_wins_short_horizon: reports.iter().all(|(k, r)| *k == LossKind::Tdse || tdse_short < short(r)),
        mse_beats_mape_long_horizon: (5..BUCKETS)
            .filter(|&b| mse.buckets[b].count > 0)
            .all(|b| mse.buckets[b].mae < mape.buckets[b].mae),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub checks: Vec<TrendCheck>,
    pub mape_wins_first_bucket: usize,
    pub tdse_wins_short_horizon: usize,
    pub mse_beats_mape_long_horizon: usize,
    pub seeds: usize,
}

impl TrendSummary {
    pub fn new(checks: Vec<TrendCheck>) -> Self {
        let count = |f: fn(&TrendCheck) -> bool| checks.iter().filter(|c| f(c)).count();
        TrendSummary {
            mape_wins_first_bucket: count(|c| c.mape_wins_first_bucket),
            tdse_wins_short_horizon: count(|c| c.tdse_wins_short_horizon),
            mse_beats_mape_long_horizon: count(|c| c.mse_beats_mape_long_horizon),
            seeds: checks.len(),
            checks,
        }
    }

    /// Sub-criterion holds in a strict majority of seeds.
    pub fn majority(&self, hits: usize) -> bool {
        2 * hits > self.seeds
    }

    pub fn to_text(&self) -> String {
        let mark = |b: bool| if b { "pass" } else { "FAIL" };
        let mut s = String::from("seed\tmape_wins_0_20\ttdse_wins_0_100\tmse_beats_mape_100_200\n");
        for c in &self.checks {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                c.seed,
                mark(c.mape_wins_first_bucket),
                mark(c.tdse_wins_short_horizon),
                mark(c.mse_beats_mape_long_horizon)
            ));
        }
        s.push_str(&format!(
            "majority\t{} ({}/{})\t{} ({}/{})\t{} ({}/{})\n",
            mark(self.majority(self.mape_wins_first_bucket)),
            self.mape_wins_first_bucket,
            self.seeds,
            mark(self.majority(self.tdse_wins_short_horizon)),
            self.tdse_wins_short_horizon,
            self.seeds,
            mark(self.majority(self.mse_beats_mape_long_horizon)),
            self.mse_beats_mape_long_horizon,
            self.seeds
        ));
        s
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub manifest: SchemaManifest,
    pub reports: BTreeMap<u64, BTreeMap<LossKind, HorizonReport>>,
    pub comparisons: BTreeMap<u64, Comparison>,
    pub trends: Option<TrendSummary>,
}

/// Run the whole study, writing every artifact under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut ic = IntersectionConfig::load(&config.intersection)?;
    if let Some(s) = config.data.span_start {
        ic.span.start = s;
    }
    if let Some(e) = config.data.span_end {
        ic.span.end = e;
    }
    ic.validate()?;
    let hints = SchemaHints::load(&config.schema_hints)?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out)?;

    let (train_dates, val_dates, test_dates) = config.days();
    let manifest = build_manifest(&ic, &train_dates[..config.data.schema_days as usize], &config.data, &hints)?;
    manifest.save(out.join("manifest.json"))?;
    log::info!("manifest frozen: {} variables, width {}", manifest.variables.len(), manifest.feature_count);

    let window = config.training.window.unwrap_or(WINDOW);
    let train_set = Dataset::new(encode_days(&ic, &train_dates, &config.data, &manifest)?, window)?;
    let val_set = Dataset::new(encode_days(&ic, &val_dates, &config.data, &manifest)?, window)?;
    let test_set = Dataset::new(encode_days(&ic, &test_dates, &config.data, &manifest)?, window)?;
    let test_index = test_set.index().strided(config.training.test_stride, 0);

    let mut listing = String::from("date\trole\trows\tsamples\n");
    for (role, dates, set) in [("train", &train_dates, &train_set), ("val", &val_dates, &val_set), ("test", &test_dates, &test_set)] {
        for (d, day) in dates.iter().zip(&set.days) {
            let samples = crate::sequencer::make_sequences(day, 0, window).count();
            listing.push_str(&format!("{d}\t{role}\t{}\t{samples}\n", day.rows()));
        }
    }
    std::fs::write(out.join("days.tsv"), listing)?;

    let mut reports = BTreeMap::new();
    let mut comparisons = BTreeMap::new();
    let mut checks = Vec::new();
    for &seed in &config.training.seeds {
        let seed_dir = out.join(format!("seed-{seed}"));
        let mut per_loss = BTreeMap::new();
        for &loss in &config.training.losses {
            let dir = seed_dir.join(loss.as_str());
            let tc = config.train_config(loss, seed);
            let (_, best) = train(&train_set, &val_set, &tc, Some(&dir))?;
            let report = evaluate_model(&best, &test_set, &test_index)?;
            report.save(&dir, "report")?;
            log::info!("seed {seed} {loss}: best epoch {} test MAE {:.3} s", best.epoch, report.overall_mae);
            per_loss.insert(loss, report);
        }
        let cmp = compare_models(&per_loss)?;
        std::fs::write(seed_dir.join("comparison.txt"), cmp.to_text())?;
        std::fs::write(seed_dir.join("comparison.json"), serde_json::to_string_pretty(&cmp)? + "\n")?;
        if let Some(c) = trend_check(seed, &per_loss, &cmp) {
            checks.push(c);
        }
        comparisons.insert(seed, cmp);
        reports.insert(seed, per_loss);
    }
    let trends = (!checks.is_empty()).then(|| TrendSummary::new(checks));
    if let Some(t) = &trends {
        std::fs::write(out.join("trend.txt"), t.to_text())?;
    }
    Ok(ExperimentOutcome {
        manifest,
        reports,
        comparisons,
        trends,
    })
}
