//! Horizon-bucketed error reports on test data and multi-model comparison.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labeling::{HORIZON, PHASES};
use crate::neural::{predict_seconds, Checkpoint};
use crate::sequencer::{Dataset, SampleIndex};
use crate::training::LossKind;

pub const BUCKET_WIDTH: u32 = 20;
pub const BUCKETS: usize = (HORIZON / BUCKET_WIDTH) as usize;

/// Bucket of a true horizon; the last bucket is closed at the horizon.
pub fn bucket_of(truth: u32) -> usize {
    ((truth / BUCKET_WIDTH) as usize).min(BUCKETS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub lo: u32,
    pub hi: u32,
    pub count: u64,
    pub mae: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub buckets: Vec<BucketStats>,
    /// `(absolute error s, fraction of entries with error <= it)`.
    pub cdf: Vec<(u32, f64)>,
    pub count: u64,
    pub overall_mae: f64,
    pub total_abs_error: u64,
    /// Digest of the evaluated (sample, phase, truth) set.
    pub test_fingerprint: String,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[u32], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
}

fn bucket_stats(b: usize, errors: &mut [u32]) -> BucketStats {
    errors.sort_unstable();
    let lo = b as u32 * BUCKET_WIDTH;
    let hi = lo + BUCKET_WIDTH;
    if errors.is_empty() {
        return BucketStats {
            lo,
            hi,
            count: 0,
            mae: 0.0,
            q1: 0.0,
            median: 0.0,
            q3: 0.0,
            whisker_lo: 0.0,
            whisker_hi: 0.0,
            outliers: 0,
        };
    }
    let n = errors.len();
    let mae = errors.iter().map(|&e| e as u64).sum::<u64>() as f64 / n as f64;
    let (q1, median, q3) = (quantile(errors, 0.25), quantile(errors, 0.5), quantile(errors, 0.75));
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = errors.iter().filter(|&&e| e as f64 >= fence_lo && e as f64 <= fence_hi);
    let whisker_lo = inside.clone().next().map_or(q1, |&e| e as f64);
    let whisker_hi = inside.last().map_or(q3, |&e| e as f64);
    let outliers = errors.iter().filter(|&&e| (e as f64) < fence_lo || (e as f64) > fence_hi).count() as u64;
    BucketStats {
        lo,
        hi,
        count: n as u64,
        mae,
        q1,
        median,
        q3,
        whisker_lo,
        whisker_hi,
        outliers,
    }
}

/// Build a report from `(true s, predicted s)` pairs.
pub fn report_from_pairs(pairs: &[(u32, u32)], test_fingerprint: String) -> HorizonReport {
    let mut per_bucket: Vec<Vec<u32>> = vec![Vec::new(); BUCKETS];
    let mut all: Vec<u32> = Vec::with_capacity(pairs.len());
    for &(truth, pred) in pairs {
        let e = truth.abs_diff(pred);
        per_bucket[bucket_of(truth)].push(e);
        all.push(e);
    }
    let buckets = per_bucket.iter_mut().enumerate().map(|(b, e)| bucket_stats(b, e)).collect();
    all.sort_unstable();
    let n = all.len();
    let mut cdf = Vec::new();
    for (i, &e) in all.iter().enumerate() {
        if i + 1 == n || all[i + 1] != e {
            cdf.push((e, (i + 1) as f64 / n as f64));
        }
    }
    let total: u64 = all.iter().map(|&e| e as u64).sum();
    HorizonReport {
        buckets,
        cdf,
        count: n as u64,
        overall_mae: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        total_abs_error: total,
        test_fingerprint,
    }
}

fn fingerprint(data: &Dataset, index: &SampleIndex) -> String {
    let mut h = Sha256::new();
    for r in &index.refs {
        let day = &data.days[r.day as usize];
        h.update(day.start.to_le_bytes());
        h.update(r.offset.to_le_bytes());
        for x in day.remaining(r.offset as usize) {
            h.update(x.map_or(-1i32, |v| v as i32).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Error of every valid (second, phase) entry of `index`.
pub fn evaluate_model(ck: &Checkpoint, data: &Dataset, index: &SampleIndex) -> Result<HorizonReport> {
    if let Some(h) = data.manifest_hash() {
        ck.check_manifest(&h)?;
    }
    let parts: Vec<Result<Vec<(u32, u32)>>> = index
        .refs
        .par_chunks(64)
        .map(|chunk| {
            let mut out = Vec::new();
            for &r in chunk {
                let day = &data.days[r.day as usize];
                let truth = day.remaining(r.offset as usize);
                let pred = predict_seconds(&ck.params, day.window(r.offset as usize, data.window))?;
                for k in 0..PHASES {
                    if let Some(t) = truth[k] {
                        out.push((t as u32, pred[k]));
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut pairs = Vec::new();
    for p in parts {
        pairs.extend(p?);
    }
    Ok(report_from_pairs(&pairs, fingerprint(data, index)))
}

impl HorizonReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("bucket\tcount\tmae_s\tq1\tmedian\tq3\twhisker_lo\twhisker_hi\toutliers\n");
        for b in &self.buckets {
            s.push_str(&format!(
                "{}-{}\t{}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                b.lo, b.hi, b.count, b.mae, b.q1, b.median, b.q3, b.whisker_lo, b.whisker_hi, b.outliers
            ));
        }
        s.push_str(&format!("all\t{}\t{:.4}\n", self.count, self.overall_mae));
        s
    }

    pub fn cdf_tsv(&self) -> String {
        let mut s = String::from("abs_error_s\tfraction\n");
        for (e, f) in &self.cdf {
            s.push_str(&format!("{e}\t{f:.8}\n"));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `<stem>.json`, `<stem>.tsv` and `<stem>-cdf.tsv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json())?;
        std::fs::write(dir.join(format!("{stem}.tsv")), self.to_tsv())?;
        std::fs::write(dir.join(format!("{stem}-cdf.tsv")), self.cdf_tsv())?;
        Ok(())
    }

    /// Mean of bucket MAEs over buckets `range` that have entries.
    pub fn mean_bucket_mae(&self, range: std::ops::Range<usize>) -> f64 {
        let v: Vec<f64> = self.buckets[range].iter().filter(|b| b.count > 0).map(|b| b.mae).collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub models: Vec<LossKind>,
    /// `bucket_ranks[b][m]`: rank of model `m` in bucket `b` (1 = best).
    pub bucket_ranks: Vec<Vec<u32>>,
    pub bucket_mae: Vec<Vec<f64>>,
    pub overall_ranks: Vec<u32>,
    pub total_abs_error: Vec<u64>,
    pub first_bucket_winners: Vec<LossKind>,
    pub last_bucket_winners: Vec<LossKind>,
}

/// Competition ranking: equal scores share a rank, the next rank skips.
pub fn competition_ranks(scores: &[f64]) -> Vec<u32> {
    scores
        .iter()
        .map(|s| 1 + scores.iter().filter(|o| *o < s).count() as u32)
        .collect()
}

pub fn compare_models(reports: &BTreeMap<LossKind, HorizonReport>) -> Result<Comparison> {
    let models: Vec<LossKind> = reports.keys().copied().collect();
    let rs: Vec<&HorizonReport> = reports.values().collect();
    if rs.windows(2).any(|w| w[0].test_fingerprint != w[1].test_fingerprint || w[0].count != w[1].count) {
        return Err(Error::MismatchedTestSets);
    }
    let bucket_mae: Vec<Vec<f64>> = (0..BUCKETS).map(|b| rs.iter().map(|r| r.buckets[b].mae).collect()).collect();
    let bucket_ranks: Vec<Vec<u32>> = bucket_mae.iter().map(|m| competition_ranks(m)).collect();
    let total_abs_error: Vec<u64> = rs.iter().map(|r| r.total_abs_error).collect();
    let overall_ranks = competition_ranks(&total_abs_error.iter().map(|&t| t as f64).collect::<Vec<_>>());
    let winners = |b: usize| -> Vec<LossKind> {
        models
            .iter()
            .zip(&bucket_ranks[b])
            .filter(|(_, &r)| r == 1)
            .map(|(&m, _)| m)
            .collect()
    };
    Ok(Comparison {
        first_bucket_winners: winners(0),
        last_bucket_winners: winners(BUCKETS - 1),
        models,
        bucket_ranks,
        bucket_mae,
        overall_ranks,
        total_abs_error,
    })
}

impl Comparison {
    pub fn rank_of(&self, kind: LossKind, bucket: usize) -> Option<u32> {
        let m = self.models.iter().position(|&k| k == kind)?;
        Some(self.bucket_ranks[bucket][m])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("bucket");
        for m in &self.models {
            s.push_str(&format!("\t{m}_mae\t{m}_rank"));
        }
        s.push('\n');
        for b in 0..BUCKETS {
            s.push_str(&format!("{}-{}", b as u32 * BUCKET_WIDTH, (b as u32 + 1) * BUCKET_WIDTH));
            for m in 0..self.models.len() {
                s.push_str(&format!("\t{:.4}\t{}", self.bucket_mae[b][m], self.bucket_ranks[b][m]));
            }
            s.push('\n');
        }
        s.push_str("overall");
        for m in 0..self.models.len() {
            s.push_str(&format!("\t{}\t{}", self.total_abs_error[m], self.overall_ranks[m]));
        }
        s.push('\n');
        let names = |v: &[LossKind]| v.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",");
        s.push_str(&format!("winner 0-20: {}\n", names(&self.first_bucket_winners)));
        s.push_str(&format!("winner 180-200: {}\n", names(&self.last_bucket_winners)));
        s
    }
}
