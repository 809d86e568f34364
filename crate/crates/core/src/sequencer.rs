//! Sliding windows over encoded days, addressed through a compact sample
//! index and served as zero-copy slices in seeded shuffled batches.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::EncodedDay;
use crate::labeling::PHASES;

pub const WINDOW: usize = 120;
pub const BATCH_SIZE: usize = 1000;

/// Prediction second `offset` (row index) of day `day`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleRef {
    pub day: u32,
    pub offset: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct SequenceSample<'a> {
    /// `window × feature_count`, oldest row first.
    pub window: &'a [f32],
    /// Normalized targets; 0 where masked.
    pub target: [f64; PHASES],
    pub mask: [bool; PHASES],
}

impl SequenceSample<'_> {
    pub fn steps(&self, feature_count: usize) -> usize {
        self.window.len() / feature_count
    }
}

/// Candidate prediction seconds of one day: every row with a full window
/// behind it and at least one valid target.
pub fn make_sequences(day: &EncodedDay, day_id: u32, window: usize) -> impl Iterator<Item = SampleRef> + '_ {
    let first = window.saturating_sub(1);
    (first..day.rows()).filter_map(move |t| {
        day.remaining(t).iter().any(Option::is_some).then_some(SampleRef {
            day: day_id,
            offset: t as u32,
        })
    })
}

/// A set of encoded days sharing one manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub days: Vec<EncodedDay>,
    pub feature_count: usize,
    pub window: usize,
}

impl Dataset {
    pub fn new(days: Vec<EncodedDay>, window: usize) -> Result<Self> {
        let feature_count = days.first().map(|d| d.feature_count).unwrap_or(0);
        for d in &days {
            if d.feature_count != feature_count {
                return Err(Error::WidthMismatch {
                    expected: feature_count,
                    found: d.feature_count,
                });
            }
            if d.manifest_hash != days[0].manifest_hash {
                return Err(Error::HashMismatch {
                    expected: hex::encode(days[0].manifest_hash),
                    found: hex::encode(d.manifest_hash),
                });
            }
        }
        Ok(Dataset {
            days,
            feature_count,
            window,
        })
    }

    pub fn index(&self) -> SampleIndex {
        let refs = self
            .days
            .iter()
            .enumerate()
            .flat_map(|(i, d)| make_sequences(d, i as u32, self.window))
            .collect();
        SampleIndex {
            window: self.window,
            refs,
        }
    }

    pub fn sample(&self, r: SampleRef) -> SequenceSample<'_> {
        let day = &self.days[r.day as usize];
        let t = r.offset as usize;
        let target = day.target(t);
        SequenceSample {
            window: day.window(t, self.window),
            target: target.map(|x| x.unwrap_or(0.0)),
            mask: target.map(|x| x.is_some()),
        }
    }

    pub fn manifest_hash(&self) -> Option<[u8; 32]> {
        self.days.first().map(|d| d.manifest_hash)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleIndex {
    pub window: usize,
    pub refs: Vec<SampleRef>,
}

impl SampleIndex {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Every `stride`-th sample, starting at `phase`.
    pub fn strided(&self, stride: usize, phase: usize) -> SampleIndex {
        let stride = stride.max(1);
        SampleIndex {
            window: self.window,
            refs: self.refs.iter().skip(phase % stride).step_by(stride).copied().collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# window {}", self.window)?;
        for r in &self.refs {
            writeln!(w, "{}\t{}", r.day, r.offset)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |d: String| Error::Container {
            path: path.display().to_string(),
            detail: d,
        };
        let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let window = header
            .strip_prefix("# window ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("missing window header".into()))?;
        let mut refs = Vec::new();
        for line in lines {
            let line = line?;
            let mut it = line.split('\t').map(str::parse::<u32>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(day)), Some(Ok(offset)), None) => refs.push(SampleRef { day, offset }),
                _ => return Err(bad(format!("bad index line `{line}`"))),
            }
        }
        Ok(SampleIndex { window, refs })
    }
}

/// The seeded order of `n` samples in epoch `epoch`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    perm.shuffle(&mut rng);
    perm
}

/// Batches of sample positions; windows are sliced on demand by the consumer.
pub struct Batches {
    perm: Vec<u32>,
    batch_size: usize,
    at: usize,
}

impl Iterator for Batches {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.at >= self.perm.len() {
            return None;
        }
        let end = (self.at + self.batch_size).min(self.perm.len());
        let batch = self.perm[self.at..end].to_vec();
        self.at = end;
        Some(batch)
    }
}

pub fn make_batches(n_samples: usize, batch_size: usize, seed: u64, epoch: u64) -> Batches {
    Batches {
        perm: epoch_permutation(n_samples, seed, epoch),
        batch_size: batch_size.max(1),
        at: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::store::TARGET_COLS;

    fn day(rows: usize, f: usize) -> EncodedDay {
        let features = (0..rows * f).map(|k| k as f32).collect();
        let mut targets = Vec::new();
        for t in 0..rows {
            let valid = t % 7 != 3;
            for _ in 0..PHASES {
                targets.push(if valid { 10.0 } else { -1.0 });
            }
            for _ in 0..PHASES {
                targets.push(valid as u8 as f32);
            }
        }
        assert_eq!(targets.len(), rows * TARGET_COLS);
        EncodedDay {
            start: 0,
            feature_count: f,
            manifest_hash: [0; 32],
            features,
            targets,
        }
    }

    #[test]
    fn skips_all_masked_seconds() {
        let d = day(20, 2);
        let refs: Vec<_> = make_sequences(&d, 0, 5).collect();
        let expect = (4..20).filter(|t| t % 7 != 3).count();
        assert_eq!(refs.len(), expect);
        assert!(refs.iter().all(|r| r.offset % 7 != 3));
    }

    #[test]
    fn window_is_direct_slice() {
        let ds = Dataset::new(vec![day(30, 3)], 4).unwrap();
        let s = ds.sample(SampleRef { day: 0, offset: 11 });
        let expect: Vec<f32> = (8 * 3..12 * 3).map(|k| k as f32).collect();
        assert_eq!(s.window, &expect[..]);
        assert_eq!(s.target, [0.05; PHASES]);
        assert_eq!(s.steps(3), 4);
    }

    #[test]
    fn batch_sizes() {
        let sizes: Vec<usize> = make_batches(2500, 1000, 1, 0).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![1000, 1000, 500]);
    }

    #[test]
    fn permutation_determinism() {
        let a: Vec<_> = make_batches(300, 64, 9, 0).flatten().collect();
        let b: Vec<_> = make_batches(300, 64, 9, 0).flatten().collect();
        let c: Vec<_> = make_batches(300, 64, 9, 1).flatten().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut sorted = c.clone();
        sorted.sort();
        assert_eq!(sorted, (0..300).collect::<Vec<u32>>());
    }

    #[test]
    fn index_round_trip() {
        let ds = Dataset::new(vec![day(30, 2), day(25, 2)], 6).unwrap();
        let idx = ds.index();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.tsv");
        idx.save(&p).unwrap();
        assert_eq!(SampleIndex::load(&p).unwrap(), idx);
        assert_eq!(idx.strided(3, 1).len(), (idx.len() + 1) / 3);
    }
}
