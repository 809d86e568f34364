//! Day container: one encoded day with its targets, stored as a row-major
//! little-endian f32 matrix behind a fixed header (see `docs/day-container.md`).

use std::io::{Read, Write};
use std::path::Path;

use super::encode::{encode_row, FeatureVector, MISSING};
use super::flatten::FlatRow;
use super::reindex::reindex_by;
use super::schema::SchemaManifest;
use crate::error::{Error, Result};
use crate::labeling::{compute_targets, row_phase_states, PhaseTargets, TargetState, HORIZON, PHASES};
use crate::sim::PhaseId;

pub const MAGIC: &[u8; 8] = b"SPATDAY\0";
pub const VERSION: u32 = 1;
/// Remaining seconds (6) followed by validity flags (6).
pub const TARGET_COLS: usize = 2 * PHASES;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8 + 8 + 32;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDay {
    pub start: i64,
    pub feature_count: usize,
    pub manifest_hash: [u8; 32],
    /// `rows × feature_count`, row-major.
    pub features: Vec<f32>,
    /// `rows × TARGET_COLS`, row-major.
    pub targets: Vec<f32>,
}

impl EncodedDay {
    pub fn from_parts(vectors: &[FeatureVector], targets: &[PhaseTargets], manifest: &SchemaManifest) -> Result<Self> {
        if vectors.len() != targets.len() || vectors.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows vs {} target rows",
                vectors.len(),
                targets.len()
            )));
        }
        let f = manifest.feature_count;
        let mut features = Vec::with_capacity(vectors.len() * f);
        for v in vectors {
            if v.features.len() != f {
                return Err(Error::WidthMismatch {
                    expected: f,
                    found: v.features.len(),
                });
            }
            features.extend_from_slice(&v.features);
        }
        let mut tcols = Vec::with_capacity(targets.len() * TARGET_COLS);
        for t in targets {
            tcols.extend(t.remaining.iter().map(|r| r.map_or(MISSING, |r| r as f32)));
            tcols.extend(t.remaining.iter().map(|r| r.is_some() as u8 as f32));
        }
        Ok(EncodedDay {
            start: vectors[0].timestamp,
            feature_count: f,
            manifest_hash: manifest.hash_bytes(),
            features,
            targets: tcols,
        })
    }

    pub fn rows(&self) -> usize {
        self.targets.len() / TARGET_COLS
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_count..(i + 1) * self.feature_count]
    }

    /// Rows `end + 1 - len ..= end` as one contiguous slice.
    pub fn window(&self, end: usize, len: usize) -> &[f32] {
        let first = end + 1 - len;
        &self.features[first * self.feature_count..(end + 1) * self.feature_count]
    }

    pub fn remaining(&self, i: usize) -> [Option<u16>; PHASES] {
        let t = &self.targets[i * TARGET_COLS..(i + 1) * TARGET_COLS];
        std::array::from_fn(|p| (t[PHASES + p] != 0.0).then_some(t[p] as u16))
    }

    /// Normalized targets of row `i`.
    pub fn target(&self, i: usize) -> [Option<f64>; PHASES] {
        self.remaining(i).map(|r| r.map(|r| r as f64 / HORIZON as f64))
    }

    pub fn check_manifest(&self, manifest: &SchemaManifest) -> Result<()> {
        if self.manifest_hash != manifest.hash_bytes() {
            return Err(Error::HashMismatch {
                expected: manifest.content_hash.clone(),
                found: hex::encode(self.manifest_hash),
            });
        }
        if self.feature_count != manifest.feature_count {
            return Err(Error::WidthMismatch {
                expected: manifest.feature_count,
                found: self.feature_count,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let rows = self.rows();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (self.features.len() + self.targets.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.feature_count as u32).to_le_bytes());
        out.extend_from_slice(&(TARGET_COLS as u32).to_le_bytes());
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&self.start.to_le_bytes());
        out.extend_from_slice(&self.manifest_hash);
        for i in 0..rows {
            for x in self.row(i).iter().chain(&self.targets[i * TARGET_COLS..(i + 1) * TARGET_COLS]) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let bad = |detail: &str| Error::Container {
            path: path.to_string(),
            detail: detail.to_string(),
        };
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(bad("not a day container"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(bad("unsupported version"));
        }
        let f = u32_at(12) as usize;
        if u32_at(16) as usize != TARGET_COLS {
            return Err(bad("unexpected target column count"));
        }
        let rows = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        let start = i64::from_le_bytes(bytes[28..36].try_into().unwrap());
        let mut hash = [0u8; 32];
        hash.copy_from_slice(&bytes[36..68]);
        let width = f + TARGET_COLS;
        if bytes.len() != HEADER_LEN + rows * width * 4 {
            return Err(bad("payload length does not match header"));
        }
        let mut features = Vec::with_capacity(rows * f);
        let mut targets = Vec::with_capacity(rows * TARGET_COLS);
        for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if k % width < f {
                features.push(x);
            } else {
                targets.push(x);
            }
        }
        Ok(EncodedDay {
            start,
            feature_count: f,
            manifest_hash: hash,
            features,
            targets,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Encoded {
    vector: FeatureVector,
    states: [TargetState; PHASES],
}

/// Encode and label one day of flattened rows over the span `[start, end]`.
/// Rows are consumed one at a time so a day never holds its flattened form.
pub fn prepare_day<I>(rows: I, start: i64, end: i64, manifest: &SchemaManifest, phases: &[PhaseId; PHASES]) -> Result<EncodedDay>
where
    I: IntoIterator<Item = Result<FlatRow>>,
{
    let mut items = Vec::new();
    for row in rows {
        let row = row?;
        items.push(Encoded {
            vector: encode_row(&row, manifest),
            states: row_phase_states(&row, phases),
        });
    }
    let grid = reindex_by(items, start, end, |e| e.vector.timestamp)?;
    let mut vectors = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    for (i, slot) in grid.into_iter().enumerate() {
        match slot {
            Some(e) => {
                vectors.push(e.vector);
                states.push(e.states);
            }
            None => {
                vectors.push(FeatureVector::all_missing(start + i as i64, manifest.feature_count));
                states.push([TargetState::Missing; PHASES]);
            }
        }
    }
    let targets = compute_targets(&states, start, HORIZON);
    EncodedDay::from_parts(&vectors, &targets, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::flatten::flatten_record;
    use crate::ingest::schema::{Variable, VariableKind};

    fn manifest() -> SchemaManifest {
        SchemaManifest::new(vec![
            Variable {
                name: "v".into(),
                kind: VariableKind::Numeric { min: 0.0, max: 10.0 },
            },
            Variable {
                name: "signal.phases.p1.state".into(),
                kind: VariableKind::Categorical {
                    states: vec!["green".into(), "yellow".into(), "red".into()],
                },
            },
        ])
    }

    fn rec(t: i64, state: &str) -> Result<FlatRow> {
        flatten_record(&format!(r#"{{"timestamp":{t},"v":{t},"signal":{{"phases":{{"p1":{{"state":"{state}"}}}}}}}}"#))
    }

    #[test]
    fn prepare_and_round_trip() {
        let m = manifest();
        let rows = vec![rec(0, "green"), rec(1, "green"), rec(3, "red"), rec(1, "red")];
        let day = prepare_day(rows, 0, 4, &m, &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(day.rows(), 5);
        assert_eq!(day.row(2), &[-1.0, -1.0, -1.0]);
        assert_eq!(day.row(1), &[0.1, 1.0, 0.0]);
        assert_eq!(day.remaining(0)[0], None);
        assert_eq!(day.remaining(0)[1], None);
        assert_eq!(day.window(3, 2).len(), 6);

        let bytes = day.to_bytes();
        let back = EncodedDay::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, day);
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.check_manifest(&m).is_ok());
    }

    #[test]
    fn rejects_truncated_container() {
        let m = manifest();
        let day = prepare_day(vec![rec(0, "green"), rec(1, "red")], 0, 1, &m, &[1, 2, 3, 4, 5, 6]).unwrap();
        let mut bytes = day.to_bytes();
        assert_eq!(day.remaining(0)[0], Some(1));
        bytes.pop();
        assert!(matches!(EncodedDay::from_bytes(&bytes, "x"), Err(Error::Container { .. })));
    }
}
