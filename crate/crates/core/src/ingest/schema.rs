//! Feature manifest: which flattened keys become features, how each one is
//! coded, and the normalization bounds frozen from the sample days.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::flatten::{FlatRow, Leaf};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VariableKind {
    Numeric { min: f64, max: f64 },
    /// The last state is the reference level and gets no column.
    Categorical { states: Vec<String> },
    /// Seconds, wrapped by `period` and coded as a point on the circle.
    CyclicTime { period: u32 },
}

impl VariableKind {
    pub fn width(&self) -> usize {
        match self {
            VariableKind::Numeric { .. } => 1,
            VariableKind::Categorical { states } => states.len().saturating_sub(1),
            VariableKind::CyclicTime { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaManifest {
    pub version: u32,
    pub variables: Vec<Variable>,
    pub feature_count: usize,
    pub content_hash: String,
}

#[derive(Serialize)]
struct HashedPart<'a> {
    version: u32,
    variables: &'a [Variable],
    feature_count: usize,
}

impl SchemaManifest {
    pub fn new(variables: Vec<Variable>) -> Self {
        let feature_count = variables.iter().map(|v| v.kind.width()).sum();
        let mut m = SchemaManifest {
            version: MANIFEST_VERSION,
            variables,
            feature_count,
            content_hash: String::new(),
        };
        m.content_hash = m.compute_hash();
        m
    }

    pub fn compute_hash(&self) -> String {
        let bytes = serde_json::to_vec(&HashedPart {
            version: self.version,
            variables: &self.variables,
            feature_count: self.feature_count,
        })
        .expect("manifest serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SchemaManifest = serde_json::from_str(text)?;
        let expect = m.compute_hash();
        if expect != m.content_hash {
            return Err(Error::HashMismatch {
                expected: m.content_hash,
                found: expect,
            });
        }
        let width: usize = m.variables.iter().map(|v| v.kind.width()).sum();
        if width != m.feature_count {
            return Err(Error::WidthMismatch {
                expected: m.feature_count,
                found: width,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Column offset of every variable, in manifest order.
    pub fn offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.variables
            .iter()
            .map(|v| {
                let o = at;
                at += v.kind.width();
                o
            })
            .collect()
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        hex::decode_to_slice(&self.content_hash, &mut out).expect("hash is 32 hex bytes");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HintKind {
    Numeric,
    Categorical,
    CyclicTime,
    Drop,
}

/// Declares the kind of every key matching `pattern`; `*` matches exactly
/// one dot-separated segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindHint {
    pub pattern: String,
    pub kind: HintKind,
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub period: Option<u32>,
}

impl KindHint {
    pub fn matches(&self, key: &str) -> bool {
        let mut pat = self.pattern.split('.');
        let mut k = key.split('.');
        loop {
            match (pat.next(), k.next()) {
                (None, None) => return true,
                (Some("*"), Some(_)) => {}
                (Some(a), Some(b)) if a == b => {}
                _ => return false,
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaHints {
    #[serde(rename = "variable")]
    pub hints: Vec<KindHint>,
}

impl SchemaHints {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// First hint matching `key`.
    pub fn lookup(&self, key: &str) -> Option<&KindHint> {
        self.hints.iter().find(|h| h.matches(key))
    }

    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_HINTS).expect("bundled hints are valid")
    }
}

pub const REFERENCE_HINTS: &str = include_str!("../../../../configs/schema-hints.toml");

enum Acc {
    Numeric { min: f64, max: f64, seen: bool },
    Categorical { states: Vec<String> },
    Cyclic { period: u32 },
}

/// Accumulates variable kinds and bounds one row at a time.
pub struct SchemaBuilder<'h> {
    hints: &'h SchemaHints,
    order: Vec<String>,
    acc: BTreeMap<String, Acc>,
    skipped: BTreeSet<String>,
    rows: u64,
}

impl<'h> SchemaBuilder<'h> {
    pub fn new(hints: &'h SchemaHints) -> Self {
        SchemaBuilder {
            hints,
            order: Vec::new(),
            acc: BTreeMap::new(),
            skipped: BTreeSet::new(),
            rows: 0,
        }
    }

    pub fn observe(&mut self, row: &FlatRow) -> Result<()> {
        self.rows += 1;
        for (key, leaf) in &row.values {
            if self.skipped.contains(key) {
                continue;
            }
            if !self.acc.contains_key(key) {
                let Some(hint) = self.hints.lookup(key).filter(|h| h.kind != HintKind::Drop) else {
                    self.skipped.insert(key.clone());
                    continue;
                };
                let a = match hint.kind {
                    HintKind::Numeric => Acc::Numeric {
                        min: f64::INFINITY,
                        max: f64::NEG_INFINITY,
                        seen: false,
                    },
                    HintKind::Categorical => Acc::Categorical {
                        states: hint.states.clone(),
                    },
                    HintKind::CyclicTime => Acc::Cyclic {
                        period: hint.period.unwrap_or(86_400),
                    },
                    HintKind::Drop => unreachable!(),
                };
                self.order.push(key.clone());
                self.acc.insert(key.clone(), a);
            }
            match (self.acc.get_mut(key).unwrap(), leaf) {
                (_, Leaf::Missing) => {}
                (Acc::Numeric { min, max, seen }, Leaf::Number(x)) => {
                    *min = min.min(*x);
                    *max = max.max(*x);
                    *seen = true;
                }
                (Acc::Numeric { .. }, Leaf::Label(s)) => {
                    return Err(Error::MalformedRecord(format!(
                        "numeric variable `{key}` holds label `{s}`"
                    )))
                }
                (Acc::Categorical { states }, l) => {
                    let label = l.label().unwrap();
                    if !states.contains(&label) {
                        states.push(label);
                    }
                }
                (Acc::Cyclic { .. }, _) => {}
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<SchemaManifest> {
        if self.rows == 0 {
            return Err(Error::Config("schema needs at least one non-empty sample day".into()));
        }
        let mut variables = Vec::with_capacity(self.order.len());
        for name in self.order {
            let kind = match self.acc.remove(&name).unwrap() {
                Acc::Numeric { min, max, seen } => {
                    if !seen || min >= max {
                        return Err(Error::DegenerateVariable(name));
                    }
                    VariableKind::Numeric { min, max }
                }
                Acc::Categorical { states } => {
                    if states.len() < 2 {
                        return Err(Error::DegenerateVariable(name));
                    }
                    VariableKind::Categorical { states }
                }
                Acc::Cyclic { period } => VariableKind::CyclicTime { period },
            };
            variables.push(Variable { name, kind });
        }
        Ok(SchemaManifest::new(variables))
    }
}

/// Freeze a manifest from sample days. Keys without a hint, or hinted
/// `drop`, are left out.
pub fn build_schema(sample_days: &[Vec<FlatRow>], hints: &SchemaHints) -> Result<SchemaManifest> {
    let mut b = SchemaBuilder::new(hints);
    for row in sample_days.iter().flatten() {
        b.observe(row)?;
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::flatten::flatten_record;

    fn hints(text: &str) -> SchemaHints {
        SchemaHints::from_toml_str(text).unwrap()
    }

    fn rows(lines: &[&str]) -> Vec<FlatRow> {
        lines.iter().map(|l| flatten_record(l).unwrap()).collect()
    }

    #[test]
    fn numeric_bounds_from_all_days() {
        let h = hints("[[variable]]\npattern = \"v\"\nkind = \"numeric\"\n");
        let d1 = rows(&[r#"{"timestamp":1,"v":0}"#, r#"{"timestamp":2,"v":120}"#]);
        let d2 = rows(&[r#"{"timestamp":3,"v":200}"#]);
        let m = build_schema(&[d1, d2], &h).unwrap();
        assert_eq!(m.variables.len(), 1);
        assert_eq!(m.variables[0].kind, VariableKind::Numeric { min: 0.0, max: 200.0 });
        assert_eq!(m.feature_count, 1);
    }

    #[test]
    fn categorical_has_n_minus_one_columns() {
        let h = hints(
            "[[variable]]\npattern = \"s\"\nkind = \"categorical\"\nstates = [\"green\", \"yellow\", \"red\"]\n",
        );
        let d = rows(&[r#"{"timestamp":1,"s":"red"}"#]);
        let m = build_schema(&[d], &h).unwrap();
        assert_eq!(m.feature_count, 2);
    }

    #[test]
    fn observed_states_append_in_first_seen_order() {
        let h = hints("[[variable]]\npattern = \"s\"\nkind = \"categorical\"\n");
        let d = rows(&[
            r#"{"timestamp":1,"s":"b"}"#,
            r#"{"timestamp":2,"s":"a"}"#,
            r#"{"timestamp":3,"s":"b"}"#,
            r#"{"timestamp":4,"s":"c"}"#,
        ]);
        let m = build_schema(&[d], &h).unwrap();
        assert_eq!(
            m.variables[0].kind,
            VariableKind::Categorical {
                states: vec!["b".into(), "a".into(), "c".into()]
            }
        );
    }

    #[test]
    fn constant_numeric_is_degenerate() {
        let h = hints("[[variable]]\npattern = \"v\"\nkind = \"numeric\"\n");
        let d = rows(&[r#"{"timestamp":1,"v":5}"#, r#"{"timestamp":2,"v":5}"#]);
        assert!(matches!(build_schema(&[d], &h), Err(Error::DegenerateVariable(_))));
    }

    #[test]
    fn unhinted_and_dropped_keys_are_filtered() {
        let h = hints(
            "[[variable]]\npattern = \"a.*\"\nkind = \"drop\"\n[[variable]]\npattern = \"b\"\nkind = \"numeric\"\n",
        );
        let d = rows(&[r#"{"timestamp":1,"a":{"x":1},"b":0,"c":3}"#, r#"{"timestamp":2,"a":{"x":2},"b":1,"c":4}"#]);
        let m = build_schema(&[d], &h).unwrap();
        let names: Vec<_> = m.variables.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, vec!["b"]);
    }

    #[test]
    fn wildcard_matches_one_segment() {
        let h = KindHint {
            pattern: "signal.phases.*.state".into(),
            kind: HintKind::Categorical,
            states: vec![],
            period: None,
        };
        assert!(h.matches("signal.phases.p1.state"));
        assert!(!h.matches("signal.phases.p1.exit_mode"));
        assert!(!h.matches("signal.phases.state"));
    }

    #[test]
    fn manifest_hash_round_trip_and_tamper() {
        let m = SchemaManifest::new(vec![Variable {
            name: "v".into(),
            kind: VariableKind::Numeric { min: 0.0, max: 2.0 },
        }]);
        let text = m.to_json();
        assert_eq!(SchemaManifest::from_json(&text).unwrap(), m);
        let tampered = text.replace("2.0", "3.0");
        assert!(matches!(SchemaManifest::from_json(&tampered), Err(Error::HashMismatch { .. })));
    }
}
