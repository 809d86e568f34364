use std::f64::consts::TAU;

use super::flatten::{FlatRow, Leaf};
use super::schema::{SchemaManifest, VariableKind};

pub const MISSING: f32 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub timestamp: i64,
    pub features: Vec<f32>,
    pub missing: bool,
}

impl FeatureVector {
    pub fn all_missing(timestamp: i64, width: usize) -> Self {
        FeatureVector {
            timestamp,
            features: vec![MISSING; width],
            missing: true,
        }
    }
}

/// Circle coordinates of a time of day, rescaled from [-1, 1] to [0, 1].
pub fn encode_time_of_day(t: i64, period: u32) -> (f64, f64) {
    let phase = TAU * t.rem_euclid(period as i64) as f64 / period as f64;
    ((phase.sin() + 1.0) / 2.0, (phase.cos() + 1.0) / 2.0)
}

pub fn encode_row(row: &FlatRow, manifest: &SchemaManifest) -> FeatureVector {
    let mut out = vec![0f32; manifest.feature_count];
    let mut at = 0;
    for var in &manifest.variables {
        let w = var.kind.width();
        let cols = &mut out[at..at + w];
        let leaf = row.get(&var.name);
        if matches!(leaf, Leaf::Missing) {
            cols.fill(MISSING);
            at += w;
            continue;
        }
        match &var.kind {
            VariableKind::Numeric { min, max } => match leaf {
                Leaf::Number(x) => cols[0] = ((x - min) / (max - min)).clamp(0.0, 1.0) as f32,
                _ => {
                    log::warn!("non-numeric value for `{}` treated as missing", var.name);
                    cols[0] = MISSING;
                }
            },
            VariableKind::Categorical { states } => {
                let label = leaf.label().unwrap_or_default();
                match states.iter().position(|s| *s == label) {
                    Some(i) if i + 1 < states.len() => cols[i] = 1.0,
                    Some(_) => {}
                    None => log::warn!("unknown state `{label}` for `{}` coded as reference", var.name),
                }
            }
            VariableKind::CyclicTime { period } => match leaf {
                Leaf::Number(t) => {
                    let (s, c) = encode_time_of_day(*t as i64, *period);
                    cols[0] = s as f32;
                    cols[1] = c as f32;
                }
                _ => cols.fill(MISSING),
            },
        }
        at += w;
    }
    FeatureVector {
        timestamp: row.timestamp,
        features: out,
        missing: false,
    }
}
