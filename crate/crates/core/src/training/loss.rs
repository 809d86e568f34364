use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::PHASES;

/// Normalized MAPE denominator floor (one second of a 200 s horizon).
pub const MAPE_FLOOR: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
    Mape,
    /// Squared error discounted by `(1 - y)^2`.
    Tdse,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Mse, LossKind::Mae, LossKind::Mape, LossKind::Tdse];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::Mape => "mape",
            LossKind::Tdse => "tdse",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}` (expected mse, mae, mape or tdse)")))
    }
}

/// Value and derivative in `p` of one entry's loss.
#[inline]
pub fn entry_loss(kind: LossKind, p: f64, y: f64, mape_floor: f64) -> (f64, f64) {
    let e = p - y;
    let sign = if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    };
    match kind {
        LossKind::Mse => (e * e, 2.0 * e),
        LossKind::Mae => (e.abs(), sign),
        LossKind::Mape => {
            let d = y.max(mape_floor);
            (100.0 * e.abs() / d, 100.0 * sign / d)
        }
        LossKind::Tdse => {
            let w = (1.0 - y) * (1.0 - y);
            (e * e * w, 2.0 * e * w)
        }
    }
}

/// Mean loss over valid entries and its gradient in `pred`.
pub fn compute_loss(
    kind: LossKind,
    pred: &[f64; PHASES],
    truth: &[f64; PHASES],
    mask: &[bool; PHASES],
    mape_floor: f64,
) -> Result<(f64, [f64; PHASES])> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::NoValidEntries);
    }
    let mut total = 0.0;
    let mut grad = [0.0; PHASES];
    for k in 0..PHASES {
        if mask[k] {
            let (l, d) = entry_loss(kind, pred[k], truth[k], mape_floor);
            total += l;
            grad[k] = d / count as f64;
        }
    }
    Ok((total / count as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn discounted_reference_value() {
        assert_eq!(entry_loss(LossKind::Tdse, 0.5, 0.25, MAPE_FLOOR).0, 0.03515625);
        assert_eq!(entry_loss(LossKind::Tdse, 0.3, 1.0, MAPE_FLOOR), (0.0, 0.0));
    }

    #[test]
    fn perfect_prediction_is_free() {
        for kind in LossKind::ALL {
            let y = [0.1, 0.5, 0.0, 1.0, 0.3, 0.7];
            let (l, g) = compute_loss(kind, &y, &y, &[true; PHASES], MAPE_FLOOR).unwrap();
            assert_eq!(l, 0.0);
            assert_eq!(g, [0.0; PHASES]);
        }
    }

    #[test]
    fn masks_and_empty() {
        let mask = [true, false, false, false, false, false];
        let (l, g) = compute_loss(LossKind::Mse, &[0.5; PHASES], &[0.0, 9.0, 9.0, 9.0, 9.0, 9.0], &mask, MAPE_FLOOR).unwrap();
        assert_eq!(l, 0.25);
        assert_eq!(g, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            compute_loss(LossKind::Mse, &[0.0; PHASES], &[0.0; PHASES], &[false; PHASES], MAPE_FLOOR),
            Err(Error::NoValidEntries)
        ));
    }

    #[test]
    fn mape_uses_floor() {
        assert_eq!(entry_loss(LossKind::Mape, 0.01, 0.0, MAPE_FLOOR).0, 200.0);
        assert_eq!(entry_loss(LossKind::Mape, 0.3, 0.2, MAPE_FLOOR).0, 100.0 * 0.09999999999999998 / 0.2);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
            assert_eq!(LossKind::from_code(k.code()), Some(k));
        }
        assert!("huber".parse::<LossKind>().is_err());
    }

    proptest! {
        #[test]
        fn masked_entries_are_inert(p in prop::array::uniform6(-1.0f64..2.0), y in prop::array::uniform6(0.0f64..1.0), alt in 0.0f64..1.0, k in 0usize..6) {
            let mut mask = [true; PHASES];
            mask[k] = false;
            mask[(k + 1) % PHASES] = true;
            let mut y2 = y;
            y2[k] = alt;
            for kind in LossKind::ALL {
                let a = compute_loss(kind, &p, &y, &mask, MAPE_FLOOR).unwrap();
                let b = compute_loss(kind, &p, &y2, &mask, MAPE_FLOOR).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn losses_are_non_negative(p in -1.0f64..2.0, y in 0.0f64..=1.0) {
            for kind in LossKind::ALL {
                prop_assert!(entry_loss(kind, p, y, MAPE_FLOOR).0 >= 0.0);
            }
        }
    }
}
