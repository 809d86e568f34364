use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labeling::PHASES;

/// Which cell state the output gate's peephole reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Peephole {
    /// `o = σ(… + w_co ∘ c_{t-1})`.
    #[default]
    PreviousCell,
    /// `o = σ(… + w_co ∘ c_t)`.
    CurrentCell,
}

/// Parameter groups in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    WXi,
    WXf,
    WXc,
    WXo,
    WHi,
    WHf,
    WHc,
    WHo,
    WCi,
    WCf,
    WCo,
    BI,
    BF,
    BC,
    BO,
    DenseW,
    DenseB,
    HeadW,
    HeadB,
}

impl Group {
    pub const ALL: [Group; 19] = [
        Group::WXi,
        Group::WXf,
        Group::WXc,
        Group::WXo,
        Group::WHi,
        Group::WHf,
        Group::WHc,
        Group::WHo,
        Group::WCi,
        Group::WCf,
        Group::WCo,
        Group::BI,
        Group::BF,
        Group::BC,
        Group::BO,
        Group::DenseW,
        Group::DenseB,
        Group::HeadW,
        Group::HeadB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::WXi => "W_xi",
            Group::WXf => "W_xf",
            Group::WXc => "W_xc",
            Group::WXo => "W_xo",
            Group::WHi => "W_hi",
            Group::WHf => "W_hf",
            Group::WHc => "W_hc",
            Group::WHo => "W_ho",
            Group::WCi => "W_ci",
            Group::WCf => "W_cf",
            Group::WCo => "W_co",
            Group::BI => "b_i",
            Group::BF => "b_f",
            Group::BC => "b_c",
            Group::BO => "b_o",
            Group::DenseW => "dense_w",
            Group::DenseB => "dense_b",
            Group::HeadW => "head_w",
            Group::HeadB => "head_b",
        }
    }

    /// (rows, cols); matrices are stored one row per input unit.
    pub fn shape(self, f: usize, n: usize) -> (usize, usize) {
        match self {
            Group::WXi | Group::WXf | Group::WXc | Group::WXo => (f, n),
            Group::WHi | Group::WHf | Group::WHc | Group::WHo | Group::DenseW => (n, n),
            Group::HeadW => (n, PHASES),
            Group::HeadB => (1, PHASES),
            _ => (1, n),
        }
    }

    pub fn is_cell_weight(self) -> bool {
        (self as usize) < Group::BI as usize
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            Group::BI | Group::BF | Group::BC | Group::BO | Group::DenseB | Group::HeadB
        )
    }
}

/// All network weights in one flat buffer, addressed by group.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub feature_count: usize,
    pub neurons: usize,
    pub peephole: Peephole,
    pub data: Vec<f64>,
    offsets: [usize; 20],
}

pub fn param_count(f: usize, n: usize) -> usize {
    Group::ALL.iter().map(|g| {
        let (r, c) = g.shape(f, n);
        r * c
    }).sum()
}

impl LstmParams {
    pub fn zeros(feature_count: usize, neurons: usize, peephole: Peephole) -> Self {
        let mut offsets = [0usize; 20];
        for (k, g) in Group::ALL.iter().enumerate() {
            let (r, c) = g.shape(feature_count, neurons);
            offsets[k + 1] = offsets[k] + r * c;
        }
        LstmParams {
            feature_count,
            neurons,
            peephole,
            data: vec![0.0; offsets[19]],
            offsets,
        }
    }

    pub fn from_data(feature_count: usize, neurons: usize, peephole: Peephole, data: Vec<f64>) -> Option<Self> {
        let mut p = Self::zeros(feature_count, neurons, peephole);
        if data.len() != p.data.len() {
            return None;
        }
        p.data = data;
        Some(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn range(&self, g: Group) -> std::ops::Range<usize> {
        let k = g as usize;
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn group(&self, g: Group) -> &[f64] {
        &self.data[self.range(g)]
    }

    pub fn group_mut(&mut self, g: Group) -> &mut [f64] {
        let r = self.range(g);
        &mut self.data[r]
    }

    /// A zeroed buffer with this layout, for gradients and moments.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_count, self.neurons, self.peephole)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Uniform `±sqrt(6 / (fan_in + fan_out))` per weight group; biases zero
/// except the forget bias, which starts at 1.
pub fn init_params(feature_count: usize, neurons: usize, seed: u64, peephole: Peephole) -> LstmParams {
    let mut p = LstmParams::zeros(feature_count, neurons, peephole);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in Group::ALL {
        if g.is_bias() {
            continue;
        }
        let (rows, cols) = g.shape(feature_count, neurons);
        let (fan_in, fan_out) = if rows == 1 { (1, cols) } else { (rows, cols) };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in p.group_mut(g) {
            *w = rng.gen_range(-limit..=limit);
        }
    }
    p.group_mut(Group::BF).fill(1.0);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn formula(f: usize, n: usize) -> usize {
        let cell = 4 * f * n + 4 * n * n + 3 * n + 4 * n;
        cell + n * n + n + 6 * n + 6
    }

    #[test]
    fn parameter_count_formula() {
        for (f, n) in [(10, 6), (187, 47)] {
            assert_eq!(init_params(f, n, 0, Peephole::default()).len(), formula(f, n));
            assert_eq!(param_count(f, n), formula(f, n));
        }
    }

    #[test]
    fn scalar_cell_has_eleven_weights_and_four_biases() {
        let p = init_params(1, 1, 3, Peephole::default());
        let cell_w: usize = Group::ALL.iter().filter(|g| g.is_cell_weight()).map(|&g| p.group(g).len()).sum();
        let cell_b: usize = [Group::BI, Group::BF, Group::BC, Group::BO].iter().map(|&g| p.group(g).len()).sum();
        assert_eq!((cell_w, cell_b), (11, 4));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(10, 6, 42, Peephole::default());
        assert_eq!(a, init_params(10, 6, 42, Peephole::default()));
        assert_ne!(a, init_params(10, 6, 43, Peephole::default()));
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(a.group(Group::WXi).iter().all(|w| w.abs() <= lim));
        assert!(a.group(Group::BF).iter().all(|&b| b == 1.0));
        assert!(a.group(Group::BI).iter().all(|&b| b == 0.0));
    }
}
