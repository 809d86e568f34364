//! Peephole LSTM regressor: LSTM layer, dense ReLU layer and a linear
//! six-unit head, with exact backpropagation through time.

pub mod checkpoint;
pub mod params;

pub use checkpoint::Checkpoint;
pub use params::{init_params, param_count, Group, LstmParams, Peephole};

use crate::error::{Error, Result};
use crate::labeling::{HORIZON, PHASES};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Gate activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    /// Candidate `tanh(W_xc x + W_hc h + b_c)`.
    pub g: Vec<f64>,
    pub o: Vec<f64>,
}

struct CellOut<'a> {
    i: &'a mut [f64],
    f: &'a mut [f64],
    g: &'a mut [f64],
    o: &'a mut [f64],
    c: &'a mut [f64],
    tc: &'a mut [f64],
    h: &'a mut [f64],
}

fn cell<T: Copy + Into<f64>>(p: &LstmParams, x: &[T], h_prev: &[f64], c_prev: &[f64], out: CellOut<'_>) {
    let n = p.neurons;
    let CellOut { i, f, g, o, c, tc, h } = out;
    i.copy_from_slice(p.group(Group::BI));
    f.copy_from_slice(p.group(Group::BF));
    g.copy_from_slice(p.group(Group::BC));
    o.copy_from_slice(p.group(Group::BO));
    let (wxi, wxf, wxc, wxo) = (p.group(Group::WXi), p.group(Group::WXf), p.group(Group::WXc), p.group(Group::WXo));
    for (k, &xk) in x.iter().enumerate() {
        let xk: f64 = xk.into();
        if xk == 0.0 {
            continue;
        }
        let r = k * n..(k + 1) * n;
        axpy(i, xk, &wxi[r.clone()]);
        axpy(f, xk, &wxf[r.clone()]);
        axpy(g, xk, &wxc[r.clone()]);
        axpy(o, xk, &wxo[r]);
    }
    let (whi, whf, whc, who) = (p.group(Group::WHi), p.group(Group::WHf), p.group(Group::WHc), p.group(Group::WHo));
    for (j, &hj) in h_prev.iter().enumerate() {
        if hj == 0.0 {
            continue;
        }
        let r = j * n..(j + 1) * n;
        axpy(i, hj, &whi[r.clone()]);
        axpy(f, hj, &whf[r.clone()]);
        axpy(g, hj, &whc[r.clone()]);
        axpy(o, hj, &who[r]);
    }
    let (wci, wcf, wco) = (p.group(Group::WCi), p.group(Group::WCf), p.group(Group::WCo));
    for m in 0..n {
        i[m] = sigmoid(i[m] + wci[m] * c_prev[m]);
        f[m] = sigmoid(f[m] + wcf[m] * c_prev[m]);
        g[m] = g[m].tanh();
        c[m] = f[m] * c_prev[m] + i[m] * g[m];
        let peep = match p.peephole {
            Peephole::PreviousCell => c_prev[m],
            Peephole::CurrentCell => c[m],
        };
        o[m] = sigmoid(o[m] + wco[m] * peep);
        tc[m] = c[m].tanh();
        h[m] = o[m] * tc[m];
    }
}

/// One LSTM step: returns `(h_t, c_t, gates)`.
pub fn lstm_step<T: Copy + Into<f64>>(
    x: &[T],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>, StepCache)> {
    let n = p.neurons;
    if x.len() != p.feature_count || h_prev.len() != n || c_prev.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "step inputs x={}, h={}, c={} for F={}, N={}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.feature_count,
            n
        )));
    }
    let mut s = StepCache {
        i: vec![0.0; n],
        f: vec![0.0; n],
        g: vec![0.0; n],
        o: vec![0.0; n],
    };
    let (mut c, mut tc, mut h) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    cell(
        p,
        x,
        h_prev,
        c_prev,
        CellOut {
            i: &mut s.i,
            f: &mut s.f,
            g: &mut s.g,
            o: &mut s.o,
            c: &mut c,
            tc: &mut tc,
            h: &mut h,
        },
    );
    Ok((h, c, s))
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<'a, T> {
    window: &'a [T],
    steps: usize,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tc: Vec<f64>,
    /// `steps + 1` rows; row 0 is the zero initial state.
    c: Vec<f64>,
    h: Vec<f64>,
    dense_pre: Vec<f64>,
    dense: Vec<f64>,
    pub prediction: [f64; PHASES],
}

impl<T> ForwardCache<'_, T> {
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        let n = self.dense.len();
        &self.h[t * n..(t + 1) * n]
    }
}

/// Run the network over `window` (`steps × feature_count`, oldest first).
pub fn forward<'a, T: Copy + Into<f64>>(window: &'a [T], p: &LstmParams) -> Result<ForwardCache<'a, T>> {
    let (fc, n) = (p.feature_count, p.neurons);
    if fc == 0 || window.len() % fc != 0 {
        return Err(Error::ShapeMismatch(format!(
            "window of {} values is not a multiple of {fc} features",
            window.len()
        )));
    }
    let steps = window.len() / fc;
    let mut cache = ForwardCache {
        window,
        steps,
        i: vec![0.0; steps * n],
        f: vec![0.0; steps * n],
        g: vec![0.0; steps * n],
        o: vec![0.0; steps * n],
        tc: vec![0.0; steps * n],
        c: vec![0.0; (steps + 1) * n],
        h: vec![0.0; (steps + 1) * n],
        dense_pre: vec![0.0; n],
        dense: vec![0.0; n],
        prediction: [0.0; PHASES],
    };
    for t in 0..steps {
        let r = t * n..(t + 1) * n;
        let (c_prev, c_next) = cache.c.split_at_mut((t + 1) * n);
        let (h_prev, h_next) = cache.h.split_at_mut((t + 1) * n);
        cell(
            p,
            &window[t * fc..(t + 1) * fc],
            &h_prev[t * n..],
            &c_prev[t * n..],
            CellOut {
                i: &mut cache.i[r.clone()],
                f: &mut cache.f[r.clone()],
                g: &mut cache.g[r.clone()],
                o: &mut cache.o[r.clone()],
                c: &mut c_next[..n],
                tc: &mut cache.tc[r],
                h: &mut h_next[..n],
            },
        );
    }
    let h_last = &cache.h[steps * n..];
    cache.dense_pre.copy_from_slice(p.group(Group::DenseB));
    let dw = p.group(Group::DenseW);
    for (j, &hj) in h_last.iter().enumerate() {
        axpy(&mut cache.dense_pre, hj, &dw[j * n..(j + 1) * n]);
    }
    for (d, &a) in cache.dense.iter_mut().zip(&cache.dense_pre) {
        *d = a.max(0.0);
    }
    cache.prediction.copy_from_slice(p.group(Group::HeadB));
    let hw = p.group(Group::HeadW);
    for (j, &dj) in cache.dense.iter().enumerate() {
        axpy(&mut cache.prediction, dj, &hw[j * PHASES..(j + 1) * PHASES]);
    }
    if let Some(k) = cache.prediction.iter().position(|y| !y.is_finite()) {
        return Err(Error::NonFiniteActivation {
            batch: 0,
            detail: format!("head output {k} is {}", cache.prediction[k]),
        });
    }
    Ok(cache)
}

/// Accumulate `dL/dθ` into `grad` (same layout as the forward parameters).
pub fn backward<T: Copy + Into<f64>>(cache: &ForwardCache<'_, T>, dy: &[f64; PHASES], p: &LstmParams, grad: &mut LstmParams) {
    let (fc, n, steps) = (p.feature_count, p.neurons, cache.steps);

    // Head and dense layers.
    let mut dd = vec![0.0; n];
    {
        let hw = p.group(Group::HeadW);
        for j in 0..n {
            dd[j] = (0..PHASES).map(|k| hw[j * PHASES + k] * dy[k]).sum();
        }
        let g_hw = grad.group_mut(Group::HeadW);
        for (j, &dj) in cache.dense.iter().enumerate() {
            axpy(&mut g_hw[j * PHASES..(j + 1) * PHASES], dj, dy);
        }
        axpy(grad.group_mut(Group::HeadB), 1.0, dy);
    }
    for (d, &a) in dd.iter_mut().zip(&cache.dense_pre) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    let h_last = &cache.h[steps * n..];
    let mut dh = vec![0.0; n];
    {
        let dw = p.group(Group::DenseW);
        for j in 0..n {
            dh[j] = (0..n).map(|m| dw[j * n + m] * dd[m]).sum();
        }
        let g_dw = grad.group_mut(Group::DenseW);
        for (j, &hj) in h_last.iter().enumerate() {
            axpy(&mut g_dw[j * n..(j + 1) * n], hj, &dd);
        }
        axpy(grad.group_mut(Group::DenseB), 1.0, &dd);
    }

    // Through time.
    let (wci, wcf, wco) = (p.group(Group::WCi), p.group(Group::WCf), p.group(Group::WCo));
    let whs = [p.group(Group::WHi), p.group(Group::WHf), p.group(Group::WHc), p.group(Group::WHo)];
    let mut dc_carry = vec![0.0; n];
    let mut da = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut dh_prev = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    let mut g_peep = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut g_bias = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut g_wx: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; fc * n]);
    let mut g_wh: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n * n]);

    for t in (0..steps).rev() {
        let r = t * n..(t + 1) * n;
        let (i, f, g, o, tc) = (&cache.i[r.clone()], &cache.f[r.clone()], &cache.g[r.clone()], &cache.o[r.clone()], &cache.tc[r]);
        let c_prev = &cache.c[t * n..(t + 1) * n];
        let c_t = &cache.c[(t + 1) * n..(t + 2) * n];
        let h_prev = &cache.h[t * n..(t + 1) * n];
        for m in 0..n {
            let da_o = dh[m] * tc[m] * o[m] * (1.0 - o[m]);
            let mut dc = dc_carry[m] + dh[m] * o[m] * (1.0 - tc[m] * tc[m]);
            let peep = match p.peephole {
                Peephole::PreviousCell => c_prev[m],
                Peephole::CurrentCell => {
                    dc += da_o * wco[m];
                    c_t[m]
                }
            };
            let da_i = dc * g[m] * i[m] * (1.0 - i[m]);
            let da_c = dc * i[m] * (1.0 - g[m] * g[m]);
            let da_f = dc * c_prev[m] * f[m] * (1.0 - f[m]);
            dc_prev[m] = dc * f[m] + da_i * wci[m] + da_f * wcf[m];
            if p.peephole == Peephole::PreviousCell {
                dc_prev[m] += da_o * wco[m];
            }
            g_peep[0][m] += da_i * c_prev[m];
            g_peep[1][m] += da_f * c_prev[m];
            g_peep[2][m] += da_o * peep;
            da[0][m] = da_i;
            da[1][m] = da_f;
            da[2][m] = da_c;
            da[3][m] = da_o;
        }
        for q in 0..4 {
            axpy(&mut g_bias[q], 1.0, &da[q]);
        }
        let x = &cache.window[t * fc..(t + 1) * fc];
        for (k, &xk) in x.iter().enumerate() {
            let xk: f64 = xk.into();
            if xk == 0.0 {
                continue;
            }
            for q in 0..4 {
                axpy(&mut g_wx[q][k * n..(k + 1) * n], xk, &da[q]);
            }
        }
        for (j, &hj) in h_prev.iter().enumerate() {
            let mut acc = 0.0;
            for q in 0..4 {
                let row = &whs[q][j * n..(j + 1) * n];
                acc += row.iter().zip(&da[q]).map(|(w, d)| w * d).sum::<f64>();
                if hj != 0.0 {
                    axpy(&mut g_wh[q][j * n..(j + 1) * n], hj, &da[q]);
                }
            }
            dh_prev[j] = acc;
        }
        std::mem::swap(&mut dh, &mut dh_prev);
        std::mem::swap(&mut dc_carry, &mut dc_prev);
    }

    let xs = [Group::WXi, Group::WXf, Group::WXc, Group::WXo];
    let hs = [Group::WHi, Group::WHf, Group::WHc, Group::WHo];
    let bs = [Group::BI, Group::BF, Group::BC, Group::BO];
    for q in 0..4 {
        axpy(grad.group_mut(xs[q]), 1.0, &g_wx[q]);
        axpy(grad.group_mut(hs[q]), 1.0, &g_wh[q]);
        axpy(grad.group_mut(bs[q]), 1.0, &g_bias[q]);
    }
    for (q, g) in [Group::WCi, Group::WCf, Group::WCo].into_iter().enumerate() {
        axpy(grad.group_mut(g), 1.0, &g_peep[q]);
    }
}

/// Round half up, tolerating representation error just below the half.
fn round_half_up(x: f64) -> f64 {
    (x + 0.5 + 1e-9).floor()
}

pub fn to_seconds(normalized: f64) -> u32 {
    round_half_up(normalized.clamp(0.0, 1.0) * HORIZON as f64) as u32
}

pub fn predict<T: Copy + Into<f64>>(p: &LstmParams, window: &[T]) -> Result<[f64; PHASES]> {
    Ok(forward(window, p)?.prediction)
}

pub fn predict_seconds<T: Copy + Into<f64>>(p: &LstmParams, window: &[T]) -> Result<[u32; PHASES]> {
    Ok(predict(p, window)?.map(to_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_params_step() {
        let p = LstmParams::zeros(3, 2, Peephole::default());
        let (h, c, s) = lstm_step(&[0.0f64; 3], &[0.0; 2], &[0.0; 2], &p).unwrap();
        assert_eq!(s.i, vec![0.5; 2]);
        assert_eq!(s.f, vec![0.5; 2]);
        assert_eq!(s.o, vec![0.5; 2]);
        assert_eq!(c, vec![0.0; 2]);
        assert_eq!(h, vec![0.0; 2]);
    }

    #[test]
    fn scalar_step_with_unit_cell() {
        let p = LstmParams::zeros(1, 1, Peephole::default());
        let (h, c, _) = lstm_step(&[0.0f64], &[0.0], &[1.0], &p).unwrap();
        assert_eq!(c[0], 0.5);
        assert_relative_eq!(h[0], 0.231_059, epsilon = 1e-6);
    }

    #[test]
    fn forget_bias_one() {
        let mut p = LstmParams::zeros(1, 1, Peephole::default());
        p.group_mut(Group::BF)[0] = 1.0;
        let (_, _, s) = lstm_step(&[0.0f64], &[0.0], &[0.0], &p).unwrap();
        assert_relative_eq!(s.f[0], 0.731_058_578_630_004_9, epsilon = 1e-15);
    }

    #[test]
    fn shape_checks() {
        let p = LstmParams::zeros(3, 2, Peephole::default());
        assert!(matches!(lstm_step(&[0.0f64; 2], &[0.0; 2], &[0.0; 2], &p), Err(Error::ShapeMismatch(_))));
        assert!(matches!(forward(&[0.0f64; 7], &p), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_head_weights_give_head_bias() {
        let mut p = init_params(4, 3, 1, Peephole::default());
        p.group_mut(Group::HeadW).fill(0.0);
        p.group_mut(Group::HeadB).copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let window: Vec<f32> = (0..40).map(|k| (k % 5) as f32 / 5.0).collect();
        assert_eq!(predict(&p, &window).unwrap(), [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    }

    #[test]
    fn zero_params_keep_hidden_state_zero() {
        let p = LstmParams::zeros(2, 4, Peephole::default());
        let window = vec![0.0f64; 2 * 50];
        let cache = forward(&window, &p).unwrap();
        assert!((0..=50).all(|t| cache.hidden(t).iter().all(|&h| h == 0.0)));
        assert_eq!(cache.prediction, [0.0; PHASES]);
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = init_params(3, 2, 5, Peephole::default());
        let window: Vec<f64> = (0..15).map(|k| k as f64 / 15.0).collect();
        let cache = forward(&window, &p).unwrap();
        let mut g = p.zeros_like();
        backward(&cache, &[0.0; PHASES], &p, &mut g);
        assert!(g.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn no_input_peephole_gradient_without_cell_state() {
        // With a zero candidate the cell never leaves zero.
        let mut p = init_params(3, 2, 5, Peephole::default());
        for g in [Group::WXc, Group::WHc, Group::BC] {
            p.group_mut(g).fill(0.0);
        }
        let window: Vec<f64> = (0..15).map(|k| k as f64 / 15.0).collect();
        let cache = forward(&window, &p).unwrap();
        let mut g = p.zeros_like();
        backward(&cache, &[1.0; PHASES], &p, &mut g);
        assert!(g.group(Group::WCi).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn seconds_rounding() {
        assert_eq!(to_seconds(0.25), 50);
        assert_eq!(to_seconds(1.3), 200);
        assert_eq!(to_seconds(0.2525), 51);
        assert_eq!(to_seconds(-0.2), 0);
        assert_eq!(to_seconds(0.2475), 50);
    }

    proptest! {
        #[test]
        fn forward_is_deterministic(seed in 0u64..1000) {
            let p = init_params(5, 3, seed, Peephole::default());
            let window: Vec<f32> = (0..50).map(|k| ((k * 7 + seed as usize) % 11) as f32 / 11.0).collect();
            let a = predict(&p, &window).unwrap();
            let b = predict(&p, &window).unwrap();
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }
}
