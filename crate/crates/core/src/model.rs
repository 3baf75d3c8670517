//! Gated-attention MIL aggregator with a linear classifier head.
//!
//! For a bag of embeddings `f_j` (rows of the bag matrix):
//!
//! ```text
//! e_j   = w . (tanh(V f_j) * sigmoid(U f_j))
//! a     = softmax(e)
//! z     = sum_j a_j f_j
//! logit = W_c . z + b,   p = sigmoid(logit)
//! ```
//!
//! Gradients of the bag cross-entropy are derived by hand in [`backward`].

use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::{stream_rng, streams};

/// Default attention width.
pub const DEFAULT_ATTENTION_DIM: usize = 128;

/// Aggregator and head weights, stored flat in checkpoint order:
/// `V` (A x D), `U` (A x D), `w` (A), `W_c` (D), `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AbmilParams {
    dim: usize,
    attn_dim: usize,
    data: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = AbmilParams;

impl AbmilParams {
    pub fn zeros(dim: usize, attn_dim: usize) -> Self {
        AbmilParams { dim, attn_dim, data: alloc::vec![0.0; Self::len_for(dim, attn_dim)] }
    }

    pub fn from_flat(dim: usize, attn_dim: usize, data: Vec<f64>) -> Result<Self> {
        let expected = Self::len_for(dim, attn_dim);
        if data.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(AbmilParams { dim, attn_dim, data })
    }

    pub fn len_for(dim: usize, attn_dim: usize) -> usize {
        2 * attn_dim * dim + attn_dim + dim + 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn attn_dim(&self) -> usize {
        self.attn_dim
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self) -> [usize; 5] {
        let ad = self.attn_dim * self.dim;
        [0, ad, 2 * ad, 2 * ad + self.attn_dim, 2 * ad + self.attn_dim + self.dim]
    }

    /// `V`, row-major A x D.
    pub fn v(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[0]..o[1]]
    }

    /// `U`, row-major A x D.
    pub fn u(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[1]..o[2]]
    }

    pub fn w(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[2]..o[3]]
    }

    pub fn wc(&self) -> &[f64] {
        let o = self.offsets();
        &self.data[o[3]..o[4]]
    }

    pub fn b(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    /// Mutable views of `(V, U, w, W_c, b)`.
    #[allow(clippy::type_complexity)]
    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64], &mut f64) {
        let o = self.offsets();
        let (v, rest) = self.data.split_at_mut(o[1]);
        let (u, rest) = rest.split_at_mut(o[2] - o[1]);
        let (w, rest) = rest.split_at_mut(o[3] - o[2]);
        let (wc, rest) = rest.split_at_mut(o[4] - o[3]);
        (v, u, w, wc, &mut rest[0])
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.data, &self.data))
    }
}

/// Uniform Glorot initialization per weight matrix; bias starts at zero.
pub fn init_params(dim: usize, attn_dim: usize, seed: u64) -> Result<AbmilParams> {
    if dim == 0 || attn_dim == 0 {
        return Err(Error::InvalidConfig("model dimensions must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, streams::INIT);
    let mut p = AbmilParams::zeros(dim, attn_dim);
    let glorot = |fan_in: usize, fan_out: usize| libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let (v, u, w, wc, _) = p.parts_mut();
    for (block, s) in [
        (v, glorot(dim, attn_dim)),
        (u, glorot(dim, attn_dim)),
        (w, glorot(attn_dim, 1)),
        (wc, glorot(dim, 1)),
    ] {
        for x in block.iter_mut() {
            *x = rng.random_range(-s..=s);
        }
    }
    Ok(p)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy from a logit: `softplus(x) - y x`.
pub fn bce_from_logit(logit: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + libm::log1p(libm::exp(-libm::fabs(logit)))
}

/// Output of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BagScore {
    pub attention: Vec<f64>,
    pub z: Vec<f64>,
    pub logit: f64,
    pub p_hat: f64,
}

struct Trace {
    tanh: Vec<f64>,
    gate: Vec<f64>,
    score: BagScore,
}

fn trace(params: &AbmilParams, x: &Matrix) -> Result<Trace> {
    if x.rows() == 0 {
        return Err(Error::EmptyBag);
    }
    if x.cols() != params.dim {
        return Err(Error::DimensionMismatch { expected: params.dim, found: x.cols() });
    }
    let (d, a_dim, n) = (params.dim, params.attn_dim, x.rows());
    let (v, u, w) = (params.v(), params.u(), params.w());
    let mut tanh = Vec::with_capacity(n * a_dim);
    let mut gate = Vec::with_capacity(n * a_dim);
    let mut e = Vec::with_capacity(n);
    for f in x.iter_rows() {
        let mut s = 0.0;
        for k in 0..a_dim {
            let t = libm::tanh(dot(&v[k * d..(k + 1) * d], f));
            let g = sigmoid(dot(&u[k * d..(k + 1) * d], f));
            s += w[k] * t * g;
            tanh.push(t);
            gate.push(g);
        }
        e.push(s);
    }
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut attention: Vec<f64> = e.iter().map(|s| libm::exp(s - max)).collect();
    let total: f64 = attention.iter().sum();
    attention.iter_mut().for_each(|a| *a /= total);
    let mut z = alloc::vec![0.0; d];
    for (f, &a) in x.iter_rows().zip(&attention) {
        for (zk, fk) in z.iter_mut().zip(f) {
            *zk += a * fk;
        }
    }
    let logit = dot(params.wc(), &z) + params.b();
    Ok(Trace { tanh, gate, score: BagScore { attention, z, logit, p_hat: sigmoid(logit) } })
}

/// Scores a bag given as a members-by-D matrix.
pub fn forward(params: &AbmilParams, embeddings: &Matrix) -> Result<BagScore> {
    trace(params, embeddings).map(|t| t.score)
}

/// Gradient of the single-bag cross-entropy with respect to every parameter,
/// together with the loss.
pub fn backward(params: &AbmilParams, embeddings: &Matrix, label: bool) -> Result<(Gradients, f64)> {
    let Trace { tanh, gate, score } = trace(params, embeddings)?;
    let (d, a_dim) = (params.dim, params.attn_dim);
    let y = if label { 1.0 } else { 0.0 };
    let loss = bce_from_logit(score.logit, label);
    let d_logit = score.p_hat - y;

    let mut grads = AbmilParams::zeros(d, a_dim);
    let w = params.w();
    let (gv, gu, gw, gwc, gb) = grads.parts_mut();
    *gb = d_logit;
    for (g, z) in gwc.iter_mut().zip(&score.z) {
        *g = d_logit * z;
    }
    // dL/da_j = d_logit * (W_c . f_j); softmax Jacobian gives
    // dL/de_j = a_j (dL/da_j - sum_k a_k dL/da_k)
    let d_att: Vec<f64> = embeddings.iter_rows().map(|f| d_logit * dot(params.wc(), f)).collect();
    let mean: f64 = d_att.iter().zip(&score.attention).map(|(g, a)| g * a).sum();
    for (j, f) in embeddings.iter_rows().enumerate() {
        let de = score.attention[j] * (d_att[j] - mean);
        if de == 0.0 {
            continue;
        }
        for k in 0..a_dim {
            let t = tanh[j * a_dim + k];
            let g = gate[j * a_dim + k];
            gw[k] += de * t * g;
            let dk = de * w[k];
            let dh = dk * g * (1.0 - t * t);
            let dg = dk * t * g * (1.0 - g);
            let row_v = &mut gv[k * d..(k + 1) * d];
            for (r, fi) in row_v.iter_mut().zip(f) {
                *r += dh * fi;
            }
            let row_u = &mut gu[k * d..(k + 1) * d];
            for (r, fi) in row_u.iter_mut().zip(f) {
                *r += dg * fi;
            }
        }
    }
    Ok((grads, loss))
}

/// `p_hat >= tau`.
pub fn predict(p_hat: f64, tau: f64) -> bool {
    p_hat >= tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use alloc::vec;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, StandardNormal};

    fn random_bag(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = stream_rng(seed, 99);
        let data = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    fn loss_at(p: &AbmilParams, x: &Matrix, y: bool) -> f64 {
        bce_from_logit(forward(p, x).unwrap().logit, y)
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = init_params(4, 2, 7).unwrap();
        assert_eq!(a, init_params(4, 2, 7).unwrap());
        assert_ne!(a, init_params(4, 2, 8).unwrap());
        assert_eq!((a.v().len(), a.u().len(), a.w().len(), a.wc().len()), (8, 8, 2, 4));
        assert_eq!(a.b(), 0.0);
        let s = libm::sqrt(6.0 / 6.0);
        assert!(a.v().iter().all(|x| x.abs() <= s));
        assert!(init_params(0, 2, 1).is_err());
    }

    #[test]
    fn singleton_and_identical_bags() {
        let p = init_params(3, 5, 1).unwrap();
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.0]]).unwrap();
        let s = forward(&p, &x).unwrap();
        assert_eq!(s.attention, vec![1.0]);
        assert_eq!(s.z, vec![0.3, -1.0, 2.0]);

        let x = Matrix::from_rows(&[[0.5, 0.25, -1.0]; 7]).unwrap();
        let s = forward(&p, &x).unwrap();
        for a in &s.attention {
            assert!((a - 1.0 / 7.0).abs() < 1e-15);
        }
        for (z, e) in s.z.iter().zip([0.5, 0.25, -1.0]) {
            assert!((z - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_params_give_half() {
        let p = AbmilParams::zeros(3, 4);
        let s = forward(&p, &random_bag(9, 3, 1)).unwrap();
        assert!(s.attention.iter().all(|a| (a - 1.0 / 9.0).abs() < 1e-15));
        assert_eq!(s.logit, 0.0);
        assert_eq!(s.p_hat, 0.5);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = AbmilParams::zeros(3, 4);
        assert_eq!(forward(&p, &Matrix::zeros(0, 3)), Err(Error::EmptyBag));
        assert!(matches!(forward(&p, &Matrix::zeros(2, 4)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 0..10u64 {
            let (n, d, a) = (3 + seed as usize, 2 + (seed as usize % 4), 1 + (seed as usize % 5));
            let p = init_params(d, a, seed).unwrap();
            let x = random_bag(n, d, seed);
            let y = seed % 2 == 0;
            let (g, loss) = backward(&p, &x, y).unwrap();
            assert!((loss - loss_at(&p, &x, y)).abs() < 1e-14);
            let h = 1e-5;
            for i in 0..p.as_flat().len() {
                let mut plus = p.clone();
                plus.as_flat_mut()[i] += h;
                let mut minus = p.clone();
                minus.as_flat_mut()[i] -= h;
                let numeric = (loss_at(&plus, &x, y) - loss_at(&minus, &x, y)) / (2.0 * h);
                let analytic = g.as_flat()[i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(rel <= 1e-4, "seed {seed} param {i}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn saturated_loss_has_vanishing_gradient() {
        let x = random_bag(5, 3, 2);
        let mut p = init_params(3, 4, 2).unwrap();
        let mut last = f64::INFINITY;
        for b in [5.0, 15.0, 30.0] {
            *p.parts_mut().4 = b;
            let (g, _) = backward(&p, &x, true).unwrap();
            assert!(g.norm() < last);
            last = g.norm();
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn permutation_leaves_gradients_unchanged() {
        let p = init_params(4, 6, 3).unwrap();
        let x = random_bag(12, 4, 3);
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut stream_rng(3, 1));
        let (g1, l1) = backward(&p, &x, false).unwrap();
        let (g2, l2) = backward(&p, &x.select_rows(&order), false).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.as_flat().iter().zip(g2.as_flat()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn scaling_w_keeps_attention_argmax() {
        let mut p = init_params(4, 6, 4).unwrap();
        let x = random_bag(20, 4, 4);
        let argmax = |s: &BagScore| {
            s.attention
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        let before = argmax(&forward(&p, &x).unwrap());
        p.parts_mut().2.iter_mut().for_each(|w| *w *= 3.5);
        assert_eq!(argmax(&forward(&p, &x).unwrap()), before);
    }

    #[test]
    fn predict_is_inclusive() {
        assert!(predict(0.5, 0.5));
        assert!(!predict(0.49, 0.5));
        assert!(predict(0.91, 0.9));
    }

    #[test]
    fn bce_values() {
        let ln2 = core::f64::consts::LN_2;
        assert!((bce_from_logit(0.0, true) - ln2).abs() < 1e-15);
        assert!((bce_from_logit(0.0, false) - ln2).abs() < 1e-15);
        assert!(bce_from_logit(800.0, true) < 1e-300);
        assert!((bce_from_logit(-800.0, true) - 800.0).abs() < 1e-9);
    }
}
