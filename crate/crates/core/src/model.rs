//! Small sigmoid networks with hand-written backpropagation.
//!
//! Parameters are stored flat. For `Linear { inputs: d, outputs: k }` the
//! layout is `W (k x d, row-major) | b (k)`. For `TwoLayer` it is
//! `W1 (h x d) | b1 (h) | W2 (k x h) | b2 (k)`; hidden units and outputs are
//! both sigmoids.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, MilError, Result};
use crate::objectives::InstanceLoss;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear { inputs: usize, outputs: usize },
    TwoLayer { inputs: usize, hidden: usize, outputs: usize },
}

impl Architecture {
    /// Logistic regression on `d` inputs.
    pub fn linear(d: usize) -> Self {
        Architecture::Linear { inputs: d, outputs: 1 }
    }

    /// One hidden layer of two sigmoid units, single sigmoid output.
    pub fn two_layer(d: usize) -> Self {
        Architecture::TwoLayer { inputs: d, hidden: 2, outputs: 1 }
    }

    pub fn inputs(&self) -> usize {
        match *self {
            Architecture::Linear { inputs, .. } | Architecture::TwoLayer { inputs, .. } => inputs,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            Architecture::Linear { outputs, .. } | Architecture::TwoLayer { outputs, .. } => outputs,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            Architecture::Linear { inputs, outputs } => (inputs + 1) * outputs,
            Architecture::TwoLayer { inputs, hidden, outputs } => (inputs + 1) * hidden + (hidden + 1) * outputs,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Linear { .. } => "linear",
            Architecture::TwoLayer { .. } => "two_layer",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Architecture::Linear { inputs, outputs } => inputs > 0 && outputs > 0,
            Architecture::TwoLayer { inputs, hidden, outputs } => inputs > 0 && hidden > 0 && outputs > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(MilError::Config(format!("degenerate architecture {self:?}")))
        }
    }

    /// Indices of bias entries in the flat parameter vector.
    fn is_bias(&self, idx: usize) -> bool {
        match *self {
            Architecture::Linear { inputs, outputs } => idx >= inputs * outputs,
            Architecture::TwoLayer { inputs, hidden, .. } => {
                let w1 = inputs * hidden;
                let b1 = w1 + hidden;
                (w1..b1).contains(&idx) || idx >= b1 + hidden * self.outputs()
            }
        }
    }
}

/// Network weights. `seed` records the initialization stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub arch: Architecture,
    pub params: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(arch: Architecture) -> Self {
        Self { arch, params: vec![T::zero(); arch.n_params()], seed: 0 }
    }

    /// Zero biases, weights uniform on `[-0.5, 0.5)`, drawn in flat order
    /// from ChaCha8 stream 0 keyed by `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let params = (0..arch.n_params())
            .map(|i| {
                let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                if arch.is_bias(i) {
                    T::zero()
                } else {
                    T::lit(u - 0.5)
                }
            })
            .collect();
        Self { arch, params, seed }
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        ensure_len(arch.n_params(), params.len())?;
        Ok(Self { arch, params, seed: 0 })
    }

    fn check_features(&self, features: &[T]) -> Result<usize> {
        let d = self.arch.inputs();
        if !features.len().is_multiple_of(d) {
            return Err(MilError::Shape { expected: d, got: features.len() % d });
        }
        Ok(features.len() / d)
    }

    /// Scores for row-major `features`, laid out `[row][output]`.
    pub fn forward(&self, features: &[T]) -> Result<Vec<T>> {
        let n = self.check_features(features)?;
        let d = self.arch.inputs();
        let k = self.arch.outputs();
        let mut out = vec![T::zero(); n * k];
        let mut ws = Workspace::new(&self.arch);
        for (b, x) in features.chunks(BLOCK * d).enumerate() {
            let rows = x.len() / d;
            self.forward_block(x, rows, &mut ws);
            for i in 0..rows {
                for j in 0..k {
                    out[(b * BLOCK + i) * k + j] = ws.out[j * BLOCK + i];
                }
            }
        }
        Ok(out)
    }

    /// Exact parameter gradient for `loss_grad = d loss / d score`
    /// (same layout as [`forward`](Self::forward)'s output).
    pub fn backward(&self, features: &[T], loss_grad: &[T]) -> Result<Vec<T>> {
        let n = self.check_features(features)?;
        let d = self.arch.inputs();
        let k = self.arch.outputs();
        ensure_len(n * k, loss_grad.len())?;
        let mut grad = vec![T::zero(); self.arch.n_params()];
        let mut ws = Workspace::new(&self.arch);
        for (x, g) in features.chunks(BLOCK * d).zip(loss_grad.chunks(BLOCK * k)) {
            let rows = x.len() / d;
            self.forward_block(x, rows, &mut ws);
            for i in 0..rows {
                for j in 0..k {
                    ws.delta[j * BLOCK + i] = g[i * k + j];
                }
            }
            self.backward_block(x, rows, &mut ws, &mut grad);
        }
        Ok(grad)
    }

    /// Fused forward/backward pass for a per-instance loss on a
    /// single-output network. Returns the sum of loss terms (zero unless
    /// `with_value`) and the parameter gradient, each score derivative
    /// multiplied by `scale`.
    pub(crate) fn instance_pass(&self, features: &[T], labels: &[bool], scale: T, with_value: bool, loss: &InstanceLoss) -> (T, Vec<T>) {
        debug_assert_eq!(self.arch.outputs(), 1);
        let d = self.arch.inputs();
        let mut grad = vec![T::zero(); self.arch.n_params()];
        let mut ws = Workspace::new(&self.arch);
        let mut total = T::zero();
        for (x, y) in features.chunks(BLOCK * d).zip(labels.chunks(BLOCK)) {
            let rows = y.len();
            self.forward_block(x, rows, &mut ws);
            if with_value {
                for (&o, &t) in ws.out[..rows].iter().zip(y) {
                    total += loss.value(o, t);
                }
            }
            for ((d, &o), &t) in ws.delta[..rows].iter_mut().zip(&ws.out[..rows]).zip(y) {
                *d = loss.deriv(o, t) * scale;
            }
            self.backward_block(x, rows, &mut ws, &mut grad);
        }
        (total, grad)
    }

    /// Fills `ws.hidden` (unit-major) and `ws.out` (output-major) for `rows` rows.
    fn forward_block(&self, x: &[T], rows: usize, ws: &mut Workspace<T>) {
        let p = &self.params;
        match self.arch {
            Architecture::Linear { inputs: d, outputs: k } => {
                let (w, b) = p.split_at(d * k);
                for j in 0..k {
                    let z = &mut ws.out[j * BLOCK..j * BLOCK + rows];
                    affine(&w[j * d..(j + 1) * d], b[j], x, d, z);
                    T::sigmoid_in_place(z);
                }
            }
            Architecture::TwoLayer { inputs: d, hidden: h, outputs: k } => {
                let (w1, rest) = p.split_at(d * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * k);
                for u in 0..h {
                    let z = &mut ws.hidden[u * BLOCK..u * BLOCK + rows];
                    affine(&w1[u * d..(u + 1) * d], b1[u], x, d, z);
                    T::sigmoid_in_place(z);
                }
                for j in 0..k {
                    let z = &mut ws.out[j * BLOCK..j * BLOCK + rows];
                    z.iter_mut().for_each(|v| *v = b2[j]);
                    for u in 0..h {
                        let wu = w2[j * h + u];
                        for (v, &a) in z.iter_mut().zip(&ws.hidden[u * BLOCK..u * BLOCK + rows]) {
                            *v += wu * a;
                        }
                    }
                    T::sigmoid_in_place(z);
                }
            }
        }
    }

    /// Accumulates the parameter gradient given `d loss / d score` in
    /// `ws.delta`; expects `ws` filled by [`forward_block`](Self::forward_block).
    fn backward_block(&self, x: &[T], rows: usize, ws: &mut Workspace<T>, grad: &mut [T]) {
        let one = T::one();
        let k = self.arch.outputs();
        for j in 0..k {
            let r = j * BLOCK..j * BLOCK + rows;
            for (dl, &o) in ws.delta[r.clone()].iter_mut().zip(&ws.out[r]) {
                *dl *= o * (one - o);
            }
        }
        match self.arch {
            Architecture::Linear { inputs: d, outputs: k } => {
                let (gw, gb) = grad.split_at_mut(d * k);
                for j in 0..k {
                    let delta = &ws.delta[j * BLOCK..j * BLOCK + rows];
                    for c in 0..d {
                        gw[j * d + c] += strided_dot(delta, x, d, c);
                    }
                    gb[j] += lane_sum(delta);
                }
            }
            Architecture::TwoLayer { inputs: d, hidden: h, outputs: k } => {
                let w2 = &self.params[(d + 1) * h..(d + 1) * h + h * k];
                let (gw1, rest) = grad.split_at_mut(d * h);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(h * k);
                for j in 0..k {
                    let delta = &ws.delta[j * BLOCK..j * BLOCK + rows];
                    for u in 0..h {
                        gw2[j * h + u] += lane_dot(delta, &ws.hidden[u * BLOCK..u * BLOCK + rows]);
                    }
                    gb2[j] += lane_sum(delta);
                }
                for u in 0..h {
                    let dz = &mut ws.dz[..rows];
                    let hu = &ws.hidden[u * BLOCK..u * BLOCK + rows];
                    dz.iter_mut().for_each(|v| *v = T::zero());
                    for j in 0..k {
                        let wju = w2[j * h + u];
                        for (v, &dl) in dz.iter_mut().zip(&ws.delta[j * BLOCK..j * BLOCK + rows]) {
                            *v += dl * wju;
                        }
                    }
                    for (v, &a) in dz.iter_mut().zip(hu) {
                        *v *= a * (one - a);
                    }
                    for c in 0..d {
                        gw1[u * d + c] += strided_dot(dz, x, d, c);
                    }
                    gb1[u] += lane_sum(dz);
                }
            }
        }
    }
}

/// Rows processed per block by the forward and backward kernels.
const BLOCK: usize = 256;

struct Workspace<T> {
    hidden: Vec<T>,
    out: Vec<T>,
    delta: Vec<T>,
    dz: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(arch: &Architecture) -> Self {
        let h = match *arch {
            Architecture::Linear { .. } => 0,
            Architecture::TwoLayer { hidden, .. } => hidden,
        };
        let k = arch.outputs();
        Self {
            hidden: vec![T::zero(); h * BLOCK],
            out: vec![T::zero(); k * BLOCK],
            delta: vec![T::zero(); k * BLOCK],
            dz: vec![T::zero(); BLOCK],
        }
    }
}

/// `z[i] = b + w . x[i]` for row-major `x` with `d` columns.
#[inline]
fn affine<T: Scalar>(w: &[T], b: T, x: &[T], d: usize, z: &mut [T]) {
    for (v, row) in z.iter_mut().zip(x.chunks_exact(d)) {
        let mut s = b;
        for (&wc, &xc) in w.iter().zip(row) {
            s += wc * xc;
        }
        *v = s;
    }
}

// Reductions use four fixed accumulation lanes: deterministic, with short
// dependency chains.

#[inline]
fn lane_sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let mut it = a.chunks_exact(4);
    for c in &mut it {
        for l in 0..4 {
            acc[l] += c[l];
        }
    }
    for (l, &v) in it.remainder().iter().enumerate() {
        acc[l] += v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline]
fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let mut ia = a.chunks_exact(4);
    let mut ib = b.chunks_exact(4);
    for (ca, cb) in (&mut ia).zip(&mut ib) {
        for l in 0..4 {
            acc[l] += ca[l] * cb[l];
        }
    }
    for (l, (&x, &y)) in ia.remainder().iter().zip(ib.remainder()).enumerate() {
        acc[l] += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// `sum_i a[i] * x[i * d + c]`
#[inline]
fn strided_dot<T: Scalar>(a: &[T], x: &[T], d: usize, c: usize) -> T {
    let mut acc = [T::zero(); 4];
    for (i, &v) in a.iter().enumerate() {
        acc[i & 3] += v * x[i * d + c];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize, beta1: T, beta2: T, eps: T) -> Self {
        Self { beta1, beta2, eps, m: vec![T::zero(); n_params], v: vec![T::zero(); n_params], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: T) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
