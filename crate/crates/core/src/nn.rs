//! Dense feed-forward network with tanh hidden layers and a linear output,
//! trained by backpropagation and Adam. All arithmetic is f64 and every
//! reduction runs in a fixed order, so results are bit-reproducible.
//!
//! Weights of a layer are stored row-major as `n_out × n_in`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gridmarl-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Parameter-shaped buffer: gradients and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    fn same_shape(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self.biases.len() == net.biases.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }
}

/// Per-layer activations of a batch, kept for the backward pass, plus scratch
/// space reused between calls.
#[derive(Debug, Default, Clone)]
pub struct BatchCache {
    batch: usize,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl BatchCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Network output of the last forward pass, `batch × n_out` row-major.
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Elementwise tanh, accurate to a few ulp. The libm call dominated training
/// time; this branch-free form lets the compiler vectorize the loop. No FMA
/// contraction happens, so every code path rounds identically.
#[inline(always)]
fn tanh_one(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const ROUND: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
    let a = x.abs();
    let a = if a > 20.0 { 20.0 } else { a };
    // e = exp(−2a) by Cody–Waite reduction and a degree-13 Taylor polynomial.
    let y = -2.0 * a;
    let t = y * LOG2E + ROUND;
    let n = t - ROUND;
    let r = (y - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    // The low mantissa bits of `t` hold n; shifting them into the exponent field gives 2^n.
    let e = p * f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    let big = (1.0 - e) / (1.0 + e);
    // Near zero the quotient above cancels; use the series instead.
    let a2 = a * a;
    let small = a * (1.0 + a2 * (-1.0 / 3.0 + a2 * (2.0 / 15.0 + a2 * (-17.0 / 315.0 + a2 * (62.0 / 2835.0)))));
    let v = if a < 0.02 { small } else { big };
    v.copysign(x)
}

/// Runs the same loop body under the widest vector extension available.
/// Results are bit-identical across paths because nothing is fused.
macro_rules! dispatch_simd {
    ($body:ident($($arg:ident: $ty:ty),*)) => {{
        #[cfg(target_arch = "x86_64")]
        {
            #[target_feature(enable = "avx512f")]
            unsafe fn wide512($($arg: $ty),*) {
                $body($($arg),*)
            }
            #[target_feature(enable = "avx2")]
            unsafe fn wide256($($arg: $ty),*) {
                $body($($arg),*)
            }
            if is_x86_feature_detected!("avx512f") {
                // SAFETY: the CPU feature was detected at runtime.
                return unsafe { wide512($($arg),*) };
            }
            if is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                return unsafe { wide256($($arg),*) };
            }
        }
        $body($($arg),*)
    }};
}

#[inline(always)]
fn tanh_scalar(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = tanh_one(*x));
}

pub fn tanh_in_place(v: &mut [f64]) {
    dispatch_simd!(tanh_scalar(v: &mut [f64]))
}

#[derive(Clone, Copy)]
struct AdamCoeffs {
    b1: f64,
    b2: f64,
    c1: f64,
    c2: f64,
    lr: f64,
    eps: f64,
}

#[inline(always)]
fn adam_scalar(p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], k: AdamCoeffs) {
    let n = p.len();
    let (m, v, g) = (&mut m[..n], &mut v[..n], &g[..n]);
    for i in 0..n {
        let gi = g[i];
        m[i] = k.b1 * m[i] + (1.0 - k.b1) * gi;
        v[i] = k.b2 * v[i] + (1.0 - k.b2) * gi * gi;
        let m_hat = m[i] / k.c1;
        let v_hat = v[i] / k.c2;
        p[i] -= k.lr * m_hat / (v_hat.sqrt() + k.eps);
    }
}

fn adam_slice(p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], k: AdamCoeffs) {
    dispatch_simd!(adam_scalar(p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], k: AdamCoeffs))
}

/// `c = a · b (+ c if accumulate)` for an `m × k` by `k × n` product with
/// arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index touched by the kernel; the
    // output is a distinct mutable slice laid out row-major with `n` columns.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_dims)?;
        for (l, w) in net.weights.iter_mut().enumerate() {
            let (n_in, n_out) = (layer_dims[l], layer_dims[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            for x in w.iter_mut() {
                *x = rng.gen_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Domain(format!(
                "layer_dims must list at least input and output sizes, all > 0 (got {layer_dims:?})"
            )));
        }
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims.windows(2).map(|d| vec![0.0; d[0] * d[1]]).collect(),
            biases: layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn from_parts(layer_dims: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        let net = Mlp {
            layer_dims,
            weights,
            biases,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let template = Gradients::zeros_like(&Mlp::zeros(&self.layer_dims)?);
        let shapes_match = self.weights.len() == template.weights.len()
            && self.biases.len() == template.biases.len()
            && self.weights.iter().zip(&template.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&template.biases).all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return Err(Error::Domain("parameter shapes do not match layer_dims".into()));
        }
        if !self.params().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let last = self.n_layers() - 1;
        let mut x = input.to_vec();
        for l in 0..self.n_layers() {
            let n_in = self.layer_dims[l];
            let w = &self.weights[l];
            let mut y: Vec<f64> = self.biases[l]
                .iter()
                .enumerate()
                .map(|(j, &b)| {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    b + row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l < last {
                tanh_in_place(&mut y);
            }
            x = y;
        }
        Ok(x)
    }

    /// Forward pass over `batch` row-major inputs; activations stay in `cache`.
    pub fn forward_batch<'c>(&self, inputs: &[f64], batch: usize, cache: &'c mut BatchCache) -> Result<&'c [f64]> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::Dimension {
                expected: batch * self.input_dim(),
                got: inputs.len(),
            });
        }
        cache.batch = batch;
        cache.acts.resize_with(self.n_layers() + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(inputs);
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            y.clear();
            for _ in 0..batch {
                y.extend_from_slice(&self.biases[l]);
            }
            // y (batch × out) += x (batch × in) · Wᵀ (in × out)
            gemm(batch, n_in, n_out, x, (n_in, 1), &self.weights[l], (1, n_in), y, true);
            if l < last {
                tanh_in_place(y);
            }
        }
        Ok(cache.output())
    }

    /// Gradients of Σ_rows ⟨output_grad, output⟩ for the batch held in `cache`.
    pub fn backward_batch(&self, cache: &mut BatchCache, output_grad: &[f64], grads: &mut Gradients) -> Result<()> {
        let batch = cache.batch;
        if output_grad.len() != batch * self.output_dim() {
            return Err(Error::Dimension {
                expected: batch * self.output_dim(),
                got: output_grad.len(),
            });
        }
        if cache.acts.len() != self.n_layers() + 1 {
            return Err(Error::Domain("backward_batch called without a forward pass".into()));
        }
        if !grads.same_shape(self) {
            *grads = Gradients::zeros_like(self);
        }
        cache.delta.clear();
        cache.delta.extend_from_slice(output_grad);
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let x = &cache.acts[l];
            let delta = &cache.delta;
            // dW (out × in) = deltaᵀ (out × batch) · x (batch × in)
            gemm(n_out, batch, n_in, delta, (1, n_out), x, (n_in, 1), &mut grads.weights[l], false);
            let gb = &mut grads.biases[l];
            gb.iter_mut().for_each(|g| *g = 0.0);
            for row in delta.chunks_exact(n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                // dx (batch × in) = delta (batch × out) · W (out × in), then tanh'
                cache.delta_prev.clear();
                cache.delta_prev.resize(batch * n_in, 0.0);
                gemm(batch, n_out, n_in, delta, (n_out, 1), &self.weights[l], (n_in, 1), &mut cache.delta_prev, false);
                for (d, a) in cache.delta_prev.iter_mut().zip(x) {
                    *d *= 1.0 - a * a;
                }
                std::mem::swap(&mut cache.delta, &mut cache.delta_prev);
            }
        }
        Ok(())
    }

    /// Single-sample gradient of ⟨output_grad, output(input)⟩.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        let mut cache = BatchCache::new();
        self.forward_batch(input, 1, &mut cache)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward_batch(&mut cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// `self ← tau·other + (1 − tau)·self`, elementwise.
    pub fn blend_from(&mut self, other: &Mlp, tau: f64) -> Result<()> {
        if self.layer_dims != other.layer_dims {
            return Err(Error::Domain("cannot blend networks of different shapes".into()));
        }
        for (t, o) in self.params_mut().zip(other.params()) {
            *t += tau * (o - *t);
        }
        Ok(())
    }
}

/// Squared TD error on a single output and its parameter gradient.
pub fn td_loss_and_grad(net: &Mlp, state: &[f64], action: usize, target: f64) -> Result<(f64, Gradients)> {
    if action >= net.output_dim() {
        return Err(Error::Domain(format!(
            "action {action} out of range for {} outputs",
            net.output_dim()
        )));
    }
    let q = net.forward(state)?;
    let err = q[action] - target;
    let mut seed = vec![0.0; net.output_dim()];
    seed[action] = 2.0 * err;
    Ok((err * err, net.backward(state, &seed)?))
}

/// Mean squared TD error over a batch; gradients are written into `grads`.
pub fn td_batch_loss_and_grad(
    net: &Mlp,
    states: &[f64],
    actions: &[usize],
    targets: &[f64],
    cache: &mut BatchCache,
    grads: &mut Gradients,
) -> Result<f64> {
    let batch = actions.len();
    if targets.len() != batch {
        return Err(Error::Dimension {
            expected: batch,
            got: targets.len(),
        });
    }
    let n_out = net.output_dim();
    if let Some(&a) = actions.iter().find(|&&a| a >= n_out) {
        return Err(Error::Domain(format!("action {a} out of range for {n_out} outputs")));
    }
    let q = net.forward_batch(states, batch, cache)?;
    let mut seed = vec![0.0; batch * n_out];
    let mut loss = 0.0;
    let scale = 1.0 / batch as f64;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let err = q[i * n_out + a] - y;
        loss += err * err;
        seed[i * n_out + a] = 2.0 * err * scale;
    }
    net.backward_batch(cache, &seed, grads)?;
    Ok(loss * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients leave the network
/// untouched and return an error.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, adam: &mut AdamState) -> Result<()> {
    if !grads.same_shape(net) || !adam.m.same_shape(net) || !adam.v.same_shape(net) {
        return Err(Error::Domain("gradient shapes do not match the network".into()));
    }
    if let Some(g) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {g}")));
    }
    adam.step += 1;
    let t = adam.step as f64;
    let c1 = 1.0 - adam.beta1.powf(t);
    let c2 = 1.0 - adam.beta2.powf(t);
    let k = AdamCoeffs {
        b1: adam.beta1,
        b2: adam.beta2,
        c1,
        c2,
        lr: adam.lr,
        eps: adam.eps,
    };
    let params = net.weights.iter_mut().chain(net.biases.iter_mut());
    let moments = adam.m.weights.iter_mut().chain(adam.m.biases.iter_mut());
    let seconds = adam.v.weights.iter_mut().chain(adam.v.biases.iter_mut());
    let gs = grads.weights.iter().chain(&grads.biases);
    for (((p, m), v), g) in params.zip(moments).zip(seconds).zip(gs) {
        adam_slice(p, m, v, g, k);
    }
    Ok(())
}

/// On-disk network container (JSON). `weights[l]` is row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub adam: Option<AdamState>,
}

impl MlpCheckpoint {
    pub fn new(net: &Mlp, adam: Option<&AdamState>) -> Self {
        MlpCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_dims: net.layer_dims.clone(),
            weights: net.weights.clone(),
            biases: net.biases.clone(),
            adam: adam.cloned(),
        }
    }

    pub fn into_parts(self) -> Result<(Mlp, Option<AdamState>)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Domain(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let net = Mlp::from_parts(self.layer_dims, self.weights, self.biases)?;
        if let Some(adam) = &self.adam {
            if !adam.m.same_shape(&net) || !adam.v.same_shape(&net) {
                return Err(Error::Domain("adam state shape does not match network".into()));
            }
        }
        Ok((net, self.adam))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::entity_rng;

    fn loss_with_seed(net: &Mlp, input: &[f64], seed: &[f64]) -> f64 {
        net.forward(input).unwrap().iter().zip(seed).map(|(o, s)| o * s).sum()
    }

    /// Max relative error between backprop and central differences.
    fn gradient_check_error(dims: &[usize], seed: u64) -> f64 {
        let mut rng = entity_rng(seed, 11);
        let mut net = Mlp::new(dims, &mut rng).unwrap();
        for b in net.biases.iter_mut().flatten() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let input: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out_seed: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads = net.backward(&input, &out_seed).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let analytic: Vec<f64> = grads.iter().copied().collect();
        let n = analytic.len();
        for (idx, &a) in analytic.iter().enumerate().take(n) {
            let mut plus = net.clone();
            *plus.params_mut().nth(idx).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(idx).unwrap() -= h;
            let numeric = (loss_with_seed(&plus, &input, &out_seed) - loss_with_seed(&minus, &input, &out_seed)) / (2.0 * h);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn tanh_matches_libm() {
        let mut xs: Vec<f64> = (0..400_001).map(|i| (i as f64 - 200_000.0) * 1e-4).collect();
        xs.extend([1e-300, -1e-12, 1e-8, 0.019_999_9, 0.02, 19.9, 20.0, 700.0, -1e5, f64::INFINITY, f64::NEG_INFINITY]);
        let mut got = xs.clone();
        tanh_in_place(&mut got);
        for (x, g) in xs.iter().zip(&got) {
            let r = x.tanh();
            assert!((g - r).abs() <= 4e-15 * r.abs(), "tanh({x}) = {g}, libm {r}");
        }
        let mut nan = [f64::NAN];
        tanh_in_place(&mut nan);
        assert!(nan[0].is_nan());
        assert_eq!(tanh_one(0.0), 0.0);
        assert!(tanh_one(-0.0).is_sign_negative());
    }

    #[test]
    fn tanh_paths_agree_bitwise() {
        let xs: Vec<f64> = (0..100_000).map(|i| (i as f64 - 50_000.0) * 3.7e-4).collect();
        let mut a = xs.clone();
        tanh_scalar(&mut a);
        let mut b = xs;
        tanh_in_place(&mut b);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer() {
        let net = Mlp::from_parts(vec![1, 1], vec![vec![2.0]], vec![vec![1.0]]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn hand_unrolled_two_layer_forward() {
        // hidden: h0 = tanh(0.5·x0 − 0.25·x1 + 0.1), h1 = tanh(−x0 + 2·x1 − 0.2)
        // out:    y = 1.5·h0 − 0.5·h1 + 0.3
        let net = Mlp::from_parts(
            vec![2, 2, 1],
            vec![vec![0.5, -0.25, -1.0, 2.0], vec![1.5, -0.5]],
            vec![vec![0.1, -0.2], vec![0.3]],
        )
        .unwrap();
        let (x0, x1) = (0.5_f64, -0.5_f64);
        let h0 = (0.5 * x0 - 0.25 * x1 + 0.1_f64).tanh();
        let h1 = (-x0 + 2.0 * x1 - 0.2).tanh();
        let expected = 1.5 * h0 - 0.5 * h1 + 0.3;
        assert_close!(net.forward(&[x0, x1]).unwrap()[0], expected, 1e-14);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { expected: 3, got: 1 })));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = Mlp::new(&[4, 8, 3], &mut entity_rng(1, 1)).unwrap();
        let g = net.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let net = Mlp::new(&[3, 2], &mut entity_rng(2, 1)).unwrap();
        let x = [0.5, -1.0, 2.0];
        let seed = [0.3, -0.7];
        let g = net.backward(&x, &seed).unwrap();
        for j in 0..2 {
            for k in 0..3 {
                assert_close!(g.weights[0][j * 3 + k], seed[j] * x[k], 1e-15);
            }
            assert_eq!(g.biases[0][j], seed[j]);
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for (i, dims) in [vec![3, 5, 4, 2], vec![8, 16, 16, 4], vec![4, 6, 3]].iter().enumerate() {
            let err = gradient_check_error(dims, 100 + i as u64);
            assert!(err < 1e-4, "{dims:?}: max relative error {err}");
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = Mlp::new(&[4, 7, 7, 3], &mut entity_rng(3, 1)).unwrap();
        let mut rng = entity_rng(3, 2);
        let inputs: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cache = BatchCache::new();
        let out = net.forward_batch(&inputs, 5, &mut cache).unwrap().to_vec();
        for (row, x) in inputs.chunks(4).enumerate() {
            let single = net.forward(x).unwrap();
            for a in 0..3 {
                assert_close!(out[row * 3 + a], single[a], 1e-12);
            }
        }
    }

    #[test]
    fn td_loss_examples() {
        let net = Mlp::zeros(&[2, 3]).unwrap();
        let (loss, _) = td_loss_and_grad(&net, &[0.4, 0.1], 1, 1.0).unwrap();
        assert_eq!(loss, 1.0);

        let net = Mlp::new(&[2, 4, 3], &mut entity_rng(4, 1)).unwrap();
        let q = net.forward(&[0.2, -0.3]).unwrap();
        let (loss, g) = td_loss_and_grad(&net, &[0.2, -0.3], 2, q[2]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(td_loss_and_grad(&net, &[0.2, -0.3], 3, 0.0).is_err());
    }

    #[test]
    fn td_grad_flows_only_through_selected_output() {
        let net = Mlp::new(&[2, 3], &mut entity_rng(5, 1)).unwrap();
        let (_, g) = td_loss_and_grad(&net, &[0.2, -0.3], 0, 5.0).unwrap();
        assert!(g.biases[0][0] != 0.0);
        assert_eq!(&g.biases[0][1..], &[0.0, 0.0]);
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let net = Mlp::new(&[4, 8, 3], &mut entity_rng(6, 1)).unwrap();
        let mut rng = entity_rng(6, 2);
        let n = 64;
        let states: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut cache = BatchCache::new();
        let mut grads = Gradients::zeros_like(&net);
        let loss = td_batch_loss_and_grad(&net, &states, &actions, &targets, &mut cache, &mut grads).unwrap();

        let mut mean_loss = 0.0;
        let mut mean_grads = Gradients::zeros_like(&net);
        for i in 0..n {
            let (l, g) = td_loss_and_grad(&net, &states[i * 4..(i + 1) * 4], actions[i], targets[i]).unwrap();
            mean_loss += l / n as f64;
            for (m, v) in mean_grads.weights.iter_mut().chain(mean_grads.biases.iter_mut()).flatten().zip(g.iter()) {
                *m += v / n as f64;
            }
        }
        assert_close!(loss, mean_loss, 1e-12);
        for (a, b) in grads.iter().zip(mean_grads.iter()) {
            assert_close!(*a, *b, 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = Mlp::new(&[2, 3, 1], &mut entity_rng(7, 1)).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, 1e-3);
        adam_step(&mut net, &Gradients::zeros_like(&before), &mut adam).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        let mut net = Mlp::from_parts(vec![1, 1], vec![vec![0.0]], vec![vec![0.0]]).unwrap();
        let mut adam = AdamState::new(&net, 1e-3);
        let mut g = Gradients::zeros_like(&net);
        g.weights[0][0] = 1.0;
        adam_step(&mut net, &g, &mut adam).unwrap();
        assert_close!(net.weights(0)[0], -1e-3 / (1.0 + 1e-8), 1e-15);
        assert_eq!(net.biases(0)[0], 0.0);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        let mut adam = AdamState::new(&net, 1e-3);
        let mut g = Gradients::zeros_like(&net);
        g.biases[0][0] = f64::NAN;
        assert!(matches!(adam_step(&mut net, &g, &mut adam), Err(Error::NonFinite(_))));
        assert_eq!(adam.step, 0);
    }

    /// Scalar bowl (w·1 − 3)² minimized by repeated Adam steps: once the
    /// first moment has built up, every step lowers the loss.
    #[test]
    fn adam_descends_quadratic_bowl() {
        let mut net = Mlp::from_parts(vec![1, 1], vec![vec![0.0]], vec![vec![0.0]]).unwrap();
        let mut adam = AdamState::new(&net, 0.1);
        let mut losses = Vec::new();
        for _ in 0..10 {
            let (loss, g) = td_loss_and_grad(&net, &[1.0], 0, 3.0).unwrap();
            losses.push(loss);
            adam_step(&mut net, &g, &mut adam).unwrap();
        }
        assert!(losses[2..].windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = entity_rng(9, 9);
            let mut net = Mlp::new(&[4, 16, 3], &mut rng).unwrap();
            let mut adam = AdamState::new(&net, 1e-3);
            let mut cache = BatchCache::new();
            let mut grads = Gradients::zeros_like(&net);
            for _ in 0..50 {
                let states: Vec<f64> = (0..32 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let actions: Vec<usize> = (0..32).map(|_| rng.gen_range(0..3)).collect();
                let targets: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
                td_batch_loss_and_grad(&net, &states, &actions, &targets, &mut cache, &mut grads).unwrap();
                adam_step(&mut net, &grads, &mut adam).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn xavier_init_keeps_preactivations_small() {
        for dims in [vec![4usize, 64, 64, 3], vec![53, 64, 6], vec![4, 1000, 1000, 3]] {
            let net = Mlp::new(&dims, &mut entity_rng(10, 1)).unwrap();
            let mut rng = entity_rng(10, 2);
            let samples = if dims[1] == 1000 { 1_000 } else { 10_000 };
            let mut worst: f64 = 0.0;
            for _ in 0..samples {
                let mut x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for l in 0..net.n_layers() - 1 {
                    let n_in = dims[l];
                    let z: Vec<f64> = (0..dims[l + 1])
                        .map(|j| net.weights(l)[j * n_in..(j + 1) * n_in].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>())
                        .collect();
                    worst = z.iter().fold(worst, |m, v| m.max(v.abs()));
                    x = z.iter().map(|v| v.tanh()).collect();
                }
            }
            assert!(worst <= 3.0, "{dims:?}: max |pre-activation| {worst}");
        }
    }

    #[test]
    fn blend_interpolates() {
        let online = Mlp::from_parts(vec![1, 1], vec![vec![1.0]], vec![vec![1.0]]).unwrap();
        let mut target = Mlp::zeros(&[1, 1]).unwrap();
        target.blend_from(&online, 0.5).unwrap();
        assert_eq!(target.weights(0)[0], 0.5);
        target.blend_from(&online, 1.0).unwrap();
        assert_eq!(target, online);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = Mlp::new(&[4, 6, 3], &mut entity_rng(12, 1)).unwrap();
        let mut adam = AdamState::new(&net, 1e-3);
        adam.step = 17;
        adam.m.weights[0][3] = 0.123456789012345678;
        MlpCheckpoint::new(&net, Some(&adam)).save(&path).unwrap();
        let (net2, adam2) = MlpCheckpoint::load(&path).unwrap().into_parts().unwrap();
        assert_eq!(net, net2);
        assert_eq!(Some(adam), adam2);
    }

    #[test]
    fn checkpoint_rejects_bad_shapes() {
        let mut ck = MlpCheckpoint::new(&Mlp::zeros(&[2, 2]).unwrap(), None);
        ck.weights[0].pop();
        assert!(ck.into_parts().is_err());
    }
}
