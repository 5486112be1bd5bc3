//! Forward evaluation, reverse-mode gradients, and Adam fitting for the
//! small MLPs in this crate.
//!
//! Weights are stored as `f32`; every dot product, activation, and gradient
//! is computed in `f64` and rounded only when a result is handed back as a
//! weight or network output.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::signals::Signal;
use crate::weights::{check_shapes, validate, Activation, Matrix, MlpSpec, WeightSpaceVector};

/// Frequency folded into the first sine layer at initialization.
pub const DEFAULT_OMEGA0: f32 = 30.0;

/// Full-batch training up to this many coordinates, minibatches beyond.
pub const FULL_BATCH_LIMIT: usize = 4096;

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// PSNR reported for an exact reconstruction.
pub const PSNR_CAP_DB: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Stop once training PSNR exceeds this. Written as `0` in config files
    /// when disabled.
    #[serde(with = "psnr_target")]
    pub early_stop_psnr: Option<f64>,
    pub seed: u64,
    /// First-layer frequency for SIREN initialization.
    pub omega0: f32,
    /// Step-size multiplier for sine-layer parameters. Since `omega0` is
    /// folded into the stored weights, setting this to `omega0` reproduces
    /// Adam on the conventional `sin(omega0 * (Wx + b))` parameterization.
    pub sine_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 5e-4,
            batch_size: FULL_BATCH_LIMIT,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_psnr: Some(40.0),
            seed: 0,
            omega0: DEFAULT_OMEGA0,
            sine_lr_scale: DEFAULT_OMEGA0 as f64,
        }
    }
}

mod psnr_target {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(v.unwrap_or(0.0))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let x = f64::deserialize(d)?;
        Ok((x > 0.0).then_some(x))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) {
            return bad("adam_beta1 must be in (0, 1)");
        }
        if !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam_beta2 must be in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !(self.omega0 > 0.0) {
            return bad("omega0 must be positive");
        }
        if !(self.sine_lr_scale > 0.0) {
            return bad("sine_lr_scale must be positive");
        }
        Ok(())
    }
}

/// Gradient of a scalar with respect to every weight and bias, in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientTape {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let dims = spec.dims();
        Self {
            weights: dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    /// Same ordering as [`WeightSpaceVector::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == 0.0)
    }
}

/// Evaluates the network at one coordinate.
pub fn forward(v: &WeightSpaceVector, spec: &MlpSpec, x: &[f32]) -> Result<Vec<f32>> {
    check_shapes(v, spec)?;
    check_input(spec, x.len(), 1)?;
    Ok(eval_f64(v, spec, x).into_iter().map(|y| y as f32).collect())
}

/// Evaluates at `n = xs.len() / d_0` coordinates packed row-major; returns
/// `n * d_M` outputs packed the same way.
pub fn forward_batch(v: &WeightSpaceVector, spec: &MlpSpec, xs: &[f32]) -> Result<Vec<f32>> {
    check_shapes(v, spec)?;
    let d0 = spec.input_dim();
    if !xs.len().is_multiple_of(d0) {
        return Err(Error::Dimension(format!(
            "{} coordinate values is not a multiple of input dim {d0}",
            xs.len()
        )));
    }
    let mut out = Vec::with_capacity(xs.len() / d0 * spec.output_dim());
    for x in xs.chunks_exact(d0) {
        out.extend(eval_f64(v, spec, x).into_iter().map(|y| y as f32));
    }
    Ok(out)
}

fn check_input(spec: &MlpSpec, got: usize, n: usize) -> Result<()> {
    if got != spec.input_dim() * n {
        return Err(Error::Dimension(format!(
            "input has {got} values, expected {}",
            spec.input_dim() * n
        )));
    }
    Ok(())
}

fn eval_f64(v: &WeightSpaceVector, spec: &MlpSpec, x: &[f32]) -> Vec<f64> {
    let mut a: Vec<f64> = x.iter().map(|&t| t as f64).collect();
    for ((w, b), &act) in v.weights().iter().zip(v.biases()).zip(spec.activations()) {
        a = (0..w.rows())
            .map(|i| act.apply(affine_row(w.row(i), b[i], &a)))
            .collect();
    }
    a
}

#[inline]
fn affine_row(row: &[f32], bias: f32, x: &[f64]) -> f64 {
    row.iter()
        .zip(x)
        .fold(bias as f64, |acc, (&w, &xi)| acc + w as f64 * xi)
}

/// Gradient of `upstream · f(x)` with respect to every parameter.
pub fn backward(v: &WeightSpaceVector, spec: &MlpSpec, x: &[f32], upstream: &[f64]) -> Result<GradientTape> {
    check_shapes(v, spec)?;
    check_input(spec, x.len(), 1)?;
    if upstream.len() != spec.output_dim() {
        return Err(Error::Dimension(format!(
            "upstream has {} values, expected {}",
            upstream.len(),
            spec.output_dim()
        )));
    }
    let cache = BatchForward::run(v, spec, x, 1);
    let mut tape = GradientTape::zeros(spec);
    cache.accumulate_backward(v, spec, upstream, &mut tape);
    Ok(tape)
}

/// Activations of a batch kept for the backward pass.
pub(crate) struct BatchForward {
    n: usize,
    /// `acts[0]` is the input; `acts[m]` the output of layer `m`.
    acts: Vec<Vec<f64>>,
    /// Activation derivatives at the pre-activations of layers `1..=M`.
    derivs: Vec<Vec<f64>>,
}

impl BatchForward {
    pub(crate) fn run(v: &WeightSpaceVector, spec: &MlpSpec, xs: &[f32], n: usize) -> Self {
        let mut acts = vec![xs.iter().map(|&t| t as f64).collect::<Vec<_>>()];
        let mut derivs = Vec::with_capacity(spec.num_layers());
        for ((w, b), &act) in v.weights().iter().zip(v.biases()).zip(spec.activations()) {
            let (rows, cols) = (w.rows(), w.cols());
            // Transposed so the inner loop runs over output units; the
            // summation order per unit stays j = 0..cols, bias first.
            let mut wt = vec![0.0f64; rows * cols];
            for i in 0..rows {
                for (j, &x) in w.row(i).iter().enumerate() {
                    wt[j * rows + i] = x as f64;
                }
            }
            let bias: Vec<f64> = b.iter().map(|&t| t as f64).collect();
            let prev = acts.last().expect("input layer");
            let mut z = vec![0.0; n * rows];
            for s in 0..n {
                let xs = &prev[s * cols..(s + 1) * cols];
                let zs = &mut z[s * rows..(s + 1) * rows];
                zs.copy_from_slice(&bias);
                for (j, &xj) in xs.iter().enumerate() {
                    for (zi, &wji) in zs.iter_mut().zip(&wt[j * rows..(j + 1) * rows]) {
                        *zi += wji * xj;
                    }
                }
            }
            let mut d = vec![1.0; n * rows];
            match act {
                Activation::Sine => {
                    for (zi, di) in z.iter_mut().zip(d.iter_mut()) {
                        let (sn, cs) = zi.sin_cos();
                        *zi = sn;
                        *di = cs;
                    }
                }
                Activation::Relu => {
                    for (zi, di) in z.iter_mut().zip(d.iter_mut()) {
                        if *zi > 0.0 {
                            *di = 1.0;
                        } else {
                            *zi = 0.0;
                            *di = 0.0;
                        }
                    }
                }
                Activation::Linear => {}
            }
            derivs.push(d);
            acts.push(z);
        }
        Self { n, acts, derivs }
    }

    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }

    /// Adds the gradient of `Σ_s upstream_s · f(x_s)` into `tape`.
    pub(crate) fn accumulate_backward(&self, v: &WeightSpaceVector, spec: &MlpSpec, upstream: &[f64], tape: &mut GradientTape) {
        let m = spec.num_layers();
        let n = self.n;
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&self.derivs[m - 1])
            .map(|(&g, &d)| g * d)
            .collect();
        for layer in (0..m).rev() {
            let w = &v.weights()[layer];
            let (rows, cols) = (w.rows(), w.cols());
            let prev = &self.acts[layer];
            let gw = &mut tape.weights[layer];
            let gb = &mut tape.biases[layer];
            for s in 0..n {
                let ds = &delta[s * rows..(s + 1) * rows];
                let xs = &prev[s * cols..(s + 1) * cols];
                for (i, &d) in ds.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[i] += d;
                    for (g, &x) in gw[i * cols..(i + 1) * cols].iter_mut().zip(xs) {
                        *g += d * x;
                    }
                }
            }
            if layer == 0 {
                break;
            }
            let wf: Vec<f64> = w.data().iter().map(|&t| t as f64).collect();
            let dprev = &self.derivs[layer - 1];
            let mut next = vec![0.0; n * cols];
            for s in 0..n {
                let ds = &delta[s * rows..(s + 1) * rows];
                let out = &mut next[s * cols..(s + 1) * cols];
                for (i, &d) in ds.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (o, &wij) in out.iter_mut().zip(&wf[i * cols..(i + 1) * cols]) {
                        *o += wij * d;
                    }
                }
                for (o, &dp) in out.iter_mut().zip(&dprev[s * cols..(s + 1) * cols]) {
                    *o *= dp;
                }
            }
            delta = next;
        }
    }
}

/// Adam over a flat parameter vector with per-parameter step multipliers.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub(crate) fn new(cfg: &TrainConfig, n: usize) -> Self {
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            lr: cfg.learning_rate,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f32], grad: &[f64], lr_scale: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let upd = self.lr * lr_scale[i] * mhat / (vhat.sqrt() + self.eps);
            params[i] = (params[i] as f64 - upd) as f32;
        }
    }
}

/// SIREN-style initialization with `omega0` folded into `W_1`.
///
/// First layer `U(-1/d_0, 1/d_0) * omega0` when it is sine-activated, other
/// layers `U(-sqrt(6/d_in), sqrt(6/d_in))`. The linear output layer of a
/// sine network is further divided by `omega0`. Biases start at zero.
pub fn init_weights(spec: &MlpSpec, seed: u64, omega0: f32) -> WeightSpaceVector {
    let mut rng = seed::rng(seed);
    let acts = spec.activations();
    let has_sine = acts.contains(&Activation::Sine);
    let m = spec.num_layers();
    let mut weights = Vec::with_capacity(m);
    let mut biases = Vec::with_capacity(m);
    for (layer, w) in spec.dims().windows(2).enumerate() {
        let (d_in, d_out) = (w[0], w[1]);
        let (bound, factor) = if layer == 0 && acts[0] == Activation::Sine {
            (1.0 / d_in as f64, omega0 as f64)
        } else if layer + 1 == m && has_sine {
            ((6.0 / d_in as f64).sqrt(), 1.0 / omega0 as f64)
        } else {
            ((6.0 / d_in as f64).sqrt(), 1.0)
        };
        let data = (0..d_in * d_out)
            .map(|_| (rng.random_range(-bound..bound) * factor) as f32)
            .collect();
        weights.push(Matrix::new(d_out, d_in, data).expect("sized"));
        biases.push(vec![0.0; d_out]);
    }
    WeightSpaceVector::new(weights, biases).expect("consistent shapes")
}

/// A generic random network: [`init_weights`] plus nonzero random biases
/// (`U(-1, 1)` hidden, `U(-0.1, 0.1)` output). Used wherever a test or
/// benchmark needs weights without special structure.
pub fn random_weights(spec: &MlpSpec, seed: u64) -> WeightSpaceVector {
    let base = init_weights(spec, seed, DEFAULT_OMEGA0);
    let mut rng = seed::rng(seed::derive_seed(seed, &[0xB1A5]));
    let m = spec.num_layers();
    let biases = spec.dims()[1..]
        .iter()
        .enumerate()
        .map(|(l, &d)| {
            let r = if l + 1 == m { 0.1 } else { 1.0 };
            (0..d).map(|_| rng.random_range(-r..r) as f32).collect()
        })
        .collect();
    WeightSpaceVector::new(base.weights().to_vec(), biases).expect("consistent shapes")
}

/// Per-parameter step multipliers: `sine_lr_scale` on layers followed by a
/// sine activation, 1 elsewhere.
fn lr_scales(spec: &MlpSpec, cfg: &TrainConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.num_params());
    for (w, &act) in spec.dims().windows(2).zip(spec.activations()) {
        let s = if act == Activation::Sine { cfg.sine_lr_scale } else { 1.0 };
        out.extend(std::iter::repeat_n(s, w[0] * w[1] + w[1]));
    }
    out
}

/// Result of [`fit_inr_logged`]: the weights plus the per-step loss trace.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub v: WeightSpaceVector,
    /// Mean squared error (on `[-1, 1]` targets) measured before each update.
    pub losses: Vec<f64>,
    pub steps_run: usize,
    pub stopped_early: bool,
}

/// Fits an INR to `signal` by minimizing MSE with Adam.
pub fn fit_inr(signal: &Signal, spec: &MlpSpec, cfg: &TrainConfig) -> Result<WeightSpaceVector> {
    fit_inr_logged(signal, spec, cfg).map(|r| r.v)
}

pub fn fit_inr_logged(signal: &Signal, spec: &MlpSpec, cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    let n = signal.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty signal".to_string()));
    }
    if signal.coord_dim() != spec.input_dim() || signal.target_dim() != spec.output_dim() {
        return Err(Error::Dimension(format!(
            "signal maps R^{} -> R^{} but the network maps R^{} -> R^{}",
            signal.coord_dim(),
            signal.target_dim(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    let init = init_weights(spec, cfg.seed, cfg.omega0);
    let mut params = init.flatten();
    let scales = lr_scales(spec, cfg);
    let mut adam = Adam::new(cfg, params.len());
    let full_batch = n <= FULL_BATCH_LIMIT;
    let batch = if full_batch { n } else { cfg.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, &[0xBA7C4]));
    let (din, dout) = (spec.input_dim(), spec.output_dim());
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut xs = Vec::with_capacity(batch * din);
    let mut ys = Vec::with_capacity(batch * dout);
    let mut stopped_early = false;

    for step in 0..cfg.steps {
        let v = WeightSpaceVector::from_flat(spec, &params)?;
        xs.clear();
        ys.clear();
        if full_batch {
            xs.extend_from_slice(signal.coords());
            ys.extend_from_slice(signal.targets());
        } else {
            for _ in 0..batch {
                if cursor == n {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let i = order[cursor];
                cursor += 1;
                xs.extend_from_slice(&signal.coords()[i * din..(i + 1) * din]);
                ys.extend_from_slice(&signal.targets()[i * dout..(i + 1) * dout]);
            }
        }
        let fwd = BatchForward::run(&v, spec, &xs, batch);
        let count = (batch * dout) as f64;
        let mut loss = 0.0;
        let upstream: Vec<f64> = fwd
            .output()
            .iter()
            .zip(&ys)
            .map(|(&f, &y)| {
                let r = f - y as f64;
                loss += r * r;
                2.0 * r / count
            })
            .collect();
        loss /= count;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        if let Some(target) = cfg.early_stop_psnr {
            let full_mse = if full_batch {
                Some(loss)
            } else if step % 50 == 0 {
                Some(mse(&v, spec, signal)?)
            } else {
                None
            };
            if full_mse.is_some_and(|l| psnr_from_mse(l / 4.0) > target) {
                stopped_early = true;
                return Ok(FitReport {
                    v,
                    losses,
                    steps_run: step,
                    stopped_early,
                });
            }
        }
        let mut tape = GradientTape::zeros(spec);
        fwd.accumulate_backward(&v, spec, &upstream, &mut tape);
        adam.step(&mut params, &tape.flatten(), &scales);
    }
    let v = WeightSpaceVector::from_flat(spec, &params)?;
    validate(&v, spec)?;
    Ok(FitReport {
        v,
        losses,
        steps_run: cfg.steps,
        stopped_early,
    })
}

/// Mean squared error of the network against the signal's `[-1, 1]` targets.
pub fn mse(v: &WeightSpaceVector, spec: &MlpSpec, signal: &Signal) -> Result<f64> {
    check_shapes(v, spec)?;
    if signal.coord_dim() != spec.input_dim() || signal.target_dim() != spec.output_dim() {
        return Err(Error::Dimension(format!(
            "signal maps R^{} -> R^{} but the network maps R^{} -> R^{}",
            signal.coord_dim(),
            signal.target_dim(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    let dout = spec.output_dim();
    let mut sum = 0.0;
    for (x, y) in signal
        .coords()
        .chunks_exact(spec.input_dim())
        .zip(signal.targets().chunks_exact(dout))
    {
        for (f, &t) in eval_f64(v, spec, x).into_iter().zip(y) {
            sum += (f - t as f64).powi(2);
        }
    }
    Ok(sum / signal.targets().len() as f64)
}

/// `10 log10(1 / mse01)` with `mse01` measured on `[0, 1]`-scaled values,
/// capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse01: f64) -> f64 {
    if mse01 <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse01).log10()).min(PSNR_CAP_DB)
}

/// PSNR after mapping outputs and targets from `[-1, 1]` to `[0, 1]`.
pub fn psnr(v: &WeightSpaceVector, spec: &MlpSpec, signal: &Signal) -> Result<f64> {
    // (f+1)/2 - (y+1)/2 = (f-y)/2, so the [0,1] MSE is a quarter of ours.
    Ok(psnr_from_mse(mse(v, spec, signal)? / 4.0))
}
