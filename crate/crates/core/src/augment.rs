//! Weight-space augmentations other than MixUp.
//!
//! Three groups live here: geometric transforms of the INR input
//! (`translate`, `rotate`, `scale`), which edit the first layer so the new
//! network computes `f(T x)`; generic perturbations (`gaussian_noise`,
//! `mask`, `quantile_mask`); and activation symmetries (`siren_negation`,
//! `siren_bias`, `relu_scale`), which change the weights but not the
//! function. Every transform returns a new vector.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::weights::{apply_permutation, check_shapes, random_permutation, Activation, MlpSpec, WeightSpaceVector};

/// `b_1 <- b_1 + W_1 t`, so the result computes `f(x + t)`.
pub fn translate(v: &WeightSpaceVector, t: &[f32]) -> Result<WeightSpaceVector> {
    let w1 = first_layer(v)?;
    if t.len() != w1.cols() {
        return Err(Error::Dimension(format!(
            "translation has {} components, input dimension is {}",
            t.len(),
            w1.cols()
        )));
    }
    let mut out = v.clone();
    let (_, biases) = out.parts_mut();
    for (i, b) in biases[0].iter_mut().enumerate() {
        let shift: f64 = w1.row(i).iter().zip(t).map(|(&w, &ti)| w as f64 * ti as f64).sum();
        *b = (*b as f64 + shift) as f32;
    }
    Ok(out)
}

/// `W_1 <- W_1 R(angle)`, so the result computes `f(R x)`. Needs 2D input.
pub fn rotate(v: &WeightSpaceVector, angle: f64) -> Result<WeightSpaceVector> {
    let w1 = first_layer(v)?;
    if w1.cols() != 2 {
        return Err(Error::Dimension(format!(
            "rotation needs 2D input, got input dimension {}",
            w1.cols()
        )));
    }
    let (s, c) = angle.sin_cos();
    let mut out = v.clone();
    let (weights, _) = out.parts_mut();
    for i in 0..w1.rows() {
        let (a, b) = (w1.get(i, 0) as f64, w1.get(i, 1) as f64);
        let row = weights[0].row_mut(i);
        // [a b] [[c, -s], [s, c]]
        row[0] = (a * c + b * s) as f32;
        row[1] = (-a * s + b * c) as f32;
    }
    Ok(out)
}

/// `W_1 <- c W_1`, so the result computes `f(c x)`.
pub fn scale(v: &WeightSpaceVector, c: f64) -> Result<WeightSpaceVector> {
    check_positive(c, "scale factor")?;
    first_layer(v)?;
    let mut out = v.clone();
    let (weights, _) = out.parts_mut();
    for w in weights[0].data_mut() {
        *w = (*w as f64 * c) as f32;
    }
    Ok(out)
}

/// Multiplies every weight matrix (not the biases) by `c`.
pub fn scale_all_weights(v: &WeightSpaceVector, c: f64) -> Result<WeightSpaceVector> {
    check_positive(c, "scale factor")?;
    let mut out = v.clone();
    let (weights, _) = out.parts_mut();
    for w in weights.iter_mut().flat_map(|m| m.data_mut().iter_mut()) {
        *w = (*w as f64 * c) as f32;
    }
    Ok(out)
}

/// Adds `N(0, (s * std(T))^2)` noise to each tensor `T`, where `std` is the
/// population standard deviation of that tensor's entries. Biases are
/// perturbed only when `noise_biases` is set.
pub fn gaussian_noise(v: &WeightSpaceVector, s: f64, seed: u64, noise_biases: bool) -> Result<WeightSpaceVector> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise scale must be non-negative, got {s}")));
    }
    let mut rng = seed::rng(seed);
    let mut out = v.clone();
    if s == 0.0 {
        return Ok(out);
    }
    let (weights, biases) = out.parts_mut();
    let mut tensors: Vec<&mut [f32]> = Vec::with_capacity(2 * weights.len());
    for (w, b) in weights.iter_mut().zip(biases.iter_mut()) {
        tensors.push(w.data_mut());
        if noise_biases {
            tensors.push(b.as_mut_slice());
        }
    }
    for t in tensors {
        let sd = population_std(t);
        if sd == 0.0 {
            continue;
        }
        let normal = Normal::new(0.0, s * sd).expect("finite positive std");
        for x in t.iter_mut() {
            *x = (*x as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    Ok(out)
}

pub(crate) fn population_std(xs: &[f32]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    (xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Zeroes each entry independently with probability `rate`.
pub fn mask(v: &WeightSpaceVector, rate: f64, seed: u64) -> Result<WeightSpaceVector> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("mask rate must be in [0, 1], got {rate}")));
    }
    let mut rng = seed::rng(seed);
    let mut out = v.clone();
    let (weights, biases) = out.parts_mut();
    for w in weights.iter_mut().zip(biases.iter_mut()).flat_map(|(w, b)| {
        w.data_mut().iter_mut().chain(b.iter_mut())
    }) {
        if rng.random_bool(rate) {
            *w = 0.0;
        }
    }
    Ok(out)
}

/// Zeroes entries with `|x| < threshold`.
pub fn quantile_mask(v: &WeightSpaceVector, threshold: f64) -> Result<WeightSpaceVector> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    Ok(v.map_entries(|x| if (x.abs() as f64) < threshold { 0.0 } else { x }))
}

/// Negates `W_l`, `b_l`, and `W_{l+1}` for a sine-activated hidden layer
/// `l` (1-indexed). `sin` is odd, so the function is unchanged.
pub fn siren_negation(v: &WeightSpaceVector, spec: &MlpSpec, layer: usize) -> Result<WeightSpaceVector> {
    check_hidden_layer(v, spec, layer, Activation::Sine)?;
    let i = layer - 1;
    let mut out = v.clone();
    let (weights, biases) = out.parts_mut();
    for x in weights[i].data_mut() {
        *x = -*x;
    }
    for x in biases[i].iter_mut() {
        *x = -*x;
    }
    for x in weights[i + 1].data_mut() {
        *x = -*x;
    }
    Ok(out)
}

/// Shifts neuron `j` of sine layer `layer` by `k[j] * pi` and multiplies
/// column `j` of `W_{layer+1}` by `(-1)^k[j]`, using
/// `sin(z + k pi) = (-1)^k sin(z)`.
pub fn siren_bias(v: &WeightSpaceVector, spec: &MlpSpec, layer: usize, k: &[i64]) -> Result<WeightSpaceVector> {
    check_hidden_layer(v, spec, layer, Activation::Sine)?;
    let i = layer - 1;
    if k.len() != v.biases()[i].len() {
        return Err(Error::Dimension(format!(
            "layer {layer} has {} neurons, got {} phase multipliers",
            v.biases()[i].len(),
            k.len()
        )));
    }
    let mut out = v.clone();
    let (weights, biases) = out.parts_mut();
    for (b, &kj) in biases[i].iter_mut().zip(k) {
        *b = (*b as f64 + kj as f64 * PI) as f32;
    }
    let next = &mut weights[i + 1];
    for r in 0..next.rows() {
        for (x, &kj) in next.row_mut(r).iter_mut().zip(k) {
            if kj.rem_euclid(2) == 1 {
                *x = -*x;
            }
        }
    }
    Ok(out)
}

/// Scales row `j` of `W_l` and `b_l[j]` by `diag[j]` and column `j` of
/// `W_{l+1}` by `1 / diag[j]` for a ReLU layer `l`; ReLU is positively
/// homogeneous, so the function is unchanged.
pub fn relu_scale(v: &WeightSpaceVector, spec: &MlpSpec, layer: usize, diag: &[f32]) -> Result<WeightSpaceVector> {
    check_hidden_layer(v, spec, layer, Activation::Relu)?;
    let i = layer - 1;
    if diag.len() != v.biases()[i].len() {
        return Err(Error::Dimension(format!(
            "layer {layer} has {} neurons, got {} scale factors",
            v.biases()[i].len(),
            diag.len()
        )));
    }
    if let Some(bad) = diag.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "relu scale factors must be positive, got {bad}"
        )));
    }
    let mut out = v.clone();
    let (weights, biases) = out.parts_mut();
    for (j, &d) in diag.iter().enumerate() {
        for x in weights[i].row_mut(j) {
            *x = (*x as f64 * d as f64) as f32;
        }
        biases[i][j] = (biases[i][j] as f64 * d as f64) as f32;
    }
    let next = &mut weights[i + 1];
    for r in 0..next.rows() {
        for (x, &d) in next.row_mut(r).iter_mut().zip(diag) {
            *x = (*x as f64 / d as f64) as f32;
        }
    }
    Ok(out)
}

fn first_layer(v: &WeightSpaceVector) -> Result<&crate::weights::Matrix> {
    v.weights()
        .first()
        .ok_or_else(|| Error::Dimension("empty weight vector".to_string()))
}

fn check_positive(c: f64, what: &str) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} must be positive, got {c}")));
    }
    Ok(())
}

fn check_hidden_layer(v: &WeightSpaceVector, spec: &MlpSpec, layer: usize, want: Activation) -> Result<()> {
    check_shapes(v, spec)?;
    let m = spec.num_layers();
    if layer == 0 || layer >= m {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} is not a hidden layer (valid: 1..={})",
            m - 1
        )));
    }
    let act = spec.activation_after(layer).expect("in range");
    if act != want {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} is {act}-activated, this augmentation needs {want}"
        )));
    }
    Ok(())
}

/// Hidden layers (1-indexed) followed by activation `act`.
pub fn hidden_layers_with(spec: &MlpSpec, act: Activation) -> Vec<usize> {
    (1..spec.num_layers())
        .filter(|&l| spec.activation_after(l) == Some(act))
        .collect()
}

/// Which hidden layers a symmetry augmentation touches per application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerChoice {
    /// One eligible layer drawn uniformly.
    #[default]
    RandomOne,
    /// Every eligible layer.
    All,
}

/// One randomized augmentation with its hyperparameters. Defaults follow
/// the usual INR augmentation settings (translate `u = 0.25`, rotation up
/// to 30 degrees, scale `U(0.8, 1)`, mask rate 0.1, quantile threshold
/// `U(0, 0.1)`, noise `s = 0.32`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    /// `t ~ U(-u, u)` per input coordinate.
    Translate {
        #[serde(default = "defaults::translate_u")]
        u: f64,
    },
    /// Angle `~ U(-max_degrees, max_degrees)`.
    Rotate {
        #[serde(default = "defaults::rotate_degrees")]
        max_degrees: f64,
    },
    /// `c ~ U(min, max)`; `all_weights` scales every matrix instead of `W_1`.
    Scale {
        #[serde(default = "defaults::scale_min")]
        min: f64,
        #[serde(default = "defaults::scale_max")]
        max: f64,
        #[serde(default)]
        all_weights: bool,
    },
    GaussianNoise {
        #[serde(default = "defaults::noise_s")]
        s: f64,
        #[serde(default = "defaults::yes")]
        noise_biases: bool,
    },
    Mask {
        #[serde(default = "defaults::mask_rate")]
        rate: f64,
    },
    /// Threshold `~ U(0, max_threshold)`.
    QuantileMask {
        #[serde(default = "defaults::quantile_max")]
        max_threshold: f64,
    },
    SirenNegation {
        #[serde(default)]
        layers: LayerChoice,
    },
    /// Multipliers drawn uniformly from `{-k_max..=k_max} \ {0}`, one per
    /// neuron, or one per layer when `per_neuron` is false.
    SirenBias {
        #[serde(default = "defaults::k_max")]
        k_max: i64,
        #[serde(default = "defaults::yes")]
        per_neuron: bool,
        #[serde(default)]
        layers: LayerChoice,
    },
    /// Diagonal entries log-uniform in `[min, max]`.
    ReluScale {
        #[serde(default = "defaults::relu_min")]
        min: f64,
        #[serde(default = "defaults::relu_max")]
        max: f64,
        #[serde(default)]
        layers: LayerChoice,
    },
    /// A uniformly random hidden-neuron permutation.
    Permute,
}

mod defaults {
    pub fn translate_u() -> f64 {
        0.25
    }
    pub fn rotate_degrees() -> f64 {
        30.0
    }
    pub fn scale_min() -> f64 {
        0.8
    }
    pub fn scale_max() -> f64 {
        1.0
    }
    pub fn noise_s() -> f64 {
        0.32
    }
    pub fn mask_rate() -> f64 {
        0.1
    }
    pub fn quantile_max() -> f64 {
        0.1
    }
    pub fn k_max() -> i64 {
        2
    }
    pub fn relu_min() -> f64 {
        0.5
    }
    pub fn relu_max() -> f64 {
        2.0
    }
    pub fn yes() -> bool {
        true
    }
}

impl Augmentation {
    pub fn translate() -> Self {
        Augmentation::Translate { u: defaults::translate_u() }
    }
    pub fn rotate() -> Self {
        Augmentation::Rotate { max_degrees: defaults::rotate_degrees() }
    }
    pub fn scale() -> Self {
        Augmentation::Scale { min: defaults::scale_min(), max: defaults::scale_max(), all_weights: false }
    }
    pub fn gaussian_noise() -> Self {
        Augmentation::GaussianNoise { s: defaults::noise_s(), noise_biases: true }
    }
    pub fn mask() -> Self {
        Augmentation::Mask { rate: defaults::mask_rate() }
    }
    pub fn quantile_mask() -> Self {
        Augmentation::QuantileMask { max_threshold: defaults::quantile_max() }
    }
    pub fn siren_negation() -> Self {
        Augmentation::SirenNegation { layers: LayerChoice::RandomOne }
    }
    pub fn siren_bias() -> Self {
        Augmentation::SirenBias { k_max: defaults::k_max(), per_neuron: true, layers: LayerChoice::RandomOne }
    }
    pub fn relu_scale() -> Self {
        Augmentation::ReluScale { min: defaults::relu_min(), max: defaults::relu_max(), layers: LayerChoice::RandomOne }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Augmentation::Translate { .. } => "translate",
            Augmentation::Rotate { .. } => "rotate",
            Augmentation::Scale { .. } => "scale",
            Augmentation::GaussianNoise { .. } => "gaussian_noise",
            Augmentation::Mask { .. } => "mask",
            Augmentation::QuantileMask { .. } => "quantile_mask",
            Augmentation::SirenNegation { .. } => "siren_negation",
            Augmentation::SirenBias { .. } => "siren_bias",
            Augmentation::ReluScale { .. } => "relu_scale",
            Augmentation::Permute => "permute",
        }
    }

    /// Checks hyperparameter ranges and applicability to `spec`.
    pub fn validate(&self, spec: &MlpSpec) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("{}: {msg}", self.name())));
        match *self {
            Augmentation::Translate { u } if !(u >= 0.0 && u.is_finite()) => bad(format!("u must be >= 0, got {u}")),
            Augmentation::Rotate { max_degrees } if !(max_degrees >= 0.0 && max_degrees.is_finite()) => {
                bad(format!("max_degrees must be >= 0, got {max_degrees}"))
            }
            Augmentation::Rotate { .. } if spec.input_dim() != 2 => {
                bad(format!("needs 2D input, spec has {}", spec.input_dim()))
            }
            Augmentation::Scale { min, max, .. } if !(min > 0.0 && min <= max && max.is_finite()) => {
                bad(format!("need 0 < min <= max, got [{min}, {max}]"))
            }
            Augmentation::GaussianNoise { s, .. } if !(s >= 0.0 && s.is_finite()) => bad(format!("s must be >= 0, got {s}")),
            Augmentation::Mask { rate } if !(0.0..=1.0).contains(&rate) => bad(format!("rate must be in [0, 1], got {rate}")),
            Augmentation::QuantileMask { max_threshold } if !(max_threshold >= 0.0 && max_threshold.is_finite()) => {
                bad(format!("max_threshold must be >= 0, got {max_threshold}"))
            }
            Augmentation::SirenBias { k_max, .. } if k_max < 1 => bad(format!("k_max must be >= 1, got {k_max}")),
            Augmentation::ReluScale { min, max, .. } if !(min > 0.0 && min <= max && max.is_finite()) => {
                bad(format!("need 0 < min <= max, got [{min}, {max}]"))
            }
            Augmentation::SirenNegation { .. } | Augmentation::SirenBias { .. }
                if hidden_layers_with(spec, Activation::Sine).is_empty() =>
            {
                bad("architecture has no sine hidden layer".to_string())
            }
            Augmentation::ReluScale { .. } if hidden_layers_with(spec, Activation::Relu).is_empty() => {
                bad("architecture has no relu hidden layer".to_string())
            }
            _ => Ok(()),
        }
    }

    /// Draws this augmentation's random parameters from `rng` and applies it.
    pub fn apply(&self, v: &WeightSpaceVector, spec: &MlpSpec, rng: &mut seed::Rng) -> Result<WeightSpaceVector> {
        match *self {
            Augmentation::Translate { u } => {
                let t: Vec<f32> = (0..spec.input_dim()).map(|_| uniform(rng, -u, u) as f32).collect();
                translate(v, &t)
            }
            Augmentation::Rotate { max_degrees } => {
                let a = max_degrees.to_radians();
                rotate(v, uniform(rng, -a, a))
            }
            Augmentation::Scale { min, max, all_weights } => {
                let c = uniform(rng, min, max);
                if all_weights {
                    scale_all_weights(v, c)
                } else {
                    scale(v, c)
                }
            }
            Augmentation::GaussianNoise { s, noise_biases } => gaussian_noise(v, s, rng.random(), noise_biases),
            Augmentation::Mask { rate } => mask(v, rate, rng.random()),
            Augmentation::QuantileMask { max_threshold } => quantile_mask(v, uniform(rng, 0.0, max_threshold)),
            Augmentation::SirenNegation { layers } => {
                let mut out = v.clone();
                for l in pick_layers(spec, Activation::Sine, layers, rng)? {
                    out = siren_negation(&out, spec, l)?;
                }
                Ok(out)
            }
            Augmentation::SirenBias { k_max, per_neuron, layers } => {
                let mut out = v.clone();
                for l in pick_layers(spec, Activation::Sine, layers, rng)? {
                    let width = spec.dims()[l];
                    let mut draw = || {
                        let k = rng.random_range(1..=k_max);
                        if rng.random_bool(0.5) {
                            -k
                        } else {
                            k
                        }
                    };
                    let k: Vec<i64> = if per_neuron {
                        (0..width).map(|_| draw()).collect()
                    } else {
                        vec![draw(); width]
                    };
                    out = siren_bias(&out, spec, l, &k)?;
                }
                Ok(out)
            }
            Augmentation::ReluScale { min, max, layers } => {
                let mut out = v.clone();
                for l in pick_layers(spec, Activation::Relu, layers, rng)? {
                    let (lo, hi) = (min.ln(), max.ln());
                    let diag: Vec<f32> = (0..spec.dims()[l]).map(|_| uniform(rng, lo, hi).exp() as f32).collect();
                    out = relu_scale(&out, spec, l, &diag)?;
                }
                Ok(out)
            }
            Augmentation::Permute => apply_permutation(v, &random_permutation(spec, rng.random())),
        }
    }
}

fn uniform(rng: &mut seed::Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn pick_layers(spec: &MlpSpec, act: Activation, choice: LayerChoice, rng: &mut seed::Rng) -> Result<Vec<usize>> {
    let eligible = hidden_layers_with(spec, act);
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(format!("architecture has no {act} hidden layer")));
    }
    Ok(match choice {
        LayerChoice::All => eligible,
        LayerChoice::RandomOne => vec![eligible[rng.random_range(0..eligible.len())]],
    })
}

/// An ordered list of augmentations applied one after another.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPipeline {
    #[serde(default)]
    pub steps: Vec<Augmentation>,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentPipeline {
    pub fn new(steps: Vec<Augmentation>, seed: u64) -> Self {
        Self { steps, seed }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, spec: &MlpSpec) -> Result<()> {
        self.steps.iter().try_for_each(|a| a.validate(spec))
    }
}

/// Applies `pipeline` in order. Step `i` draws from a generator seeded by
/// `(pipeline.seed, sample_seed, i)`.
pub fn apply_pipeline(pipeline: &AugmentPipeline, v: &WeightSpaceVector, spec: &MlpSpec, sample_seed: u64) -> Result<WeightSpaceVector> {
    check_shapes(v, spec)?;
    let mut out = v.clone();
    for (pos, aug) in pipeline.steps.iter().enumerate() {
        aug.validate(spec)?;
        let mut rng = seed::rng(seed::derive_seed(pipeline.seed, &[sample_seed, pos as u64]));
        out = aug.apply(&out, spec, &mut rng)?;
    }
    Ok(out)
}
