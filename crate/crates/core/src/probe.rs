//! A small classifier over permutation-invariant weight features, used to
//! measure how augmentations affect downstream accuracy.
//!
//! Feature layout for an `M`-layer network, in order:
//! for each layer `m = 1..M`, the L2 norms of the rows of `[W_m | b_m]`
//! sorted descending, then the L2 norms of the columns of `W_m` sorted
//! descending; then the raw output bias `b_M`; then the mean and standard
//! deviation of the absolute values of all entries.

use serde::{Deserialize, Serialize};

use crate::augment::{apply_pipeline, AugmentPipeline};
use crate::error::{Error, Result};
use crate::mixup::{draw_partner, mix_pair, AlignmentMemo, MixupConfig, MixupVariant};
use crate::nnrun::{init_weights, Adam, BatchForward, GradientTape, TrainConfig, DEFAULT_OMEGA0};
use crate::seed::{self, derive_seed};
use crate::store::InrDataset;
use crate::weights::{argmax, check_shapes, LabeledSample, MlpSpec, WeightSpaceVector};

pub const PROBE_HIDDEN: usize = 64;

// Seed streams under the probe seed.
const INIT_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;
const MIX_STREAM: u64 = 3;

pub type FeatureVector = Vec<f64>;

/// Length of [`featurize`]'s output for `spec`.
pub fn feature_len(spec: &MlpSpec) -> usize {
    let d = spec.dims();
    d.windows(2).map(|w| w[0] + w[1]).sum::<usize>() + spec.output_dim() + 2
}

/// Permutation-invariant summary of a weight vector; see the module docs.
pub fn featurize(v: &WeightSpaceVector, spec: &MlpSpec) -> Result<FeatureVector> {
    check_shapes(v, spec)?;
    let mut out = Vec::with_capacity(feature_len(spec));
    for (w, b) in v.weights().iter().zip(v.biases()) {
        let mut rows: Vec<f64> = (0..w.rows())
            .map(|i| {
                let sq: f64 = w.row(i).iter().map(|&x| (x as f64).powi(2)).sum();
                (sq + (b[i] as f64).powi(2)).sqrt()
            })
            .collect();
        let mut cols = vec![0.0f64; w.cols()];
        for i in 0..w.rows() {
            for (c, &x) in cols.iter_mut().zip(w.row(i)) {
                *c += (x as f64).powi(2);
            }
        }
        cols.iter_mut().for_each(|c| *c = c.sqrt());
        sort_desc(&mut rows);
        sort_desc(&mut cols);
        out.extend(rows);
        out.extend(cols);
    }
    out.extend(v.biases().last().expect("at least one layer").iter().map(|&x| x as f64));
    let n = v.num_entries() as f64;
    let abs = || v.tensors().flat_map(|t| t.iter().map(|&x| (x as f64).abs()));
    let mean = abs().sum::<f64>() / n;
    let var = abs().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    out.push(mean);
    out.push(var.sqrt());
    Ok(out)
}

fn sort_desc(xs: &mut [f64]) {
    xs.sort_by(|a, b| b.total_cmp(a));
}

/// Training settings for the probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Log every this many steps (and after the last); 0 logs only the end.
    pub eval_every: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { steps: 1000, learning_rate: 1e-3, batch_size: 32, hidden: PROBE_HIDDEN, seed: 0, eval_every: 50 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("probe learning_rate must be positive".to_string()));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("probe batch_size and hidden must be positive".to_string()));
        }
        Ok(())
    }
}

/// On-the-fly training augmentation: the pipeline runs first, then MixUp.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeAugment {
    #[serde(default)]
    pub pipeline: AugmentPipeline,
    #[serde(default)]
    pub mixup: Option<MixupConfig>,
}

impl ProbeAugment {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn mixup(cfg: MixupConfig) -> Self {
        Self { pipeline: AugmentPipeline::default(), mixup: Some(cfg) }
    }
}

/// A `[F, hidden, C]` ReLU classifier with frozen feature standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// Architecture of the networks this probe classifies.
    pub input_spec: MlpSpec,
    pub spec: MlpSpec,
    pub weights: WeightSpaceVector,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl ProbeModel {
    fn standardize(&self, f: &[f64], out: &mut Vec<f32>) {
        for ((&x, &m), &s) in f.iter().zip(&self.feature_mean).zip(&self.feature_std) {
            out.push(((x - m) / s) as f32);
        }
    }

    fn inputs(&self, vs: &[&WeightSpaceVector]) -> Result<Vec<f32>> {
        let mut xs = Vec::with_capacity(vs.len() * self.feature_mean.len());
        for v in vs {
            self.standardize(&featurize(v, &self.input_spec)?, &mut xs);
        }
        Ok(xs)
    }

    /// Class logits per network, row-major.
    pub fn logits(&self, vs: &[&WeightSpaceVector]) -> Result<Vec<f64>> {
        let xs = self.inputs(vs)?;
        Ok(BatchForward::run(&self.weights, &self.spec, &xs, vs.len()).output().to_vec())
    }

    /// Argmax class, ties toward the lower index.
    pub fn predict(&self, v: &WeightSpaceVector) -> Result<usize> {
        Ok(argmax(&self.logits(&[v])?))
    }

    pub fn num_classes(&self) -> usize {
        self.spec.output_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub model: ProbeModel,
    pub log: Vec<LogRow>,
}

/// Per-dimension mean and standard deviation (1 where constant).
fn feature_stats(features: &[FeatureVector]) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let dim = features[0].len();
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, &x) in mean.iter_mut().zip(f) {
            *m += x / n;
        }
    }
    let mut std = vec![0.0; dim];
    for f in features {
        for ((s, &x), &m) in std.iter_mut().zip(f).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    (mean, std)
}

/// Mean cross-entropy of softmax(logits) against soft labels, and its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[f64], classes: usize) -> (f64, Vec<f64>) {
    let n = logits.len() / classes;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for s in 0..n {
        let z = &logits[s * classes..(s + 1) * classes];
        let y = &labels[s * classes..(s + 1) * classes];
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&t| (t - zmax).exp()).sum();
        let log_sum = zmax + sum.ln();
        for c in 0..classes {
            let p = (z[c] - log_sum).exp();
            loss -= y[c] * (z[c] - log_sum);
            grad[s * classes + c] = (p - y[c]) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

/// The network and label a training slot sees after augmentation. With no
/// pipeline and no MixUp this is the stored sample itself.
#[allow(clippy::too_many_arguments)]
fn training_view(
    train: &InrDataset,
    aug: &ProbeAugment,
    memo: &AlignmentMemo,
    batch: &[usize],
    augmented: &[LabeledSample],
    pos: usize,
    partner: usize,
    lambda: f64,
    sample_seed: u64,
) -> Result<LabeledSample> {
    let s = &augmented[pos];
    let Some(cfg) = &aug.mixup else {
        return Ok(s.clone());
    };
    let alignment = if cfg.variant == MixupVariant::Aligned && aug.pipeline.is_empty() {
        let (i, j) = (batch[pos], batch[partner]);
        Some(memo.get_or_align(i, &train.samples()[i].v, j, &train.samples()[j].v, &cfg.align)?)
    } else {
        None
    };
    mix_pair(cfg, s, &augmented[partner], lambda, sample_seed, alignment.as_ref())
}

/// Minimizes soft-label cross-entropy with Adam on minibatches drawn by
/// reshuffling the training set each epoch. Each slot of a minibatch is
/// augmented on the fly: pipeline first, then MixUp with a partner drawn
/// from the same minibatch, both in weight space before featurization.
/// Alignments for the aligned variant are cached per unordered pair of
/// training samples for the whole run.
pub fn train_probe(train: &InrDataset, test: Option<&InrDataset>, aug: &ProbeAugment, cfg: &ProbeConfig) -> Result<TrainedProbe> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".to_string()));
    }
    let input_spec = train.spec().clone();
    aug.pipeline.validate(&input_spec)?;
    if let Some(m) = &aug.mixup {
        m.validate()?;
    }
    if let Some(t) = test {
        if t.spec() != train.spec() {
            return Err(Error::Dimension("train and test architectures differ".to_string()));
        }
    }
    let classes = train.num_classes();
    let raw: Vec<FeatureVector> = train
        .samples()
        .iter()
        .map(|s| featurize(&s.v, &input_spec))
        .collect::<Result<_>>()?;
    let (feature_mean, feature_std) = feature_stats(&raw);
    let spec = MlpSpec::relu(&[feature_len(&input_spec), cfg.hidden, classes])?;
    let weights = init_weights(&spec, derive_seed(cfg.seed, &[INIT_STREAM]), DEFAULT_OMEGA0);
    let mut model = ProbeModel { input_spec: input_spec.clone(), spec, weights, feature_mean, feature_std };

    let opt_cfg = TrainConfig { learning_rate: cfg.learning_rate, ..TrainConfig::default() };
    let mut params = model.weights.flatten();
    let mut adam = Adam::new(&opt_cfg, params.len());
    let ones = vec![1.0; params.len()];
    let memo = AlignmentMemo::new();
    let mut order_rng = seed::rng(derive_seed(cfg.seed, &[ORDER_STREAM]));
    let mut order: Vec<usize> = Vec::new();
    let b = cfg.batch_size.min(train.len());
    let mut log = Vec::new();

    for step in 0..cfg.steps {
        let batch = next_batch(&mut order, &mut order_rng, train.len(), b);
        let augmented: Vec<LabeledSample> = batch
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let s = &train.samples()[i];
                if aug.pipeline.is_empty() {
                    Ok(s.clone())
                } else {
                    Ok(s.with_v(apply_pipeline(&aug.pipeline, &s.v, &input_spec, derive_seed(cfg.seed, &[step as u64, pos as u64]))?))
                }
            })
            .collect::<Result<_>>()?;
        let mut mix_rng = seed::rng(derive_seed(cfg.seed, &[MIX_STREAM, step as u64]));
        let mut xs = Vec::with_capacity(b * model.feature_mean.len());
        let mut ys = Vec::with_capacity(b * classes);
        for pos in 0..b {
            let (partner, lambda) = match &aug.mixup {
                Some(m) if m.needs_partner() => draw_partner(m, b, &mut mix_rng)?,
                _ => (pos, 1.0),
            };
            let sample_seed = derive_seed(cfg.seed, &[MIX_STREAM, step as u64, pos as u64]);
            let view = training_view(train, aug, &memo, &batch, &augmented, pos, partner, lambda, sample_seed)?;
            model.standardize(&featurize(&view.v, &input_spec)?, &mut xs);
            ys.extend(view.label().iter().map(|&y| y as f64));
        }
        let fwd = BatchForward::run(&model.weights, &model.spec, &xs, b);
        let (loss, upstream) = softmax_cross_entropy(fwd.output(), &ys, classes);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let mut tape = GradientTape::zeros(&model.spec);
        fwd.accumulate_backward(&model.weights, &model.spec, &upstream, &mut tape);
        adam.step(&mut params, &tape.flatten(), &ones);
        model.weights = WeightSpaceVector::from_flat(&model.spec, &params)?;

        let last = step + 1 == cfg.steps;
        if last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            let test_acc = test.map(|t| eval_probe(&model, t)).transpose()?;
            log.push(LogRow { step: step + 1, train_loss: loss, test_acc });
        }
    }
    Ok(TrainedProbe { model, log })
}

/// Next `b` indices of a per-epoch shuffled order, refilling as needed.
fn next_batch(order: &mut Vec<usize>, rng: &mut seed::Rng, n: usize, b: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut batch = Vec::with_capacity(b);
    while batch.len() < b {
        if order.is_empty() {
            order.extend(0..n);
            order.shuffle(rng);
            order.reverse();
        }
        let i = order.pop().expect("refilled");
        batch.push(i);
    }
    batch
}

/// Fraction of samples whose predicted class equals the argmax of their
/// label.
pub fn eval_probe(model: &ProbeModel, test: &InrDataset) -> Result<f64> {
    eval_samples(model, test.samples())
}

pub fn eval_samples(model: &ProbeModel, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".to_string()));
    }
    let vs: Vec<&WeightSpaceVector> = samples.iter().map(|s| &s.v).collect();
    let logits = model.logits(&vs)?;
    let c = model.num_classes();
    let correct = samples
        .iter()
        .enumerate()
        .filter(|(k, s)| argmax(&logits[k * c..(k + 1) * c]) == s.hard_label())
        .count();
    Ok(correct as f64 / samples.len() as f64)
}
