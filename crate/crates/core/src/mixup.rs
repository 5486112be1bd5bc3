//! Weight-space MixUp: direct, with a random permutation of the partner,
//! and after aligning the partner by weight matching. Label smoothing and
//! input averaging are the two halves of MixUp on their own.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::align::{weight_matching_with, AlignConfig};
use crate::error::{Error, Result};
use crate::seed;
use crate::weights::{apply_permutation, random_permutation_for, LabeledSample, PermutationSequence, WeightSpaceVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixupVariant {
    Direct,
    Randomized,
    Aligned,
    /// Label smoothing only; weights untouched.
    LabelOnly,
    /// Weight averaging only; the first sample's label is kept.
    InputOnly,
}

impl MixupVariant {
    pub const ALL: [MixupVariant; 5] = [
        MixupVariant::Direct,
        MixupVariant::Randomized,
        MixupVariant::Aligned,
        MixupVariant::LabelOnly,
        MixupVariant::InputOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixupVariant::Direct => "direct",
            MixupVariant::Randomized => "randomized",
            MixupVariant::Aligned => "aligned",
            MixupVariant::LabelOnly => "label_only",
            MixupVariant::InputOnly => "input_only",
        }
    }
}

impl std::fmt::Display for MixupVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MixupVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MixupVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mixup variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixupConfig {
    pub variant: MixupVariant,
    /// Both shape parameters of the Beta distribution for the mixing weight.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub smoothing_eps: f64,
    #[serde(default)]
    pub align: AlignConfig,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    0.1
}

impl MixupConfig {
    pub fn new(variant: MixupVariant) -> Self {
        Self { variant, alpha: default_alpha(), seed: 0, smoothing_eps: default_eps(), align: AlignConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_eps(self.smoothing_eps)?;
        if self.align.max_sweeps == 0 {
            return Err(Error::InvalidArgument("align.max_sweeps must be at least 1".to_string()));
        }
        Ok(())
    }

    /// Whether this variant combines a sample with a partner.
    pub fn needs_partner(&self) -> bool {
        self.variant != MixupVariant::LabelOnly
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("smoothing eps must be in [0, 1), got {eps}")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must be in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// `lambda ~ Beta(alpha, alpha)`, deterministic in `seed`.
pub fn sample_lambda(alpha: f64, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    sample_lambda_from(alpha, &mut seed::rng(seed))
}

pub(crate) fn sample_lambda_from(alpha: f64, rng: &mut seed::Rng) -> Result<f64> {
    check_alpha(alpha)?;
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}

/// `lambda * a + (1 - lambda) * b` per entry. The endpoints return an input
/// exactly, including signed zeros.
pub fn interpolate(a: &WeightSpaceVector, b: &WeightSpaceVector, lambda: f64) -> Result<WeightSpaceVector> {
    let mixed = a.zip_with(b, |x, y| lerp(x, y, lambda))?;
    if lambda == 1.0 {
        return Ok(a.clone());
    }
    if lambda == 0.0 {
        return Ok(b.clone());
    }
    Ok(mixed)
}

fn lerp(x: f32, y: f32, lambda: f64) -> f32 {
    (lambda * x as f64 + (1.0 - lambda) * y as f64) as f32
}

fn lerp_labels(a: &[f32], b: &[f32], lambda: f64) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("labels have {} and {} classes", a.len(), b.len())));
    }
    Ok(if lambda == 1.0 {
        a.to_vec()
    } else if lambda == 0.0 {
        b.to_vec()
    } else {
        a.iter().zip(b).map(|(&x, &y)| lerp(x, y, lambda)).collect()
    })
}

fn mix_with(s1: &LabeledSample, v2: &WeightSpaceVector, label2: &[f32], lambda: f64) -> Result<LabeledSample> {
    check_lambda(lambda)?;
    let v = interpolate(&s1.v, v2, lambda)?;
    let label = lerp_labels(s1.label(), label2, lambda)?;
    s1.with_v(v).with_label(label)
}

/// Entrywise convex combination of weights, biases and soft labels. The
/// result keeps `s1`'s ids.
pub fn direct_mixup(s1: &LabeledSample, s2: &LabeledSample, lambda: f64) -> Result<LabeledSample> {
    mix_with(s1, &s2.v, s2.label(), lambda)
}

/// Direct MixUp with a uniformly random permutation applied to `s2` first.
pub fn randomized_mixup(s1: &LabeledSample, s2: &LabeledSample, lambda: f64, seed: u64) -> Result<LabeledSample> {
    let p = random_permutation_for(&s2.v.hidden_widths(), seed);
    mix_with(s1, &apply_permutation(&s2.v, &p)?, s2.label(), lambda)
}

/// Direct MixUp of `s1` with `p·s2`, where `p` aligns `s2` to `s1`.
pub fn aligned_mixup(s1: &LabeledSample, s2: &LabeledSample, lambda: f64, cfg: &AlignConfig) -> Result<LabeledSample> {
    check_lambda(lambda)?;
    let r = weight_matching_with(&s1.v, &s2.v, cfg)?;
    aligned_mixup_with(s1, s2, lambda, &r.p)
}

/// `aligned_mixup` with a precomputed alignment.
pub fn aligned_mixup_with(s1: &LabeledSample, s2: &LabeledSample, lambda: f64, p: &PermutationSequence) -> Result<LabeledSample> {
    mix_with(s1, &apply_permutation(&s2.v, p)?, s2.label(), lambda)
}

/// `y <- (1 - eps) y + eps / C`; weights unchanged.
pub fn label_smooth(s: &LabeledSample, eps: f64) -> Result<LabeledSample> {
    check_eps(eps)?;
    if eps == 0.0 {
        return Ok(s.clone());
    }
    let c = s.num_classes() as f64;
    let label = s.label().iter().map(|&y| ((1.0 - eps) * y as f64 + eps / c) as f32).collect();
    s.with_label(label)
}

/// Mixes weights as `direct_mixup` but keeps `s1`'s label.
pub fn input_average(s1: &LabeledSample, s2: &LabeledSample, lambda: f64) -> Result<LabeledSample> {
    check_lambda(lambda)?;
    Ok(s1.with_v(interpolate(&s1.v, &s2.v, lambda)?))
}

/// Applies `cfg.variant` to a pair. `alignment`, when given, is used by
/// the aligned variant in place of running weight matching.
pub fn mix_pair(
    cfg: &MixupConfig,
    s1: &LabeledSample,
    s2: &LabeledSample,
    lambda: f64,
    seed: u64,
    alignment: Option<&PermutationSequence>,
) -> Result<LabeledSample> {
    match cfg.variant {
        MixupVariant::Direct => direct_mixup(s1, s2, lambda),
        MixupVariant::Randomized => randomized_mixup(s1, s2, lambda, seed),
        MixupVariant::Aligned => match alignment {
            Some(p) => aligned_mixup_with(s1, s2, lambda, p),
            None => aligned_mixup(s1, s2, lambda, &cfg.align),
        },
        MixupVariant::LabelOnly => label_smooth(s1, cfg.smoothing_eps),
        MixupVariant::InputOnly => input_average(s1, s2, lambda),
    }
}

/// Alignment cache keyed by unordered pairs of dataset indices. Entries for
/// `(i, j)` with `i > j` are served as the inverse of `(j, i)`, which has
/// the same objective because the distance is permutation invariant.
#[derive(Debug, Default)]
pub struct AlignmentMemo {
    table: Mutex<HashMap<(usize, usize), PermutationSequence>>,
}

impl AlignmentMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.table.lock().expect("memo lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.table.lock().expect("memo lock").clear();
    }

    /// Permutation `p` with `p·v_j` aligned to `v_i`.
    pub fn get_or_align(&self, i: usize, v_i: &WeightSpaceVector, j: usize, v_j: &WeightSpaceVector, cfg: &AlignConfig) -> Result<PermutationSequence> {
        if i == j {
            return Ok(PermutationSequence::new(
                v_i.hidden_widths().into_iter().map(crate::weights::Permutation::identity).collect(),
            ));
        }
        let key = (i.min(j), i.max(j));
        let cached = self.table.lock().expect("memo lock").get(&key).cloned();
        let p = match cached {
            Some(p) => p,
            None => {
                let (lo, hi) = if i < j { (v_i, v_j) } else { (v_j, v_i) };
                let p = weight_matching_with(lo, hi, cfg)?.p;
                self.table.lock().expect("memo lock").insert(key, p.clone());
                p
            }
        };
        Ok(if i < j { p } else { p.inverse() })
    }
}

/// Draws a partner index uniformly from `0..batch_len` (self allowed) and
/// a mixing weight.
pub fn draw_partner(cfg: &MixupConfig, batch_len: usize, rng: &mut seed::Rng) -> Result<(usize, f64)> {
    if batch_len == 0 {
        return Err(Error::InvalidArgument("empty batch".to_string()));
    }
    let j = rng.random_range(0..batch_len);
    Ok((j, sample_lambda_from(cfg.alpha, rng)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{grid_diff, random_net};
    use crate::weights::{l2_distance, random_permutation, MlpSpec};

    fn spec() -> MlpSpec {
        MlpSpec::siren(&[2, 8, 8, 1]).unwrap()
    }

    fn sample(seed: u64, class: usize) -> LabeledSample {
        LabeledSample::one_hot(random_net(&spec(), seed), class, 4, seed as u32, 0).unwrap()
    }

    #[test]
    fn lambda_distribution() {
        let draws: Vec<f64> = (0..10_000).map(|s| sample_lambda(1.0, s).unwrap()).collect();
        assert!(draws.iter().all(|l| (0.0..=1.0).contains(l)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
        let mut bins = [0usize; 10];
        for l in &draws {
            bins[((l * 10.0) as usize).min(9)] += 1;
        }
        // Chi-squared, 9 degrees of freedom, 0.999 quantile.
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        assert!(chi2 < 27.88, "{chi2} {bins:?}");
        assert_eq!(sample_lambda(0.4, 7).unwrap(), sample_lambda(0.4, 7).unwrap());
        assert!(sample_lambda(0.0, 1).is_err());
    }

    #[test]
    fn direct_examples() {
        let (a, b) = (sample(1, 0), sample(2, 3));
        let one = direct_mixup(&a, &b, 1.0).unwrap();
        assert!(one.v.bitwise_eq(&a.v));
        assert_eq!(one.label(), a.label());
        let zero = direct_mixup(&a, &b, 0.0).unwrap();
        assert!(zero.v.bitwise_eq(&b.v));
        assert_eq!(zero.label(), b.label());

        let zeros = LabeledSample::one_hot(WeightSpaceVector::zeros(&spec()), 0, 2, 0, 0).unwrap();
        let ones = LabeledSample::one_hot(WeightSpaceVector::filled(&spec(), 1.0), 1, 2, 1, 0).unwrap();
        let half = direct_mixup(&zeros, &ones, 0.5).unwrap();
        assert!(half.v.flatten().iter().all(|&x| x == 0.5));
        assert_eq!(half.label(), &[0.5, 0.5]);
        assert!(direct_mixup(&a, &b, 1.5).is_err());
        let other = LabeledSample::one_hot(random_net(&MlpSpec::siren(&[2, 4, 1]).unwrap(), 0), 0, 4, 0, 0).unwrap();
        assert!(direct_mixup(&a, &other, 0.5).is_err());
    }

    #[test]
    fn endpoints_keep_signed_zero() {
        let neg = LabeledSample::one_hot(WeightSpaceVector::filled(&spec(), -0.0), 0, 2, 0, 0).unwrap();
        let pos = LabeledSample::one_hot(WeightSpaceVector::zeros(&spec()), 1, 2, 0, 0).unwrap();
        assert!(direct_mixup(&neg, &pos, 1.0).unwrap().v.bitwise_eq(&neg.v));
        assert!(direct_mixup(&pos, &neg, 0.0).unwrap().v.bitwise_eq(&neg.v));
    }

    #[test]
    fn randomized_examples() {
        let (a, b) = (sample(3, 1), sample(4, 2));
        assert!(randomized_mixup(&a, &b, 1.0, 9).unwrap().v.bitwise_eq(&a.v));
        let zero = randomized_mixup(&a, &b, 0.0, 9).unwrap();
        let p = random_permutation(&spec(), 9);
        assert!(zero.v.bitwise_eq(&apply_permutation(&b.v, &p).unwrap()));
        assert!(grid_diff(&zero.v, &b.v, &spec(), 32) < 1e-5);
        let thin = MlpSpec::siren(&[2, 1, 1, 1]).unwrap();
        let ta = LabeledSample::one_hot(random_net(&thin, 0), 0, 2, 0, 0).unwrap();
        let tb = LabeledSample::one_hot(random_net(&thin, 1), 1, 2, 0, 0).unwrap();
        assert_eq!(randomized_mixup(&ta, &tb, 0.3, 5).unwrap(), direct_mixup(&ta, &tb, 0.3).unwrap());
    }

    #[test]
    fn aligned_examples() {
        let cfg = AlignConfig::default();
        let (a, b) = (sample(5, 0), sample(6, 1));
        assert!(aligned_mixup(&a, &b, 1.0, &cfg).unwrap().v.bitwise_eq(&a.v));
        let q = random_permutation(&spec(), 33);
        let planted = a.with_v(apply_permutation(&a.v, &q).unwrap());
        let mid = aligned_mixup(&a, &planted, 0.5, &cfg).unwrap();
        assert!(grid_diff(&mid.v, &a.v, &spec(), 32) < 1e-4);
        for t in 0..10 {
            let (x, y) = (sample(100 + t, 0), sample(200 + t, 1));
            let r = weight_matching_with(&x.v, &y.v, &cfg).unwrap();
            let aligned = l2_distance(&x.v, &apply_permutation(&y.v, &r.p).unwrap()).unwrap();
            assert!(aligned <= l2_distance(&x.v, &y.v).unwrap() + 1e-6);
        }
    }

    #[test]
    fn label_smooth_examples() {
        let a = sample(7, 0);
        assert_eq!(label_smooth(&a, 0.0).unwrap(), a);
        let s = label_smooth(&a, 0.1).unwrap();
        let want = [0.925f32, 0.025, 0.025, 0.025];
        assert!(s.label().iter().zip(want).all(|(x, y)| (x - y).abs() < 1e-7));
        assert!(s.v.bitwise_eq(&a.v));
        let soft = a.with_label(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let sum: f64 = label_smooth(&soft, 0.37).unwrap().label().iter().map(|&x| x as f64).sum();
        assert!((sum - 1.0).abs() < 1e-7);
        assert!(label_smooth(&a, 1.0).is_err());
    }

    #[test]
    fn input_average_examples() {
        let (a, b) = (sample(8, 2), sample(9, 3));
        assert_eq!(input_average(&a, &b, 1.0).unwrap(), a);
        let half = input_average(&a, &b, 0.5).unwrap();
        assert!(half.v.bitwise_eq(&direct_mixup(&a, &b, 0.5).unwrap().v));
        assert_eq!(half.label(), a.label());
    }

    #[test]
    fn memo_serves_both_orders() {
        let memo = AlignmentMemo::new();
        let cfg = AlignConfig::default();
        let (a, b) = (random_net(&spec(), 1), random_net(&spec(), 2));
        let p_ab = memo.get_or_align(0, &a, 1, &b, &cfg).unwrap();
        let p_ba = memo.get_or_align(1, &b, 0, &a, &cfg).unwrap();
        assert_eq!(memo.len(), 1);
        let d_ab = l2_distance(&a, &apply_permutation(&b, &p_ab).unwrap()).unwrap();
        let d_ba = l2_distance(&b, &apply_permutation(&a, &p_ba).unwrap()).unwrap();
        assert!((d_ab - d_ba).abs() < 1e-5);
        assert!(memo.get_or_align(3, &a, 3, &a, &cfg).unwrap().is_identity());
        memo.clear();
        assert!(memo.is_empty());
    }

    #[test]
    fn config_parsing() {
        let cfg: MixupConfig = toml::from_str("variant = \"aligned\"\nalpha = 0.4").unwrap();
        assert_eq!(cfg.variant, MixupVariant::Aligned);
        assert_eq!(cfg.align.max_sweeps, 50);
        assert!(cfg.validate().is_ok());
        assert!(MixupConfig { alpha: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(toml::from_str::<MixupConfig>("variant = \"full\"").is_err());
        assert_eq!("label_only".parse::<MixupVariant>().unwrap(), MixupVariant::LabelOnly);
    }
}
