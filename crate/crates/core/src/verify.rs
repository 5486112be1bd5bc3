//! Oracles: functional equivalence on a dense grid, reconstruction loss,
//! and loss along the linear path between two networks.

use serde::{Deserialize, Serialize};

use crate::align::{weight_matching_with, AlignConfig};
use crate::error::{Error, Result};
use crate::mixup::interpolate;
use crate::nnrun::{forward_batch, mse};
use crate::signals::{sample_grid, Signal};
use crate::weights::{apply_permutation, check_shapes, Activation, MlpSpec, WeightSpaceVector};

/// Equivalence tolerance for sine networks, whose phase-shift symmetries
/// accumulate more rounding in f32.
pub const SINE_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_NUM_LAMBDAS: usize = 11;

pub fn default_tolerance(spec: &MlpSpec) -> f64 {
    if spec.activations().contains(&Activation::Sine) {
        SINE_TOLERANCE
    } else {
        DEFAULT_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub max_abs_diff: f64,
    pub pass: bool,
}

/// Evaluates both networks on `sample_grid(resolution)`; passes when the
/// largest output difference is below `tol`. 2D input only.
pub fn func_equiv(v1: &WeightSpaceVector, v2: &WeightSpaceVector, spec: &MlpSpec, resolution: usize, tol: f64) -> Result<Equivalence> {
    check_shapes(v1, spec)?;
    check_shapes(v2, spec)?;
    if spec.input_dim() != 2 {
        return Err(Error::Dimension(format!(
            "grid comparison needs 2D input, spec has {}",
            spec.input_dim()
        )));
    }
    let xs = sample_grid(resolution)?;
    let a = forward_batch(v1, spec, &xs)?;
    let b = forward_batch(v2, spec, &xs)?;
    let max_abs_diff = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max);
    Ok(Equivalence { max_abs_diff, pass: max_abs_diff < tol })
}

/// Mean squared error against the signal's targets.
pub fn recon_loss(v: &WeightSpaceVector, spec: &MlpSpec, signal: &Signal) -> Result<f64> {
    mse(v, spec, signal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierProfile {
    /// Uniform grid on `[0, 1]`; `lambda` weights the first network.
    pub lambdas: Vec<f64>,
    pub losses: Vec<f64>,
    /// `max_k losses[k] - (lambda_k losses[last] + (1 - lambda_k) losses[0])`.
    pub barrier: f64,
    pub aligned: bool,
}

/// The barrier of a loss profile, as stored in [`BarrierProfile`].
pub fn barrier_of(lambdas: &[f64], losses: &[f64]) -> f64 {
    let (l0, l1) = (losses[0], losses[losses.len() - 1]);
    lambdas
        .iter()
        .zip(losses)
        .map(|(&lam, &loss)| loss - (lam * l1 + (1.0 - lam) * l0))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Loss of `lambda v1 + (1 - lambda) v2` on `num_lambdas` evenly spaced
/// points of `[0, 1]`. With `aligned`, `v2` is first replaced by its
/// weight-matching alignment to `v1`.
pub fn lmc_barrier(
    v1: &WeightSpaceVector,
    v2: &WeightSpaceVector,
    spec: &MlpSpec,
    signal: &Signal,
    aligned: bool,
    num_lambdas: usize,
    align_cfg: &AlignConfig,
) -> Result<BarrierProfile> {
    if num_lambdas < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 lambdas, got {num_lambdas}")));
    }
    check_shapes(v1, spec)?;
    check_shapes(v2, spec)?;
    let partner = if aligned {
        apply_permutation(v2, &weight_matching_with(v1, v2, align_cfg)?.p)?
    } else {
        v2.clone()
    };
    let lambdas: Vec<f64> = (0..num_lambdas)
        .map(|k| k as f64 / (num_lambdas - 1) as f64)
        .collect();
    let losses = lambdas
        .iter()
        .map(|&lam| recon_loss(&interpolate(v1, &partner, lam)?, spec, signal))
        .collect::<Result<Vec<_>>>()?;
    let barrier = barrier_of(&lambdas, &losses);
    Ok(BarrierProfile { lambdas, losses, barrier, aligned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnrun::{fit_inr, psnr, TrainConfig};
    use crate::signals::{make_signal, ShapeKind};
    use crate::testutil::random_net;
    use crate::weights::random_permutation;

    fn spec() -> MlpSpec {
        MlpSpec::siren(&[2, 16, 16, 1]).unwrap()
    }

    #[test]
    fn equivalence_examples() {
        let spec = spec();
        let v = random_net(&spec, 1);
        let same = func_equiv(&v, &v, &spec, 32, 1e-4).unwrap();
        assert_eq!(same.max_abs_diff, 0.0);
        assert!(same.pass);
        let p = apply_permutation(&v, &random_permutation(&spec, 2)).unwrap();
        assert!(func_equiv(&v, &p, &spec, 64, 1e-4).unwrap().pass);
        let mut flat = v.flatten();
        flat[5] += 1.0;
        let bumped = WeightSpaceVector::from_flat(&spec, &flat).unwrap();
        let r = func_equiv(&v, &bumped, &spec, 64, 1e-4).unwrap();
        assert!(!r.pass && r.max_abs_diff > 0.0);
        let three = MlpSpec::siren(&[3, 4, 1]).unwrap();
        assert!(func_equiv(&random_net(&three, 0), &random_net(&three, 0), &three, 8, 1e-4).is_err());
    }

    #[test]
    fn tolerance_defaults() {
        assert_eq!(default_tolerance(&spec()), 1e-4);
        assert_eq!(default_tolerance(&MlpSpec::relu(&[2, 4, 1]).unwrap()), 1e-5);
    }

    #[test]
    fn recon_loss_examples() {
        let spec = spec();
        let zero_sig = Signal::constant(sample_grid(16).unwrap(), 2, 0.0, 0).unwrap();
        assert_eq!(recon_loss(&WeightSpaceVector::zeros(&spec), &spec, &zero_sig).unwrap(), 0.0);
        let sig = make_signal(ShapeKind::Disk, 16, 3);
        let v = random_net(&spec, 4);
        let p = apply_permutation(&v, &random_permutation(&spec, 5)).unwrap();
        let (a, b) = (recon_loss(&v, &spec, &sig).unwrap(), recon_loss(&p, &spec, &sig).unwrap());
        assert!((a - b).abs() <= 1e-6 * a);
    }

    #[test]
    fn fitted_loss_tracks_psnr() {
        let spec = MlpSpec::siren(&[2, 16, 16, 1]).unwrap();
        let sig = make_signal(ShapeKind::Disk, 16, 8);
        let cfg = TrainConfig { steps: 800, early_stop_psnr: Some(31.0), ..TrainConfig::default() };
        let v = fit_inr(&sig, &spec, &cfg).unwrap();
        let db = psnr(&v, &spec, &sig).unwrap();
        assert!(db > 30.0, "{db}");
        assert!(recon_loss(&v, &spec, &sig).unwrap() / 4.0 < 1e-3);
    }

    #[test]
    fn barrier_examples() {
        let spec = spec();
        let sig = make_signal(ShapeKind::Ring, 16, 1);
        let v = random_net(&spec, 6);
        let cfg = AlignConfig::default();
        let flat = lmc_barrier(&v, &v, &spec, &sig, false, 11, &cfg).unwrap();
        assert_eq!(flat.lambdas.len(), 11);
        assert!(flat.barrier.abs() < 1e-12);
        let q = apply_permutation(&v, &random_permutation(&spec, 7)).unwrap();
        let collapsed = lmc_barrier(&v, &q, &spec, &sig, true, 11, &cfg).unwrap();
        assert!(collapsed.barrier < 1e-6);
        let other = random_net(&spec, 8);
        let prof = lmc_barrier(&v, &other, &spec, &sig, false, 7, &cfg).unwrap();
        assert!((barrier_of(&prof.lambdas, &prof.losses) - prof.barrier).abs() < 1e-9);
        // losses[0] is the partner (lambda = 0), losses[last] is v1.
        assert!((prof.losses[0] - recon_loss(&other, &spec, &sig).unwrap()).abs() < 1e-9);
        assert!((prof.losses[6] - recon_loss(&v, &spec, &sig).unwrap()).abs() < 1e-9);
        assert!(lmc_barrier(&v, &other, &spec, &sig, false, 2, &cfg).is_err());
    }
}
