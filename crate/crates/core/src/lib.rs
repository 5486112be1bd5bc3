//! Data augmentation for deep weight spaces.
//!
//! Small MLPs (mostly SIREN implicit neural representations) are treated as
//! data points. This crate provides the weight-space data model and its
//! permutation symmetry, activation-symmetry and geometric augmentations,
//! weight alignment by iterated linear assignment, weight-space MixUp, a
//! tiny INR fitter, verification oracles, a permutation-invariant probe
//! classifier, and a binary dataset format.

pub mod align;
pub mod augment;
pub mod error;
pub mod mixup;
pub mod nnrun;
pub mod probe;
pub mod seed;
pub mod signals;
pub mod store;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
pub use weights::{
    apply_permutation, l2_distance, random_permutation, validate, Activation, LabeledSample, Matrix, MlpSpec,
    Permutation, PermutationSequence, WeightSpaceVector,
};

/// Version string recorded in manifests and CSV headers.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(test)]
pub(crate) mod testutil {
    use crate::{nnrun, signals, MlpSpec, WeightSpaceVector};

    pub fn random_net(spec: &MlpSpec, seed: u64) -> WeightSpaceVector {
        nnrun::random_weights(spec, seed)
    }

    /// Max over a `res x res` grid of `|g(x) - f(map(x))|`, 2D input only.
    pub fn grid_diff_mapped(
        g: &WeightSpaceVector,
        f: &WeightSpaceVector,
        spec: &MlpSpec,
        res: usize,
        map: impl Fn([f32; 2]) -> [f32; 2],
    ) -> f64 {
        let xs = signals::sample_grid(res).unwrap();
        let mapped: Vec<f32> = xs.chunks(2).flat_map(|x| map([x[0], x[1]])).collect();
        let a = nnrun::forward_batch(g, spec, &xs).unwrap();
        let b = nnrun::forward_batch(f, spec, &mapped).unwrap();
        a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
    }

    pub fn grid_diff(g: &WeightSpaceVector, f: &WeightSpaceVector, spec: &MlpSpec, res: usize) -> f64 {
        grid_diff_mapped(g, f, spec, res, |x| x)
    }
}
