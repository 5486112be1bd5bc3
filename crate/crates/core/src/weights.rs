//! The weight-space data model: architectures, weight vectors, and the
//! hidden-neuron permutation group acting on them.
//!
//! Layers are numbered 1..=M in public APIs and error messages (W_1 maps the
//! input to the first hidden layer). Internally everything is 0-indexed.
//!
//! # Permutation convention
//!
//! A [`Permutation`] is stored as an index map `pi` with `pi[j]` the new
//! position of entry `j`. The matrix `P` it denotes acts by
//! `(P x)[i] = x[pi^-1(i)]`, i.e. `new[pi[j]] = old[j]`. Left-multiplying a
//! matrix by `P` moves row `j` to row `pi[j]`; right-multiplying by `P^T`
//! moves column `j` to column `pi[j]`. Every routine in the crate goes
//! through [`Permutation::permute`] and friends so this convention lives in
//! one place.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TensorKind};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sine,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sine => z.sin(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative at pre-activation `z`. ReLU uses the `1{z > 0}` subgradient.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sine => z.cos(),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sine => "sine",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        })
    }
}

#[derive(Deserialize)]
struct RawMlpSpec {
    dims: Vec<usize>,
    activations: Vec<Activation>,
}

/// Layer widths `d_0..d_M` plus the activation applied after each layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMlpSpec")]
pub struct MlpSpec {
    dims: Vec<usize>,
    activations: Vec<Activation>,
}

impl TryFrom<RawMlpSpec> for MlpSpec {
    type Error = Error;

    fn try_from(raw: RawMlpSpec) -> Result<Self> {
        MlpSpec::new(raw.dims, raw.activations)
    }
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layers (3 widths), got widths {dims:?}"
            )));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidSpec(format!("width d_{pos} is zero")));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::InvalidSpec(format!(
                "{} layers need {} activations, got {}",
                dims.len() - 1,
                dims.len() - 1,
                activations.len()
            )));
        }
        if activations.last() != Some(&Activation::Linear) {
            return Err(Error::InvalidSpec(
                "the output layer must be linear".to_string(),
            ));
        }
        Ok(Self { dims, activations })
    }

    /// Sine hidden layers with a linear output.
    pub fn siren(dims: &[usize]) -> Result<Self> {
        Self::uniform_hidden(dims, Activation::Sine)
    }

    /// ReLU hidden layers with a linear output.
    pub fn relu(dims: &[usize]) -> Result<Self> {
        Self::uniform_hidden(dims, Activation::Relu)
    }

    fn uniform_hidden(dims: &[usize], hidden: Activation) -> Result<Self> {
        let m = dims.len().saturating_sub(1);
        let mut acts = vec![hidden; m];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Linear;
        }
        Self::new(dims.to_vec(), acts)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    /// Number of weight layers `M`.
    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    /// Widths `d_1..d_{M-1}` of the permutable hidden layers.
    pub fn hidden_widths(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    /// Activation applied after 1-indexed layer `layer`.
    pub fn activation_after(&self, layer: usize) -> Option<Activation> {
        layer
            .checked_sub(1)
            .and_then(|i| self.activations.get(i).copied())
    }

    pub fn num_params(&self) -> usize {
        self.dims
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".to_string()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Returns `P M` for row permutation `perm`.
    pub fn permute_rows(&self, perm: &Permutation) -> Self {
        debug_assert_eq!(perm.len(), self.rows);
        let mut out = Self::zeros(self.rows, self.cols);
        for (src, &dst) in perm.as_slice().iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Returns `M P^T` for column permutation `perm`.
    pub fn permute_cols(&self, perm: &Permutation) -> Self {
        debug_assert_eq!(perm.len(), self.cols);
        let mut out = Self::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (c, &to) in perm.as_slice().iter().enumerate() {
                dst[to] = src[c];
            }
        }
        out
    }
}

/// The concatenated weights and biases `[W_m, b_m]` of an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpaceVector {
    weights: Vec<Matrix>,
    biases: Vec<Vec<f32>>,
}

impl WeightSpaceVector {
    /// Builds a vector from per-layer tensors; each bias must have one entry
    /// per row of its weight matrix and consecutive layers must chain.
    pub fn new(weights: Vec<Matrix>, biases: Vec<Vec<f32>>) -> Result<Self> {
        if weights.len() != biases.len() {
            return Err(Error::LayerCount {
                expected: weights.len(),
                actual: biases.len(),
            });
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if b.len() != w.rows() {
                return Err(Error::Shape {
                    layer: i + 1,
                    kind: TensorKind::Bias,
                    expected: vec![w.rows()],
                    actual: vec![b.len()],
                });
            }
            if i > 0 && w.cols() != weights[i - 1].rows() {
                return Err(Error::Shape {
                    layer: i + 1,
                    kind: TensorKind::Weight,
                    expected: vec![w.rows(), weights[i - 1].rows()],
                    actual: w.shape().to_vec(),
                });
            }
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        Self::filled(spec, 0.0)
    }

    pub fn filled(spec: &MlpSpec, value: f32) -> Self {
        let dims = spec.dims();
        let weights = dims
            .windows(2)
            .map(|w| Matrix::new(w[1], w[0], vec![value; w[0] * w[1]]).expect("sized"))
            .collect();
        let biases = dims[1..].iter().map(|&d| vec![value; d]).collect();
        Self { weights, biases }
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn from_flat(spec: &MlpSpec, flat: &[f32]) -> Result<Self> {
        if flat.len() != spec.num_params() {
            return Err(Error::Dimension(format!(
                "spec has {} parameters, got {}",
                spec.num_params(),
                flat.len()
            )));
        }
        let mut weights = Vec::with_capacity(spec.num_layers());
        let mut biases = Vec::with_capacity(spec.num_layers());
        let mut at = 0;
        for w in spec.dims().windows(2) {
            let n = w[0] * w[1];
            weights.push(Matrix::new(w[1], w[0], flat[at..at + n].to_vec())?);
            at += n;
            biases.push(flat[at..at + w[1]].to_vec());
            at += w[1];
        }
        Ok(Self { weights, biases })
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f32>] {
        &self.biases
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Matrix], &mut [Vec<f32>]) {
        (&mut self.weights, &mut self.biases)
    }

    /// Output widths of layers `1..M-1`.
    pub fn hidden_widths(&self) -> Vec<usize> {
        let m = self.weights.len();
        self.weights[..m.saturating_sub(1)].iter().map(Matrix::rows).collect()
    }

    pub fn num_entries(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// `W_1, b_1, W_2, b_2, ...`, weights row-major.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.num_entries());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    /// Iterates over every tensor (weights then bias, layer by layer).
    pub fn tensors(&self) -> impl Iterator<Item = &[f32]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
    }

    pub fn map_entries(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w.map(&f)).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|&x| f(x)).collect())
                .collect(),
        }
    }

    /// Entrywise combination of two same-shaped vectors.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        same_shape(self, other)?;
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| Matrix {
                rows: a.rows,
                cols: a.cols,
                data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
            })
            .collect();
        let biases = self
            .biases
            .iter()
            .zip(&other.biases)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            .collect();
        Ok(Self { weights, biases })
    }

    /// Equality of every entry's bit pattern (distinguishes `-0.0` and NaNs).
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        same_shape(self, other).is_ok()
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    /// Largest absolute entrywise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        same_shape(self, other).ok()?;
        Some(
            self.tensors()
                .zip(other.tensors())
                .flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()))
                .fold(0.0, f64::max),
        )
    }
}

fn same_shape(a: &WeightSpaceVector, b: &WeightSpaceVector) -> Result<()> {
    if a.num_layers() != b.num_layers() {
        return Err(Error::LayerCount {
            expected: a.num_layers(),
            actual: b.num_layers(),
        });
    }
    for (i, ((wa, ba), (wb, bb))) in a
        .weights
        .iter()
        .zip(&a.biases)
        .zip(b.weights.iter().zip(&b.biases))
        .enumerate()
    {
        if wa.shape() != wb.shape() {
            return Err(Error::Shape {
                layer: i + 1,
                kind: TensorKind::Weight,
                expected: wa.shape().to_vec(),
                actual: wb.shape().to_vec(),
            });
        }
        if ba.len() != bb.len() {
            return Err(Error::Shape {
                layer: i + 1,
                kind: TensorKind::Bias,
                expected: vec![ba.len()],
                actual: vec![bb.len()],
            });
        }
    }
    Ok(())
}

/// Shape-only check against `spec`; cheap enough for hot paths.
pub fn check_shapes(v: &WeightSpaceVector, spec: &MlpSpec) -> Result<()> {
    if v.num_layers() != spec.num_layers() {
        return Err(Error::LayerCount {
            expected: spec.num_layers(),
            actual: v.num_layers(),
        });
    }
    for (i, w) in spec.dims().windows(2).enumerate() {
        let expected = [w[1], w[0]];
        if v.weights[i].shape() != expected {
            return Err(Error::Shape {
                layer: i + 1,
                kind: TensorKind::Weight,
                expected: expected.to_vec(),
                actual: v.weights[i].shape().to_vec(),
            });
        }
        if v.biases[i].len() != w[1] {
            return Err(Error::Shape {
                layer: i + 1,
                kind: TensorKind::Bias,
                expected: vec![w[1]],
                actual: vec![v.biases[i].len()],
            });
        }
    }
    Ok(())
}

/// Checks shapes against `spec` and that every entry is finite.
pub fn validate(v: &WeightSpaceVector, spec: &MlpSpec) -> Result<()> {
    check_shapes(v, spec)?;
    for (i, (w, b)) in v.weights.iter().zip(&v.biases).enumerate() {
        for (kind, data) in [(TensorKind::Weight, w.data()), (TensorKind::Bias, b.as_slice())] {
            if let Some(index) = data.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    layer: i + 1,
                    kind,
                    index,
                    value: data[index],
                });
            }
        }
    }
    Ok(())
}

/// A bijection on `0..n`; see the module docs for the action convention.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &i in &map {
            if i >= map.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "{map:?} is not a permutation of 0..{}",
                    map.len()
                )));
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Self(inv)
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &Self) -> Self {
        Self(inner.0.iter().map(|&j| self.0[j]).collect())
    }

    /// `P x`, i.e. `out[pi[j]] = x[j]`.
    pub fn permute<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.0.len());
        let mut out = vec![T::default(); x.len()];
        for (j, &to) in self.0.iter().enumerate() {
            out[to] = x[j];
        }
        out
    }

    /// All permutations of `0..n` in lexicographic order.
    pub fn all(n: usize) -> Vec<Self> {
        let mut cur: Vec<usize> = (0..n).collect();
        let mut out = vec![Self(cur.clone())];
        while next_lex(&mut cur) {
            out.push(Self(cur.clone()));
        }
        out
    }
}

/// Advances `a` to its lexicographic successor; false when `a` was the last.
fn next_lex(a: &mut [usize]) -> bool {
    let n = a.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// One permutation per hidden layer: the group element `p = (P_1..P_{M-1})`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PermutationSequence {
    perms: Vec<Permutation>,
}

impl PermutationSequence {
    pub fn new(perms: Vec<Permutation>) -> Self {
        Self { perms }
    }

    pub fn identity(spec: &MlpSpec) -> Self {
        Self::new(spec.hidden_widths().iter().map(|&d| Permutation::identity(d)).collect())
    }

    pub fn perms(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.perms.iter().all(Permutation::is_identity)
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.perms.iter().map(Permutation::inverse).collect())
    }

    /// Layerwise `self ∘ inner`, so that `apply(apply(v, inner), self)`
    /// equals `apply(v, self.compose(inner))`.
    pub fn compose(&self, inner: &Self) -> Self {
        Self::new(
            self.perms
                .iter()
                .zip(&inner.perms)
                .map(|(a, b)| a.compose(b))
                .collect(),
        )
    }

    pub(crate) fn with_layer(&self, layer: usize, perm: Permutation) -> Self {
        let mut perms = self.perms.clone();
        perms[layer] = perm;
        Self::new(perms)
    }

    fn check_against(&self, v: &WeightSpaceVector) -> Result<()> {
        let m = v.num_layers();
        if self.perms.len() + 1 != m {
            return Err(Error::Dimension(format!(
                "{} hidden layers but {} permutations",
                m.saturating_sub(1),
                self.perms.len()
            )));
        }
        for (l, p) in self.perms.iter().enumerate() {
            if p.len() != v.weights[l].rows() {
                return Err(Error::Dimension(format!(
                    "hidden layer {} has width {} but its permutation has length {}",
                    l + 1,
                    v.weights[l].rows(),
                    p.len()
                )));
            }
        }
        Ok(())
    }
}

/// `p · v`: permutes the rows of `W_l`, entries of `b_l`, and columns of
/// `W_{l+1}` for every hidden layer `l`. The output layer is left in place.
pub fn apply_permutation(v: &WeightSpaceVector, p: &PermutationSequence) -> Result<WeightSpaceVector> {
    p.check_against(v)?;
    let m = v.num_layers();
    let mut weights = Vec::with_capacity(m);
    let mut biases = Vec::with_capacity(m);
    for i in 0..m {
        let mut w = if i > 0 {
            v.weights[i].permute_cols(&p.perms[i - 1])
        } else {
            v.weights[i].clone()
        };
        let mut b = v.biases[i].clone();
        if i + 1 < m {
            w = w.permute_rows(&p.perms[i]);
            b = p.perms[i].permute(&b);
        }
        weights.push(w);
        biases.push(b);
    }
    Ok(WeightSpaceVector { weights, biases })
}

/// Uniformly random permutation per hidden layer (Fisher-Yates).
pub fn random_permutation(spec: &MlpSpec, seed: u64) -> PermutationSequence {
    random_permutation_for(spec.hidden_widths(), seed)
}

/// As `random_permutation`, from hidden widths alone.
pub fn random_permutation_for(widths: &[usize], seed: u64) -> PermutationSequence {
    let mut rng = seed::rng(seed);
    PermutationSequence::new(
        widths
            .iter()
            .map(|&d| {
                let mut idx: Vec<usize> = (0..d).collect();
                idx.shuffle(&mut rng);
                Permutation(idx)
            })
            .collect(),
    )
}

/// Euclidean distance over all weight and bias entries, accumulated in f64.
pub fn l2_distance(v1: &WeightSpaceVector, v2: &WeightSpaceVector) -> Result<f64> {
    same_shape(v1, v2)?;
    let sq: f64 = v1
        .tensors()
        .zip(v2.tensors())
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sq.sqrt())
}

/// Inner product `<v1, v2>` over all entries, accumulated in f64.
pub fn inner_product(v1: &WeightSpaceVector, v2: &WeightSpaceVector) -> Result<f64> {
    same_shape(v1, v2)?;
    Ok(v1
        .tensors()
        .zip(v2.tensors())
        .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>())
        .sum())
}

/// A weight vector with a soft label over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub v: WeightSpaceVector,
    label: Vec<f32>,
    pub object_id: u32,
    pub view_id: u32,
}

impl LabeledSample {
    pub fn new(v: WeightSpaceVector, label: Vec<f32>, object_id: u32, view_id: u32) -> Result<Self> {
        check_label(&label)?;
        Ok(Self {
            v,
            label,
            object_id,
            view_id,
        })
    }

    pub fn one_hot(v: WeightSpaceVector, class: usize, num_classes: usize, object_id: u32, view_id: u32) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {num_classes} classes"
            )));
        }
        let mut label = vec![0.0; num_classes];
        label[class] = 1.0;
        Self::new(v, label, object_id, view_id)
    }

    pub fn label(&self) -> &[f32] {
        &self.label
    }

    pub fn num_classes(&self) -> usize {
        self.label.len()
    }

    /// Argmax of the soft label, ties toward the lower class index.
    pub fn hard_label(&self) -> usize {
        argmax(&self.label)
    }

    pub fn with_v(&self, v: WeightSpaceVector) -> Self {
        Self { v, ..self.clone() }
    }

    pub fn with_label(&self, label: Vec<f32>) -> Result<Self> {
        check_label(&label)?;
        Ok(Self { label, ..self.clone() })
    }
}

fn check_label(label: &[f32]) -> Result<()> {
    if label.is_empty() {
        return Err(Error::InvalidArgument("empty label".to_string()));
    }
    if label.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "label has negative or non-finite entries: {label:?}"
        )));
    }
    let sum: f64 = label.iter().map(|&y| y as f64).sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "label sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_net;

    fn tiny() -> (MlpSpec, WeightSpaceVector) {
        let spec = MlpSpec::new(vec![1, 2, 1], vec![Activation::Sine, Activation::Linear]).unwrap();
        let v = WeightSpaceVector::new(
            vec![
                Matrix::from_rows(&[&[1.0], &[2.0]]).unwrap(),
                Matrix::from_rows(&[&[5.0, 6.0]]).unwrap(),
            ],
            vec![vec![3.0, 4.0], vec![0.5]],
        )
        .unwrap();
        (spec, v)
    }

    #[test]
    fn spec_rejects_bad_architectures() {
        assert!(MlpSpec::siren(&[2, 1]).is_err());
        assert!(MlpSpec::siren(&[2, 0, 1]).is_err());
        assert!(MlpSpec::new(vec![2, 4, 1], vec![Activation::Sine, Activation::Sine]).is_err());
        assert!(MlpSpec::new(vec![2, 4, 1], vec![Activation::Linear]).is_err());
        let s = MlpSpec::siren(&[2, 4, 4, 1]).unwrap();
        assert_eq!(s.num_layers(), 3);
        assert_eq!(s.hidden_widths(), &[4, 4]);
        assert_eq!(s.num_params(), 12 + 20 + 5);
    }

    #[test]
    fn spec_deserialization_validates() {
        let ok: MlpSpec = toml::from_str("dims = [2, 8, 1]\nactivations = [\"sine\", \"linear\"]").unwrap();
        assert_eq!(ok, MlpSpec::siren(&[2, 8, 1]).unwrap());
        assert!(toml::from_str::<MlpSpec>("dims = [2, 8, 1]\nactivations = [\"sine\", \"sine\"]").is_err());
    }

    #[test]
    fn validate_accepts_matching_vector() {
        let spec = MlpSpec::siren(&[2, 4, 1]).unwrap();
        assert!(validate(&WeightSpaceVector::zeros(&spec), &spec).is_ok());
    }

    #[test]
    fn validate_reports_first_bad_layer() {
        let spec = MlpSpec::siren(&[2, 4, 1]).unwrap();
        let other = MlpSpec::siren(&[2, 5, 1]).unwrap();
        let err = validate(&WeightSpaceVector::zeros(&spec), &other).unwrap_err();
        match err {
            Error::Shape { layer, expected, actual, .. } => {
                assert_eq!(layer, 1);
                assert_eq!(expected, vec![5, 2]);
                assert_eq!(actual, vec![4, 2]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn validate_reports_non_finite() {
        let spec = MlpSpec::siren(&[2, 4, 1]).unwrap();
        let mut v = WeightSpaceVector::zeros(&spec);
        v.parts_mut().1[0][0] = f32::NAN;
        match validate(&v, &spec).unwrap_err() {
            Error::NonFinite { layer, kind, index, .. } => {
                assert_eq!((layer, kind, index), (1, TensorKind::Bias, 0));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn permutation_convention_moves_entry_j_to_pi_j() {
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(p.permute(&[10, 20, 30]), vec![20, 30, 10]);
        assert_eq!(p.inverse().permute(&p.permute(&[1, 2, 3])), vec![1, 2, 3]);
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn lexicographic_enumeration() {
        let all = Permutation::all(3);
        assert_eq!(all.len(), 6);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert!(all[0].is_identity());
        assert_eq!(Permutation::all(1).len(), 1);
    }

    #[test]
    fn swap_on_tiny_net() {
        let (spec, v) = tiny();
        let p = PermutationSequence::new(vec![Permutation::new(vec![1, 0]).unwrap()]);
        let out = apply_permutation(&v, &p).unwrap();
        assert_eq!(out.weights()[0].data(), &[2.0, 1.0]);
        assert_eq!(out.biases()[0], vec![4.0, 3.0]);
        assert_eq!(out.weights()[1].data(), &[6.0, 5.0]);
        assert_eq!(out.biases()[1], vec![0.5]);
        assert!(validate(&out, &spec).is_ok());
    }

    #[test]
    fn identity_action_is_bitwise() {
        let spec = MlpSpec::siren(&[2, 8, 8, 1]).unwrap();
        let v = random_net(&spec, 3);
        let out = apply_permutation(&v, &PermutationSequence::identity(&spec)).unwrap();
        assert!(out.bitwise_eq(&v));
    }

    #[test]
    fn wrong_permutation_sizes_rejected() {
        let spec = MlpSpec::siren(&[2, 4, 1]).unwrap();
        let v = WeightSpaceVector::zeros(&spec);
        let p = PermutationSequence::new(vec![Permutation::identity(3)]);
        assert!(apply_permutation(&v, &p).is_err());
        let p = PermutationSequence::new(vec![]);
        assert!(apply_permutation(&v, &p).is_err());
    }

    #[test]
    fn random_permutation_is_deterministic() {
        let spec = MlpSpec::siren(&[2, 16, 16, 1]).unwrap();
        assert_eq!(random_permutation(&spec, 9), random_permutation(&spec, 9));
        assert_ne!(random_permutation(&spec, 9), random_permutation(&spec, 10));
        let one = MlpSpec::siren(&[2, 1, 1]).unwrap();
        assert!(random_permutation(&one, 4).is_identity());
    }

    #[test]
    fn random_permutation_is_uniform_on_three_elements() {
        let spec = MlpSpec::siren(&[2, 3, 1]).unwrap();
        let all = Permutation::all(3);
        let mut counts = [0usize; 6];
        let draws = 6000;
        for seed in 0..draws {
            let p = random_permutation(&spec, seed as u64);
            let k = all.iter().position(|q| q == &p.perms()[0]).unwrap();
            counts[k] += 1;
        }
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        for &c in &counts {
            assert!((c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.02, "{counts:?}");
        }
        // 5 degrees of freedom, 0.1% upper tail.
        assert!(chi2 < 20.52, "chi2 {chi2}");
    }

    #[test]
    fn l2_distance_basics() {
        let spec = MlpSpec::siren(&[2, 4, 3, 1]).unwrap();
        let v = random_net(&spec, 1);
        assert_eq!(l2_distance(&v, &v).unwrap(), 0.0);
        let zeros = WeightSpaceVector::zeros(&spec);
        let ones = WeightSpaceVector::filled(&spec, 1.0);
        let n = spec.num_params() as f64;
        assert!((l2_distance(&zeros, &ones).unwrap() - n.sqrt()).abs() < 1e-12);
        let other = MlpSpec::siren(&[2, 5, 3, 1]).unwrap();
        assert!(l2_distance(&v, &WeightSpaceVector::zeros(&other)).is_err());
    }

    #[test]
    fn l2_distance_matches_flattened_sum() {
        let spec = MlpSpec::siren(&[3, 7, 5, 2]).unwrap();
        for s in 0..10 {
            let a = random_net(&spec, 2 * s);
            let b = random_net(&spec, 2 * s + 1);
            let flat: f64 = a
                .flatten()
                .iter()
                .zip(b.flatten())
                .map(|(&x, y)| (x as f64 - y as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            let d = l2_distance(&a, &b).unwrap();
            assert!((d - flat).abs() <= 1e-9 * flat);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let spec = MlpSpec::relu(&[3, 5, 2]).unwrap();
        let v = random_net(&spec, 5);
        assert!(WeightSpaceVector::from_flat(&spec, &v.flatten()).unwrap().bitwise_eq(&v));
    }

    #[test]
    fn labeled_sample_checks_simplex() {
        let spec = MlpSpec::siren(&[2, 4, 1]).unwrap();
        let v = WeightSpaceVector::zeros(&spec);
        assert!(LabeledSample::new(v.clone(), vec![0.5, 0.5], 0, 0).is_ok());
        assert!(LabeledSample::new(v.clone(), vec![0.5, 0.6], 0, 0).is_err());
        assert!(LabeledSample::new(v.clone(), vec![1.5, -0.5], 0, 0).is_err());
        let s = LabeledSample::one_hot(v, 2, 4, 0, 0).unwrap();
        assert_eq!(s.hard_label(), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
