//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's forward/backward or assignment code.
#![allow(dead_code)]

use wsaug::{Activation, MlpSpec, Permutation, WeightSpaceVector};

/// Flat parameter vector in the library's flatten order (W_1, b_1, W_2, ...).
pub fn flat_f64(v: &WeightSpaceVector) -> Vec<f64> {
    v.flatten().into_iter().map(|x| x as f64).collect()
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Sine => z.sin(),
        Activation::Relu => z.max(0.0),
        Activation::Linear => z,
    }
}

/// Evaluates the network entirely in f64 from a flat parameter vector.
pub fn reference_forward(params: &[f64], spec: &MlpSpec, x: &[f64]) -> Vec<f64> {
    let dims = spec.dims();
    let mut h = x.to_vec();
    let mut off = 0;
    for (l, w) in dims.windows(2).enumerate() {
        let (din, dout) = (w[0], w[1]);
        let wm = &params[off..off + din * dout];
        let b = &params[off + din * dout..off + din * dout + dout];
        off += din * dout + dout;
        h = (0..dout)
            .map(|i| {
                let z = b[i] + (0..din).map(|j| wm[i * din + j] * h[j]).sum::<f64>();
                act(spec.activations()[l], z)
            })
            .collect();
    }
    h
}

/// The points of a `res x res` grid over `[-1, 1]^2`.
pub fn grid(res: usize) -> Vec<[f64; 2]> {
    let axis: Vec<f64> = (0..res).map(|i| -1.0 + 2.0 * i as f64 / (res - 1) as f64).collect();
    axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect()
}

/// Max over the grid of `|g(x) - f(map(x))|`, evaluated by the f64 oracle.
pub fn grid_diff_mapped(
    g: &WeightSpaceVector,
    f: &WeightSpaceVector,
    spec: &MlpSpec,
    res: usize,
    map: impl Fn([f64; 2]) -> [f64; 2],
) -> f64 {
    let (pg, pf) = (flat_f64(g), flat_f64(f));
    grid(res)
        .into_iter()
        .map(|x| {
            let a = reference_forward(&pg, spec, &x);
            let b = reference_forward(&pf, spec, &map(x));
            a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn grid_diff(g: &WeightSpaceVector, f: &WeightSpaceVector, spec: &MlpSpec, res: usize) -> f64 {
    grid_diff_mapped(g, f, spec, res, |x| x)
}

/// Central finite-difference gradient of `upstream . f(x)`.
pub fn fd_gradient(v: &WeightSpaceVector, spec: &MlpSpec, x: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
    let base = flat_f64(v);
    let objective = |p: &[f64]| -> f64 {
        reference_forward(p, spec, x).iter().zip(upstream).map(|(a, b)| a * b).sum()
    };
    (0..base.len())
        .map(|k| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[k] += h;
            minus[k] -= h;
            (objective(&plus) - objective(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Every permutation of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Value of assigning row `i` to column `assign[i]`.
pub fn assignment_score(score: &[Vec<f64>], assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| score[i][j]).sum()
}

/// The highest-scoring assignment, ties broken toward the lexicographically
/// smallest.
pub fn brute_force_lap(score: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_permutations(score.len()) {
        let s = assignment_score(score, &p);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((p, s));
        }
    }
    best.expect("n >= 1")
}

pub fn perm_vec(p: &Permutation) -> Vec<usize> {
    p.as_slice().to_vec()
}
