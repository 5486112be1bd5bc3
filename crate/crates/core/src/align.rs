//! Weight alignment: find hidden-neuron permutations `p` minimizing
//! `||v1 - p·v2||`.
//!
//! `weight_matching` is coordinate descent over layers, each step an exact
//! linear assignment problem. `brute_force_alignment` enumerates every
//! permutation sequence and serves as the reference at tiny widths. Only
//! permutation symmetry is searched; sine negation and phase shifts are not.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::weights::{apply_permutation, l2_distance, Permutation, PermutationSequence, WeightSpaceVector};

pub const DEFAULT_MAX_SWEEPS: usize = 50;

/// Largest number of candidates `brute_force_alignment` will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Relative margin a layer update must beat before it is accepted. Guards
/// against cycling between float-equal assignments.
const ACCEPT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub p: PermutationSequence,
    /// `||v1 - p·v2||`.
    pub objective: f64,
    pub sweeps_used: usize,
    pub converged: bool,
    /// Objective before any update, then after each accepted update.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_sweeps() -> usize {
    DEFAULT_MAX_SWEEPS
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { max_sweeps: DEFAULT_MAX_SWEEPS, seed: 0 }
    }
}

/// Sum of `score[i][assign[i]]`, accumulated in row order.
pub fn assignment_value(score: &[Vec<f64>], assign: &Permutation) -> f64 {
    score.iter().zip(assign.as_slice()).map(|(row, &j)| row[j]).sum()
}

/// Exact maximum-weight assignment: returns `a` with `a[i]` the column for
/// row `i`, maximizing `sum_i score[i][a[i]]`. Among optimal assignments the
/// lexicographically smallest is returned.
pub fn lap_solve(score: &[Vec<f64>]) -> Result<Permutation> {
    let n = score.len();
    for (i, row) in score.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Dimension(format!("score matrix row {i} has {} entries, expected {n}", row.len())));
        }
        if let Some(x) = row.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite score {x} in row {i}")));
        }
    }
    if n == 0 {
        return Ok(Permutation::identity(0));
    }
    let cost: Vec<Vec<f64>> = score.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
    let (assign, u, v) = hungarian(&cost);
    let scale = cost.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-11 * scale * n as f64;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| cost[i][j] - u[i] - v[j] <= tol).collect())
        .collect();
    let hung = Permutation::new(assign).expect("hungarian yields a bijection");
    // Optimal assignments are the perfect matchings on tight edges; pick the
    // lexicographically smallest. Keep the plain solution if tolerance let a
    // worse edge in.
    match lex_min_matching(&tight) {
        Some(lex) if assignment_value(score, &lex) >= assignment_value(score, &hung) - tol => Ok(lex),
        _ => Ok(hung),
    }
}

/// Hungarian method with potentials (minimization). Returns the row
/// assignment and the dual potentials.
fn hungarian(a: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = a.len();
    // 1-indexed internally; index 0 is the virtual column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    (assign, u[1..].to_vec(), v[1..].to_vec())
}

/// Greedy row-by-row choice of the smallest admissible column, keeping a
/// perfect matching of the remaining rows feasible.
fn lex_min_matching(edges: &[Vec<bool>]) -> Option<Permutation> {
    let n = edges.len();
    let mut assign = vec![usize::MAX; n];
    let mut col_used = vec![false; n];
    for i in 0..n {
        let mut chosen = None;
        for j in 0..n {
            if !edges[i][j] || col_used[j] {
                continue;
            }
            col_used[j] = true;
            if has_perfect_matching(edges, i + 1, &col_used) {
                chosen = Some(j);
                break;
            }
            col_used[j] = false;
        }
        assign[i] = chosen?;
    }
    Permutation::new(assign).ok()
}

/// Whether rows `first..n` can be matched into the unused columns (Kuhn).
fn has_perfect_matching(edges: &[Vec<bool>], first: usize, col_used: &[bool]) -> bool {
    let n = edges.len();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    fn augment(r: usize, edges: &[Vec<bool>], blocked: &[bool], seen: &mut [bool], match_col: &mut [Option<usize>]) -> bool {
        for c in 0..edges.len() {
            if edges[r][c] && !blocked[c] && !seen[c] {
                seen[c] = true;
                if match_col[c].is_none_or(|r2| augment(r2, edges, blocked, seen, match_col)) {
                    match_col[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    (first..n).all(|r| {
        let mut seen = vec![false; n];
        augment(r, edges, col_used, &mut seen, &mut match_col)
    })
}

fn check_pair(v1: &WeightSpaceVector, v2: &WeightSpaceVector) -> Result<f64> {
    for (l, (a, b)) in v1.weights().iter().zip(v2.weights()).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::Dimension(format!(
                "layer {} weight shapes differ: {:?} vs {:?}",
                l + 1,
                a.shape(),
                b.shape()
            )));
        }
    }
    l2_distance(v1, v2)
}

/// Score matrix for hidden layer `layer` (0-based over hidden layers) with
/// all other permutations held at their values in `p`. Entry `[i][k]` is
/// the gain in `<v1, p·v2>` from placing neuron `k` of `v2` at position `i`.
pub fn score_matrix(v1: &WeightSpaceVector, v2: &WeightSpaceVector, p: &PermutationSequence, layer: usize) -> Result<Vec<Vec<f64>>> {
    let n = p.perms()[layer].len();
    let fixed = p.with_layer(layer, Permutation::identity(n));
    let v2p = apply_permutation(v2, &fixed)?;
    let (w1, w2) = (&v1.weights()[layer], &v2p.weights()[layer]);
    let (b1, b2) = (&v1.biases()[layer], &v2p.biases()[layer]);
    let (n1, n2) = (&v1.weights()[layer + 1], &v2p.weights()[layer + 1]);
    let mut s = vec![vec![0.0f64; n]; n];
    for (i, row) in s.iter_mut().enumerate() {
        for (k, out) in row.iter_mut().enumerate() {
            let mut acc = b1[i] as f64 * b2[k] as f64;
            acc += w1.row(i).iter().zip(w2.row(k)).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>();
            acc += (0..n1.rows()).map(|r| n1.get(r, i) as f64 * n2.get(r, k) as f64).sum::<f64>();
            *out = acc;
        }
    }
    Ok(s)
}

/// Coordinate-descent weight matching. Starts from the identity and, each
/// sweep, revisits every hidden layer in a seeded random order, replacing
/// its permutation by the exact LAP optimum when that strictly improves the
/// layer score. Stops after a sweep with no change or `max_sweeps` sweeps.
pub fn weight_matching(v1: &WeightSpaceVector, v2: &WeightSpaceVector, max_sweeps: usize, seed: u64) -> Result<AlignmentResult> {
    if max_sweeps == 0 {
        return Err(Error::InvalidArgument("max_sweeps must be at least 1".to_string()));
    }
    let start = check_pair(v1, v2)?;
    let widths = v1.hidden_widths();
    let mut p = PermutationSequence::new(widths.iter().map(|&d| Permutation::identity(d)).collect());
    let mut trace = vec![start];
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..widths.len()).collect();
    let mut sweeps_used = 0;
    let mut converged = false;
    while sweeps_used < max_sweeps {
        sweeps_used += 1;
        order.shuffle(&mut rng);
        let mut changed = false;
        for &l in &order {
            let s = score_matrix(v1, v2, &p, l)?;
            let assign = lap_solve(&s)?;
            // P_l places neuron k of v2 at position i when assign[i] = k.
            let candidate = assign.inverse();
            let current_score = assignment_value(&s, &p.perms()[l].inverse());
            let new_score = assignment_value(&s, &assign);
            if candidate != p.perms()[l] && new_score > current_score + ACCEPT_RTOL * current_score.abs().max(1.0) {
                p = p.with_layer(l, candidate);
                trace.push(l2_distance(v1, &apply_permutation(v2, &p)?)?);
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    let objective = *trace.last().expect("non-empty");
    Ok(AlignmentResult { p, objective, sweeps_used, converged, trace })
}

pub fn weight_matching_with(v1: &WeightSpaceVector, v2: &WeightSpaceVector, cfg: &AlignConfig) -> Result<AlignmentResult> {
    weight_matching(v1, v2, cfg.max_sweeps, cfg.seed)
}

/// Number of permutation sequences for the given hidden widths, saturating.
pub fn candidate_count(widths: &[usize]) -> u128 {
    widths.iter().fold(1u128, |acc, &d| {
        (1..=d as u128).fold(acc, |a, k| a.saturating_mul(k))
    })
}

/// Exhaustive minimum of `||v1 - p·v2||` over all permutation sequences.
/// Candidates are visited in lexicographic order and the first minimizer
/// wins ties.
pub fn brute_force_alignment(v1: &WeightSpaceVector, v2: &WeightSpaceVector) -> Result<AlignmentResult> {
    let start = check_pair(v1, v2)?;
    let widths = v1.hidden_widths();
    let candidates = candidate_count(&widths);
    if candidates > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeGuard { candidates, limit: BRUTE_FORCE_LIMIT });
    }
    let per_layer: Vec<Vec<Permutation>> = widths.iter().map(|&d| Permutation::all(d)).collect();
    let mut idx = vec![0usize; widths.len()];
    let mut best: Option<(f64, PermutationSequence)> = None;
    loop {
        let p = PermutationSequence::new(idx.iter().zip(&per_layer).map(|(&i, all)| all[i].clone()).collect());
        let sq = l2_sq(v1, &apply_permutation(v2, &p)?);
        if best.as_ref().is_none_or(|(b, _)| sq < *b) {
            best = Some((sq, p));
        }
        // Odometer increment, last layer fastest.
        let mut k = idx.len();
        loop {
            if k == 0 {
                let (sq, p) = best.expect("at least one candidate");
                return Ok(AlignmentResult { p, objective: sq.sqrt(), sweeps_used: 0, converged: true, trace: vec![start, sq.sqrt()] });
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per_layer[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn l2_sq(a: &WeightSpaceVector, b: &WeightSpaceVector) -> f64 {
    a.tensors()
        .zip(b.tensors())
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_net;
    use crate::weights::{random_permutation, MlpSpec};
    use rand::Rng as _;

    fn brute_lap(score: &[Vec<f64>]) -> (Permutation, f64) {
        let mut best: Option<(Permutation, f64)> = None;
        for p in Permutation::all(score.len()) {
            let val = assignment_value(score, &p);
            if best.as_ref().is_none_or(|(_, b)| val > *b) {
                best = Some((p, val));
            }
        }
        best.unwrap()
    }

    fn random_matrix(n: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn lap_identity_dominant() {
        let n = 5;
        let s: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let a = lap_solve(&s).unwrap();
        assert!(a.is_identity());
        assert_eq!(assignment_value(&s, &a), 5.0);
    }

    #[test]
    fn lap_cost_form() {
        let cost = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let s: Vec<Vec<f64>> = cost.iter().map(|r| r.iter().map(|x: &f64| -x).collect()).collect();
        let a = lap_solve(&s).unwrap();
        assert_eq!(a.as_slice(), &[1, 0, 2]);
        assert_eq!(-assignment_value(&s, &a), 5.0);
    }

    #[test]
    fn lap_matches_enumeration() {
        let mut rng = seed::rng(17);
        for n in 1..=7 {
            for _ in 0..20 {
                let s = random_matrix(n, &mut rng);
                let (bp, bv) = brute_lap(&s);
                let a = lap_solve(&s).unwrap();
                assert_eq!(a, bp);
                assert_eq!(assignment_value(&s, &a), bv);
            }
        }
    }

    #[test]
    fn lap_ties_pick_lex_smallest() {
        assert!(lap_solve(&vec![vec![0.0; 4]; 4]).unwrap().is_identity());
        // Integer matrices with many optimal assignments.
        let mut rng = seed::rng(5);
        for _ in 0..200 {
            let n = rng.random_range(2..=5);
            let s: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0..3) as f64).collect()).collect();
            assert_eq!(lap_solve(&s).unwrap(), brute_lap(&s).0, "{s:?}");
        }
    }

    #[test]
    fn lap_rejects_bad_input() {
        assert!(lap_solve(&[vec![1.0, f64::NAN], vec![0.0, 0.0]]).is_err());
        assert!(lap_solve(&[vec![1.0, 2.0], vec![0.0]]).is_err());
        assert!(lap_solve(&[]).unwrap().is_empty());
    }

    #[test]
    fn self_alignment_is_identity() {
        let spec = MlpSpec::siren(&[2, 8, 8, 1]).unwrap();
        let v = random_net(&spec, 1);
        let r = weight_matching(&v, &v, 50, 0).unwrap();
        assert!(r.p.is_identity());
        assert_eq!(r.objective, 0.0);
        assert!(r.converged);
        let b = brute_force_alignment(&v, &random_net(&MlpSpec::siren(&[2, 3, 3, 1]).unwrap(), 0));
        assert!(b.is_err());
    }

    #[test]
    fn planted_permutation_recovered() {
        let spec = MlpSpec::siren(&[2, 8, 8, 1]).unwrap();
        for t in 0..10 {
            let v = random_net(&spec, 100 + t);
            let q = random_permutation(&spec, 200 + t);
            let r = weight_matching(&v, &apply_permutation(&v, &q).unwrap(), 50, t).unwrap();
            assert!(r.objective < 1e-5, "trial {t}: {}", r.objective);
            assert_eq!(r.p.compose(&q), PermutationSequence::identity(&spec));
        }
    }

    #[test]
    fn objective_trace_is_monotone_and_consistent() {
        let spec = MlpSpec::siren(&[2, 8, 8, 8, 1]).unwrap();
        for t in 0..10 {
            let (a, b) = (random_net(&spec, t), random_net(&spec, 50 + t));
            let r = weight_matching(&a, &b, 50, t).unwrap();
            assert!(r.trace.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{:?}", r.trace);
            let recomputed = l2_distance(&a, &apply_permutation(&b, &r.p).unwrap()).unwrap();
            assert!((recomputed - r.objective).abs() <= 1e-5 * recomputed.max(1e-12));
            assert!(r.objective <= l2_distance(&a, &b).unwrap() + 1e-6);
        }
    }

    #[test]
    fn brute_force_counts_and_self() {
        assert_eq!(candidate_count(&[2]), 2);
        assert_eq!(candidate_count(&[4, 4]), 576);
        assert_eq!(candidate_count(&[16]), 20_922_789_888_000);
        let spec = MlpSpec::siren(&[2, 4, 4, 1]).unwrap();
        let v = random_net(&spec, 3);
        let r = brute_force_alignment(&v, &v).unwrap();
        assert!(r.p.is_identity());
        assert_eq!(r.objective, 0.0);
        let big = MlpSpec::siren(&[2, 16, 1]).unwrap();
        let w = random_net(&big, 0);
        assert!(matches!(brute_force_alignment(&w, &w), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn brute_force_agrees_on_planted() {
        let spec = MlpSpec::siren(&[2, 4, 4, 1]).unwrap();
        for t in 0..5 {
            let v = random_net(&spec, t);
            let w = apply_permutation(&v, &random_permutation(&spec, t + 9)).unwrap();
            let b = brute_force_alignment(&v, &w).unwrap();
            let m = weight_matching(&v, &w, 50, t).unwrap();
            assert!(b.objective < 1e-6 && m.objective < 1e-6);
            assert_eq!(b.p, m.p);
        }
    }

    #[test]
    fn score_matrix_ranks_like_distance() {
        // With other layers fixed, the LAP score and the distance order any
        // two choices of one layer identically.
        let spec = MlpSpec::siren(&[2, 5, 5, 5, 1]).unwrap();
        let mut rng = seed::rng(8);
        for t in 0..20 {
            let (a, b) = (random_net(&spec, t), random_net(&spec, 30 + t));
            let p = random_permutation(&spec, rng.random());
            let layer = rng.random_range(0..3);
            let s = score_matrix(&a, &b, &p, layer).unwrap();
            let q1 = random_permutation(&spec, rng.random()).perms()[layer].clone();
            let q2 = random_permutation(&spec, rng.random()).perms()[layer].clone();
            let d = |q: &Permutation| l2_distance(&a, &apply_permutation(&b, &p.with_layer(layer, q.clone())).unwrap()).unwrap();
            let sc = |q: &Permutation| assignment_value(&s, &q.inverse());
            let (d1, d2, s1, s2) = (d(&q1), d(&q2), sc(&q1), sc(&q2));
            if (d1 - d2).abs() > 1e-9 {
                assert_eq!(d1 < d2, s1 > s2, "trial {t}");
            }
        }
    }

    #[test]
    fn total_score_ranks_like_distance_single_hidden_layer() {
        let spec = MlpSpec::siren(&[3, 6, 2]).unwrap();
        let mut rng = seed::rng(9);
        for t in 0..20 {
            let (a, b) = (random_net(&spec, t), random_net(&spec, 40 + t));
            let id = PermutationSequence::identity(&spec);
            let s = score_matrix(&a, &b, &id, 0).unwrap();
            let p1 = random_permutation(&spec, rng.random());
            let p2 = random_permutation(&spec, rng.random());
            let d = |p: &PermutationSequence| l2_distance(&a, &apply_permutation(&b, p).unwrap()).unwrap();
            let sc = |p: &PermutationSequence| assignment_value(&s, &p.perms()[0].inverse());
            if (d(&p1) - d(&p2)).abs() > 1e-9 {
                assert_eq!(d(&p1) < d(&p2), sc(&p1) > sc(&p2));
            }
        }
    }

    #[test]
    fn rejects_mismatched_pairs() {
        let a = random_net(&MlpSpec::siren(&[2, 4, 1]).unwrap(), 0);
        let b = random_net(&MlpSpec::siren(&[2, 5, 1]).unwrap(), 0);
        assert!(weight_matching(&a, &b, 10, 0).is_err());
        assert!(weight_matching(&a, &a, 0, 0).is_err());
    }
}
