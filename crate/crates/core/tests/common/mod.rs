//! Independent reference implementations and random instance generators
//! shared by the integration tests. Everything here is written as plain
//! loops so it can be checked against the production code.

#![allow(dead_code)]

use loctag::dataset::{apply_holdout, FeatureMatrix, HoldoutSplit, TagObservations};
use loctag::model::{Hyperparams, LocalPredictors, ModelState, Problem, ScoreMatrix};
use loctag::neighborhood::{build_knn, NeighborhoodGraph};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small random problem together with a random state.
pub struct Instance {
    pub features: FeatureMatrix,
    pub tags: TagObservations,
    pub graph: NeighborhoodGraph,
    pub state: ModelState,
    pub hp: Hyperparams,
}

impl Instance {
    pub fn problem(&self) -> Problem<'_> {
        Problem::new(&self.features, &self.tags, &self.graph).unwrap()
    }
}

/// Random instance with `2 ≤ n ≤ max_n`, `1 ≤ d, m ≤ max_dm`, a random
/// observation mask, a κ-NN graph and a random state.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_dm: usize) -> Instance {
    let n = rng.gen_range(2..=max_n);
    let d = rng.gen_range(1..=max_dm);
    let m = rng.gen_range(1..=max_dm);
    let features = FeatureMatrix::new(Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))).unwrap();
    let signs = Array2::from_shape_fn((n, m), |_| if rng.gen_bool(0.5) { 1i8 } else { -1 });
    let p_obs = rng.gen_range(0.2..1.0);
    let mask = Array2::from_shape_fn((n, m), |_| rng.gen_bool(p_obs));
    let tags = TagObservations::new(signs, mask).unwrap();
    let include_self = rng.gen_bool(0.3);
    let max_kappa = if include_self { n } else { n - 1 };
    let kappa = rng.gen_range(1..=max_kappa.min(4));
    let graph = build_knn(&features, kappa, include_self).unwrap();
    let state = ModelState {
        scores: ScoreMatrix::new(Array2::from_shape_fn((n, m), |_| rng.sample::<f64, _>(StandardNormal))).unwrap(),
        predictors: LocalPredictors::new(Array3::from_shape_fn((n, m, d), |_| {
            0.5 * rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap(),
    };
    let hp = Hyperparams {
        alpha: rng.gen_range(0.1..2.0),
        beta: rng.gen_range(0.1..2.0),
        ..Hyperparams::default()
    };
    Instance {
        features,
        tags,
        graph,
        state,
        hp,
    }
}

/// The objective as three nested scalar loops, returned as its unweighted
/// (prediction, ‖W‖², masked fidelity) sums.
pub fn scalar_objective_sums(inst: &Instance) -> (f64, f64, f64) {
    let (n, m, d) = (inst.features.n(), inst.tags.m(), inst.features.d());
    let x = inst.features.values();
    let t = inst.state.scores.values();
    let w = inst.state.predictors.values();
    let (mut pred, mut norm, mut fid) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for &j in inst.graph.forward(i) {
            for r in 0..m {
                let mut wx = 0.0;
                for c in 0..d {
                    wx += w[[i, r, c]] * x[[j, c]];
                }
                pred += (t[[j, r]] - wx).powi(2);
            }
        }
        for r in 0..m {
            for c in 0..d {
                norm += w[[i, r, c]].powi(2);
            }
            if inst.tags.is_observed(i, r) {
                fid += (t[[i, r]] - inst.tags.sign(i, r)).powi(2);
            }
        }
    }
    (pred, norm, fid)
}

pub fn scalar_objective(inst: &Instance) -> f64 {
    let (p, w, f) = scalar_objective_sums(inst);
    p + inst.hp.alpha * w + inst.hp.beta * f
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Exact κ-NN by sorting every candidate, ties to the smaller index.
pub fn brute_knn(features: &FeatureMatrix, kappa: usize, include_self: bool) -> Vec<Vec<usize>> {
    let n = features.n();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| include_self || j != i)
                .map(|j| {
                    let mut s = 0.0;
                    for (a, b) in features.row(i).iter().zip(features.row(j).iter()) {
                        s += (a - b) * (a - b);
                    }
                    (s, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(kappa).map(|(_, j)| j).collect()
        })
        .collect()
}

/// True when `(score_a, key_a)` ranks strictly before `(score_b, key_b)`.
fn before<K: Ord>(a: (f64, K), b: (f64, K)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// AP of a list of `(score, key, positive)` from pairwise rank counts.
/// `None` when there are no positives.
pub fn brute_ap<K: Ord + Copy>(items: &[(f64, K, bool)]) -> Option<f64> {
    let rank = |e: &(f64, K, bool)| 1 + items.iter().filter(|o| before((o.0, o.1), (e.0, e.1))).count();
    let mut per_positive: Vec<(usize, f64)> = items
        .iter()
        .filter(|e| e.2)
        .map(|e| {
            let r = rank(e);
            let hits = items.iter().filter(|o| o.2 && rank(o) <= r).count();
            (r, hits as f64 / r as f64)
        })
        .collect();
    if per_positive.is_empty() {
        return None;
    }
    per_positive.sort_by_key(|p| p.0);
    let sum: f64 = per_positive.iter().map(|p| p.1).sum();
    Some(sum / per_positive.len() as f64)
}

/// Macro MAP over held-out entries: per-image AP with ties to the smaller
/// tag, averaged over images that have a held-out positive.
pub fn brute_macro_map(
    scores: &ScoreMatrix,
    split: &HoldoutSplit,
    original: &TagObservations,
) -> Option<(f64, Vec<f64>)> {
    let (n, m) = (scores.n(), scores.m());
    let mut aps = Vec::new();
    for i in 0..n {
        let items: Vec<(f64, usize, bool)> = (0..m)
            .filter(|&j| split.holdout_mask[[i, j]])
            .map(|j| (scores.values()[[i, j]], j, original.sign(i, j) > 0.0))
            .collect();
        if let Some(ap) = brute_ap(&items) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        return None;
    }
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    Some((map, aps))
}

/// Micro MAP: one ranking of every held-out entry, ties in row-major order.
pub fn brute_micro_map(scores: &ScoreMatrix, split: &HoldoutSplit, original: &TagObservations) -> Option<f64> {
    let items: Vec<(f64, (usize, usize), bool)> = split
        .entries()
        .into_iter()
        .map(|(i, j)| (scores.values()[[i, j]], (i, j), original.sign(i, j) > 0.0))
        .collect();
    brute_ap(&items)
}

/// `(threshold, precision, recall)` for every distinct score, descending,
/// counting entries scoring at or above the threshold.
pub fn brute_pr(entries: &[(f64, bool)]) -> Vec<(f64, f64, f64)> {
    let mut thresholds: Vec<f64> = entries.iter().map(|e| e.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let total_pos = entries.iter().filter(|e| e.1).count();
    thresholds
        .into_iter()
        .map(|s| {
            let above: Vec<_> = entries.iter().filter(|e| e.0 >= s).collect();
            let tp = above.iter().filter(|e| e.1).count();
            let recall = if total_pos == 0 {
                0.0
            } else {
                tp as f64 / total_pos as f64
            };
            (s, tp as f64 / above.len() as f64, recall)
        })
        .collect()
}

/// Random fully observed tags with a holdout split and random scores.
/// With `levels > 0` scores are drawn from that many distinct values, which
/// makes ties common; `levels == 1` makes every score equal.
pub fn random_metric_instance(rng: &mut ChaCha8Rng, levels: usize) -> (ScoreMatrix, HoldoutSplit, TagObservations) {
    let n = rng.gen_range(1..=12);
    let m = rng.gen_range(2..=10);
    let p_pos = rng.gen_range(0.1..0.9);
    let signs = Array2::from_shape_fn((n, m), |_| if rng.gen_bool(p_pos) { 1i8 } else { -1 });
    let original = TagObservations::fully_observed(signs).unwrap();
    let fraction = rng.gen_range(0.2..0.9);
    let seed = rng.gen();
    let (_, split) = apply_holdout(&original, fraction, seed).unwrap();
    let scores = Array2::from_shape_fn((n, m), |_| {
        if levels > 0 {
            rng.gen_range(0..levels) as f64 * 0.5
        } else {
            rng.sample::<f64, _>(StandardNormal)
        }
    });
    (ScoreMatrix::new(scores).unwrap(), split, original)
}
