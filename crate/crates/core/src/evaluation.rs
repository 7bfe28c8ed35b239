//! Held-out recovery metrics: per-image average precision, MAP, a pooled
//! precision-recall curve, and parameter sweeps.
//!
//! Only entries that were observed and then held out have ground truth.
//! Positives are held-out entries whose original sign is +1, negatives
//! those with −1. Rankings sort by descending score with ties going to the
//! smaller tag (or image, tag) index, so every metric is deterministic even
//! when scores tie.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, HoldoutSplit, TagObservations};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentConfig};
use crate::model::ScoreMatrix;
use crate::neighborhood::NeighborhoodGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedTag {
    pub tag: usize,
    pub score: f64,
    pub positive: bool,
}

fn descending_score(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

fn check_shapes(scores: &ScoreMatrix, split: &HoldoutSplit, original: &TagObservations) -> Result<()> {
    let s = (scores.n(), scores.m());
    if s != split.holdout_mask.dim() || s != (original.n(), original.m()) {
        return Err(Error::Shape(format!(
            "scores {:?}, holdout {:?}, observations {:?}",
            s,
            split.holdout_mask.dim(),
            (original.n(), original.m())
        )));
    }
    Ok(())
}

fn truth(original: &TagObservations, i: usize, j: usize) -> Result<bool> {
    if !original.is_observed(i, j) {
        return Err(Error::InvalidInput(format!(
            "held-out entry ({i}, {j}) has no ground truth in the original observations"
        )));
    }
    Ok(original.sign(i, j) > 0.0)
}

/// Held-out tags of image `i`, best score first.
pub fn rank_heldout(
    scores: &ScoreMatrix,
    split: &HoldoutSplit,
    original: &TagObservations,
    i: usize,
) -> Result<Vec<RankedTag>> {
    check_shapes(scores, split, original)?;
    if i >= scores.n() {
        return Err(Error::IndexOutOfRange {
            what: "images",
            index: i,
            len: scores.n(),
        });
    }
    let tags = split.row_entries(i);
    if tags.is_empty() {
        return Err(Error::NothingHeldOut(format!("image {i}")));
    }
    let mut ranked = tags
        .into_iter()
        .map(|j| {
            Ok(RankedTag {
                tag: j,
                score: scores.values()[[i, j]],
                positive: truth(original, i, j)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| descending_score(a.score, b.score).then(a.tag.cmp(&b.tag)));
    Ok(ranked)
}

/// `(1/P) Σ_{k: item k positive} (positives in top k) / k` over a ranked
/// relevance list.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &positive) in relevance.iter().enumerate() {
        if positive {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoPositives);
    }
    Ok(sum / hits as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Pooled precision-recall curve: one point per distinct score, predicting
/// positive every entry scoring at or above it. Thresholds descend, so
/// recall is non-decreasing along the curve.
pub fn pr_curve(entries: &[(f64, bool)]) -> Vec<PrPoint> {
    let total_pos = entries.iter().filter(|e| e.1).count();
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| descending_score(a.0, b.0));
    let mut points = Vec::new();
    let (mut tp, mut count) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let threshold = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == threshold {
            tp += usize::from(sorted[k].1);
            count += 1;
            k += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / count as f64,
            recall: if total_pos == 0 {
                0.0
            } else {
                tp as f64 / total_pos as f64
            },
        });
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapVariant {
    /// Mean over images of per-image AP.
    #[default]
    Macro,
    /// AP of one ranking pooled over every held-out entry.
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    /// Images with at least one held-out positive.
    pub images: usize,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub variant: MapVariant,
    pub counts: EvalCounts,
    /// Images contributing to `per_image_ap`, ascending.
    pub images: Vec<usize>,
    pub per_image_ap: Vec<f64>,
    #[serde(skip)]
    pub pr_points: Vec<PrPoint>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV with header `threshold,precision,recall`.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.pr_points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        out
    }

    pub fn write(&self, json_path: &Path, pr_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()).map_err(|e| Error::io(json_path, e))?;
        std::fs::write(pr_path, self.pr_csv()).map_err(|e| Error::io(pr_path, e))
    }
}

/// Macro MAP over held-out entries with a pooled PR curve.
pub fn mean_average_precision(
    scores: &ScoreMatrix,
    split: &HoldoutSplit,
    original: &TagObservations,
) -> Result<EvalReport> {
    evaluate(scores, split, original, MapVariant::Macro)
}

pub fn evaluate(
    scores: &ScoreMatrix,
    split: &HoldoutSplit,
    original: &TagObservations,
    variant: MapVariant,
) -> Result<EvalReport> {
    check_shapes(scores, split, original)?;
    if split.is_empty() {
        return Err(Error::NothingHeldOut("the holdout split".into()));
    }

    let mut images = Vec::new();
    let mut per_image_ap = Vec::new();
    let mut pooled = Vec::new();
    let mut counts = EvalCounts {
        images: 0,
        positives: 0,
        negatives: 0,
    };
    for i in 0..scores.n() {
        if split.row_entries(i).is_empty() {
            continue;
        }
        let ranked = rank_heldout(scores, split, original, i)?;
        let relevance: Vec<bool> = ranked.iter().map(|r| r.positive).collect();
        let positives = relevance.iter().filter(|&&p| p).count();
        counts.positives += positives;
        counts.negatives += relevance.len() - positives;
        if positives > 0 {
            images.push(i);
            per_image_ap.push(average_precision(&relevance)?);
        }
    }
    counts.images = images.len();
    if images.is_empty() {
        return Err(Error::NoPositives);
    }

    for (i, j) in split.entries() {
        pooled.push((scores.values()[[i, j]], truth(original, i, j)?));
    }
    let map = match variant {
        MapVariant::Macro => per_image_ap.iter().sum::<f64>() / per_image_ap.len() as f64,
        MapVariant::Micro => {
            // entries() is row-major, and a stable sort keeps that order within ties
            let mut ranked = pooled.clone();
            ranked.sort_by(|a, b| descending_score(a.0, b.0));
            average_precision(&ranked.iter().map(|e| e.1).collect::<Vec<_>>())?
        }
    };

    Ok(EvalReport {
        map,
        variant,
        counts,
        images,
        per_image_ap,
        pr_points: pr_curve(&pooled),
    })
}

/// Baseline scores: the mean observed sign over each image's neighbors,
/// per tag, 0 where no neighbor observes the tag.
pub fn neighbor_mean_scores(graph: &NeighborhoodGraph, observed: &TagObservations) -> ScoreMatrix {
    let (n, m) = (observed.n(), observed.m());
    let mut out = ndarray::Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let (mut sum, mut count) = (0.0, 0usize);
            for &k in graph.forward(i) {
                if observed.is_observed(k, j) {
                    sum += observed.sign(k, j);
                    count += 1;
                }
            }
            if count > 0 {
                out[[i, j]] = sum / count as f64;
            }
        }
    }
    ScoreMatrix::new(out).expect("means of ±1 are finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Alpha,
    Beta,
    Kappa,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "beta" => Ok(SweepParam::Beta),
            "kappa" => Ok(SweepParam::Kappa),
            other => Err(Error::InvalidInput(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub map: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,map\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.value, r.map);
    }
    out
}

/// Re-runs holdout, solve and evaluation for each value of one parameter,
/// everything else (seed included) held at `base`. Rows follow `values`.
pub fn sweep(
    features: &FeatureMatrix,
    tags: &TagObservations,
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let annotate = |source: Error| Error::Sweep {
                value,
                source: Box::new(source),
            };
            let mut cfg = base.clone();
            match param {
                SweepParam::Alpha => cfg.hp.alpha = value,
                SweepParam::Beta => cfg.hp.beta = value,
                SweepParam::Kappa => {
                    if !(value >= 1.0 && value.fract() == 0.0) {
                        return Err(annotate(Error::InvalidInput("kappa must be a positive integer".into())));
                    }
                    cfg.kappa = value as usize;
                }
            }
            let outcome = run_experiment(features, tags, &cfg).map_err(annotate)?;
            Ok(SweepRow {
                value,
                map: outcome.report.map,
            })
        })
        .collect()
}
