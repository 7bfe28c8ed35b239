//! Exact κ-nearest-neighbor graph with a reverse index.
//!
//! `forward[i]` lists the κ images closest to image `i` in Euclidean
//! distance, nearest first; `reverse[i]` lists, in ascending order, every
//! image `k` whose forward list contains `i`. The score gradient for image
//! `i` sums over `reverse[i]`, the predictor gradient for image `i` over
//! `forward[i]`.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView1;
use rayon::prelude::*;

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodGraph {
    kappa: usize,
    include_self: bool,
    forward: Vec<Vec<usize>>,
    /// Squared distances parallel to `forward`.
    distances: Vec<Vec<f64>>,
    reverse: Vec<Vec<usize>>,
}

/// Squared Euclidean distance. Symmetric bit-for-bit since `(a - b)^2 == (b - a)^2`.
pub fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Orders candidates by distance, then by index.
fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Builds the exact κ-NN graph by a brute-force scan over all pairs.
///
/// Rows are processed in parallel on the current rayon pool; each row's
/// selection is independent, so the result does not depend on the thread
/// count.
pub fn build_knn(features: &FeatureMatrix, kappa: usize, include_self: bool) -> Result<NeighborhoodGraph> {
    let n = features.n();
    if kappa == 0 {
        return Err(Error::InvalidInput("kappa must be at least 1".into()));
    }
    let available = if include_self { n } else { n - 1 };
    if kappa > available {
        return Err(Error::InvalidInput(format!(
            "kappa = {kappa} too large for n = {n} (at most {available} neighbors{})",
            if include_self { "" } else { " with self excluded" }
        )));
    }

    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            let mut candidates: Vec<(f64, usize)> = (0..n)
                .filter(|&j| include_self || j != i)
                .map(|j| (squared_distance(xi, features.row(j)), j))
                .collect();
            if kappa < candidates.len() {
                candidates.select_nth_unstable_by(kappa - 1, by_distance_then_index);
                candidates.truncate(kappa);
            }
            candidates.sort_unstable_by(by_distance_then_index);
            candidates.into_iter().map(|(d, j)| (j, d)).unzip()
        })
        .collect();

    let (forward, distances): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(NeighborhoodGraph::assemble(kappa, include_self, forward, distances))
}

impl NeighborhoodGraph {
    fn assemble(kappa: usize, include_self: bool, forward: Vec<Vec<usize>>, distances: Vec<Vec<f64>>) -> Self {
        let mut reverse = vec![Vec::new(); forward.len()];
        for (k, list) in forward.iter().enumerate() {
            for &j in list {
                reverse[j].push(k);
            }
        }
        NeighborhoodGraph {
            kappa,
            include_self,
            forward,
            distances,
            reverse,
        }
    }

    /// Builds a graph from explicit forward lists, e.g. for hand-made test
    /// problems. Lists may be shorter than κ (including empty), but must not
    /// contain duplicates or out-of-range indices.
    pub fn from_forward(forward: Vec<Vec<usize>>) -> Result<Self> {
        let n = forward.len();
        for (i, list) in forward.iter().enumerate() {
            for (r, &j) in list.iter().enumerate() {
                if j >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "neighbor list",
                        index: j,
                        len: n,
                    });
                }
                if list[..r].contains(&j) {
                    return Err(Error::InvalidInput(format!(
                        "duplicate neighbor {j} in list of image {i}"
                    )));
                }
            }
        }
        let kappa = forward.iter().map(Vec::len).max().unwrap_or(0);
        let include_self = forward.iter().enumerate().any(|(i, l)| l.contains(&i));
        let distances = forward.iter().map(|l| vec![f64::NAN; l.len()]).collect();
        Ok(Self::assemble(kappa, include_self, forward, distances))
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn include_self(&self) -> bool {
        self.include_self
    }

    pub fn n(&self) -> usize {
        self.forward.len()
    }

    pub fn forward(&self, i: usize) -> &[usize] {
        &self.forward[i]
    }

    pub fn reverse(&self, i: usize) -> &[usize] {
        &self.reverse[i]
    }

    /// Squared distances matching `forward(i)`; NaN for graphs built with
    /// [`NeighborhoodGraph::from_forward`].
    pub fn squared_distances(&self, i: usize) -> &[f64] {
        &self.distances[i]
    }

    pub fn forward_lists(&self) -> &[Vec<usize>] {
        &self.forward
    }

    pub fn reverse_lists(&self) -> &[Vec<usize>] {
        &self.reverse
    }

    /// Total edge count, equal to Σ|forward[i]| and Σ|reverse[i]|.
    pub fn edge_count(&self) -> usize {
        self.forward.iter().map(Vec::len).sum()
    }

    /// Renders the graph as CSV rows `i,rank,j,distance`, rank starting at 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,rank,j,distance\n");
        for (i, (list, dists)) in self.forward.iter().zip(&self.distances).enumerate() {
            for (rank, (&j, &d2)) in list.iter().zip(dists).enumerate() {
                let _ = writeln!(out, "{i},{rank},{j},{}", d2.sqrt());
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
