//! Shared fixtures for the solver benchmarks.

use loctag::dataset::{synthesize, SynthParams, SyntheticData};
use loctag::neighborhood::{build_knn, NeighborhoodGraph};

/// A planted instance and its κ-NN graph.
pub fn fixture(n: usize, d: usize, m: usize, kappa: usize) -> (SyntheticData, NeighborhoodGraph) {
    let data = synthesize(SynthParams {
        n,
        d,
        m,
        kappa,
        noise: 0.1,
        seed: 42,
    })
    .expect("valid fixture parameters");
    let graph = build_knn(&data.features, kappa, false).expect("n > kappa");
    (data, graph)
}
