//! Image tag completion by local linear learning.
//!
//! Every image `i` gets a real tag-score vector `t_i` and every image
//! neighborhood a linear predictor `W_i` mapping features to scores. Both
//! are learned jointly by alternating minimization of
//!
//! ```text
//! Σ_i [ Σ_{j ∈ N_i} ‖t_j − W_i x_j‖² + α ‖W_i‖_F² + β Σ_j v_ij (t_ij − t̂_ij)² ]
//! ```
//!
//! where `N_i` are the κ nearest neighbors of image `i`, `t̂` the known ±1
//! tags and `v` their observation mask. Missing tags are read off the
//! learned scores.
//!
//! ```
//! use loctag::dataset::{synthesize, SynthParams};
//! use loctag::experiment::{run_experiment, ExperimentConfig};
//!
//! let data = synthesize(SynthParams { n: 60, d: 4, m: 5, kappa: 3, noise: 0.1, seed: 1 }).unwrap();
//! let cfg = ExperimentConfig { kappa: 3, ..Default::default() };
//! let outcome = run_experiment(&data.features, &data.tags, &cfg).unwrap();
//! assert!(outcome.report.map > 0.5);
//! ```

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod neighborhood;
pub mod optimizer;

pub use dataset::{FeatureMatrix, HoldoutScheme, HoldoutSplit, TagObservations};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, MapVariant, SweepParam};
pub use experiment::ExperimentConfig;
pub use model::{Hyperparams, LocalPredictors, ModelState, ObjectiveTerms, Problem, ScoreMatrix};
pub use neighborhood::NeighborhoodGraph;
pub use optimizer::{BlockOrder, InitMode, IterationTrace, SolverOptions, StepMode};
