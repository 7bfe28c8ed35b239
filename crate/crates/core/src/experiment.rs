//! The holdout → solve → evaluate pipeline shared by sweeps and the CLI.

use serde::{Deserialize, Serialize};

use crate::dataset::{apply_holdout_with, FeatureMatrix, HoldoutScheme, HoldoutSplit, TagObservations};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, MapVariant};
use crate::model::{Hyperparams, ModelState, Problem};
use crate::neighborhood::{build_knn, NeighborhoodGraph};
use crate::optimizer::{run_alternating, IterationTrace, SolverOptions};

pub const DEFAULT_KAPPA: usize = 5;
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.4;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hp: Hyperparams,
    pub kappa: usize,
    pub include_self: bool,
    pub standardize: bool,
    pub holdout_fraction: f64,
    pub holdout_scheme: HoldoutScheme,
    pub seed: u64,
    pub solver: SolverOptions,
    pub map_variant: MapVariant,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            hp: Hyperparams::default(),
            kappa: DEFAULT_KAPPA,
            include_self: false,
            standardize: false,
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
            holdout_scheme: HoldoutScheme::Global,
            seed: DEFAULT_SEED,
            solver: SolverOptions::default(),
            map_variant: MapVariant::Macro,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.kappa == 0 {
            return Err(Error::InvalidInput("kappa must be at least 1".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "holdout fraction {} must lie in (0, 1)",
                self.holdout_fraction
            )));
        }
        Ok(())
    }

    /// Features as the solver sees them.
    pub fn prepare_features(&self, features: &FeatureMatrix) -> FeatureMatrix {
        if self.standardize {
            features.standardized()
        } else {
            features.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub graph: NeighborhoodGraph,
    pub state: ModelState,
    pub trace: IterationTrace,
}

/// Builds the graph and solves on the given observations.
pub fn complete(features: &FeatureMatrix, tags: &TagObservations, cfg: &ExperimentConfig) -> Result<Completion> {
    cfg.hp.validate()?;
    let features = cfg.prepare_features(features);
    let graph = build_knn(&features, cfg.kappa, cfg.include_self)?;
    let problem = Problem::new(&features, tags, &graph)?;
    let (state, trace) = run_alternating(&problem, &cfg.hp, cfg.solver)?;
    Ok(Completion { graph, state, trace })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub split: HoldoutSplit,
    /// Observations with the held-out entries removed, as given to the solver.
    pub masked: TagObservations,
    pub completion: Completion,
    pub report: EvalReport,
}

/// Holds out part of `tags`, completes the rest, and scores the recovery.
pub fn run_experiment(
    features: &FeatureMatrix,
    tags: &TagObservations,
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (masked, split) = apply_holdout_with(tags, cfg.holdout_fraction, cfg.seed, cfg.holdout_scheme)?;
    let completion = complete(features, &masked, cfg)?;
    let report = evaluate(&completion.state.scores, &split, tags, cfg.map_variant)?;
    Ok(ExperimentOutcome {
        split,
        masked,
        completion,
        report,
    })
}
