//! Run configuration: flags overlay a config file, which overlays defaults.
//! The resolved configuration is written next to every run's outputs and
//! can be passed back with `--config` to reproduce it.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use loctag::experiment::ExperimentConfig;
use loctag::{BlockOrder, HoldoutScheme, Hyperparams, InitMode, MapVariant, SolverOptions, StepMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Parses a mode name the way it appears in config files, e.g. `closed-form`.
fn mode<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Resolved-config JSON from an earlier run; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature CSV, one image per row.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Tag file: an `m=<count>` header, then `image,tag,+1|-1` rows.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Fraction of observed tags held out for evaluation [default: 0.4].
    #[arg(long)]
    pub holdout_frac: Option<f64>,
    /// global or per-row.
    #[arg(long, value_parser = mode::<HoldoutScheme>)]
    pub holdout_scheme: Option<HoldoutScheme>,
    /// Seed for every random choice [default: 42].
    #[arg(long)]
    pub seed: Option<u64>,
    /// zeros, observed or ridge-warm.
    #[arg(long, value_parser = mode::<InitMode>)]
    pub init: Option<InitMode>,
    /// fixed-eta, backtracking or closed-form.
    #[arg(long, value_parser = mode::<StepMode>)]
    pub step: Option<StepMode>,
    /// jacobi or gauss-seidel.
    #[arg(long, value_parser = mode::<BlockOrder>)]
    pub order: Option<BlockOrder>,
    /// Count each image among its own neighbors.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub include_self: Option<bool>,
    /// Scale features to zero mean and unit variance per column.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub standardize: Option<bool>,
    /// macro or micro.
    #[arg(long, value_parser = mode::<MapVariant>)]
    pub map_variant: Option<MapVariant>,
    /// Worker threads; 0 uses every available core [default: 0].
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Every setting of a run, with defaults made explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub features: PathBuf,
    pub tags: PathBuf,
    pub out: PathBuf,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: usize,
    pub eta: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub holdout_frac: f64,
    pub holdout_scheme: HoldoutScheme,
    pub seed: u64,
    pub init: InitMode,
    pub step: StepMode,
    pub order: BlockOrder,
    pub include_self: bool,
    pub standardize: bool,
    pub map_variant: MapVariant,
    pub threads: usize,
}

/// Thread count with 0 or unset meaning all available cores.
pub fn resolve_threads(requested: Option<usize>) -> usize {
    match requested {
        Some(t) if t > 0 => t,
        _ => std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// The config-file layer: any subset of the fields.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct PartialConfig {
    features: Option<PathBuf>,
    tags: Option<PathBuf>,
    out: Option<PathBuf>,
    alpha: Option<f64>,
    beta: Option<f64>,
    kappa: Option<usize>,
    eta: Option<f64>,
    tol: Option<f64>,
    max_iters: Option<usize>,
    holdout_frac: Option<f64>,
    holdout_scheme: Option<HoldoutScheme>,
    seed: Option<u64>,
    init: Option<InitMode>,
    step: Option<StepMode>,
    order: Option<BlockOrder>,
    include_self: Option<bool>,
    standardize: Option<bool>,
    map_variant: Option<MapVariant>,
    threads: Option<usize>,
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => PartialConfig::default(),
        };
        let d = ExperimentConfig::default();
        let required = |flag: &Option<PathBuf>, file: Option<PathBuf>, name: &str| {
            flag.clone()
                .or(file)
                .ok_or_else(|| anyhow!(loctag::Error::InvalidInput(format!("--{name} is required"))))
        };
        let cfg = RunConfig {
            features: required(&args.features, file.features, "features")?,
            tags: required(&args.tags, file.tags, "tags")?,
            out: required(&args.out, file.out, "out")?,
            alpha: args.alpha.or(file.alpha).unwrap_or(d.hp.alpha),
            beta: args.beta.or(file.beta).unwrap_or(d.hp.beta),
            kappa: args.kappa.or(file.kappa).unwrap_or(d.kappa),
            eta: args.eta.or(file.eta).unwrap_or(d.hp.eta),
            tol: args.tol.or(file.tol).unwrap_or(d.hp.tol),
            max_iters: args.max_iters.or(file.max_iters).unwrap_or(d.hp.max_iters),
            holdout_frac: args.holdout_frac.or(file.holdout_frac).unwrap_or(d.holdout_fraction),
            holdout_scheme: args.holdout_scheme.or(file.holdout_scheme).unwrap_or(d.holdout_scheme),
            seed: args.seed.or(file.seed).unwrap_or(d.seed),
            init: args.init.or(file.init).unwrap_or(d.solver.init),
            step: args.step.or(file.step).unwrap_or(d.solver.step),
            order: args.order.or(file.order).unwrap_or(d.solver.order),
            include_self: args.include_self.or(file.include_self).unwrap_or(d.include_self),
            standardize: args.standardize.or(file.standardize).unwrap_or(d.standardize),
            map_variant: args.map_variant.or(file.map_variant).unwrap_or(d.map_variant),
            threads: resolve_threads(args.threads.or(file.threads)),
        };
        cfg.experiment().validate()?;
        Ok(cfg)
    }

    /// Reads a resolved config as written by [`RunConfig::to_json`].
    pub fn read(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| loctag::Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            hp: Hyperparams {
                alpha: self.alpha,
                beta: self.beta,
                eta: self.eta,
                max_iters: self.max_iters,
                tol: self.tol,
            },
            kappa: self.kappa,
            include_self: self.include_self,
            standardize: self.standardize,
            holdout_fraction: self.holdout_frac,
            holdout_scheme: self.holdout_scheme,
            seed: self.seed,
            solver: SolverOptions {
                init: self.init,
                step: self.step,
                order: self.order,
            },
            map_variant: self.map_variant,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_args() -> RunArgs {
        RunArgs {
            features: Some("f.csv".into()),
            tags: Some("t.csv".into()),
            out: Some("out".into()),
            threads: Some(1),
            ..RunArgs::default()
        }
    }

    #[test]
    fn defaults_are_filled_in() {
        let cfg = RunConfig::resolve(&base_args()).unwrap();
        assert_eq!(cfg.experiment(), ExperimentConfig::default());
        assert_eq!(cfg.threads, 1);
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"alpha": 3.0, "beta": 0.5, "step": "closed-form"}"#).unwrap();
        let args = RunArgs {
            config: Some(path),
            alpha: Some(7.0),
            ..base_args()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.alpha, 7.0);
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.step, StepMode::ClosedForm);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::resolve(&base_args()).unwrap();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_values_are_rejected() {
        let args = RunArgs {
            holdout_frac: Some(1.0),
            ..base_args()
        };
        assert!(RunConfig::resolve(&args).is_err());
        assert!(mode::<StepMode>("sideways").is_err());
        assert_eq!(mode::<StepMode>("fixed-eta").unwrap(), StepMode::FixedEta);
    }
}
