//! Alternating minimization: a sweep over all score vectors t_i, then a
//! sweep over all predictors W_i, repeated until the objective settles.
//!
//! Three step rules are available. `FixedEta` is plain gradient descent
//! with the configured step and fails loudly on divergence. `Backtracking`
//! halves a per-block step until the sweep does not increase the objective.
//! `ClosedForm` replaces each block by its exact minimizer.
//!
//! The gradient with respect to t_i involves only t_i and the predictors,
//! and the gradient with respect to W_i involves only W_i and the scores.
//! Each block therefore splits into independent per-image problems and
//! updating in place is the same as updating from the sweep-start state.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    grad_predictor_unchecked, grad_scores_unchecked, objective_terms, predictor_gradient, reverse_prediction_sum,
    Hyperparams, LocalPredictors, ModelState, ObjectiveTerms, Problem, ScoreMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// t = 0, W = 0.
    Zeros,
    /// t_i = v_i ⊙ t̂_i, W = 0.
    #[default]
    Observed,
    /// As `Observed`, then each W_i set to its ridge minimizer.
    RidgeWarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    FixedEta,
    #[default]
    Backtracking,
    ClosedForm,
}

/// Within-block update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockOrder {
    /// Every image updated from the sweep-start state; runs in parallel.
    #[default]
    Jacobi,
    /// Images updated one by one in ascending order, each seeing the
    /// previous updates.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolverOptions {
    pub init: InitMode,
    pub step: StepMode,
    pub order: BlockOrder,
}

/// Halvings tried per backtracking sweep before giving up on the sweep.
pub const MAX_HALVINGS: usize = 30;
/// Fixed-step runs abort once the objective exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    pub objective: f64,
    pub terms: ObjectiveTerms,
    /// Largest absolute change of any t or W entry during the iteration.
    pub max_delta: f64,
    /// Wall time since the run started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationTrace {
    pub initial_objective: f64,
    pub initial_terms: ObjectiveTerms,
    pub records: Vec<IterationRecord>,
    /// Whether the relative-change criterion stopped the run (as opposed to `max_iters`).
    pub converged: bool,
}

impl IterationTrace {
    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.objective)
    }

    /// Objective values starting with the initial one.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.records.iter().map(|r| r.objective))
            .collect()
    }

    /// CSV with header `iter,objective,term1,term2,term3,max_delta,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,term1,term2,term3,max_delta,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration,
                r.objective,
                r.terms.prediction,
                r.terms.complexity,
                r.terms.fidelity,
                r.max_delta,
                r.seconds
            ));
        }
        out
    }
}

pub fn init_state(problem: &Problem<'_>, hp: &Hyperparams, mode: InitMode) -> Result<ModelState> {
    let (n, m, d) = (problem.n(), problem.m(), problem.d());
    let mut state = ModelState::zeros(n, m, d);
    if mode == InitMode::Zeros {
        return Ok(state);
    }
    let tags = problem.tags;
    Zip::indexed(state.scores.values_mut()).for_each(|(i, j), t| {
        if tags.is_observed(i, j) {
            *t = tags.sign(i, j);
        }
    });
    if mode == InitMode::RidgeWarm {
        closed_form_predictor_sweep(&mut state, problem, hp)?;
    }
    Ok(state)
}

/// Exact minimizer of the objective in t_i with everything else fixed:
/// `t_ij = (Σ_{k ∈ R_i} (W_k x_i)_j + β v_ij t̂_ij) / (|R_i| + β v_ij)`.
/// Coordinates with a zero denominator do not enter the objective and keep
/// their current value.
pub fn closed_form_scores(
    state: &ModelState,
    problem: &Problem<'_>,
    hp: &Hyperparams,
    i: usize,
) -> Result<Array1<f64>> {
    problem.check_state(state)?;
    problem.check_index(i)?;
    Ok(closed_form_scores_unchecked(state, problem, hp, i))
}

fn closed_form_scores_unchecked(state: &ModelState, problem: &Problem<'_>, hp: &Hyperparams, i: usize) -> Array1<f64> {
    let c = problem.graph.reverse(i).len() as f64;
    let mut t = reverse_prediction_sum(state, problem, i);
    let current = state.scores.row(i);
    for (j, tj) in t.iter_mut().enumerate() {
        let (num, den) = if problem.tags.is_observed(i, j) {
            (*tj + hp.beta * problem.tags.sign(i, j), c + hp.beta)
        } else {
            (*tj, c)
        };
        *tj = if den > 0.0 { num / den } else { current[j] };
    }
    t
}

/// Ridge minimizer of the objective in W_i with the scores fixed,
/// `W_i = T_i X_iᵀ (X_i X_iᵀ + αI)⁻¹` with neighbor features `X_i` and
/// scores `T_i` as columns.
///
/// For α > 0 and fewer neighbors than feature dimensions the equivalent
/// `κ × κ` system is solved instead of the `d × d` one.
pub fn closed_form_predictor(
    state: &ModelState,
    problem: &Problem<'_>,
    hp: &Hyperparams,
    i: usize,
) -> Result<Array2<f64>> {
    problem.check_state(state)?;
    problem.check_index(i)?;
    closed_form_predictor_from(state.scores.values(), problem, hp.alpha, i)
}

fn closed_form_predictor_from(
    scores: ArrayView2<'_, f64>,
    problem: &Problem<'_>,
    alpha: f64,
    i: usize,
) -> Result<Array2<f64>> {
    let x = problem.neighbor_features(i); // κ × d
    let t = scores.select(Axis(0), problem.graph.forward(i)); // κ × m
    let (k, d) = x.dim();
    if k == 0 && alpha > 0.0 {
        return Ok(Array2::zeros((t.ncols(), d)));
    }
    let w = if alpha > 0.0 && k < d {
        let mut gram = x.dot(&x.t());
        gram.diag_mut().mapv_inplace(|v| v + alpha);
        let z = spd_solve(&gram, &t).ok_or(Error::Singular { index: i })?; // κ × m
        z.t().dot(&x)
    } else {
        let mut gram = x.t().dot(&x);
        gram.diag_mut().mapv_inplace(|v| v + alpha);
        let z = spd_solve(&gram, &x.t().dot(&t)).ok_or(Error::Singular { index: i })?; // d × m
        z.reversed_axes()
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { index: i });
    }
    Ok(w)
}

/// Solves `a z = b` for symmetric positive definite `a`; `None` if the
/// Cholesky factorization fails.
fn spd_solve(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if n == 0 {
        return None;
    }
    let chol = DMatrix::from_fn(n, n, |r, c| a[[r, c]]).cholesky()?;
    let z = chol.solve(&DMatrix::from_fn(b.nrows(), b.ncols(), |r, c| b[[r, c]]));
    Some(Array2::from_shape_fn(b.dim(), |(r, c)| z[(r, c)]))
}

fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// First failing image of a per-image pass, scanning in ascending order.
fn first_failure(results: &[Option<f64>]) -> std::result::Result<f64, usize> {
    let mut max_delta = 0.0f64;
    for (i, r) in results.iter().enumerate() {
        match r {
            Some(delta) => max_delta = max_delta.max(*delta),
            None => return Err(i),
        }
    }
    Ok(max_delta)
}

/// One gradient sweep over the score block with step `eta`, in place.
/// Returns the largest entry change.
pub fn step_scores_in_place(
    state: &mut ModelState,
    problem: &Problem<'_>,
    hp: &Hyperparams,
    eta: f64,
    order: BlockOrder,
) -> Result<f64> {
    problem.check_state(state)?;
    let update = |state: &ModelState, i: usize| -> (Array1<f64>, Option<f64>) {
        let g = grad_scores_unchecked(state, problem, hp, i);
        let new = &state.scores.row(i) - &(eta * &g);
        let ok = new.iter().all(|v| v.is_finite());
        let delta = max_abs_diff(&new, state.scores.row(i));
        (new, ok.then_some(delta))
    };
    let results: Vec<Option<f64>> = match order {
        BlockOrder::Jacobi => {
            let rows: Vec<(Array1<f64>, Option<f64>)> =
                (0..problem.n()).into_par_iter().map(|i| update(state, i)).collect();
            let mut scores = state.scores.values_mut();
            rows.into_iter()
                .enumerate()
                .map(|(i, (row, status))| {
                    scores.row_mut(i).assign(&row);
                    status
                })
                .collect()
        }
        BlockOrder::GaussSeidel => (0..problem.n())
            .map(|i| {
                let (row, status) = update(state, i);
                state.scores.values_mut().row_mut(i).assign(&row);
                status
            })
            .collect(),
    };
    first_failure(&results).map_err(|index| Error::NonFinite { block: "score", index })
}

/// One gradient sweep over the predictor block with step `eta`, in place.
pub fn step_predictors_in_place(
    state: &mut ModelState,
    problem: &Problem<'_>,
    hp: &Hyperparams,
    eta: f64,
    order: BlockOrder,
) -> Result<f64> {
    problem.check_state(state)?;
    let results: Vec<Option<f64>> = match order {
        BlockOrder::Jacobi => {
            // W_i's gradient reads only W_i and the scores, so each slice can
            // be replaced as soon as its own gradient is known.
            let ModelState { scores, predictors } = state;
            let scores = scores.values();
            predictors
                .values_mut()
                .axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .map(|(i, mut w)| {
                    let g = predictor_gradient(w.view(), scores, problem, hp.alpha, i);
                    apply_step(&mut w, &g, eta)
                })
                .collect()
        }
        BlockOrder::GaussSeidel => (0..problem.n())
            .map(|i| {
                let g = grad_predictor_unchecked(state, problem, hp, i);
                apply_step(&mut state.predictors.get_mut(i), &g, eta)
            })
            .collect(),
    };
    first_failure(&results).map_err(|index| Error::NonFinite {
        block: "predictor",
        index,
    })
}

fn apply_step(w: &mut ndarray::ArrayViewMut2<'_, f64>, g: &Array2<f64>, eta: f64) -> Option<f64> {
    let mut delta = 0.0f64;
    let mut ok = true;
    Zip::from(w).and(g).for_each(|w, &g| {
        let step = eta * g;
        let new = *w - step;
        ok &= new.is_finite();
        delta = delta.max((new - *w).abs());
        *w = new;
    });
    ok.then_some(delta)
}

/// t_i ← t_i − η ∇_{t_i} g for every image.
pub fn step_scores(state: &ModelState, problem: &Problem<'_>, hp: &Hyperparams) -> Result<ModelState> {
    let mut next = state.clone();
    step_scores_in_place(&mut next, problem, hp, hp.eta, BlockOrder::Jacobi)?;
    Ok(next)
}

/// W_i ← W_i − η ∇_{W_i} g for every image.
pub fn step_predictors(state: &ModelState, problem: &Problem<'_>, hp: &Hyperparams) -> Result<ModelState> {
    let mut next = state.clone();
    step_predictors_in_place(&mut next, problem, hp, hp.eta, BlockOrder::Jacobi)?;
    Ok(next)
}

/// Replaces every t_i by its exact minimizer.
pub fn closed_form_score_sweep(state: &mut ModelState, problem: &Problem<'_>, hp: &Hyperparams) -> Result<f64> {
    problem.check_state(state)?;
    let rows: Vec<Array1<f64>> = (0..problem.n())
        .into_par_iter()
        .map(|i| closed_form_scores_unchecked(state, problem, hp, i))
        .collect();
    let mut delta = 0.0f64;
    let mut scores = state.scores.values_mut();
    for (i, row) in rows.into_iter().enumerate() {
        delta = delta.max(max_abs_diff(&row, scores.row(i)));
        scores.row_mut(i).assign(&row);
    }
    Ok(delta)
}

/// Replaces every W_i by its ridge minimizer.
pub fn closed_form_predictor_sweep(state: &mut ModelState, problem: &Problem<'_>, hp: &Hyperparams) -> Result<f64> {
    problem.check_state(state)?;
    let ModelState { scores, predictors } = state;
    let scores = scores.values();
    let results: Vec<Result<f64>> = predictors
        .values_mut()
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut w)| {
            let new = closed_form_predictor_from(scores, problem, hp.alpha, i)?;
            let delta = max_abs_diff(&new, &w);
            w.assign(&new);
            Ok(delta)
        })
        .collect();
    results.into_iter().try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

/// Runs the alternating minimization from the given initialization mode.
pub fn run_alternating(
    problem: &Problem<'_>,
    hp: &Hyperparams,
    options: SolverOptions,
) -> Result<(ModelState, IterationTrace)> {
    hp.validate()?;
    let state = init_state(problem, hp, options.init)?;
    run_alternating_from(state, problem, hp, options)
}

/// Runs the alternating minimization from an explicit state; `options.init` is ignored.
pub fn run_alternating_from(
    mut state: ModelState,
    problem: &Problem<'_>,
    hp: &Hyperparams,
    options: SolverOptions,
) -> Result<(ModelState, IterationTrace)> {
    hp.validate()?;
    problem.check_state(&state)?;
    let start = Instant::now();
    let initial_terms = objective_terms(&state, problem, hp)?;
    let initial = initial_terms.total();
    let mut trace = IterationTrace {
        initial_objective: initial,
        initial_terms,
        records: Vec::new(),
        converged: false,
    };

    let mut steps = [hp.eta; 2];
    let mut previous = initial;
    let mut current_terms = initial_terms;
    // Backup buffers for backtracking, allocated once and refreshed per sweep.
    let mut backups = match options.step {
        StepMode::Backtracking => Some((state.scores.values().to_owned(), state.predictors.values().clone())),
        _ => None,
    };
    for iteration in 1..=hp.max_iters {
        let max_delta = match options.step {
            StepMode::FixedEta => {
                let a = step_scores_in_place(&mut state, problem, hp, hp.eta, options.order)?;
                let b = step_predictors_in_place(&mut state, problem, hp, hp.eta, options.order)?;
                current_terms = objective_terms(&state, problem, hp)?;
                a.max(b)
            }
            StepMode::ClosedForm => {
                let a = closed_form_score_sweep(&mut state, problem, hp)?;
                let b = closed_form_predictor_sweep(&mut state, problem, hp)?;
                current_terms = objective_terms(&state, problem, hp)?;
                a.max(b)
            }
            StepMode::Backtracking => {
                let (saved_t, saved_w) = backups.as_mut().expect("allocated for backtracking");
                saved_t.assign(&state.scores.values());
                let (a, terms) = backtrack(
                    &mut state,
                    problem,
                    hp,
                    &mut steps[0],
                    current_terms,
                    |s, eta| step_scores_in_place(s, problem, hp, eta, options.order),
                    |s| s.scores.values_mut().assign(saved_t),
                )?;
                saved_w.assign(state.predictors.values());
                let (b, terms) = backtrack(
                    &mut state,
                    problem,
                    hp,
                    &mut steps[1],
                    terms,
                    |s, eta| step_predictors_in_place(s, problem, hp, eta, options.order),
                    |s| s.predictors.values_mut().assign(saved_w),
                )?;
                current_terms = terms;
                a.max(b)
            }
        };

        let value = current_terms.total();
        trace.records.push(IterationRecord {
            iteration,
            objective: value,
            terms: current_terms,
            max_delta,
            seconds: start.elapsed().as_secs_f64(),
        });

        if options.step == StepMode::FixedEta && (!value.is_finite() || value > DIVERGENCE_FACTOR * initial) {
            return Err(Error::Diverged {
                iteration,
                objective: value,
                initial,
            });
        }
        if previous == 0.0 || ((previous - value) / previous).abs() < hp.tol {
            trace.converged = true;
            break;
        }
        previous = value;
    }
    Ok((state, trace))
}

/// Tries a block sweep with `*step`, halving until the objective does not
/// increase. A sweep accepted at its first try doubles the next starting
/// step. Returns the largest entry change and the objective terms of the
/// resulting state; `current` must hold the terms of the state on entry.
#[allow(clippy::too_many_arguments)]
fn backtrack(
    state: &mut ModelState,
    problem: &Problem<'_>,
    hp: &Hyperparams,
    step: &mut f64,
    current: ObjectiveTerms,
    mut try_step: impl FnMut(&mut ModelState, f64) -> Result<f64>,
    restore: impl Fn(&mut ModelState),
) -> Result<(f64, ObjectiveTerms)> {
    let mut eta = *step;
    for halvings in 0..=MAX_HALVINGS {
        match try_step(state, eta) {
            Ok(delta) => {
                let terms = objective_terms(state, problem, hp)?;
                if terms.total() <= current.total() {
                    *step = if halvings == 0 { 2.0 * eta } else { eta };
                    return Ok((delta, terms));
                }
                restore(state);
            }
            Err(Error::NonFinite { .. }) => restore(state),
            Err(e) => return Err(e),
        }
        eta *= 0.5;
    }
    // No step size decreased the objective; leave the block unchanged.
    *step = eta;
    Ok((0.0, current))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"LOCTAGCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a state: magic, version, `n m d` as little-endian u64, then the
/// scores and every W_i as row-major little-endian f64.
pub fn checkpoint_bytes(state: &ModelState) -> Vec<u8> {
    let w = &state.predictors;
    let mut out = Vec::with_capacity(36 + 8 * (state.scores.values().len() + w.values().len()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [w.n(), w.m(), w.d()] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for v in state.scores.values().iter().chain(w.values().iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&checkpoint_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes).map_err(|message| Error::parse(path, 0, message))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> std::result::Result<ModelState, String> {
    if bytes.len() < 36 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let dim = |k: usize| u64::from_le_bytes(bytes[12 + 8 * k..20 + 8 * k].try_into().unwrap()) as usize;
    let (n, m, d) = (dim(0), dim(1), dim(2));
    let expected = n
        .checked_mul(m)
        .and_then(|nm| nm.checked_mul(d + 1))
        .and_then(|c| c.checked_mul(8))
        .ok_or("checkpoint dimensions overflow")?;
    let body = &bytes[36..];
    if body.len() != expected {
        return Err(format!("checkpoint body has {} bytes, expected {expected}", body.len()));
    }
    let mut floats = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let scores = Array2::from_shape_simple_fn((n, m), || floats.next().unwrap());
    let predictors = Array3::from_shape_simple_fn((n, m, d), || floats.next().unwrap());
    Ok(ModelState {
        scores: ScoreMatrix::new(scores).map_err(|e| e.to_string())?,
        predictors: LocalPredictors::new(predictors).map_err(|e| e.to_string())?,
    })
}
