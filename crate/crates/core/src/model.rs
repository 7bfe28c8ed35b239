//! Learnable state and the joint objective
//!
//! ```text
//! g(t, W) = Σ_i [ Σ_{j ∈ N_i} ‖t_j − W_i x_j‖² + α ‖W_i‖_F² + β Σ_j v_ij (t_ij − t̂_ij)² ]
//! ```
//!
//! together with its exact block gradients. The predictor gradient is the
//! analytic one, `−2 Σ_{j ∈ N_i} (t_j − W_i x_j) x_jᵀ + 2α W_i`.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, TagObservations};
use crate::error::{Error, Result};
use crate::neighborhood::NeighborhoodGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Weight of the predictor complexity term.
    pub alpha: f64,
    /// Weight of the observed-tag fidelity term.
    pub beta: f64,
    /// Descent step.
    pub eta: f64,
    pub max_iters: usize,
    /// Relative objective change below which iteration stops.
    pub tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 1.0,
            beta: 1.0,
            eta: 1e-3,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.alpha) && self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("alpha = {} must be ≥ 0", self.alpha)));
        }
        if !(ok(self.beta) && self.beta >= 0.0) {
            return Err(Error::InvalidInput(format!("beta = {} must be ≥ 0", self.beta)));
        }
        if !(ok(self.eta) && self.eta > 0.0) {
            return Err(Error::InvalidInput(format!("eta = {} must be > 0", self.eta)));
        }
        if !(ok(self.tol) && self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol = {} must be > 0", self.tol)));
        }
        Ok(())
    }
}

/// Tag scores, one row t_i per image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Array2<f64>);

impl ScoreMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("score matrix has non-finite entries".into()));
        }
        Ok(ScoreMatrix(values))
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        ScoreMatrix(Array2::zeros((n, m)))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn m(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn values_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.0.view_mut()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// One `m × d` matrix W_i per image neighborhood, stored as an `n × m × d` array.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPredictors(Array3<f64>);

impl LocalPredictors {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("predictors have non-finite entries".into()));
        }
        Ok(LocalPredictors(values))
    }

    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        LocalPredictors(Array3::zeros((n, m, d)))
    }

    pub fn n(&self) -> usize {
        self.0.len_of(Axis(0))
    }

    pub fn m(&self) -> usize {
        self.0.len_of(Axis(1))
    }

    pub fn d(&self) -> usize {
        self.0.len_of(Axis(2))
    }

    pub fn get(&self, i: usize) -> ArrayView2<'_, f64> {
        self.0.index_axis(Axis(0), i)
    }

    pub fn get_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        self.0.index_axis_mut(Axis(0), i)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.0
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub scores: ScoreMatrix,
    pub predictors: LocalPredictors,
}

impl ModelState {
    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        ModelState {
            scores: ScoreMatrix::zeros(n, m),
            predictors: LocalPredictors::zeros(n, m, d),
        }
    }
}

/// The data side of the objective: features, observed tags and the graph,
/// checked once for consistent image counts.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub features: &'a FeatureMatrix,
    pub tags: &'a TagObservations,
    pub graph: &'a NeighborhoodGraph,
}

impl<'a> Problem<'a> {
    pub fn new(features: &'a FeatureMatrix, tags: &'a TagObservations, graph: &'a NeighborhoodGraph) -> Result<Self> {
        let n = features.n();
        if tags.n() != n || graph.n() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} tag rows, {} graph nodes",
                tags.n(),
                graph.n()
            )));
        }
        Ok(Problem { features, tags, graph })
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn m(&self) -> usize {
        self.tags.m()
    }

    pub fn d(&self) -> usize {
        self.features.d()
    }

    pub fn check_state(&self, state: &ModelState) -> Result<()> {
        let (n, m, d) = (self.n(), self.m(), self.d());
        let s = &state.scores;
        let w = &state.predictors;
        if (s.n(), s.m()) != (n, m) || (w.n(), w.m(), w.d()) != (n, m, d) {
            return Err(Error::Shape(format!(
                "state has scores {}×{} and predictors {}×{}×{}; problem is n={n}, m={m}, d={d}",
                s.n(),
                s.m(),
                w.n(),
                w.m(),
                w.d()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                what: "images",
                index: i,
                len: self.n(),
            });
        }
        Ok(())
    }

    /// Features of N_i stacked as rows (`κ × d`).
    pub(crate) fn neighbor_features(&self, i: usize) -> Array2<f64> {
        self.features.values().select(Axis(0), self.graph.forward(i))
    }
}

/// W_i x.
pub fn predict_local(predictors: &LocalPredictors, i: usize, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if i >= predictors.n() {
        return Err(Error::IndexOutOfRange {
            what: "predictors",
            index: i,
            len: predictors.n(),
        });
    }
    if x.len() != predictors.d() {
        return Err(Error::Shape(format!(
            "feature vector has length {}, predictors expect {}",
            x.len(),
            predictors.d()
        )));
    }
    Ok(predictors.get(i).dot(&x))
}

/// The three weighted terms of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// Σ_i Σ_{j ∈ N_i} ‖t_j − W_i x_j‖².
    pub prediction: f64,
    /// α Σ_i ‖W_i‖_F².
    pub complexity: f64,
    /// β Σ_i Σ_j v_ij (t_ij − t̂_ij)².
    pub fidelity: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.prediction + self.complexity + self.fidelity
    }
}

/// Observed-entry squared misfit of row `i`; masked entries are skipped.
fn fidelity_row(tags: &TagObservations, t: ArrayView1<'_, f64>, i: usize) -> f64 {
    t.iter()
        .enumerate()
        .filter(|&(j, _)| tags.is_observed(i, j))
        .map(|(j, &tij)| {
            let r = tij - tags.sign(i, j);
            r * r
        })
        .sum()
}

/// Objective value broken down by term.
///
/// Per-image contributions are computed in parallel and reduced in
/// ascending image order, so the value does not depend on the thread count.
pub fn objective_terms(state: &ModelState, problem: &Problem<'_>, hp: &Hyperparams) -> Result<ObjectiveTerms> {
    problem.check_state(state)?;
    let t = state.scores.values();
    let parts: Vec<(f64, f64, f64)> = (0..problem.n())
        .into_par_iter()
        .map(|i| {
            let w = state.predictors.get(i);
            let prediction: f64 = problem
                .graph
                .forward(i)
                .iter()
                .map(|&j| {
                    let pred = w.dot(&problem.features.row(j));
                    t.row(j)
                        .iter()
                        .zip(pred.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            let norm: f64 = w.iter().map(|v| v * v).sum();
            (prediction, norm, fidelity_row(problem.tags, t.row(i), i))
        })
        .collect();

    let (mut prediction, mut norm, mut fidelity) = (0.0, 0.0, 0.0);
    for (p, w, f) in parts {
        prediction += p;
        norm += w;
        fidelity += f;
    }
    Ok(ObjectiveTerms {
        prediction,
        complexity: hp.alpha * norm,
        fidelity: hp.beta * fidelity,
    })
}

pub fn objective(state: &ModelState, problem: &Problem<'_>, hp: &Hyperparams) -> Result<f64> {
    Ok(objective_terms(state, problem, hp)?.total())
}

/// Σ_{k ∈ R_i} W_k x_i, accumulated in ascending k.
pub(crate) fn reverse_prediction_sum(state: &ModelState, problem: &Problem<'_>, i: usize) -> Array1<f64> {
    let xi = problem.features.row(i);
    let mut acc = Array1::zeros(problem.m());
    for &k in problem.graph.reverse(i) {
        acc += &state.predictors.get(k).dot(&xi);
    }
    acc
}

/// ∇_{t_i} g = 2 Σ_{k ∈ R_i} (t_i − W_k x_i) + 2β diag(v_i)(t_i − t̂_i).
pub fn grad_scores(state: &ModelState, problem: &Problem<'_>, hp: &Hyperparams, i: usize) -> Result<Array1<f64>> {
    problem.check_state(state)?;
    problem.check_index(i)?;
    Ok(grad_scores_unchecked(state, problem, hp, i))
}

pub(crate) fn grad_scores_unchecked(
    state: &ModelState,
    problem: &Problem<'_>,
    hp: &Hyperparams,
    i: usize,
) -> Array1<f64> {
    let ti = state.scores.row(i);
    let c = problem.graph.reverse(i).len() as f64;
    let pred_sum = reverse_prediction_sum(state, problem, i);
    let mut g = Array1::zeros(problem.m());
    for (j, gj) in g.iter_mut().enumerate() {
        let mut v = 2.0 * (c * ti[j] - pred_sum[j]);
        if problem.tags.is_observed(i, j) {
            v += 2.0 * hp.beta * (ti[j] - problem.tags.sign(i, j));
        }
        *gj = v;
    }
    g
}

/// ∇_{W_i} g = −2 Σ_{j ∈ N_i} (t_j − W_i x_j) x_jᵀ + 2α W_i.
pub fn grad_predictor(state: &ModelState, problem: &Problem<'_>, hp: &Hyperparams, i: usize) -> Result<Array2<f64>> {
    problem.check_state(state)?;
    problem.check_index(i)?;
    Ok(grad_predictor_unchecked(state, problem, hp, i))
}

pub(crate) fn grad_predictor_unchecked(
    state: &ModelState,
    problem: &Problem<'_>,
    hp: &Hyperparams,
    i: usize,
) -> Array2<f64> {
    predictor_gradient(state.predictors.get(i), state.scores.values(), problem, hp.alpha, i)
}

/// Predictor gradient from W_i alone; no other predictor enters it.
pub(crate) fn predictor_gradient(
    w: ArrayView2<'_, f64>,
    scores: ArrayView2<'_, f64>,
    problem: &Problem<'_>,
    alpha: f64,
    i: usize,
) -> Array2<f64> {
    let x = problem.neighbor_features(i);
    let targets = scores.select(Axis(0), problem.graph.forward(i));
    // κ × m residuals t_j − W_i x_j
    let residuals = targets - x.dot(&w.t());
    let mut g = residuals.t().dot(&x);
    g *= -2.0;
    g.scaled_add(2.0 * alpha, &w);
    g
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn scalar_problem(
        x: f64,
        sign: i8,
        observed: bool,
        forward: Vec<Vec<usize>>,
    ) -> (FeatureMatrix, TagObservations, NeighborhoodGraph) {
        let f = FeatureMatrix::new(array![[x]]).unwrap();
        let mut tags = TagObservations::empty(1, 1);
        if observed {
            tags.observe(0, 0, sign).unwrap();
        }
        (f, tags, NeighborhoodGraph::from_forward(forward).unwrap())
    }

    #[test]
    fn predict_local_cases() {
        let w = LocalPredictors::zeros(2, 3, 3);
        let x = array![1.0, -2.0, 4.0];
        assert_eq!(predict_local(&w, 1, x.view()).unwrap(), array![0.0, 0.0, 0.0]);

        let mut w = LocalPredictors::zeros(1, 3, 3);
        w.get_mut(0).assign(&Array2::eye(3));
        assert_eq!(predict_local(&w, 0, x.view()).unwrap(), x);

        let mut w = LocalPredictors::zeros(1, 1, 2);
        w.get_mut(0).assign(&array![[2.0, -1.0]]);
        assert_eq!(predict_local(&w, 0, array![3.0, 4.0].view()).unwrap(), array![2.0]);

        assert!(predict_local(&w, 1, array![3.0, 4.0].view()).is_err());
        assert!(predict_local(&w, 0, array![3.0].view()).is_err());
    }

    #[test]
    fn empty_problem_has_zero_objective() {
        let (f, tags, g) = scalar_problem(1.0, 1, false, vec![vec![]]);
        let p = Problem::new(&f, &tags, &g).unwrap();
        let mut state = ModelState::zeros(1, 1, 1);
        state.scores.values_mut()[[0, 0]] = 3.0;
        assert_eq!(objective(&state, &p, &Hyperparams::default()).unwrap(), 0.0);
    }

    #[test]
    fn self_neighborhood_leaves_only_alpha() {
        let (f, tags, g) = scalar_problem(1.0, 1, true, vec![vec![0]]);
        let p = Problem::new(&f, &tags, &g).unwrap();
        let mut state = ModelState::zeros(1, 1, 1);
        state.scores.values_mut()[[0, 0]] = 1.0;
        state.predictors.get_mut(0)[[0, 0]] = 1.0;
        let hp = Hyperparams {
            alpha: 0.7,
            ..Default::default()
        };
        assert_eq!(objective(&state, &p, &hp).unwrap(), 0.7);
    }

    #[test]
    fn score_gradient_hand_value() {
        // image 0 is in N_1; W_1 x_0 = 3
        let f = FeatureMatrix::new(array![[1.5], [0.0]]).unwrap();
        let mut tags = TagObservations::empty(2, 1);
        tags.observe(0, 0, 1).unwrap();
        let g = NeighborhoodGraph::from_forward(vec![vec![], vec![0]]).unwrap();
        let p = Problem::new(&f, &tags, &g).unwrap();
        let mut state = ModelState::zeros(2, 1, 1);
        state.scores.values_mut()[[0, 0]] = 1.0;
        state.predictors.get_mut(1)[[0, 0]] = 2.0;
        let hp = Hyperparams::default();
        assert_eq!(grad_scores(&state, &p, &hp, 0).unwrap(), array![-4.0]);
        // image 1: no reverse neighbors, nothing observed
        assert_eq!(grad_scores(&state, &p, &hp, 1).unwrap(), array![0.0]);
        assert!(grad_scores(&state, &p, &hp, 2).is_err());
    }

    #[test]
    fn predictor_gradient_hand_value() {
        // image 1 is the single neighbor of image 0, x = 2, t = 1, W_0 = 1
        let f = FeatureMatrix::new(array![[0.0], [2.0]]).unwrap();
        let tags = TagObservations::empty(2, 1);
        let g = NeighborhoodGraph::from_forward(vec![vec![1], vec![]]).unwrap();
        let p = Problem::new(&f, &tags, &g).unwrap();
        let mut state = ModelState::zeros(2, 1, 1);
        state.scores.values_mut()[[1, 0]] = 1.0;
        state.predictors.get_mut(0)[[0, 0]] = 1.0;
        let hp = Hyperparams {
            alpha: 0.0,
            ..Default::default()
        };
        assert_eq!(grad_predictor(&state, &p, &hp, 0).unwrap(), array![[4.0]]);
    }

    #[test]
    fn predictor_gradient_vanishes_at_exact_fit() {
        let f = FeatureMatrix::new(array![[1.0, 2.0], [-1.0, 0.5], [3.0, 1.0]]).unwrap();
        let tags = TagObservations::empty(3, 2);
        let g = NeighborhoodGraph::from_forward(vec![vec![1, 2], vec![0], vec![0, 1]]).unwrap();
        let p = Problem::new(&f, &tags, &g).unwrap();
        let mut state = ModelState::zeros(3, 2, 2);
        let w0 = array![[0.5, -1.0], [2.0, 0.25]];
        state.predictors.get_mut(0).assign(&w0);
        for j in [1, 2] {
            let t = w0.dot(&f.row(j));
            state.scores.values_mut().row_mut(j).assign(&t);
        }
        let hp = Hyperparams {
            alpha: 0.0,
            ..Default::default()
        };
        let grad = grad_predictor(&state, &p, &hp, 0).unwrap();
        assert!(grad.iter().all(|v| v.abs() < 1e-14), "{grad}");
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        for hp in [
            Hyperparams {
                alpha: -1.0,
                ..Default::default()
            },
            Hyperparams {
                beta: f64::NAN,
                ..Default::default()
            },
            Hyperparams {
                eta: 0.0,
                ..Default::default()
            },
            Hyperparams {
                tol: 0.0,
                ..Default::default()
            },
        ] {
            assert!(hp.validate().is_err());
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (f, tags, g) = scalar_problem(1.0, 1, true, vec![vec![0]]);
        let p = Problem::new(&f, &tags, &g).unwrap();
        let state = ModelState::zeros(1, 2, 1);
        assert!(matches!(
            objective(&state, &p, &Hyperparams::default()),
            Err(Error::Shape(_))
        ));
    }
}
