//! Python bindings for the core pipeline: datasets -> Dirichlet posterior ->
//! uncertainty decomposition / policy optimization. Arrays cross the boundary
//! as plain nested lists; this module targets scripting and inspection, not
//! bulk numerics.

use bayes_mdp::bayes::{
    build_posterior, count_transitions, evidence_nll, select_alpha, DirichletPosterior,
    DynamicsDistribution, PriorSpec, TransitionDataset,
};
use bayes_mdp::envs::{build_casino, casino_mixture_value};
use bayes_mdp::mdp::{solve_moments, value_iteration, ModelSkeleton, StochasticPolicy};
use bayes_mdp::opt::{optimize_policy, posterior_objective, soften_policy, OptimizerConfig};
use bayes_mdp::uncertainty::{evaluate_uncertainty, min_horizon, plan_samples_exact};
use ndarray::{Array1, Array2, Array3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: bayes_mdp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_mask(rows: Vec<Vec<bool>>) -> PyResult<Array2<bool>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged action mask"));
    }
    Ok(Array2::from_shape_fn((n, m), |(s, a)| rows[s][a]))
}

fn to_tensor(rows: Vec<Vec<Vec<f64>>>) -> PyResult<Array3<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    let k = rows.first().and_then(|r| r.first()).map_or(0, |r| r.len());
    for r in &rows {
        if r.len() != m || r.iter().any(|row| row.len() != k) {
            return Err(PyValueError::new_err("ragged transition tensor"));
        }
    }
    Ok(Array3::from_shape_fn((n, m, k), |(s, a, sp)| rows[s][a][sp]))
}

fn prior_from_args(kind: &str, alpha: f64, sink_state: Option<usize>) -> PyResult<PriorSpec> {
    match kind {
        "symmetric" => Ok(PriorSpec::symmetric(alpha)),
        "sparse_conservative" => {
            let sink = sink_state.ok_or_else(|| {
                PyValueError::new_err("sparse_conservative prior needs sink_state")
            })?;
            Ok(PriorSpec::sparse_conservative(alpha, sink))
        }
        other => Err(PyValueError::new_err(format!("unknown prior kind {other:?}"))),
    }
}

/// Offline transition records over finite state and action spaces.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: TransitionDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(n_states: usize, n_actions: usize, records: Vec<(usize, usize, usize)>) -> PyResult<Self> {
        Ok(Self { inner: TransitionDataset::new(n_states, n_actions, records).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions
    }

    /// Negative log marginal likelihood of the counts at Dirichlet weight
    /// `alpha` (all actions allowed).
    fn evidence_nll(&self, alpha: f64) -> PyResult<f64> {
        let counts = count_transitions(&self.inner);
        let mask = Array2::from_elem((self.inner.n_states, self.inner.n_actions), true);
        evidence_nll(&counts, alpha, &mask).map_err(err)
    }

    /// Evidence-optimal Dirichlet weight within `(lo, hi)`.
    #[pyo3(signature = (lo = 1e-4, hi = 10.0))]
    fn select_alpha(&self, lo: f64, hi: f64) -> PyResult<f64> {
        let counts = count_transitions(&self.inner);
        let mask = Array2::from_elem((self.inner.n_states, self.inner.n_actions), true);
        select_alpha(&counts, &mask, (lo, hi)).map_err(err)
    }
}

/// Dirichlet posterior over transition tensors.
#[pyclass(name = "Posterior")]
struct PyPosterior {
    inner: DirichletPosterior,
}

#[pymethods]
impl PyPosterior {
    #[new]
    #[pyo3(signature = (dataset, alpha = 1.0, kind = "symmetric", sink_state = None, min_visits = 0))]
    fn new(
        dataset: &PyDataset,
        alpha: f64,
        kind: &str,
        sink_state: Option<usize>,
        min_visits: u64,
    ) -> PyResult<Self> {
        let prior = prior_from_args(kind, alpha, sink_state)?;
        let counts = count_transitions(&dataset.inner);
        Ok(Self { inner: build_posterior(&counts, &prior, min_visits).map_err(err)? })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn allowed_actions(&self) -> Vec<Vec<bool>> {
        self.inner
            .allowed_actions()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    /// One posterior draw as a dense `[s][a][s']` tensor; draw `index` under
    /// `seed` is reproducible in isolation.
    fn sample(&self, seed: u64, index: u64) -> Vec<Vec<Vec<f64>>> {
        let t = self.inner.sample(seed, index).to_dense();
        tensor_to_lists(&t)
    }

    /// Posterior-mean transition tensor.
    fn mean(&self) -> Vec<Vec<Vec<f64>>> {
        tensor_to_lists(&bayes_mdp::bayes::nominal_model(&self.inner))
    }
}

fn tensor_to_lists(t: &Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    let (n, m, k) = t.dim();
    (0..n)
        .map(|s| (0..m).map(|a| (0..k).map(|sp| t[[s, a, sp]]).collect()).collect())
        .collect()
}

fn skeleton_from_args(
    reward: Vec<f64>,
    discount: f64,
    initial_dist: Vec<f64>,
    allowed_actions: Vec<Vec<bool>>,
) -> PyResult<ModelSkeleton> {
    Ok(ModelSkeleton {
        reward: Array1::from(reward),
        discount,
        initial_dist: Array1::from(initial_dist),
        allowed_actions: to_mask(allowed_actions)?,
    })
}

/// Epistemic/aleatoric decomposition of the return under a uniform policy
/// over the posterior's allowed actions. Returns a dict of per-state lists.
#[pyfunction]
#[pyo3(signature = (posterior, reward, discount, initial_dist, n_samples = 1000, seed = 0))]
fn uncertainty_summary(
    py: Python<'_>,
    posterior: &PyPosterior,
    reward: Vec<f64>,
    discount: f64,
    initial_dist: Vec<f64>,
    n_samples: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let allowed = posterior.inner.allowed_actions().clone();
    let skeleton = ModelSkeleton {
        reward: Array1::from(reward),
        discount,
        initial_dist: Array1::from(initial_dist),
        allowed_actions: allowed.clone(),
    };
    let policy = StochasticPolicy::uniform(&allowed).map_err(err)?;
    let report = evaluate_uncertainty(&posterior.inner, &skeleton, &policy, n_samples, seed)
        .map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("mean_value", report.mean_value.to_vec())?;
    dict.set_item("epistemic_variance", report.epistemic_variance.to_vec())?;
    dict.set_item("aleatoric_variance", report.aleatoric_variance.to_vec())?;
    dict.set_item("n_samples", report.n_samples)?;
    Ok(dict.into_any().unbind())
}

/// Gradient-optimize the posterior-expected discounted return. Starts from a
/// softened greedy policy on the posterior mean. Returns
/// `(action_probabilities, losses, objective_mean, objective_se)`.
#[pyfunction]
#[pyo3(signature = (
    posterior, reward, discount, initial_dist,
    batch_size = 8, learning_rate = 0.1, max_steps = 5000, seed = 0, exploration = 0.1,
    eval_samples = 1000,
))]
#[allow(clippy::too_many_arguments)]
fn optimize(
    posterior: &PyPosterior,
    reward: Vec<f64>,
    discount: f64,
    initial_dist: Vec<f64>,
    batch_size: usize,
    learning_rate: f64,
    max_steps: usize,
    seed: u64,
    exploration: f64,
    eval_samples: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, f64, f64)> {
    let allowed = posterior.inner.allowed_actions().clone();
    let skeleton = skeleton_from_args(
        reward,
        discount,
        initial_dist,
        allowed.rows().into_iter().map(|r| r.to_vec()).collect(),
    )?;
    let nominal = bayes_mdp::bayes::nominal_model(&posterior.inner);
    let model = skeleton.with_transitions(nominal).map_err(err)?;
    let (greedy, _) = value_iteration(&model).map_err(err)?;
    let init = soften_policy(&greedy, &allowed, exploration).map_err(err)?;
    let config = OptimizerConfig {
        batch_size,
        learning_rate,
        max_steps,
        seed,
        ..Default::default()
    };
    let (policy, trace) = optimize_policy(&posterior.inner, &skeleton, &init, &config).map_err(err)?;
    let (obj, se) =
        posterior_objective(&posterior.inner, &skeleton, &policy, eval_samples, seed).map_err(err)?;
    let probs = policy.probs();
    let rows = (0..probs.nrows()).map(|s| probs.row(s).to_vec()).collect();
    Ok((rows, trace.losses, obj, se))
}

/// Exact value and per-state return variance of a uniform policy in a fully
/// specified model.
#[pyfunction]
fn policy_moments(
    reward: Vec<f64>,
    discount: f64,
    initial_dist: Vec<f64>,
    transitions: Vec<Vec<Vec<f64>>>,
    allowed_actions: Vec<Vec<bool>>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let skeleton = skeleton_from_args(reward, discount, initial_dist, allowed_actions)?;
    let model = skeleton.with_transitions(to_tensor(transitions)?).map_err(err)?;
    let policy = StochasticPolicy::uniform(&model.allowed_actions).map_err(err)?;
    let moments = solve_moments(&model, &policy).map_err(err)?;
    Ok((moments.value.to_vec(), moments.variance.to_vec()))
}

/// Hoeffding sample count for `epsilon`-accurate posterior value estimates
/// with exact per-model solves.
#[pyfunction]
fn plan_samples(epsilon: f64, delta: f64, r_max: f64, discount: f64) -> PyResult<u64> {
    plan_samples_exact(epsilon, delta, r_max, discount)
        .map(|p| p.n_samples)
        .map_err(err)
}

/// Smallest rollout horizon whose truncation bias is below `epsilon`.
#[pyfunction]
fn horizon_for(epsilon: f64, r_max: f64, discount: f64) -> PyResult<u64> {
    min_horizon(epsilon, r_max, discount).map_err(err)
}

/// Closed-form mixture value of the two-model casino at play probability
/// `pi`.
#[pyfunction]
fn casino_value(pi: f64, win_reward: f64, discount: f64) -> PyResult<f64> {
    build_casino(win_reward, discount).map_err(err)?;
    Ok(casino_mixture_value(pi, win_reward, discount))
}

#[pymodule]
fn bayes_mdp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPosterior>()?;
    m.add_function(wrap_pyfunction!(uncertainty_summary, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(policy_moments, m)?)?;
    m.add_function(wrap_pyfunction!(plan_samples, m)?)?;
    m.add_function(wrap_pyfunction!(horizon_for, m)?)?;
    m.add_function(wrap_pyfunction!(casino_value, m)?)?;
    Ok(())
}
