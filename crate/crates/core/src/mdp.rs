//! Exact finite-state MDP representations and closed-form solvers for the
//! first two moments of the return distribution, plus classical value
//! iteration.
//!
//! Terminal states are modeled by convention: the state space is augmented
//! with one zero-reward absorbing sink, and a terminal state carries its
//! reward and transitions to the sink with probability 1. This keeps the
//! closed-form moment solvers unchanged while making "value of a terminal
//! state equals its reward" hold exactly.

use ndarray::{Array1, Array2, Array3};

use crate::linalg::LuFactor;
use crate::{Error, Result};

/// Row-sum / distribution tolerance used by input validation.
pub const DIST_TOL: f64 = 1e-9;

/// Default sup-norm stopping tolerance for value iteration.
pub const VALUE_ITERATION_TOL: f64 = 1e-10;

/// Policy-marginalized transition matrix `T(pi)`; rows sum to 1.
pub type PolicyTransitionMatrix = Array2<f64>;

/// A fully specified finite-state MDP with one concrete transition tensor.
#[derive(Debug, Clone)]
pub struct MdpModel {
    /// State-dependent reward `r(s)`.
    pub reward: Array1<f64>,
    /// Discount factor, in `[0, 1)`.
    pub discount: f64,
    /// Initial-state distribution `rho`.
    pub initial_dist: Array1<f64>,
    /// Transition probabilities, indexed `[s, a, s']`.
    pub transitions: Array3<f64>,
    /// Per-state action mask; disallowed rows are ignored by all solvers.
    pub allowed_actions: Array2<bool>,
}

impl MdpModel {
    pub fn new(
        reward: Array1<f64>,
        discount: f64,
        initial_dist: Array1<f64>,
        transitions: Array3<f64>,
        allowed_actions: Array2<bool>,
    ) -> Result<Self> {
        let model = Self {
            reward,
            discount,
            initial_dist,
            transitions,
            allowed_actions,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn n_actions(&self) -> usize {
        self.allowed_actions.ncols()
    }

    /// Everything except the transition tensor; shared across posterior samples.
    pub fn skeleton(&self) -> ModelSkeleton {
        ModelSkeleton {
            reward: self.reward.clone(),
            discount: self.discount,
            initial_dist: self.initial_dist.clone(),
            allowed_actions: self.allowed_actions.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        let m = self.n_actions();
        if n == 0 || m == 0 {
            return Err(Error::Invalid("model must have at least one state and action".into()));
        }
        if self.initial_dist.len() != n
            || self.transitions.shape() != [n, m, n]
            || self.allowed_actions.shape() != [n, m]
        {
            return Err(Error::Dimension(format!(
                "inconsistent shapes: {} states, {} actions, transitions {:?}",
                n,
                m,
                self.transitions.shape()
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Invalid(format!("discount must be in [0, 1), got {}", self.discount)));
        }
        if self.initial_dist.iter().any(|&p| p < 0.0)
            || (self.initial_dist.sum() - 1.0).abs() > DIST_TOL
        {
            return Err(Error::Invalid("initial_dist must be a probability vector".into()));
        }
        for s in 0..n {
            if !self.allowed_actions.row(s).iter().any(|&b| b) {
                return Err(Error::Invalid(format!("state {s} has no allowed action")));
            }
            for a in 0..m {
                if !self.allowed_actions[[s, a]] {
                    continue;
                }
                let row = self.transitions.slice(ndarray::s![s, a, ..]);
                if row.iter().any(|&p| p < 0.0) {
                    return Err(Error::Invalid(format!("negative probability in row ({s}, {a})")));
                }
                if (row.sum() - 1.0).abs() > DIST_TOL {
                    return Err(Error::Invalid(format!(
                        "transition row ({s}, {a}) sums to {}, expected 1",
                        row.sum()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An MDP minus its transition tensor: reward, discount, initial distribution
/// and action mask. Combined with sampled tensors to form concrete models.
#[derive(Debug, Clone)]
pub struct ModelSkeleton {
    pub reward: Array1<f64>,
    pub discount: f64,
    pub initial_dist: Array1<f64>,
    pub allowed_actions: Array2<bool>,
}

impl ModelSkeleton {
    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn n_actions(&self) -> usize {
        self.allowed_actions.ncols()
    }

    pub fn with_transitions(&self, transitions: Array3<f64>) -> Result<MdpModel> {
        MdpModel::new(
            self.reward.clone(),
            self.discount,
            self.initial_dist.clone(),
            transitions,
            self.allowed_actions.clone(),
        )
    }
}

/// A deterministic memoryless policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy(pub Vec<usize>);

/// Softmax-parametrized stochastic policy over allowed actions.
///
/// Disallowed actions carry `-inf` logits and get exactly zero probability.
#[derive(Debug, Clone)]
pub struct StochasticPolicy {
    logits: Array2<f64>,
    allowed: Array2<bool>,
}

impl StochasticPolicy {
    pub fn new(mut logits: Array2<f64>, allowed: Array2<bool>) -> Result<Self> {
        if logits.shape() != allowed.shape() {
            return Err(Error::Dimension("logits and mask shapes differ".into()));
        }
        for s in 0..allowed.nrows() {
            if !allowed.row(s).iter().any(|&b| b) {
                return Err(Error::Invalid(format!("state {s} has no allowed action")));
            }
        }
        for ((s, a), &ok) in allowed.indexed_iter() {
            if !ok {
                logits[[s, a]] = f64::NEG_INFINITY;
            } else if !logits[[s, a]].is_finite() {
                return Err(Error::Invalid(format!("non-finite logit at ({s}, {a})")));
            }
        }
        Ok(Self { logits, allowed })
    }

    /// Point-mass policy on the given action per state.
    pub fn from_deterministic(policy: &DeterministicPolicy, allowed: &Array2<bool>) -> Result<Self> {
        let (n, m) = allowed.dim();
        if policy.0.len() != n {
            return Err(Error::Dimension("policy length does not match state count".into()));
        }
        let mut logits = Array2::from_elem((n, m), f64::NEG_INFINITY);
        for (s, &a) in policy.0.iter().enumerate() {
            if a >= m || !allowed[[s, a]] {
                return Err(Error::Invalid(format!("action {a} not allowed in state {s}")));
            }
            logits[[s, a]] = 0.0;
        }
        // Bypass `new`: point masses intentionally use -inf logits on the
        // non-chosen allowed actions.
        Ok(Self {
            logits,
            allowed: allowed.clone(),
        })
    }

    /// Uniform policy over allowed actions.
    pub fn uniform(allowed: &Array2<bool>) -> Result<Self> {
        Self::new(Array2::zeros(allowed.dim()), allowed.clone())
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn allowed(&self) -> &Array2<bool> {
        &self.allowed
    }

    pub fn n_states(&self) -> usize {
        self.logits.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.logits.ncols()
    }

    /// Action probabilities by masked softmax, rows summing to 1.
    pub fn probs(&self) -> Array2<f64> {
        let (n, m) = self.logits.dim();
        let mut probs = Array2::zeros((n, m));
        for s in 0..n {
            let row = self.logits.row(s);
            let max = row
                .iter()
                .cloned()
                .filter(|v| v.is_finite())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for a in 0..m {
                if self.allowed[[s, a]] && row[a].is_finite() {
                    let e = (row[a] - max).exp();
                    probs[[s, a]] = e;
                    total += e;
                }
            }
            for a in 0..m {
                probs[[s, a]] /= total;
            }
        }
        probs
    }

    /// Apply a gradient-descent step to the logits. Disallowed entries stay
    /// at `-inf` regardless of the supplied gradient.
    pub fn step_logits(&mut self, gradient: &Array2<f64>, learning_rate: f64) {
        for ((s, a), ok) in self.allowed.indexed_iter() {
            if *ok && self.logits[[s, a]].is_finite() {
                self.logits[[s, a]] -= learning_rate * gradient[[s, a]];
            }
        }
    }
}

/// First two moments of the return distribution, per state.
#[derive(Debug, Clone)]
pub struct MomentSolution {
    pub value: Array1<f64>,
    pub variance: Array1<f64>,
}

/// Policy-marginalized transition matrix: entry `(i, j)` is
/// `sum_a pi(a|s_i) P(s_j | s_i, a)`.
pub fn policy_transition_matrix(
    model: &MdpModel,
    policy: &StochasticPolicy,
) -> Result<PolicyTransitionMatrix> {
    if policy.logits.dim() != (model.n_states(), model.n_actions()) {
        return Err(Error::Dimension("policy and model shapes differ".into()));
    }
    if policy.allowed != model.allowed_actions {
        return Err(Error::Dimension("policy action mask differs from model mask".into()));
    }
    let n = model.n_states();
    let m = model.n_actions();
    let probs = policy.probs();
    let mut t = Array2::zeros((n, n));
    for s in 0..n {
        for a in 0..m {
            let p = probs[[s, a]];
            if p == 0.0 {
                continue;
            }
            for sp in 0..n {
                t[[s, sp]] += p * model.transitions[[s, a, sp]];
            }
        }
    }
    Ok(t)
}

/// Solve `v = (I - gamma T)^{-1} r` by a dense LU solve.
pub fn value_from_transition(
    t: &PolicyTransitionMatrix,
    reward: &Array1<f64>,
    discount: f64,
) -> Result<Array1<f64>> {
    let n = reward.len();
    let a = discounted_system(t, discount, n);
    let f = LuFactor::factor(&a, n)?;
    let v = f.solve(reward.as_slice().expect("contiguous reward"))?;
    Ok(Array1::from(v))
}

/// Per-state variance of the return: `var = (I - gamma^2 T)^{-1} r_var` with
/// `r_var_i = sum_j T_ij (r_i + gamma v_j)^2 - v_i^2`.
pub fn variance_from_transition(
    t: &PolicyTransitionMatrix,
    reward: &Array1<f64>,
    discount: f64,
    value: &Array1<f64>,
) -> Result<Array1<f64>> {
    let n = reward.len();
    let r_var = variance_reward(t, reward, discount, value);
    let a = discounted_system(t, discount * discount, n);
    let f = LuFactor::factor(&a, n)?;
    let mut var = Array1::from(f.solve(r_var.as_slice().expect("contiguous"))?);
    var.mapv_inplace(|v| v.max(0.0));
    Ok(var)
}

/// One-step reward-variance vector feeding the variance Bellman solve.
pub fn variance_reward(
    t: &PolicyTransitionMatrix,
    reward: &Array1<f64>,
    discount: f64,
    value: &Array1<f64>,
) -> Array1<f64> {
    let n = reward.len();
    let mut r_var = Array1::zeros(n);
    for i in 0..n {
        let mut second = 0.0;
        for j in 0..n {
            let x = reward[i] + discount * value[j];
            second += t[[i, j]] * x * x;
        }
        r_var[i] = second - value[i] * value[i];
    }
    r_var
}

fn discounted_system(t: &PolicyTransitionMatrix, discount: f64, n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = -discount * t[[i, j]];
        }
        a[i * n + i] += 1.0;
    }
    a
}

/// Exact value of a policy: the Bellman fixed point solved as a linear system.
pub fn solve_value(model: &MdpModel, policy: &StochasticPolicy) -> Result<Array1<f64>> {
    let t = policy_transition_matrix(model, policy)?;
    value_from_transition(&t, &model.reward, model.discount)
}

/// Exact per-state variance of the return under a policy; `value` must be the
/// corresponding [`solve_value`] solution.
pub fn solve_return_variance(
    model: &MdpModel,
    policy: &StochasticPolicy,
    value: &Array1<f64>,
) -> Result<Array1<f64>> {
    let t = policy_transition_matrix(model, policy)?;
    variance_from_transition(&t, &model.reward, model.discount, value)
}

/// Value and variance in one call, sharing the transition matrix.
pub fn solve_moments(model: &MdpModel, policy: &StochasticPolicy) -> Result<MomentSolution> {
    let t = policy_transition_matrix(model, policy)?;
    let value = value_from_transition(&t, &model.reward, model.discount)?;
    let variance = variance_from_transition(&t, &model.reward, model.discount, &value)?;
    Ok(MomentSolution { value, variance })
}

/// Classical value iteration with the default tolerance.
///
/// Returns the greedy deterministic policy (ties broken by lowest action
/// index) and its exact value.
pub fn value_iteration(model: &MdpModel) -> Result<(DeterministicPolicy, Array1<f64>)> {
    value_iteration_with_tol(model, VALUE_ITERATION_TOL)
}

/// Value iteration stopping when successive iterates differ by less than
/// `tol` in sup norm.
pub fn value_iteration_with_tol(
    model: &MdpModel,
    tol: f64,
) -> Result<(DeterministicPolicy, Array1<f64>)> {
    model.validate()?;
    let n = model.n_states();
    let m = model.n_actions();
    let mut v = Array1::<f64>::zeros(n);
    // gamma < 1 contracts, so this cap is never the binding constraint on
    // well-formed inputs.
    let max_sweeps = 50_000_000usize;
    for sweep in 0.. {
        if sweep >= max_sweeps {
            return Err(Error::Numerical("value iteration failed to converge".into()));
        }
        let mut next = Array1::<f64>::zeros(n);
        let mut delta: f64 = 0.0;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..m {
                if !model.allowed_actions[[s, a]] {
                    continue;
                }
                let mut q = 0.0;
                for sp in 0..n {
                    q += model.transitions[[s, a, sp]] * v[sp];
                }
                if q > best {
                    best = q;
                }
            }
            next[s] = model.reward[s] + model.discount * best;
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta < tol {
            break;
        }
    }
    // Greedy extraction, lowest action index on ties.
    let mut actions = vec![0usize; n];
    for s in 0..n {
        let mut best = f64::NEG_INFINITY;
        let mut best_a = usize::MAX;
        for a in 0..m {
            if !model.allowed_actions[[s, a]] {
                continue;
            }
            let mut q = 0.0;
            for sp in 0..n {
                q += model.transitions[[s, a, sp]] * v[sp];
            }
            if q > best {
                best = q;
                best_a = a;
            }
        }
        actions[s] = best_a;
    }
    let policy = DeterministicPolicy(actions);
    let stochastic = StochasticPolicy::from_deterministic(&policy, &model.allowed_actions)?;
    let value = solve_value(model, &stochastic)?;
    Ok((policy, value))
}
