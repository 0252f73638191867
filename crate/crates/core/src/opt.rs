//! Gradient-based policy search maximizing the posterior-expected value of
//! the initial-state return, plus the baseline policies it is compared
//! against (nominal-model optimum, maximum-likelihood optimum, and
//! sample-based backup iteration on the posterior mean).
//!
//! The objective for a batch of sampled transition tensors is the summed
//! initial-state value `L = -sum_i rho . v_i`; each `v_i` is solved exactly
//! and the gradient flows through the linear solve via the adjoint system
//! `(I - gamma T_i)^T u = rho`, then through the masked softmax.

use ndarray::{Array1, Array2};

use crate::bayes::{nominal_model, sample_models, DirichletPosterior, DynamicsDistribution, SparseTransitions};
use crate::linalg::LuFactor;
use crate::mdp::{value_iteration, DeterministicPolicy, MdpModel, ModelSkeleton, StochasticPolicy};
use crate::{Error, Result};

/// Knobs for [`optimize_policy`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct OptimizerConfig {
    /// Posterior tensors per gradient step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Draw a fresh batch every this many steps; 0 keeps one fixed batch
    /// for the whole run.
    pub resample_period: usize,
    /// Steps between convergence checks, and the smoothing span of the
    /// loss average used for them.
    pub convergence_window: usize,
    /// Stop when the smoothed loss moves less than this between checks;
    /// non-positive disables early stopping.
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            learning_rate: 0.1,
            max_steps: 5000,
            resample_period: 1,
            convergence_window: 200,
            convergence_tol: 1e-5,
            seed: 0,
        }
    }
}

/// What happened during one optimization run.
#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    /// Batch-mean loss per step (negated objective; lower is better).
    pub losses: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

/// Spread a deterministic policy into a softmax policy that keeps
/// `1 - exploration` mass on the chosen action and splits `exploration`
/// evenly over the other allowed actions. States with a single allowed
/// action keep probability one on it.
pub fn soften_policy(
    policy: &DeterministicPolicy,
    allowed: &Array2<bool>,
    exploration: f64,
) -> Result<StochasticPolicy> {
    if !(0.0..1.0).contains(&exploration) {
        return Err(Error::Parameter(format!(
            "exploration must be in [0, 1), got {exploration}"
        )));
    }
    let (n, m) = allowed.dim();
    if policy.0.len() != n {
        return Err(Error::Dimension("policy length does not match mask".into()));
    }
    if exploration == 0.0 {
        return StochasticPolicy::from_deterministic(policy, allowed);
    }
    let mut logits = Array2::from_elem((n, m), f64::NEG_INFINITY);
    for (s, &chosen) in policy.0.iter().enumerate() {
        if chosen >= m || !allowed[[s, chosen]] {
            return Err(Error::Invalid(format!("action {chosen} not allowed in state {s}")));
        }
        let k = allowed.row(s).iter().filter(|&&b| b).count();
        for a in 0..m {
            if !allowed[[s, a]] {
                continue;
            }
            logits[[s, a]] = if a == chosen {
                (1.0 - exploration).ln()
            } else {
                (exploration / (k - 1) as f64).ln()
            };
        }
    }
    StochasticPolicy::new(logits, allowed.clone())
}

/// Summed loss `-sum_i rho . v_i` over the batch and its exact gradient with
/// respect to the policy logits.
pub fn objective_gradient(
    tensors: &[SparseTransitions],
    skeleton: &ModelSkeleton,
    policy: &StochasticPolicy,
) -> Result<(f64, Array2<f64>)> {
    if tensors.is_empty() {
        return Err(Error::Parameter("need at least one transition tensor".into()));
    }
    let n = skeleton.n_states();
    let m = skeleton.n_actions();
    let probs = policy.probs();
    if probs.dim() != (n, m) {
        return Err(Error::Dimension("policy shape does not match skeleton".into()));
    }
    let rho = &skeleton.initial_dist;
    let gamma = skeleton.discount;

    let mut loss = 0.0;
    // Gradient of the loss with respect to action probabilities.
    let mut g_pi = Array2::<f64>::zeros((n, m));
    for tensor in tensors {
        if tensor.n_states != n || tensor.n_actions != m {
            return Err(Error::Dimension("tensor shape does not match skeleton".into()));
        }
        let t_pi = tensor.policy_transition_matrix(&probs);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = -gamma * t_pi[[i, j]];
            }
            a[i * n + i] += 1.0;
        }
        let f = LuFactor::factor(&a, n)?;
        let v = f.solve(skeleton.reward.as_slice().expect("contiguous reward"))?;
        let u = f.solve_transposed(rho.as_slice().expect("contiguous initial dist"))?;
        loss -= rho.iter().zip(&v).map(|(r, x)| r * x).sum::<f64>();
        for s in 0..n {
            if u[s] == 0.0 {
                continue;
            }
            for action in 0..m {
                if !policy.allowed()[[s, action]] {
                    continue;
                }
                let (next, prob) = tensor.row(s, action);
                let tv: f64 = next.iter().zip(prob).map(|(&sp, &p)| p * v[sp]).sum();
                g_pi[[s, action]] -= gamma * u[s] * tv;
            }
        }
    }

    // Chain through the masked softmax: dz_b picks up
    // pi_b * (g_b - sum_a pi_a g_a) per state.
    let mut g_z = Array2::<f64>::zeros((n, m));
    for s in 0..n {
        let mut inner = 0.0;
        for a in 0..m {
            inner += probs[[s, a]] * g_pi[[s, a]];
        }
        for a in 0..m {
            if policy.allowed()[[s, a]] {
                g_z[[s, a]] = probs[[s, a]] * (g_pi[[s, a]] - inner);
            }
        }
    }
    if !loss.is_finite() || g_z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite loss or gradient".into()));
    }
    Ok((loss, g_z))
}

/// Monte Carlo estimate of the posterior-expected initial-state value of a
/// policy: the sample mean of `rho . v` over posterior draws, with its
/// standard error.
pub fn posterior_objective(
    posterior: &dyn DynamicsDistribution,
    skeleton: &ModelSkeleton,
    policy: &StochasticPolicy,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 samples for a standard error, got {n_samples}"
        )));
    }
    let probs = policy.probs();
    let rho = &skeleton.initial_dist;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n_samples {
        let tensor = posterior.sample(seed, i as u64);
        let t_pi = tensor.policy_transition_matrix(&probs);
        let v = crate::mdp::value_from_transition(&t_pi, &skeleton.reward, skeleton.discount)?;
        let obj: f64 = rho.iter().zip(v.iter()).map(|(r, x)| r * x).sum();
        let count = (i + 1) as f64;
        let delta = obj - mean;
        mean += delta / count;
        m2 += delta * (obj - mean);
    }
    let se = (m2 / (n_samples - 1) as f64 / n_samples as f64).sqrt();
    Ok((mean, se))
}

/// Stochastic gradient ascent on the posterior-expected initial-state value.
///
/// Each step draws (or reuses, per `resample_period`) a batch of posterior
/// tensors, takes the exact gradient of the batch-mean loss, and descends
/// the softmax logits. Sample indices advance monotonically so no tensor is
/// drawn twice across resamples.
pub fn optimize_policy(
    posterior: &dyn DynamicsDistribution,
    skeleton: &ModelSkeleton,
    init: &StochasticPolicy,
    config: &OptimizerConfig,
) -> Result<(StochasticPolicy, OptimizationTrace)> {
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch_size must be positive".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::Parameter("learning_rate must be positive".into()));
    }
    if config.convergence_window == 0 && config.convergence_tol > 0.0 {
        return Err(Error::Parameter("convergence_window must be positive".into()));
    }
    let mut policy = init.clone();
    let mut losses = Vec::with_capacity(config.max_steps);
    let mut batch: Vec<SparseTransitions> = Vec::new();
    let mut next_index: u64 = 0;
    let draw = |start: u64, count: usize| -> Vec<SparseTransitions> {
        (0..count as u64)
            .map(|i| posterior.sample(config.seed, start + i))
            .collect()
    };
    let mut converged = false;
    let mut last_window_mean: Option<f64> = None;
    let mut window_sum = 0.0;
    let mut steps = 0;
    for step in 0..config.max_steps {
        let need_resample =
            batch.is_empty() || (config.resample_period > 0 && step % config.resample_period == 0);
        if need_resample {
            batch = draw(next_index, config.batch_size);
            next_index += config.batch_size as u64;
        }
        let (loss_sum, grad_sum) = objective_gradient(&batch, skeleton, &policy)?;
        let scale = 1.0 / config.batch_size as f64;
        let mean_loss = loss_sum * scale;
        let grad = grad_sum.mapv(|g| g * scale);
        policy.step_logits(&grad, config.learning_rate);
        losses.push(mean_loss);
        steps = step + 1;

        if config.convergence_tol > 0.0 {
            window_sum += mean_loss;
            if steps % config.convergence_window == 0 {
                let window_mean = window_sum / config.convergence_window as f64;
                window_sum = 0.0;
                if let Some(prev) = last_window_mean {
                    if (window_mean - prev).abs() < config.convergence_tol {
                        converged = true;
                        break;
                    }
                }
                last_window_mean = Some(window_mean);
            }
        }
    }
    Ok((policy, OptimizationTrace { losses, steps, converged }))
}

/// Greedy optimal policy of the posterior-mean (nominal) model.
pub fn nominal_policy(
    posterior: &DirichletPosterior,
    skeleton: &ModelSkeleton,
) -> Result<(DeterministicPolicy, Array1<f64>)> {
    let tensor = nominal_model(posterior);
    let model = MdpModel::new(
        skeleton.reward.clone(),
        skeleton.discount,
        skeleton.initial_dist.clone(),
        tensor,
        posterior.allowed_actions().clone(),
    )?;
    value_iteration(&model)
}

/// Greedy optimal policy of a concrete transition tensor under the skeleton's
/// reward structure, with an explicit action mask (used for the
/// maximum-likelihood dynamics and their visit-count mask).
pub fn optimal_policy_for_tensor(
    tensor: ndarray::Array3<f64>,
    skeleton: &ModelSkeleton,
    allowed: &Array2<bool>,
) -> Result<(DeterministicPolicy, Array1<f64>)> {
    let model = MdpModel::new(
        skeleton.reward.clone(),
        skeleton.discount,
        skeleton.initial_dist.clone(),
        tensor,
        allowed.clone(),
    )?;
    value_iteration(&model)
}

/// Sample-based backup iteration: value iteration whose backup averages the
/// one-step lookahead over posterior tensor draws. With state rewards the
/// backup is linear in the tensor, so it reduces exactly to value iteration
/// on the sample-mean tensor.
pub fn msbi_policy(
    posterior: &dyn DynamicsDistribution,
    skeleton: &ModelSkeleton,
    n_samples: usize,
    seed: u64,
) -> Result<(DeterministicPolicy, Array1<f64>)> {
    if n_samples == 0 {
        return Err(Error::Parameter("need at least one posterior sample".into()));
    }
    let samples = sample_models(posterior, n_samples, seed);
    let mut mean = samples[0].clone();
    for t in &samples[1..] {
        mean += t;
    }
    mean /= n_samples as f64;
    let model = MdpModel::new(
        skeleton.reward.clone(),
        skeleton.discount,
        skeleton.initial_dist.clone(),
        mean,
        posterior.allowed_actions().clone(),
    )?;
    value_iteration(&model)
}
