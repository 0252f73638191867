//! Decomposes return uncertainty under a fixed policy into the part caused
//! by not knowing the dynamics (epistemic) and the part caused by stochastic
//! transitions themselves (aleatoric), plus Hoeffding-style planners for how
//! many posterior samples a target precision requires.

use ndarray::{Array1, Array2};

use crate::bayes::DynamicsDistribution;
use crate::mdp::{value_from_transition, variance_from_transition, ModelSkeleton, StochasticPolicy};
use crate::{Error, Result};

/// Per-state uncertainty decomposition for one policy.
#[derive(Debug, Clone)]
pub struct UncertaintyReport {
    /// Posterior-mean value per state.
    pub mean_value: Array1<f64>,
    /// Variance of the value across posterior model draws, per state.
    pub epistemic_variance: Array1<f64>,
    /// Posterior-mean return variance within a model, per state.
    pub aleatoric_variance: Array1<f64>,
    pub n_samples: usize,
}

impl UncertaintyReport {
    /// Total predictive variance by the law of total variance.
    pub fn total_variance(&self) -> Array1<f64> {
        &self.epistemic_variance + &self.aleatoric_variance
    }
}

/// Monte Carlo uncertainty decomposition: draw `n_samples` transition
/// tensors, solve value and return variance exactly in each, and accumulate
/// * epistemic = sample variance of values across draws (n-1 denominator),
/// * aleatoric = sample mean of within-model return variances.
///
/// Welford streaming accumulation keeps one model in memory at a time.
pub fn evaluate_uncertainty(
    posterior: &dyn DynamicsDistribution,
    skeleton: &ModelSkeleton,
    policy: &StochasticPolicy,
    n_samples: usize,
    seed: u64,
) -> Result<UncertaintyReport> {
    if n_samples < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 posterior samples for a variance estimate, got {n_samples}"
        )));
    }
    let n = posterior.n_states();
    if skeleton.reward.len() != n {
        return Err(Error::Dimension("skeleton size does not match posterior".into()));
    }
    let probs = policy.probs();
    check_policy_mask(&probs, posterior.allowed_actions())?;

    let mut mean = Array1::<f64>::zeros(n);
    let mut m2 = Array1::<f64>::zeros(n);
    let mut aleatoric_sum = Array1::<f64>::zeros(n);
    for i in 0..n_samples {
        let tensor = posterior.sample(seed, i as u64);
        let t_pi = tensor.policy_transition_matrix(&probs);
        let value = value_from_transition(&t_pi, &skeleton.reward, skeleton.discount)?;
        let variance = variance_from_transition(&t_pi, &skeleton.reward, skeleton.discount, &value)?;
        let count = (i + 1) as f64;
        for s in 0..n {
            let delta = value[s] - mean[s];
            mean[s] += delta / count;
            m2[s] += delta * (value[s] - mean[s]);
        }
        aleatoric_sum += &variance;
    }
    let epistemic = m2.mapv(|v| v / (n_samples - 1) as f64);
    let aleatoric = aleatoric_sum.mapv(|v| v / n_samples as f64);
    Ok(UncertaintyReport {
        mean_value: mean,
        epistemic_variance: epistemic,
        aleatoric_variance: aleatoric,
        n_samples,
    })
}

fn check_policy_mask(probs: &Array2<f64>, allowed: &Array2<bool>) -> Result<()> {
    if probs.dim() != allowed.dim() {
        return Err(Error::Dimension("policy shape does not match posterior".into()));
    }
    for (p, &ok) in probs.iter().zip(allowed.iter()) {
        if !ok && *p > 0.0 {
            return Err(Error::Invalid("policy puts mass on a disallowed action".into()));
        }
    }
    Ok(())
}

/// How many samples a plan needs and why.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SamplePlan {
    pub n_samples: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub value_bound: f64,
}

/// Hoeffding bound on the posterior samples needed so the mean-value
/// estimate is within `epsilon` of its expectation with probability
/// `1 - delta`, when each per-model value is solved exactly:
/// `N = ceil(ln(2/delta) * 2 V_max^2 / epsilon^2)` with
/// `V_max = r_max / (1 - gamma)`.
pub fn plan_samples_exact(epsilon: f64, delta: f64, r_max: f64, discount: f64) -> Result<SamplePlan> {
    let v_max = check_plan_args(epsilon, delta, r_max, discount)?;
    let n = ((2.0 / delta).ln() * 2.0 * v_max * v_max / (epsilon * epsilon)).ceil();
    Ok(SamplePlan { n_samples: n as u64, epsilon, delta, value_bound: v_max })
}

/// Same bound when each per-model value is itself estimated by rollouts
/// truncated at `horizon` steps: the truncation bias `gamma^T V_max` eats
/// into the precision budget. Returns `None` when the bias alone meets or
/// exceeds `epsilon`, making the target unattainable at this horizon.
pub fn plan_samples_mc(
    epsilon: f64,
    delta: f64,
    r_max: f64,
    discount: f64,
    horizon: u32,
) -> Result<Option<SamplePlan>> {
    let v_max = check_plan_args(epsilon, delta, r_max, discount)?;
    let bias = discount.powi(horizon as i32) * v_max;
    if bias >= epsilon {
        return Ok(None);
    }
    let margin = epsilon - bias;
    let n = ((2.0 / delta).ln() * 2.0 * v_max * v_max / (margin * margin)).ceil();
    Ok(Some(SamplePlan { n_samples: n as u64, epsilon, delta, value_bound: v_max }))
}

/// Smallest truncation horizon T with `gamma^T V_max < epsilon`, i.e. the
/// shortest rollout whose tail bias is below the precision target.
pub fn min_horizon(epsilon: f64, r_max: f64, discount: f64) -> Result<u64> {
    let v_max = check_plan_args(0.5, 0.5, r_max, discount)?;
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if epsilon > v_max {
        return Ok(0);
    }
    if discount == 0.0 {
        return Ok(1);
    }
    // gamma^T V_max < eps  <=>  T > ln(eps / V_max) / ln(gamma).
    let threshold = (epsilon / v_max).ln() / discount.ln();
    let mut t = threshold.floor() as u64 + 1;
    // Guard the float boundary.
    while discount.powf(t as f64) * v_max >= epsilon {
        t += 1;
    }
    Ok(t)
}

fn check_plan_args(epsilon: f64, delta: f64, r_max: f64, discount: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must be in (0, 1), got {delta}")));
    }
    if !(r_max > 0.0) {
        return Err(Error::Parameter(format!("r_max must be positive, got {r_max}")));
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::Parameter(format!("discount must be in [0, 1), got {discount}")));
    }
    Ok(r_max / (1.0 - discount))
}
