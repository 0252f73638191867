//! Bayesian uncertainty quantification and posterior-expected-value policy
//! optimization for finite-state MDPs learned from offline transition data.
//!
//! The crate is organised around a small pipeline:
//!
//! * [`mdp`] — exact finite-state MDP representations and closed-form solvers
//!   for the first two moments of the return distribution.
//! * [`bayes`] — conjugate Dirichlet inference over transition dynamics from
//!   transition counts, posterior sampling and evidence-based prior selection.
//! * [`uncertainty`] — posterior-mean value and the law-of-total-variance
//!   split into epistemic and aleatoric components, plus Hoeffding sample-size
//!   planners.
//! * [`opt`] — stochastic-gradient maximization of posterior expected value
//!   over softmax policies, and the MLE-optimal / Nominal / MSBI baselines.
//! * [`envs`] — ground-truth environments (gridworld, synthetic MDPs, casino),
//!   offline dataset generation and ground-truth rollout evaluation.
//! * [`exp`] — configuration, persistence and the experiment commands backing
//!   the `bayes-mdp` CLI.

pub mod bayes;
pub mod envs;
pub mod exp;
mod linalg;
pub mod mdp;
pub mod opt;
pub mod uncertainty;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("state {state} has no allowed action after the min-visit filter")]
    Coverage { state: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
