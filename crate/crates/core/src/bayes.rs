//! Conjugate Dirichlet inference over transition dynamics from offline
//! transition counts.
//!
//! Each state-action row carries an independent Dirichlet over its next-state
//! distribution. Two prior regimes are supported: a symmetric Dirichlet over
//! all next states, and the conservative-sparse prior whose support is the
//! observed next states plus one designated bad-outcome sink. The symmetric
//! prior parameter can be chosen by minimizing the negative log-marginal
//! likelihood of the data.

use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// Raw offline transitions: `(state, action, next_state)` records.
#[derive(Debug, Clone)]
pub struct TransitionDataset {
    pub n_states: usize,
    pub n_actions: usize,
    pub records: Vec<(usize, usize, usize)>,
}

impl TransitionDataset {
    pub fn new(n_states: usize, n_actions: usize, records: Vec<(usize, usize, usize)>) -> Result<Self> {
        for &(s, a, sp) in &records {
            if s >= n_states || sp >= n_states || a >= n_actions {
                return Err(Error::Invalid(format!(
                    "record ({s}, {a}, {sp}) out of range for {n_states} states, {n_actions} actions"
                )));
            }
        }
        Ok(Self { n_states, n_actions, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-(state, action) next-state visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCounts {
    /// Tally tensor indexed `[s, a, s']`.
    pub counts: Array3<u64>,
    /// Row totals `N_{s,a}`; always equals the sum over the last axis.
    pub visit_totals: Array2<u64>,
}

impl TransitionCounts {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            counts: Array3::zeros((n_states, n_actions, n_states)),
            visit_totals: Array2::zeros((n_states, n_actions)),
        }
    }

    pub fn n_states(&self) -> usize {
        self.counts.shape()[0]
    }

    pub fn n_actions(&self) -> usize {
        self.counts.shape()[1]
    }

    /// Elementwise sum of two count tensors.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.counts.shape() != other.counts.shape() {
            return Err(Error::Dimension("count shapes differ".into()));
        }
        Ok(Self {
            counts: &self.counts + &other.counts,
            visit_totals: &self.visit_totals + &other.visit_totals,
        })
    }
}

/// Exact tally of a transition dataset.
pub fn count_transitions(data: &TransitionDataset) -> TransitionCounts {
    let mut out = TransitionCounts::zeros(data.n_states, data.n_actions);
    for &(s, a, sp) in &data.records {
        out.counts[[s, a, sp]] += 1;
        out.visit_totals[[s, a]] += 1;
    }
    out
}

/// Dirichlet prior regime over each state-action's next-state distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Symmetric Dirichlet over all next states.
    Symmetric,
    /// Support restricted to observed next states plus a designated sink.
    SparseConservative,
}

/// Prior specification: regime plus concentration parameter.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub alpha: f64,
    /// Bad-outcome absorbing state; required for the sparse regime.
    pub sink_state: Option<usize>,
}

impl PriorSpec {
    pub fn symmetric(alpha: f64) -> Self {
        Self { kind: PriorKind::Symmetric, alpha, sink_state: None }
    }

    pub fn sparse_conservative(alpha: f64, sink_state: usize) -> Self {
        Self { kind: PriorKind::SparseConservative, alpha, sink_state: Some(sink_state) }
    }

    fn validate(&self, n_states: usize) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Parameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        match (self.kind, self.sink_state) {
            (PriorKind::SparseConservative, None) => {
                Err(Error::Parameter("sparse_conservative prior requires a sink state".into()))
            }
            (PriorKind::SparseConservative, Some(s)) if s >= n_states => {
                Err(Error::Parameter(format!("sink state {s} out of range")))
            }
            _ => Ok(()),
        }
    }
}

/// A transition tensor stored row-compressed: per (state, action), the list
/// of reachable next states and their probabilities.
#[derive(Debug, Clone)]
pub struct SparseTransitions {
    pub n_states: usize,
    pub n_actions: usize,
    /// Indexed `s * n_actions + a`.
    pub rows: Vec<(Vec<usize>, Vec<f64>)>,
}

impl SparseTransitions {
    pub fn row(&self, s: usize, a: usize) -> (&[usize], &[f64]) {
        let (n, p) = &self.rows[s * self.n_actions + a];
        (n, p)
    }

    pub fn to_dense(&self) -> Array3<f64> {
        let mut t = Array3::zeros((self.n_states, self.n_actions, self.n_states));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let (next, prob) = self.row(s, a);
                for (&sp, &p) in next.iter().zip(prob) {
                    t[[s, a, sp]] += p;
                }
            }
        }
        t
    }

    pub fn from_dense(t: &Array3<f64>) -> Self {
        let (n, m, _) = t.dim();
        let mut rows = Vec::with_capacity(n * m);
        for s in 0..n {
            for a in 0..m {
                let mut next = Vec::new();
                let mut prob = Vec::new();
                for sp in 0..n {
                    let p = t[[s, a, sp]];
                    if p != 0.0 {
                        next.push(sp);
                        prob.push(p);
                    }
                }
                rows.push((next, prob));
            }
        }
        Self { n_states: n, n_actions: m, rows }
    }

    /// Policy-marginalized transition matrix `T(pi)` for this tensor.
    pub fn policy_transition_matrix(&self, action_probs: &Array2<f64>) -> Array2<f64> {
        let n = self.n_states;
        let mut t = Array2::zeros((n, n));
        for s in 0..n {
            for a in 0..self.n_actions {
                let pa = action_probs[[s, a]];
                if pa == 0.0 {
                    continue;
                }
                let (next, prob) = self.row(s, a);
                for (&sp, &p) in next.iter().zip(prob) {
                    t[[s, sp]] += pa * p;
                }
            }
        }
        t
    }
}

/// Anything the optimizer and uncertainty evaluator can draw transition
/// tensors from. Sample `index` depends only on `(seed, index)`, never on
/// how many samples are drawn, so draws may be partitioned freely.
pub trait DynamicsDistribution: Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn allowed_actions(&self) -> &Array2<bool>;
    fn sample(&self, seed: u64, index: u64) -> SparseTransitions;
}

/// Per-(state, action) Dirichlet posterior over next-state distributions.
#[derive(Debug, Clone)]
pub struct DirichletPosterior {
    n_states: usize,
    n_actions: usize,
    /// Support next-state indices per row, indexed `s * n_actions + a`.
    support: Vec<Vec<usize>>,
    /// Dirichlet concentrations aligned with `support`.
    concentration: Vec<Vec<f64>>,
    allowed_actions: Array2<bool>,
}

impl DirichletPosterior {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn allowed_actions(&self) -> &Array2<bool> {
        &self.allowed_actions
    }

    /// Support and concentration vector for one state-action row.
    pub fn row(&self, s: usize, a: usize) -> (&[usize], &[f64]) {
        let idx = s * self.n_actions + a;
        (&self.support[idx], &self.concentration[idx])
    }
}

/// Conjugate update: posterior concentrations are `n_j + alpha_p` on the
/// prior's support. Actions with fewer than `min_visits` visits are marked
/// disallowed (`min_visits = 0` disables the filter).
///
/// A state where some action was visited but none survives the filter is a
/// coverage error. Fully unvisited states keep all actions and fall back to
/// the prior alone.
pub fn build_posterior(
    counts: &TransitionCounts,
    prior: &PriorSpec,
    min_visits: u64,
) -> Result<DirichletPosterior> {
    let n = counts.n_states();
    let m = counts.n_actions();
    prior.validate(n)?;
    let mut allowed = Array2::from_elem((n, m), true);
    if min_visits > 0 {
        for s in 0..n {
            let visited = (0..m).any(|a| counts.visit_totals[[s, a]] > 0);
            if !visited {
                continue;
            }
            let mut any = false;
            for a in 0..m {
                let ok = counts.visit_totals[[s, a]] >= min_visits;
                allowed[[s, a]] = ok;
                any |= ok;
            }
            if !any {
                return Err(Error::Coverage { state: s });
            }
        }
    }
    let mut support = Vec::with_capacity(n * m);
    let mut concentration = Vec::with_capacity(n * m);
    for s in 0..n {
        for a in 0..m {
            match prior.kind {
                PriorKind::Symmetric => {
                    let sup: Vec<usize> = (0..n).collect();
                    let conc: Vec<f64> = (0..n)
                        .map(|sp| counts.counts[[s, a, sp]] as f64 + prior.alpha)
                        .collect();
                    support.push(sup);
                    concentration.push(conc);
                }
                PriorKind::SparseConservative => {
                    let sink = prior.sink_state.expect("validated");
                    let mut sup: Vec<usize> = (0..n)
                        .filter(|&sp| counts.counts[[s, a, sp]] > 0 || sp == sink)
                        .collect();
                    sup.sort_unstable();
                    let conc: Vec<f64> = sup
                        .iter()
                        .map(|&sp| counts.counts[[s, a, sp]] as f64 + prior.alpha)
                        .collect();
                    support.push(sup);
                    concentration.push(conc);
                }
            }
        }
    }
    Ok(DirichletPosterior {
        n_states: n,
        n_actions: m,
        support,
        concentration,
        allowed_actions: allowed,
    })
}

impl DynamicsDistribution for DirichletPosterior {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn allowed_actions(&self) -> &Array2<bool> {
        &self.allowed_actions
    }

    /// One tensor draw: independent Dirichlet per row via normalized Gamma
    /// draws, on a dedicated RNG stream so the draw depends only on
    /// `(seed, index)`.
    fn sample(&self, seed: u64, index: u64) -> SparseTransitions {
        let mut rng = sample_stream(seed, index);
        let mut rows = Vec::with_capacity(self.n_states * self.n_actions);
        for idx in 0..self.n_states * self.n_actions {
            let sup = &self.support[idx];
            let conc = &self.concentration[idx];
            if sup.len() == 1 {
                rows.push((sup.clone(), vec![1.0]));
                continue;
            }
            let mut probs = Vec::with_capacity(sup.len());
            let mut total = 0.0;
            for &c in conc {
                let g = Gamma::new(c, 1.0).expect("positive concentration").sample(&mut rng);
                probs.push(g);
                total += g;
            }
            for p in &mut probs {
                *p /= total;
            }
            rows.push((sup.clone(), probs));
        }
        SparseTransitions { n_states: self.n_states, n_actions: self.n_actions, rows }
    }
}

fn sample_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw `n_samples` independent dense transition tensors from the posterior.
pub fn sample_models(
    posterior: &dyn DynamicsDistribution,
    n_samples: usize,
    seed: u64,
) -> Vec<Array3<f64>> {
    (0..n_samples)
        .map(|i| posterior.sample(seed, i as u64).to_dense())
        .collect()
}

/// The nominal (posterior-mean) transition tensor: each row is the Dirichlet
/// mean `alpha_j / sum alpha`.
pub fn nominal_model(posterior: &DirichletPosterior) -> Array3<f64> {
    let n = posterior.n_states;
    let m = posterior.n_actions;
    let mut t = Array3::zeros((n, m, n));
    for s in 0..n {
        for a in 0..m {
            let (sup, conc) = posterior.row(s, a);
            let total: f64 = conc.iter().sum();
            for (&sp, &c) in sup.iter().zip(conc) {
                t[[s, a, sp]] = c / total;
            }
        }
    }
    t
}

/// Maximum-likelihood dynamics: empirical visitation frequencies, with
/// unvisited rows resolved as self-loops so the tensor is always stochastic.
/// Returns the tensor together with the min-visit action mask.
pub fn mle_model(counts: &TransitionCounts, min_visits: u64) -> Result<(Array3<f64>, Array2<bool>)> {
    let n = counts.n_states();
    let m = counts.n_actions();
    let mut allowed = Array2::from_elem((n, m), true);
    if min_visits > 0 {
        for s in 0..n {
            let visited = (0..m).any(|a| counts.visit_totals[[s, a]] > 0);
            if !visited {
                continue;
            }
            let mut any = false;
            for a in 0..m {
                let ok = counts.visit_totals[[s, a]] >= min_visits;
                allowed[[s, a]] = ok;
                any |= ok;
            }
            if !any {
                return Err(Error::Coverage { state: s });
            }
        }
    }
    let mut t = Array3::zeros((n, m, n));
    for s in 0..n {
        for a in 0..m {
            let total = counts.visit_totals[[s, a]];
            if total == 0 {
                t[[s, a, s]] = 1.0;
            } else {
                for sp in 0..n {
                    t[[s, a, sp]] = counts.counts[[s, a, sp]] as f64 / total as f64;
                }
            }
        }
    }
    Ok((t, allowed))
}

/// A finite, equally weighted mixture of concrete transition tensors.
///
/// Lets the posterior-aware machinery consume hand-built model distributions
/// (a collapsed posterior is a one-component mixture).
#[derive(Debug, Clone)]
pub struct TensorMixture {
    components: Vec<SparseTransitions>,
    allowed_actions: Array2<bool>,
}

impl TensorMixture {
    pub fn new(tensors: Vec<Array3<f64>>, allowed_actions: Array2<bool>) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::Invalid("mixture needs at least one component".into()));
        }
        let components = tensors.iter().map(SparseTransitions::from_dense).collect();
        Ok(Self { components, allowed_actions })
    }

    pub fn point_mass(tensor: Array3<f64>, allowed_actions: Array2<bool>) -> Result<Self> {
        Self::new(vec![tensor], allowed_actions)
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Dense copy of one mixture component.
    pub fn component(&self, index: usize) -> Array3<f64> {
        self.components[index].to_dense()
    }
}

impl DynamicsDistribution for TensorMixture {
    fn n_states(&self) -> usize {
        self.components[0].n_states
    }

    fn n_actions(&self) -> usize {
        self.components[0].n_actions
    }

    fn allowed_actions(&self) -> &Array2<bool> {
        &self.allowed_actions
    }

    fn sample(&self, seed: u64, index: u64) -> SparseTransitions {
        let mut rng = sample_stream(seed, index);
        let k = rng.gen_range(0..self.components.len());
        self.components[k].clone()
    }
}

/// Negative log-marginal likelihood of the counts under a symmetric
/// Dirichlet prior with parameter `alpha`, summed over allowed state-actions.
///
/// Per row the evidence is
/// `Gamma(S a) / Gamma(a)^S * prod_j Gamma(a + n_j) / Gamma(S a + N)`,
/// evaluated in log space throughout.
pub fn evidence_nll(counts: &TransitionCounts, alpha: f64, allowed: &Array2<bool>) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    let n = counts.n_states();
    let m = counts.n_actions();
    if allowed.dim() != (n, m) {
        return Err(Error::Dimension("mask shape mismatch".into()));
    }
    let s_count = n as f64;
    let lg_alpha = ln_gamma(alpha);
    let lg_s_alpha = ln_gamma(s_count * alpha);
    let mut nll = 0.0;
    for s in 0..n {
        for a in 0..m {
            if !allowed[[s, a]] {
                continue;
            }
            let total = counts.visit_totals[[s, a]];
            if total == 0 {
                continue; // evidence is exactly 1
            }
            let mut log_evidence = lg_s_alpha - s_count * lg_alpha - ln_gamma(s_count * alpha + total as f64);
            for sp in 0..n {
                let c = counts.counts[[s, a, sp]];
                log_evidence += if c == 0 { lg_alpha } else { ln_gamma(alpha + c as f64) };
            }
            nll -= log_evidence;
        }
    }
    Ok(nll)
}

/// Minimize [`evidence_nll`] over `alpha` by a coarse log-grid bracket
/// followed by golden-section search in log space (tolerance 1e-4).
pub fn select_alpha(
    counts: &TransitionCounts,
    allowed: &Array2<bool>,
    search_range: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = search_range;
    if !(lo > 0.0) || !(hi > lo) {
        return Err(Error::Parameter(format!("invalid search range ({lo}, {hi})")));
    }
    let f = |t: f64| evidence_nll(counts, t.exp(), allowed);
    let (t_lo, t_hi) = (lo.ln(), hi.ln());

    // Coarse bracket: guards against non-unimodal surprises.
    let grid_n = 50;
    let mut best_i = 0usize;
    let mut best_val = f64::INFINITY;
    for i in 0..grid_n {
        let t = t_lo + (t_hi - t_lo) * i as f64 / (grid_n - 1) as f64;
        let v = f(t)?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite NLL at alpha = {}", t.exp())));
        }
        if v < best_val {
            best_val = v;
            best_i = i;
        }
    }
    let step = (t_hi - t_lo) / (grid_n - 1) as f64;
    let mut a = t_lo + step * best_i.saturating_sub(1) as f64;
    let mut b = (t_lo + step * (best_i + 1) as f64).min(t_hi);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(((a + b) / 2.0).exp())
}
