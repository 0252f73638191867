//! Experiment driver: TOML configuration, dataset/model file formats, and
//! the commands behind the CLI subcommands (`gen`, `uncertainty`, `compare`,
//! `casino`, `alpha`, `bench`).
//!
//! All result files are CSV written atomically (temp file + rename);
//! plotting is out of scope. Non-timing outputs are bit-reproducible for a
//! fixed (config, seed).

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{
    build_posterior, count_transitions, evidence_nll, mle_model, select_alpha, DirichletPosterior,
    PriorKind, PriorSpec, TransitionCounts, TransitionDataset,
};
use crate::envs::{
    build_casino, build_gridworld, build_synthetic_mdp, casino_mixture_value, rollout_return,
    sample_dataset_per_sa, sample_dataset_uniform, GridworldSpec, SyntheticSpec,
};
use crate::mdp::{MdpModel, ModelSkeleton, StochasticPolicy};
use crate::opt::{
    msbi_policy, nominal_policy, optimal_policy_for_tensor, optimize_policy, posterior_objective,
    soften_policy, OptimizerConfig,
};
use crate::uncertainty::evaluate_uncertainty;
use crate::{Error, Result};

/// Range searched by alpha selection and swept by the NLL curve output.
pub const ALPHA_RANGE: (f64, f64) = (1e-4, 10.0);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Top-level experiment configuration, loaded from TOML. Every field has a
/// default, so an empty file is a valid config.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub prior: PriorConfig,
    pub experiment: ExperimentSection,
    pub optimizer: OptimizerSection,
    pub evaluation: EvaluationConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if let EnvironmentConfig::Dataset { path, .. } = &self.environment {
            if !Path::new(path).exists() {
                return Err(Error::Config(format!("dataset file {path} does not exist")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    Gridworld(GridworldSpec),
    Synthetic(SyntheticSpec),
    Casino {
        #[serde(default = "default_casino_reward")]
        win_reward: f64,
        #[serde(default = "default_casino_discount")]
        discount: f64,
    },
    /// Pre-existing transition records; used by `alpha` and dataset-driven
    /// analyses where no ground-truth model exists.
    Dataset {
        path: String,
        n_states: Option<usize>,
        n_actions: Option<usize>,
    },
}

fn default_casino_reward() -> f64 {
    10.0
}

fn default_casino_discount() -> f64 {
    0.99
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self::Gridworld(GridworldSpec::default())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub alpha: f64,
    pub sink_state: Option<usize>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { kind: PriorKind::Symmetric, alpha: 1.0, sink_state: None }
    }
}

impl PriorConfig {
    /// Resolve to a concrete prior; the sparse regime takes its sink from
    /// the config or, failing that, from the environment (gridworld sink).
    pub fn to_spec(&self, default_sink: Option<usize>) -> Result<PriorSpec> {
        match self.kind {
            PriorKind::Symmetric => Ok(PriorSpec::symmetric(self.alpha)),
            PriorKind::SparseConservative => {
                let sink = self.sink_state.or(default_sink).ok_or_else(|| {
                    Error::Config("sparse_conservative prior needs a sink_state".into())
                })?;
                Ok(PriorSpec::sparse_conservative(self.alpha, sink))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gradient,
    Mle,
    Nominal,
    Msbi,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::Mle => "mle",
            Method::Nominal => "nominal",
            Method::Msbi => "msbi",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub seed: u64,
    /// Nested uniform-exploration dataset sizes.
    pub dataset_sizes: Vec<usize>,
    /// Gridworld noise levels swept by `uncertainty`.
    pub p_rand: Vec<f64>,
    pub methods: Vec<Method>,
    /// Independent problem instances for `compare`.
    pub seeds: usize,
    pub full_scale_seeds: usize,
    /// Census dataset density for synthetic comparisons.
    pub visits_per_sa: usize,
    /// Action filter threshold; 0 disables it.
    pub min_visits: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            dataset_sizes: vec![100, 1000, 10_000],
            p_rand: vec![0.0, 0.25, 0.5],
            methods: vec![Method::Gradient, Method::Mle, Method::Nominal, Method::Msbi],
            seeds: 50,
            full_scale_seeds: 250,
            visits_per_sa: 1,
            min_visits: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub resample_period: usize,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    /// Initial softness when starting from a deterministic policy.
    pub exploration: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let base = OptimizerConfig::default();
        Self {
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            max_steps: base.max_steps,
            resample_period: base.resample_period,
            convergence_window: base.convergence_window,
            convergence_tol: base.convergence_tol,
            exploration: 0.1,
        }
    }
}

impl OptimizerSection {
    pub fn to_config(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_steps: self.max_steps,
            resample_period: self.resample_period,
            convergence_window: self.convergence_window,
            convergence_tol: self.convergence_tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Posterior draws per Monte Carlo evaluation.
    pub n_samples: usize,
    /// Rollout truncation horizon.
    pub horizon: usize,
    pub n_episodes: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { n_samples: 1000, horizon: 1000, n_episodes: 1000 }
    }
}

/// Global CLI options shared by all commands.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the config's experiment seed when set.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub jobs: usize,
    pub full_scale: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: None, out: PathBuf::from("out"), jobs: 1, full_scale: false }
    }
}

impl RunOptions {
    fn resolve_seed(&self, config: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(config.experiment.seed)
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

const DATASET_HEADER: &str = "state,action,next_state";

/// Write a dataset in the ingestion format: header line plus one integer
/// triple per record.
pub fn write_dataset(path: &Path, data: &TransitionDataset) -> Result<()> {
    let mut text = String::with_capacity(data.len() * 8 + 32);
    text.push_str(DATASET_HEADER);
    text.push('\n');
    for &(s, a, sp) in &data.records {
        text.push_str(&format!("{s},{a},{sp}\n"));
    }
    atomic_write(path, text.as_bytes())
}

/// Read a dataset file. Dimensions default to one past the largest index
/// seen; pass them explicitly when the file may not cover the full space.
pub fn read_dataset(
    path: &Path,
    n_states: Option<usize>,
    n_actions: Option<usize>,
) -> Result<TransitionDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == DATASET_HEADER => {}
        other => {
            return Err(Error::Invalid(format!(
                "{}: expected header '{DATASET_HEADER}', got {other:?}",
                path.display()
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut field = || -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.trim().parse().ok())
                .ok_or_else(|| Error::Invalid(format!("{}: bad record on line {}", path.display(), i + 2)))
        };
        records.push((field()?, field()?, field()?));
    }
    let max_state = records.iter().map(|r| r.0.max(r.2) + 1).max().unwrap_or(1);
    let max_action = records.iter().map(|r| r.1 + 1).max().unwrap_or(1);
    TransitionDataset::new(
        n_states.unwrap_or(max_state).max(max_state),
        n_actions.unwrap_or(max_action).max(max_action),
        records,
    )
}

/// On-disk model representation: dimensions, reward, discount, initial
/// distribution, and the row-major transition tensor.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub reward: Vec<f64>,
    pub initial_dist: Vec<f64>,
    /// Row-major `[s][a][s']`.
    pub transitions: Vec<f64>,
    /// Row-major `[s][a]`.
    pub allowed_actions: Vec<bool>,
}

impl ModelFile {
    pub fn from_model(model: &MdpModel) -> Self {
        Self {
            n_states: model.n_states(),
            n_actions: model.n_actions(),
            discount: model.discount,
            reward: model.reward.to_vec(),
            initial_dist: model.initial_dist.to_vec(),
            transitions: model.transitions.iter().cloned().collect(),
            allowed_actions: model.allowed_actions.iter().cloned().collect(),
        }
    }

    pub fn into_model(self) -> Result<MdpModel> {
        let (n, m) = (self.n_states, self.n_actions);
        let transitions = Array3::from_shape_vec((n, m, n), self.transitions)
            .map_err(|e| Error::Invalid(format!("transition tensor shape: {e}")))?;
        let allowed = Array2::from_shape_vec((n, m), self.allowed_actions)
            .map_err(|e| Error::Invalid(format!("action mask shape: {e}")))?;
        MdpModel::new(
            Array1::from(self.reward),
            self.discount,
            Array1::from(self.initial_dist),
            transitions,
            allowed,
        )
    }
}

pub fn write_model(path: &Path, model: &MdpModel) -> Result<()> {
    let text = serde_json::to_string_pretty(&ModelFile::from_model(model))
        .map_err(|e| Error::Invalid(format!("model serialization: {e}")))?;
    atomic_write(path, text.as_bytes())
}

pub fn read_model(path: &Path) -> Result<MdpModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    file.into_model()
}

/// Write through a temp file in the target directory and rename into place,
/// so a failed run never leaves a truncated result file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Invalid(format!("csv serialization: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Invalid(format!("csv flush: {e}")))?;
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// Result rows
// ---------------------------------------------------------------------------

/// One evaluated (seed, method) cell of a comparison grid.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub dataset_size: usize,
    pub method: String,
    pub objective_mean: f64,
    pub objective_se: f64,
    pub rollout_mean: Option<f64>,
    pub rollout_se: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UncertaintyRow {
    pub dataset_size: usize,
    pub p_rand: f64,
    pub state: usize,
    pub bayes_value: f64,
    pub aleatoric_std: f64,
    pub epistemic_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummaryRow {
    pub experiment: String,
    pub baseline: String,
    /// Mean over seeds of (gradient objective - baseline objective).
    pub objective_diff_mean: f64,
    /// Standard deviation of the paired differences across seeds.
    pub objective_diff_std: f64,
    pub rollout_diff_mean: f64,
    /// Standard error of the mean rollout difference.
    pub rollout_diff_sem: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n_states: usize,
    pub batch: usize,
    /// Resample period; 0 means a single fixed batch.
    pub resample: usize,
    pub seconds: f64,
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Materialize the configured environment: ground-truth model files plus
/// nested datasets for every configured size.
pub fn cmd_gen(config: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let seed = opts.resolve_seed(config);
    let mut written = Vec::new();
    let sizes = &config.experiment.dataset_sizes;
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    match &config.environment {
        EnvironmentConfig::Gridworld(spec) => {
            for &p_rand in &config.experiment.p_rand {
                let spec = GridworldSpec { p_rand, ..spec.clone() };
                let model = build_gridworld(&spec)?;
                let tag = format_p(p_rand);
                let model_path = opts.out.join(format!("model_p{tag}.json"));
                write_model(&model_path, &model)?;
                written.push(model_path);
                let full = sample_dataset_uniform(&model, max_size, seed);
                for &n in sizes {
                    let prefix = TransitionDataset {
                        n_states: full.n_states,
                        n_actions: full.n_actions,
                        records: full.records[..n].to_vec(),
                    };
                    let path = opts.out.join(format!("dataset_p{tag}_n{n}.csv"));
                    write_dataset(&path, &prefix)?;
                    written.push(path);
                }
            }
        }
        EnvironmentConfig::Synthetic(spec) => {
            let spec = SyntheticSpec { seed, ..*spec };
            let model = build_synthetic_mdp(&spec)?;
            let model_path = opts.out.join("model.json");
            write_model(&model_path, &model)?;
            written.push(model_path);
            let full = sample_dataset_uniform(&model, max_size, seed);
            for &n in sizes {
                let prefix = TransitionDataset {
                    n_states: full.n_states,
                    n_actions: full.n_actions,
                    records: full.records[..n].to_vec(),
                };
                let path = opts.out.join(format!("dataset_n{n}.csv"));
                write_dataset(&path, &prefix)?;
                written.push(path);
            }
        }
        _ => {
            return Err(Error::Config(
                "gen needs a gridworld or synthetic environment".into(),
            ))
        }
    }
    Ok(written)
}

fn format_p(p: f64) -> String {
    format!("{p}").replace('.', "_")
}

/// Uncertainty decomposition resolved per (dataset size, noise level) at
/// the policy that is greedy for the maximum-likelihood dynamics.
pub fn cmd_uncertainty(config: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<UncertaintyRow>> {
    let seed = opts.resolve_seed(config);
    let base_spec = match &config.environment {
        EnvironmentConfig::Gridworld(spec) => spec.clone(),
        _ => return Err(Error::Config("uncertainty needs a gridworld environment".into())),
    };
    let mut rows = Vec::new();
    let sizes = &config.experiment.dataset_sizes;
    let max_size = sizes.iter().copied().max().unwrap_or(0);
    for &p_rand in &config.experiment.p_rand {
        let spec = GridworldSpec { p_rand, ..base_spec.clone() };
        let model = build_gridworld(&spec)?;
        let full = sample_dataset_uniform(&model, max_size, seed);
        for &n in sizes {
            let prefix = TransitionDataset {
                n_states: full.n_states,
                n_actions: full.n_actions,
                records: full.records[..n].to_vec(),
            };
            let counts = count_transitions(&prefix);
            let report = uncertainty_at_mle_policy(config, &counts, &model.skeleton(), Some(spec.sink_state()), seed)?;
            for state in 0..model.n_states() {
                rows.push(UncertaintyRow {
                    dataset_size: n,
                    p_rand,
                    state,
                    bayes_value: report.mean_value[state],
                    aleatoric_std: report.aleatoric_variance[state].sqrt(),
                    epistemic_std: report.epistemic_variance[state].sqrt(),
                });
            }
        }
    }
    write_csv(&opts.out.join("uncertainty.csv"), &rows)?;
    Ok(rows)
}

/// Shared core of the uncertainty protocol: fit MLE dynamics and posterior
/// on the same counts, then decompose the return uncertainty of the
/// MLE-optimal policy under the posterior.
pub fn uncertainty_at_mle_policy(
    config: &ExperimentConfig,
    counts: &TransitionCounts,
    skeleton: &ModelSkeleton,
    default_sink: Option<usize>,
    seed: u64,
) -> Result<crate::uncertainty::UncertaintyReport> {
    let min_visits = config.experiment.min_visits;
    let prior = config.prior.to_spec(default_sink)?;
    let (mle_tensor, mle_allowed) = mle_model(counts, min_visits)?;
    let (mle_policy, _) = optimal_policy_for_tensor(mle_tensor, skeleton, &mle_allowed)?;
    let posterior = build_posterior(counts, &prior, min_visits)?;
    let policy = StochasticPolicy::from_deterministic(&mle_policy, posterior.allowed_actions())?;
    evaluate_uncertainty(&posterior, skeleton, &policy, config.evaluation.n_samples, seed)
}

/// Train every configured method per problem seed, evaluate all of them on
/// shared posterior samples plus ground-truth rollouts, and summarize paired
/// differences against the gradient method.
pub fn cmd_compare(
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(Vec<ResultRow>, Vec<ComparisonSummaryRow>)> {
    let base_seed = opts.resolve_seed(config);
    let n_seeds = if opts.full_scale {
        config.experiment.full_scale_seeds
    } else {
        config.experiment.seeds
    };
    let base_spec = match &config.environment {
        EnvironmentConfig::Synthetic(spec) => *spec,
        _ => return Err(Error::Config("compare needs a synthetic environment".into())),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Result<Vec<Vec<ResultRow>>> = pool.install(|| {
        (0..n_seeds as u64)
            .into_par_iter()
            .map(|i| compare_one_seed(config, base_spec, base_seed, i))
            .collect()
    });
    let mut rows: Vec<ResultRow> = results?.into_iter().flatten().collect();
    rows.sort_by(|a, b| (a.seed, &a.method).cmp(&(b.seed, &b.method)));

    let summary = summarize_paired(&config.experiment.name, &rows);
    write_csv(&opts.out.join("compare.csv"), &rows)?;
    write_csv(&opts.out.join("compare_summary.csv"), &summary)?;
    Ok((rows, summary))
}

fn compare_one_seed(
    config: &ExperimentConfig,
    base_spec: SyntheticSpec,
    base_seed: u64,
    index: u64,
) -> Result<Vec<ResultRow>> {
    let spec = SyntheticSpec { seed: base_seed.wrapping_add(index), ..base_spec };
    let model = build_synthetic_mdp(&spec)?;
    let data = sample_dataset_per_sa(&model, config.experiment.visits_per_sa, spec.seed);
    let counts = count_transitions(&data);
    let prior = config.prior.to_spec(None)?;
    let posterior = build_posterior(&counts, &prior, config.experiment.min_visits)?;
    let skeleton = ModelSkeleton {
        reward: model.reward.clone(),
        discount: model.discount,
        initial_dist: model.initial_dist.clone(),
        allowed_actions: posterior.allowed_actions().clone(),
    };
    // Disjoint seed lanes for optimization, posterior evaluation, rollouts.
    let opt_seed = spec.seed ^ 0x9e37_79b9_7f4a_7c15;
    let eval_seed = spec.seed ^ 0x6a09_e667_f3bc_c909;
    let roll_seed = spec.seed ^ 0xbb67_ae85_84ca_a73b;

    let mut rows = Vec::new();
    for &method in &config.experiment.methods {
        let start = Instant::now();
        let policy = train_method(method, config, &posterior, &counts, &skeleton, opt_seed)?;
        let seconds = start.elapsed().as_secs_f64();
        // Identical (seed, sample index) set across methods: paired by design.
        let (obj_mean, obj_se) =
            posterior_objective(&posterior, &skeleton, &policy, config.evaluation.n_samples, eval_seed)?;
        let (roll_mean, roll_se) = rollout_return(
            &model,
            &policy,
            config.evaluation.horizon,
            config.evaluation.n_episodes,
            roll_seed,
        )?;
        rows.push(ResultRow {
            experiment: config.experiment.name.clone(),
            seed: spec.seed,
            dataset_size: data.len(),
            method: method.name().into(),
            objective_mean: obj_mean,
            objective_se: obj_se,
            rollout_mean: Some(roll_mean),
            rollout_se: Some(roll_se),
            seconds,
        });
    }
    Ok(rows)
}

/// Train one method on the shared posterior; returns a stochastic policy in
/// all cases (deterministic baselines become point masses).
pub fn train_method(
    method: Method,
    config: &ExperimentConfig,
    posterior: &DirichletPosterior,
    counts: &TransitionCounts,
    skeleton: &ModelSkeleton,
    seed: u64,
) -> Result<StochasticPolicy> {
    let n_samples = config.evaluation.n_samples;
    match method {
        Method::Gradient => {
            let (nominal, _) = nominal_policy(posterior, skeleton)?;
            let init = soften_policy(&nominal, posterior.allowed_actions(), config.optimizer.exploration)?;
            let (policy, _) = optimize_policy(posterior, skeleton, &init, &config.optimizer.to_config(seed))?;
            Ok(policy)
        }
        Method::Nominal => {
            let (policy, _) = nominal_policy(posterior, skeleton)?;
            StochasticPolicy::from_deterministic(&policy, posterior.allowed_actions())
        }
        Method::Mle => {
            let (tensor, allowed) = mle_model(counts, config.experiment.min_visits)?;
            let (policy, _) = optimal_policy_for_tensor(tensor, skeleton, &allowed)?;
            // MLE and posterior masks agree: both apply the same visit filter.
            StochasticPolicy::from_deterministic(&policy, posterior.allowed_actions())
        }
        Method::Msbi => {
            let (policy, _) = msbi_policy(posterior, skeleton, n_samples, seed)?;
            StochasticPolicy::from_deterministic(&policy, posterior.allowed_actions())
        }
    }
}

fn summarize_paired(experiment: &str, rows: &[ResultRow]) -> Vec<ComparisonSummaryRow> {
    use std::collections::BTreeMap;
    // seed -> method -> (objective, rollout)
    let mut by_seed: BTreeMap<u64, BTreeMap<&str, (f64, f64)>> = BTreeMap::new();
    for row in rows {
        by_seed
            .entry(row.seed)
            .or_default()
            .insert(&row.method, (row.objective_mean, row.rollout_mean.unwrap_or(f64::NAN)));
    }
    let baselines: Vec<&str> = {
        let mut set: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        set.sort_unstable();
        set.dedup();
        set.retain(|&m| m != "gradient");
        set
    };
    let mut out = Vec::new();
    for baseline in baselines {
        let mut obj_diffs = Vec::new();
        let mut roll_diffs = Vec::new();
        for methods in by_seed.values() {
            if let (Some(&(g_obj, g_roll)), Some(&(b_obj, b_roll))) =
                (methods.get("gradient"), methods.get(baseline))
            {
                obj_diffs.push(g_obj - b_obj);
                roll_diffs.push(g_roll - b_roll);
            }
        }
        if obj_diffs.is_empty() {
            continue;
        }
        let (obj_mean, obj_std) = mean_std(&obj_diffs);
        let (roll_mean, roll_std) = mean_std(&roll_diffs);
        let n = obj_diffs.len();
        out.push(ComparisonSummaryRow {
            experiment: experiment.into(),
            baseline: baseline.into(),
            objective_diff_mean: obj_mean,
            objective_diff_std: obj_std,
            rollout_diff_mean: roll_mean,
            rollout_diff_sem: roll_std / (n as f64).sqrt(),
            n_seeds: n,
        });
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Casino summary: the optimizer's play probability and objective next to
/// the dense closed-form sweep.
#[derive(Debug, Clone, Serialize)]
pub struct CasinoSummary {
    pub pi_star: f64,
    pub objective: f64,
    pub sweep_best_pi: f64,
    pub sweep_best_value: f64,
    pub sweep_value_at_always_play: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Sweep the closed-form mixture value over 1001 play probabilities and run
/// the gradient optimizer on the two-model casino.
pub fn cmd_casino(config: &ExperimentConfig, opts: &RunOptions) -> Result<CasinoSummary> {
    let seed = opts.resolve_seed(config);
    let (win_reward, discount) = match config.environment {
        EnvironmentConfig::Casino { win_reward, discount } => (win_reward, discount),
        _ => (default_casino_reward(), default_casino_discount()),
    };
    let (mixture, skeleton) = build_casino(win_reward, discount)?;

    #[derive(Serialize)]
    struct CurveRow {
        pi: f64,
        value: f64,
    }
    let mut curve = Vec::with_capacity(1001);
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..=1000 {
        let pi = i as f64 / 1000.0;
        let value = casino_mixture_value(pi, win_reward, discount);
        if value > best.1 {
            best = (pi, value);
        }
        curve.push(CurveRow { pi, value });
    }
    write_csv(&opts.out.join("casino_curve.csv"), &curve)?;

    let init = StochasticPolicy::uniform(&skeleton.allowed_actions)?;
    let (policy, trace) =
        optimize_policy(&mixture, &skeleton, &init, &config.optimizer.to_config(seed))?;
    let pi_star = policy.probs()[[crate::envs::CASINO_PLAY_STATE, crate::envs::CASINO_ACTION_PLAY]];
    let summary = CasinoSummary {
        pi_star,
        objective: casino_mixture_value(pi_star, win_reward, discount),
        sweep_best_pi: best.0,
        sweep_best_value: best.1,
        sweep_value_at_always_play: casino_mixture_value(1.0, win_reward, discount),
        steps: trace.steps,
        converged: trace.converged,
    };
    write_csv(&opts.out.join("casino_summary.csv"), &[summary.clone()])?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaSummary {
    pub selected_alpha: f64,
    pub selected_nll: f64,
    pub n_records: usize,
}

/// Marginal-likelihood curve over the prior concentration and the selected
/// minimizer, for a dataset file or a generated environment dataset.
pub fn cmd_alpha(config: &ExperimentConfig, opts: &RunOptions) -> Result<AlphaSummary> {
    let seed = opts.resolve_seed(config);
    let data = match &config.environment {
        EnvironmentConfig::Dataset { path, n_states, n_actions } => {
            read_dataset(Path::new(path), *n_states, *n_actions)?
        }
        EnvironmentConfig::Gridworld(spec) => {
            let model = build_gridworld(spec)?;
            let n = config.experiment.dataset_sizes.iter().copied().max().unwrap_or(0);
            sample_dataset_uniform(&model, n, seed)
        }
        EnvironmentConfig::Synthetic(spec) => {
            let model = build_synthetic_mdp(&SyntheticSpec { seed, ..*spec })?;
            sample_dataset_per_sa(&model, config.experiment.visits_per_sa, seed)
        }
        EnvironmentConfig::Casino { .. } => {
            return Err(Error::Config("alpha needs transition data, not the casino".into()))
        }
    };
    let counts = count_transitions(&data);
    let allowed = Array2::from_elem((data.n_states, data.n_actions), true);

    #[derive(Serialize)]
    struct CurveRow {
        alpha: f64,
        nll: f64,
    }
    let points = 200;
    let (lo, hi) = ALPHA_RANGE;
    let mut curve = Vec::with_capacity(points);
    for i in 0..points {
        let t = lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (points - 1) as f64;
        let alpha = t.exp();
        curve.push(CurveRow { alpha, nll: evidence_nll(&counts, alpha, &allowed)? });
    }
    write_csv(&opts.out.join("alpha_curve.csv"), &curve)?;

    let selected = select_alpha(&counts, &allowed, ALPHA_RANGE)?;
    let summary = AlphaSummary {
        selected_alpha: selected,
        selected_nll: evidence_nll(&counts, selected, &allowed)?,
        n_records: data.len(),
    };
    write_csv(&opts.out.join("alpha_summary.csv"), &[summary.clone()])?;
    Ok(summary)
}

/// Wall-clock grid for the optimizer across state-space sizes, batch sizes,
/// and resampling on/off. Desk scale times 100 steps; `--full-scale` times
/// the full 1000.
pub fn cmd_bench(config: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<BenchRow>> {
    let seed = opts.resolve_seed(config);
    let steps = if opts.full_scale { 1000 } else { 100 };
    let mut grid: Vec<(usize, usize)> = vec![(10, 5), (50, 5), (200, 5)];
    if opts.full_scale {
        grid.push((752, 25));
    }
    let mut rows = Vec::new();
    for (n_states, n_actions) in grid {
        let spec = SyntheticSpec { n_states, n_actions, discount: 0.95, seed };
        let model = build_synthetic_mdp(&spec)?;
        let data = sample_dataset_per_sa(&model, 1, seed);
        let counts = count_transitions(&data);
        // Sparse prior keeps large-instance samples row-compressed.
        let prior = PriorSpec::sparse_conservative(config.prior.alpha, 0);
        let posterior = build_posterior(&counts, &prior, 0)?;
        let skeleton = model.skeleton();
        let init = StochasticPolicy::uniform(&skeleton.allowed_actions)?;
        for &batch in &[8usize, 256] {
            for &resample in &[1usize, 0] {
                let opt = OptimizerConfig {
                    batch_size: batch,
                    learning_rate: config.optimizer.learning_rate,
                    max_steps: steps,
                    resample_period: resample,
                    convergence_window: 1,
                    convergence_tol: 0.0,
                    seed,
                };
                let start = Instant::now();
                optimize_policy(&posterior, &skeleton, &init, &opt)?;
                rows.push(BenchRow {
                    n_states,
                    batch,
                    resample,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    write_csv(&opts.out.join("bench.csv"), &rows)?;
    Ok(rows)
}
