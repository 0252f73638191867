//! Ground-truth environments (cliff gridworld, random synthetic MDPs, the
//! two-model casino), offline dataset generation, and Monte Carlo rollout
//! evaluation against a known model.

use ndarray::{Array1, Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bayes::{TensorMixture, TransitionDataset};
use crate::mdp::{MdpModel, ModelSkeleton, StochasticPolicy};
use crate::{Error, Result};

/// Grid actions in index order.
pub const GRID_ACTIONS: [&str; 4] = ["up", "down", "left", "right"];

/// Cliff-walking gridworld. Cells are `(x, y)` with `y` growing downward;
/// the state index of a cell is `y * width + x` and one extra zero-reward
/// absorbing sink is appended at index `width * height`.
///
/// Wind pushes the agent down one cell (boundary-clamped) with probability
/// `p_rand` regardless of the chosen action.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub cliff_cells: Vec<(usize, usize)>,
    pub goal_cell: (usize, usize),
    /// Probe cell for uncertainty reporting; one row above the cliff by
    /// default.
    pub star_cell: (usize, usize),
    pub p_rand: f64,
    pub discount: f64,
    pub goal_reward: f64,
    pub cliff_reward: f64,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self {
            width: 4,
            height: 3,
            cliff_cells: vec![(0, 2), (1, 2), (2, 2)],
            goal_cell: (3, 2),
            // Above the last cliff cell, where every route to the goal is
            // still exposed to the wind. Cells further from the goal let
            // high-noise optimal policies detour through the top row, which
            // suppresses the aleatoric-vs-noise ordering at the probe.
            star_cell: (2, 1),
            p_rand: 0.0,
            discount: 0.999,
            goal_reward: 1.0,
            cliff_reward: -1.0,
        }
    }
}

impl GridworldSpec {
    pub fn n_states(&self) -> usize {
        self.width * self.height + 1
    }

    pub fn sink_state(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_index(&self, cell: (usize, usize)) -> usize {
        cell.1 * self.width + cell.0
    }

    pub fn star_state(&self) -> usize {
        self.cell_index(self.star_cell)
    }

    pub fn is_terminal(&self, cell: (usize, usize)) -> bool {
        cell == self.goal_cell || self.cliff_cells.contains(&cell)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("grid must be non-empty".into()));
        }
        let in_bounds = |c: (usize, usize)| c.0 < self.width && c.1 < self.height;
        if !in_bounds(self.goal_cell) || !in_bounds(self.star_cell) {
            return Err(Error::Invalid("goal or star cell out of bounds".into()));
        }
        for &c in &self.cliff_cells {
            if !in_bounds(c) {
                return Err(Error::Invalid(format!("cliff cell {c:?} out of bounds")));
            }
            if c == self.goal_cell {
                return Err(Error::Invalid("goal cell overlaps a cliff cell".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.p_rand) {
            return Err(Error::Invalid(format!("p_rand must be in [0, 1], got {}", self.p_rand)));
        }
        let n_nonterminal = (0..self.width)
            .flat_map(|x| (0..self.height).map(move |y| (x, y)))
            .filter(|&c| !self.is_terminal(c))
            .count();
        if n_nonterminal == 0 {
            return Err(Error::Invalid("grid has no non-terminal cell".into()));
        }
        Ok(())
    }
}

/// Concrete gridworld MDP with the absorbing-sink terminal convention.
pub fn build_gridworld(spec: &GridworldSpec) -> Result<MdpModel> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let n = spec.n_states();
    let sink = spec.sink_state();
    let m = 4;
    let mut reward = Array1::zeros(n);
    let mut transitions = Array3::zeros((n, m, n));
    let mut initial = Array1::zeros(n);
    // Action deltas aligned with GRID_ACTIONS.
    let moves: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];
    let clamp_move = |cell: (usize, usize), d: (isize, isize)| -> (usize, usize) {
        let x = (cell.0 as isize + d.0).clamp(0, w as isize - 1) as usize;
        let y = (cell.1 as isize + d.1).clamp(0, h as isize - 1) as usize;
        (x, y)
    };
    let mut n_start = 0usize;
    for y in 0..h {
        for x in 0..w {
            let cell = (x, y);
            let s = spec.cell_index(cell);
            if spec.is_terminal(cell) {
                reward[s] = if cell == spec.goal_cell { spec.goal_reward } else { spec.cliff_reward };
                for a in 0..m {
                    transitions[[s, a, sink]] = 1.0;
                }
                continue;
            }
            n_start += 1;
            initial[s] = 1.0;
            let pushed = spec.cell_index(clamp_move(cell, (0, 1)));
            for (a, &d) in moves.iter().enumerate() {
                let target = spec.cell_index(clamp_move(cell, d));
                transitions[[s, a, target]] += 1.0 - spec.p_rand;
                transitions[[s, a, pushed]] += spec.p_rand;
            }
        }
    }
    for a in 0..m {
        transitions[[sink, a, sink]] = 1.0;
    }
    initial /= n_start as f64;
    MdpModel::new(
        reward,
        spec.discount,
        initial,
        transitions,
        Array2::from_elem((n, m), true),
    )
}

/// Fixed seed for the synthetic reward vector; the same rewards are shared
/// by every synthetic instance so per-seed variation comes from dynamics
/// alone.
const SYNTHETIC_REWARD_SEED: u64 = 0x5eed_4e44;

/// Random dense MDP family: flat-Dirichlet dynamics per state-action and a
/// standard-normal state reward vector held constant across seeds.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_states: 5, n_actions: 5, discount: 0.95, seed: 0 }
    }
}

/// Shared synthetic reward vector for a given state count.
pub fn synthetic_rewards(n_states: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(SYNTHETIC_REWARD_SEED);
    Array1::from_iter((0..n_states).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn build_synthetic_mdp(spec: &SyntheticSpec) -> Result<MdpModel> {
    let (n, m) = (spec.n_states, spec.n_actions);
    if n == 0 || m == 0 {
        return Err(Error::Invalid("synthetic spec needs states and actions".into()));
    }
    let reward = synthetic_rewards(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut transitions = Array3::zeros((n, m, n));
    for s in 0..n {
        for a in 0..m {
            // Dirichlet(1, ..., 1) by normalized Exp(1) draws.
            let mut total = 0.0;
            let mut row = vec![0.0; n];
            for p in row.iter_mut() {
                let e: f64 = -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln();
                *p = e;
                total += e;
            }
            for (sp, p) in row.into_iter().enumerate() {
                transitions[[s, a, sp]] = p / total;
            }
        }
    }
    let initial = Array1::from_elem(n, 1.0 / n as f64);
    MdpModel::new(
        reward,
        spec.discount,
        initial,
        transitions,
        Array2::from_elem((n, m), true),
    )
}

/// Casino state indices.
pub const CASINO_PLAY_STATE: usize = 0;
pub const CASINO_WIN_STATE: usize = 1;
pub const CASINO_SINK_STATE: usize = 2;
/// Casino action indices.
pub const CASINO_ACTION_PLAY: usize = 0;
pub const CASINO_ACTION_LEAVE: usize = 1;

/// The two-model casino: three states (play table, win, sink), two actions
/// (play, leave). Reward is -1 at the table, `r_win` on a win, 0 at the
/// sink. The unknown losing probability is either 0 or 1 with equal weight,
/// giving a two-component model mixture:
/// losing (`theta = 1`) loops playing back to the table, winning
/// (`theta = 0`) sends a play to the win state. Leaving always ends the
/// game.
pub fn build_casino(r_win: f64, discount: f64) -> Result<(TensorMixture, ModelSkeleton)> {
    if !(r_win > 0.0) {
        return Err(Error::Invalid(format!("win reward must be positive, got {r_win}")));
    }
    if !(0.0 < discount && discount < 1.0) {
        return Err(Error::Invalid(format!("discount must be in (0, 1), got {discount}")));
    }
    let n = 3;
    let m = 2;
    let mut lose = Array3::zeros((n, m, n));
    lose[[CASINO_PLAY_STATE, CASINO_ACTION_PLAY, CASINO_PLAY_STATE]] = 1.0;
    let mut win = Array3::zeros((n, m, n));
    win[[CASINO_PLAY_STATE, CASINO_ACTION_PLAY, CASINO_WIN_STATE]] = 1.0;
    for t in [&mut lose, &mut win] {
        t[[CASINO_PLAY_STATE, CASINO_ACTION_LEAVE, CASINO_SINK_STATE]] = 1.0;
        for a in 0..m {
            t[[CASINO_WIN_STATE, a, CASINO_SINK_STATE]] = 1.0;
            t[[CASINO_SINK_STATE, a, CASINO_SINK_STATE]] = 1.0;
        }
    }
    let allowed = Array2::from_elem((n, m), true);
    let mixture = TensorMixture::new(vec![lose, win], allowed.clone())?;
    let skeleton = ModelSkeleton {
        reward: Array1::from_vec(vec![-1.0, r_win, 0.0]),
        discount,
        initial_dist: Array1::from_vec(vec![1.0, 0.0, 0.0]),
        allowed_actions: allowed,
    };
    Ok((mixture, skeleton))
}

/// Closed-form mixture value of playing with probability `pi` at the table:
/// the equal-weight average of `-1/(1 - gamma pi)` (losing model) and
/// `-1 + gamma pi R` (winning model).
pub fn casino_mixture_value(pi: f64, r_win: f64, discount: f64) -> f64 {
    0.5 * (-1.0 / (1.0 - discount * pi) + (-1.0 + discount * pi * r_win))
}

/// Uniform exploration dataset: each record spawns at a uniform state drawn
/// from the support of the initial distribution, takes a uniform allowed
/// action, and records the sampled next state.
///
/// Records are generated sequentially from one seeded stream, so for a fixed
/// seed the size-`n` dataset is a prefix of any larger one.
pub fn sample_dataset_uniform(model: &MdpModel, n_transitions: usize, seed: u64) -> TransitionDataset {
    let support: Vec<usize> = model
        .initial_dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, _)| s)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_transitions);
    for _ in 0..n_transitions {
        let s = support[rng.gen_range(0..support.len())];
        let actions: Vec<usize> = (0..model.n_actions())
            .filter(|&a| model.allowed_actions[[s, a]])
            .collect();
        let a = actions[rng.gen_range(0..actions.len())];
        let sp = sample_row(&mut rng, |j| model.transitions[[s, a, j]], model.n_states());
        records.push((s, a, sp));
    }
    TransitionDataset {
        n_states: model.n_states(),
        n_actions: model.n_actions(),
        records,
    }
}

/// Census dataset: exactly `visits_per_sa` sampled outcomes for every
/// allowed state-action pair, in state-major order.
pub fn sample_dataset_per_sa(model: &MdpModel, visits_per_sa: usize, seed: u64) -> TransitionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for s in 0..model.n_states() {
        for a in 0..model.n_actions() {
            if !model.allowed_actions[[s, a]] {
                continue;
            }
            for _ in 0..visits_per_sa {
                let sp = sample_row(&mut rng, |j| model.transitions[[s, a, j]], model.n_states());
                records.push((s, a, sp));
            }
        }
    }
    TransitionDataset {
        n_states: model.n_states(),
        n_actions: model.n_actions(),
        records,
    }
}

fn sample_row(rng: &mut ChaCha8Rng, prob: impl Fn(usize) -> f64, n: usize) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for j in 0..n {
        acc += prob(j);
        if u < acc {
            return j;
        }
    }
    // Float round-off: fall back to the last positive-probability entry.
    (0..n).rev().find(|&j| prob(j) > 0.0).unwrap_or(n - 1)
}

/// Monte Carlo policy evaluation on a known model: `n_episodes` truncated
/// rollouts of `horizon` steps from the initial distribution. Each episode
/// runs on its own RNG substream, so results are independent of episode
/// batching. Returns the mean discounted return and its standard error.
pub fn rollout_return(
    model: &MdpModel,
    policy: &StochasticPolicy,
    horizon: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    if n_episodes == 0 {
        return Err(Error::Parameter("need at least one episode".into()));
    }
    let probs = policy.probs();
    if probs.dim() != (model.n_states(), model.n_actions()) {
        return Err(Error::Dimension("policy shape does not match model".into()));
    }
    let n = model.n_states();
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for ep in 0..n_episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ep as u64);
        let mut s = sample_row(&mut rng, |j| model.initial_dist[j], n);
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            ret += disc * model.reward[s];
            disc *= model.discount;
            let a = sample_row(&mut rng, |j| probs[[s, j]], model.n_actions());
            s = sample_row(&mut rng, |j| model.transitions[[s, a, j]], n);
        }
        let count = (ep + 1) as f64;
        let delta = ret - mean;
        mean += delta / count;
        m2 += delta * (ret - mean);
    }
    let se = if n_episodes > 1 {
        (m2 / (n_episodes - 1) as f64 / n_episodes as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}
