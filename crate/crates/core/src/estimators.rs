//! Trajectory sampling, the truncated (DAE) and doubly discounted (DD) REINFORCE
//! estimators, and their exact first and second moments.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::truncation_length;
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, pairwise_sum_matrices};
use crate::mdp::{Mdp, StationaryPolicy};
use crate::softmax::{policy_from_params, regularizer, SoftmaxParams};
use crate::values::{state_marginals, truncated_q_tables};

/// Default cap on the number of enumerated trajectories.
pub const ENUMERATION_CAP: u128 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `Σ_{h' ≥ h} γ^{h'−h} r_{h'}` for every `h`.
    pub fn discounted_returns(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut acc = 0.0;
        for h in (0..self.len()).rev() {
            acc = self.rewards[h] + gamma * acc;
            out[h] = acc;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Dae,
    Dd,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Dae => "dae",
            Estimator::Dd => "dd",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dae" => Ok(Estimator::Dae),
            "dd" => Ok(Estimator::Dd),
            other => Err(Error::InvalidParameter(format!("unknown estimator {other:?}, expected dae or dd"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub gamma: f64,
    /// Fraction of the horizon whose scores enter the truncated estimator.
    pub beta: f64,
    pub horizon: usize,
    pub batch: usize,
    /// Per-state baseline `b(s)`.
    pub baseline: Vec<f64>,
}

impl EstimatorConfig {
    /// Zero baseline.
    pub fn new(gamma: f64, beta: f64, horizon: usize, batch: usize, num_states: usize) -> Result<Self> {
        Self::with_baseline(gamma, beta, horizon, batch, vec![0.0; num_states])
    }

    pub fn with_baseline(gamma: f64, beta: f64, horizon: usize, batch: usize, baseline: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("discount {gamma} outside [0, 1]")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParameter(format!("truncation fraction {beta} outside (0, 1)")));
        }
        if horizon == 0 || batch == 0 {
            return Err(Error::InvalidParameter("horizon and batch size must be at least 1".into()));
        }
        if baseline.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter("non-finite baseline".into()));
        }
        Ok(EstimatorConfig { gamma, beta, horizon, batch, baseline })
    }

    /// `B = max_s |b(s)|`.
    pub fn baseline_bound(&self) -> f64 {
        self.baseline.iter().fold(0.0, |m, b| m.max(b.abs()))
    }

    /// Number of leading steps whose scores the truncated estimator keeps.
    pub fn truncation(&self) -> Result<usize> {
        match truncation_length(self.beta, self.horizon) {
            0 => Err(Error::InvalidParameter(format!(
                "truncation ⌊{}·{}⌋ is zero; raise the horizon or the fraction",
                self.beta, self.horizon
            ))),
            t => Ok(t),
        }
    }

    fn check(&self, mdp: &Mdp) -> Result<()> {
        if self.baseline.len() != mdp.num_states() {
            return Err(Error::Dimension(format!(
                "baseline has {} entries, model has {} states",
                self.baseline.len(),
                mdp.num_states()
            )));
        }
        Ok(())
    }

    /// Per-step score weights; zero past the truncation for DAE.
    fn weights(&self, which: Estimator) -> Result<Vec<f64>> {
        Ok(match which {
            Estimator::Dae => {
                let t = self.truncation()?;
                (0..self.horizon).map(|h| if h < t { 1.0 / t as f64 } else { 0.0 }).collect()
            }
            Estimator::Dd => {
                let mut w = Vec::with_capacity(self.horizon);
                let mut g = 1.0;
                for _ in 0..self.horizon {
                    w.push(g);
                    g *= self.gamma;
                }
                w
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub g: DMatrix<f64>,
    pub batch: usize,
    pub seed: u64,
}

/// Counter-based generator for trajectory `index` of `iteration` under `seed`.
pub fn trajectory_rng(seed: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 32 && iteration < 1 << 32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 32) | index);
    rng
}

fn draw<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub fn sample_trajectory_with<R: Rng>(mdp: &Mdp, pi: &StationaryPolicy, horizon: usize, rng: &mut R) -> Trajectory {
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = draw(rng, mdp.rho().iter().copied());
    for h in 0..horizon {
        let a = draw(rng, (0..mdp.num_actions()).map(|a| pi.prob(s, a)));
        states.push(s);
        actions.push(a);
        rewards.push(mdp.reward(s, a));
        if h + 1 < horizon {
            s = draw(rng, (0..mdp.num_states()).map(|t| mdp.prob(s, a, t)));
        }
    }
    Trajectory { states, actions, rewards }
}

/// One trajectory, reproducible from `seed`.
pub fn sample_trajectory(mdp: &Mdp, pi: &StationaryPolicy, horizon: usize, seed: u64) -> Result<Trajectory> {
    pi.check_shape(mdp)?;
    Ok(sample_trajectory_with(mdp, pi, horizon, &mut trajectory_rng(seed, 0, 0)))
}

/// `n` trajectories for one iteration, sampled in parallel and returned in index order.
pub fn sample_batch(
    mdp: &Mdp,
    pi: &StationaryPolicy,
    horizon: usize,
    n: usize,
    seed: u64,
    iteration: u64,
) -> Result<Vec<Trajectory>> {
    pi.check_shape(mdp)?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| sample_trajectory_with(mdp, pi, horizon, &mut trajectory_rng(seed, iteration, i)))
        .collect())
}

/// Adds `weight·(e_a − π(·|s))·target` to row `s` of `out`.
fn add_score(out: &mut DMatrix<f64>, pi: &StationaryPolicy, s: usize, a: usize, scale: f64) {
    for b in 0..out.ncols() {
        let indicator = if a == b { 1.0 } else { 0.0 };
        out[(s, b)] += scale * (indicator - pi.prob(s, b));
    }
}

/// `Σ_h w_h ∇log π(a_h|s_h)(G_h − b(s_h))` for one trajectory, before batch averaging.
fn trajectory_term(pi: &StationaryPolicy, config: &EstimatorConfig, weights: &[f64], tau: &Trajectory) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(pi.num_states(), pi.num_actions());
    let returns = tau.discounted_returns(config.gamma);
    for h in 0..tau.len() {
        if weights[h] == 0.0 {
            continue;
        }
        let s = tau.states[h];
        add_score(&mut out, pi, s, tau.actions[h], weights[h] * (returns[h] - config.baseline[s]));
    }
    out
}

fn check_batch(mdp: &Mdp, config: &EstimatorConfig, trajectories: &[Trajectory]) -> Result<()> {
    config.check(mdp)?;
    if trajectories.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    if let Some(t) = trajectories.iter().find(|t| t.len() != config.horizon) {
        return Err(Error::Dimension(format!("trajectory of length {} for horizon {}", t.len(), config.horizon)));
    }
    Ok(())
}

/// Batch estimate of either kind; the batch size is `trajectories.len()`.
pub fn estimate(
    mdp: &Mdp,
    params: &SoftmaxParams,
    config: &EstimatorConfig,
    which: Estimator,
    trajectories: &[Trajectory],
) -> Result<DMatrix<f64>> {
    check_batch(mdp, config, trajectories)?;
    let weights = config.weights(which)?;
    let pi = policy_from_params(params)?;
    let terms: Vec<DMatrix<f64>> =
        trajectories.par_iter().map(|tau| trajectory_term(&pi, config, &weights, tau)).collect();
    let sum = pairwise_sum_matrices(&terms).expect("batch is non-empty");
    let (_, grad_omega) = regularizer(params)?;
    Ok(sum / trajectories.len() as f64 + grad_omega)
}

/// `(1/(N⌊βH⌋)) Σ_i Σ_{h<⌊βH⌋} ∇log π(a_h|s_h)(G_h − b(s_h)) + ∇Ω`.
pub fn dae_estimator(
    mdp: &Mdp,
    params: &SoftmaxParams,
    config: &EstimatorConfig,
    trajectories: &[Trajectory],
) -> Result<DMatrix<f64>> {
    estimate(mdp, params, config, Estimator::Dae, trajectories)
}

/// `(1/N) Σ_i Σ_h γ^h ∇log π(a_h|s_h)(G_h − b(s_h)) + ∇Ω`.
pub fn dd_estimator(
    mdp: &Mdp,
    params: &SoftmaxParams,
    config: &EstimatorConfig,
    trajectories: &[Trajectory],
) -> Result<DMatrix<f64>> {
    estimate(mdp, params, config, Estimator::Dd, trajectories)
}

/// Samples `config.batch` trajectories for `iteration` and returns the estimate.
pub fn sample_estimate(
    mdp: &Mdp,
    params: &SoftmaxParams,
    config: &EstimatorConfig,
    which: Estimator,
    seed: u64,
    iteration: u64,
) -> Result<GradEstimate> {
    config.check(mdp)?;
    config.weights(which)?;
    let pi = policy_from_params(params)?;
    let batch = sample_batch(mdp, &pi, config.horizon, config.batch, seed, iteration)?;
    Ok(GradEstimate { g: estimate(mdp, params, config, which, &batch)?, batch: config.batch, seed })
}

/// Analytic `E[ĝ]` or `E[g̃]` from step marginals and truncated return tables.
pub fn exact_estimator_expectation(
    mdp: &Mdp,
    params: &SoftmaxParams,
    config: &EstimatorConfig,
    which: Estimator,
) -> Result<DMatrix<f64>> {
    config.check(mdp)?;
    let weights = config.weights(which)?;
    let pi = policy_from_params(params)?;
    let last = weights.iter().rposition(|&w| w != 0.0).map_or(0, |h| h + 1);
    let marginals = state_marginals(mdp, &pi, last)?;
    let tables = truncated_q_tables(mdp, &pi, config.gamma, config.horizon)?;
    let mut out = DMatrix::zeros(mdp.num_states(), mdp.num_actions());
    for h in 0..last {
        for s in 0..mdp.num_states() {
            let mass = weights[h] * marginals[h][s];
            if mass == 0.0 {
                continue;
            }
            for a in 0..mdp.num_actions() {
                let p = pi.prob(s, a);
                if p > 0.0 {
                    add_score(&mut out, &pi, s, a, mass * p * (tables[h][(s, a)] - config.baseline[s]));
                }
            }
        }
    }
    let (_, grad_omega) = regularizer(params)?;
    Ok(out + grad_omega)
}

/// Every positive-probability trajectory with its probability, depth first.
pub fn enumerate_trajectories(
    mdp: &Mdp,
    pi: &StationaryPolicy,
    horizon: usize,
    cap: u128,
) -> Result<Vec<(f64, Trajectory)>> {
    pi.check_shape(mdp)?;
    let branching = (mdp.num_states() * mdp.num_actions()) as u128;
    let count = (0..horizon).try_fold(1u128, |acc, _| acc.checked_mul(branching)).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::CapExceeded { count, cap });
    }
    let mut out = Vec::new();
    let mut path = Trajectory { states: Vec::new(), actions: Vec::new(), rewards: Vec::new() };
    for s in 0..mdp.num_states() {
        let p = mdp.rho()[s];
        if p > 0.0 {
            expand(mdp, pi, horizon, s, p, &mut path, &mut out);
        }
    }
    Ok(out)
}

fn expand(
    mdp: &Mdp,
    pi: &StationaryPolicy,
    horizon: usize,
    s: usize,
    prob: f64,
    path: &mut Trajectory,
    out: &mut Vec<(f64, Trajectory)>,
) {
    for a in 0..mdp.num_actions() {
        let pa = prob * pi.prob(s, a);
        if pa == 0.0 {
            continue;
        }
        path.states.push(s);
        path.actions.push(a);
        path.rewards.push(mdp.reward(s, a));
        if path.len() == horizon {
            out.push((pa, path.clone()));
        } else {
            for t in 0..mdp.num_states() {
                let pt = mdp.prob(s, a, t);
                if pt > 0.0 {
                    expand(mdp, pi, horizon, t, pa * pt, path, out);
                }
            }
        }
        path.states.pop();
        path.actions.pop();
        path.rewards.pop();
    }
}

/// `E‖g‖₂²` of the single-trajectory estimator by full enumeration.
pub fn exact_second_moment(
    mdp: &Mdp,
    params: &SoftmaxParams,
    config: &EstimatorConfig,
    which: Estimator,
) -> Result<f64> {
    exact_second_moment_with_cap(mdp, params, config, which, ENUMERATION_CAP)
}

pub fn exact_second_moment_with_cap(
    mdp: &Mdp,
    params: &SoftmaxParams,
    config: &EstimatorConfig,
    which: Estimator,
    cap: u128,
) -> Result<f64> {
    config.check(mdp)?;
    let weights = config.weights(which)?;
    let pi = policy_from_params(params)?;
    let (_, grad_omega) = regularizer(params)?;
    let paths = enumerate_trajectories(mdp, &pi, config.horizon, cap)?;
    let terms: Vec<f64> = paths
        .par_iter()
        .map(|(p, tau)| p * (trajectory_term(&pi, config, &weights, tau) + &grad_omega).norm_squared())
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Monte Carlo estimate of `E‖g‖₂²` (single trajectory) with its standard error.
pub fn monte_carlo_second_moment(
    mdp: &Mdp,
    params: &SoftmaxParams,
    config: &EstimatorConfig,
    which: Estimator,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    config.check(mdp)?;
    let weights = config.weights(which)?;
    let pi = policy_from_params(params)?;
    let (_, grad_omega) = regularizer(params)?;
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let draws: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let tau = sample_trajectory_with(mdp, &pi, config.horizon, &mut trajectory_rng(seed, 0, i));
            (trajectory_term(&pi, config, &weights, &tau) + &grad_omega).norm_squared()
        })
        .collect();
    let n = samples as f64;
    let mean = pairwise_sum(&draws) / n;
    let centered: Vec<f64> = draws.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&centered) / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
