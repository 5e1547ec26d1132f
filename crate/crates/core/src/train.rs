//! Gradient ascent on softmax logits with the prescribed regularization weight
//! and step schedule, sampled or exact, with exact diagnostics along the way.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds::{average_gradient_constant, dae_bias, dd_bias, dd_norm_constant, fictitious_discount};
use crate::dp::{discounted_optimal, finite_horizon_optimal, relative_value_iteration};
use crate::error::{Error, Result};
use crate::estimators::{exact_estimator_expectation, sample_estimate, Estimator, EstimatorConfig};
use crate::mdp::Mdp;
use crate::mixing::{mixing_constants, MixingConstants};
use crate::softmax::{
    domination_threshold, grad_average_objective, grad_discounted_objective, gradient_domination_bound,
    policy_from_params, smoothness_constants, Domination, Objective, SoftmaxParams,
};
use crate::values::{average_reward, discounted_value, finite_horizon_value_stationary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Estimator,
    pub horizon: usize,
    /// `γ = 1 − H^{−σ}`.
    pub sigma: f64,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub k_max: usize,
    /// Per-state baseline; empty means zero.
    #[serde(default)]
    pub baseline: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_true")]
    pub stop_on_certificate: bool,
    /// Initial logits; zero (uniform policy) when absent.
    #[serde(default)]
    pub theta0: Option<Vec<Vec<f64>>>,
}

fn default_delta() -> f64 {
    0.1
}

fn default_beta() -> f64 {
    0.5
}

fn default_batch() -> usize {
    16
}

fn default_log_every() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(algorithm: Estimator, horizon: usize, sigma: f64, epsilon: f64, k_max: usize, seed: u64) -> Self {
        TrainConfig {
            algorithm,
            horizon,
            sigma,
            epsilon,
            delta: default_delta(),
            beta: default_beta(),
            batch: default_batch(),
            k_max,
            baseline: Vec::new(),
            seed,
            log_every: default_log_every(),
            stop_on_certificate: true,
            theta0: None,
        }
    }

    pub fn gamma(&self) -> f64 {
        fictitious_discount(self.horizon, self.sigma)
    }

    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.horizon < 2 {
            return bad(format!("horizon {} must be at least 2", self.horizon));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("sigma {} outside (0, 1)", self.sigma));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        if !self.baseline.is_empty() && self.baseline.len() != mdp.num_states() {
            return bad(format!("baseline has {} entries, model has {} states", self.baseline.len(), mdp.num_states()));
        }
        if let Some(rows) = &self.theta0 {
            if rows.len() != mdp.num_states() || rows.iter().any(|r| r.len() != mdp.num_actions()) {
                return bad("theta0 shape does not match the model".into());
            }
        }
        self.estimator_config(mdp)?.truncation().map(|_| ())
    }

    pub fn estimator_config(&self, mdp: &Mdp) -> Result<EstimatorConfig> {
        let baseline = if self.baseline.is_empty() { vec![0.0; mdp.num_states()] } else { self.baseline.clone() };
        EstimatorConfig::with_baseline(self.gamma(), self.beta, self.horizon, self.batch, baseline)
    }

    fn initial_theta(&self, mdp: &Mdp) -> DMatrix<f64> {
        match &self.theta0 {
            Some(rows) => DMatrix::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| rows[s][a]),
            None => DMatrix::zeros(mdp.num_states(), mdp.num_actions()),
        }
    }
}

/// Larger root of `2(G + 2λ)Δ = (λ − ε)²/(4S²A²)`.
///
/// Written as `ε + 8KΔ + √(16KΔε + 64K²Δ² + 8KΔG)` with `K = S²A²`, which avoids the
/// cancellation of the textbook form when `Δ` is tiny.
pub fn lambda_from_quadratic(
    epsilon: f64,
    g_const: f64,
    delta_const: f64,
    num_states: usize,
    num_actions: usize,
) -> f64 {
    let k = ((num_states * num_states) * (num_actions * num_actions)) as f64;
    let kd = k * delta_const;
    let disc = 16.0 * kd * epsilon + 64.0 * kd * kd + 8.0 * kd * g_const;
    assert!(disc >= 0.0, "negative discriminant {disc}");
    epsilon + 8.0 * kd + disc.sqrt()
}

/// `α^k = 1/(2β·√(k+3)·log₂(k+3))`.
pub fn step_schedule(k: usize, beta_smooth: f64) -> f64 {
    let n = (k + 3) as f64;
    1.0 / (2.0 * beta_smooth * n.sqrt() * n.log2())
}

/// Constants fixed before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConstants {
    pub gamma: f64,
    pub lambda: f64,
    /// Bias constant used in the λ equation.
    pub bias: f64,
    /// Gradient-norm constant used in the λ equation.
    pub norm_constant: f64,
    /// Smoothness constant driving the step schedule.
    pub smoothness: f64,
    /// Certified-stop threshold `λ/(2SA)`.
    pub threshold: f64,
}

pub fn training_constants(mdp: &Mdp, config: &TrainConfig, k: &MixingConstants) -> Result<TrainConstants> {
    config.validate(mdp)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = config.gamma();
    let (bias, norm_constant) = match config.algorithm {
        Estimator::Dae => (dae_bias(k, config.horizon, gamma, config.beta), average_gradient_constant(k)),
        Estimator::Dd => {
            let b = config.estimator_config(mdp)?.baseline_bound();
            (dd_bias(config.horizon, gamma), dd_norm_constant(gamma, b))
        }
    };
    let lambda = lambda_from_quadratic(config.epsilon, norm_constant, bias, ns, na);
    let smooth = smoothness_constants(k, gamma, lambda, ns);
    let smoothness = match config.algorithm {
        Estimator::Dae => smooth.average,
        Estimator::Dd => smooth.discounted,
    };
    Ok(TrainConstants {
        gamma,
        lambda,
        bias,
        norm_constant,
        smoothness,
        threshold: domination_threshold(lambda, ns, na),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub grad_norm: f64,
    pub eta_gap: f64,
    pub vh_gap: f64,
    pub vgamma_gap: f64,
    pub best_eta_gap: f64,
    pub best_vh_gap: f64,
    pub best_vgamma_gap: f64,
    pub step_size: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gaps {
    /// Against the upper end of the optimal-gain bracket.
    pub eta: f64,
    pub vh: f64,
    /// Against the upper end of the discounted-optimum bracket.
    pub vgamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub k: usize,
    pub objective: String,
    pub grad_norm: f64,
    pub threshold: f64,
    /// Certified sub-optimality in the optimized setting.
    pub bound: f64,
    pub gaps: Gaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    IterationCap,
    Certified,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub constants: TrainConstants,
    pub mixing: MixingConstants,
    pub stop: StopReason,
    pub certificate: Option<Certificate>,
    /// Iterate with the smallest objective gradient norm and its gaps.
    pub best_k: usize,
    pub best_grad_norm: f64,
    pub best_gaps: Gaps,
    pub best_theta: DMatrix<f64>,
    pub final_theta: DMatrix<f64>,
    /// Last iterate index reached.
    pub last_k: usize,
}

/// Exact optima used by every diagnostic row.
#[derive(Debug, Clone, Copy)]
pub struct Optima {
    pub eta_hi: f64,
    pub vh: f64,
    pub vgamma_hi: f64,
}

impl Optima {
    pub fn compute(mdp: &Mdp, horizon: usize, gamma: f64) -> Result<Self> {
        Ok(Optima {
            eta_hi: relative_value_iteration(mdp, 1e-12, 10_000_000)?.hi,
            vh: finite_horizon_optimal(mdp, horizon)?.value,
            vgamma_hi: discounted_optimal(mdp, gamma, 1e-12)?.hi,
        })
    }

    pub fn gaps(&self, mdp: &Mdp, params: &SoftmaxParams, horizon: usize, gamma: f64) -> Result<Gaps> {
        let pi = policy_from_params(params)?;
        Ok(Gaps {
            eta: self.eta_hi - average_reward(mdp, &pi)?.value,
            vh: self.vh - finite_horizon_value_stationary(mdp, &pi, horizon)?,
            vgamma: self.vgamma_hi - discounted_value(mdp, &pi, gamma)?.value,
        })
    }
}

enum GradientSource {
    Sampled,
    Exact,
}

/// Stochastic training with sampled DAE or DD estimates.
pub fn run_training(mdp: &Mdp, config: &TrainConfig) -> Result<TrainTrace> {
    train(mdp, config, GradientSource::Sampled)
}

/// Training with the estimator's exact expectation in place of the sample.
pub fn run_exact_gradient_training(mdp: &Mdp, config: &TrainConfig) -> Result<TrainTrace> {
    train(mdp, config, GradientSource::Exact)
}

fn objective_gradient(mdp: &Mdp, params: &SoftmaxParams, algorithm: Estimator, gamma: f64) -> Result<DMatrix<f64>> {
    Ok(match algorithm {
        Estimator::Dae => grad_average_objective(mdp, params)?.gradient,
        Estimator::Dd => grad_discounted_objective(mdp, params, gamma)?.gradient,
    })
}

fn objective_of(algorithm: Estimator, gamma: f64) -> Objective {
    match algorithm {
        Estimator::Dae => Objective::Average,
        Estimator::Dd => Objective::Discounted { gamma },
    }
}

fn train(mdp: &Mdp, config: &TrainConfig, source: GradientSource) -> Result<TrainTrace> {
    let start = Instant::now();
    let mixing = mixing_constants(mdp)?;
    let constants = training_constants(mdp, config, &mixing)?;
    let est_config = config.estimator_config(mdp)?;
    let (gamma, horizon) = (constants.gamma, config.horizon);
    let optima = Optima::compute(mdp, horizon, gamma)?;

    let mut params = SoftmaxParams::new(config.initial_theta(mdp), constants.lambda)?;
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut best = (0usize, f64::INFINITY, params.theta.clone());
    let mut stop = StopReason::IterationCap;
    let mut certificate = None;
    let mut last_k = 0;

    for k in 0..=config.k_max {
        last_k = k;
        let grad_norm = objective_gradient(mdp, &params, config.algorithm, gamma)?.norm();
        if grad_norm < best.1 {
            best = (k, grad_norm, params.theta.clone());
        }
        let step = step_schedule(k, constants.smoothness);
        let certified = config.stop_on_certificate && grad_norm <= constants.threshold;
        if k % config.log_every == 0 || k == config.k_max || certified {
            let gaps = optima.gaps(mdp, &params, horizon, gamma)?;
            let prev = rows.last();
            let fold = |g: f64, p: Option<f64>| p.map_or(g, |b: f64| b.min(g));
            rows.push(TraceRow {
                k,
                grad_norm,
                eta_gap: gaps.eta,
                vh_gap: gaps.vh,
                vgamma_gap: gaps.vgamma,
                best_eta_gap: fold(gaps.eta, prev.map(|r| r.best_eta_gap)),
                best_vh_gap: fold(gaps.vh, prev.map(|r| r.best_vh_gap)),
                best_vgamma_gap: fold(gaps.vgamma, prev.map(|r| r.best_vgamma_gap)),
                step_size: step,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
            if certified {
                let dom: Domination = gradient_domination_bound(
                    mdp,
                    &params,
                    objective_of(config.algorithm, gamma),
                    &mixing,
                    Some(constants.threshold),
                )?;
                certificate = Some(Certificate {
                    k,
                    objective: match config.algorithm {
                        Estimator::Dae => "average".into(),
                        Estimator::Dd => "discounted".into(),
                    },
                    grad_norm,
                    threshold: constants.threshold,
                    bound: dom.bound,
                    gaps,
                });
                stop = StopReason::Certified;
                break;
            }
        }
        if k == config.k_max {
            break;
        }
        let g = match source {
            GradientSource::Exact => exact_estimator_expectation(mdp, &params, &est_config, config.algorithm)?,
            GradientSource::Sampled => {
                sample_estimate(mdp, &params, &est_config, config.algorithm, config.seed, k as u64)?.g
            }
        };
        let next = &params.theta + g * step;
        if next.iter().any(|x| !x.is_finite()) {
            log::warn!("non-finite logits after iteration {k}");
            stop = StopReason::Diverged;
            break;
        }
        params = params.with_theta(next);
    }

    let best_params = params.with_theta(best.2.clone());
    let best_gaps = optima.gaps(mdp, &best_params, horizon, gamma)?;
    Ok(TrainTrace {
        rows,
        constants,
        mixing,
        stop,
        certificate,
        best_k: best.0,
        best_grad_norm: best.1,
        best_gaps,
        best_theta: best.2,
        final_theta: params.theta,
        last_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_degenerates_without_bias() {
        assert_eq!(lambda_from_quadratic(0.1, 10.0, 0.0, 2, 2), 0.1);
    }

    #[test]
    fn quadratic_root_satisfies_equation() {
        let (eps, g, d) = (0.1, 10.0, 1e-4);
        let lam = lambda_from_quadratic(eps, g, d, 2, 2);
        let residual = 2.0 * (g + 2.0 * lam) * d - (lam - eps).powi(2) / (4.0 * 16.0);
        assert!(residual.abs() <= 1e-12, "{residual}");
        assert!(lam >= eps);
        assert!(lambda_from_quadratic(eps, g, 2e-4, 2, 2) > lam);
    }

    #[test]
    fn schedule_examples() {
        let beta = 7.0;
        assert_abs_diff_eq!(step_schedule(0, beta), 1.0 / (2.0 * beta * 3f64.sqrt() * 3f64.log2()), epsilon = 1e-18);
        assert_eq!(step_schedule(13, beta), 1.0 / (32.0 * beta));
        assert!((0..1000).all(|k| step_schedule(k, beta) * beta <= 0.5));
        assert!(step_schedule(5, beta) > step_schedule(6, beta));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = TrainConfig::new(Estimator::Dd, 32, 0.5, 0.05, 100, 7);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), cfg);
    }
}
