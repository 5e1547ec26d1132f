//! Softmax policies, the log-barrier regularizer, exact objective gradients,
//! smoothness constants and gradient-domination certificates.

use nalgebra::DMatrix;

use crate::dp::{discounted_optimal, relative_value_iteration};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, StationaryPolicy};
use crate::mixing::MixingConstants;
use crate::values::{average_reward, bias_q_v_a, check_gamma, discounted_q_v_a, discounted_visitation, stationary_of};

/// Logits are clipped to `[-LOGIT_CLIP, LOGIT_CLIP]` before exponentiation.
pub const LOGIT_CLIP: f64 = 500.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxParams {
    pub theta: DMatrix<f64>,
    pub lambda: f64,
}

impl SoftmaxParams {
    pub fn new(theta: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite logit".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("regularization weight {lambda} must be finite and ≥ 0")));
        }
        Ok(SoftmaxParams { theta, lambda })
    }

    pub fn zeros(num_states: usize, num_actions: usize, lambda: f64) -> Self {
        SoftmaxParams { theta: DMatrix::zeros(num_states, num_actions), lambda }
    }

    pub fn with_theta(&self, theta: DMatrix<f64>) -> Self {
        SoftmaxParams { theta, lambda: self.lambda }
    }

    fn check_shape(&self, mdp: &Mdp) -> Result<()> {
        if self.theta.shape() != (mdp.num_states(), mdp.num_actions()) {
            return Err(Error::Dimension(format!(
                "logits are {:?}, model is {}x{}",
                self.theta.shape(),
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

fn clipped(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("non-finite logit".into()));
    }
    if theta.iter().any(|x| x.abs() > LOGIT_CLIP) {
        log::warn!("logits beyond ±{LOGIT_CLIP} clipped");
        return Ok(theta.map(|x| x.clamp(-LOGIT_CLIP, LOGIT_CLIP)));
    }
    Ok(theta.clone())
}

/// `log π_θ(a|s)` with row-max stabilization.
pub fn log_policy(params: &SoftmaxParams) -> Result<DMatrix<f64>> {
    let theta = clipped(&params.theta)?;
    let mut out = theta.clone();
    for s in 0..theta.nrows() {
        let row = theta.row(s);
        let top = row.max();
        let lse = top + row.iter().map(|x| (x - top).exp()).sum::<f64>().ln();
        out.row_mut(s).apply(|x| *x -= lse);
    }
    Ok(out)
}

pub fn policy_from_params(params: &SoftmaxParams) -> Result<StationaryPolicy> {
    let theta = clipped(&params.theta)?;
    let mut probs = theta.clone();
    for s in 0..theta.nrows() {
        let top = theta.row(s).max();
        probs.row_mut(s).apply(|x| *x = (*x - top).exp());
        let total = probs.row(s).sum();
        probs.row_mut(s).apply(|x| *x /= total);
    }
    Ok(StationaryPolicy::from_matrix_unchecked(probs))
}

/// `Ω = (λ/SA) Σ log π_θ(a|s)` and `∂Ω/∂θ_{s,a} = λ/(SA) − (λ/S) π_θ(a|s)`.
pub fn regularizer(params: &SoftmaxParams) -> Result<(f64, DMatrix<f64>)> {
    let (ns, na) = params.theta.shape();
    let scale = params.lambda / (ns * na) as f64;
    let value = scale * log_policy(params)?.sum();
    let pi = policy_from_params(params)?;
    let grad = pi.probs().map(|p| scale - params.lambda / ns as f64 * p);
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub value: f64,
    pub gradient: DMatrix<f64>,
}

/// `∂η/∂θ_{s,a} = μ(s) π(a|s) Ā(s,a)`.
pub fn average_reward_gradient(mdp: &Mdp, pi: &StationaryPolicy) -> Result<DMatrix<f64>> {
    let mu = stationary_of(mdp, pi)?;
    let bias = bias_q_v_a(mdp, pi)?;
    Ok(DMatrix::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| mu[s] * pi.prob(s, a) * bias.adv[(s, a)]))
}

/// `∂V^γ/∂θ_{s,a} = d(s) π(a|s) A^γ(s,a) / (1 − γ)` for the normalized `V^γ`, `A^γ`.
pub fn discounted_value_gradient(mdp: &Mdp, pi: &StationaryPolicy, gamma: f64) -> Result<DMatrix<f64>> {
    check_gamma(gamma)?;
    let d = discounted_visitation(mdp, pi, gamma)?;
    let tables = discounted_q_v_a(mdp, pi, gamma)?;
    Ok(DMatrix::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        d[s] * pi.prob(s, a) * tables.adv[(s, a)] / (1.0 - gamma)
    }))
}

/// `L̄(θ) = η(π_θ) + Ω(θ)` and its gradient.
pub fn grad_average_objective(mdp: &Mdp, params: &SoftmaxParams) -> Result<ObjectiveGradient> {
    params.check_shape(mdp)?;
    let pi = policy_from_params(params)?;
    let (omega, grad_omega) = regularizer(params)?;
    let eta = average_reward(mdp, &pi)?.value;
    Ok(ObjectiveGradient { value: eta + omega, gradient: average_reward_gradient(mdp, &pi)? + grad_omega })
}

/// `L^γ(θ) = V^γ(π_θ)/(1 − γ) + Ω(θ)` and its gradient.
pub fn grad_discounted_objective(mdp: &Mdp, params: &SoftmaxParams, gamma: f64) -> Result<ObjectiveGradient> {
    params.check_shape(mdp)?;
    check_gamma(gamma)?;
    let pi = policy_from_params(params)?;
    let (omega, grad_omega) = regularizer(params)?;
    let v = crate::values::discounted_value(mdp, &pi, gamma)?.value;
    let grad_v = discounted_value_gradient(mdp, &pi, gamma)?;
    Ok(ObjectiveGradient { value: v / (1.0 - gamma) + omega, gradient: grad_v / (1.0 - gamma) + grad_omega })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    /// `8/(1−γ)³ + 2λ/S`.
    pub discounted: f64,
    /// `22√S (2C/(1−α) + 1)³ + 2λ/S`.
    pub average: f64,
}

pub fn smoothness_constants(k: &MixingConstants, gamma: f64, lambda: f64, num_states: usize) -> Smoothness {
    let s = num_states as f64;
    let reg = 2.0 * lambda / s;
    Smoothness {
        discounted: 8.0 / (1.0 - gamma).powi(3) + reg,
        average: 22.0 * s.sqrt() * (2.0 * k.mixing_sum() + 1.0).powi(3) + reg,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Average,
    Discounted { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domination {
    pub premise_holds: bool,
    pub grad_norm: f64,
    pub threshold: f64,
    /// Sub-optimality bound implied when the premise holds.
    pub bound: f64,
}

/// Default gradient threshold `λ/(2SA)`.
pub fn domination_threshold(lambda: f64, num_states: usize, num_actions: usize) -> f64 {
    lambda / (2 * num_states * num_actions) as f64
}

/// Sub-optimality certificate from a small gradient.
///
/// Average reward: `λ S ‖μ_{π⋆}‖_∞ / (1−α)`. Discounted:
/// `λ min{‖d⋆/ρ‖_∞, S ‖d⋆‖_∞ / (1−α)}` with `d⋆` the discounted visitation of the
/// greedy optimal policy. `threshold` defaults to `λ/(2SA)`.
pub fn gradient_domination_bound(
    mdp: &Mdp,
    params: &SoftmaxParams,
    objective: Objective,
    k: &MixingConstants,
    threshold: Option<f64>,
) -> Result<Domination> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let threshold = threshold.unwrap_or_else(|| domination_threshold(params.lambda, ns, na));
    let lambda = params.lambda;
    let s = ns as f64;
    let (grad_norm, bound) = match objective {
        Objective::Average => {
            let g = grad_average_objective(mdp, params)?.gradient.norm();
            let best = relative_value_iteration(mdp, 1e-12, 1_000_000)?;
            let mu_star = stationary_of(mdp, &best.policy)?;
            (g, lambda * s * mu_star.max() / (1.0 - k.alpha))
        }
        Objective::Discounted { gamma } => {
            let g = grad_discounted_objective(mdp, params, gamma)?.gradient.norm();
            let best = discounted_optimal(mdp, gamma, 1e-12)?;
            let d = &best.visitation;
            let ratio = d.iter().zip(mdp.rho().iter()).map(|(x, r)| x / r).fold(0.0, f64::max);
            (g, lambda * ratio.min(s * d.max() / (1.0 - k.alpha)))
        }
    };
    Ok(Domination { premise_holds: grad_norm <= threshold, grad_norm, threshold, bound })
}
