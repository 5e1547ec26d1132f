//! Exact evaluation of finite-horizon, discounted and average-reward quantities.
//!
//! Discounted values carry the `(1 − γ)` normalization, so `V^γ`, `Q^γ` and `A^γ`
//! live on the same scale as per-step rewards. The unnormalized expectations used
//! by the estimators come from [`truncated_discounted_q`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{Mdp, PolicySequence, Setting, StationaryPolicy, ValueReport};
use crate::mixing::deviation_matrix;

/// Q, V and advantage tables of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValues {
    pub q: DMatrix<f64>,
    pub v: DVector<f64>,
    pub adv: DMatrix<f64>,
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("discount {gamma} outside [0, 1)")));
    }
    Ok(())
}

/// `P_π(s, s') = Σ_a π(a|s) p(s'|s, a)`.
pub fn transition_matrix(mdp: &Mdp, pi: &StationaryPolicy) -> Result<DMatrix<f64>> {
    pi.check_shape(mdp)?;
    let n = mdp.num_states();
    let mut p = DMatrix::zeros(n, n);
    for a in 0..mdp.num_actions() {
        let k = mdp.kernel(a);
        for s in 0..n {
            let w = pi.prob(s, a);
            if w != 0.0 {
                for t in 0..n {
                    p[(s, t)] += w * k[(s, t)];
                }
            }
        }
    }
    Ok(p)
}

/// `r_π(s) = Σ_a π(a|s) r(s, a)`.
pub fn reward_vector(mdp: &Mdp, pi: &StationaryPolicy) -> DVector<f64> {
    DVector::from_fn(mdp.num_states(), |s, _| (0..mdp.num_actions()).map(|a| pi.prob(s, a) * mdp.reward(s, a)).sum())
}

/// `p(·|s,a) · v` for every pair.
pub(crate) fn expected_next(mdp: &Mdp, v: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mdp.num_states(), mdp.num_actions());
    for a in 0..mdp.num_actions() {
        out.set_column(a, &(mdp.kernel(a) * v));
    }
    out
}

fn advantage(q: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(q.nrows(), q.ncols(), |s, a| q[(s, a)] - v[s])
}

/// Mean per-step reward over `H` steps of a policy sequence, by forward propagation.
pub fn finite_horizon_value(mdp: &Mdp, seq: &PolicySequence, horizon: usize) -> Result<ValueReport> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if seq.len() != horizon {
        return Err(Error::Dimension(format!("sequence has {} steps, horizon is {horizon}", seq.len())));
    }
    let mut dist = mdp.rho().clone();
    let mut total = 0.0;
    for pi in seq.iter() {
        total += dist.dot(&reward_vector(mdp, pi));
        dist = transition_matrix(mdp, pi)?.transpose() * dist;
    }
    Ok(ValueReport {
        value: total / horizon as f64,
        setting: Setting::FiniteHorizon,
        horizon: Some(horizon),
        gamma: None,
    })
}

/// Finite-horizon value of a stationary policy.
pub fn finite_horizon_value_stationary(mdp: &Mdp, pi: &StationaryPolicy, horizon: usize) -> Result<f64> {
    Ok(finite_horizon_value(mdp, &PolicySequence::stationary(pi, horizon), horizon)?.value)
}

/// `d = (1 − γ) ρ (I − γ P_π)^{-1}`.
pub fn discounted_visitation(mdp: &Mdp, pi: &StationaryPolicy, gamma: f64) -> Result<DVector<f64>> {
    check_gamma(gamma)?;
    let p = transition_matrix(mdp, pi)?;
    let n = mdp.num_states();
    let lhs = DMatrix::identity(n, n) - p * gamma;
    Ok(linalg::solve_left(&lhs, mdp.rho())? * (1.0 - gamma))
}

/// `V^γ(π) = (1 − γ) ρ (I − γ P_π)^{-1} r_π`.
pub fn discounted_value(mdp: &Mdp, pi: &StationaryPolicy, gamma: f64) -> Result<ValueReport> {
    let d = discounted_visitation(mdp, pi, gamma)?;
    Ok(ValueReport {
        value: d.dot(&reward_vector(mdp, pi)),
        setting: Setting::Discounted,
        horizon: None,
        gamma: Some(gamma),
    })
}

pub fn stationary_of(mdp: &Mdp, pi: &StationaryPolicy) -> Result<DVector<f64>> {
    linalg::stationary_distribution(&transition_matrix(mdp, pi)?)
}

/// `η(π) = Σ μ_π(s) π(a|s) r(s, a)`.
pub fn average_reward(mdp: &Mdp, pi: &StationaryPolicy) -> Result<ValueReport> {
    let mu = stationary_of(mdp, pi)?;
    Ok(ValueReport { value: mu.dot(&reward_vector(mdp, pi)), setting: Setting::Average, horizon: None, gamma: None })
}

/// Normalized discounted tables: `V = (1−γ) r_π + γ P_π V`, `Q = (1−γ) r + γ p V`.
pub fn discounted_q_v_a(mdp: &Mdp, pi: &StationaryPolicy, gamma: f64) -> Result<ActionValues> {
    check_gamma(gamma)?;
    let p = transition_matrix(mdp, pi)?;
    let n = mdp.num_states();
    let lhs = DMatrix::identity(n, n) - p * gamma;
    let v = linalg::solve(&lhs, &(reward_vector(mdp, pi) * (1.0 - gamma)))?;
    let q = mdp.rewards() * (1.0 - gamma) + expected_next(mdp, &v) * gamma;
    let adv = advantage(&q, &v);
    Ok(ActionValues { q, v, adv })
}

/// Bias (relative) tables of the average-reward problem.
///
/// With `h = Y r_π` for the deviation matrix `Y`,
/// `Q̄(s,a) = r(s,a) − η + Σ_{s'} p(s'|s,a) h(s')`, `V̄ = Σ_a π Q̄`, `Ā = Q̄ − V̄`.
pub fn bias_q_v_a(mdp: &Mdp, pi: &StationaryPolicy) -> Result<ActionValues> {
    let p = transition_matrix(mdp, pi)?;
    let mu = linalg::stationary_distribution(&p)?;
    let r_pi = reward_vector(mdp, pi);
    let eta = mu.dot(&r_pi);
    let y = deviation_matrix(&p)?;
    let h = &y * &r_pi;
    let q = mdp.rewards().add_scalar(-eta) + expected_next(mdp, &h);
    let v = DVector::from_fn(mdp.num_states(), |s, _| (0..mdp.num_actions()).map(|a| pi.prob(s, a) * q[(s, a)]).sum());
    let adv = advantage(&q, &v);
    Ok(ActionValues { q, v, adv })
}

/// State marginals `ρ P_π^h` for `h = 0, …, H−1`.
pub fn state_marginals(mdp: &Mdp, pi: &StationaryPolicy, horizon: usize) -> Result<Vec<DVector<f64>>> {
    let pt = transition_matrix(mdp, pi)?.transpose();
    let mut out = Vec::with_capacity(horizon);
    let mut dist = mdp.rho().clone();
    for _ in 0..horizon {
        let next = &pt * &dist;
        out.push(dist);
        dist = next;
    }
    Ok(out)
}

/// `w^H(s) = (1/H) Σ_{h<H} [ρ P_π^h]_s`.
pub fn finite_horizon_occupancy(mdp: &Mdp, pi: &StationaryPolicy, horizon: usize) -> Result<DVector<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let marginals = state_marginals(mdp, pi, horizon)?;
    let total = marginals.iter().fold(DVector::zeros(mdp.num_states()), |acc, m| acc + m);
    Ok(total / horizon as f64)
}

/// All tables `E[Σ_{h'=h}^{H−1} γ^{h'−h} r_{h'} | s_h = s, a_h = a]` for `h = 0, …, H−1`.
pub fn truncated_q_tables(mdp: &Mdp, pi: &StationaryPolicy, gamma: f64, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    pi.check_shape(mdp)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("discount {gamma} outside [0, 1]")));
    }
    let mut tables = vec![DMatrix::zeros(0, 0); horizon];
    let mut q = mdp.rewards().clone();
    for h in (0..horizon).rev() {
        if h + 1 < horizon {
            let v = DVector::from_fn(mdp.num_states(), |s, _| {
                (0..mdp.num_actions()).map(|a| pi.prob(s, a) * q[(s, a)]).sum()
            });
            q = mdp.rewards() + expected_next(mdp, &v) * gamma;
        }
        tables[h] = q.clone();
    }
    Ok(tables)
}

/// Unnormalized truncated return table at step `h` of an `H`-step rollout.
pub fn truncated_discounted_q(
    mdp: &Mdp,
    pi: &StationaryPolicy,
    gamma: f64,
    horizon: usize,
    h: usize,
) -> Result<DMatrix<f64>> {
    if h >= horizon {
        return Err(Error::InvalidParameter(format!("step {h} outside 0..{horizon}")));
    }
    let mut tables = truncated_q_tables(mdp, pi, gamma, horizon - h)?;
    Ok(tables.swap_remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{fix1, fix2};
    use approx::assert_abs_diff_eq;

    #[test]
    fn fix2_uniform_transition_is_flat() {
        let m = fix2();
        let p = transition_matrix(&m, &StationaryPolicy::uniform(2, 2)).unwrap();
        for x in p.iter() {
            assert_abs_diff_eq!(*x, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn deterministic_policy_selects_rows() {
        let m = fix2();
        let p = transition_matrix(&m, &StationaryPolicy::deterministic(&[1, 0], 2).unwrap()).unwrap();
        assert_eq!(p.row(0), m.kernel(1).row(0));
        assert_eq!(p.row(1), m.kernel(0).row(1));
    }

    #[test]
    fn fix2_closed_forms_from_state_zero() {
        let m = fix2().with_initial(&[1.0, 0.0]).unwrap();
        let u = StationaryPolicy::uniform(2, 2);
        for h in 1..=12 {
            let v = finite_horizon_value_stationary(&m, &u, h).unwrap();
            assert_abs_diff_eq!(v, 0.5 + 0.5 / h as f64, epsilon = 1e-14);
        }
        for gamma in [0.0, 0.3, 0.9, 0.99] {
            let v = discounted_value(&m, &u, gamma).unwrap().value;
            assert_abs_diff_eq!(v, 0.5 + 0.5 * (1.0 - gamma), epsilon = 1e-13);
        }
        let w = finite_horizon_occupancy(&m, &u, 2).unwrap();
        assert_abs_diff_eq!(w[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(average_reward(&m, &u).unwrap().value, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn single_state_tables() {
        let m = fix1();
        let q = 0.3;
        let pi = StationaryPolicy::from_rows(&[vec![q, 1.0 - q]]).unwrap();
        assert_abs_diff_eq!(average_reward(&m, &pi).unwrap().value, q, epsilon = 1e-15);
        let bias = bias_q_v_a(&m, &pi).unwrap();
        assert_abs_diff_eq!(bias.q[(0, 0)], 1.0 - q, epsilon = 1e-14);
        assert_abs_diff_eq!(bias.q[(0, 1)], -q, epsilon = 1e-14);
        assert_abs_diff_eq!(bias.v[0], 0.0, epsilon = 1e-14);
        let disc = discounted_q_v_a(&m, &pi, 0.0).unwrap();
        assert_abs_diff_eq!(disc.q[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(disc.adv[(0, 1)], -q, epsilon = 1e-15);
    }

    #[test]
    fn truncated_tables_edges() {
        let m = fix2();
        let pi = StationaryPolicy::uniform(2, 2);
        let last = truncated_discounted_q(&m, &pi, 0.7, 5, 4).unwrap();
        assert_eq!(&last, m.rewards());
        let myopic = truncated_discounted_q(&m, &pi, 0.0, 5, 0).unwrap();
        assert_eq!(&myopic, m.rewards());
        assert!(truncated_discounted_q(&m, &pi, 0.7, 5, 5).is_err());
    }

    #[test]
    fn gamma_range_enforced() {
        let m = fix2();
        let pi = StationaryPolicy::uniform(2, 2);
        assert!(discounted_value(&m, &pi, 1.0).is_err());
        assert!(discounted_value(&m, &pi, -0.1).is_err());
    }
}
