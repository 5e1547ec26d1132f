//! Uniform mixing constants over deterministic policies, the deviation matrix,
//! and convex decomposition of randomized policies.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, total_variation};
use crate::mdp::{Mdp, StationaryPolicy};
use crate::values::{state_marginals, transition_matrix};

/// Default limit on `A^S` when enumerating deterministic policies.
pub const DEFAULT_POLICY_CAP: u128 = 1_000_000;

/// Odometer over all `A^S` action assignments, last state varying fastest.
#[derive(Debug, Clone)]
pub struct DeterministicPolicies {
    num_actions: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for DeterministicPolicies {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for i in (0..succ.len()).rev() {
            succ[i] += 1;
            if succ[i] < self.num_actions {
                self.next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(current)
    }
}

pub fn policy_count(num_states: usize, num_actions: usize) -> u128 {
    (num_actions as u128).checked_pow(num_states as u32).unwrap_or(u128::MAX)
}

pub fn enumerate_deterministic_policies(
    num_states: usize,
    num_actions: usize,
    cap: u128,
) -> Result<DeterministicPolicies> {
    let count = policy_count(num_states, num_actions);
    if count > cap {
        return Err(Error::CapExceeded { count, cap });
    }
    let next = (num_actions > 0).then(|| vec![0; num_states]);
    Ok(DeterministicPolicies { num_actions, next })
}

/// Policy-uniform mixing and span-contraction constants.
///
/// `alpha_tilde = 1 − S·p_min / n_sa^(m_p − 1)`, `alpha = alpha_tilde^(1/m_p)`,
/// `c = 1/alpha_tilde`; `beta_tilde = 1 − S·p_min`, `beta = beta_tilde^(1/m_p)`,
/// `e = 1/beta_tilde`, `d = 1 + 2·e·m_p·beta/(1 − beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingConstants {
    pub m_p: usize,
    pub p_min: f64,
    pub n_sa: usize,
    pub alpha_tilde: f64,
    pub alpha: f64,
    pub c: f64,
    pub beta_tilde: f64,
    pub beta: f64,
    pub e: f64,
    pub d: f64,
}

/// Contraction factor, its per-step root, and the matching prefactor.
///
/// A zero factor arises only when `S·p_min` saturates its bound. With `m_p = 1`
/// every chain then reaches its limit in one step, so rate 0 with a prefactor just
/// above 1 is exact. For `m_p > 1` the factor is raised to machine epsilon, which
/// keeps the geometric bound valid for the first `m_p − 1` steps.
fn contraction(raw: f64, m_p: usize) -> (f64, f64, f64) {
    let floor_one = 1.0 + 1e-9;
    if raw > 0.0 {
        (raw, raw.powf(1.0 / m_p as f64), (1.0 / raw).max(floor_one))
    } else if m_p == 1 {
        (0.0, 0.0, floor_one)
    } else {
        let eps = f64::EPSILON;
        (eps, eps.powf(1.0 / m_p as f64), 1.0 / eps)
    }
}

impl MixingConstants {
    /// Evaluates the closed-form constants from `m_p` and `p_min`.
    pub fn from_parts(m_p: usize, p_min: f64, num_states: usize, num_actions: usize) -> Self {
        let n_sa = num_states * (num_actions - 1) + 1;
        let s = num_states as f64;
        let alpha_raw = 1.0 - s * p_min / (n_sa as f64).powi(m_p as i32 - 1);
        let (alpha_tilde, alpha, c) = contraction(alpha_raw, m_p);
        let (beta_tilde, beta, e) = contraction(1.0 - s * p_min, m_p);
        let d = (1.0 + 2.0 * e * m_p as f64 * beta / (1.0 - beta)).max(1.0 + 1e-9);
        MixingConstants { m_p, p_min, n_sa, alpha_tilde, alpha, c, beta_tilde, beta, e, d }
    }

    /// `C α^h`.
    pub fn dobrushin_bound(&self, h: usize) -> f64 {
        self.c * self.alpha.powi(h as i32)
    }

    /// `C / (1 − α)`, the summed mixing bound.
    pub fn mixing_sum(&self) -> f64 {
        self.c / (1.0 - self.alpha)
    }

    /// `2√S·C/(1 − α)`, Lipschitz constant of θ ↦ μ_{π_θ} in ℓ₁ versus ℓ₂.
    pub fn stationary_lipschitz(&self, num_states: usize) -> f64 {
        2.0 * (num_states as f64).sqrt() * self.mixing_sum()
    }
}

fn matrix_power(p: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let mut out = p.clone();
    for _ in 1..m {
        out = &out * p;
    }
    out
}

pub fn mixing_constants(mdp: &Mdp) -> Result<MixingConstants> {
    mixing_constants_with_cap(mdp, DEFAULT_POLICY_CAP)
}

/// Scans every deterministic chain for the first power with all entries positive.
pub fn mixing_constants_with_cap(mdp: &Mdp, cap: u128) -> Result<MixingConstants> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let wielandt = (ns - 1) * (ns - 1) + 1;
    let chains: Vec<DMatrix<f64>> = enumerate_deterministic_policies(ns, na, cap)?
        .map(|acts| {
            let pi = StationaryPolicy::deterministic(&acts, na).expect("enumerated actions are in range");
            transition_matrix(mdp, &pi).expect("shapes agree")
        })
        .collect();

    let first_positive: Vec<Option<usize>> = chains
        .par_iter()
        .map(|p| {
            let mut power = p.clone();
            for m in 1..=wielandt {
                if power.iter().all(|&x| x > 0.0) {
                    return Some(m);
                }
                power = &power * p;
            }
            None
        })
        .collect();
    if first_positive.iter().any(Option::is_none) {
        return Err(Error::NotErgodic(format!("some deterministic chain has no positive power up to {wielandt}")));
    }
    let m_p = first_positive.iter().flatten().copied().max().unwrap_or(1);
    let p_min = chains
        .par_iter()
        .map(|p| {
            let power = matrix_power(p, m_p);
            power.min()
        })
        .reduce(|| f64::INFINITY, f64::min);
    if p_min <= 0.0 {
        return Err(Error::NotErgodic(format!("power {m_p} not positive for every chain")));
    }
    Ok(MixingConstants::from_parts(m_p, p_min, ns, na))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DobrushinPoint {
    pub h: usize,
    pub distance: f64,
    pub bound: f64,
}

/// Exact `d_TV(ρ P_π^h, μ_π)` against `C α^h` for `h = 0..=h_max`.
pub fn verify_dobrushin(
    mdp: &Mdp,
    pi: &StationaryPolicy,
    h_max: usize,
    consts: &MixingConstants,
) -> Result<Vec<DobrushinPoint>> {
    let mu = crate::values::stationary_of(mdp, pi)?;
    Ok(state_marginals(mdp, pi, h_max + 1)?
        .iter()
        .enumerate()
        .map(|(h, dist)| DobrushinPoint { h, distance: total_variation(dist, &mu), bound: consts.dobrushin_bound(h) })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub coefficient: f64,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecomposition {
    pub atoms: Vec<Atom>,
}

impl PolicyDecomposition {
    pub fn reconstruct(&self, num_states: usize, num_actions: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(num_states, num_actions);
        for atom in &self.atoms {
            for (s, &a) in atom.actions.iter().enumerate() {
                out[(s, a)] += atom.coefficient;
            }
        }
        out
    }

    pub fn coefficient_sum(&self) -> f64 {
        self.atoms.iter().map(|a| a.coefficient).sum()
    }
}

/// Writes a randomized policy as a convex combination of deterministic ones.
///
/// Each round takes the smallest positive remaining entry `(s_min, a_min)` with
/// mass `c`, emits the deterministic policy choosing `a_min` at `s_min` and the
/// largest remaining action elsewhere, and subtracts `c` along it. Every round
/// zeroes at least one entry, so at most `S(A−1)+1` atoms appear.
pub fn decompose_policy(pi: &StationaryPolicy) -> PolicyDecomposition {
    const ZERO: f64 = 1e-15;
    let (ns, na) = (pi.num_states(), pi.num_actions());
    let mut rest = pi.probs().clone();
    rest.apply(|x| {
        if *x <= ZERO {
            *x = 0.0
        }
    });
    let mut remaining = 1.0;
    let mut atoms = Vec::new();
    let largest =
        |m: &DMatrix<f64>, s: usize| (0..na).fold(0, |best, a| if m[(s, a)] > m[(s, best)] { a } else { best });
    loop {
        let single_support = (0..ns).all(|s| (0..na).filter(|&a| rest[(s, a)] > 0.0).count() == 1);
        if single_support {
            let actions = (0..ns).map(|s| largest(&rest, s)).collect();
            atoms.push(Atom { coefficient: remaining, actions });
            break;
        }
        let mut min_at = (0, 0);
        let mut c = f64::INFINITY;
        for s in 0..ns {
            for a in 0..na {
                let x = rest[(s, a)];
                if x > 0.0 && x < c {
                    c = x;
                    min_at = (s, a);
                }
            }
        }
        let actions: Vec<usize> = (0..ns).map(|s| if s == min_at.0 { min_at.1 } else { largest(&rest, s) }).collect();
        for (s, &a) in actions.iter().enumerate() {
            let x = rest[(s, a)] - c;
            rest[(s, a)] = if x <= ZERO { 0.0 } else { x };
        }
        rest[min_at] = 0.0;
        remaining -= c;
        atoms.push(Atom { coefficient: c, actions });
    }
    PolicyDecomposition { atoms }
}

/// `Y = (I − P + 1μ)^{-1} − 1μ`, the deviation (Drazin-type) matrix of an ergodic chain.
pub fn deviation_matrix(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mu = linalg::stationary_distribution(p)?;
    let n = p.nrows();
    let limit = DMatrix::from_fn(n, n, |_, t| mu[t]);
    let fundamental = linalg::inverse(&(DMatrix::identity(n, n) - p + &limit))?;
    Ok(fundamental - limit)
}

/// `‖(μ₁ − μ₂) − μ₁(P₁ − P₂)Y₂‖₁` for two policies.
pub fn perturbation_identity_check(mdp: &Mdp, pi1: &StationaryPolicy, pi2: &StationaryPolicy) -> Result<f64> {
    let p1 = transition_matrix(mdp, pi1)?;
    let p2 = transition_matrix(mdp, pi2)?;
    let mu1 = linalg::stationary_distribution(&p1)?;
    let mu2 = linalg::stationary_distribution(&p2)?;
    let y2 = deviation_matrix(&p2)?;
    let predicted: DVector<f64> = ((p1 - p2) * y2).transpose() * &mu1;
    Ok((mu1 - mu2 - predicted).abs().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{fix1, fix2, fix3};
    use approx::assert_abs_diff_eq;

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_deterministic_policies(1, 2, DEFAULT_POLICY_CAP).unwrap().count(), 2);
        assert_eq!(enumerate_deterministic_policies(2, 2, DEFAULT_POLICY_CAP).unwrap().count(), 4);
        let all: Vec<_> = enumerate_deterministic_policies(4, 3, DEFAULT_POLICY_CAP).unwrap().collect();
        assert_eq!(all.len(), 81);
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 81);
        assert!(matches!(enumerate_deterministic_policies(13, 3, DEFAULT_POLICY_CAP), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn fix2_constants() {
        let k = mixing_constants(&fix2()).unwrap();
        assert_eq!(k.m_p, 1);
        assert_eq!(k.n_sa, 3);
        assert_abs_diff_eq!(k.p_min, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(k.alpha_tilde, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(k.alpha, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(k.c, 1.25, epsilon = 1e-14);
        assert_abs_diff_eq!(k.beta_tilde, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(k.e, 1.25, epsilon = 1e-14);
        assert_abs_diff_eq!(k.d, 11.0, epsilon = 1e-12);
    }

    #[test]
    fn single_state_is_degenerate_but_finite() {
        let k = mixing_constants(&fix1()).unwrap();
        assert_eq!(k.m_p, 1);
        assert_eq!(k.p_min, 1.0);
        assert_eq!(k.alpha_tilde, 0.0);
        assert_eq!(k.alpha, 0.0);
        assert!(k.c > 1.0 && k.c.is_finite());
        assert!(k.d > 1.0 && k.d.is_finite());
    }

    #[test]
    fn fix3_positive_in_one_step() {
        let k = mixing_constants(&fix3()).unwrap();
        assert_eq!(k.m_p, 1);
        assert!(k.p_min >= 0.01);
    }

    #[test]
    fn periodic_model_needs_more_steps() {
        // Action 0 cycles deterministically 0 → 1 → 2 → 0 except state 0 may stay;
        // every deterministic chain becomes positive only after several steps.
        let stay = 0.5;
        let p = vec![vec![vec![stay, 1.0 - stay, 0.0]], vec![vec![0.0, 0.0, 1.0]], vec![vec![1.0, 0.0, 0.0]]];
        let m = Mdp::new(p, vec![vec![1.0], vec![0.0], vec![0.0]], vec![1.0 / 3.0; 3]).unwrap();
        let k = mixing_constants(&m).unwrap();
        let chain = transition_matrix(&m, &StationaryPolicy::uniform(3, 1)).unwrap();
        assert!(matrix_power(&chain, k.m_p).min() > 0.0);
        assert!(matrix_power(&chain, k.m_p - 1).min() == 0.0);
        assert!(k.m_p <= 5);
    }

    #[test]
    fn reducible_model_rejected() {
        let m = Mdp::new(vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], vec![vec![0.0], vec![1.0]], vec![0.5, 0.5])
            .unwrap();
        assert!(matches!(mixing_constants(&m), Err(Error::NotErgodic(_))));
    }

    #[test]
    fn fix2_dobrushin_from_state_zero() {
        let m = fix2().with_initial(&[1.0, 0.0]).unwrap();
        let k = mixing_constants(&m).unwrap();
        let pts = verify_dobrushin(&m, &StationaryPolicy::uniform(2, 2), 5, &k).unwrap();
        assert_abs_diff_eq!(pts[0].distance, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(pts[1].distance, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pts[1].bound, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn decomposition_examples() {
        let det = StationaryPolicy::deterministic(&[2, 0, 1], 3).unwrap();
        let d = decompose_policy(&det);
        assert_eq!(d.atoms, vec![Atom { coefficient: 1.0, actions: vec![2, 0, 1] }]);

        let pi = StationaryPolicy::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let d = decompose_policy(&pi);
        assert_eq!(d.atoms.len(), 2);
        assert_eq!(d.atoms[0].actions, vec![0]);
        assert_abs_diff_eq!(d.atoms[0].coefficient, 0.3, epsilon = 1e-15);
        assert_eq!(d.atoms[1].actions, vec![1]);
        assert_abs_diff_eq!(d.atoms[1].coefficient, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn deviation_matrix_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_abs_diff_eq!(deviation_matrix(&one).unwrap()[(0, 0)], 0.0, epsilon = 1e-15);
        let flat = DMatrix::from_element(2, 2, 0.5);
        // Only the h = 0 term of Σ (P^h − Π) survives.
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((deviation_matrix(&flat).unwrap() - expected).abs().max() < 1e-14);
    }

    #[test]
    fn perturbation_fix2() {
        let m = fix2();
        let u = StationaryPolicy::uniform(2, 2);
        let d = StationaryPolicy::deterministic(&[0, 0], 2).unwrap();
        assert!(perturbation_identity_check(&m, &u, &d).unwrap() <= 1e-12);
        assert!(perturbation_identity_check(&m, &d, &u).unwrap() <= 1e-12);
        assert_eq!(perturbation_identity_check(&m, &u, &u).unwrap(), 0.0);
    }
}
