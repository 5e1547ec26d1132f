//! Bellman-operator machinery: finite-horizon optima, relative value iteration
//! for the optimal gain, and value iteration for discounted optima.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::span;
use crate::mdp::{Mdp, PolicySequence, StationaryPolicy};
use crate::values::{check_gamma, discounted_value, discounted_visitation, expected_next};

/// `[LJ]_s = max_a (r(s,a) + Σ_{s'} p(s'|s,a) J(s'))`.
pub fn bellman_operator(mdp: &Mdp, j: &DVector<f64>) -> DVector<f64> {
    row_max(&(mdp.rewards() + expected_next(mdp, j)))
}

fn row_max(q: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(q.nrows(), |s, _| q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Argmax per row; exact ties go to the lowest action index.
fn greedy(q: &DMatrix<f64>) -> Vec<usize> {
    (0..q.nrows()).map(|s| (0..q.ncols()).fold(0, |best, a| if q[(s, a)] > q[(s, best)] { a } else { best })).collect()
}

fn deterministic(actions: &[usize], num_actions: usize) -> StationaryPolicy {
    StationaryPolicy::deterministic(actions, num_actions).expect("greedy actions are in range")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonOptimum {
    /// `V^{H,⋆} = (1/H) ρ·J^{H,⋆}`.
    pub value: f64,
    /// Greedy policy for each step; step `h` has `H − h` steps to go.
    pub policy: PolicySequence,
    /// `J^{H,⋆} = L^{H−1} r_max`, the optimal total reward to go.
    pub total_to_go: DVector<f64>,
}

/// Backward induction over `H` steps.
pub fn finite_horizon_optimal(mdp: &Mdp, horizon: usize) -> Result<FiniteHorizonOptimum> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let mut j = DVector::zeros(mdp.num_states());
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let q = mdp.rewards() + expected_next(mdp, &j);
        steps.push(deterministic(&greedy(&q), mdp.num_actions()));
        j = row_max(&q);
    }
    steps.reverse();
    Ok(FiniteHorizonOptimum {
        value: mdp.rho().dot(&j) / horizon as f64,
        policy: PolicySequence::new(steps)?,
        total_to_go: j,
    })
}

/// Certified bracket on the optimal gain `η⋆`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBracket {
    pub lo: f64,
    pub hi: f64,
    /// Greedy with respect to the final relative values.
    pub policy: StationaryPolicy,
    /// `span(L^{n+1}J₀ − L^n J₀)` for each sweep `n`, from `J₀ = 0`.
    pub span_trace: Vec<f64>,
    /// Relative values at termination, pinned to zero at state 0.
    pub relative_values: DVector<f64>,
}

impl GainBracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// Relative value iteration until `max(LJ−J) − min(LJ−J) ≤ tol`.
pub fn relative_value_iteration(mdp: &Mdp, tol: f64, max_iter: usize) -> Result<GainBracket> {
    let mut j = DVector::zeros(mdp.num_states());
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let q = mdp.rewards() + expected_next(mdp, &j);
        let lj = row_max(&q);
        let diff = &lj - &j;
        let (lo, hi) = (diff.min(), diff.max());
        trace.push(hi - lo);
        if hi - lo <= tol {
            return Ok(GainBracket {
                lo,
                hi,
                policy: deterministic(&greedy(&q), mdp.num_actions()),
                span_trace: trace,
                relative_values: j,
            });
        }
        let pin = lj[0];
        j = lj.add_scalar(-pin);
    }
    Err(Error::NoConvergence { iterations: max_iter, what: "relative value iteration".into() })
}

/// One comparison of the span trace against its block envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePoint {
    pub base: usize,
    pub blocks: usize,
    pub span: f64,
    pub envelope: f64,
}

/// `span[k + r·m_p] ≤ β̃^r · span[k]` for every `k < m_p` and `r ≥ 1` in range.
pub fn span_envelope(trace: &[f64], m_p: usize, beta_tilde: f64) -> Vec<EnvelopePoint> {
    let mut out = Vec::new();
    for base in 0..m_p.min(trace.len()) {
        let mut blocks = 1;
        while base + blocks * m_p < trace.len() {
            out.push(EnvelopePoint {
                base,
                blocks,
                span: trace[base + blocks * m_p],
                envelope: beta_tilde.powi(blocks as i32) * trace[base],
            });
            blocks += 1;
        }
    }
    out
}

/// Certified bracket on the discounted optimum `ρ·V^{γ,⋆}` (normalized scale).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedOptimum {
    pub lo: f64,
    pub hi: f64,
    pub policy: StationaryPolicy,
    /// Discounted visitation of the greedy policy.
    pub visitation: DVector<f64>,
    pub iterations: usize,
}

impl DiscountedOptimum {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Value iteration with the MacQueen error bounds until the bracket is `tol` wide.
///
/// The lower end is also raised to the exact value of the returned greedy policy,
/// so that policy is `tol`-optimal.
pub fn discounted_optimal(mdp: &Mdp, gamma: f64, tol: f64) -> Result<DiscountedOptimum> {
    check_gamma(gamma)?;
    const MAX_SWEEPS: usize = 10_000_000;
    let mut v = DVector::zeros(mdp.num_states());
    let weight = gamma / (1.0 - gamma);
    for it in 1..=MAX_SWEEPS {
        let q = mdp.rewards() * (1.0 - gamma) + expected_next(mdp, &v) * gamma;
        let tv = row_max(&q);
        let delta = &tv - &v;
        let base = mdp.rho().dot(&tv);
        let (lo, hi) = (base + weight * delta.min(), base + weight * delta.max());
        v = tv;
        if hi - lo <= tol || span(&delta) == 0.0 {
            let policy = deterministic(&greedy(&q), mdp.num_actions());
            let exact = discounted_value(mdp, &policy, gamma)?.value;
            let visitation = discounted_visitation(mdp, &policy, gamma)?;
            return Ok(DiscountedOptimum { lo: lo.max(exact), hi: hi.max(exact), policy, visitation, iterations: it });
        }
    }
    Err(Error::NoConvergence { iterations: MAX_SWEEPS, what: "discounted value iteration".into() })
}
