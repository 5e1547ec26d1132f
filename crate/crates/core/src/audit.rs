//! Exact left-hand sides checked against closed-form right-hand sides.
//!
//! Every record encodes a claim `lhs ≤ rhs`; lower-bound claims are stored with the
//! bound on the left. Identities are stored as `residual ≤ IDENTITY_TOL`.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds;
use crate::dp::{discounted_optimal, finite_horizon_optimal, relative_value_iteration, span_envelope, GainBracket};
use crate::error::{Error, Result};
use crate::estimators::{
    exact_estimator_expectation, exact_second_moment_with_cap, sample_estimate, Estimator, EstimatorConfig,
    ENUMERATION_CAP,
};
use crate::linalg::stationary_distribution;
use crate::mdp::{Mdp, StationaryPolicy, R_MAX};
use crate::mixing::{
    decompose_policy, deviation_matrix, mixing_constants, perturbation_identity_check, verify_dobrushin,
    MixingConstants,
};
use crate::softmax::{
    grad_average_objective, grad_discounted_objective, gradient_domination_bound, policy_from_params,
    smoothness_constants, Objective, SoftmaxParams,
};
use crate::train::{Optima, TrainTrace};
use crate::values::{
    average_reward, bias_q_v_a, discounted_q_v_a, discounted_value, discounted_visitation,
    finite_horizon_value_stationary, stationary_of, transition_matrix,
};

/// Slack allowed on every inequality margin.
pub const MARGIN_TOL: f64 = 1e-9;
/// Right-hand side used for identities.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Schema stamp written as the first line of audit CSVs.
pub const AUDIT_SCHEMA: &str = "# fictdisc-audit-csv v1";

/// Claims the suite is expected to cover.
pub const CLAIM_IDS: &[&str] = &[
    "gap-disc-finite",
    "gap-disc-avg",
    "gap-disc-avg-opt",
    "gap-finite-avg",
    "gap-finite-avg-opt",
    "graddom-disc",
    "graddom-avg",
    "smooth-disc",
    "smooth-avg",
    "dae-bias",
    "dae-norm",
    "dae-inner",
    "dae-second-moment",
    "compose-avg",
    "dd-bias",
    "dd-norm",
    "dd-inner",
    "dd-second-moment",
    "compose-disc",
    "pd-avg",
    "pd-disc",
    "dobrushin",
    "decomp",
    "devmat",
    "perturb",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditParams {
    pub horizon: Option<usize>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub theta_hash: Option<String>,
}

impl AuditParams {
    pub fn horizon(mut self, h: usize) -> Self {
        self.horizon = Some(h);
        self
    }

    pub fn gamma(mut self, g: f64) -> Self {
        self.gamma = Some(g);
        self
    }

    pub fn beta(mut self, b: f64) -> Self {
        self.beta = Some(b);
        self
    }

    pub fn lambda(mut self, l: f64) -> Self {
        self.lambda = Some(l);
        self
    }

    pub fn hash(mut self, h: String) -> Self {
        self.theta_hash = Some(h);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRecord {
    pub claim_id: String,
    pub fixture: String,
    pub params: AuditParams,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    /// Right-hand side exceeds `2·R_MAX`, so the claim says nothing about values.
    pub vacuous: bool,
}

impl AuditRecord {
    pub fn new(claim_id: &str, fixture: &str, params: AuditParams, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        AuditRecord {
            claim_id: claim_id.to_string(),
            fixture: fixture.to_string(),
            params,
            lhs,
            rhs,
            margin,
            pass: margin >= -MARGIN_TOL,
            vacuous: rhs > 2.0 * R_MAX,
        }
    }

    fn identity(claim_id: &str, fixture: &str, params: AuditParams, residual: f64) -> Self {
        let mut rec = Self::new(claim_id, fixture, params, residual, IDENTITY_TOL);
        rec.vacuous = false;
        rec
    }
}

/// First 16 hex digits of the SHA-256 of a matrix's shape and row-major entries.
pub fn matrix_hash(m: &DMatrix<f64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((m.nrows() as u64).to_le_bytes());
    hasher.update((m.ncols() as u64).to_le_bytes());
    for s in 0..m.nrows() {
        for a in 0..m.ncols() {
            hasher.update(m[(s, a)].to_le_bytes());
        }
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// A discount grid entry; `InverseHorizon` resolves to `1 − 1/H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    Value(f64),
    InverseHorizon,
}

impl GammaChoice {
    pub fn resolve(self, horizon: usize) -> f64 {
        match self {
            GammaChoice::Value(g) => g,
            GammaChoice::InverseHorizon => 1.0 - 1.0 / horizon as f64,
        }
    }
}

/// Exact optima shared by the gap audits of one model.
struct OptimumCache<'a> {
    mdp: &'a Mdp,
    gain: GainBracket,
    finite: BTreeMap<usize, f64>,
    discounted: BTreeMap<u64, (f64, f64)>,
}

impl<'a> OptimumCache<'a> {
    fn new(mdp: &'a Mdp) -> Result<Self> {
        Ok(OptimumCache {
            mdp,
            gain: relative_value_iteration(mdp, 1e-13, 10_000_000)?,
            finite: BTreeMap::new(),
            discounted: BTreeMap::new(),
        })
    }

    fn finite(&mut self, h: usize) -> Result<f64> {
        if let Some(v) = self.finite.get(&h) {
            return Ok(*v);
        }
        let v = finite_horizon_optimal(self.mdp, h)?.value;
        self.finite.insert(h, v);
        Ok(v)
    }

    fn discounted(&mut self, gamma: f64) -> Result<(f64, f64)> {
        if let Some(v) = self.discounted.get(&gamma.to_bits()) {
            return Ok(*v);
        }
        let opt = discounted_optimal(self.mdp, gamma, 1e-13)?;
        self.discounted.insert(gamma.to_bits(), (opt.lo, opt.hi));
        Ok((opt.lo, opt.hi))
    }
}

/// Largest `|x − y|` over the two brackets' ends.
fn bracket_distance(x: (f64, f64), y: (f64, f64)) -> f64 {
    (x.1 - y.0).abs().max((y.1 - x.0).abs())
}

/// The five value-gap inequalities over policies × horizons × discounts.
pub fn audit_gap_lemmas(
    mdp: &Mdp,
    fixture: &str,
    k: &MixingConstants,
    policies: &[StationaryPolicy],
    h_grid: &[usize],
    gamma_grid: &[GammaChoice],
) -> Result<Vec<AuditRecord>> {
    if h_grid.is_empty() || gamma_grid.is_empty() {
        return Err(Error::InvalidParameter("empty audit grid".into()));
    }
    let mut cache = OptimumCache::new(mdp)?;
    let mut gammas: Vec<f64> = Vec::new();
    for &h in h_grid {
        for g in gamma_grid {
            let g = g.resolve(h);
            if !gammas.iter().any(|x| x.to_bits() == g.to_bits()) {
                gammas.push(g);
            }
        }
    }
    let mut out = Vec::new();
    let gain = (cache.gain.lo, cache.gain.hi);

    for &g in &gammas {
        let opt = cache.discounted(g)?;
        out.push(AuditRecord::new(
            "gap-disc-avg-opt",
            fixture,
            AuditParams::default().gamma(g),
            bracket_distance(opt, gain),
            bounds::discounted_vs_average(k, g),
        ));
    }
    for &h in h_grid {
        let v = cache.finite(h)?;
        out.push(AuditRecord::new(
            "gap-finite-avg-opt",
            fixture,
            AuditParams::default().horizon(h),
            bracket_distance((v, v), gain),
            bounds::finite_vs_average_optimal(k, h),
        ));
    }

    for pi in policies {
        let hash = matrix_hash(pi.probs());
        let eta = average_reward(mdp, pi)?.value;
        let mut vgamma = BTreeMap::new();
        for &g in &gammas {
            let v = discounted_value(mdp, pi, g)?.value;
            vgamma.insert(g.to_bits(), v);
            out.push(AuditRecord::new(
                "gap-disc-avg",
                fixture,
                AuditParams::default().gamma(g).hash(hash.clone()),
                (v - eta).abs(),
                bounds::discounted_vs_average(k, g),
            ));
        }
        for &h in h_grid {
            let vh = finite_horizon_value_stationary(mdp, pi, h)?;
            out.push(AuditRecord::new(
                "gap-finite-avg",
                fixture,
                AuditParams::default().horizon(h).hash(hash.clone()),
                (vh - eta).abs(),
                bounds::finite_vs_average(k, h),
            ));
            for choice in gamma_grid {
                let g = choice.resolve(h);
                out.push(AuditRecord::new(
                    "gap-disc-finite",
                    fixture,
                    AuditParams::default().horizon(h).gamma(g).hash(hash.clone()),
                    (vgamma[&g.to_bits()] - vh).abs(),
                    bounds::discounted_vs_finite(k, h, g),
                ));
            }
        }
    }
    Ok(out)
}

/// Average-reward and discounted performance-difference identities.
pub fn audit_performance_difference(
    mdp: &Mdp,
    fixture: &str,
    pi1: &StationaryPolicy,
    pi2: &StationaryPolicy,
    gamma: f64,
) -> Result<[AuditRecord; 2]> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let hash = format!("{}:{}", matrix_hash(pi1.probs()), matrix_hash(pi2.probs()));

    let mu1 = stationary_of(mdp, pi1)?;
    let bias2 = bias_q_v_a(mdp, pi2)?;
    let avg_rhs: f64 = (0..ns).map(|s| mu1[s] * (0..na).map(|a| pi1.prob(s, a) * bias2.adv[(s, a)]).sum::<f64>()).sum();
    let avg_lhs = average_reward(mdp, pi1)?.value - average_reward(mdp, pi2)?.value;

    let d1 = discounted_visitation(mdp, pi1, gamma)?;
    let tables2 = discounted_q_v_a(mdp, pi2, gamma)?;
    let disc_rhs: f64 =
        (0..ns).map(|s| d1[s] * (0..na).map(|a| pi1.prob(s, a) * tables2.adv[(s, a)]).sum::<f64>()).sum::<f64>()
            / (1.0 - gamma);
    let disc_lhs = discounted_value(mdp, pi1, gamma)?.value - discounted_value(mdp, pi2, gamma)?.value;

    Ok([
        AuditRecord::identity("pd-avg", fixture, AuditParams::default().hash(hash.clone()), (avg_lhs - avg_rhs).abs()),
        AuditRecord::identity(
            "pd-disc",
            fixture,
            AuditParams::default().gamma(gamma).hash(hash),
            (disc_lhs - disc_rhs).abs(),
        ),
    ])
}

/// Residual of `μY = 0`, `Y1 = 0` and `(I − P)Y = I − 1μ`.
pub fn deviation_identity_residual(p: &DMatrix<f64>) -> Result<f64> {
    let n = p.nrows();
    let mu = stationary_distribution(p)?;
    let y = deviation_matrix(p)?;
    let limit = DMatrix::from_fn(n, n, |_, t| mu[t]);
    let left = (y.transpose() * &mu).amax();
    let right = (&y * DVector::from_element(n, 1.0)).amax();
    let eye = DMatrix::identity(n, n);
    let poisson = ((&eye - p) * &y - (&eye - limit)).amax();
    Ok(left.max(right).max(poisson))
}

/// Structural checks for one policy: Dobrushin decay, decomposition, deviation matrix.
pub fn audit_structure(
    mdp: &Mdp,
    fixture: &str,
    k: &MixingConstants,
    pi: &StationaryPolicy,
    dobrushin_h_max: usize,
) -> Result<Vec<AuditRecord>> {
    let hash = matrix_hash(pi.probs());
    let mut out = Vec::new();
    for point in verify_dobrushin(mdp, pi, dobrushin_h_max, k)? {
        out.push(AuditRecord::new(
            "dobrushin",
            fixture,
            AuditParams::default().horizon(point.h).hash(hash.clone()),
            point.distance,
            point.bound,
        ));
    }
    let dec = decompose_policy(pi);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let residual = (dec.reconstruct(ns, na) - pi.probs()).amax().max((dec.coefficient_sum() - 1.0).abs());
    out.push(AuditRecord::identity("decomp", fixture, AuditParams::default().hash(hash.clone()), residual));
    out.push(AuditRecord::new(
        "decomp-atoms",
        fixture,
        AuditParams::default().hash(hash.clone()),
        dec.atoms.len() as f64,
        k.n_sa as f64,
    ));

    let p = transition_matrix(mdp, pi)?;
    out.push(AuditRecord::identity(
        "devmat",
        fixture,
        AuditParams::default().hash(hash.clone()),
        deviation_identity_residual(&p)?,
    ));
    let y = deviation_matrix(&p)?;
    let row_norm = (0..ns).map(|s| y.row(s).abs().sum()).fold(0.0, f64::max);
    out.push(AuditRecord::new(
        "devmat-norm",
        fixture,
        AuditParams::default().hash(hash.clone()),
        row_norm,
        bounds::deviation_norm(k),
    ));
    let qbar = bias_q_v_a(mdp, pi)?.q.amax();
    out.push(AuditRecord::new(
        "qbar-bound",
        fixture,
        AuditParams::default().hash(hash),
        qbar,
        bounds::bias_q_magnitude(k),
    ));
    Ok(out)
}

/// Stationary-distribution perturbation identity and ℓ₁/ℓ₂ Lipschitz bound for two logits.
pub fn audit_perturbation(
    mdp: &Mdp,
    fixture: &str,
    k: &MixingConstants,
    theta1: &DMatrix<f64>,
    theta2: &DMatrix<f64>,
) -> Result<Vec<AuditRecord>> {
    let p1 = policy_from_params(&SoftmaxParams::new(theta1.clone(), 0.0)?)?;
    let p2 = policy_from_params(&SoftmaxParams::new(theta2.clone(), 0.0)?)?;
    let hash = format!("{}:{}", matrix_hash(theta1), matrix_hash(theta2));
    let mu_gap = (stationary_of(mdp, &p1)? - stationary_of(mdp, &p2)?).abs().sum();
    Ok(vec![
        AuditRecord::identity(
            "perturb",
            fixture,
            AuditParams::default().hash(hash.clone()),
            perturbation_identity_check(mdp, &p1, &p2)?,
        ),
        AuditRecord::new(
            "mu-lipschitz",
            fixture,
            AuditParams::default().hash(hash),
            mu_gap,
            k.stationary_lipschitz(mdp.num_states()) * (theta1 - theta2).norm(),
        ),
    ])
}

/// Smoothness of both objectives between two logits, plus the average-gradient ℓ₁ bound.
pub fn audit_smoothness(
    mdp: &Mdp,
    fixture: &str,
    k: &MixingConstants,
    theta1: &DMatrix<f64>,
    theta2: &DMatrix<f64>,
    lambda: f64,
    gamma: f64,
) -> Result<Vec<AuditRecord>> {
    let a = SoftmaxParams::new(theta1.clone(), lambda)?;
    let b = SoftmaxParams::new(theta2.clone(), lambda)?;
    let dist = (theta1 - theta2).norm();
    let beta = smoothness_constants(k, gamma, lambda, mdp.num_states());
    let hash = format!("{}:{}", matrix_hash(theta1), matrix_hash(theta2));
    let ga = grad_average_objective(mdp, &a)?.gradient;
    let gb = grad_average_objective(mdp, &b)?.gradient;
    let da = grad_discounted_objective(mdp, &a, gamma)?.gradient;
    let db = grad_discounted_objective(mdp, &b, gamma)?.gradient;
    let p = AuditParams::default().lambda(lambda);
    Ok(vec![
        AuditRecord::new("smooth-avg", fixture, p.clone().hash(hash.clone()), (&ga - &gb).norm(), beta.average * dist),
        AuditRecord::new(
            "smooth-disc",
            fixture,
            p.clone().gamma(gamma).hash(hash),
            (&da - &db).norm(),
            beta.discounted * dist,
        ),
        AuditRecord::new(
            "grad-avg-bound",
            fixture,
            p.hash(matrix_hash(theta1)),
            ga.abs().sum(),
            bounds::average_gradient_l1(k, lambda),
        ),
    ])
}

/// Gradient domination: when the gradient is below `λ/(2SA)` the gap obeys the bound.
///
/// Emits nothing when the premise fails.
pub fn audit_gradient_domination(
    mdp: &Mdp,
    fixture: &str,
    k: &MixingConstants,
    params: &SoftmaxParams,
    gamma: f64,
) -> Result<Vec<AuditRecord>> {
    let pi = policy_from_params(params)?;
    let hash = matrix_hash(&params.theta);
    let mut out = Vec::new();
    let avg = gradient_domination_bound(mdp, params, Objective::Average, k, None)?;
    if avg.premise_holds {
        let hi = relative_value_iteration(mdp, 1e-13, 10_000_000)?.hi;
        out.push(AuditRecord::new(
            "graddom-avg",
            fixture,
            AuditParams::default().lambda(params.lambda).hash(hash.clone()),
            hi - average_reward(mdp, &pi)?.value,
            avg.bound,
        ));
    }
    let disc = gradient_domination_bound(mdp, params, Objective::Discounted { gamma }, k, None)?;
    if disc.premise_holds {
        let hi = discounted_optimal(mdp, gamma, 1e-13)?.hi;
        out.push(AuditRecord::new(
            "graddom-disc",
            fixture,
            AuditParams::default().lambda(params.lambda).gamma(gamma).hash(hash),
            hi - discounted_value(mdp, &pi, gamma)?.value,
            disc.bound,
        ));
    }
    Ok(out)
}

/// One estimator configuration to audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorProbe {
    pub horizon: usize,
    pub sigma: f64,
    pub beta: f64,
    pub lambda: f64,
    pub batch: usize,
}

impl EstimatorProbe {
    pub fn gamma(&self) -> f64 {
        bounds::fictitious_discount(self.horizon, self.sigma)
    }
}

/// Bias, almost-sure norm, inner-product and (where enumerable) second-moment bounds.
///
/// `norm_samples` batch estimates of each kind are drawn per `(θ, probe)`.
pub fn audit_estimator_lemmas(
    mdp: &Mdp,
    fixture: &str,
    k: &MixingConstants,
    thetas: &[DMatrix<f64>],
    probes: &[EstimatorProbe],
    norm_samples: usize,
    seed: u64,
) -> Result<Vec<AuditRecord>> {
    let mut out = Vec::new();
    for theta in thetas {
        for probe in probes {
            out.extend(estimator_records(mdp, fixture, k, theta, probe, norm_samples, seed)?);
        }
    }
    Ok(out)
}

fn estimator_records(
    mdp: &Mdp,
    fixture: &str,
    k: &MixingConstants,
    theta: &DMatrix<f64>,
    probe: &EstimatorProbe,
    norm_samples: usize,
    seed: u64,
) -> Result<Vec<AuditRecord>> {
    let gamma = probe.gamma();
    let lambda = probe.lambda;
    let params = SoftmaxParams::new(theta.clone(), lambda)?;
    let cfg = EstimatorConfig::new(gamma, probe.beta, probe.horizon, probe.batch, mdp.num_states())?;
    let b = cfg.baseline_bound();
    let base = AuditParams::default().horizon(probe.horizon).gamma(gamma).lambda(lambda).hash(matrix_hash(theta));
    let dae_params = base.clone().beta(probe.beta);

    let grad_avg = grad_average_objective(mdp, &params)?.gradient;
    let grad_disc = grad_discounted_objective(mdp, &params, gamma)?.gradient;
    let mean_dae = exact_estimator_expectation(mdp, &params, &cfg, Estimator::Dae)?;
    let mean_dd = exact_estimator_expectation(mdp, &params, &cfg, Estimator::Dd)?;

    let bias_dae = bounds::dae_bias(k, probe.horizon, gamma, probe.beta);
    let bias_dd = bounds::dd_bias(probe.horizon, gamma);
    let g_gamma = bounds::dae_norm_constant(gamma, b);
    let g_dd = bounds::dd_norm_constant(gamma, b);
    let g_bar = bounds::average_gradient_constant(k);

    let mut out = vec![
        AuditRecord::new("dae-bias", fixture, dae_params.clone(), (&mean_dae - &grad_avg).norm(), bias_dae),
        AuditRecord::new("dd-bias", fixture, base.clone(), (&mean_dd - &grad_disc).norm(), bias_dd),
        AuditRecord::new(
            "dae-inner",
            fixture,
            dae_params.clone(),
            grad_avg.norm_squared() - (g_bar + 2.0 * lambda) * bias_dae,
            mean_dae.dot(&grad_avg),
        ),
        AuditRecord::new(
            "dd-inner",
            fixture,
            base.clone(),
            grad_disc.norm_squared() - (g_dd + 2.0 * lambda) * bias_dd,
            mean_dd.dot(&grad_disc),
        ),
    ];

    if norm_samples > 0 {
        let (dae_max, dd_max) = (0..norm_samples as u64)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let a = sample_estimate(mdp, &params, &cfg, Estimator::Dae, seed, i)?.g.norm();
                let d = sample_estimate(mdp, &params, &cfg, Estimator::Dd, seed, i)?.g.norm();
                Ok((a, d))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold((0.0f64, 0.0f64), |(x, y), (a, d)| (x.max(a), y.max(d)));
        out.push(AuditRecord::new("dae-norm", fixture, dae_params.clone(), dae_max, g_gamma + 2.0 * lambda));
        out.push(AuditRecord::new("dd-norm", fixture, base.clone(), dd_max, g_dd + 2.0 * lambda));
    }

    let single = EstimatorConfig::new(gamma, probe.beta, probe.horizon, 1, mdp.num_states())?;
    match exact_second_moment_with_cap(mdp, &params, &single, Estimator::Dae, ENUMERATION_CAP) {
        Ok(m2) => {
            let slack = bounds::second_moment_slack(bias_dae, g_gamma, lambda, 1);
            out.push(AuditRecord::new(
                "dae-second-moment",
                fixture,
                dae_params,
                m2,
                2.0 * grad_avg.norm_squared() + slack,
            ));
            let m2 = exact_second_moment_with_cap(mdp, &params, &single, Estimator::Dd, ENUMERATION_CAP)?;
            let slack = bounds::second_moment_slack(bias_dd, g_dd, lambda, 1);
            out.push(AuditRecord::new("dd-second-moment", fixture, base, m2, 2.0 * grad_disc.norm_squared() + slack));
        }
        Err(Error::CapExceeded { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Composed finite-horizon bound at a certified iterate, with the report-only profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedBound {
    pub record: AuditRecord,
    /// Leading-order bias profile with unit constants; never asserted.
    pub profile: f64,
}

/// `V^{H,⋆} − V^H(π̂) ≤` composed bound, with `ε` the certified gap of the run.
pub fn compose_theorem_bounds(
    mdp: &Mdp,
    fixture: &str,
    trace: &TrainTrace,
    horizon: usize,
    sigma: f64,
    algorithm: Estimator,
) -> Result<ComposedBound> {
    let cert =
        trace.certificate.as_ref().ok_or_else(|| Error::InvalidParameter("training run has no certificate".into()))?;
    let k = &trace.mixing;
    let gamma = trace.constants.gamma;
    let params = SoftmaxParams::new(trace.final_theta.clone(), trace.constants.lambda)?;
    let pi = policy_from_params(&params)?;
    let lhs = finite_horizon_optimal(mdp, horizon)?.value - finite_horizon_value_stationary(mdp, &pi, horizon)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let (claim, rhs, profile) = match algorithm {
        Estimator::Dae => (
            "compose-avg",
            bounds::composed_average(k, horizon, cert.bound),
            bounds::dae_profile(k, ns, na, horizon, sigma),
        ),
        Estimator::Dd => (
            "compose-disc",
            bounds::composed_discounted(k, horizon, gamma, cert.bound),
            bounds::dd_profile(k, ns, na, horizon, sigma),
        ),
    };
    let params = AuditParams::default()
        .horizon(horizon)
        .gamma(gamma)
        .lambda(trace.constants.lambda)
        .hash(matrix_hash(&trace.final_theta));
    Ok(ComposedBound { record: AuditRecord::new(claim, fixture, params, lhs, rhs), profile })
}

/// One row of the bias scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasRow {
    pub horizon: usize,
    pub gamma: f64,
    pub dae_measured: f64,
    pub dae_bound: f64,
    pub dae_envelope: f64,
    pub dd_measured: f64,
    pub dd_bound: f64,
}

/// Exact estimator biases across horizons at fixed logits, with `γ = 1 − H^{−σ}`.
pub fn bias_scaling_study(
    mdp: &Mdp,
    k: &MixingConstants,
    h_grid: &[usize],
    sigma: f64,
    beta: f64,
    theta: &DMatrix<f64>,
) -> Result<Vec<BiasRow>> {
    if h_grid.is_empty() {
        return Err(Error::InvalidParameter("empty horizon grid".into()));
    }
    let params = SoftmaxParams::new(theta.clone(), 0.0)?;
    let grad_avg = grad_average_objective(mdp, &params)?.gradient;
    h_grid
        .iter()
        .map(|&h| {
            let gamma = bounds::fictitious_discount(h, sigma);
            let cfg = EstimatorConfig::new(gamma, beta, h, 1, mdp.num_states())?;
            let grad_disc = grad_discounted_objective(mdp, &params, gamma)?.gradient;
            Ok(BiasRow {
                horizon: h,
                gamma,
                dae_measured: (exact_estimator_expectation(mdp, &params, &cfg, Estimator::Dae)? - &grad_avg).norm(),
                dae_bound: bounds::dae_bias(k, h, gamma, beta),
                dae_envelope: bounds::dae_envelope(h, sigma, beta),
                dd_measured: (exact_estimator_expectation(mdp, &params, &cfg, Estimator::Dd)? - grad_disc).norm(),
                dd_bound: bounds::dd_bias(h, gamma),
            })
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Record count per expected claim id, in `CLAIM_IDS` order.
pub fn coverage(records: &[AuditRecord]) -> Vec<(&'static str, usize)> {
    CLAIM_IDS.iter().map(|id| (*id, records.iter().filter(|r| r.claim_id == *id).count())).collect()
}

pub fn missing_claims(records: &[AuditRecord]) -> Vec<&'static str> {
    coverage(records).into_iter().filter(|(_, n)| *n == 0).map(|(id, _)| id).collect()
}

fn opt<T: std::fmt::Display>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(String::new, |v| v.to_string())
}

/// Writes records as CSV, stable-sorted by claim id, under the schema comment.
pub fn write_audit_csv<W: Write>(records: &[AuditRecord], mut w: W) -> std::io::Result<()> {
    let mut sorted: Vec<&AuditRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    writeln!(w, "{AUDIT_SCHEMA}")?;
    writeln!(w, "claim_id,fixture,H,gamma,beta,lambda,theta_hash,lhs,rhs,margin,pass")?;
    for r in sorted {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.claim_id,
            r.fixture,
            opt(&r.params.horizon),
            opt(&r.params.gamma),
            opt(&r.params.beta),
            opt(&r.params.lambda),
            opt(&r.params.theta_hash),
            r.lhs,
            r.rhs,
            r.margin,
            r.pass
        )?;
    }
    Ok(())
}

/// Grids and sample counts for a full audit run.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditSuite {
    pub h_grid: Vec<usize>,
    pub gamma_grid: Vec<GammaChoice>,
    /// Random policies per model for the gap and structural audits.
    pub policies: usize,
    pub dobrushin_h_max: usize,
    /// Random logit pairs per model for identity, perturbation and smoothness audits.
    pub pairs: usize,
    /// Random logits per model for the estimator audits (plus θ = 0).
    pub thetas: usize,
    pub probes: Vec<EstimatorProbe>,
    pub norm_samples: usize,
    pub lambdas: Vec<f64>,
    pub seed: u64,
}

impl Default for AuditSuite {
    fn default() -> Self {
        AuditSuite {
            h_grid: vec![1, 2, 4, 8, 16, 32, 64, 128],
            gamma_grid: vec![
                GammaChoice::Value(0.5),
                GammaChoice::Value(0.9),
                GammaChoice::Value(0.99),
                GammaChoice::InverseHorizon,
            ],
            policies: 5,
            dobrushin_h_max: 50,
            pairs: 5,
            thetas: 2,
            probes: vec![
                EstimatorProbe { horizon: 4, sigma: 0.5, beta: 0.5, lambda: 0.1, batch: 4 },
                EstimatorProbe { horizon: 16, sigma: 0.5, beta: 0.5, lambda: 0.1, batch: 4 },
                EstimatorProbe { horizon: 32, sigma: 0.3, beta: 0.3, lambda: 1.0, batch: 4 },
            ],
            norm_samples: 50,
            lambdas: vec![0.1, 10.0, 1000.0],
            seed: 0,
        }
    }
}

/// Gaussian logits with the given scale, from a generator.
pub fn random_logits(num_states: usize, num_actions: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(num_states, num_actions, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Every audit family on one model; deterministic given `suite.seed` and `index`.
pub fn audit_model(mdp: &Mdp, fixture: &str, index: u64, suite: &AuditSuite) -> Result<Vec<AuditRecord>> {
    let k = mixing_constants(mdp)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    rng.set_stream(index);
    let policy_logits: Vec<DMatrix<f64>> = (0..suite.policies).map(|_| random_logits(ns, na, 2.0, &mut rng)).collect();
    let policies: Vec<StationaryPolicy> = policy_logits
        .iter()
        .map(|t| policy_from_params(&SoftmaxParams::new(t.clone(), 0.0)?))
        .collect::<Result<_>>()?;

    let mut out = audit_gap_lemmas(mdp, fixture, &k, &policies, &suite.h_grid, &suite.gamma_grid)?;
    for pi in &policies {
        out.extend(audit_structure(mdp, fixture, &k, pi, suite.dobrushin_h_max)?);
    }
    let pd_gamma = 0.9;
    for _ in 0..suite.pairs {
        let t1 = random_logits(ns, na, 1.5, &mut rng);
        let t2 = random_logits(ns, na, 1.5, &mut rng);
        let p1 = policy_from_params(&SoftmaxParams::new(t1.clone(), 0.0)?)?;
        let p2 = policy_from_params(&SoftmaxParams::new(t2.clone(), 0.0)?)?;
        out.extend(audit_performance_difference(mdp, fixture, &p1, &p2, pd_gamma)?);
        out.extend(audit_perturbation(mdp, fixture, &k, &t1, &t2)?);
        for &lambda in &suite.lambdas {
            out.extend(audit_smoothness(mdp, fixture, &k, &t1, &t2, lambda, pd_gamma)?);
        }
    }
    let mut thetas = vec![DMatrix::zeros(ns, na)];
    thetas.extend((0..suite.thetas).map(|_| random_logits(ns, na, 1.0, &mut rng)));
    for theta in &thetas {
        for &lambda in &suite.lambdas {
            out.extend(audit_gradient_domination(
                mdp,
                fixture,
                &k,
                &SoftmaxParams::new(theta.clone(), lambda)?,
                pd_gamma,
            )?);
        }
    }
    out.extend(audit_estimator_lemmas(mdp, fixture, &k, &thetas, &suite.probes, suite.norm_samples, suite.seed)?);
    Ok(out)
}

/// Audits several models in parallel and concatenates the records in input order.
pub fn audit_models(models: &[(String, Mdp)], suite: &AuditSuite) -> Result<Vec<AuditRecord>> {
    let parts: Vec<Vec<AuditRecord>> = models
        .par_iter()
        .enumerate()
        .map(|(i, (name, mdp))| audit_model(mdp, name, i as u64, suite))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Span trace of relative value iteration: monotone and within the block envelope.
pub fn audit_span_trace(mdp: &Mdp, fixture: &str, k: &MixingConstants) -> Result<Vec<AuditRecord>> {
    let bracket = relative_value_iteration(mdp, 1e-12, 10_000_000)?;
    let trace = &bracket.span_trace;
    let mut out: Vec<AuditRecord> = trace
        .windows(2)
        .enumerate()
        .map(|(n, w)| AuditRecord::new("span-monotone", fixture, AuditParams::default().horizon(n + 1), w[1], w[0]))
        .collect();
    for p in span_envelope(trace, k.m_p, k.beta_tilde) {
        out.push(AuditRecord::new(
            "span-envelope",
            fixture,
            AuditParams::default().horizon(p.base + p.blocks * k.m_p),
            p.span,
            p.envelope,
        ));
    }
    Ok(out)
}

/// Exact diagnostics at a trained iterate, used by the `eval` command.
pub fn evaluate_theta(mdp: &Mdp, theta: &DMatrix<f64>, horizon: usize, gamma: f64) -> Result<(f64, f64, f64, Optima)> {
    let pi = policy_from_params(&SoftmaxParams::new(theta.clone(), 0.0)?)?;
    let optima = Optima::compute(mdp, horizon, gamma)?;
    Ok((
        finite_horizon_value_stationary(mdp, &pi, horizon)?,
        discounted_value(mdp, &pi, gamma)?.value,
        average_reward(mdp, &pi)?.value,
        optima,
    ))
}
