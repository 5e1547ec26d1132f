mod common;

use common::model_suite;
use fictdisc_core::audit::*;
use fictdisc_core::bounds::fictitious_discount;
use fictdisc_core::estimators::Estimator;
use fictdisc_core::fixtures::{fix1, fix2};
use fictdisc_core::mixing::mixing_constants;
use fictdisc_core::train::{run_exact_gradient_training, TrainConfig};
use nalgebra::DMatrix;

#[test]
fn default_suite_passes_with_full_coverage() {
    let models = model_suite(3);
    let mut records = audit_models(&models, &AuditSuite::default()).unwrap();
    for (name, mdp) in &models {
        let k = mixing_constants(mdp).unwrap();
        records.extend(audit_span_trace(mdp, name, &k).unwrap());
    }
    for (name, mdp) in [("fix1", fix1()), ("fix2", fix2())] {
        for algorithm in [Estimator::Dae, Estimator::Dd] {
            let trace =
                run_exact_gradient_training(&mdp, &TrainConfig::new(algorithm, 32, 0.5, 0.05, 1000, 0)).unwrap();
            records.push(compose_theorem_bounds(&mdp, name, &trace, 32, 0.5, algorithm).unwrap().record);
        }
    }
    let failures: Vec<_> = records.iter().filter(|r| !r.pass).collect();
    assert!(failures.is_empty(), "{failures:#?}");
    assert_eq!(missing_claims(&records), Vec::<&str>::new());
}

#[test]
fn suite_output_is_identical_across_worker_counts() {
    let models = model_suite(2);
    let suite = AuditSuite { norm_samples: 20, ..AuditSuite::default() };
    let csv = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let recs = pool.install(|| audit_models(&models, &suite).unwrap());
        let mut buf = Vec::new();
        write_audit_csv(&recs, &mut buf).unwrap();
        buf
    };
    assert_eq!(csv(1), csv(8));
}

#[test]
fn inverse_horizon_discount_drops_the_mismatch_term() {
    let mdp = fix2();
    let k = mixing_constants(&mdp).unwrap();
    for h in [4, 16, 64] {
        let gamma = GammaChoice::InverseHorizon.resolve(h);
        let direct = fictdisc_core::bounds::discounted_vs_finite(&k, h, gamma);
        let hf = h as f64;
        let remaining = 2.0 * k.c * (gamma * k.alpha.powi(h as i32) + k.alpha / ((1.0 - k.alpha) * hf));
        assert!((direct - remaining).abs() <= 1e-12 * remaining);
    }
}

#[test]
fn bias_study_on_two_state_fixture() {
    let mdp = fix2();
    let k = mixing_constants(&mdp).unwrap();
    let grid = [8, 16, 32, 64, 128];
    let rows = bias_scaling_study(&mdp, &k, &grid, 0.5, 0.5, &DMatrix::zeros(2, 2)).unwrap();
    for r in &rows {
        assert!(r.dae_measured <= r.dae_bound);
        assert!(r.dd_measured <= r.dd_bound);
        let h = r.horizon as f64;
        let envelope = h.powf(-0.5) + 1.0 / (0.5 * h);
        assert!((r.dae_envelope - envelope).abs() <= 1e-12);
        assert_eq!(r.gamma, fictitious_discount(r.horizon, 0.5));
    }
    let hs: Vec<f64> = grid.iter().map(|&h| h as f64).collect();
    let dd: Vec<f64> = rows.iter().map(|r| r.dd_measured).collect();
    let env: Vec<f64> = rows.iter().map(|r| r.dae_envelope).collect();
    assert!(loglog_slope(&hs, &dd) < loglog_slope(&hs, &env));
    // Measured, not negligible: γ^64 ≈ 1.9e-4 at σ = 0.5.
    let at64 = rows.iter().find(|r| r.horizon == 64).unwrap();
    assert!(at64.dd_measured > 1e-6 && at64.dd_measured < 1e-3);
}

#[test]
fn composed_bound_requires_a_certificate() {
    let mut cfg = TrainConfig::new(Estimator::Dae, 16, 0.5, 0.05, 5, 0);
    cfg.stop_on_certificate = false;
    let trace = run_exact_gradient_training(&fix2(), &cfg).unwrap();
    assert!(compose_theorem_bounds(&fix2(), "fix2", &trace, 16, 0.5, Estimator::Dae).is_err());
}
