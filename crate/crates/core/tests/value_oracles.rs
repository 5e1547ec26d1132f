mod common;

use approx::assert_abs_diff_eq;
use common::*;
use fictdisc_core::dp::{discounted_optimal, finite_horizon_optimal, relative_value_iteration};
use fictdisc_core::mixing::enumerate_deterministic_policies;
use fictdisc_core::softmax::{policy_from_params, SoftmaxParams};
use fictdisc_core::values::{
    average_reward, bias_q_v_a, discounted_q_v_a, discounted_value, finite_horizon_value_stationary, stationary_of,
};
use fictdisc_core::StationaryPolicy;
use nalgebra::DMatrix;

fn policies(mdp: &fictdisc_core::Mdp, n: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| softmax(&logits(&mut r, mdp.num_states(), mdp.num_actions(), 2.0))).collect()
}

#[test]
fn stationary_matches_power_iteration() {
    for (name, mdp) in model_suite(6) {
        for pi in policies(&mdp, 4, 1) {
            let policy = StationaryPolicy::new(pi.clone()).unwrap();
            let mu = stationary_of(&mdp, &policy).unwrap();
            let oracle = power_stationary(&chain(&mdp, &pi));
            assert!((mu - oracle).amax() < 1e-12, "{name}");
            assert_abs_diff_eq!(average_reward(&mdp, &policy).unwrap().value, power_gain(&mdp, &pi), epsilon = 1e-12);
        }
    }
}

#[test]
fn discounted_value_matches_truncated_series() {
    for (name, mdp) in model_suite(4) {
        for pi in policies(&mdp, 3, 2) {
            let policy = StationaryPolicy::new(pi.clone()).unwrap();
            for gamma in [0.0, 0.5, 0.9, 0.99] {
                let v = discounted_value(&mdp, &policy, gamma).unwrap().value;
                // 0.99^2000 < 2e-9, the series tail is below that.
                assert_abs_diff_eq!(v, series_discounted(&mdp, &pi, gamma, 2000), epsilon = 1e-8);
                let _ = &name;
            }
        }
    }
}

#[test]
fn discounted_value_approaches_gain_near_one() {
    for (_, mdp) in model_suite(4) {
        for pi in policies(&mdp, 2, 3) {
            let policy = StationaryPolicy::new(pi.clone()).unwrap();
            let eta = power_gain(&mdp, &pi);
            let far = (discounted_value(&mdp, &policy, 0.999).unwrap().value - eta).abs();
            let near = (discounted_value(&mdp, &policy, 0.999_999).unwrap().value - eta).abs();
            assert!(near <= far + 1e-12);
            assert!(near < 1e-5);
        }
    }
}

#[test]
fn finite_horizon_value_matches_path_enumeration() {
    for (_, mdp) in model_suite(3).into_iter().filter(|(_, m)| m.num_states() <= 3) {
        for pi in policies(&mdp, 2, 4) {
            let policy = StationaryPolicy::new(pi.clone()).unwrap();
            for h in 1..=4 {
                let oracle: f64 = paths(&mdp, &pi, h)
                    .iter()
                    .map(|(p, s, a)| p * (0..h).map(|i| mdp.reward(s[i], a[i])).sum::<f64>() / h as f64)
                    .sum();
                assert_abs_diff_eq!(
                    finite_horizon_value_stationary(&mdp, &policy, h).unwrap(),
                    oracle,
                    epsilon = 1e-13
                );
            }
        }
    }
}

#[test]
fn action_values_satisfy_bellman_equations() {
    for (_, mdp) in model_suite(4) {
        for pi in policies(&mdp, 2, 5) {
            let policy = StationaryPolicy::new(pi.clone()).unwrap();
            let gamma = 0.8;
            let t = discounted_q_v_a(&mdp, &policy, gamma).unwrap();
            let bias = bias_q_v_a(&mdp, &policy).unwrap();
            let eta = power_gain(&mdp, &pi);
            let mu = power_stationary(&chain(&mdp, &pi));
            for s in 0..mdp.num_states() {
                for a in 0..mdp.num_actions() {
                    let next = mdp.next_state_dist(s, a);
                    let q = (1.0 - gamma) * mdp.reward(s, a) + gamma * next.dot(&t.v);
                    assert_abs_diff_eq!(t.q[(s, a)], q, epsilon = 1e-12);
                    let qbar = mdp.reward(s, a) - eta + next.dot(&bias.v);
                    assert_abs_diff_eq!(bias.q[(s, a)], qbar, epsilon = 1e-10);
                }
            }
            assert_abs_diff_eq!(mu.dot(&bias.v), 0.0, epsilon = 1e-10);
        }
    }
}

/// Brute force over all deterministic Markov policy sequences.
fn brute_finite_optimum(mdp: &fictdisc_core::Mdp, h: usize) -> f64 {
    let deterministic: Vec<DMatrix<f64>> = enumerate_deterministic_policies(mdp.num_states(), mdp.num_actions(), 1000)
        .unwrap()
        .map(|acts| StationaryPolicy::deterministic(&acts, mdp.num_actions()).unwrap().probs().clone())
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut index = vec![0usize; h];
    loop {
        let mut dist = mdp.rho().clone();
        let mut total = 0.0;
        for &i in &index {
            total += dist.dot(&expected_reward(mdp, &deterministic[i]));
            dist = chain(mdp, &deterministic[i]).transpose() * dist;
        }
        best = best.max(total / h as f64);
        let mut k = 0;
        while k < h {
            index[k] += 1;
            if index[k] < deterministic.len() {
                break;
            }
            index[k] = 0;
            k += 1;
        }
        if k == h {
            return best;
        }
    }
}

#[test]
fn finite_horizon_optimum_matches_brute_force() {
    for (name, mdp) in model_suite(3).into_iter().filter(|(_, m)| m.num_states() <= 3) {
        for h in 1..=3 {
            let dp = finite_horizon_optimal(&mdp, h).unwrap().value;
            assert_abs_diff_eq!(dp, brute_finite_optimum(&mdp, h), epsilon = 1e-13);
            let _ = &name;
        }
    }
}

#[test]
fn optimal_brackets_contain_best_deterministic_policy() {
    for (_, mdp) in model_suite(5) {
        let all: Vec<DMatrix<f64>> = enumerate_deterministic_policies(mdp.num_states(), mdp.num_actions(), 10_000)
            .unwrap()
            .map(|acts| StationaryPolicy::deterministic(&acts, mdp.num_actions()).unwrap().probs().clone())
            .collect();
        let gain = relative_value_iteration(&mdp, 1e-12, 1_000_000).unwrap();
        let best_gain = all.iter().map(|pi| power_gain(&mdp, pi)).fold(f64::NEG_INFINITY, f64::max);
        assert!(gain.lo - 1e-10 <= best_gain && best_gain <= gain.hi + 1e-10);
        for gamma in [0.5, 0.9] {
            let opt = discounted_optimal(&mdp, gamma, 1e-12).unwrap();
            let best = all.iter().map(|pi| series_discounted(&mdp, pi, gamma, 600)).fold(f64::NEG_INFINITY, f64::max);
            assert!(opt.lo - 1e-10 <= best && best <= opt.hi + 1e-10);
        }
    }
}

#[test]
fn softmax_of_zero_is_uniform() {
    let p = policy_from_params(&SoftmaxParams::zeros(3, 4, 0.0)).unwrap();
    assert!(p.probs().iter().all(|x| (x - 0.25).abs() < 1e-15));
}
