mod common;

use common::*;
use fictdisc_core::softmax::{grad_average_objective, grad_discounted_objective, SoftmaxParams};
use fictdisc_core::Mdp;
use nalgebra::DMatrix;

/// `(λ/SA) Σ log softmax(θ)` written out.
fn regularizer_value(theta: &DMatrix<f64>, lambda: f64) -> f64 {
    let (s, a) = theta.shape();
    lambda / (s * a) as f64 * softmax(theta).map(f64::ln).sum()
}

fn average_objective(mdp: &Mdp, theta: &DMatrix<f64>, lambda: f64) -> f64 {
    power_gain(mdp, &softmax(theta)) + regularizer_value(theta, lambda)
}

fn discounted_objective(mdp: &Mdp, theta: &DMatrix<f64>, lambda: f64, gamma: f64) -> f64 {
    series_discounted(mdp, &softmax(theta), gamma, 1500) / (1.0 - gamma) + regularizer_value(theta, lambda)
}

fn central_difference(f: impl Fn(&DMatrix<f64>) -> f64, theta: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(theta.nrows(), theta.ncols());
    for i in 0..theta.len() {
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[i] += step;
        down[i] -= step;
        out[i] = (f(&up) - f(&down)) / (2.0 * step);
    }
    out
}

fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn average_gradient_matches_finite_differences() {
    let mut r = rng(11);
    for (name, mdp) in model_suite(7) {
        for lambda in [0.0, 0.3] {
            let theta = logits(&mut r, mdp.num_states(), mdp.num_actions(), 1.5);
            let g = grad_average_objective(&mdp, &SoftmaxParams::new(theta.clone(), lambda).unwrap()).unwrap().gradient;
            let fd = central_difference(|t| average_objective(&mdp, t, lambda), &theta, 1e-5);
            let err = relative_error(&g, &fd);
            assert!(err <= 1e-6, "{name} λ={lambda}: relative error {err:e}");
        }
    }
}

#[test]
fn discounted_gradient_matches_finite_differences() {
    let mut r = rng(12);
    for (name, mdp) in model_suite(7) {
        for gamma in [0.5, 0.9] {
            let lambda = 0.2;
            let theta = logits(&mut r, mdp.num_states(), mdp.num_actions(), 1.5);
            let g = grad_discounted_objective(&mdp, &SoftmaxParams::new(theta.clone(), lambda).unwrap(), gamma)
                .unwrap()
                .gradient;
            let fd = central_difference(|t| discounted_objective(&mdp, t, lambda, gamma), &theta, 1e-5);
            let err = relative_error(&g, &fd);
            assert!(err <= 1e-6, "{name} γ={gamma}: relative error {err:e}");
        }
    }
}

#[test]
fn single_state_gradients_in_closed_form() {
    let mdp = fictdisc_core::fixtures::fix1();
    let params = SoftmaxParams::zeros(1, 2, 0.0);
    let avg = grad_average_objective(&mdp, &params).unwrap().gradient;
    assert!((avg[(0, 0)] - 0.25).abs() < 1e-15 && (avg[(0, 1)] + 0.25).abs() < 1e-15);
    for gamma in [0.3, 0.9] {
        let g = grad_discounted_objective(&mdp, &params, gamma).unwrap().gradient * (1.0 - gamma);
        assert!((g[(0, 0)] - 0.25).abs() < 1e-13 && (g[(0, 1)] + 0.25).abs() < 1e-13);
    }
}

#[test]
fn regularizer_gradient_rows_sum_to_zero() {
    let mut r = rng(13);
    for (_, mdp) in model_suite(3) {
        let theta = logits(&mut r, mdp.num_states(), mdp.num_actions(), 3.0);
        let g = grad_average_objective(&mdp, &SoftmaxParams::new(theta, 1.0).unwrap()).unwrap().gradient;
        for s in 0..g.nrows() {
            assert!(g.row(s).sum().abs() < 1e-12);
        }
    }
}
