#![allow(dead_code)]

use fictdisc_core::fixtures::{fix1, fix2, fix3, generate};
use fictdisc_core::Mdp;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The shipped fixtures plus `n` generated models of varying size.
pub fn model_suite(n: usize) -> Vec<(String, Mdp)> {
    let mut out = vec![("fix1".to_string(), fix1()), ("fix2".to_string(), fix2()), ("fix3".to_string(), fix3())];
    for i in 0..n {
        let (s, a) = (2 + i % 5, 2 + i % 2);
        out.push((format!("gen{i}"), generate(s, a, 1000 + i as u64, 0.02).unwrap()));
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn logits(rng: &mut ChaCha8Rng, s: usize, a: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(s, a, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Softmax written out directly.
pub fn softmax(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = theta.map(f64::exp);
    for s in 0..p.nrows() {
        let z = p.row(s).sum();
        p.row_mut(s).apply(|x| *x /= z);
    }
    p
}

/// `P_π[s, t] = Σ_a π(a|s) p(t|s,a)` from scalar lookups.
pub fn chain(mdp: &Mdp, pi: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mdp.num_states();
    DMatrix::from_fn(n, n, |s, t| (0..mdp.num_actions()).map(|a| pi[(s, a)] * mdp.prob(s, a, t)).sum())
}

pub fn expected_reward(mdp: &Mdp, pi: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(mdp.num_states(), |s, _| (0..mdp.num_actions()).map(|a| pi[(s, a)] * mdp.reward(s, a)).sum())
}

/// Stationary distribution by repeated left multiplication.
pub fn power_stationary(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..200_000 {
        let mut next = p.transpose() * &mu;
        next /= next.sum();
        if (&next - &mu).amax() < 1e-16 {
            return next;
        }
        mu = next;
    }
    mu
}

/// `η` as the long-run mean reward by power iteration.
pub fn power_gain(mdp: &Mdp, pi: &DMatrix<f64>) -> f64 {
    power_stationary(&chain(mdp, pi)).dot(&expected_reward(mdp, pi))
}

/// `(1 − γ) Σ_{h < n} γ^h ρ P^h r`.
pub fn series_discounted(mdp: &Mdp, pi: &DMatrix<f64>, gamma: f64, terms: usize) -> f64 {
    let p = chain(mdp, pi);
    let r = expected_reward(mdp, pi);
    let mut dist = mdp.rho().clone();
    let (mut total, mut w) = (0.0, 1.0);
    for _ in 0..terms {
        total += w * dist.dot(&r);
        dist = p.transpose() * dist;
        w *= gamma;
    }
    (1.0 - gamma) * total
}

/// Every `(probability, states, actions)` path of length `h`, by explicit recursion.
pub fn paths(mdp: &Mdp, pi: &DMatrix<f64>, h: usize) -> Vec<(f64, Vec<usize>, Vec<usize>)> {
    fn go(
        mdp: &Mdp,
        pi: &DMatrix<f64>,
        h: usize,
        prob: f64,
        states: &mut Vec<usize>,
        actions: &mut Vec<usize>,
        out: &mut Vec<(f64, Vec<usize>, Vec<usize>)>,
    ) {
        if actions.len() == h {
            out.push((prob, states[..h].to_vec(), actions.clone()));
            return;
        }
        let s = *states.last().unwrap();
        for a in 0..mdp.num_actions() {
            actions.push(a);
            for t in 0..mdp.num_states() {
                states.push(t);
                go(mdp, pi, h, prob * pi[(s, a)] * mdp.prob(s, a, t), states, actions, out);
                states.pop();
            }
            actions.pop();
        }
    }
    let mut out = Vec::new();
    for s in 0..mdp.num_states() {
        go(mdp, pi, h, mdp.rho()[s], &mut vec![s], &mut Vec::new(), &mut out);
    }
    out
}
