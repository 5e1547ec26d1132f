//! Closed-form right-hand sides of the gap, bias and composition inequalities.
//! Rewards are taken in `[0, R_MAX]` throughout.

use crate::mdp::R_MAX;
use crate::mixing::MixingConstants;

/// `⌊βH⌋`, with a tiny guard so products like `0.57·100` land on the intended integer.
pub fn truncation_length(beta: f64, horizon: usize) -> usize {
    (beta * horizon as f64 + 1e-9).floor() as usize
}

/// `γ = 1 − H^{−σ}`.
pub fn fictitious_discount(horizon: usize, sigma: f64) -> f64 {
    1.0 - (horizon as f64).powf(-sigma)
}

/// `|V^γ(π) − V^H(π)| ≤ 2RC(γα^H/(H(1−γ)) + (α + |H(1−γ) − 1|)/((1−α)H))`.
pub fn discounted_vs_finite(k: &MixingConstants, horizon: usize, gamma: f64) -> f64 {
    let h = horizon as f64;
    let first = if gamma == 0.0 { 0.0 } else { gamma * k.alpha.powi(horizon as i32) / (h * (1.0 - gamma)) };
    let second = (k.alpha + (h * (1.0 - gamma) - 1.0).abs()) / ((1.0 - k.alpha) * h);
    2.0 * R_MAX * k.c * (first + second)
}

/// `|V^γ(π) − η(π)| ≤ 2(1−γ)RC/(1−α)`, also between the optima.
pub fn discounted_vs_average(k: &MixingConstants, gamma: f64) -> f64 {
    2.0 * (1.0 - gamma) * R_MAX * k.mixing_sum()
}

/// `|V^H(π) − η(π)| ≤ 2RC/(H(1−α))`.
pub fn finite_vs_average(k: &MixingConstants, horizon: usize) -> f64 {
    2.0 * R_MAX * k.mixing_sum() / horizon as f64
}

/// `|V^{H,⋆} − η⋆| ≤ 2RD/H`.
pub fn finite_vs_average_optimal(k: &MixingConstants, horizon: usize) -> f64 {
    2.0 * R_MAX * k.d / horizon as f64
}

/// `‖Y‖_∞ ≤ 2C/(1−α)`.
pub fn deviation_norm(k: &MixingConstants) -> f64 {
    2.0 * k.mixing_sum()
}

/// `|Q̄(s,a)| ≤ 2R(1 + C/(1−α))`.
pub fn bias_q_magnitude(k: &MixingConstants) -> f64 {
    2.0 * R_MAX * (1.0 + k.mixing_sum())
}

/// `‖∇L̄‖₁ ≤ 4(1 + C/(1−α)) + 2λ`.
pub fn average_gradient_l1(k: &MixingConstants, lambda: f64) -> f64 {
    4.0 * (1.0 + k.mixing_sum()) + 2.0 * lambda
}

/// `‖∇L^γ‖₂ ≤ 2/(1−γ)² + 2λ`.
pub fn discounted_gradient_l2(gamma: f64, lambda: f64) -> f64 {
    2.0 / (1.0 - gamma).powi(2) + 2.0 * lambda
}

/// Almost-sure norm bound of the truncated estimator without `2λ`: `2(1 + (1−γ)B)/(1−γ)`.
pub fn dae_norm_constant(gamma: f64, baseline_bound: f64) -> f64 {
    2.0 * (1.0 + (1.0 - gamma) * baseline_bound) / (1.0 - gamma)
}

/// Almost-sure norm bound of the doubly discounted estimator without `2λ`:
/// `2(1 + B(1−γ))/(1−γ)²`.
pub fn dd_norm_constant(gamma: f64, baseline_bound: f64) -> f64 {
    2.0 * (1.0 + baseline_bound * (1.0 - gamma)) / (1.0 - gamma).powi(2)
}

/// `4(1 + C/(1−α))`, the gradient-norm constant in the truncated estimator's inner-product bound.
pub fn average_gradient_constant(k: &MixingConstants) -> f64 {
    4.0 * (1.0 + k.mixing_sum())
}

/// Bias of the truncated estimator against `∇L̄`:
/// `16C/(⌊βH⌋(1−α))·(1 + C/(1−α)) + 8C(1−γ)/(1−α)² + 4γ^{(1−β)H}(1 + C/(1−α))`.
pub fn dae_bias(k: &MixingConstants, horizon: usize, gamma: f64, beta: f64) -> f64 {
    dae_bias_terms(k, horizon, gamma, beta).iter().sum()
}

/// The three summands of [`dae_bias`] in order.
pub fn dae_bias_terms(k: &MixingConstants, horizon: usize, gamma: f64, beta: f64) -> [f64; 3] {
    let t = truncation_length(beta, horizon) as f64;
    let ratio = k.mixing_sum();
    let one_minus_alpha = 1.0 - k.alpha;
    [
        16.0 * k.c / (t * one_minus_alpha) * (1.0 + ratio),
        8.0 * k.c * (1.0 - gamma) / one_minus_alpha.powi(2),
        4.0 * gamma.powf((1.0 - beta) * horizon as f64) * (1.0 + ratio),
    ]
}

/// Bias of the doubly discounted estimator against `∇L^γ`: `2γ^H/(1−γ)·(H + 1/(1−γ))`.
pub fn dd_bias(horizon: usize, gamma: f64) -> f64 {
    let h = horizon as f64;
    2.0 * gamma.powi(horizon as i32) / (1.0 - gamma) * (h + 1.0 / (1.0 - gamma))
}

/// Second-moment slack `2Δ² + (G + 2λ)²/N` for either estimator.
pub fn second_moment_slack(bias: f64, norm_constant: f64, lambda: f64, batch: usize) -> f64 {
    2.0 * bias * bias + (norm_constant + 2.0 * lambda).powi(2) / batch as f64
}

/// `2RD/H + ε + 2RC/(H(1−α))`: finite-horizon gap from an average-reward gap `ε`.
pub fn composed_average(k: &MixingConstants, horizon: usize, epsilon: f64) -> f64 {
    finite_vs_average_optimal(k, horizon) + epsilon + finite_vs_average(k, horizon)
}

/// `2RCγα^H/(H(1−γ)) + ε + (2R/H)(C(H(1−γ) + α + |H(1−γ) − 1|)/(1−α) + D)`:
/// finite-horizon gap from a discounted gap `ε`.
pub fn composed_discounted(k: &MixingConstants, horizon: usize, gamma: f64, epsilon: f64) -> f64 {
    let h = horizon as f64;
    let c1 = h * (1.0 - gamma);
    2.0 * R_MAX * k.c * discount_tail(k, horizon, gamma)
        + epsilon
        + 2.0 * R_MAX / h * (k.c * (c1 + k.alpha + (c1 - 1.0).abs()) / (1.0 - k.alpha) + k.d)
}

/// `γα^H/(H(1−γ))`.
pub fn discount_tail(k: &MixingConstants, horizon: usize, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    gamma * k.alpha.powi(horizon as i32) / (horizon as f64 * (1.0 - gamma))
}

/// Leading-order profile of the truncated estimator's finite-horizon bias, with
/// unit constants (report only).
pub fn dae_profile(k: &MixingConstants, num_states: usize, num_actions: usize, horizon: usize, sigma: f64) -> f64 {
    let (s, a, h) = (num_states as f64, num_actions as f64, horizon as f64);
    let gap = 1.0 - k.alpha;
    s * s * a * k.c.powi(3) / gap.powi(4) * h.powf(-sigma / 2.0)
        + s.powi(3) * a * a * k.c * k.c / gap.powi(3) * h.powf(-sigma)
        + (k.d + k.mixing_sum()) / h
}

/// Leading-order profile of the doubly discounted estimator's finite-horizon bias,
/// with unit constants (report only).
pub fn dd_profile(k: &MixingConstants, num_states: usize, num_actions: usize, horizon: usize, sigma: f64) -> f64 {
    let (s, a, h) = (num_states as f64, num_actions as f64, horizon as f64);
    let gap = 1.0 - k.alpha;
    k.mixing_sum() * h.powf(-sigma)
        + k.d / h
        + s.powi(3) * a * a / gap * h.powf((1.0 + 3.0 * sigma) / 2.0) * (-h.powf(1.0 - sigma) / 2.0).exp()
        + k.c * k.alpha.powi(horizon as i32) * h.powf(-(1.0 - sigma))
}

/// Dominant envelope `H^{−σ} + (βH)^{−1}` of the truncated estimator's bias bound.
pub fn dae_envelope(horizon: usize, sigma: f64, beta: f64) -> f64 {
    let h = horizon as f64;
    h.powf(-sigma) + 1.0 / (beta * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fix2_constants() -> MixingConstants {
        MixingConstants::from_parts(1, 0.1, 2, 2)
    }

    #[test]
    fn gap_examples() {
        let k = fix2_constants();
        assert_abs_diff_eq!(finite_vs_average(&k, 10), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(discounted_vs_average(&k, 0.9), 1.25, epsilon = 1e-12);
    }

    #[test]
    fn unit_scaled_discount_drops_middle_term() {
        let k = fix2_constants();
        let h = 16;
        let gamma = 1.0 - 1.0 / h as f64;
        let expected = 2.0
            * k.c
            * (gamma * k.alpha.powi(h as i32) / (h as f64 * (1.0 - gamma)) + k.alpha / ((1.0 - k.alpha) * h as f64));
        assert_abs_diff_eq!(discounted_vs_finite(&k, h, gamma), expected, epsilon = 1e-14);
    }

    #[test]
    fn composed_average_example() {
        let k = fix2_constants();
        let eps = 0.05;
        assert_abs_diff_eq!(composed_average(&k, 20, eps), 1.1 + eps + 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(composed_average(&k, 1 << 40, eps), eps, epsilon = 1e-9);
    }

    #[test]
    fn composed_discounted_tail_term() {
        let k = fix2_constants();
        for (h, sigma) in [(16, 0.5), (64, 0.3), (128, 0.8)] {
            let gamma = fictitious_discount(h, sigma);
            let tail = 2.0 * k.c * discount_tail(&k, h, gamma);
            let scaled = 2.0 * k.c * k.alpha.powi(h as i32) / (h as f64).powf(1.0 - sigma);
            assert!(tail <= scaled * (1.0 + 1e-12));
        }
    }

    #[test]
    fn truncation_guard() {
        assert_eq!(truncation_length(0.6, 2), 1);
        assert_eq!(truncation_length(0.57, 100), 57);
        assert_eq!(truncation_length(0.3, 3), 0);
    }

    #[test]
    fn envelope_halving() {
        let a = 1.0 / (0.5 * 32.0);
        let b = 1.0 / (0.5 * 64.0);
        assert_eq!(a / 2.0, b);
        let env = dae_envelope(64, 0.5, 0.5);
        assert_abs_diff_eq!(env, 64f64.powf(-0.5) + b, epsilon = 1e-15);
    }

    #[test]
    fn dd_bias_vanishes_with_horizon() {
        assert!(dd_bias(256, fictitious_discount(256, 0.5)) < dd_bias(64, fictitious_discount(64, 0.5)));
        assert_eq!(dd_bias(4, 0.0), 0.0);
    }
}
