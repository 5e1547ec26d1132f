//! Reference models and the seeded random-model generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::mdp::Mdp;

const FIX1: &str = include_str!("../fixtures/fix1.json");
const FIX2: &str = include_str!("../fixtures/fix2.json");
const FIX3: &str = include_str!("../fixtures/fix3.json");

/// One state, two actions with rewards 1 and 0.
pub fn fix1() -> Mdp {
    Mdp::from_json_str(FIX1).expect("shipped fixture is valid")
}

/// Two states; action 0 stays and action 1 switches, each with probability 0.9.
/// State 0 pays 1, state 1 pays 0. Uniform initial distribution.
pub fn fix2() -> Mdp {
    Mdp::from_json_str(FIX2).expect("shipped fixture is valid")
}

/// Seeded random model with 4 states and 3 actions (`generate(4, 3, 42, 0.01)`).
pub fn fix3() -> Mdp {
    Mdp::from_json_str(FIX3).expect("shipped fixture is valid")
}

/// Looks up a shipped fixture by name (`fix1`, `fix2`, `fix3`).
pub fn by_name(name: &str) -> Option<Mdp> {
    match name {
        "fix1" => Some(fix1()),
        "fix2" => Some(fix2()),
        "fix3" => Some(fix3()),
        _ => None,
    }
}

/// Random model with strictly positive transitions.
///
/// Each row `p(·|s,a)` is `floor + (1 − S·floor)·x` with `x` uniform on the
/// simplex, so every entry is at least `floor`. Rewards are uniform on `[0, 1)`
/// and the initial distribution is uniform.
pub fn generate(num_states: usize, num_actions: usize, seed: u64, floor: f64) -> Result<Mdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidParameter("S and A must be positive".into()));
    }
    if !(floor > 0.0 && floor * (num_states as f64) < 1.0) {
        return Err(Error::InvalidParameter(format!("floor {floor} must lie in (0, 1/S)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let free = 1.0 - floor * num_states as f64;
    let mut p = vec![vec![Vec::new(); num_actions]; num_states];
    for row_block in p.iter_mut() {
        for row in row_block.iter_mut() {
            let x: Vec<f64> = (0..num_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = x.iter().sum();
            *row = x.iter().map(|v| floor + free * v / total).collect();
        }
    }
    let r = (0..num_states).map(|_| (0..num_actions).map(|_| rng.random::<f64>()).collect()).collect();
    let rho = vec![1.0 / num_states as f64; num_states];
    Mdp::new(p, r, rho)
}
