//! Dense solves with residual checks, the stationary distribution, and ordered sums.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `a x = b` by LU with partial pivoting and checks the backward residual.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = a.clone().lu().solve(b).ok_or_else(|| Error::Solve("singular matrix".into()))?;
    let residual = max_abs(&(a * &x - b));
    let scale = 1.0 + inf_norm(a) * max_abs(&x) + max_abs(b);
    if !residual.is_finite() || residual > 1e-10 * scale {
        return Err(Error::Solve(format!("residual {residual:e} too large")));
    }
    Ok(x)
}

/// Solves the row-vector system `x a = b`.
pub fn solve_left(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    solve(&a.transpose(), b)
}

/// Inverse via LU, used for the deviation matrix.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = a.clone().lu().try_inverse().ok_or_else(|| Error::Solve("singular matrix".into()))?;
    let n = a.nrows();
    let residual = inf_norm(&(a * &inv - DMatrix::identity(n, n)));
    if !residual.is_finite() || residual > 1e-9 * (1.0 + inf_norm(a) * inf_norm(&inv)) {
        return Err(Error::Solve(format!("inverse residual {residual:e} too large")));
    }
    Ok(inv)
}

/// Stationary distribution of a row-stochastic matrix.
///
/// Solves `[Pᵀ − I; 1ᵀ] μ = [0; 1]` in the least-squares sense through an SVD and
/// rejects rank-deficient systems, which arise when the chain has several
/// recurrent classes.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::Dimension(format!("transition matrix is {}x{}", n, p.ncols())));
    }
    let mut sys = DMatrix::zeros(n + 1, n);
    sys.view_mut((0, 0), (n, n)).copy_from(&(p.transpose() - DMatrix::identity(n, n)));
    sys.row_mut(n).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;

    let svd = sys.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 1e-13 * smax {
        return Err(Error::NotErgodic(format!(
            "stationary system is rank deficient (smallest singular value {smin:e})"
        )));
    }
    let mut mu = svd.solve(&rhs, 0.0).map_err(|e| Error::Solve(e.to_string()))?;
    if mu.min() < -1e-12 {
        return Err(Error::NotErgodic(format!("stationary solve produced negative mass {:e}", mu.min())));
    }
    mu.apply(|x| *x = x.max(0.0));
    let total = mu.sum();
    mu /= total;
    let residual = max_abs(&(p.transpose() * &mu - &mu));
    if residual > 1e-10 {
        return Err(Error::Solve(format!("stationary residual {residual:e}")));
    }
    Ok(mu)
}

/// Sum with a fixed pairwise association, independent of how terms were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Elementwise [`pairwise_sum`] over equally shaped matrices.
pub fn pairwise_sum_matrices(ms: &[DMatrix<f64>]) -> Option<DMatrix<f64>> {
    match ms.len() {
        0 => None,
        1 => Some(ms[0].clone()),
        n => {
            let left = pairwise_sum_matrices(&ms[..n / 2])?;
            let right = pairwise_sum_matrices(&ms[n / 2..])?;
            Some(left + right)
        }
    }
}

/// `max − min` of a vector.
pub fn span(v: &DVector<f64>) -> f64 {
    v.max() - v.min()
}

/// Total-variation distance between two probability vectors.
pub fn total_variation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    0.5 * (a - b).abs().sum()
}
