//! Limit covariance of the static rod fluctuation field and the rod-weighted
//! bracket `⟨φ⟩ = ρ ∬∬ r φ(y, v, r) dy dμ(v, r)`.
//!
//! With `κ = ρ/(1+σ)` the operator `C = I − (σ/(1+σ)) P` acts as
//! `Cφ(y, v, r) = φ(y, v, r) − κ ∬ r' φ(y, v', r') dμ(v', r')`, which needs no
//! division by `σ` and reduces to the identity when `σ = 0`.
//!
//! Every covariance in a family is evaluated on one shared spatial grid, so the
//! Gram matrix is `Bᵀ W B` with nonnegative weights and is positive
//! semidefinite up to rounding.

use crate::error::{Error, Result};
use crate::fields::TestFunction;

use super::quadrature::{legendre_20, legendre_on};
use super::{MacroParams, MarkNode, VelocityLengthMeasure};

/// Composite Gauss–Legendre grid covering the supports of `functions` at every
/// node velocity, with panels split at each support endpoint.
fn spatial_grid(functions: &[&TestFunction], nodes: &[MarkNode]) -> Vec<(f64, f64)> {
    let mut velocities: Vec<f64> = nodes.iter().map(|n| n.v).collect();
    velocities.sort_by(f64::total_cmp);
    velocities.dedup();

    let mut breaks: Vec<f64> = Vec::new();
    for f in functions {
        for &v in &velocities {
            breaks.extend(f.breakpoints_at(v));
        }
    }
    breaks.retain(|b| b.is_finite());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let max_panel = functions.iter().map(|f| f.max_panel()).fold(f64::INFINITY, f64::min);

    let mut grid = Vec::new();
    for pair in breaks.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi <= lo {
            continue;
        }
        let pieces = ((hi - lo) / max_panel).ceil().max(1.0) as usize;
        let step = (hi - lo) / pieces as f64;
        for k in 0..pieces {
            let a = lo + step * k as f64;
            let b = if k + 1 == pieces { hi } else { a + step };
            grid.extend(legendre_on(legendre_20(), a, b));
        }
    }
    grid
}

/// Gram matrix of the limit covariance over `functions`:
/// `ρ̄ ∬∬ r² Cφ_i Cφ_j dy dμ`.
pub fn covariance_matrix(
    functions: &[&TestFunction],
    params: &MacroParams,
    mu: &VelocityLengthMeasure,
) -> Result<Vec<Vec<f64>>> {
    let k = functions.len();
    let nodes = mu.mark_nodes();
    let grid = spatial_grid(functions, &nodes);
    let kappa = params.rho / (1.0 + params.sigma);

    let mut gram = vec![vec![0.0; k]; k];
    let mut c = vec![vec![0.0; nodes.len()]; k];
    for &(y, wy) in &grid {
        for (i, f) in functions.iter().enumerate() {
            let mut avg = 0.0;
            for (n, node) in nodes.iter().enumerate() {
                let value = f.eval(y, node.v, node.r);
                c[i][n] = value;
                avg += node.weight * node.r * value;
            }
            for value in c[i].iter_mut() {
                *value -= kappa * avg;
            }
        }
        for i in 0..k {
            for j in i..k {
                let s: f64 = nodes
                    .iter()
                    .enumerate()
                    .map(|(n, node)| node.weight * node.r * node.r * c[i][n] * c[j][n])
                    .sum();
                gram[i][j] += wy * s;
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let value = params.rho_bar * gram[i][j];
            if !value.is_finite() {
                return Err(Error::NonFinite("limit covariance"));
            }
            gram[i][j] = value;
            gram[j][i] = value;
        }
    }
    Ok(gram)
}

pub fn theoretical_covariance(
    phi: &TestFunction,
    psi: &TestFunction,
    params: &MacroParams,
    mu: &VelocityLengthMeasure,
) -> Result<f64> {
    Ok(covariance_matrix(&[phi, psi], params, mu)?[0][1])
}

/// `⟨φ⟩ = ρ ∬∬ r φ(y, v, r) dy dμ(v, r)`.
pub fn bracket(phi: &TestFunction, params: &MacroParams, mu: &VelocityLengthMeasure) -> Result<f64> {
    let nodes = mu.mark_nodes();
    let grid = spatial_grid(&[phi], &nodes);
    let mut total = 0.0;
    for &(y, wy) in &grid {
        let s: f64 = nodes.iter().map(|n| n.weight * n.r * phi.eval(y, n.v, n.r)).sum();
        total += wy * s;
    }
    let value = params.rho * total;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("rod-weighted bracket"))
    }
}
