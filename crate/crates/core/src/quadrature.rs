//! Gauss–Hermite rules adapted to a standard-normal prior.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 2;
pub const MAX_NODES: usize = 200;

/// Quadrature nodes on the θ scale with weights normalized to sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Builds a grid from arbitrary nodes and non-negative weights; weights
    /// are rescaled to sum to one.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::InvalidInput(format!(
                "grid needs matching, non-empty nodes/weights ({} vs {})",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().any(|x| !x.is_finite()) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("grid nodes must be finite and weights ≥ 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidInput("grid weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫ f dΦ` under this rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `n`-point Gauss–Hermite rule for `∫ f(θ) φ(θ) dθ`, nodes ascending.
///
/// Starting points are the eigenvalues of the Jacobi matrix of the
/// physicists' Hermite recurrence; each is polished by Newton iteration on
/// the orthonormal recurrence, which also yields an accurate weight. Nodes
/// are mapped through `θ = √2·x`, `w ← w/√π`.
pub fn gauss_hermite_grid(n_nodes: usize) -> Result<QuadratureGrid> {
    if !(MIN_NODES..=MAX_NODES).contains(&n_nodes) {
        return Err(Error::InvalidInput(format!(
            "quadrature nodes must be in {MIN_NODES}..={MAX_NODES}, got {n_nodes}"
        )));
    }
    let n = n_nodes;
    let nf = n as f64;
    const PI_M4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    guesses.sort_by(|a, b| b.total_cmp(a));

    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    for i in 0..n.div_ceil(2) {
        let mut z = guesses[i];
        let mut pp = 0.0;
        for iter in 0..100 {
            let mut p1 = PI_M4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            // a final pass recomputes pp at the converged root
            if iter > 0 && step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
            z -= step;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let sqrt_pi = std::f64::consts::PI.sqrt();
    // roots come out descending
    let nodes: Vec<f64> = x.iter().rev().map(|v| v * sqrt2).collect();
    let weights: Vec<f64> = w.iter().rev().map(|v| v / sqrt_pi).collect();
    QuadratureGrid::new(nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_rule() {
        let g = gauss_hermite_grid(2).unwrap();
        assert_abs_diff_eq!(g.nodes()[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.nodes()[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.weights()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.weights()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ten_point_rule_symmetric() {
        let g = gauss_hermite_grid(10).unwrap();
        assert_eq!(g.len(), 10);
        for i in 0..10 {
            assert_eq!(g.nodes()[i], -g.nodes()[9 - i]);
            assert_eq!(g.weights()[i], g.weights()[9 - i]);
        }
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn moments_of_standard_normal() {
        // E[θ^k] = (k-1)!! for even k; exact for k ≤ 2n − 1
        let g = gauss_hermite_grid(10).unwrap();
        assert_abs_diff_eq!(g.integrate(|t| t * t), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(g.integrate(|t| t.powi(4)), 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(g.integrate(|t| t.powi(6)), 15.0, epsilon = 1e-9);
        assert_abs_diff_eq!(g.integrate(|t| t.powi(3)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn large_rules_still_valid() {
        for n in [3, 41, 101, 200] {
            let g = gauss_hermite_grid(n).unwrap();
            assert_abs_diff_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g.integrate(|t| t * t), 1.0, epsilon = 1e-10);
            assert!(g.nodes().windows(2).all(|w| w[0] < w[1]), "n = {n}");
        }
    }

    #[test]
    fn out_of_range_node_counts() {
        assert!(gauss_hermite_grid(1).is_err());
        assert!(gauss_hermite_grid(201).is_err());
        assert!(gauss_hermite_grid(0).is_err());
    }

    #[test]
    fn custom_grid_normalizes() {
        let g = QuadratureGrid::new(vec![-1.0, 0.0, 1.0], vec![1.0, 2.0, 1.0]).unwrap();
        assert_eq!(g.weights(), &[0.25, 0.5, 0.25]);
        assert!(QuadratureGrid::new(vec![0.0], vec![-1.0]).is_err());
    }
}
