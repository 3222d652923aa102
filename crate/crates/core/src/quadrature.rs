//! Gauss–Hermite rules for expectations over standard Gaussians.

use crate::error::{Error, Result};

/// Gauss–Hermite rule normalized for the standard normal density:
/// `E[f(g)] ≈ Σ_i weights[i] · f(nodes[i])` with `g ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Build an `n`-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence (physicists' weight `e^{-x²}`), then rescale
    /// nodes by √2 and weights by π^{-1/2}.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
        }
        const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
        const MAX_IT: usize = 100;

        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut converged = false;
            for _ in 0..MAX_IT {
                let (p1, p2) = orthonormal_hermite(n, z, PIM4);
                let pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::InvalidArgument(format!(
                    "Gauss–Hermite root {i} of {n} did not converge"
                )));
            }
            let (_, p2) = orthonormal_hermite(n, z, PIM4);
            let pp = (2.0 * nf).sqrt() * p2;
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let scale = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = x
            .iter()
            .zip(&w)
            .map(|(&xi, &wi)| (xi * std::f64::consts::SQRT_2, wi / scale))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(g)]`, `g ~ N(0, 1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// `E[f(U, V)]` for `(U, V)` centered bivariate normal with covariance
    /// `[[var_u, cov], [cov, var_v]]`, via a Cholesky factor and the tensor
    /// rule. Degenerate (rank ≤ 1) covariances fall back to the 1-D rule.
    pub fn expect_bivariate<F: Fn(f64, f64) -> f64>(
        &self,
        var_u: f64,
        var_v: f64,
        cov: f64,
        f: F,
    ) -> Result<f64> {
        let scale = var_u.abs().max(var_v.abs()).max(f64::MIN_POSITIVE);
        let tol = 1e-14 * scale;
        if var_u < -tol || var_v < -tol || cov * cov > var_u * var_v + tol * scale {
            return Err(Error::InvalidArgument(format!(
                "covariance [[{var_u}, {cov}], [{cov}, {var_v}]] is not positive semidefinite"
            )));
        }
        let var_u = var_u.max(0.0);
        let var_v = var_v.max(0.0);
        if var_u <= tol {
            let sv = var_v.sqrt();
            return Ok(self.expect(|g| f(0.0, sv * g)));
        }
        let su = var_u.sqrt();
        let beta = cov / su;
        let resid = var_v - beta * beta;
        if resid <= 1e-12 * var_v.max(f64::MIN_POSITIVE) {
            return Ok(self.expect(|g| f(su * g, beta * g)));
        }
        let gamma = resid.sqrt();
        let mut total = 0.0;
        for (&g1, &w1) in self.nodes.iter().zip(&self.weights) {
            let u = su * g1;
            let base = beta * g1;
            let inner: f64 = self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(&g2, &w2)| w2 * f(u, base + gamma * g2))
                .sum();
            total += w1 * inner;
        }
        Ok(total)
    }
}

/// Returns `(h_n(z), h_{n-1}(z))` for the orthonormal Hermite functions.
fn orthonormal_hermite(n: usize, z: f64, h0: f64) -> (f64, f64) {
    let mut p1 = h0;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one_and_moments_match() {
        for n in [1, 2, 5, 20, 60, 100] {
            let q = GaussHermite::new(n).unwrap();
            assert_eq!(q.len(), n);
            assert!((q.expect(|_| 1.0) - 1.0).abs() < 1e-13, "n={n}");
            if n >= 3 {
                assert!((q.expect(|g| g * g) - 1.0).abs() < 1e-12);
                assert!(q.expect(|g| g.powi(3)).abs() < 1e-12);
                assert!((q.expect(|g| g.powi(4)) - 3.0).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn gaussian_mgf_at_one() {
        let q = GaussHermite::new(40).unwrap();
        let exact = 0.5_f64.exp();
        assert!((q.expect(f64::exp) - exact).abs() < 1e-13);
    }

    #[test]
    fn bivariate_product_moment_is_covariance() {
        let q = GaussHermite::new(10).unwrap();
        let e = q.expect_bivariate(0.8, 0.5, 0.3, |u, v| u * v).unwrap();
        assert!((e - 0.3).abs() < 1e-13);
        // E[U²V²] = var_u var_v + 2 cov²
        let e4 = q.expect_bivariate(0.8, 0.5, 0.3, |u, v| u * u * v * v).unwrap();
        assert!((e4 - (0.4 + 0.18)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_covariances_route_to_one_dimension() {
        let q = GaussHermite::new(20).unwrap();
        let par = q.expect_bivariate(1.0, 1.0, 1.0, |u, v| u * v).unwrap();
        assert!((par - 1.0).abs() < 1e-13);
        let zero = q.expect_bivariate(0.0, 2.0, 0.0, |_, v| v * v).unwrap();
        assert!((zero - 2.0).abs() < 1e-13);
        assert!(q.expect_bivariate(1.0, 1.0, 1.5, |u, v| u * v).is_err());
    }
}
