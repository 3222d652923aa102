//! Last-layer-only training over fixed random features: the feature matrix
//! `A_pq = σ(w_pᵀx_q + b_p)`, invertibility of `AᵀA`, and the closed-form
//! zero-loss fit of the output weights.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::{dot, symmetric_eigen, Matrix};
use crate::model::{Dataset, NetworkState};

/// `λ_min(AᵀA)` must exceed this multiple of `‖AᵀA‖_F`.
pub const INVERTIBILITY_TOL: f64 = 1e-12;
pub const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// m×n.
    pub a: Matrix,
    pub biases: Vec<f64>,
}

impl FeatureMatrix {
    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }
}

pub fn feature_matrix(state: &NetworkState, act: &Activation, data: &Dataset, biases: &[f64]) -> Result<FeatureMatrix> {
    if biases.len() != state.m() {
        return Err(Error::DimensionMismatch {
            context: "feature_matrix biases",
            expected: state.m(),
            found: biases.len(),
        });
    }
    if state.d() != data.d() {
        return Err(Error::DimensionMismatch {
            context: "feature_matrix input dimension",
            expected: state.d(),
            found: data.d(),
        });
    }
    let w = state.weights();
    let a = Matrix::from_fn(state.m(), data.n(), |p, q| act.eval(dot(w.row(p), data.input(q)) + biases[p]));
    Ok(FeatureMatrix {
        a,
        biases: biases.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invertibility {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub invertible: bool,
}

pub fn gram_invertibility(f: &FeatureMatrix) -> Result<Invertibility> {
    if f.m() < f.n() {
        return Err(Error::Precondition(format!(
            "AᵀA is singular whenever m < n (m = {}, n = {})",
            f.m(),
            f.n()
        )));
    }
    let g = f.a.gram();
    let spec = symmetric_eigen(&g)?;
    let lambda_min = spec.lambda_min();
    Ok(Invertibility {
        lambda_min,
        lambda_max: spec.lambda_max(),
        invertible: lambda_min > INVERTIBILITY_TOL * g.frobenius_norm(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LazyFit {
    pub a_star: Vec<f64>,
    /// `Σ (y_i − f_i)²`.
    pub residual: f64,
    /// `λ_max / λ_min` of `AᵀA`.
    pub condition_number: f64,
}

/// Network outputs `f_i = m^{-1/2} Σ_r a_r A_ri`.
pub fn outputs(f: &FeatureMatrix, a: &[f64]) -> Result<Vec<f64>> {
    let s = 1.0 / (f.m() as f64).sqrt();
    Ok(f.a.tr_matvec(a)?.into_iter().map(|v| s * v).collect())
}

/// `∂L/∂a_r = −m^{-1/2} Σ_i (y_i − f_i) A_ri`.
pub fn output_gradient(f: &FeatureMatrix, a: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    let s = 1.0 / (f.m() as f64).sqrt();
    let e: Vec<f64> = data
        .targets()
        .iter()
        .zip(outputs(f, a)?)
        .map(|(y, u)| -(y - u))
        .collect();
    Ok(f.a.matvec(&e)?.into_iter().map(|v| s * v).collect())
}

/// Minimum-norm interpolating output weights `a = √m A (AᵀA)⁻¹ y`, solved
/// through the eigendecomposition of `AᵀA` with iterative refinement.
pub fn fit_last_layer(f: &FeatureMatrix, data: &Dataset) -> Result<LazyFit> {
    if data.n() != f.n() {
        return Err(Error::DimensionMismatch {
            context: "fit_last_layer targets",
            expected: f.n(),
            found: data.n(),
        });
    }
    let inv = gram_invertibility(f)?;
    if !inv.invertible {
        return Err(Error::Singular(format!(
            "λ_min(AᵀA) = {:e} is not above the invertibility tolerance",
            inv.lambda_min
        )));
    }
    let spec = symmetric_eigen(&f.a.gram())?;
    let g_inv = spec.apply_function(|l| 1.0 / l);
    let sqrt_m = (f.m() as f64).sqrt();
    let y = data.targets();

    let solve = |rhs: &[f64]| -> Result<Vec<f64>> {
        Ok(f.a.matvec(&g_inv.matvec(rhs)?)?.into_iter().map(|v| sqrt_m * v).collect())
    };
    let mut a_star = solve(y)?;
    for _ in 0..REFINEMENT_STEPS {
        let r: Vec<f64> = y.iter().zip(outputs(f, &a_star)?).map(|(yi, ui)| yi - ui).collect();
        for (ai, di) in a_star.iter_mut().zip(solve(&r)?) {
            *ai += di;
        }
    }
    let residual = y
        .iter()
        .zip(outputs(f, &a_star)?)
        .map(|(yi, ui)| (yi - ui) * (yi - ui))
        .sum();
    Ok(LazyFit {
        a_star,
        residual,
        condition_number: inv.lambda_max / inv.lambda_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::softplus;
    use crate::linalg::norm;
    use crate::model::init_state;
    use crate::rng;
    use rand::Rng;

    fn identity_example() -> (FeatureMatrix, Dataset) {
        let state = NetworkState::new(Matrix::identity(2), vec![1.0, 1.0]).unwrap();
        let data = Dataset::new(Matrix::identity(2), vec![0.3, -0.7], 1.0).unwrap();
        (feature_matrix(&state, &softplus(), &data, &[0.0, 0.0]).unwrap(), data)
    }

    fn sphere_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng::seeded(seed);
        let x = Matrix::from_fn(n, d, |_, _| rng::gaussian(&mut r));
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let v = x.row(i);
                let s = norm(v);
                v.iter().map(|t| t / s).collect()
            })
            .collect();
        let y = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        Dataset::new(Matrix::from_rows(&rows).unwrap(), y, 1.0).unwrap()
    }

    #[test]
    fn identity_weights_feature_values() {
        let (f, _) = identity_example();
        let big = (1.0 + 1f64.exp()).ln();
        assert!((f.a[(0, 0)] - 1.31326).abs() < 1e-5 && (f.a[(0, 0)] - big).abs() < 1e-15);
        assert_eq!(f.a[(0, 1)], std::f64::consts::LN_2);
        assert_eq!(f.a[(0, 1)], f.a[(1, 0)]);
        assert_eq!(f.a[(0, 0)], f.a[(1, 1)]);
    }

    #[test]
    fn identity_example_is_invertible() {
        let (f, _) = identity_example();
        let det = f.a[(0, 0)].powi(2) - f.a[(0, 1)].powi(2);
        assert!((det - 1.2442).abs() < 1e-3);
        assert!(gram_invertibility(&f).unwrap().invertible);
    }

    #[test]
    fn single_neuron_row() {
        let act = softplus();
        let data = sphere_data(3, 2, 1);
        let s = init_state(1, 2, 2).unwrap();
        let f = feature_matrix(&s, &act, &data, &[0.4]).unwrap();
        for q in 0..3 {
            assert_eq!(f.a[(0, q)], act.eval(dot(s.weights().row(0), data.input(q)) + 0.4));
        }
    }

    #[test]
    fn equal_rows_are_singular() {
        let state = NetworkState::new(Matrix::from_rows(&[[0.3, -0.2], [0.3, -0.2]]).unwrap(), vec![1.0, -1.0]).unwrap();
        let data = sphere_data(2, 2, 3);
        let f = feature_matrix(&state, &softplus(), &data, &[0.0, 0.0]).unwrap();
        let inv = gram_invertibility(&f).unwrap();
        assert!(!inv.invertible);
        assert!(matches!(fit_last_layer(&f, &data), Err(Error::Singular(_))));
    }

    #[test]
    fn too_few_neurons_rejected() {
        let data = sphere_data(3, 2, 4);
        let s = init_state(2, 2, 5).unwrap();
        let f = feature_matrix(&s, &softplus(), &data, &[0.0; 2]).unwrap();
        assert!(matches!(gram_invertibility(&f), Err(Error::Precondition(_))));
        assert!(feature_matrix(&s, &softplus(), &data, &[0.0; 3]).is_err());
    }

    #[test]
    fn square_fit_interpolates() {
        let act = softplus();
        for n in 2..=8 {
            let data = sphere_data(n, 4, 10 + n as u64);
            let s = init_state(n, 4, 20 + n as u64).unwrap();
            let f = feature_matrix(&s, &act, &data, &vec![0.0; n]).unwrap();
            let fit = fit_last_layer(&f, &data).unwrap();
            let ysq: f64 = data.targets().iter().map(|v| v * v).sum();
            assert!(fit.residual <= 1e-20 * ysq, "n={n}: {}", fit.residual);
            assert!(norm(&output_gradient(&f, &fit.a_star, &data).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn zero_targets_give_zero_weights() {
        let base = sphere_data(3, 3, 30);
        let data = base.with_targets(vec![0.0; 3]).unwrap();
        let s = init_state(5, 3, 31).unwrap();
        let f = feature_matrix(&s, &softplus(), &data, &[0.0; 5]).unwrap();
        let fit = fit_last_layer(&f, &data).unwrap();
        assert!(fit.a_star.iter().all(|&v| v == 0.0));
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn wide_fit_is_minimum_norm() {
        let act = softplus();
        let n = 4;
        let data = sphere_data(n, 3, 40);
        let s = init_state(2 * n, 3, 41).unwrap();
        let f = feature_matrix(&s, &act, &data, &[0.0; 8]).unwrap();
        let fit = fit_last_layer(&f, &data).unwrap();
        let ysq: f64 = data.targets().iter().map(|v| v * v).sum();
        assert!(fit.residual <= 1e-20 * ysq);
        // a_star lies in the row space of A; adding any null-space
        // direction of Aᵀ keeps the fit and increases the norm.
        let mut r = rng::seeded(42);
        for _ in 0..20 {
            let v = rng::gaussian_vec(&mut r, 2 * n);
            let c = f.a.tr_matvec(&v).unwrap();
            let z = symmetric_eigen(&f.a.gram()).unwrap().apply_function(|l| 1.0 / l).matvec(&c).unwrap();
            let proj = f.a.matvec(&z).unwrap();
            let null: Vec<f64> = v.iter().zip(&proj).map(|(a, b)| a - b).collect();
            let other: Vec<f64> = fit.a_star.iter().zip(&null).map(|(a, b)| a + b).collect();
            let res: f64 = data
                .targets()
                .iter()
                .zip(outputs(&f, &other).unwrap())
                .map(|(y, u)| (y - u) * (y - u))
                .sum();
            assert!(res < 1e-16);
            assert!(norm(&other) >= norm(&fit.a_star));
        }
    }
}
