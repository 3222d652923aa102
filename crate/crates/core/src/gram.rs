//! Gram matrices of the network's tangent features.
//!
//! * `C[W]_pq = (1/m) Σ_r σ′(w_rᵀx_p) σ′(w_rᵀx_q) · x_pᵀx_q`, the empirical
//!   Gram at weights `W`;
//! * `H∞_pq = E_z[σ′(zᵀx_p) σ′(zᵀx_q)] · x_pᵀx_q`, `z ~ N(0, I_d)`, its
//!   infinite-width limit, and `λ₀ = λ_min(H∞)`.
//!
//! `H∞` has two estimators. The quadrature path uses that
//! `(zᵀx_p, zᵀx_q)` is bivariate normal with covariance
//! `[[‖x_p‖², x_pᵀx_q], [x_pᵀx_q, ‖x_q‖²]]` and is the reference; the
//! Monte Carlo path is the finite-sample object the positivity theorem is
//! about.

use std::io::Write;

use rayon::prelude::*;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::{dot, symmetric_eigen, Matrix};
use crate::model::{self, Dataset, NetworkState};
use crate::quadrature::GaussHermite;
use crate::rng;
use crate::theory;

pub const DEFAULT_QUADRATURE_NODES: usize = 60;
pub const MIN_QUADRATURE_NODES: usize = 20;
pub const MIN_MC_SAMPLES: usize = 1000;
const MC_CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq)]
pub enum GramKind {
    Empirical { m: usize },
    MonteCarlo { samples: usize, seed: u64 },
    Quadrature { nodes: usize },
}

#[derive(Debug, Clone)]
pub struct GramEstimate {
    pub matrix: Matrix,
    pub lambda_min: f64,
    pub kind: GramKind,
    pub dataset_id: String,
    /// Per-entry standard errors (Monte Carlo only).
    pub std_errors: Option<Matrix>,
}

impl GramEstimate {
    fn build(matrix: Matrix, kind: GramKind, dataset_id: String, std_errors: Option<Matrix>) -> Result<Self> {
        let lambda_min = symmetric_eigen(&matrix)?.lambda_min();
        Ok(Self {
            matrix,
            lambda_min,
            kind,
            dataset_id,
            std_errors,
        })
    }

    /// `sqrt(Σ_pq se_pq²)`: the expected size of `‖Ĥ − H‖_F` for the Monte
    /// Carlo estimator.
    pub fn aggregate_std_error(&self) -> Option<f64> {
        self.std_errors
            .as_ref()
            .map(|se| se.as_slice().iter().map(|s| s * s).sum::<f64>().sqrt())
    }
}

/// Write an n×n grid as delimited text with a header `c0,c1,…`.
pub fn write_matrix_csv<W: Write>(matrix: &Matrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..matrix.cols()).map(|j| format!("c{j}")))?;
    for i in 0..matrix.rows() {
        w.write_record(matrix.row(i).iter().map(|&x| crate::fmt_f64(x)))?;
    }
    w.flush()?;
    Ok(())
}

/// Pairwise inner products `x_pᵀx_q`.
fn input_gram(inputs: &Matrix) -> Matrix {
    let n = inputs.rows();
    Matrix::from_fn(n, n, |p, q| dot(inputs.row(p), inputs.row(q)))
}

/// `C[W]` by the direct formula.
pub fn empirical_gram_matrix(state: &NetworkState, act: &Activation, data: &Dataset) -> Result<Matrix> {
    let z = model::preactivations(state, data)?;
    let (m, n) = z.shape();
    let mut c = Matrix::zeros(n, n);
    let mut slopes = vec![0.0; n];
    for r in 0..m {
        for (s, &zi) in slopes.iter_mut().zip(z.row(r)) {
            *s = act.d1(zi);
        }
        for p in 0..n {
            for q in p..n {
                c[(p, q)] += slopes[p] * slopes[q];
            }
        }
    }
    let xx = input_gram(data.inputs());
    let inv_m = 1.0 / m as f64;
    for p in 0..n {
        for q in p..n {
            let v = c[(p, q)] * inv_m * xx[(p, q)];
            c[(p, q)] = v;
            c[(q, p)] = v;
        }
    }
    Ok(c)
}

/// `C[W]` as `(𝒜 ⊙ ℬ)ᵀ(𝒜 ⊙ ℬ)`, which agrees with the direct formula
/// because `a_r² = 1`.
pub fn empirical_gram_khatri_rao(state: &NetworkState, act: &Activation, data: &Dataset) -> Result<Matrix> {
    model::khatri_rao_factors(state, act, data)?.gram()
}

pub fn empirical_gram(state: &NetworkState, act: &Activation, data: &Dataset) -> Result<GramEstimate> {
    let matrix = empirical_gram_matrix(state, act, data)?;
    GramEstimate::build(matrix, GramKind::Empirical { m: state.m() }, data.fingerprint(), None)
}

/// Monte Carlo `H∞` from `samples` shared Gaussian draws. Draws are taken
/// in fixed-size chunks, each with its own derived seed, and reduced in
/// chunk order, so the result does not depend on thread scheduling.
pub fn hinfty_monte_carlo(data: &Dataset, act: &Activation, samples: usize, seed: u64) -> Result<GramEstimate> {
    let (matrix, se) = hinfty_monte_carlo_points(data.inputs(), act, samples, seed)?;
    GramEstimate::build(
        matrix,
        GramKind::MonteCarlo { samples, seed },
        data.fingerprint(),
        Some(se),
    )
}

/// Monte Carlo estimator on raw input rows (no dataset invariants; lets
/// tests use repeated directions). Returns the mean and per-entry
/// standard errors.
pub fn hinfty_monte_carlo_points(
    inputs: &Matrix,
    act: &Activation,
    samples: usize,
    seed: u64,
) -> Result<(Matrix, Matrix)> {
    if samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo H∞ needs at least {MIN_MC_SAMPLES} samples, got {samples}"
        )));
    }
    let (n, d) = inputs.shape();
    let xx = input_gram(inputs);
    let chunks = samples.div_ceil(MC_CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut r = rng::seeded(rng::derive_seed(seed, &[c as u64]));
            let mut sum = vec![0.0; n * n];
            let mut sumsq = vec![0.0; n * n];
            let mut z = vec![0.0; d];
            let mut slopes = vec![0.0; n];
            for _ in 0..count {
                for zk in z.iter_mut() {
                    *zk = rng::gaussian(&mut r);
                }
                for (p, s) in slopes.iter_mut().enumerate() {
                    *s = act.d1(dot(&z, inputs.row(p)));
                }
                for p in 0..n {
                    for q in p..n {
                        let v = slopes[p] * slopes[q] * xx[(p, q)];
                        sum[p * n + q] += v;
                        sumsq[p * n + q] += v * v;
                    }
                }
            }
            (sum, sumsq)
        })
        .collect();

    let mut sum = vec![0.0; n * n];
    let mut sumsq = vec![0.0; n * n];
    for (s, sq) in &partials {
        for k in 0..n * n {
            sum[k] += s[k];
            sumsq[k] += sq[k];
        }
    }
    let mf = samples as f64;
    let mut mean = Matrix::zeros(n, n);
    let mut se = Matrix::zeros(n, n);
    for p in 0..n {
        for q in p..n {
            let mu = sum[p * n + q] / mf;
            let var = ((sumsq[p * n + q] / mf - mu * mu) * mf / (mf - 1.0)).max(0.0);
            let s = (var / mf).sqrt();
            mean[(p, q)] = mu;
            mean[(q, p)] = mu;
            se[(p, q)] = s;
            se[(q, p)] = s;
        }
    }
    Ok((mean, se))
}

/// Reference `H∞` by tensor Gauss–Hermite quadrature.
pub fn hinfty_quadrature(data: &Dataset, act: &Activation, nodes: usize) -> Result<GramEstimate> {
    let matrix = hinfty_quadrature_points(data.inputs(), act, nodes)?;
    GramEstimate::build(matrix, GramKind::Quadrature { nodes }, data.fingerprint(), None)
}

pub fn hinfty_quadrature_points(inputs: &Matrix, act: &Activation, nodes: usize) -> Result<Matrix> {
    if nodes < MIN_QUADRATURE_NODES {
        return Err(Error::InvalidArgument(format!(
            "quadrature needs at least {MIN_QUADRATURE_NODES} nodes, got {nodes}"
        )));
    }
    let rule = GaussHermite::new(nodes)?;
    let n = inputs.rows();
    let xx = input_gram(inputs);
    let mut h = Matrix::zeros(n, n);
    for p in 0..n {
        for q in p..n {
            let cross = xx[(p, q)];
            let v = if cross == 0.0 {
                0.0
            } else {
                let e = rule
                    .expect_bivariate(xx[(p, p)], xx[(q, q)], cross, |u, v| act.d1(u) * act.d1(v))
                    .map_err(|err| Error::InvalidArgument(format!("H∞ entry ({p},{q}): {err}")))?;
                e * cross
            };
            h[(p, q)] = v;
            h[(q, p)] = v;
        }
    }
    Ok(h)
}

/// `λ₀ = λ_min(H∞)` from the quadrature estimator at the default node count.
/// Fails unless the result is strictly positive.
pub fn lambda0(data: &Dataset, act: &Activation) -> Result<f64> {
    let est = hinfty_quadrature(data, act, DEFAULT_QUADRATURE_NODES)?;
    if est.lambda_min <= 0.0 {
        return Err(Error::NonPositiveLambda0(est.lambda_min));
    }
    Ok(est.lambda_min)
}

#[derive(Debug, Clone)]
pub struct PositivityOutcome {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// `1 − nδ`.
    pub guaranteed_rate: f64,
    /// Binomial standard error at the guaranteed rate.
    pub std_error: f64,
    /// `success_rate ≥ 1 − nδ − 3·std_error`.
    pub passed: bool,
    /// `λ_min(C[W(0)])` for every trial, in trial order.
    pub lambda_mins: Vec<f64>,
}

/// Empirical frequency of `λ_min(C[W(0)]) > ¾λ₀` over independent
/// initializations at width `m`. Requires `m` above the width threshold.
pub fn positivity_trial(
    data: &Dataset,
    act: &Activation,
    lambda0: f64,
    m: usize,
    trials: usize,
    delta: f64,
    seed: u64,
) -> Result<PositivityOutcome> {
    let threshold = theory::m_threshold(data.n(), delta, act.c1, act.c2, lambda0)?;
    if (m as u64) < threshold {
        return Err(Error::Precondition(format!(
            "m = {m} is below the width threshold {threshold}"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("positivity_trial needs at least one trial".into()));
    }
    let lambda_mins: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|j| {
            let s = model::init_state(m, data.d(), rng::derive_seed(seed, &[m as u64, j as u64]))?;
            let c = empirical_gram_matrix(&s, act, data)?;
            Ok(symmetric_eigen(&c)?.lambda_min())
        })
        .collect::<Result<_>>()?;
    let successes = lambda_mins.iter().filter(|&&l| l > 0.75 * lambda0).count();
    let success_rate = successes as f64 / trials as f64;
    let guaranteed_rate = 1.0 - data.n() as f64 * delta;
    let p = guaranteed_rate.clamp(0.0, 1.0);
    let std_error = (p * (1.0 - p) / trials as f64).sqrt();
    Ok(PositivityOutcome {
        trials,
        successes,
        success_rate,
        guaranteed_rate,
        std_error,
        passed: success_rate >= guaranteed_rate - 3.0 * std_error,
        lambda_mins,
    })
}
