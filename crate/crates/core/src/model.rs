//! The two-layer network `f(W, x, a) = m^{-1/2} Σ_r a_r σ(w_rᵀx)`, its
//! quadratic loss, and the loss gradient in W.
//!
//! The gradient has a direct per-neuron form and a factored form
//! `∇L = (𝒜 ⊙ ℬ) e`, where `𝒜_pq = m^{-1/2} a_p σ′(w_pᵀx_q)` (m×n),
//! `ℬ` holds the inputs as columns (d×n), `⊙` is the Khatri–Rao product and
//! `e = u − y`. Both are implemented; [`GradientMode::Verify`] runs both.

use std::path::Path;

use rand::Rng;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::{self, dot, khatri_rao, Matrix};
use crate::rng;

/// Inputs must satisfy `‖x‖ ≤ 1 + NORM_SLACK` (normalized vectors carry a
/// few ulps of rounding).
pub const NORM_SLACK: f64 = 1e-12;
/// Minimum pairwise distance between inputs.
pub const MIN_SEPARATION: f64 = 1e-9;
/// Absolute agreement required between the two gradient paths.
pub const PATH_TOLERANCE: f64 = 1e-12;

/// Training inputs (rows of an n×d matrix) and scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    targets: Vec<f64>,
    kappa: f64,
}

impl Dataset {
    /// Validates `‖x_i‖ ≤ 1`, pairwise distinct inputs, and `|y_i| < κ`.
    pub fn new(inputs: Matrix, targets: Vec<f64>, kappa: f64) -> Result<Self> {
        let (n, d) = inputs.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidDataset("dataset needs n ≥ 1 and d ≥ 1".into()));
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                context: "Dataset::new targets",
                expected: n,
                found: targets.len(),
            });
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidDataset(format!("kappa must be positive and finite, got {kappa}")));
        }
        if !inputs.is_finite() || targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidDataset("non-finite value in inputs or targets".into()));
        }
        for i in 0..n {
            let nx = linalg::norm(inputs.row(i));
            if nx > 1.0 + NORM_SLACK {
                return Err(Error::InvalidDataset(format!(
                    "input {i} has norm {nx} > 1 (inputs must lie in the unit ball ‖x‖ ≤ 1)"
                )));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = distance(inputs.row(i), inputs.row(j));
                if dist <= MIN_SEPARATION {
                    return Err(Error::InvalidDataset(format!(
                        "inputs {i} and {j} are {dist:e} apart (inputs must be pairwise distinct, ‖x_i − x_j‖ > {MIN_SEPARATION:e})"
                    )));
                }
            }
        }
        if let Some((i, y)) = targets.iter().enumerate().find(|(_, y)| y.abs() >= kappa) {
            return Err(Error::InvalidDataset(format!(
                "target {i} = {y} violates |y| < kappa = {kappa}"
            )));
        }
        Ok(Self { inputs, targets, kappa })
    }

    pub fn n(&self) -> usize {
        self.inputs.rows()
    }

    pub fn d(&self) -> usize {
        self.inputs.cols()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Same inputs, new targets (validated against κ).
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        Self::new(self.inputs.clone(), targets, self.kappa)
    }

    /// Stable FNV-1a digest of inputs and targets, used to tag derived
    /// objects with the data they came from.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let (n, d) = self.inputs.shape();
        let words = [n as u64, d as u64]
            .into_iter()
            .chain(self.inputs.as_slice().iter().map(|x| x.to_bits()))
            .chain(self.targets.iter().map(|y| y.to_bits()));
        for w in words {
            for byte in w.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }

    /// Read a delimited text file: a header row, then one example per row
    /// with `d` feature columns followed by the target.
    pub fn load_csv(path: impl AsRef<Path>, kappa: f64) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let header = reader.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "{}: need at least one feature column and a target column",
                path.display()
            )));
        }
        if header.iter().all(|h| h.parse::<f64>().is_ok()) {
            return Err(Error::InvalidDataset(format!(
                "{}: header row missing (first row is numeric)",
                path.display()
            )));
        }
        let d = header.len() - 1;
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(Error::InvalidDataset(format!(
                    "{}: row {} has {} columns, header has {}",
                    path.display(),
                    line + 1,
                    rec.len(),
                    d + 1
                )));
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::InvalidDataset(format!(
                        "{}: row {} column {} is not a number: `{field}`",
                        path.display(),
                        line + 1,
                        k + 1
                    ))
                })?;
                if k < d {
                    features.push(v);
                } else {
                    targets.push(v);
                }
            }
        }
        let n = targets.len();
        Self::new(Matrix::from_vec(n, d, features)?, targets, kappa)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.d()).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.input(i).iter().map(|&x| crate::fmt_f64(x)).collect();
            rec.push(crate::fmt_f64(self.targets[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Input weights `W` (row r is `w_r`) and the frozen output signs `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    weights: Matrix,
    signs: Vec<f64>,
}

impl NetworkState {
    pub fn new(weights: Matrix, signs: Vec<f64>) -> Result<Self> {
        let m = weights.rows();
        if m == 0 || weights.cols() == 0 {
            return Err(Error::InvalidArgument("network needs m ≥ 1 and d ≥ 1".into()));
        }
        if signs.len() != m {
            return Err(Error::DimensionMismatch {
                context: "NetworkState::new signs",
                expected: m,
                found: signs.len(),
            });
        }
        if let Some(s) = signs.iter().find(|&&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidArgument(format!("output sign {s} is not ±1")));
        }
        Ok(Self { weights, signs })
    }

    pub fn m(&self) -> usize {
        self.weights.rows()
    }

    pub fn d(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// Replace the input weights; the output signs never change.
    pub fn with_weights(&self, weights: Matrix) -> Result<Self> {
        if weights.shape() != self.weights.shape() {
            return Err(Error::DimensionMismatch {
                context: "NetworkState::with_weights",
                expected: self.weights.rows() * self.weights.cols(),
                found: weights.rows() * weights.cols(),
            });
        }
        Ok(Self {
            weights,
            signs: self.signs.clone(),
        })
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    fn inv_sqrt_m(&self) -> f64 {
        1.0 / (self.m() as f64).sqrt()
    }
}

/// `w_r ~ N(0, I_d)` i.i.d., then `a_r ~ unif{−1, +1}`, from one ChaCha8
/// stream seeded by `seed`.
pub fn init_state(m: usize, d: usize, seed: u64) -> Result<NetworkState> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("init_state needs m, d ≥ 1 (got m={m}, d={d})")));
    }
    let mut r = rng::seeded(seed);
    let weights = Matrix::from_vec(m, d, rng::gaussian_vec(&mut r, m * d))?;
    let signs = (0..m).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
    NetworkState::new(weights, signs)
}

fn check_dims(state: &NetworkState, data: &Dataset) -> Result<()> {
    if state.d() != data.d() {
        return Err(Error::DimensionMismatch {
            context: "network/dataset input dimension",
            expected: state.d(),
            found: data.d(),
        });
    }
    Ok(())
}

/// `Z = W Xᵀ` (m×n): every preactivation `w_rᵀx_i`.
pub fn preactivations(state: &NetworkState, data: &Dataset) -> Result<Matrix> {
    check_dims(state, data)?;
    let (m, n) = (state.m(), data.n());
    Ok(Matrix::from_fn(m, n, |r, i| dot(state.weights.row(r), data.input(i))))
}

pub fn forward(state: &NetworkState, act: &Activation, x: &[f64]) -> Result<f64> {
    if x.len() != state.d() {
        return Err(Error::DimensionMismatch {
            context: "forward input",
            expected: state.d(),
            found: x.len(),
        });
    }
    let sum: f64 = (0..state.m())
        .map(|r| state.signs[r] * act.eval(dot(state.weights.row(r), x)))
        .sum();
    Ok(state.inv_sqrt_m() * sum)
}

/// `u_i = f(W, x_i, a)` for every training input.
pub fn predictions(state: &NetworkState, act: &Activation, data: &Dataset) -> Result<Vec<f64>> {
    check_dims(state, data)?;
    (0..data.n()).map(|i| forward(state, act, data.input(i))).collect()
}

/// `e = u − y`.
pub fn residuals(state: &NetworkState, act: &Activation, data: &Dataset) -> Result<Vec<f64>> {
    let u = predictions(state, act, data)?;
    Ok(u.iter().zip(data.targets()).map(|(ui, yi)| ui - yi).collect())
}

/// `L = ½ Σ_i (y_i − u_i)²`.
pub fn loss(state: &NetworkState, act: &Activation, data: &Dataset) -> Result<f64> {
    let e = residuals(state, act, data)?;
    Ok(0.5 * e.iter().map(|x| x * x).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Per-neuron sum `∂L/∂w_r = m^{-1/2} a_r Σ_i e_i σ′(w_rᵀx_i) x_i`.
    #[default]
    Direct,
    /// Reshaped `(𝒜 ⊙ ℬ) e`.
    KhatriRao,
    /// Both, failing with [`Error::PathMismatch`] if they differ by more
    /// than [`PATH_TOLERANCE`].
    Verify,
}

/// `∂L/∂W` as an m×d matrix, computed with the direct formula.
pub fn gradient(state: &NetworkState, act: &Activation, data: &Dataset) -> Result<Matrix> {
    gradient_with_mode(state, act, data, GradientMode::Direct)
}

pub fn gradient_with_mode(
    state: &NetworkState,
    act: &Activation,
    data: &Dataset,
    mode: GradientMode,
) -> Result<Matrix> {
    let e = residuals(state, act, data)?;
    gradient_for_residual(state, act, data, &e, mode)
}

/// Gradient for a given residual vector `e` (the map is linear in `e`).
pub fn gradient_for_residual(
    state: &NetworkState,
    act: &Activation,
    data: &Dataset,
    e: &[f64],
    mode: GradientMode,
) -> Result<Matrix> {
    if e.len() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "gradient residual",
            expected: data.n(),
            found: e.len(),
        });
    }
    match mode {
        GradientMode::Direct => direct_gradient(state, act, data, e),
        GradientMode::KhatriRao => khatri_rao_factors(state, act, data)?.gradient(e),
        GradientMode::Verify => {
            let direct = direct_gradient(state, act, data, e)?;
            let factored = khatri_rao_factors(state, act, data)?.gradient(e)?;
            let gap = direct.sub(&factored)?.max_abs();
            if gap > PATH_TOLERANCE {
                return Err(Error::PathMismatch(gap));
            }
            Ok(direct)
        }
    }
}

fn direct_gradient(state: &NetworkState, act: &Activation, data: &Dataset, e: &[f64]) -> Result<Matrix> {
    check_dims(state, data)?;
    let (m, d) = (state.m(), state.d());
    let scale = state.inv_sqrt_m();
    let mut g = Matrix::zeros(m, d);
    for r in 0..m {
        let w = state.weights.row(r);
        let coef = scale * state.signs[r];
        let row = g.row_mut(r);
        for (i, &ei) in e.iter().enumerate() {
            let x = data.input(i);
            let c = coef * ei * act.d1(dot(w, x));
            for (gl, &xl) in row.iter_mut().zip(x) {
                *gl += c * xl;
            }
        }
    }
    Ok(g)
}

/// The factor pair `(𝒜, ℬ)` with `∇L = (𝒜 ⊙ ℬ) e`.
#[derive(Debug, Clone, PartialEq)]
pub struct KhatriRaoFactors {
    /// m×n, entries `m^{-1/2} a_p σ′(w_pᵀx_q)`.
    pub a_factor: Matrix,
    /// d×n, column q is `x_q`.
    pub b_factor: Matrix,
}

impl KhatriRaoFactors {
    /// The (md)×n matrix `𝒜 ⊙ ℬ`.
    pub fn product(&self) -> Result<Matrix> {
        khatri_rao(&self.a_factor, &self.b_factor)
    }

    /// `(𝒜 ⊙ ℬ) e` reshaped row-major into m×d.
    pub fn gradient(&self, e: &[f64]) -> Result<Matrix> {
        let flat = self.product()?.matvec(e)?;
        Matrix::from_vec(self.a_factor.rows(), self.b_factor.rows(), flat)
    }

    /// `(𝒜 ⊙ ℬ)ᵀ (𝒜 ⊙ ℬ)`, which equals the empirical Gram `C[W]`.
    pub fn gram(&self) -> Result<Matrix> {
        Ok(self.product()?.gram())
    }
}

pub fn khatri_rao_factors(state: &NetworkState, act: &Activation, data: &Dataset) -> Result<KhatriRaoFactors> {
    let z = preactivations(state, data)?;
    let scale = state.inv_sqrt_m();
    let a_factor = Matrix::from_fn(state.m(), data.n(), |p, q| scale * state.signs[p] * act.d1(z[(p, q)]));
    Ok(KhatriRaoFactors {
        a_factor,
        b_factor: data.inputs().transpose(),
    })
}
