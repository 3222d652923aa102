//! Smooth activations with certified bounds on σ′, σ″ and E[σ(wᵀx)²].

use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;
use crate::rng;

/// `E[softplus(g)²]` for `g ~ N(0, 1)`. Frozen from a 60-node Gauss–Hermite
/// evaluation and cross-checked against adaptive quadrature and a 10⁷-sample
/// Monte Carlo run (see `tests/oracles.rs`).
pub const SOFTPLUS_C3: f64 = 0.921_245_908_859_300_2;

/// Absolute slack allowed when comparing observed values to declared bounds.
pub const BOUND_TOLERANCE: f64 = 1e-12;

/// Nodes used for every quadrature check of assumption (b).
const C3_NODES: usize = 60;

type ScalarFn = fn(f64) -> f64;

/// A scalar nonlinearity with its first two derivatives and the bound
/// constants the convergence theory depends on:
/// `|σ′| ≤ c1`, `|σ″| ≤ c2`, and `E[σ(wᵀx)²] ≤ c3` for `w ~ N(0, I)`,
/// `‖x‖ ≤ 1`.
#[derive(Debug, Clone)]
pub struct Activation {
    pub name: String,
    pub sigma: ScalarFn,
    pub sigma_prime: ScalarFn,
    pub sigma_double_prime: ScalarFn,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Activation {
    /// Register an activation with user-supplied constants. Nothing is
    /// checked here; gate it through [`verify_assumptions`] before use.
    pub fn new(
        name: impl Into<String>,
        sigma: ScalarFn,
        sigma_prime: ScalarFn,
        sigma_double_prime: ScalarFn,
        c1: f64,
        c2: f64,
        c3: f64,
    ) -> Self {
        Self {
            name: name.into(),
            sigma,
            sigma_prime,
            sigma_double_prime,
            c1,
            c2,
            c3,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        (self.sigma_prime)(x)
    }

    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        (self.sigma_double_prime)(x)
    }

    /// Copy with the declared constants replaced.
    pub fn with_constants(&self, c1: f64, c2: f64, c3: f64) -> Self {
        Self {
            c1,
            c2,
            c3,
            ..self.clone()
        }
    }

    /// Look up a built-in activation by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "softplus" => Ok(softplus()),
            "tanh" => Ok(tanh()),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

fn softplus_sigma(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logistic_prime(x: f64) -> f64 {
    let s = logistic(x);
    // 1 − s loses everything for large x; use the mirrored value instead
    s * logistic(-x)
}

/// Softplus `σ(x) = ln(1 + eˣ)`: `c1 = 1`, `c2 = 1/4`, `c3 = E[σ(g)²]`.
///
/// The supremum in assumption (b) sits at `‖x‖ = 1` because `E[σ(s g)²]` is
/// nondecreasing in the scale `s`.
pub fn softplus() -> Activation {
    Activation::new(
        "softplus",
        softplus_sigma,
        logistic,
        logistic_prime,
        1.0,
        0.25,
        SOFTPLUS_C3,
    )
}

fn tanh_prime(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

fn tanh_double_prime(x: f64) -> f64 {
    let t = x.tanh();
    -2.0 * t * (1.0 - t * t)
}

/// Hyperbolic tangent with conservative constants: `|tanh′| ≤ 1`,
/// `|tanh″| ≤ 4/(3√3)`, and `c3 = 1` since `|tanh| < 1`.
pub fn tanh() -> Activation {
    Activation::new(
        "tanh",
        f64::tanh,
        tanh_prime,
        tanh_double_prime,
        1.0,
        4.0 / (3.0 * 3.0_f64.sqrt()),
        1.0,
    )
}

/// `E[σ(s·g)²]`, `g ~ N(0, 1)`: the assumption-(b) quantity for an input
/// of norm `s` (only the norm matters since `wᵀx ~ N(0, ‖x‖²)`).
pub fn second_moment_at_scale(act: &Activation, scale: f64, nodes: usize) -> Result<f64> {
    let q = GaussHermite::new(nodes)?;
    Ok(q.expect(|g| {
        let v = act.eval(scale * g);
        v * v
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub name: String,
    pub max_abs_sigma_prime: f64,
    pub max_abs_sigma_double_prime: f64,
    /// `E[σ(g)²]` at input norm 1.
    pub second_moment_unit: f64,
    /// Largest `E[σ(s g)²]` over the 11 scales `s ∈ {0, 0.1, …, 1}`.
    pub second_moment_sup: f64,
    pub c1_ok: bool,
    pub c2_ok: bool,
    pub c3_ok: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.c1_ok && self.c2_ok && self.c3_ok
    }
}

/// Check assumptions (a) and (b) numerically: a dense grid on [−50, 50]
/// plus `samples` standard-Gaussian points for the derivative bounds, and
/// Gauss–Hermite quadrature at 11 input norms for the second moment.
///
/// Returns the report on success and [`Error::AssumptionViolated`] when any
/// declared constant is exceeded by more than [`BOUND_TOLERANCE`].
pub fn verify_assumptions(act: &Activation, samples: usize, seed: u64) -> Result<AssumptionReport> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "verify_assumptions needs at least 1000 samples, got {samples}"
        )));
    }
    const GRID: usize = 200_001;
    let grid = (0..GRID).map(|i| -50.0 + 100.0 * i as f64 / (GRID - 1) as f64);
    let mut r = rng::seeded(seed);
    let draws: Vec<f64> = rng::gaussian_vec(&mut r, samples);

    let mut max_d1 = 0.0_f64;
    let mut max_d2 = 0.0_f64;
    for x in grid.chain(draws.iter().copied()) {
        max_d1 = max_d1.max(act.d1(x).abs());
        max_d2 = max_d2.max(act.d2(x).abs());
    }

    let unit = second_moment_at_scale(act, 1.0, C3_NODES)?;
    let mut sup = 0.0_f64;
    for k in 0..=10 {
        sup = sup.max(second_moment_at_scale(act, k as f64 / 10.0, C3_NODES)?);
    }

    let report = AssumptionReport {
        name: act.name.clone(),
        max_abs_sigma_prime: max_d1,
        max_abs_sigma_double_prime: max_d2,
        second_moment_unit: unit,
        second_moment_sup: sup,
        c1_ok: max_d1 <= act.c1 + BOUND_TOLERANCE,
        c2_ok: max_d2 <= act.c2 + BOUND_TOLERANCE,
        c3_ok: sup <= act.c3 + BOUND_TOLERANCE,
    };
    if report.passed() {
        return Ok(report);
    }
    let mut failed = Vec::new();
    if !report.c1_ok {
        failed.push(format!("max|σ′| = {max_d1} > c1 = {}", act.c1));
    }
    if !report.c2_ok {
        failed.push(format!("max|σ″| = {max_d2} > c2 = {}", act.c2));
    }
    if !report.c3_ok {
        failed.push(format!("sup E[σ²] = {sup} > c3 = {}", act.c3));
    }
    Err(Error::AssumptionViolated {
        name: act.name.clone(),
        detail: failed.join("; "),
    })
}

/// Largest discrepancy between the analytic derivatives and central
/// differences (step `h`) over `points` random locations drawn from
/// `N(0, 5²)`. Each error is `|fd − analytic| / max(|analytic|, 1e-2)`;
/// the floor keeps the tails, where σ″ is exponentially small but the
/// difference quotient carries `ε/h` rounding, from dominating.
pub fn derivative_consistency(act: &Activation, points: usize, h: f64, seed: u64) -> (f64, f64) {
    let mut r = rng::seeded(seed);
    let mut worst_d1 = 0.0_f64;
    let mut worst_d2 = 0.0_f64;
    for _ in 0..points {
        let x = 5.0 * rng::gaussian(&mut r);
        let fd1 = (act.eval(x + h) - act.eval(x - h)) / (2.0 * h);
        let fd2 = (act.d1(x + h) - act.d1(x - h)) / (2.0 * h);
        let a1 = act.d1(x);
        let a2 = act.d2(x);
        worst_d1 = worst_d1.max((fd1 - a1).abs() / a1.abs().max(1e-2));
        worst_d2 = worst_d2.max((fd2 - a2).abs() / a2.abs().max(1e-2));
    }
    (worst_d1, worst_d2)
}
