//! Width threshold and failure-probability arithmetic, the Gaussian
//! Lipschitz concentration check, and the distinct-projection sampler.

use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::ln_gamma;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::model::Dataset;
use crate::rng;

fn check_threshold_args(n: usize, delta: f64, lambda0: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::NonPositiveLambda0(lambda0));
    }
    Ok(())
}

/// `64 c1² c2² n² ln(2n/δ) / λ₀²`, before rounding.
pub fn threshold_bound(n: usize, delta: f64, c1: f64, c2: f64, lambda0: f64) -> Result<f64> {
    check_threshold_args(n, delta, lambda0)?;
    let n = n as f64;
    Ok(64.0 * c1 * c1 * c2 * c2 * n * n * (2.0 * n / delta).ln() / (lambda0 * lambda0))
}

/// Smallest integer width strictly above [`threshold_bound`].
pub fn m_threshold(n: usize, delta: f64, c1: f64, c2: f64, lambda0: f64) -> Result<u64> {
    let bound = threshold_bound(n, delta, c1, c2, lambda0)?;
    Ok(bound.floor() as u64 + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub n: usize,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub kappa: f64,
    pub lambda0: f64,
    pub m_threshold: u64,
    /// `D = sqrt(κ² + c3)`.
    pub d_constant: f64,
    /// `δ′ = nδ + D / (4 c1 c2 ln(2n/δ))`.
    pub delta_prime: f64,
    /// `1 − δ′`.
    pub prob_lower_bound: f64,
    /// `δ′ < 1`, i.e. the probability statement is non-vacuous.
    pub valid: bool,
}

pub fn theorem_report(n: usize, delta: f64, act: &Activation, kappa: f64, lambda0: f64) -> Result<TheoremReport> {
    let m_threshold = m_threshold(n, delta, act.c1, act.c2, lambda0)?;
    let log_term = (2.0 * n as f64 / delta).ln();
    let d_constant = (kappa * kappa + act.c3).sqrt();
    let delta_prime = n as f64 * delta + d_constant / (4.0 * act.c1 * act.c2 * log_term);
    Ok(TheoremReport {
        n,
        delta,
        c1: act.c1,
        c2: act.c2,
        c3: act.c3,
        kappa,
        lambda0,
        m_threshold,
        d_constant,
        delta_prime,
        prob_lower_bound: 1.0 - delta_prime,
        valid: delta_prime < 1.0,
    })
}

impl fmt::Display for TheoremReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use crate::fmt_f64 as g;
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "delta = {}", g(self.delta))?;
        writeln!(f, "c1 = {}", g(self.c1))?;
        writeln!(f, "c2 = {}", g(self.c2))?;
        writeln!(f, "c3 = {}", g(self.c3))?;
        writeln!(f, "kappa = {}", g(self.kappa))?;
        writeln!(f, "lambda0 = {}", g(self.lambda0))?;
        writeln!(f, "m_threshold = {}", self.m_threshold)?;
        writeln!(f, "D = {}", g(self.d_constant))?;
        writeln!(f, "delta_prime = {}", g(self.delta_prime))?;
        writeln!(f, "prob_lower_bound = {}", g(self.prob_lower_bound))?;
        write!(f, "valid = {}", self.valid)
    }
}

/// Lipschitz functions of a standard Gaussian vector with known constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    /// `x ↦ x₁`, L = 1, mean 0.
    Coordinate,
    /// `x ↦ ‖x‖`, L = 1, mean `√2 Γ((d+1)/2) / Γ(d/2)`.
    Norm,
    /// `x ↦ uᵀx` with `u = (1, …, 1)/√d`, L = 1, mean 0.
    UnitDot,
}

/// A base family multiplied by a nonzero constant (L scales by `|scale|`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationFamily {
    pub kind: FamilyKind,
    pub scale: f64,
}

impl ConcentrationFamily {
    pub fn new(kind: FamilyKind) -> Self {
        Self { kind, scale: 1.0 }
    }

    pub fn scaled(kind: FamilyKind, scale: f64) -> Self {
        Self { kind, scale }
    }

    pub fn lipschitz(&self) -> f64 {
        self.scale.abs()
    }

    pub fn mean(&self, dim: usize) -> f64 {
        let base = match self.kind {
            FamilyKind::Coordinate | FamilyKind::UnitDot => 0.0,
            FamilyKind::Norm => {
                let d = dim as f64;
                std::f64::consts::SQRT_2 * (ln_gamma(0.5 * (d + 1.0)) - ln_gamma(0.5 * d)).exp()
            }
        };
        self.scale * base
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let base = match self.kind {
            FamilyKind::Coordinate => x[0],
            FamilyKind::Norm => norm(x),
            FamilyKind::UnitDot => x.iter().sum::<f64>() / (x.len() as f64).sqrt(),
        };
        self.scale * base
    }
}

/// Tags: `coordinate`, `norm`, `unit_dot`, optionally suffixed `:<scale>`
/// (e.g. `norm:2.5`).
impl FromStr for ConcentrationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, scale) = match s.split_once(':') {
            Some((b, sc)) => {
                let scale: f64 = sc.parse().map_err(|_| Error::UnknownFamily(s.to_string()))?;
                if scale == 0.0 || !scale.is_finite() {
                    return Err(Error::UnknownFamily(s.to_string()));
                }
                (b, scale)
            }
            None => (s, 1.0),
        };
        let kind = match base {
            "coordinate" => FamilyKind::Coordinate,
            "norm" => FamilyKind::Norm,
            "unit_dot" => FamilyKind::UnitDot,
            _ => return Err(Error::UnknownFamily(s.to_string())),
        };
        Ok(Self { kind, scale })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationOutcome {
    pub empirical_prob: f64,
    /// `2 exp(−t² / 2L²)`.
    pub bound: f64,
    /// Binomial standard error at `min(bound, 1)`.
    pub std_error: f64,
    pub passed: bool,
}

/// Empirical `P[|f(X) − E f(X)| ≥ t]` over `trials` standard Gaussian
/// vectors of dimension `dim`, against the sub-Gaussian tail bound.
/// `lipschitz_l` must be at least the family's certified constant.
pub fn concentration_check(
    lipschitz_l: f64,
    family: ConcentrationFamily,
    dim: usize,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationOutcome> {
    if dim == 0 || trials == 0 {
        return Err(Error::InvalidArgument("concentration check needs dim ≥ 1 and trials ≥ 1".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("t must be nonnegative, got {t}")));
    }
    if lipschitz_l < family.lipschitz() {
        return Err(Error::Precondition(format!(
            "Lipschitz constant {lipschitz_l} is below the family's certified {}",
            family.lipschitz()
        )));
    }
    let mean = family.mean(dim);
    let mut r = rng::seeded(seed);
    let mut x = vec![0.0; dim];
    let mut hits = 0usize;
    for _ in 0..trials {
        for xi in x.iter_mut() {
            *xi = rng::gaussian(&mut r);
        }
        if (family.eval(&x) - mean).abs() >= t {
            hits += 1;
        }
    }
    let empirical_prob = hits as f64 / trials as f64;
    let bound = 2.0 * (-t * t / (2.0 * lipschitz_l * lipschitz_l)).exp();
    let p = bound.min(1.0);
    let std_error = (p * (1.0 - p) / trials as f64).sqrt();
    Ok(ConcentrationOutcome {
        empirical_prob,
        bound,
        std_error,
        passed: empirical_prob <= bound + 3.0 * std_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistinctProjection {
    pub w: Vec<f64>,
    pub attempts: usize,
    /// Smallest gap between sorted projections `wᵀx_i`.
    pub min_gap: f64,
}

/// Relative gap required between any two projections.
pub const PROJECTION_REL_GAP: f64 = 1e-12;
pub const PROJECTION_ABS_GAP: f64 = 1e-300;

/// Draw `w ~ N(0, I_d)` until the projections `wᵀx_i` are pairwise
/// separated by more than `1e-12 · max_i |wᵀx_i|` (and `1e-300`).
pub fn distinct_projection(data: &Dataset, seed: u64, max_attempts: usize) -> Result<DistinctProjection> {
    let mut r = rng::seeded(seed);
    for attempt in 1..=max_attempts {
        let w = rng::gaussian_vec(&mut r, data.d());
        let mut proj: Vec<f64> = (0..data.n()).map(|i| dot(&w, data.input(i))).collect();
        proj.sort_by(f64::total_cmp);
        let scale = proj.iter().fold(0.0_f64, |m, p| m.max(p.abs()));
        let min_gap = proj.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
        if min_gap > PROJECTION_REL_GAP * scale && min_gap > PROJECTION_ABS_GAP {
            return Ok(DistinctProjection {
                w,
                attempts: attempt,
                min_gap,
            });
        }
    }
    Err(Error::AttemptsExhausted(max_attempts))
}
