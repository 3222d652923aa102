//! Property suites run by `widthcert verify`. Each suite function takes its
//! own trial count and seed so the acceptance tests can run them at full
//! size while the CLI runs a quicker pass.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use super::sphere_points;
use crate::activation::{derivative_consistency, verify_assumptions, Activation};
use crate::error::{Error, Result};
use crate::gram::{empirical_gram_matrix, hinfty_monte_carlo, hinfty_quadrature, DEFAULT_QUADRATURE_NODES};
use crate::lazy::{feature_matrix, fit_last_layer, gram_invertibility, output_gradient};
use crate::linalg::{check_frobenius_entrywise, check_weyl_l2, norm, Matrix};
use crate::model::{self, Dataset, GradientMode};
use crate::rng::{self, SeededRng};
use crate::theory::{concentration_check, distinct_projection, ConcentrationFamily, FamilyKind};
use crate::trainer::gram_lipschitz_check;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;
pub const PATH_TOLERANCE: f64 = 1e-12;

/// `n` distinct points in the unit ball of ℝᵈ, pairwise at least
/// `min_distance` apart, with radii uniform in `[0.1, 1]`, and targets
/// uniform in `(−1, 1)`.
pub fn ball_dataset(n: usize, d: usize, min_distance: f64, r: &mut SeededRng) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut placed = false;
        for _ in 0..super::REJECTION_BUDGET {
            let dir = sphere_points(1, d, 0.0, r)?;
            let radius = r.random_range(0.1..=1.0);
            let v: Vec<f64> = dir.row(0).iter().map(|x| radius * x).collect();
            let clear = rows.iter().all(|u| {
                let d2: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= min_distance
            });
            if clear {
                rows.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidDataset(format!("could not place {n} points {min_distance} apart in the unit ball of ℝ^{d}")));
        }
    }
    let y = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    Dataset::new(Matrix::from_rows(&rows)?, y, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// `max ‖g_fd − g‖_∞ / max(‖g‖_∞, 10⁻³)` over instances.
    pub max_rel_error: f64,
    /// Largest `|∇_direct − ∇_KR|` entry over instances.
    pub max_path_gap: f64,
}

/// Central differences of the loss against the analytic gradient on random
/// instances with `m ≤ 16`, `d ≤ 8`, `n ≤ 8`. `perturbation` is added to every
/// analytic gradient entry (fault injection; 0 for a clean run).
pub fn gradient_fd(act: &Activation, instances: usize, seed: u64, perturbation: f64) -> Result<GradientCheck> {
    let per: Vec<(f64, f64)> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::seeded(rng::derive_seed(seed, &[k as u64]));
            let (m, d, n) = (r.random_range(1..=16), r.random_range(1..=8), r.random_range(1..=8));
            let data = ball_dataset(n, d, 1e-3, &mut r)?;
            let state = model::init_state(m, d, r.random())?;
            let direct = model::gradient_with_mode(&state, act, &data, GradientMode::Direct)?;
            let kr = model::gradient_with_mode(&state, act, &data, GradientMode::KhatriRao)?;
            let gap = direct.sub(&kr)?.max_abs();
            let mut worst = 0.0_f64;
            for idx in 0..m * d {
                let mut plus = state.weights().clone();
                let mut minus = state.weights().clone();
                plus.as_mut_slice()[idx] += FD_STEP;
                minus.as_mut_slice()[idx] -= FD_STEP;
                let lp = model::loss(&state.with_weights(plus)?, act, &data)?;
                let lm = model::loss(&state.with_weights(minus)?, act, &data)?;
                let fd = (lp - lm) / (2.0 * FD_STEP);
                worst = worst.max((fd - (direct.as_slice()[idx] + perturbation)).abs());
            }
            Ok((worst / direct.max_abs().max(1e-3), gap))
        })
        .collect::<Result<_>>()?;
    Ok(GradientCheck {
        max_rel_error: per.iter().fold(0.0, |a, p| a.max(p.0)),
        max_path_gap: per.iter().fold(0.0, |a, p| a.max(p.1)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LemmaViolations {
    pub weyl: usize,
    pub entrywise: usize,
}

/// Random PSD pairs `A = GᵀG/k`, `B = HᵀH/k` with `H = G + s·E`, sizes 2..=8,
/// perturbation scales log-uniform in `[10⁻⁶, 1]`. The entrywise lemma is
/// run with `ε = n²·max|A − B|·(1 + u)`, `u ~ U[0, 1)`.
pub fn perturbation_lemmas(pairs: usize, seed: u64) -> Result<LemmaViolations> {
    let flags: Vec<(bool, bool)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::seeded(rng::derive_seed(seed, &[k as u64]));
            let n = r.random_range(2..=8);
            let rows = r.random_range(1..=2 * n);
            let s = 10f64.powf(r.random_range(-6.0..0.0));
            let g = Matrix::from_vec(rows, n, rng::gaussian_vec(&mut r, rows * n))?;
            let e = Matrix::from_vec(rows, n, rng::gaussian_vec(&mut r, rows * n))?;
            let h = g.add(&e.scale(s))?;
            let a = g.gram().scale(1.0 / rows as f64);
            let b = h.gram().scale(1.0 / rows as f64);
            let weyl = check_weyl_l2(&a, &b)?;
            let nn = (n * n) as f64;
            let eps = nn * a.sub(&b)?.max_abs() * (1.0 + r.random::<f64>());
            let entry = check_frobenius_entrywise(&a, &b, eps)?;
            Ok((weyl, entry))
        })
        .collect::<Result<_>>()?;
    Ok(LemmaViolations {
        weyl: flags.iter().filter(|f| !f.0).count(),
        entrywise: flags.iter().filter(|f| !f.1).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McComparison {
    pub frobenius_error: f64,
    pub aggregate_se: f64,
}

impl McComparison {
    pub fn within(&self, k: f64) -> bool {
        self.frobenius_error <= k * self.aggregate_se
    }
}

/// Random sphere dataset with `n ≤ 8`, `d ≤ 6` for trial `k`.
fn sphere_dataset(seed: u64, k: usize) -> Result<Dataset> {
    let mut r = rng::seeded(rng::derive_seed(seed, &[k as u64]));
    let n = r.random_range(2..=8);
    let d = r.random_range(2..=6);
    let x = sphere_points(n, d, super::SPHERE_MIN_DISTANCE, &mut r)?;
    let y = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    Dataset::new(x, y, 1.0)
}

/// `‖Ĥ_MC − H_quad‖_F` and the aggregate standard error on `datasets`
/// random sphere datasets.
pub fn mc_vs_quadrature(act: &Activation, datasets: usize, samples: usize, seed: u64) -> Result<Vec<McComparison>> {
    (0..datasets)
        .map(|k| {
            let data = sphere_dataset(seed, k)?;
            let quad = hinfty_quadrature(&data, act, DEFAULT_QUADRATURE_NODES)?;
            let mc = hinfty_monte_carlo(&data, act, samples, rng::derive_seed(seed, &[k as u64, 1]))?;
            Ok(McComparison {
                frobenius_error: mc.matrix.sub(&quad.matrix)?.frobenius_norm(),
                aggregate_se: mc.aggregate_std_error().unwrap_or(0.0),
            })
        })
        .collect()
}

/// Root-mean-square `‖C[W(0)] − H∞‖_F` over `inits` initializations at each
/// width, and the least-squares slope of its logarithm against `ln m`.
pub fn empirical_gram_convergence(
    act: &Activation,
    data: &Dataset,
    widths: &[usize],
    inits: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let h = hinfty_quadrature(data, act, DEFAULT_QUADRATURE_NODES)?.matrix;
    let rms: Vec<f64> = widths
        .iter()
        .map(|&m| {
            let sq: Vec<f64> = (0..inits)
                .into_par_iter()
                .map(|j| {
                    let s = model::init_state(m, data.d(), rng::derive_seed(seed, &[m as u64, j as u64]))?;
                    Ok(empirical_gram_matrix(&s, act, data)?.sub(&h)?.frobenius_norm().powi(2))
                })
                .collect::<Result<_>>()?;
            Ok((sq.iter().sum::<f64>() / inits as f64).sqrt())
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = widths.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = rms.iter().map(|v| v.ln()).collect();
    Ok((rms, least_squares_slope(&xs, &ys)))
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRow {
    pub family: &'static str,
    pub t: f64,
    pub empirical: f64,
    pub bound: f64,
    pub std_error: f64,
    pub passed: bool,
}

pub const CONCENTRATION_GRID: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

/// Coordinate, norm and unit-dot families at dimension `dim` on the
/// threshold grid.
pub fn concentration_grid(dim: usize, trials: usize, seed: u64) -> Result<Vec<ConcentrationRow>> {
    let families = [
        ("coordinate", FamilyKind::Coordinate),
        ("norm", FamilyKind::Norm),
        ("unit_dot", FamilyKind::UnitDot),
    ];
    let mut rows = Vec::new();
    for (fi, (name, kind)) in families.into_iter().enumerate() {
        for (ti, &t) in CONCENTRATION_GRID.iter().enumerate() {
            let fam = ConcentrationFamily::new(kind);
            let out = concentration_check(1.0, fam, dim, t, trials, rng::derive_seed(seed, &[fi as u64, ti as u64]))?;
            rows.push(ConcentrationRow {
                family: name,
                t,
                empirical: out.empirical_prob,
                bound: out.bound,
                std_error: out.std_error,
                passed: out.passed,
            });
        }
    }
    Ok(rows)
}

/// Number of random datasets (n ≤ 8, d ≤ 6, pairwise distance ≥ 0.1) whose
/// first Gaussian draw already separates every projection.
pub fn distinct_projection_first_try(datasets: usize, seed: u64) -> Result<usize> {
    let firsts: Vec<bool> = (0..datasets)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::seeded(rng::derive_seed(seed, &[k as u64]));
            let n = r.random_range(2..=8);
            let d = r.random_range(1..=6);
            let data = ball_dataset(n, d, 0.1, &mut r)?;
            Ok(distinct_projection(&data, r.random(), 100)?.attempts == 1)
        })
        .collect::<Result<_>>()?;
    Ok(firsts.iter().filter(|&&f| f).count())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LazyStats {
    pub trials: usize,
    pub invertible: usize,
    /// `max residual / Σy²` over invertible trials.
    pub max_rel_residual: f64,
    pub max_gradient_norm: f64,
}

/// Square random-feature problems `m = n ∈ {2, …, 8}` on sphere data in
/// `d ∈ {3, …, 6}`.
pub fn lazy_trials(act: &Activation, trials: usize, seed: u64) -> Result<LazyStats> {
    let per: Vec<Option<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::seeded(rng::derive_seed(seed, &[k as u64]));
            let n = r.random_range(2..=8);
            let d = r.random_range(3..=6);
            let x = sphere_points(n, d, 0.1, &mut r)?;
            let y = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let data = Dataset::new(x, y, 1.0)?;
            let state = model::init_state(n, d, r.random())?;
            let f = feature_matrix(&state, act, &data, &vec![0.0; n])?;
            if !gram_invertibility(&f)?.invertible {
                return Ok(None);
            }
            let fit = fit_last_layer(&f, &data)?;
            let ysq: f64 = data.targets().iter().map(|v| v * v).sum();
            let g = norm(&output_gradient(&f, &fit.a_star, &data)?);
            Ok(Some((fit.residual / ysq, g)))
        })
        .collect::<Result<_>>()?;
    let ok: Vec<(f64, f64)> = per.iter().flatten().copied().collect();
    Ok(LazyStats {
        trials,
        invertible: ok.len(),
        max_rel_residual: ok.iter().fold(0.0, |a, p| a.max(p.0)),
        max_gradient_norm: ok.iter().fold(0.0, |a, p| a.max(p.1)),
    })
}

/// Deliberate defects for checking that the suite notices them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Faults {
    /// Added to every analytic gradient entry in the finite-difference suite.
    pub gradient_perturbation: f64,
    /// Replaces the activation's declared `c2`.
    pub c2_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suites: Vec<SuiteResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(f, "[{}] {}: {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.detail)?;
        }
        write!(f, "suite_ok = {}", self.passed())
    }
}

fn suite(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    match body() {
        Ok((passed, detail)) => SuiteResult { name, passed, detail },
        Err(e) => SuiteResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Run every suite at CLI size.
pub fn run_verify(act: &Activation, seed: u64, faults: Faults) -> SuiteReport {
    use crate::fmt_f64 as g;
    let act = match faults.c2_override {
        Some(c2) => act.with_constants(act.c1, c2, act.c3),
        None => act.clone(),
    };
    let s = |k: u64| rng::derive_seed(seed, &[k]);
    let mut suites = Vec::new();

    suites.push(suite("activation assumptions", || {
        let rep = verify_assumptions(&act, 100_000, s(1))?;
        let (e1, e2) = derivative_consistency(&act, 10_000, FD_STEP, s(2));
        Ok((
            rep.passed() && e1 <= FD_TOLERANCE && e2 <= FD_TOLERANCE,
            format!(
                "max|σ′| = {}, max|σ″| = {}, sup E[σ²] = {}, fd errors {} / {}",
                g(rep.max_abs_sigma_prime),
                g(rep.max_abs_sigma_double_prime),
                g(rep.second_moment_sup),
                g(e1),
                g(e2)
            ),
        ))
    }));

    let fd = gradient_fd(&act, 40, s(3), faults.gradient_perturbation).map_err(|e| e.to_string());
    suites.push(suite("gradient finite differences", || {
        let fd = fd.clone().map_err(Error::InvalidArgument)?;
        Ok((fd.max_rel_error <= FD_TOLERANCE, format!("max relative error {}", g(fd.max_rel_error))))
    }));
    suites.push(suite("Khatri-Rao gradient path", || {
        let fd = fd.map_err(Error::InvalidArgument)?;
        Ok((fd.max_path_gap <= PATH_TOLERANCE, format!("max path gap {}", g(fd.max_path_gap))))
    }));

    suites.push(suite("perturbation lemmas", || {
        let v = perturbation_lemmas(2000, s(4))?;
        Ok((v.weyl == 0 && v.entrywise == 0, format!("violations: weyl {}, entrywise {}", v.weyl, v.entrywise)))
    }));

    suites.push(suite("Gram Monte Carlo vs quadrature", || {
        let cmp = mc_vs_quadrature(&act, 5, 100_000, s(5))?;
        let within = cmp.iter().filter(|c| c.within(3.0)).count();
        Ok((within + 1 >= cmp.len(), format!("{within}/{} within 3 aggregate SE", cmp.len())))
    }));

    suites.push(suite("Gram-entry Lipschitz", || {
        let data = super::gen_dataset(&super::DatasetKind::Orthonormal { rotate: false }, 4, 4, 1.0, s(6))?;
        let out = gram_lipschitz_check(&act, &data, 64, 2000, s(7))?;
        Ok((out.passed, format!("max normalized ratio {}", g(out.max_ratio))))
    }));

    suites.push(suite("concentration", || {
        let rows = concentration_grid(16, 20_000, s(8))?;
        let failed = rows.iter().filter(|r| !r.passed).count();
        Ok((failed == 0, format!("{} of {} (family, t) cells within bound", rows.len() - failed, rows.len())))
    }));

    suites.push(suite("distinct projections", || {
        let total = 200;
        let first = distinct_projection_first_try(total, s(9))?;
        Ok((first as f64 >= 0.999 * total as f64, format!("{first}/{total} on the first attempt")))
    }));

    suites.push(suite("lazy invertibility", || {
        let st = lazy_trials(&act, 100, s(10))?;
        Ok((
            st.invertible == st.trials && st.max_rel_residual <= 1e-20 && st.max_gradient_norm <= 1e-10,
            format!(
                "{}/{} invertible, max relative residual {}, max gradient norm {}",
                st.invertible,
                st.trials,
                g(st.max_rel_residual),
                g(st.max_gradient_norm)
            ),
        ))
    }));

    SuiteReport { suites }
}
