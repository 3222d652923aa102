//! Experiment plumbing: TOML configs, dataset generation, certified runs,
//! width sweeps, and the verification suite behind `widthcert verify`.

mod config;
mod run;
pub mod verify;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::model::Dataset;
use crate::rng::{self, SeededRng};

pub use config::{DatasetKind, DatasetSpec, EtaSetting, ExperimentConfig, ModelSpec, TrainSpec};
pub use run::{certified_trial, run_certified, run_sweep, write_sweep_csv, CertifiedRun, SweepRow, TrialOutcome};

/// Minimum pairwise distance enforced by `sphere_random`.
pub const SPHERE_MIN_DISTANCE: f64 = 1e-3;
/// Redraws allowed per point before giving up.
pub const REJECTION_BUDGET: usize = 10_000;

/// Build the dataset a config describes. Targets are i.i.d. uniform on the
/// open interval `(−κ, κ)`; everything is drawn from one stream seeded by
/// `seed`.
pub fn gen_dataset(kind: &DatasetKind, n: usize, d: usize, kappa: f64, seed: u64) -> Result<Dataset> {
    if let DatasetKind::File { path } = kind {
        return Dataset::load_csv(path, kappa);
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidDataset(format!("n and d must be positive (n={n}, d={d})")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidDataset(format!("kappa must be positive, got {kappa}")));
    }
    let mut r = rng::seeded(seed);
    let inputs = match kind {
        DatasetKind::Orthonormal { rotate } => {
            if n > d {
                return Err(Error::InvalidDataset(format!("orthonormal data needs n ≤ d (n={n}, d={d})")));
            }
            if *rotate {
                let q = random_orthogonal(d, &mut r);
                Matrix::from_fn(n, d, |i, j| q[(i, j)])
            } else {
                Matrix::from_fn(n, d, |i, j| if i == j { 1.0 } else { 0.0 })
            }
        }
        DatasetKind::SphereRandom => sphere_points(n, d, SPHERE_MIN_DISTANCE, &mut r)?,
        DatasetKind::File { .. } => unreachable!(),
    };
    let targets = (0..n).map(|_| open_uniform(&mut r, kappa)).collect();
    Dataset::new(inputs, targets, kappa)
}

fn open_uniform(r: &mut SeededRng, kappa: f64) -> f64 {
    loop {
        let v = r.random_range(-kappa..kappa);
        if v != -kappa {
            return v;
        }
    }
}

/// Rows of a Haar-distributed orthogonal matrix (Gram–Schmidt on a
/// Gaussian matrix, applied twice for numerical orthogonality).
fn random_orthogonal(d: usize, r: &mut SeededRng) -> Matrix {
    let mut q = Matrix::from_fn(d, d, |_, _| rng::gaussian(r));
    for i in 0..d {
        for _ in 0..2 {
            for j in 0..i {
                let c = dot(q.row(i), q.row(j));
                let prev = q.row(j).to_vec();
                for (a, b) in q.row_mut(i).iter_mut().zip(&prev) {
                    *a -= c * b;
                }
            }
        }
        let s = norm(q.row(i));
        for a in q.row_mut(i) {
            *a /= s;
        }
    }
    q
}

/// `n` uniform points on the unit sphere in ℝᵈ, redrawing any point closer
/// than `min_distance` to an earlier one.
pub fn sphere_points(n: usize, d: usize, min_distance: f64, r: &mut SeededRng) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut accepted = false;
        for _ in 0..REJECTION_BUDGET {
            let mut v = rng::gaussian_vec(r, d);
            let s = norm(&v);
            if s == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= s);
            let clear = rows.iter().all(|u| {
                let d2: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= min_distance
            });
            if clear {
                rows.push(v);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::InvalidDataset(format!(
                "rejection budget exhausted placing point {} of {n} on the sphere in ℝ^{d}",
                rows.len() + 1
            )));
        }
    }
    Matrix::from_rows(&rows)
}

/// Write `contents` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
