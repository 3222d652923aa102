use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, TrainSpec};
use super::write_atomic;
use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::gram;
use crate::model::{self, Dataset};
use crate::rng;
use crate::theory::{theorem_report, TheoremReport};
use crate::trainer::{self, certify, CertificateReport, EtaPolicy, TrainConfig, TrainingTrace};

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trace: TrainingTrace,
    pub certificate: CertificateReport,
    pub eta: f64,
    pub steps: usize,
}

impl TrialOutcome {
    pub fn lambda_min_c0(&self) -> f64 {
        self.trace.initial().gram_lambda_min
    }
}

/// One initialization, one training run, one certificate. `seed` seeds the
/// initial weights and signs.
pub fn certified_trial(
    data: &Dataset,
    act: &Activation,
    lambda0: f64,
    m: usize,
    spec: &TrainSpec,
    seed: u64,
) -> Result<TrialOutcome> {
    let state0 = model::init_state(m, data.d(), seed)?;
    let mut cfg = TrainConfig {
        eta_policy: spec.eta.policy()?,
        steps: 1,
        record_stride: spec.record_stride,
        seed,
        m,
    };
    let eta = cfg.resolve_eta(&state0, act, data)?;
    cfg.eta_policy = EtaPolicy::Fixed(eta);
    cfg.steps = spec.resolve_steps(lambda0, eta);
    let trace = trainer::train_gd(&state0, act, data, &cfg)?;
    let certificate = certify(&trace, lambda0, data)?;
    Ok(TrialOutcome {
        trace,
        certificate,
        eta,
        steps: cfg.steps,
    })
}

#[derive(Debug, Clone)]
pub struct CertifiedRun {
    pub dataset: Dataset,
    pub lambda0: f64,
    pub theorem: TheoremReport,
    pub m: usize,
    /// `m` is below the width threshold; the run still completes.
    pub outside_certified_regime: bool,
    pub outcome: TrialOutcome,
    pub out_dir: PathBuf,
}

impl CertifiedRun {
    /// Key-value report block (theorem arithmetic, then run and certificates).
    pub fn report(&self, eta_policy: EtaPolicy) -> String {
        let c = &self.outcome.certificate;
        let mut s = self.theorem.to_string();
        s.push('\n');
        let _ = writeln!(s, "m = {}", self.m);
        let regime = if self.outside_certified_regime {
            "outside certified regime"
        } else {
            "certified"
        };
        let _ = writeln!(s, "regime = {regime}");
        let policy = match eta_policy {
            EtaPolicy::Auto => "auto (1/lambda_max(C[W(0)]), a default not taken from the theory)",
            EtaPolicy::Fixed(_) => "fixed",
        };
        let _ = writeln!(s, "eta_policy = {policy}");
        let _ = writeln!(s, "eta = {}", fmt_f64(self.outcome.eta));
        let _ = writeln!(s, "steps = {}", self.outcome.steps);
        let _ = writeln!(s, "t_end = {}", fmt_f64(self.outcome.trace.last().time));
        let _ = writeln!(s, "residual_sq_initial = {}", fmt_f64(self.outcome.trace.initial().residual_sq));
        let _ = writeln!(s, "residual_sq_final = {}", fmt_f64(self.outcome.trace.last().residual_sq));
        let _ = writeln!(s, "decay_ok = {}", c.decay_ok);
        let _ = writeln!(s, "decay_margin = {}", fmt_f64(c.decay_margin));
        let _ = writeln!(s, "drift_ok = {}", c.drift_ok);
        let _ = writeln!(s, "drift_margin = {}", fmt_f64(c.drift_margin));
        let _ = writeln!(s, "gram_stability_ok = {}", c.gram_stability_ok);
        let _ = writeln!(s, "gram_margin = {}", fmt_f64(c.gram_margin));
        let first = c.first_violation_step.map_or("none".to_string(), |k| k.to_string());
        let _ = writeln!(s, "first_violation_step = {first}");
        let _ = write!(s, "certificates_ok = {}", c.all_ok());
        s
    }
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn write_inputs(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<()> {
    write_atomic(&out.join("config.resolved.toml"), cfg.to_toml()?.as_bytes())?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_atomic(&out.join("dataset.csv"), &buf)
}

fn trace_bytes(trace: &TrainingTrace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    trainer::write_trace_csv(&trace.rows, &mut buf)?;
    Ok(buf)
}

/// Dataset → λ₀ (quadrature) → theorem report → training at `model.m` →
/// certificates. Writes `trace.csv`, `report.txt`, `dataset.csv` and
/// `config.resolved.toml` under `cfg.out`.
pub fn run_certified(cfg: &ExperimentConfig) -> Result<CertifiedRun> {
    cfg.validate()?;
    let m = cfg
        .model
        .m
        .ok_or_else(|| Error::InvalidConfig("a certified run needs `model.m`".into()))?;
    let act = cfg.activation()?;
    let data = cfg.dataset.build()?;
    let lambda0 = gram::lambda0(&data, &act)?;
    let theorem = theorem_report(data.n(), cfg.delta, &act, data.kappa(), lambda0)?;
    let outside = (m as u64) < theorem.m_threshold;
    let seed = rng::derive_seed(cfg.seed, &[m as u64, 0]);
    let outcome = in_pool(cfg.workers, || certified_trial(&data, &act, lambda0, m, &cfg.train, seed))??;
    let run = CertifiedRun {
        dataset: data,
        lambda0,
        theorem,
        m,
        outside_certified_regime: outside,
        outcome,
        out_dir: cfg.out.clone(),
    };
    write_inputs(cfg, &run.dataset, &cfg.out)?;
    write_atomic(&cfg.out.join("trace.csv"), &trace_bytes(&run.outcome.trace)?)?;
    let mut report = run.report(cfg.train.eta.policy()?);
    report.push('\n');
    write_atomic(&cfg.out.join("report.txt"), report.as_bytes())?;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub trials: usize,
    /// Trials where all three certificates pass.
    pub success_count: usize,
    pub success_rate: f64,
    pub mean_final_residual_sq: f64,
    pub mean_lambda_min_c0: f64,
}

pub const SWEEP_HEADER: [&str; 6] = [
    "m",
    "trials",
    "success_count",
    "success_rate",
    "mean_final_residual_sq",
    "mean_lambda_min_c0",
];

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.trials.to_string(),
            r.success_count.to_string(),
            fmt_f64(r.success_rate),
            fmt_f64(r.mean_final_residual_sq),
            fmt_f64(r.mean_lambda_min_c0),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `cfg.trials` certified runs at every width in `model.m_grid` (ascending,
/// duplicates dropped). Trial `j` at width `m` is seeded from
/// `(cfg.seed, m, j)`. Writes one trace per trial under `traces/`, the table
/// `sweep.csv`, and the resolved config.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut grid = cfg.model.m_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep needs a nonempty `model.m_grid`".into()));
    }
    let act = cfg.activation()?;
    let data = cfg.dataset.build()?;
    let lambda0 = gram::lambda0(&data, &act)?;
    let out = &cfg.out;
    write_inputs(cfg, &data, out)?;

    let jobs: Vec<(usize, usize)> = grid
        .iter()
        .flat_map(|&m| (0..cfg.trials).map(move |j| (m, j)))
        .collect();
    let results: Vec<(bool, f64, f64)> = in_pool(cfg.workers, || {
        jobs.par_iter()
            .map(|&(m, j)| {
                let seed = rng::derive_seed(cfg.seed, &[m as u64, j as u64]);
                let t = certified_trial(&data, &act, lambda0, m, &cfg.train, seed)?;
                let path = out.join("traces").join(format!("m{m}_trial{j}.csv"));
                write_atomic(&path, &trace_bytes(&t.trace)?)?;
                Ok((t.certificate.all_ok(), t.trace.last().residual_sq, t.lambda_min_c0()))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let rows: Vec<SweepRow> = grid
        .iter()
        .zip(results.chunks(cfg.trials))
        .map(|(&m, chunk)| {
            let k = chunk.len() as f64;
            let success_count = chunk.iter().filter(|r| r.0).count();
            SweepRow {
                m,
                trials: chunk.len(),
                success_count,
                success_rate: success_count as f64 / k,
                mean_final_residual_sq: chunk.iter().map(|r| r.1).sum::<f64>() / k,
                mean_lambda_min_c0: chunk.iter().map(|r| r.2).sum::<f64>() / k,
            }
        })
        .collect();
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    write_atomic(&out.join("sweep.csv"), &buf)?;
    Ok(rows)
}
