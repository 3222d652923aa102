//! Full-batch gradient descent and RK4 gradient flow on the input weights,
//! trace recording, and the convergence certificates evaluated on a trace.

use std::io::{Read, Write};

use serde::Deserialize;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::gram::empirical_gram_matrix;
use crate::linalg::{norm, symmetric_eigen, Matrix};
use crate::model::{self, Dataset, GradientMode, NetworkState};
use crate::rng;

/// Relative slack on the decay and drift certificates.
pub const CERT_SLACK: f64 = 1e-6;
/// Loss growth factor treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
pub const DEFAULT_RECORD_STRIDE: usize = 10;
/// Upper limit on the normalized Gram-entry Lipschitz ratio.
pub const LIPSCHITZ_SLACK: f64 = 1e-9;

pub const TRACE_HEADER: [&str; 7] = [
    "step",
    "time",
    "residual_sq",
    "loss",
    "gram_lambda_min",
    "max_drift",
    "total_drift",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaPolicy {
    Fixed(f64),
    /// `η = 1 / λ_max(C[W(0)])`.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta_policy: EtaPolicy,
    pub steps: usize,
    pub record_stride: usize,
    pub seed: u64,
    pub m: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if let EtaPolicy::Fixed(eta) = self.eta_policy {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::InvalidConfig(format!("eta must be positive, got {eta}")));
            }
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidConfig("record_stride must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        Ok(())
    }

    /// The step size this config uses from `state0`.
    pub fn resolve_eta(&self, state0: &NetworkState, act: &Activation, data: &Dataset) -> Result<f64> {
        match self.eta_policy {
            EtaPolicy::Fixed(eta) => Ok(eta),
            EtaPolicy::Auto => {
                let lmax = symmetric_eigen(&empirical_gram_matrix(state0, act, data)?)?.lambda_max();
                if !(lmax > 0.0) {
                    return Err(Error::Precondition(format!(
                        "auto step size needs λ_max(C[W(0)]) > 0, got {lmax:e}"
                    )));
                }
                Ok(1.0 / lmax)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub time: f64,
    pub residual_sq: f64,
    pub loss: f64,
    pub gram_lambda_min: f64,
    pub max_drift: f64,
    pub total_drift: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
    /// Time per step (the step size for GD, the RK4 step for flow).
    pub eta: f64,
    /// Loss before every step and after the last one.
    pub step_losses: Vec<f64>,
    pub m: usize,
    pub final_state: NetworkState,
}

impl TrainingTrace {
    pub fn initial(&self) -> &TraceRow {
        &self.rows[0]
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace has at least the initial row")
    }

    /// Fraction of steps with `loss(k+1) ≤ loss(k)`, ignoring steps that
    /// start below `floor` (where the loss is at rounding level).
    pub fn descent_fraction(&self, floor: f64) -> f64 {
        let pairs: Vec<_> = self.step_losses.windows(2).filter(|w| w[0] > floor).collect();
        if pairs.is_empty() {
            return 1.0;
        }
        pairs.iter().filter(|w| w[1] <= w[0]).count() as f64 / pairs.len() as f64
    }

    /// Least-squares slope of `ln residual_sq` against time over all rows.
    pub fn log_residual_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.time, r.residual_sq.max(f64::MIN_POSITIVE).ln()))
            .collect();
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
        if sxx == 0.0 {
            0.0
        } else {
            sxy / sxx
        }
    }
}

fn make_row(
    step: usize,
    time: f64,
    residual_sq: f64,
    state: &NetworkState,
    w0: &Matrix,
    act: &Activation,
    data: &Dataset,
) -> Result<TraceRow> {
    let gram_lambda_min = symmetric_eigen(&empirical_gram_matrix(state, act, data)?)?.lambda_min();
    let w = state.weights();
    let mut max_drift = 0.0_f64;
    let mut total = 0.0;
    for r in 0..w.rows() {
        let sq: f64 = w.row(r).iter().zip(w0.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
        max_drift = max_drift.max(sq.sqrt());
        total += sq;
    }
    Ok(TraceRow {
        step,
        time,
        residual_sq,
        loss: 0.5 * residual_sq,
        gram_lambda_min,
        max_drift,
        total_drift: total.sqrt(),
    })
}

fn squared(e: &[f64]) -> f64 {
    e.iter().map(|v| v * v).sum()
}

fn check_divergence(step: usize, loss: f64, loss0: f64) -> Result<()> {
    if !loss.is_finite() || (loss0 > 0.0 && loss > DIVERGENCE_FACTOR * loss0) {
        return Err(Error::Divergence { step, loss });
    }
    Ok(())
}

fn check_state(state: &NetworkState, data: &Dataset) -> Result<()> {
    if state.d() != data.d() {
        return Err(Error::DimensionMismatch {
            context: "initial state input dimension",
            expected: data.d(),
            found: state.d(),
        });
    }
    Ok(())
}

/// `W(k+1) = W(k) − η ∇L(W(k))` with the signs frozen. Rows are recorded at
/// step 0, every `record_stride` steps, and at the final step.
pub fn train_gd(state0: &NetworkState, act: &Activation, data: &Dataset, cfg: &TrainConfig) -> Result<TrainingTrace> {
    cfg.validate()?;
    check_state(state0, data)?;
    if cfg.m != state0.m() {
        return Err(Error::DimensionMismatch {
            context: "TrainConfig.m vs initial state",
            expected: cfg.m,
            found: state0.m(),
        });
    }
    let eta = cfg.resolve_eta(state0, act, data)?;
    let w0 = state0.weights().clone();
    let mut state = state0.clone();
    let mut e = model::residuals(&state, act, data)?;
    let mut rs = squared(&e);
    let loss0 = 0.5 * rs;
    let mut rows = vec![make_row(0, 0.0, rs, &state, &w0, act, data)?];
    let mut step_losses = Vec::with_capacity(cfg.steps + 1);
    step_losses.push(loss0);

    for k in 1..=cfg.steps {
        let g = model::gradient_for_residual(&state, act, data, &e, GradientMode::Direct)?;
        for (w, gi) in state.weights_mut().as_mut_slice().iter_mut().zip(g.as_slice()) {
            *w -= eta * gi;
        }
        e = model::residuals(&state, act, data)?;
        rs = squared(&e);
        check_divergence(k, 0.5 * rs, loss0)?;
        step_losses.push(0.5 * rs);
        if k % cfg.record_stride == 0 || k == cfg.steps {
            rows.push(make_row(k, k as f64 * eta, rs, &state, &w0, act, data)?);
        }
    }
    Ok(TrainingTrace {
        rows,
        eta,
        step_losses,
        m: state.m(),
        final_state: state,
    })
}

/// One classical fourth-order Runge–Kutta step of `y′ = f(y)`.
pub fn rk4_step<F>(y: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let axpy = |k: &[f64], c: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    let k1 = f(y)?;
    let k2 = f(&axpy(&k1, 0.5 * h))?;
    let k3 = f(&axpy(&k2, 0.5 * h))?;
    let k4 = f(&axpy(&k3, h))?;
    Ok((0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// RK4 integration of `dW/dt = −∇L(W)` up to `t_end`, using
/// `ceil(t_end/dt)` equal steps (so the step used is at most `dt`).
pub fn integrate_flow(
    state0: &NetworkState,
    act: &Activation,
    data: &Dataset,
    t_end: f64,
    dt: f64,
    record_stride: usize,
) -> Result<TrainingTrace> {
    check_state(state0, data)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(t_end == 0.0 || t_end >= dt) {
        return Err(Error::InvalidArgument(format!("t_end must be 0 or at least dt, got {t_end}")));
    }
    if record_stride == 0 {
        return Err(Error::InvalidArgument("record_stride must be at least 1".into()));
    }
    let steps = if t_end == 0.0 { 0 } else { (t_end / dt - 1e-9).ceil() as usize };
    let h = if steps == 0 { dt } else { t_end / steps as f64 };
    let w0 = state0.weights().clone();
    let (m, d) = w0.shape();
    let mut state = state0.clone();
    let rs0 = squared(&model::residuals(&state, act, data)?);
    let loss0 = 0.5 * rs0;
    let mut rows = vec![make_row(0, 0.0, rs0, &state, &w0, act, data)?];
    let mut step_losses = vec![loss0];

    let mut y = w0.as_slice().to_vec();
    for k in 1..=steps {
        y = rk4_step(&y, h, |w| {
            let s = state.with_weights(Matrix::from_vec(m, d, w.to_vec())?)?;
            let g = model::gradient(&s, act, data)?;
            Ok(g.as_slice().iter().map(|v| -v).collect())
        })?;
        state = state.with_weights(Matrix::from_vec(m, d, y.clone())?)?;
        let rs = squared(&model::residuals(&state, act, data)?);
        check_divergence(k, 0.5 * rs, loss0)?;
        step_losses.push(0.5 * rs);
        if k % record_stride == 0 || k == steps {
            let time = if k == steps { t_end } else { k as f64 * h };
            rows.push(make_row(k, time, rs, &state, &w0, act, data)?);
        }
    }
    Ok(TrainingTrace {
        rows,
        eta: h,
        step_losses,
        m,
        final_state: state,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub decay_ok: bool,
    /// `min_t (e^{−λ₀t}·rs(0)·(1+10⁻⁶) − rs(t)) / rs(0)`; nonnegative iff decay holds.
    pub decay_margin: f64,
    pub drift_ok: bool,
    /// `min_t (B·(1+10⁻⁶) − max_drift(t)) / B` with `B = √n‖y−u(0)‖/(√m λ₀)`.
    pub drift_margin: f64,
    pub gram_stability_ok: bool,
    /// `min_t λ_min(C[W(t)]) − λ₀/2`.
    pub gram_margin: f64,
    pub first_violation_step: Option<usize>,
}

impl CertificateReport {
    pub fn all_ok(&self) -> bool {
        self.decay_ok && self.drift_ok && self.gram_stability_ok
    }
}

/// Drift radius `√n ‖y − u(0)‖ / (√m λ₀)`.
pub fn drift_bound(n: usize, m: usize, residual_sq0: f64, lambda0: f64) -> f64 {
    (n as f64).sqrt() * residual_sq0.sqrt() / ((m as f64).sqrt() * lambda0)
}

/// Evaluate the decay, drift and Gram-stability certificates on every row.
pub fn certify(trace: &TrainingTrace, lambda0: f64, data: &Dataset) -> Result<CertificateReport> {
    if trace.rows.is_empty() {
        return Err(Error::InvalidArgument("cannot certify an empty trace".into()));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::NonPositiveLambda0(lambda0));
    }
    let rs0 = trace.rows[0].residual_sq;
    let radius = drift_bound(data.n(), trace.m, rs0, lambda0);
    let decay_scale = rs0.max(f64::MIN_POSITIVE);
    let drift_scale = radius.max(f64::MIN_POSITIVE);
    let mut report = CertificateReport {
        decay_ok: true,
        decay_margin: f64::INFINITY,
        drift_ok: true,
        drift_margin: f64::INFINITY,
        gram_stability_ok: true,
        gram_margin: f64::INFINITY,
        first_violation_step: None,
    };
    for row in &trace.rows {
        let decay_cap = (-lambda0 * row.time).exp() * rs0 * (1.0 + CERT_SLACK);
        let drift_cap = radius * (1.0 + CERT_SLACK);
        let decay = row.residual_sq <= decay_cap;
        let drift = row.max_drift <= drift_cap;
        let gram = row.gram_lambda_min > 0.5 * lambda0;
        report.decay_margin = report.decay_margin.min((decay_cap - row.residual_sq) / decay_scale);
        report.drift_margin = report.drift_margin.min((drift_cap - row.max_drift) / drift_scale);
        report.gram_margin = report.gram_margin.min(row.gram_lambda_min - 0.5 * lambda0);
        report.decay_ok &= decay;
        report.drift_ok &= drift;
        report.gram_stability_ok &= gram;
        if !(decay && drift && gram) && report.first_violation_step.is_none() {
            report.first_violation_step = Some(row.step);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzOutcome {
    /// `max |ΔC_pq|·√m / (4 c1 c2 ‖ΔW‖_F)` over pairs and entries.
    pub max_ratio: f64,
    /// Pairs with `‖ΔW‖ > 0`.
    pub pairs_used: usize,
    pub passed: bool,
}

/// Gram-entry Lipschitz check over random weight pairs. Even pairs use a
/// dense Gaussian perturbation, odd pairs perturb a single row; scales are
/// log-uniform in `[10⁻³, 10]`.
pub fn gram_lipschitz_check(
    act: &Activation,
    data: &Dataset,
    m: usize,
    pairs: usize,
    seed: u64,
) -> Result<LipschitzOutcome> {
    use rand::Rng;

    if pairs == 0 {
        return Err(Error::InvalidArgument("gram_lipschitz_check needs pairs ≥ 1".into()));
    }
    let d = data.d();
    let norm_const = (m as f64).sqrt() / (4.0 * act.c1 * act.c2);
    let mut r = rng::seeded(seed);
    let mut max_ratio = 0.0_f64;
    let mut pairs_used = 0;
    for j in 0..pairs {
        let s = model::init_state(m, d, rng::derive_seed(seed, &[j as u64]))?;
        let scale = 10f64.powf(r.random_range(-3.0..1.0));
        let mut w2 = s.weights().clone();
        if j % 2 == 0 {
            for v in w2.as_mut_slice() {
                *v += scale * rng::gaussian(&mut r);
            }
        } else {
            let row = r.random_range(0..m);
            let dir = rng::gaussian_vec(&mut r, d);
            for (v, u) in w2.row_mut(row).iter_mut().zip(&dir) {
                *v += scale * u;
            }
        }
        let dw = norm(w2.sub(s.weights())?.as_slice());
        if dw == 0.0 {
            continue;
        }
        let c1 = empirical_gram_matrix(&s, act, data)?;
        let c2 = empirical_gram_matrix(&s.with_weights(w2)?, act, data)?;
        let gap = c2.sub(&c1)?.max_abs();
        max_ratio = max_ratio.max(gap * norm_const / dw);
        pairs_used += 1;
    }
    Ok(LipschitzOutcome {
        max_ratio,
        pairs_used,
        passed: max_ratio <= 1.0 + LIPSCHITZ_SLACK,
    })
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.time),
            fmt_f64(r.residual_sq),
            fmt_f64(r.loss),
            fmt_f64(r.gram_lambda_min),
            fmt_f64(r.max_drift),
            fmt_f64(r.total_drift),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected trace header {header:?}")));
    }
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::softplus;
    use crate::gram::lambda0;

    fn orthonormal(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut r = rng::seeded(seed);
        let y = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        Dataset::new(Matrix::identity(n), y, 1.0).unwrap()
    }

    fn cfg(m: usize, steps: usize, eta: EtaPolicy) -> TrainConfig {
        TrainConfig {
            eta_policy: eta,
            steps,
            record_stride: 1,
            seed: 0,
            m,
        }
    }

    #[test]
    fn fixed_point_stays_put() {
        let act = softplus();
        let s = model::init_state(32, 3, 2).unwrap();
        let x = Matrix::identity(3);
        let probe = Dataset::new(x.clone(), vec![0.0; 3], 1.0).unwrap();
        let u0 = model::predictions(&s, &act, &probe).unwrap();
        let data = Dataset::new(x, u0, 100.0).unwrap();
        let t = train_gd(&s, &act, &data, &cfg(32, 20, EtaPolicy::Fixed(0.5))).unwrap();
        assert_eq!(t.final_state.weights(), s.weights());
        assert!(t.rows.iter().all(|r| r.residual_sq == 0.0 && r.max_drift == 0.0));
        let lam = lambda0(&data, &act).unwrap();
        let rep = certify(&t, lam, &data).unwrap();
        assert!(rep.decay_ok && rep.drift_ok);
    }

    #[test]
    fn single_neuron_step() {
        let act = softplus();
        let data = Dataset::new(Matrix::from_rows(&[[1.0]]).unwrap(), vec![0.0], 1.0).unwrap();
        let s = NetworkState::new(Matrix::from_rows(&[[0.0]]).unwrap(), vec![1.0]).unwrap();
        let t = train_gd(&s, &act, &data, &cfg(1, 1, EtaPolicy::Fixed(0.1))).unwrap();
        let g = 2f64.ln() * 0.5;
        assert!((t.final_state.weights()[(0, 0)] + 0.1 * g).abs() < 1e-15);
        assert!((g - 0.346574).abs() < 1e-6);
    }

    #[test]
    fn record_schedule_includes_final_step() {
        let act = softplus();
        let data = orthonormal(2, 3);
        let s = model::init_state(16, 2, 4).unwrap();
        let mut c = cfg(16, 23, EtaPolicy::Fixed(0.1));
        c.record_stride = 10;
        let t = train_gd(&s, &act, &data, &c).unwrap();
        let steps: Vec<usize> = t.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 23]);
        assert_eq!(t.step_losses.len(), 24);
        for r in &t.rows {
            assert_eq!(r.residual_sq, 2.0 * r.loss);
            assert!((r.time - r.step as f64 * 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn huge_step_diverges() {
        let act = softplus();
        let data = orthonormal(2, 5);
        let s = model::init_state(4, 2, 6).unwrap();
        let err = train_gd(&s, &act, &data, &cfg(4, 200, EtaPolicy::Fixed(1e4))).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(4, 1, EtaPolicy::Fixed(-1.0));
        assert!(c.validate().is_err());
        c.eta_policy = EtaPolicy::Auto;
        c.record_stride = 0;
        assert!(c.validate().is_err());
        c.record_stride = 1;
        c.steps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic_runs() {
        let act = softplus();
        let data = orthonormal(3, 7);
        let s = model::init_state(64, 3, 8).unwrap();
        let a = train_gd(&s, &act, &data, &cfg(64, 15, EtaPolicy::Auto)).unwrap();
        let b = train_gd(&s, &act, &data, &cfg(64, 15, EtaPolicy::Auto)).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn rk4_on_exponential() {
        let mut y = vec![1.0];
        for _ in 0..100 {
            y = rk4_step(&y, 0.01, |v| Ok(vec![-v[0]])).unwrap();
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn frozen_gram_linear_ode_matches_matrix_exponential() {
        let act = softplus();
        let data = orthonormal(4, 9);
        let s = model::init_state(256, 4, 10).unwrap();
        let c = empirical_gram_matrix(&s, &act, &data).unwrap();
        let u0 = model::predictions(&s, &act, &data).unwrap();
        let y = data.targets().to_vec();
        let t_end = 3.0;
        let mut u = u0.clone();
        for _ in 0..300 {
            u = rk4_step(&u, 0.01, |v| {
                let diff: Vec<f64> = y.iter().zip(v).map(|(a, b)| a - b).collect();
                c.matvec(&diff)
            })
            .unwrap();
        }
        let expm = symmetric_eigen(&c).unwrap().apply_function(|l| (-l * t_end).exp());
        let gap: Vec<f64> = u0.iter().zip(&y).map(|(a, b)| a - b).collect();
        let decayed = expm.matvec(&gap).unwrap();
        for i in 0..4 {
            assert!((u[i] - (y[i] + decayed[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn flow_with_zero_horizon_has_one_row() {
        let act = softplus();
        let data = orthonormal(2, 11);
        let s = model::init_state(8, 2, 12).unwrap();
        let t = integrate_flow(&s, &act, &data, 0.0, 0.01, 1).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(integrate_flow(&s, &act, &data, 0.005, 0.01, 1).is_err());
    }

    #[test]
    fn flow_step_halving() {
        let act = softplus();
        let data = orthonormal(4, 13);
        let s = model::init_state(512, 4, 14).unwrap();
        let a = integrate_flow(&s, &act, &data, 5.0, 1e-2, 100).unwrap();
        let b = integrate_flow(&s, &act, &data, 5.0, 5e-3, 100).unwrap();
        let (ra, rb) = (a.last().residual_sq, b.last().residual_sq);
        assert!(((ra - rb) / rb).abs() <= 1e-6, "{ra} vs {rb}");
    }

    #[test]
    fn tiny_width_report_integrity() {
        let act = softplus();
        let data = orthonormal(4, 15);
        let lam = lambda0(&data, &act).unwrap();
        let s = model::init_state(4, 4, 16).unwrap();
        let mut c = cfg(4, 50, EtaPolicy::Fixed(0.5));
        c.record_stride = 5;
        let t = train_gd(&s, &act, &data, &c).unwrap();
        let rep = certify(&t, lam, &data).unwrap();
        assert_eq!(rep.all_ok(), rep.first_violation_step.is_none());
        if let Some(k) = rep.first_violation_step {
            assert!(t.rows.iter().any(|r| r.step == k));
        }
        assert_eq!(rep.gram_stability_ok, rep.gram_margin > 0.0);
    }

    #[test]
    fn certify_flags_synthetic_violation() {
        let data = orthonormal(2, 17);
        let s = model::init_state(4, 2, 18).unwrap();
        let row = |step: usize, rs: f64| TraceRow {
            step,
            time: step as f64,
            residual_sq: rs,
            loss: 0.5 * rs,
            gram_lambda_min: 1.0,
            max_drift: 0.0,
            total_drift: 0.0,
        };
        let trace = TrainingTrace {
            rows: vec![row(0, 1.0), row(1, 0.1), row(2, 0.9)],
            eta: 1.0,
            step_losses: vec![],
            m: 4,
            final_state: s,
        };
        let rep = certify(&trace, 0.5, &data).unwrap();
        assert!(!rep.decay_ok && rep.drift_ok && rep.gram_stability_ok);
        assert_eq!(rep.first_violation_step, Some(2));
        assert!(rep.decay_margin < 0.0);
    }

    #[test]
    fn lipschitz_ratio_bounded_and_identical_pairs_skipped() {
        let act = softplus();
        let data = orthonormal(4, 19);
        let out = gram_lipschitz_check(&act, &data, 64, 400, 20).unwrap();
        assert!(out.passed && out.max_ratio <= 0.5 + 1e-12, "{}", out.max_ratio);
        assert_eq!(out.pairs_used, 400);
    }

    #[test]
    fn trace_csv_round_trip() {
        let act = softplus();
        let data = orthonormal(2, 21);
        let s = model::init_state(8, 2, 22).unwrap();
        let t = train_gd(&s, &act, &data, &cfg(8, 5, EtaPolicy::Fixed(0.3))).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&t.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,time,residual_sq,loss,gram_lambda_min,max_drift,total_drift\n"));
        assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), t.rows);
    }

    #[test]
    fn bad_trace_header_rejected() {
        assert!(read_trace_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
