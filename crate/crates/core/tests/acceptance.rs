//! Acceptance gate: every criterion at its stated tolerance, one line each.
//! Exits nonzero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use widthcert::gram::{self, positivity_trial};
use widthcert::harness::verify::{
    concentration_grid, distinct_projection_first_try, empirical_gram_convergence, gradient_fd,
    lazy_trials, mc_vs_quadrature, perturbation_lemmas,
};
use widthcert::harness::{certified_trial, gen_dataset, DatasetKind, TrainSpec};
use widthcert::rng::derive_seed;
use widthcert::theory::{self, theorem_report};
use widthcert::trainer::gram_lipschitz_check;
use widthcert::{softplus, Activation, Dataset};

const MASTER_SEED: u64 = 20_240_611;
/// `E[σ′(g)²]` for softplus: the diagonal of `H∞`, hence `λ₀`, on orthonormal
/// inputs. Computed independently in `tests/oracles.rs`.
const LAMBDA0_ORACLE: f64 = 0.293_379_035_858_092_9;
const LAMBDA0_STATED: f64 = 0.2979;
/// Threshold at `LAMBDA0_ORACLE` for n=4, δ=0.01.
const THRESHOLD_ORACLE: u64 = 4971;
const THRESHOLD_STATED: u64 = 4818;
const ACCEPTANCE_M: usize = 8192;
const DELTA: f64 = 0.01;

struct Gate {
    failures: usize,
}

impl Gate {
    fn report(&mut self, id: usize, title: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("[{}] criterion {id}: {title}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn error(&mut self, id: usize, title: &str, err: impl std::fmt::Display) {
        self.report(id, title, false, format!("error: {err}"));
    }
}

fn acceptance_instance() -> Dataset {
    gen_dataset(&DatasetKind::Orthonormal { rotate: false }, 4, 4, 1.0, derive_seed(MASTER_SEED, &[1])).unwrap()
}

fn criteria_1_and_2(gate: &mut Gate, act: &Activation, data: &Dataset) {
    let title1 = "certified convergence run";
    let title2 = "decay-rate sharpness";
    let lambda0 = match gram::lambda0(data, act) {
        Ok(l) => l,
        Err(e) => {
            gate.error(1, title1, &e);
            gate.error(2, title2, e);
            return;
        }
    };
    let threshold = theory::m_threshold(4, DELTA, act.c1, act.c2, lambda0).unwrap();
    let spec = TrainSpec {
        record_stride: 1,
        ..TrainSpec::default()
    };
    let runs: Vec<_> = (0..50u64)
        .map(|j| certified_trial(data, act, lambda0, ACCEPTANCE_M, &spec, derive_seed(MASTER_SEED, &[2, j])))
        .collect();
    let passing: Vec<_> = runs
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter(|r| r.certificate.all_ok())
        .collect();
    let errors = runs.iter().filter(|r| r.is_err()).count();
    let ok1 = (lambda0 - LAMBDA0_ORACLE).abs() <= 0.005
        && threshold == THRESHOLD_ORACLE
        && (ACCEPTANCE_M as u64) >= threshold
        && passing.len() >= 48;
    gate.report(
        1,
        title1,
        ok1,
        format!(
            "lambda0 = {lambda0:.6} (oracle {LAMBDA0_ORACLE:.6}, stated {LAMBDA0_STATED}, |diff to stated| = {:.4}); \
             m_threshold = {threshold} (stated {THRESHOLD_STATED}); m = {ACCEPTANCE_M}; \
             {}/50 runs pass all certificates, {errors} errored",
            (lambda0 - LAMBDA0_STATED).abs(),
            passing.len()
        ),
    );

    let slopes: Vec<f64> = passing.iter().map(|r| r.trace.log_residual_slope()).collect();
    let worst = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ok2 = !slopes.is_empty() && worst <= -0.98 * lambda0;
    gate.report(
        2,
        title2,
        ok2,
        format!(
            "least-squares slope of ln residual_sq vs t, worst over {} passing runs = {worst:.4}; required <= {:.4}",
            slopes.len(),
            -0.98 * lambda0
        ),
    );
}

fn criterion_3(gate: &mut Gate, act: &Activation) {
    let title = "Gram estimator consistency";
    let cmp = match mc_vs_quadrature(act, 20, 100_000, derive_seed(MASTER_SEED, &[3])) {
        Ok(c) => c,
        Err(e) => return gate.error(3, title, e),
    };
    let within = cmp.iter().filter(|c| c.within(3.0)).count();
    let data = gen_dataset(&DatasetKind::SphereRandom, 6, 5, 1.0, derive_seed(MASTER_SEED, &[4])).unwrap();
    let (rms, slope) = match empirical_gram_convergence(act, &data, &[100, 1000, 10_000], 32, derive_seed(MASTER_SEED, &[5])) {
        Ok(v) => v,
        Err(e) => return gate.error(3, title, e),
    };
    let ok = within >= 19 && (slope + 0.5).abs() <= 0.1;
    gate.report(
        3,
        title,
        ok,
        format!(
            "{within}/20 MC estimates within 3 aggregate SE; RMS ||C[W(0)] - H||_F at m = 1e2, 1e3, 1e4: \
             {:.4e}, {:.4e}, {:.4e}; log-log slope = {slope:.4}",
            rms[0], rms[1], rms[2]
        ),
    );
}

fn criterion_4(gate: &mut Gate, act: &Activation, data: &Dataset) {
    let title = "positivity theorem";
    let out = gram::lambda0(data, act)
        .and_then(|l| positivity_trial(data, act, l, ACCEPTANCE_M, 200, DELTA, derive_seed(MASTER_SEED, &[6])));
    match out {
        Ok(o) => gate.report(
            4,
            title,
            o.successes >= 192,
            format!(
                "lambda_min(C[W(0)]) > 3/4 lambda0 in {}/200 initializations at m = {ACCEPTANCE_M} (required 192)",
                o.successes
            ),
        ),
        Err(e) => gate.error(4, title, e),
    }
}

fn criterion_5(gate: &mut Gate, act: &Activation) {
    let title = "gradient correctness";
    match gradient_fd(act, 100, derive_seed(MASTER_SEED, &[7]), 0.0) {
        Ok(g) => gate.report(
            5,
            title,
            g.max_rel_error <= 1e-6 && g.max_path_gap <= 1e-12,
            format!(
                "100 instances: max finite-difference relative error {:.3e}; max |direct - Khatri-Rao| {:.3e}",
                g.max_rel_error, g.max_path_gap
            ),
        ),
        Err(e) => gate.error(5, title, e),
    }
}

fn criterion_6(gate: &mut Gate) {
    let title = "perturbation lemmas";
    match perturbation_lemmas(10_000, derive_seed(MASTER_SEED, &[8])) {
        Ok(v) => gate.report(
            6,
            title,
            v.weyl == 0 && v.entrywise == 0,
            format!("10000 PSD pairs: spectral-norm violations {}, entrywise violations {}", v.weyl, v.entrywise),
        ),
        Err(e) => gate.error(6, title, e),
    }
}

fn criterion_7(gate: &mut Gate, act: &Activation, data: &Dataset) {
    let title = "Gram-entry Lipschitz";
    match gram_lipschitz_check(act, data, 64, 10_000, derive_seed(MASTER_SEED, &[9])) {
        Ok(o) => gate.report(
            7,
            title,
            o.max_ratio <= 1.0 + 1e-9,
            format!("{} pairs at m = 64, n = 4: max normalized ratio {:.6}", o.pairs_used, o.max_ratio),
        ),
        Err(e) => gate.error(7, title, e),
    }
}

fn criterion_8(gate: &mut Gate) {
    let title = "concentration";
    match concentration_grid(16, 100_000, derive_seed(MASTER_SEED, &[10])) {
        Ok(rows) => {
            let checked: Vec<_> = rows.iter().filter(|r| r.family != "unit_dot").collect();
            let bad = checked.iter().filter(|r| !r.passed).count();
            let worst = checked
                .iter()
                .map(|r| r.empirical - r.bound)
                .fold(f64::NEG_INFINITY, f64::max);
            gate.report(
                8,
                title,
                bad == 0,
                format!(
                    "{} (family, t) cells, 1e5 trials each: {bad} exceed bound + 3 SE; max(empirical - bound) = {worst:.4}",
                    checked.len()
                ),
            );
        }
        Err(e) => gate.error(8, title, e),
    }
}

fn criterion_9(gate: &mut Gate) {
    let title = "distinct projections";
    match distinct_projection_first_try(1000, derive_seed(MASTER_SEED, &[11])) {
        Ok(first) => gate.report(9, title, first >= 999, format!("{first}/1000 datasets separated on the first attempt")),
        Err(e) => gate.error(9, title, e),
    }
}

fn criterion_10(gate: &mut Gate, act: &Activation) {
    let title = "lazy regime";
    match lazy_trials(act, 100, derive_seed(MASTER_SEED, &[12])) {
        Ok(s) => gate.report(
            10,
            title,
            s.invertible == 100 && s.max_rel_residual <= 1e-20 && s.max_gradient_norm <= 1e-10,
            format!(
                "{}/{} invertible; max relative residual {:.3e}; max gradient norm {:.3e}",
                s.invertible, s.trials, s.max_rel_residual, s.max_gradient_norm
            ),
        ),
        Err(e) => gate.error(10, title, e),
    }
}

fn criterion_11(gate: &mut Gate, act: &Activation) {
    let title = "theorem arithmetic";
    let direct = theorem_report(10, 0.005, act, 1.0, 0.05).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_widthcert"))
        .args(["threshold", "--n", "10", "--delta", "0.005", "--c1", "1", "--c2", "0.25", "--kappa", "1", "--lambda0", "0.05"])
        .output();
    let out = match out {
        Ok(o) if o.status.success() => String::from_utf8_lossy(&o.stdout).into_owned(),
        Ok(o) => return gate.error(11, title, format!("exit status {}", o.status)),
        Err(e) => return gate.error(11, title, e),
    };
    let field = |key: &str| {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .map(str::to_string)
    };
    let printed_threshold = field("m_threshold");
    let printed_delta: Option<f64> = field("delta_prime").and_then(|v| v.parse().ok());
    let ok = printed_threshold.as_deref() == Some("1327048")
        && direct.m_threshold == 1_327_048
        && printed_delta.is_some_and(|d| (d - 0.2175).abs() <= 0.002);
    gate.report(
        11,
        title,
        ok,
        format!(
            "printed m_threshold = {}; delta_prime = {}",
            printed_threshold.unwrap_or_default(),
            printed_delta.map_or("missing".into(), |d| format!("{d:.5}"))
        ),
    );
}

fn main() -> ExitCode {
    let start = Instant::now();
    let act = softplus();
    let data = acceptance_instance();
    let mut gate = Gate { failures: 0 };

    criteria_1_and_2(&mut gate, &act, &data);
    criterion_3(&mut gate, &act);
    criterion_4(&mut gate, &act, &data);
    criterion_5(&mut gate, &act);
    criterion_6(&mut gate);
    criterion_7(&mut gate, &act, &data);
    criterion_8(&mut gate);
    criterion_9(&mut gate);
    criterion_10(&mut gate, &act);
    criterion_11(&mut gate, &act);

    println!(
        "acceptance: {} of 11 criteria passed in {:.1}s",
        11 - gate.failures,
        start.elapsed().as_secs_f64()
    );
    if gate.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
