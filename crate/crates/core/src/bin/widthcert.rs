use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use widthcert::gram::{self, write_matrix_csv, DEFAULT_QUADRATURE_NODES};
use widthcert::harness::{self, verify, write_atomic, ExperimentConfig};
use widthcert::lazy;
use widthcert::model::init_state;
use widthcert::rng::derive_seed;
use widthcert::theory::theorem_report;
use widthcert::{fmt_f64, Activation, Error};

#[derive(Parser)]
#[command(name = "widthcert", version, about = "Width thresholds and convergence certificates for two-layer networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Limiting Gram matrix H∞ and λ₀ for the configured dataset.
    Gram {
        /// Quadrature nodes per dimension.
        #[arg(long, default_value_t = DEFAULT_QUADRATURE_NODES)]
        nodes: usize,
        /// Also report a Monte Carlo estimate with this many samples.
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Width threshold and failure-probability arithmetic.
    Threshold {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        activation: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Taken from the config's dataset when omitted.
        #[arg(long)]
        lambda0: Option<f64>,
        /// Override the activation's c1.
        #[arg(long)]
        c1: Option<f64>,
        /// Override the activation's c2.
        #[arg(long)]
        c2: Option<f64>,
    },
    /// One certified training run: trace, certificates and report.
    Train,
    /// Success rates over the configured width grid.
    Sweep,
    /// Run every property suite.
    Verify {
        /// Add this to every analytic gradient entry (fault injection).
        #[arg(long, default_value_t = 0.0)]
        fault_gradient: f64,
        /// Declare this c2 for the activation (fault injection).
        #[arg(long)]
        fault_c2: Option<f64>,
    },
    /// Last-layer-only training: invertibility of AᵀA and the closed-form fit.
    Lazy,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::InvalidArgument(_)
            | Error::InvalidDataset(_)
            | Error::UnknownActivation(_)
            | Error::UnknownFamily(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Failure> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("this subcommand needs --config <path>".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(w) = g.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Gram { nodes, mc_samples } => {
            let cfg = load_config(g)?;
            let act = cfg.activation()?;
            let data = cfg.dataset.build()?;
            let est = gram::hinfty_quadrature(&data, &act, nodes)?;
            println!("dataset = {}", est.dataset_id);
            println!("n = {}", data.n());
            println!("estimator = quadrature");
            println!("nodes = {nodes}");
            println!("lambda0 = {}", fmt_f64(est.lambda_min));
            let mut buf = Vec::new();
            write_matrix_csv(&est.matrix, &mut buf)?;
            write_atomic(&cfg.out.join("hinfty.csv"), &buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
            if let Some(samples) = mc_samples {
                let mc = gram::hinfty_monte_carlo(&data, &act, samples, cfg.seed)?;
                let gap = mc.matrix.sub(&est.matrix)?.frobenius_norm();
                println!("mc_samples = {samples}");
                println!("mc_lambda_min = {}", fmt_f64(mc.lambda_min));
                println!("mc_frobenius_gap = {}", fmt_f64(gap));
                println!("mc_aggregate_se = {}", fmt_f64(mc.aggregate_std_error().unwrap_or(0.0)));
            }
            Ok(true)
        }
        Command::Threshold {
            n,
            delta,
            activation,
            kappa,
            lambda0,
            c1,
            c2,
        } => {
            let cfg = match &g.config {
                Some(_) => Some(load_config(g)?),
                None => None,
            };
            let name = activation
                .or_else(|| cfg.as_ref().map(|c| c.activation.clone()))
                .unwrap_or_else(|| "softplus".into());
            let base = Activation::by_name(&name)?;
            let act = base.with_constants(c1.unwrap_or(base.c1), c2.unwrap_or(base.c2), base.c3);
            let data = match (&cfg, lambda0.is_none() || n.is_none()) {
                (Some(c), true) => Some(c.dataset.build()?),
                _ => None,
            };
            let n = n
                .or(data.as_ref().map(|d| d.n()))
                .ok_or_else(|| Failure::Usage("threshold needs --n or a config with a dataset".into()))?;
            let lambda0 = match (lambda0, &data) {
                (Some(l), _) => l,
                (None, Some(d)) => gram::lambda0(d, &act)?,
                (None, None) => return Err(Failure::Usage("threshold needs --lambda0 or a config".into())),
            };
            let delta = delta.or(cfg.as_ref().map(|c| c.delta)).unwrap_or(0.01);
            let kappa = kappa
                .or(cfg.as_ref().map(|c| c.dataset.kappa))
                .unwrap_or(1.0);
            let report = theorem_report(n, delta, &act, kappa, lambda0)?;
            println!("{report}");
            println!("part_c = restatement of the probability bound above (its constant C is not constructive)");
            Ok(true)
        }
        Command::Train => {
            let cfg = load_config(g)?;
            let run = harness::run_certified(&cfg)?;
            println!("{}", run.report(cfg.train.eta.policy()?));
            println!("out = {}", run.out_dir.display());
            Ok(run.outcome.certificate.all_ok())
        }
        Command::Sweep => {
            let cfg = load_config(g)?;
            let rows = harness::run_sweep(&cfg)?;
            let mut buf = Vec::new();
            harness::write_sweep_csv(&rows, &mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
            Ok(true)
        }
        Command::Verify { fault_gradient, fault_c2 } => {
            let (act, seed) = match &g.config {
                Some(_) => {
                    let cfg = load_config(g)?;
                    (cfg.activation()?, cfg.seed)
                }
                None => (widthcert::softplus(), g.seed.unwrap_or(0)),
            };
            let faults = verify::Faults {
                gradient_perturbation: fault_gradient,
                c2_override: fault_c2,
            };
            let report = verify::run_verify(&act, seed, faults);
            println!("{report}");
            Ok(report.passed())
        }
        Command::Lazy => {
            let cfg = load_config(g)?;
            let act = cfg.activation()?;
            let data = cfg.dataset.build()?;
            let m = cfg.model.m.unwrap_or(data.n());
            let mut invertible = 0;
            let mut worst_residual = 0.0_f64;
            let mut worst_gradient = 0.0_f64;
            let mut worst_condition = 0.0_f64;
            let ysq: f64 = data.targets().iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
            for j in 0..cfg.trials {
                let state = init_state(m, data.d(), derive_seed(cfg.seed, &[m as u64, j as u64]))?;
                let f = lazy::feature_matrix(&state, &act, &data, &vec![0.0; m])?;
                if !lazy::gram_invertibility(&f)?.invertible {
                    continue;
                }
                invertible += 1;
                let fit = lazy::fit_last_layer(&f, &data)?;
                let grad = lazy::output_gradient(&f, &fit.a_star, &data)?;
                worst_residual = worst_residual.max(fit.residual / ysq);
                worst_gradient = worst_gradient.max(widthcert::linalg::norm(&grad));
                worst_condition = worst_condition.max(fit.condition_number);
            }
            let rate = invertible as f64 / cfg.trials as f64;
            println!("m = {m}");
            println!("n = {}", data.n());
            println!("trials = {}", cfg.trials);
            println!("invertible = {invertible}");
            println!("invertibility_rate = {}", fmt_f64(rate));
            println!("max_relative_residual = {}", fmt_f64(worst_residual));
            println!("max_gradient_norm = {}", fmt_f64(worst_gradient));
            println!("max_condition_number = {}", fmt_f64(worst_condition));
            Ok(invertible == cfg.trials)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
