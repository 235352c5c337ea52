use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lasso_oracle::bounds::TheoremId;
use lasso_oracle::design::{BasisSystem, CoefVector};
use lasso_oracle::harness::{self, canonical_logistic, report, run_with_threads, ReportPaths, RunConfig};
use lasso_oracle::lab::{self, MCReport};
use lasso_oracle::{Error, Result};

#[derive(Parser)]
#[command(name = "lasso-oracle", version, about = "Weighted-l1 fits, oracle certificates and concentration checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certificate plus replicated fits; writes results.csv, summary.json, plots.svg.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        theorem: Option<TheoremId>,
        #[arg(long, default_value_t = 0, help = "worker threads (0: all cores)")]
        threads: usize,
    },
    /// Prints the certificate as JSON.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        theorem: Option<TheoremId>,
    },
    /// Monte Carlo check of one concentration inequality; prints the report as JSON.
    Lab {
        #[arg(long, value_enum)]
        check: Check,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        m: usize,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.5)]
        c1: f64,
        #[arg(long, default_value_t = 1.0, help = "l1 radius M for ez and factor4")]
        radius: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
        t_grid: Vec<f64>,
        #[arg(long, help = "run config whose scenario replaces the default for ez and factor4")]
        config: Option<PathBuf>,
        #[arg(long, help = "append one summary row per report to this CSV")]
        append: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Rademacher,
    Sigma,
    Ez,
    Omega,
    Gauss,
    Factor4,
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invalid(format!("serialization: {e}")))?;
    println!("{text}");
    Ok(())
}

fn append_rows(path: &PathBuf, reports: &[&MCReport]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.clone(),
        source,
    };
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    if fresh {
        writeln!(f, "statistic_name,reps,empirical_mean,mc_standard_error,theoretical_bound,pass").map_err(io)?;
    }
    for r in reports {
        let bound = r.theoretical_bound.map_or(String::new(), harness::fmt_f64);
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.statistic_name,
            r.reps,
            harness::fmt_f64(r.empirical_mean),
            harness::fmt_f64(r.mc_standard_error),
            bound,
            r.pass
        )
        .map_err(io)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            reps,
            seed,
            theorem,
            threads,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = theorem {
                cfg.theorem = t;
            }
            cfg.validate()?;
            let output = run_with_threads(&cfg, threads)?;
            let s = report(&output.records, &output.certificate, Some(&cfg), &ReportPaths::in_dir(&out))?;
            eprintln!(
                "theorem {}: pass_excess {:.4}, pass_l1 {:.4}, 1 - alpha {:.4}, binding {}",
                s.theorem_id, s.pass_excess.rate, s.pass_l1.rate, s.guaranteed_rate, s.certificate.binding
            );
            Ok(true)
        }
        Command::Certify { config, theorem } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(t) = theorem {
                cfg.theorem = t;
            }
            print_json(&cfg.certificate()?)?;
            Ok(true)
        }
        Command::Lab {
            check,
            n,
            m,
            reps,
            seed,
            c1,
            radius,
            t_grid,
            config,
            append,
            threads,
        } => {
            let basis = BasisSystem::hadamard(m)?;
            let scenario = match &config {
                Some(p) => RunConfig::load(p)?.scenario,
                None => canonical_logistic(n, m)?,
            };
            let reports: Vec<MCReport> = pool(threads)?.install(|| -> Result<Vec<MCReport>> {
                Ok(match check {
                    Check::Rademacher => {
                        let r = lab::mc_rademacher_max(&basis, n, reps, seed)?;
                        vec![r.symmetrized, r.centered]
                    }
                    Check::Sigma => vec![lab::mc_sigma_ratio(&basis, n, reps, seed)?],
                    Check::Omega => vec![lab::mc_omega_probability(&basis, n, c1, reps, seed)?],
                    Check::Gauss => vec![lab::mc_gaussian_max(&basis, n, reps, &t_grid, seed)?],
                    Check::Ez => {
                        let reference = scenario
                            .theta_true
                            .clone()
                            .unwrap_or_else(|| CoefVector::zeros(scenario.m()));
                        vec![lab::mc_empirical_process(&scenario, &reference, radius, reps, &t_grid, seed)?]
                    }
                    Check::Factor4 => vec![lab::factor4_decomposition(&scenario, radius, reps, seed)?],
                })
            })?;
            print_json(&reports)?;
            if let Some(path) = append {
                append_rows(&path, &reports.iter().collect::<Vec<_>>())?;
            }
            Ok(reports.iter().all(|r| r.pass))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
