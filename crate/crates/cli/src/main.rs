use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use vfls_core::driver::gradcheck::run_checks;
use vfls_core::driver::{
    build_problem, preset, run_optimization, write_outputs, DriverError, ProblemConfig, RunStatus, BENCHMARKS,
};

#[derive(Parser)]
#[command(name = "vfls", version, about = "Velocity-field level set topology optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the problem described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Compare analytic sensitivities against finite differences.
    CheckGradients { config: PathBuf },
    /// Built-in benchmark problems.
    Benchmarks {
        #[command(subcommand)]
        action: BenchAction,
    },
}

#[derive(Subcommand)]
enum BenchAction {
    List,
    Run {
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Iteration cap (overrides opt.max_iter).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Only print the final summary.
    #[arg(long)]
    quiet: bool,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"))
}

fn run(mut config: ProblemConfig, opts: &RunOpts) -> Result<RunStatus, DriverError> {
    if let Some(dir) = &opts.out {
        config.output.dir = dir.clone();
    }
    if let Some(n) = opts.max_iter {
        config.opt.max_iter = n;
    }
    config.validate()?;
    let problem = build_problem(&config)?;
    if !opts.quiet {
        println!(
            "{}x{} elements ({} active), {} coefficients",
            config.mesh.nx,
            config.mesh.ny,
            problem.mesh.n_active(),
            problem.surface.n_coeffs()
        );
        println!("{:>5} {:>9} {:>9} {:>9} {:>11} {:>9}", "iter", "volume", "sigma_pm", "ks_mu", "lambda1", "max_vn");
    }
    let start = Instant::now();
    let outcome = run_optimization(&problem, &config, |r| {
        if !opts.quiet {
            println!(
                "{:>5} {:>9.5} {:>9} {:>9} {:>11} {:>9.2e}",
                r.iter,
                r.volume,
                fmt_opt(r.sigma_pm),
                fmt_opt(r.ks_mu),
                fmt_opt(r.lambda1),
                r.max_vn
            );
        }
    })?;
    let von_mises = outcome.evaluation.as_ref().and_then(|e| e.stress.as_ref()).map(|s| s.von_mises.as_slice());
    let paths = write_outputs(
        &outcome.history,
        &outcome.density,
        &outcome.levelset,
        &problem.mesh,
        von_mises,
        &config.output.dir,
        config.output.vtk,
    )?;
    let last = outcome.history.records.last();
    let status = match outcome.status {
        RunStatus::Converged => "converged",
        RunStatus::IterationCap => "iteration cap reached",
    };
    println!(
        "{status} after {} iterations in {:.1}s: volume {}, sigma_pm {}, ks_mu {}, feasible {}",
        outcome.history.records.len(),
        start.elapsed().as_secs_f64(),
        fmt_opt(last.map(|r| r.volume)),
        fmt_opt(last.and_then(|r| r.sigma_pm)),
        fmt_opt(last.and_then(|r| r.ks_mu)),
        outcome.evaluation.as_ref().is_some_and(|e| e.is_feasible(&config)),
    );
    println!("results in {}", display_dir(&paths.history));
    Ok(outcome.status)
}

fn display_dir(file: &Path) -> String {
    file.parent().map_or_else(|| ".".into(), |p| p.display().to_string())
}

fn check_gradients(path: &Path) -> Result<bool, DriverError> {
    let config = ProblemConfig::load(path)?;
    let results = run_checks(&config)?;
    println!("{:<24} {:>7} {:>12} {:>10}  result", "check", "checked", "max error", "tolerance");
    for r in &results {
        println!(
            "{:<24} {:>7} {:>12.3e} {:>10.1e}  {}",
            r.name,
            r.checked,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    Ok(results.iter().all(|r| r.passed()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, opts } => ProblemConfig::load(&config).and_then(|c| run(c, &opts)).map(|s| match s {
            RunStatus::Converged => ExitCode::SUCCESS,
            RunStatus::IterationCap => ExitCode::from(2),
        }),
        Command::CheckGradients { config } => {
            check_gradients(&config).map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Benchmarks { action: BenchAction::List } => {
            for name in BENCHMARKS {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Benchmarks { action: BenchAction::Run { name, opts } } => match preset(&name) {
            Some(c) => run(c, &opts).map(|s| match s {
                RunStatus::Converged => ExitCode::SUCCESS,
                RunStatus::IterationCap => ExitCode::from(2),
            }),
            None => Err(DriverError::Config(format!("unknown benchmark {name:?}; try `vfls benchmarks list`"))),
        },
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
