use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nonlocal_cli::config::parse_config;
use nonlocal_cli::pipeline::{rearrange_file, run_scenario, Mode, EXIT_ERROR};
use nonlocal_cli::sweep::refine_sweep;
use nonlocal_cli::ScenarioConfig;
use nonlocal_core::rearrange::Direction;

/// Thread count for assembly and solvers; defaults to all cores.
const THREADS_ENV: &str = "NONLOCAL_THREADS";

#[derive(Parser)]
#[command(name = "nonlocal", version, about = "Nonlocal Dirichlet problems and mass-concentration comparison checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario file (JSON, schema 1).
    config: PathBuf,
    /// Output directory, overriding the scenario's `output`.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the elliptic problem and its symmetrization, then run the checks.
    SolveElliptic(ScenarioArgs),
    /// Evolve the parabolic problem and its symmetrization, then run the checks.
    SolveParabolic(ScenarioArgs),
    /// Run every requested check, solving whatever they need.
    Verify(ScenarioArgs),
    /// Rerun a scenario on successively doubled grids and report slack decay.
    Sweep {
        #[command(flatten)]
        args: ScenarioArgs,
        #[arg(long, default_value_t = 2)]
        levels: usize,
    },
    /// Rearrange a grid CSV (as written for u.csv) into its symmetric decreasing form.
    Rearrange {
        input: PathBuf,
        output: PathBuf,
        /// Produce the increasing rearrangement instead.
        #[arg(long)]
        increasing: bool,
    },
}

fn load(args: &ScenarioArgs) -> Result<ScenarioConfig> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn scenario(args: &ScenarioArgs, mode: Mode) -> Result<i32> {
    let cfg = load(args)?;
    let outcome = run_scenario(&cfg, mode)?;
    for r in &outcome.reports {
        println!(
            "{} {}: slack {:.3e}, tolerance {:.3e}{}",
            if r.pass { "PASS" } else { "FAIL" },
            r.check,
            r.slack,
            r.tolerance,
            if r.vacuous { " (vacuous)" } else { "" }
        );
    }
    for s in &outcome.skipped {
        println!("SKIP {s}");
    }
    println!("artifacts in {}", outcome.output.display());
    Ok(outcome.exit_code())
}

fn sweep(args: &ScenarioArgs, levels: usize) -> Result<i32> {
    let cfg = load(args)?;
    let mode = if cfg.time.is_some() { Mode::Verify } else { Mode::Elliptic };
    let report = match refine_sweep(&cfg, levels, mode) {
        Ok(r) => r,
        Err(e) => {
            let _ = nonlocal_cli::pipeline::write_error(&cfg.output, &e);
            return Err(e);
        }
    };
    for l in &report.levels {
        println!("level {} (n = {}): {}", l.level, l.n, if l.pass { "pass" } else { "FAIL" });
    }
    for (name, d) in &report.decay {
        let ratios: Vec<String> = d.ratios.iter().map(|r| format!("{r:.3}")).collect();
        println!(
            "{name}: ratios [{}] {}",
            ratios.join(", "),
            if d.decays.iter().all(|x| *x) { "decaying" } else { "NOT decaying" }
        );
    }
    println!("report in {}", cfg.output.join("sweep.json").display());
    Ok(report.exit_code())
}

fn dispatch(cli: Cli) -> Result<i32> {
    configure_threads()?;
    match cli.command {
        Command::SolveElliptic(a) => scenario(&a, Mode::Elliptic),
        Command::SolveParabolic(a) => scenario(&a, Mode::Parabolic),
        Command::Verify(a) => scenario(&a, Mode::Verify),
        Command::Sweep { args, levels } => sweep(&args, levels),
        Command::Rearrange {
            input,
            output,
            increasing,
        } => {
            let dir = if increasing { Direction::Increasing } else { Direction::Decreasing };
            rearrange_file(Path::new(&input), Path::new(&output), dir)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
