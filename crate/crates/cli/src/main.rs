use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracdiff::study::{render_report, run_study, table_config, Mode, StudyConfig};
use fracdiff::Error;

/// Convergence studies for space-time Petrov-Galerkin discretizations of
/// time-fractional diffusion.
#[derive(Debug, Parser)]
#[command(name = "fracdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: StudyArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scalar problem ∂^α u + λu = f.
    Ode,
    /// Benchmark cases (a)-(d) on the unit interval.
    Pde1d,
    /// Benchmark cases (e)-(f) on the unit square.
    Pde2d,
    /// Discrete inf-sup constants c(α, K).
    Infsup,
    /// Reproduce one of Tables 1-5.
    ReproTable {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=5))]
        table: u8,
    },
}

#[derive(Debug, clap::Args)]
struct StudyArgs {
    /// Fractional orders, comma separated.
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// Time grids, comma separated and strictly increasing.
    #[arg(long = "K", global = true)]
    k: Option<String>,
    /// Spatial subdivisions per side.
    #[arg(long = "M", global = true)]
    m: Option<String>,
    /// Benchmark cases, comma separated.
    #[arg(long, global = true)]
    case: Option<String>,
    /// Reaction coefficient of the scalar problem.
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// Source of the scalar problem: exp, expm1, sin, pow:<γ> or a constant.
    #[arg(long, global = true)]
    source: Option<String>,
    /// Cells of the reference grid.
    #[arg(long = "ref-K", global = true)]
    ref_k: Option<String>,
    /// Time norm: nodal or gauss:<order>.
    #[arg(long, global = true)]
    norm: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// csv or markdown.
    #[arg(long, global = true)]
    format: Option<String>,
    /// key = value file supplying defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Coarser spatial meshes and K_ref <= 1024.
    #[arg(long, global = true)]
    fast: bool,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<String>,
}

fn build_config(cli: &Cli) -> Result<StudyConfig, Error> {
    let mut cfg = match cli.command {
        Command::Ode => StudyConfig::for_mode(Mode::Ode),
        Command::Pde1d => StudyConfig::for_mode(Mode::Pde1d),
        Command::Pde2d => StudyConfig::for_mode(Mode::Pde2d),
        Command::Infsup => StudyConfig::for_mode(Mode::Infsup),
        Command::ReproTable { table } => table_config(table, false)?,
    };
    let o = &cli.opts;
    if let Some(path) = &o.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_config_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    let flags = [
        ("alpha", &o.alpha),
        ("K", &o.k),
        ("M", &o.m),
        ("case", &o.case),
        ("lambda", &o.lambda),
        ("source", &o.source),
        ("ref_K", &o.ref_k),
        ("norm", &o.norm),
        ("format", &o.format),
        ("jobs", &o.jobs),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(out) = &o.out {
        cfg.output = Some(out.clone());
    }
    if o.fast {
        cfg.make_fast();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Domain(_) | Error::Numeric(_) => 3,
        Error::Io { .. } => 1,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = build_config(cli)?;
    log::info!("running {} study: alpha {:?}, K {:?}", cfg.mode, cfg.alphas, cfg.ks);
    let report = run_study(&cfg)?;
    let text = render_report(&report, cfg.format);
    match &cfg.output {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io { path: path.clone(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
