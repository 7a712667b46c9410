use std::path::PathBuf;
use std::process::ExitCode;

use boltzmann_cli::commands::{table_csv, table_path};
use boltzmann_cli::{cmd_check, cmd_example56, cmd_simulate, cmd_spectrum, CliError, OutputFormat, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "boltzmann", version, about = "Log-Sobolev and spectral-gap diagnostics for exp(-2F) dx")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Potential expression in x or x1..xN.
    #[arg(long, global = true)]
    potential: Option<String>,
    #[arg(long, global = true)]
    dimension: Option<usize>,
    /// Built-in potential; only `example56`.
    #[arg(long, global = true)]
    builtin: Option<String>,
    /// Parameter of the built-in; for `example56` the swept values (repeatable).
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Vec<f64>,
}

#[derive(Subcommand, Clone, Copy, PartialEq)]
enum Command {
    /// Run the criteria listed under [check].
    Check,
    /// Run the stochastic estimators listed under [simulate].
    Simulate,
    /// Spectral gap of the generator.
    Spectrum,
    /// The beta sweep of the x^2 + beta x sin(x) family.
    Example56,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum Format {
    Json,
    Csv,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(f) = cli.format {
        cfg.format = match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        };
    }
    if let Some(d) = cli.dimension {
        cfg.potential.dimension = Some(d);
    }
    if let Some(e) = &cli.potential {
        cfg.potential.expression = Some(e.clone());
        cfg.potential.builtin = None;
        cfg.potential.beta = None;
    }
    if let Some(b) = &cli.builtin {
        cfg.potential.builtin = Some(b.clone());
        cfg.potential.expression = None;
    }
    if cli.command == Command::Example56 {
        if !cli.beta.is_empty() {
            cfg.example56.betas = cli.beta.clone();
        }
    } else {
        match cli.beta.as_slice() {
            [] => {}
            [b] => cfg.potential.beta = Some(*b),
            _ => return Err(CliError::Config("--beta: give a single value outside example56".into())),
        }
    }
    cfg.apply_seed();
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let report = match cli.command {
        Command::Check => cmd_check(&cfg)?,
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::Spectrum => cmd_spectrum(&cfg)?,
        Command::Example56 => {
            let (report, rows) = cmd_example56(&cfg)?;
            let table = table_csv(&rows);
            match table_path(&cfg) {
                Some(path) => std::fs::write(&path, &table)
                    .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?,
                None => eprint!("{table}"),
            }
            report
        }
    };
    for s in &report.synthesis {
        eprintln!("synthesis {}", s.line);
    }
    report.write(cfg.format, cfg.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
