use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bgt_core::harness::bandit::{bench_bandit, BanditConfig};
use bgt_core::harness::sweep::{sweep, write_rows, SWEEP_SEEDS};
use bgt_core::harness::{run_experiment, RunConfig};
use bgt_core::Error;
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bgtplanner", version, about = "Privacy-budget planning for federated recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV files.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every config matching a glob over several seeds.
    Sweep {
        pattern: String,
        /// Directory for the aggregate `sweep.csv` and per-run outputs.
        #[arg(long, default_value = "sweep_out")]
        out: PathBuf,
        #[arg(long, default_value_t = SWEEP_SEEDS)]
        seeds: usize,
    },
    /// Regret benchmark on the synthetic linear bandit.
    BenchBandit {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a run config without running it.
    Validate { config: PathBuf },
}

fn fail(err: &Error) -> ExitCode {
    let line = json!({ "error": err.kind(), "message": err.to_string() });
    eprintln!("{line}");
    match err {
        Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let cfg = RunConfig::load(config)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let result = run_experiment(&cfg)?;
    result.write(&dir, cfg.actions)?;
    println!("{}", json!({ "output_dir": dir, "summary": result.summary }));
    Ok(())
}

fn run_sweep(pattern: &str, out: &Path, seeds: usize) -> Result<(), Error> {
    let paths = glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob `{pattern}`: {e}")))?;
    let mut configs = Vec::new();
    for entry in paths {
        let path = entry.map_err(|e| Error::Io(e.into()))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        configs.push((name, RunConfig::load(&path)?));
    }
    if configs.is_empty() {
        return Err(Error::Config(format!("no config files match `{pattern}`")));
    }
    std::fs::create_dir_all(out)?;
    let rows = sweep(&configs, seeds, Some(out));
    write_rows(&rows, BufWriter::new(File::create(out.join("sweep.csv"))?))?;
    let failed = rows.iter().filter(|r| r.kind == "seed" && !r.error.is_empty()).count();
    println!("{}", json!({ "sweep": out.join("sweep.csv"), "rows": rows.len(), "failed_runs": failed }));
    Ok(())
}

fn run_bandit(config: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let cfg = BanditConfig::from_toml(&std::fs::read_to_string(config)?)?;
    let report = bench_bandit(&cfg)?;
    match out.or(cfg.output.clone()) {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            report.write_csv(BufWriter::new(File::create(&path)?))?;
        }
        None => report.write_csv(std::io::stdout().lock())?,
    }
    eprintln!(
        "beats uniform in {}/{} seeds; regret falls in {}/{} seeds",
        report.wins_over_uniform(),
        report.seeds.len(),
        report.regret_decreasing(),
        report.seeds.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Sweep { pattern, out, seeds } => run_sweep(&pattern, &out, seeds),
        Command::BenchBandit { config, out } => run_bandit(&config, out),
        Command::Validate { config } => RunConfig::load(&config).map(|cfg| {
            println!("{}", json!({ "valid": true, "policy": cfg.policy.name(), "horizon": cfg.horizon }));
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
