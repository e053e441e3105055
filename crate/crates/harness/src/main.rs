use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sit_harness::pipeline::{prepare_dataset, DATASET_FILE};
use sit_harness::report::REPORT_FILE;
use sit_harness::sweep::parse_values;
use sit_harness::{emit_plots, run, sweep, ExperimentConfig, HarnessError, Method, RunReport, SweepParam};

#[derive(Parser)]
#[command(name = "sit", about = "Offline multi-agent RL with shared individual trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured behavior dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline for one method over the configured seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's method.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per value of alpha, beta or eta.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma separated, e.g. `0.05,0.2,1,1e6`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a run (or every run of a sweep) directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Also write plot CSVs under `<dir>/plots`.
        #[arg(long)]
        plots: bool,
    },
}

fn out_dir(arg: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, HarnessError> {
    arg.or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set out_dir".into()))
}

fn summarize(report: &RunReport) -> String {
    let mut s = format!("{:<18} behavior {:>9.3}", report.method, report.behavior_mean_return);
    match &report.aggregate {
        Some(a) => s += &format!("  return {:>9.3} ± {:.3} over {} seeds", a.mean, a.std, a.seeds),
        None => s += "  no completed seeds",
    }
    if let Some(f) = &report.failure {
        s += &format!("  FAILED in {}: {}", f.stage, f.message);
    }
    s
}

fn report_dirs(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if input.join(REPORT_FILE).exists() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(REPORT_FILE).exists())
        .collect();
    dirs.sort();
    anyhow::ensure!(!dirs.is_empty(), "no {REPORT_FILE} under {}", input.display());
    Ok(dirs)
}

/// Runs a command; `Ok(true)` means a run diverged.
fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::GenData { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.dataset.path = None;
            let data = prepare_dataset(&cfg, &out)?;
            println!(
                "wrote {} ({} episodes, behavior mean return {:.3})",
                out.join(DATASET_FILE).display(),
                data.num_episodes(),
                data.behavior_mean_return()
            );
            Ok(false)
        }
        Command::Train { config, method, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(m) = method {
                cfg.method = m.parse::<Method>()?;
            }
            let out = out_dir(out, &cfg)?;
            let report = run(&cfg, &out)?;
            println!("{}", summarize(&report));
            Ok(report.diverged())
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let param: SweepParam = param.parse()?;
            let values = parse_values(&values)?;
            let out = out_dir(out, &cfg)?;
            let reports = sweep(&cfg, param, &values, &out)?;
            for (v, r) in &reports {
                println!("{param} = {v:<10} {}", summarize(r));
            }
            Ok(reports.iter().any(|(_, r)| r.diverged()))
        }
        Command::Report { input, plots } => {
            for dir in report_dirs(&input)? {
                let report = RunReport::load(&dir)?;
                println!("{}: {}", dir.display(), summarize(&report));
                if plots {
                    for p in emit_plots(&report, &dir)? {
                        println!("  wrote {}", p.display());
                    }
                }
            }
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("error: training diverged (see report.json)");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
