//! Plot-ready CSV files derived from a run report. Rendering is left to
//! whatever plotting tool reads them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sit_core::textfmt::fmt_real;

use crate::error::{HarnessError, Result};
use crate::report::RunReport;

pub const PLOT_DIR: &str = "plots";
pub const REWARD_CURVE_FILE: &str = "reward_curve.csv";
pub const PRIORITY_HIST_FILE: &str = "priority_hist.csv";
pub const RETURN_CURVE_FILE: &str = "return_curve.csv";

pub const REWARD_CURVE_HEADER: &str = "epoch,agent,mean_decomposed_reward,ardnem_loss";
pub const PRIORITY_HIST_HEADER: &str = "agent_type,bin_lo,bin_hi,agent,count";
pub const RETURN_CURVE_HEADER: &str = "seed,epoch,eval_return_mean,eval_return_std";

/// Writes the three plot files into `dir/plots` and returns their paths.
/// Runs without decomposition get header-only reward and histogram files.
pub fn emit_plots(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let plot_dir = dir.join(PLOT_DIR);
    std::fs::create_dir_all(&plot_dir).map_err(|e| HarnessError::io(&plot_dir, e))?;

    let mut reward = format!("{REWARD_CURVE_HEADER}\n");
    let mut hist = format!("{PRIORITY_HIST_HEADER}\n");
    if let Some(d) = &report.decomposition {
        for snap in &d.reward_curve {
            for (agent, r) in snap.rewards.iter().enumerate() {
                writeln!(reward, "{},{agent},{},{}", snap.epoch, fmt_real(*r), fmt_real(snap.loss)).unwrap();
            }
        }
        for h in &d.histograms {
            for b in &h.bins {
                for (agent, c) in b.counts.iter().enumerate() {
                    writeln!(hist, "{},{},{},{agent},{c}", h.agent_type, fmt_real(b.lo), fmt_real(b.hi)).unwrap();
                }
            }
        }
    }
    let mut ret = format!("{RETURN_CURVE_HEADER}\n");
    for s in &report.seeds {
        for p in &s.return_curve {
            writeln!(ret, "{},{},{},{}", s.seed, p.epoch, fmt_real(p.mean), fmt_real(p.std)).unwrap();
        }
    }

    let mut paths = Vec::new();
    for (name, text) in [
        (REWARD_CURVE_FILE, reward),
        (PRIORITY_HIST_FILE, hist),
        (RETURN_CURVE_FILE, ret),
    ] {
        let path = plot_dir.join(name);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
