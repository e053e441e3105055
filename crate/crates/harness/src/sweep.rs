//! One run per value of α, β or η, on a shared dataset, reward model and
//! seed list.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sit_core::ardnem::train_ardnem;
use sit_core::textfmt::fmt_real;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::pipeline::{prepare_dataset, run_with};
use crate::report::RunReport;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Priority softmax temperature.
    Alpha,
    /// Filter temperature.
    Beta,
    /// Uncertainty loss scale.
    Eta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::Eta => "eta",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::Alpha => cfg.dper.alpha = value,
            SweepParam::Beta => cfg.policy.beta = value,
            SweepParam::Eta => cfg.policy.eta = value,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" | "α" => Ok(SweepParam::Alpha),
            "beta" | "β" => Ok(SweepParam::Beta),
            "eta" | "η" => Ok(SweepParam::Eta),
            _ => Err(HarnessError::Config(format!("unknown sweep parameter `{s}` (alpha, beta or eta)"))),
        }
    }
}

pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let values = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| HarnessError::Config(format!("bad sweep value `{v}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    Ok(values)
}

/// Runs each value into `out/{param}_{value}`. None of the swept parameters
/// touches the decomposition stage, so it is trained once and shared.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64], out: &Path) -> Result<Vec<(f64, RunReport)>> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        param.apply(&mut c, v);
        c.validate()?;
        configs.push(c);
    }
    let data = prepare_dataset(cfg, out)?;
    let model = if cfg.method.uses_decomposition() {
        Some(train_ardnem(&data, &cfg.stage_hyper().ardnem, cfg.data_seed)?)
    } else {
        None
    };
    let mut reports = Vec::with_capacity(values.len());
    for (c, &v) in configs.iter().zip(values) {
        let dir = out.join(format!("{param}_{v}"));
        reports.push((v, run_with(c, &dir, Some(data.clone()), model.as_ref())?));
    }
    write_tables(param, &reports, out)?;
    Ok(reports)
}

fn write_tables(param: SweepParam, reports: &[(f64, RunReport)], out: &Path) -> Result<()> {
    let mut per_seed = format!("{param},seed,eval_return_mean\n");
    let mut summary = format!("{param},seeds,mean,std,min,max\n");
    for (v, r) in reports {
        for s in &r.seeds {
            let m = s.eval_mean.map(fmt_real).unwrap_or_default();
            per_seed.push_str(&format!("{v},{},{m}\n", s.seed));
        }
        if let Some(a) = &r.aggregate {
            summary.push_str(&format!(
                "{v},{},{},{},{},{}\n",
                a.seeds,
                fmt_real(a.mean),
                fmt_real(a.std),
                fmt_real(a.min),
                fmt_real(a.max)
            ));
        }
    }
    for (name, text) in [(SWEEP_FILE, per_seed), (SWEEP_SUMMARY_FILE, summary)] {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}
