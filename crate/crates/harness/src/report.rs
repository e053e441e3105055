//! Run summary written as `report.json`.
//!
//! Everything in the report is a function of config and seeds; wall-clock
//! timings go to a separate `timing.json` so that reports of repeated runs
//! compare byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sit_core::stats;

use crate::config::StageHyper;
use crate::error::{HarnessError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    /// `None` when this seed failed.
    pub eval_mean: Option<f64>,
    pub eval_std: Option<f64>,
    pub eval_std_error: Option<f64>,
    pub return_curve: Vec<CurvePoint>,
    pub failure: Option<Failure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
    pub divergence: bool,
}

impl Failure {
    pub fn new(stage: &str, err: &HarnessError) -> Self {
        Self {
            stage: stage.to_string(),
            message: err.to_string(),
            divergence: err.is_divergence(),
        }
    }
}

/// Statistics across seeds of the per-seed evaluation means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn from_means(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(Self {
            seeds: xs.len(),
            mean: stats::mean(xs),
            std: stats::sample_std(xs),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSnapshot {
    pub epoch: usize,
    /// Member-averaged mean decomposed reward per agent.
    pub rewards: Vec<f64>,
    /// Member-averaged smoothed training loss at this epoch.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    /// Trajectory count per source agent.
    pub counts: Vec<usize>,
}

/// Histogram of rescaled priorities (before the softmax) in one type bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityHistogram {
    pub agent_type: usize,
    pub bins: Vec<HistogramBin>,
}

impl PriorityHistogram {
    pub fn total(&self) -> usize {
        self.bins.iter().flat_map(|b| b.counts.iter()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// Held-out total-reward MSE divided by the held-out reward variance.
    pub fit_relative_mse: f64,
    /// Mean `r̂` of each agent's own trajectories over the whole dataset.
    pub mean_reward: Vec<f64>,
    /// Median reshaped priority of each agent's own trajectories.
    pub median_priority: Vec<f64>,
    pub reward_curve: Vec<RewardSnapshot>,
    pub histograms: Vec<PriorityHistogram>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub composition: String,
    pub episodes: usize,
    pub data_seed: u64,
    pub hyper: StageHyper,
    /// Hyperparameters changed relative to plain SIT, as `field: from -> to`.
    pub ablation_diff: Vec<String>,
    pub behavior_mean_return: f64,
    pub seeds: Vec<SeedRecord>,
    pub aggregate: Option<Aggregate>,
    pub decomposition: Option<Decomposition>,
    /// First failure of the run, if any.
    pub failure: Option<Failure>,
}

impl RunReport {
    pub fn eval_means(&self) -> Vec<f64> {
        self.seeds.iter().filter_map(|s| s.eval_mean).collect()
    }

    pub fn seed_mean(&self, seed: u64) -> Option<f64> {
        self.seeds.iter().find(|s| s.seed == seed).and_then(|s| s.eval_mean)
    }

    pub fn diverged(&self) -> bool {
        self.failure.as_ref().is_some_and(|f| f.divergence)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(REPORT_FILE);
        std::fs::write(&path, self.to_json()).map_err(|e| HarnessError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub dataset_s: f64,
    pub ardnem_s: f64,
    pub dper_s: f64,
    /// Policy training and evaluation per seed.
    pub seeds_s: Vec<(u64, f64)>,
    pub total_s: f64,
}

impl Timing {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(TIMING_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_of_known_values() {
        let a = Aggregate::from_means(&[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(a.mean, 3.0);
        assert_eq!(a.min, 1.0);
        assert_eq!(a.max, 6.0);
        // sample variance (4 + 1 + 0 + 9) / 3
        assert!((a.std - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(Aggregate::from_means(&[]).is_none());
    }
}
