//! End-to-end run: dataset, decomposition, prioritized replay, then one
//! policy per seed.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use sit_core::ardnem::{train_ardnem, EnsembleRewardModel};
use sit_core::dper::{build_dper, rescale_priorities, Dper};
use sit_core::envkit::generate_dataset;
use sit_core::policy::{train_bc, train_icq, train_sit, write_metrics, MetricRow, PolicySet, TrainOutput};
use sit_core::stats;
use sit_core::trajstore::{load_dataset, save_dataset, JointDataset};

use crate::config::{ExperimentConfig, Method, StageHyper};
use crate::error::{HarnessError, Result};
use crate::report::{
    Aggregate, CurvePoint, Decomposition, Failure, HistogramBin, PriorityHistogram, RewardSnapshot, RunReport,
    SeedRecord, Timing,
};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const ARDNEM_FILE: &str = "ardnem.ckpt";
pub const DPER_FILE: &str = "dper.ckpt";
pub const CONFIG_FILE: &str = "config.toml";
pub const HISTOGRAM_BINS: usize = 20;

pub fn policy_file(seed: u64) -> String {
    format!("policy_seed{seed}.ckpt")
}

pub fn metrics_file(seed: u64) -> String {
    format!("metrics_seed{seed}.csv")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Loads `dataset.path` if set, otherwise generates the configured mixture
/// and writes it to `out/dataset.jsonl`.
pub fn prepare_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<Arc<JointDataset>> {
    let spec = cfg.env.spec().map_err(|e| HarnessError::Config(e.to_string()))?;
    let data = match &cfg.dataset.path {
        Some(p) => {
            let data = load_dataset(p)?;
            if data.spec != spec {
                return Err(HarnessError::Config(format!(
                    "{}: dataset environment does not match [env]",
                    p.display()
                )));
            }
            data
        }
        None => {
            let comp = cfg.dataset.composition().map_err(|e| HarnessError::Config(e.to_string()))?;
            let data = generate_dataset(&spec, &comp, cfg.data_seed)?;
            create_dir(out)?;
            save_dataset(&data, out.join(DATASET_FILE))?;
            data
        }
    };
    Ok(Arc::new(data))
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    run_with(cfg, out, None, None)
}

/// Like [`run`], reusing an already built dataset and, when its
/// hyperparameters match, an already trained reward model.
pub fn run_with(
    cfg: &ExperimentConfig,
    out: &Path,
    dataset: Option<Arc<JointDataset>>,
    model: Option<&EnsembleRewardModel>,
) -> Result<RunReport> {
    cfg.validate()?;
    create_dir(out)?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| HarnessError::io(&config_path, e))?;
    let start = Instant::now();
    let mut timing = Timing::default();
    let hyper = cfg.stage_hyper();

    let t = Instant::now();
    let data = match dataset {
        Some(d) => d,
        None => prepare_dataset(cfg, out)?,
    };
    timing.dataset_s = t.elapsed().as_secs_f64();

    let mut report = RunReport {
        method: cfg.method.name().to_string(),
        composition: data.metadata.composition.clone(),
        episodes: data.num_episodes(),
        data_seed: cfg.data_seed,
        hyper: hyper.clone(),
        ablation_diff: cfg.diff_from_sit(),
        behavior_mean_return: data.behavior_mean_return(),
        seeds: Vec::new(),
        aggregate: None,
        decomposition: None,
        failure: None,
    };

    let mut dper = None;
    if cfg.method.uses_decomposition() {
        match decompose(cfg, &hyper, &data, model, out, &mut timing) {
            Ok((d, diag)) => {
                dper = Some(d);
                report.decomposition = Some(diag);
            }
            Err((stage, e)) => {
                report.failure = Some(Failure::new(stage, &e));
                finish(&mut report, &mut timing, start, out)?;
                return Ok(report);
            }
        }
    }

    let results: Vec<(u64, f64, Result<(TrainOutput, PolicySet)>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let (data, dper, hyper) = (&data, &dper, &hyper);
                scope.spawn(move || {
                    let t = Instant::now();
                    let r = train_seed(cfg.method, data, dper.as_ref(), hyper, seed);
                    (seed, t.elapsed().as_secs_f64(), r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect()
    });

    for (seed, secs, result) in results {
        timing.seeds_s.push((seed, secs));
        let record = match result {
            Ok((train, policy)) => {
                let meta = serde_json::json!({
                    "seed": seed,
                    "no_gat": hyper.policy.no_gat,
                    "policy_hyper": hyper.policy,
                });
                policy.save(out.join(policy_file(seed)), meta)?;
                save_metrics(&train.metrics, &out.join(metrics_file(seed)))?;
                SeedRecord {
                    seed,
                    eval_mean: Some(train.final_eval.mean),
                    eval_std: Some(train.final_eval.std),
                    eval_std_error: Some(train.final_eval.std_error()),
                    return_curve: return_curve(&train.metrics),
                    failure: None,
                }
            }
            Err(e) => {
                let f = Failure::new("policy", &e);
                if report.failure.is_none() {
                    report.failure = Some(f.clone());
                }
                SeedRecord {
                    seed,
                    eval_mean: None,
                    eval_std: None,
                    eval_std_error: None,
                    return_curve: Vec::new(),
                    failure: Some(f),
                }
            }
        };
        report.seeds.push(record);
    }
    report.aggregate = Aggregate::from_means(&report.eval_means());
    finish(&mut report, &mut timing, start, out)?;
    Ok(report)
}

fn finish(report: &mut RunReport, timing: &mut Timing, start: Instant, out: &Path) -> Result<()> {
    timing.total_s = start.elapsed().as_secs_f64();
    report.save(out)?;
    timing.save(out)
}

type StageError = (&'static str, HarnessError);

fn decompose(
    cfg: &ExperimentConfig,
    hyper: &StageHyper,
    data: &Arc<JointDataset>,
    model: Option<&EnsembleRewardModel>,
    out: &Path,
    timing: &mut Timing,
) -> std::result::Result<(Dper, Decomposition), StageError> {
    let t = Instant::now();
    let trained;
    let model = match model {
        Some(m) if m.hyper == hyper.ardnem && m.seed == cfg.data_seed => m,
        _ => {
            trained = train_ardnem(data, &hyper.ardnem, cfg.data_seed).map_err(|e| ("ardnem", e.into()))?;
            &trained
        }
    };
    model.save(out.join(ARDNEM_FILE)).map_err(|e| ("ardnem", e.into()))?;
    timing.ardnem_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let dper = build_dper(data.clone(), model, &hyper.dper).map_err(|e| ("dper", e.into()))?;
    dper.save(out.join(DPER_FILE)).map_err(|e| ("dper", e.into()))?;
    timing.dper_s = t.elapsed().as_secs_f64();

    let diag = diagnostics(data, model, &dper, hyper).map_err(|e| ("dper", e))?;
    Ok((dper, diag))
}

fn train_seed(
    method: Method,
    data: &Arc<JointDataset>,
    dper: Option<&Dper>,
    hyper: &StageHyper,
    seed: u64,
) -> Result<(TrainOutput, PolicySet)> {
    let name = method.name().to_string();
    Ok(match method {
        Method::Bc => {
            let out = train_bc(data, &hyper.policy, seed)?;
            let set = PolicySet {
                method: name,
                actors: out.actors.clone(),
                critics: Vec::new(),
                icq_critic: None,
            };
            (out, set)
        }
        Method::Icq => {
            let out = train_icq(data, &hyper.policy, seed)?;
            let set = PolicySet {
                method: name,
                actors: out.train.actors.clone(),
                critics: Vec::new(),
                icq_critic: Some(out.critic),
            };
            (out.train, set)
        }
        _ => {
            let dper = dper.expect("decomposition methods build a replay first");
            let out = train_sit(dper, &hyper.policy, seed)?;
            let set = PolicySet {
                method: name,
                actors: out.actors.clone(),
                critics: out.critics.clone(),
                icq_critic: None,
            };
            (out, set)
        }
    })
}

fn save_metrics(rows: &[MetricRow], path: &PathBuf) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics(rows, &mut buf).map_err(|e| HarnessError::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| HarnessError::io(path, e))
}

/// Every agent's row carries the same joint evaluation; agent 0 stands in.
fn return_curve(rows: &[MetricRow]) -> Vec<CurvePoint> {
    rows.iter()
        .filter(|r| r.agent == 0)
        .map(|r| CurvePoint {
            epoch: r.epoch,
            mean: r.eval_return_mean,
            std: r.eval_return_std,
        })
        .collect()
}

fn diagnostics(
    data: &JointDataset,
    model: &EnsembleRewardModel,
    dper: &Dper,
    hyper: &StageHyper,
) -> Result<Decomposition> {
    let n = data.spec.n_agents;
    let (_, mut held) = data.holdout_split(hyper.ardnem.holdout_fraction);
    if held.is_empty() {
        held = 0..data.num_episodes();
    }
    let fit = model.fit_report(data, held)?;

    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for traj in dper.trajectories() {
        for s in &traj.steps {
            sums[traj.agent] += s.r_hat;
            counts[traj.agent] += 1;
        }
    }
    let mean_reward = sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect();
    let median_priority = (0..n).map(|i| stats::median(&dper.agent_priorities(i))).collect();

    let window = 100;
    let smoothed: Vec<Vec<f64>> = (0..model.log.loss_curves.len()).map(|m| model.log.smoothed(m, window)).collect();
    let reward_curve = model
        .log
        .decomposed_curve()
        .into_iter()
        .map(|(epoch, rewards)| RewardSnapshot {
            epoch,
            rewards,
            loss: stats::mean(&smoothed.iter().map(|c| c[epoch - 1]).collect::<Vec<_>>()),
        })
        .collect();

    let (lo, hi) = hyper.dper.range;
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let histograms = dper
        .buckets
        .iter()
        .map(|b| {
            let raw: Vec<f64> = b.trajectories.iter().map(|t| t.raw_priority).collect();
            let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
                .map(|k| HistogramBin {
                    lo: lo + k as f64 * width,
                    hi: lo + (k + 1) as f64 * width,
                    counts: vec![0; n],
                })
                .collect();
            for (t, x) in b.trajectories.iter().zip(rescale_priorities(&raw, lo, hi)) {
                let k = (((x - lo) / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
                bins[k].counts[t.agent] += 1;
            }
            PriorityHistogram {
                agent_type: b.agent_type,
                bins,
            }
        })
        .collect();

    Ok(Decomposition {
        fit_relative_mse: fit.relative_mse(),
        mean_reward,
        median_priority,
        reward_curve,
        histograms,
    })
}
