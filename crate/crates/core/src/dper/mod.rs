//! Stage II: decompose joint episodes into per-agent trajectories and store
//! them in per-type prioritized buffers.

mod checkpoint;
mod priority;
mod sumtree;

pub use priority::{reshape_priorities, rescale_priorities, PRIORITY_RANGE};
pub use sumtree::SumTree;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ardnem::{EnsembleRewardModel, JointSample};
use crate::trajstore::{IndividualStep, IndividualTrajectory, JointDataset};
use crate::{Error, Result};

/// Relative floor on `û` as a fraction of the bucket median.
pub const U_FLOOR_FRACTION: f64 = 0.05;
/// Absolute floor on `û`, used when the bucket median is itself ~0.
pub const U_FLOOR_MIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DperHyper {
    /// Softmax temperature over rescaled priorities.
    pub alpha: f64,
    /// Discount for the Monte Carlo returns.
    pub gamma: f64,
    pub range: (f64, f64),
}

impl Default for DperHyper {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            gamma: 0.99,
            range: PRIORITY_RANGE,
        }
    }
}

/// `ĝ_t = Σ_{t' ≥ t} γ^{t'-t} r_t'`, no bootstrap past the last step.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    g
}

/// Mean and population standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Splits episode `k` into one trajectory per agent, with ensemble-mean
/// weighted rewards, their spread, discounted returns and the raw priority
/// (mean return). Reshaped priorities are left unset.
pub fn decompose_episode(
    model: &EnsembleRewardModel,
    dataset: &JointDataset,
    k: usize,
    gamma: f64,
) -> Result<Vec<IndividualTrajectory>> {
    let spec = &dataset.spec;
    let n = spec.n_agents;
    let episode = dataset
        .episodes
        .get(k)
        .ok_or_else(|| Error::InvalidArgument(format!("episode {k} out of range")))?;
    let input_dim = model.members[0].reward_net.in_dim();
    if input_dim != spec.obs_action_dim() {
        return Err(Error::LengthMismatch(format!(
            "model expects inputs of size {input_dim}, dataset gives {}",
            spec.obs_action_dim()
        )));
    }
    let mut per_agent: Vec<Vec<IndividualStep>> = vec![Vec::with_capacity(episode.len()); n];
    for (t, step) in episode.iter().enumerate() {
        if step.obs.len() != n || step.actions.len() != n {
            return Err(Error::LengthMismatch(format!(
                "episode {k} step {t} has {} observations and {} actions for {n} agents",
                step.obs.len(),
                step.actions.len()
            )));
        }
        let sample = JointSample::at(dataset, k, t);
        let outs = model.member_outputs(&sample.s, &sample.xs)?;
        let weighted: Vec<Vec<f64>> = outs.iter().map(|o| o.weighted()).collect();
        for (i, steps) in per_agent.iter_mut().enumerate() {
            let w: Vec<f64> = weighted.iter().map(|m| m[i]).collect();
            let (r_hat, u_hat) = mean_std(&w);
            steps.push(IndividualStep {
                episode: k,
                t,
                agent: i,
                action: step.actions[i],
                r_hat,
                u_hat,
                g_hat: 0.0,
            });
        }
    }
    Ok(per_agent
        .into_iter()
        .enumerate()
        .map(|(i, mut steps)| {
            let r: Vec<f64> = steps.iter().map(|s| s.r_hat).collect();
            for (s, g) in steps.iter_mut().zip(discounted_returns(&r, gamma)) {
                s.g_hat = g;
            }
            let raw_priority = steps.iter().map(|s| s.g_hat).sum::<f64>() / steps.len() as f64;
            IndividualTrajectory {
                agent: i,
                agent_type: spec.agent_types[i],
                episode: k,
                steps,
                raw_priority,
                priority: None,
            }
        })
        .collect())
}

/// Trajectories of one agent type with their sampling tree.
#[derive(Clone, Debug)]
pub struct TypeBucket {
    pub agent_type: usize,
    pub trajectories: Vec<IndividualTrajectory>,
    pub tree: SumTree<f64>,
    /// Lower bound applied to `û` when it divides a loss weight.
    pub u_floor: f64,
}

impl TypeBucket {
    fn new(agent_type: usize, mut trajectories: Vec<IndividualTrajectory>, hyper: &DperHyper) -> Result<Self> {
        let raw: Vec<f64> = trajectories.iter().map(|t| t.raw_priority).collect();
        let p = reshape_priorities(&raw, hyper.alpha, hyper.range.0, hyper.range.1)?;
        for (traj, p) in trajectories.iter_mut().zip(&p) {
            traj.priority = Some(*p);
        }
        Self::from_reshaped(agent_type, trajectories)
    }

    fn from_reshaped(agent_type: usize, trajectories: Vec<IndividualTrajectory>) -> Result<Self> {
        let p: Vec<f64> = trajectories
            .iter()
            .map(|t| t.priority.ok_or_else(|| Error::InvalidArgument("trajectory without priority".into())))
            .collect::<Result<_>>()?;
        let tree = SumTree::build(&p)?;
        if !(tree.total() > 0.0) {
            return Err(Error::InvalidArgument(format!("type {agent_type}: all priorities are zero")));
        }
        let us: Vec<f64> = trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.u_hat)).collect();
        let u_floor = (U_FLOOR_FRACTION * crate::stats::median(&us)).max(U_FLOOR_MIN);
        Ok(Self {
            agent_type,
            trajectories,
            tree,
            u_floor,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn priorities(&self) -> &[f64] {
        self.tree.leaves()
    }

    pub fn sample_trajectory<R: Rng + ?Sized>(&self, rng: &mut R) -> &IndividualTrajectory {
        &self.trajectories[self.tree.sample_with(rng)]
    }

    /// Trajectory by priority, then a uniform step within it.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> &IndividualStep {
        let traj = self.sample_trajectory(rng);
        &traj.steps[rng.gen_range(0..traj.steps.len())]
    }

    /// Uniform over trajectories, then uniform over steps.
    pub fn sample_step_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> &IndividualStep {
        let traj = &self.trajectories[rng.gen_range(0..self.trajectories.len())];
        &traj.steps[rng.gen_range(0..traj.steps.len())]
    }

    pub fn effective_u(&self, step: &IndividualStep) -> f64 {
        step.u_hat.max(self.u_floor)
    }
}

/// Per-type prioritized replay of decomposed individual trajectories.
#[derive(Clone, Debug)]
pub struct Dper {
    pub dataset: Arc<JointDataset>,
    pub hyper: DperHyper,
    /// Indexed by agent type.
    pub buckets: Vec<TypeBucket>,
    /// Set when the reward model had a single member: `û` is then
    /// uninformative and every step is treated as `û = 1`.
    pub unit_uncertainty: bool,
}

/// Decomposes every episode (in parallel), groups trajectories by agent type
/// and reshapes priorities over each whole type bucket.
pub fn build_dper(dataset: Arc<JointDataset>, model: &EnsembleRewardModel, hyper: &DperHyper) -> Result<Dper> {
    let k = dataset.num_episodes();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(k).max(1);
    let chunk = k.div_ceil(threads);
    let parts: Vec<Result<Vec<IndividualTrajectory>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|c| {
                let data = &dataset;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for ep in c * chunk..((c + 1) * chunk).min(k) {
                        out.extend(decompose_episode(model, data, ep, hyper.gamma)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decompose thread panicked")).collect()
    });
    let mut all = Vec::with_capacity(k * dataset.spec.n_agents);
    for p in parts {
        all.extend(p?);
    }
    let unit_uncertainty = model.num_members() == 1;
    if unit_uncertainty {
        for traj in &mut all {
            for s in &mut traj.steps {
                s.u_hat = 1.0;
            }
        }
    }
    let n_types = dataset.spec.agent_types.iter().max().map_or(0, |m| m + 1);
    let mut grouped: Vec<Vec<IndividualTrajectory>> = vec![Vec::new(); n_types];
    for traj in all {
        grouped[traj.agent_type].push(traj);
    }
    let buckets = grouped
        .into_iter()
        .enumerate()
        .map(|(ty, trajs)| TypeBucket::new(ty, trajs, hyper))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dper {
        dataset,
        hyper: hyper.clone(),
        buckets,
        unit_uncertainty,
    })
}

impl Dper {
    pub fn bucket(&self, agent_type: usize) -> &TypeBucket {
        &self.buckets[agent_type]
    }

    pub fn bucket_for_agent(&self, agent: usize) -> &TypeBucket {
        self.bucket(self.dataset.spec.agent_types[agent])
    }

    pub fn num_trajectories(&self) -> usize {
        self.buckets.iter().map(TypeBucket::len).sum()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &IndividualTrajectory> {
        self.buckets.iter().flat_map(|b| b.trajectories.iter())
    }

    /// Reshaped priorities of the trajectories generated by `agent`.
    pub fn agent_priorities(&self, agent: usize) -> Vec<f64> {
        self.bucket_for_agent(agent)
            .trajectories
            .iter()
            .filter(|t| t.agent == agent)
            .filter_map(|t| t.priority)
            .collect()
    }
}
