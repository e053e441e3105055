//! Data model and persistence for joint datasets and decomposed individual
//! trajectories.

mod format;

pub use format::{
    load_dataset, read_dataset, read_lines, save_dataset, write_dataset, LineReader, FORMAT_VERSION,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envkit::{EnvSpec, PolicyLevel};
use crate::numerics::one_hot;
use crate::{Error, Result};

/// One joint transition as recorded by the behavior policies.
#[derive(Clone, Debug, PartialEq)]
pub struct JointStep {
    pub s: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub r_tot: f64,
    pub done: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    /// Human-readable composition, e.g. `50%[r,r]+50%[r,m]`.
    pub composition: String,
    pub seed: u64,
    /// Left empty by the generator so that datasets are byte-reproducible.
    #[serde(default)]
    pub created: Option<String>,
    /// Behavior level of every agent for each mixture component.
    #[serde(default)]
    pub component_levels: Vec<Vec<PolicyLevel>>,
    /// Mixture component that generated each episode.
    #[serde(default)]
    pub episode_components: Vec<usize>,
}

/// Offline joint dataset: `K` episodes of joint steps plus the spec that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDataset {
    pub spec: EnvSpec,
    pub episodes: Vec<Vec<JointStep>>,
    pub metadata: DatasetMetadata,
}

impl JointDataset {
    pub fn new(spec: EnvSpec, episodes: Vec<Vec<JointStep>>, metadata: DatasetMetadata) -> Result<Self> {
        let d = Self {
            spec,
            episodes,
            metadata,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = &self.spec;
        spec.validate()?;
        if self.episodes.is_empty() {
            return Err(Error::InvalidArgument("dataset has no episodes".into()));
        }
        for (k, ep) in self.episodes.iter().enumerate() {
            if ep.is_empty() {
                return Err(Error::InvalidArgument(format!("episode {k} is empty")));
            }
            if ep.len() > spec.horizon {
                return Err(Error::InvalidArgument(format!(
                    "episode {k} has {} steps, horizon is {}",
                    ep.len(),
                    spec.horizon
                )));
            }
            for (t, st) in ep.iter().enumerate() {
                let ok = st.s.len() == spec.state_dim
                    && st.obs.len() == spec.n_agents
                    && st.obs.iter().all(|o| o.len() == spec.obs_dim)
                    && st.actions.len() == spec.n_agents
                    && st.actions.iter().all(|&a| a < spec.n_actions)
                    && st.r_tot.is_finite();
                if !ok {
                    return Err(Error::LengthMismatch(format!("episode {k} step {t} does not match the env spec")));
                }
                if st.done != (t + 1 == ep.len()) {
                    return Err(Error::InvalidArgument(format!(
                        "episode {k} step {t}: done flag must be set exactly on the last step"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn step(&self, k: usize, t: usize) -> &JointStep {
        &self.episodes[k][t]
    }

    /// Local history input `o_i ++ one_hot(previous action)`; the previous
    /// action is all zeros at the first step.
    pub fn tau(&self, k: usize, t: usize, agent: usize) -> Vec<f64> {
        let n = self.spec.n_actions;
        let mut v = self.episodes[k][t].obs[agent].clone();
        if t == 0 {
            v.extend(std::iter::repeat_n(0.0, n));
        } else {
            v.extend(one_hot::<f64>(self.episodes[k][t - 1].actions[agent], n));
        }
        v
    }

    /// `o_i ++ one_hot(a_i)` at step `(k, t)`.
    pub fn obs_action(&self, k: usize, t: usize, agent: usize) -> Vec<f64> {
        let st = &self.episodes[k][t];
        let mut v = st.obs[agent].clone();
        v.extend(one_hot::<f64>(st.actions[agent], self.spec.n_actions));
        v
    }

    pub fn episode_return(&self, k: usize) -> f64 {
        self.episodes[k].iter().map(|s| s.r_tot).sum()
    }

    pub fn episode_returns(&self) -> Vec<f64> {
        (0..self.num_episodes()).map(|k| self.episode_return(k)).collect()
    }

    /// Mean undiscounted team return of the behavior data.
    pub fn behavior_mean_return(&self) -> f64 {
        crate::stats::mean(&self.episode_returns())
    }

    /// Behavior level of `agent` in episode `k`, when the generator recorded it.
    pub fn agent_level(&self, k: usize, agent: usize) -> Option<PolicyLevel> {
        let c = *self.metadata.episode_components.get(k)?;
        self.metadata.component_levels.get(c)?.get(agent).copied()
    }

    /// Episodes `[0, n_train)` and `[n_train, K)` with the last `fraction` held out.
    pub fn holdout_split(&self, fraction: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let k = self.num_episodes();
        let held = ((k as f64) * fraction).floor() as usize;
        let held = held.min(k.saturating_sub(1));
        (0..k - held, k - held..k)
    }
}

/// Flat list of `(episode, t)` pairs for uniform step sampling.
#[derive(Clone, Debug)]
pub struct StepIndex {
    refs: Vec<(u32, u32)>,
}

impl StepIndex {
    pub fn new(dataset: &JointDataset, episodes: std::ops::Range<usize>) -> Self {
        let refs = episodes
            .flat_map(|k| (0..dataset.episodes[k].len()).map(move |t| (k as u32, t as u32)))
            .collect();
        Self { refs }
    }

    pub fn all(dataset: &JointDataset) -> Self {
        Self::new(dataset, 0..dataset.num_episodes())
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn get(&self, i: usize) -> (usize, usize) {
        let (k, t) = self.refs[i];
        (k as usize, t as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.refs.iter().map(|&(k, t)| (k as usize, t as usize))
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
        (0..n).map(|_| self.get(rng.gen_range(0..self.refs.len()))).collect()
    }
}

/// Uniformly samples `batch_size` joint steps (with replacement) over all
/// `(episode, t)` pairs.
pub fn sample_joint_batch<'a, R: Rng + ?Sized>(
    dataset: &'a JointDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a JointStep>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let index = StepIndex::all(dataset);
    Ok(index
        .sample(batch_size, rng)
        .into_iter()
        .map(|(k, t)| dataset.step(k, t))
        .collect())
}

/// One decomposed step of an individual trajectory. Observations are not
/// copied: `(episode, t, agent)` locates `o_i`, `o_i'` and `o_-i` in the joint
/// dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct IndividualStep {
    pub episode: usize,
    pub t: usize,
    pub agent: usize,
    pub action: usize,
    /// Ensemble-mean weighted reward.
    pub r_hat: f64,
    /// Ensemble standard deviation of the weighted reward.
    pub u_hat: f64,
    /// Discounted Monte Carlo return of `r_hat` from this step on.
    pub g_hat: f64,
}

impl IndividualStep {
    pub fn own_obs<'a>(&self, data: &'a JointDataset) -> &'a [f64] {
        &data.episodes[self.episode][self.t].obs[self.agent]
    }

    /// Next own observation; `None` at the last step of the episode.
    pub fn next_obs<'a>(&self, data: &'a JointDataset) -> Option<&'a [f64]> {
        data.episodes[self.episode].get(self.t + 1).map(|s| s.obs[self.agent].as_slice())
    }

    /// Observations of every other agent, in agent order.
    pub fn others_obs<'a>(&self, data: &'a JointDataset) -> Vec<&'a [f64]> {
        data.episodes[self.episode][self.t]
            .obs
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != self.agent)
            .map(|(_, o)| o.as_slice())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndividualTrajectory {
    /// Agent whose behavior produced this trajectory.
    pub agent: usize,
    pub agent_type: usize,
    pub episode: usize,
    pub steps: Vec<IndividualStep>,
    /// Mean of `g_hat` over the steps.
    pub raw_priority: f64,
    /// Reshaped sampling probability within the type bucket.
    pub priority: Option<f64>,
}

impl IndividualTrajectory {
    pub fn mean_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.r_hat).sum::<f64>() / self.steps.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::EnvSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(n_steps: usize) -> JointDataset {
        let spec = EnvSpec::symmetric_matrix_game(2, &[0.0, 1.0]).unwrap();
        let episodes = (0..n_steps)
            .map(|k| {
                vec![JointStep {
                    s: vec![0.0],
                    obs: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    actions: vec![k % 2, 1],
                    r_tot: (k % 2) as f64 + 1.0,
                    done: true,
                }]
            })
            .collect();
        JointDataset::new(spec, episodes, DatasetMetadata::default()).unwrap()
    }

    #[test]
    fn single_step_batch_repeats_it() {
        let d = tiny(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_joint_batch(&d, 32, &mut rng).unwrap();
        assert_eq!(b.len(), 32);
        assert!(b.iter().all(|s| *s == d.step(0, 0)));
    }

    #[test]
    fn zero_batch_is_an_error() {
        let d = tiny(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_joint_batch(&d, 0, &mut rng).is_err());
    }

    #[test]
    fn fixed_seed_gives_identical_batches() {
        let d = tiny(10);
        let idx = StepIndex::all(&d);
        let a = idx.sample(50, &mut ChaCha8Rng::seed_from_u64(4));
        let b = idx.sample(50, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let d = tiny(10);
        let idx = StepIndex::all(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let mut counts = vec![0usize; 10];
        for (k, _) in idx.sample(n, &mut rng) {
            counts[k] += 1;
        }
        for c in &counts {
            let f = *c as f64 / n as f64;
            assert!((f - 0.1).abs() <= 0.1 * 0.01, "{counts:?}");
        }
    }

    #[test]
    fn uniform_sampling_passes_chi_square() {
        let d = tiny(10);
        let idx = StepIndex::all(&d);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut counts = [0f64; 10];
        for (k, _) in idx.sample(n, &mut rng) {
            counts[k] += 1.0;
        }
        let e = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // chi-square(9) upper 1% critical value
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn tau_uses_previous_action() {
        let spec = EnvSpec::spread_grid(2, 4).unwrap();
        let mk = |a: usize, done| JointStep {
            s: vec![0.0; 8],
            obs: vec![vec![0.5; 6], vec![0.25; 6]],
            actions: vec![a, 0],
            r_tot: 0.0,
            done,
        };
        let ep = vec![mk(3, false), mk(1, true)];
        let d = JointDataset::new(spec, vec![ep], DatasetMetadata::default()).unwrap();
        assert_eq!(&d.tau(0, 0, 0)[6..], &[0.0; 5]);
        assert_eq!(&d.tau(0, 1, 0)[6..], &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(&d.obs_action(0, 1, 0)[6..], &[0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_episode_rejected() {
        let spec = EnvSpec::symmetric_matrix_game(2, &[0.0, 1.0]).unwrap();
        assert!(JointDataset::new(spec.clone(), vec![], DatasetMetadata::default()).is_err());
        assert!(JointDataset::new(spec, vec![vec![]], DatasetMetadata::default()).is_err());
    }
}
