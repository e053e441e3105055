use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::{EnvSpec, PolicyLevel};
use crate::rng::{stream_rng, Stream};
use crate::trajstore::{DatasetMetadata, JointDataset, JointStep};
use crate::{Error, Result};

/// One mixture component: a fraction of the episodes, generated with the given
/// behavior level for each agent.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub fraction: f64,
    pub levels: Vec<PolicyLevel>,
}

/// Agent-wise dataset recipe, written like `50%[r,r]+50%[r,m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetComposition {
    pub components: Vec<MixtureComponent>,
    pub episodes: usize,
}

impl DatasetComposition {
    pub fn new(components: Vec<MixtureComponent>, episodes: usize) -> Self {
        Self { components, episodes }
    }

    pub fn with_episodes(mut self, episodes: usize) -> Self {
        self.episodes = episodes;
        self
    }

    /// Every agent at `level`.
    pub fn uniform(level: PolicyLevel, n_agents: usize, episodes: usize) -> Self {
        Self::new(
            vec![MixtureComponent {
                fraction: 1.0,
                levels: vec![level; n_agents],
            }],
            episodes,
        )
    }

    /// Low-quality imbalanced mix: half all-random, half with the last agent medium.
    pub fn low_quality(n_agents: usize, episodes: usize) -> Self {
        Self::one_improved(n_agents, episodes, 0.5, PolicyLevel::Medium)
    }

    /// 99.5% all-random, 0.5% with the last agent medium.
    pub fn extreme(n_agents: usize, episodes: usize) -> Self {
        Self::one_improved(n_agents, episodes, 0.005, PolicyLevel::Medium)
    }

    fn one_improved(n_agents: usize, episodes: usize, good_fraction: f64, level: PolicyLevel) -> Self {
        let mut better = vec![PolicyLevel::Random; n_agents];
        better[n_agents - 1] = level;
        Self::new(
            vec![
                MixtureComponent {
                    fraction: 1.0 - good_fraction,
                    levels: vec![PolicyLevel::Random; n_agents],
                },
                MixtureComponent {
                    fraction: good_fraction,
                    levels: better,
                },
            ],
            episodes,
        )
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidComposition(m));
        if self.episodes == 0 {
            return bad("episode count K must be at least 1".into());
        }
        if self.components.is_empty() {
            return bad("no mixture components".into());
        }
        let total: f64 = self.components.iter().map(|c| c.fraction).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("fractions sum to {total}, expected 1"));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.fraction >= 0.0) {
                return bad(format!("component {i} has negative fraction"));
            }
            if c.levels.len() != n_agents {
                return bad(format!(
                    "component {i} assigns {} agents, env has {n_agents}",
                    c.levels.len()
                ));
            }
        }
        Ok(())
    }

    /// Episodes per component: rounded, with the remainder on the first.
    pub fn episode_counts(&self) -> Vec<usize> {
        let mut counts: Vec<usize> = self
            .components
            .iter()
            .map(|c| (c.fraction * self.episodes as f64).round() as usize)
            .collect();
        let rest: usize = counts[1..].iter().sum();
        counts[0] = self.episodes.saturating_sub(rest);
        counts
    }
}

impl fmt::Display for DatasetComposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, "+")?;
            }
            let levels: Vec<String> = c.levels.iter().map(|l| l.to_string()).collect();
            write!(f, "{}%[{}]", c.fraction * 100.0, levels.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for DatasetComposition {
    type Err = Error;

    /// Parses `50%[r,r]+50%[r,m]`; the episode count is set separately.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidComposition(m);
        let mut components = Vec::new();
        for part in s.split('+') {
            let part = part.trim();
            let (pct, rest) = part
                .split_once('%')
                .ok_or_else(|| bad(format!("missing '%' in {part:?}")))?;
            let fraction: f64 = pct
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("bad percentage {pct:?}: {e}")))?
                / 100.0;
            let inner = rest
                .trim()
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| bad(format!("expected [levels] in {part:?}")))?;
            let levels = inner
                .split(',')
                .map(|l| l.parse::<PolicyLevel>())
                .collect::<Result<Vec<_>>>()?;
            components.push(MixtureComponent { fraction, levels });
        }
        Ok(Self {
            components,
            episodes: 0,
        })
    }
}

/// Rolls out the behavior mixture. Deterministic given `seed`; every episode
/// draws from its own stream, so episode `k` does not depend on the others.
pub fn generate_dataset(spec: &EnvSpec, composition: &DatasetComposition, seed: u64) -> Result<JointDataset> {
    spec.validate()?;
    composition.validate(spec.n_agents)?;
    let counts = composition.episode_counts();
    let mut assignment: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    assignment.shuffle(&mut stream_rng(seed, Stream::Dataset));

    let policies: Vec<Vec<super::BehaviorPolicy>> = composition
        .components
        .iter()
        .map(|c| {
            c.levels
                .iter()
                .enumerate()
                .map(|(i, &l)| super::BehaviorPolicy::new(i, l))
                .collect()
        })
        .collect();

    let mut episodes = Vec::with_capacity(assignment.len());
    for (k, &component) in assignment.iter().enumerate() {
        let mut rng = stream_rng(seed, Stream::DatasetEpisode(k));
        let (mut state, mut obs) = spec.reset_with(&mut rng);
        let mut steps = Vec::with_capacity(spec.horizon);
        while !state.done {
            let actions: Vec<usize> = policies[component]
                .iter()
                .map(|p| p.act(spec, &state, &mut rng))
                .collect();
            let tr = spec.step(&state, &actions)?;
            steps.push(JointStep {
                s: state.s.clone(),
                obs,
                actions,
                r_tot: tr.r_tot,
                done: tr.done,
            });
            state = tr.state;
            obs = tr.observations;
        }
        episodes.push(steps);
    }

    let metadata = DatasetMetadata {
        composition: composition.to_string(),
        seed,
        created: None,
        component_levels: composition.components.iter().map(|c| c.levels.clone()).collect(),
        episode_components: assignment,
    };
    JointDataset::new(spec.clone(), episodes, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints() {
        let c: DatasetComposition = "50%[r,r] + 50%[r,m]".parse().unwrap();
        assert_eq!(c.components.len(), 2);
        assert_eq!(c.components[1].levels, vec![PolicyLevel::Random, PolicyLevel::Medium]);
        assert_eq!(c.to_string(), "50%[r,r]+50%[r,m]");
        assert!("50[r]".parse::<DatasetComposition>().is_err());
        assert!("100%[x]".parse::<DatasetComposition>().is_err());
    }

    #[test]
    fn counts_follow_rounding_rule() {
        let c: DatasetComposition = "50%[r,r]+50%[r,m]".parse().unwrap();
        assert_eq!(c.with_episodes(10).episode_counts(), vec![5, 5]);
        let c = DatasetComposition::extreme(2, 400);
        assert_eq!(c.episode_counts(), vec![398, 2]);
        let c: DatasetComposition = "33.3%[r]+33.3%[m]+33.4%[e]".parse().unwrap();
        assert_eq!(c.with_episodes(10).episode_counts(), vec![4, 3, 3]);
    }

    #[test]
    fn zero_episodes_is_an_error() {
        let spec = EnvSpec::spread_grid(2, 8).unwrap();
        let c = DatasetComposition::uniform(PolicyLevel::Random, 2, 0);
        assert!(generate_dataset(&spec, &c, 0).is_err());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let c: DatasetComposition = "50%[r,r]+40%[r,m]".parse().unwrap();
        assert!(c.with_episodes(10).validate(2).is_err());
    }

    #[test]
    fn single_component_assigns_levels_everywhere() {
        let spec = EnvSpec::spread_grid(2, 8).unwrap();
        let c: DatasetComposition = "100%[r,e]".parse().unwrap();
        let d = generate_dataset(&spec, &c.with_episodes(100), 1).unwrap();
        assert_eq!(d.num_episodes(), 100);
        for k in 0..100 {
            assert_eq!(d.agent_level(k, 0), Some(PolicyLevel::Random));
            assert_eq!(d.agent_level(k, 1), Some(PolicyLevel::Expert));
            assert_eq!(d.episodes[k].len(), 25);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = EnvSpec::spread_grid(2, 6).unwrap();
        let c = DatasetComposition::low_quality(2, 20);
        assert_eq!(generate_dataset(&spec, &c, 9).unwrap(), generate_dataset(&spec, &c, 9).unwrap());
        assert_ne!(generate_dataset(&spec, &c, 9).unwrap(), generate_dataset(&spec, &c, 10).unwrap());
    }

    #[test]
    fn low_quality_below_medium_quality() {
        let spec = EnvSpec::spread_grid(2, 8).unwrap();
        let low = generate_dataset(&spec, &DatasetComposition::low_quality(2, 400), 0).unwrap();
        let medium: DatasetComposition = "50%[r,m]+50%[m,m]".parse().unwrap();
        let medium = generate_dataset(&spec, &medium.with_episodes(400), 0).unwrap();
        assert!(low.behavior_mean_return() < medium.behavior_mean_return());
    }
}
