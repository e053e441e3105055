use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvParams, EnvSpec, EnvState, MOVES};
use crate::rng::{stream_rng, Rng as StreamRng, Stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyLevel {
    Random,
    Medium,
    Expert,
}

impl PolicyLevel {
    /// Probability of replacing the scripted action with a uniform one.
    pub fn epsilon(self) -> f64 {
        match self {
            PolicyLevel::Random => 1.0,
            PolicyLevel::Medium => 0.5,
            PolicyLevel::Expert => 0.0,
        }
    }

    pub fn short(self) -> char {
        match self {
            PolicyLevel::Random => 'r',
            PolicyLevel::Medium => 'm',
            PolicyLevel::Expert => 'e',
        }
    }
}

impl fmt::Display for PolicyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

impl FromStr for PolicyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "r" | "random" => Ok(PolicyLevel::Random),
            "m" | "medium" => Ok(PolicyLevel::Medium),
            "e" | "expert" => Ok(PolicyLevel::Expert),
            other => Err(Error::InvalidComposition(format!("unknown policy level {other:?}"))),
        }
    }
}

/// Greedy scripted action for `agent`.
///
/// Matrix game: the first action with maximal own payoff. Spread grid: the
/// first move (in `MOVES` order) that minimizes distance to the agent's
/// landmark.
pub fn expert_action(spec: &EnvSpec, state: &EnvState, agent: usize) -> usize {
    match &spec.params {
        EnvParams::MatrixGame { payoffs } => {
            let p = &payoffs[agent];
            let mut best = 0;
            for a in 1..p.len() {
                if p[a] > p[best] {
                    best = a;
                }
            }
            best
        }
        EnvParams::SpreadGrid { grid_size } => {
            let g = *grid_size as i64;
            let pos = state.positions[agent];
            let target = state.landmarks[agent];
            let dist = |a: usize| {
                let d = MOVES[a];
                let x = (pos[0] + d[0]).clamp(0, g - 1);
                let y = (pos[1] + d[1]).clamp(0, g - 1);
                (x - target[0]).abs() + (y - target[1]).abs()
            };
            let mut best = 0;
            for a in 1..MOVES.len() {
                if dist(a) < dist(best) {
                    best = a;
                }
            }
            best
        }
    }
}

/// Scripted epsilon-greedy behavior policy for one agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BehaviorPolicy {
    pub agent: usize,
    pub level: PolicyLevel,
    pub epsilon: f64,
}

impl BehaviorPolicy {
    pub fn new(agent: usize, level: PolicyLevel) -> Self {
        Self {
            agent,
            level,
            epsilon: level.epsilon(),
        }
    }

    pub fn act<R: Rng + ?Sized>(&self, spec: &EnvSpec, state: &EnvState, rng: &mut R) -> usize {
        let explore: f64 = rng.gen();
        if explore < self.epsilon {
            rng.gen_range(0..spec.n_actions)
        } else {
            expert_action(spec, state, self.agent)
        }
    }

    /// Probability of each action in `state`.
    pub fn action_probs(&self, spec: &EnvSpec, state: &EnvState) -> Vec<f64> {
        let n = spec.n_actions;
        let mut p = vec![self.epsilon / n as f64; n];
        p[expert_action(spec, state, self.agent)] += 1.0 - self.epsilon;
        p
    }
}

/// One behavior policy per agent, all of the same level, with their own noise
/// stream.
#[derive(Clone, Debug)]
pub struct PolicyPool {
    pub level: PolicyLevel,
    pub policies: Vec<BehaviorPolicy>,
    rng: StreamRng,
}

impl PolicyPool {
    pub fn joint_action(&mut self, spec: &EnvSpec, state: &EnvState) -> Vec<usize> {
        let rng = &mut self.rng;
        self.policies.iter().map(|p| p.act(spec, state, rng)).collect()
    }

    /// Mean team return over `episodes` rollouts from seeded resets.
    pub fn mean_return(&mut self, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<Vec<f64>> {
        let mut returns = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let mut env_rng = stream_rng(seed, Stream::Evaluation(e));
            let pool = &mut *self;
            returns.push(super::rollout(spec, &mut env_rng, |st, _, _, _| pool.joint_action(spec, st))?);
        }
        Ok(returns)
    }
}

pub fn make_policy_pool(spec: &EnvSpec, level: PolicyLevel, seed: u64) -> PolicyPool {
    PolicyPool {
        level,
        policies: (0..spec.n_agents).map(|i| BehaviorPolicy::new(i, level)).collect(),
        rng: stream_rng(seed, Stream::PolicyPool),
    }
}
