//! Built-in cooperative environments with additive per-agent reward oracles,
//! scripted behavior-policy pools and the agent-wise imbalanced dataset
//! generator.
//!
//! Two environments are provided:
//!
//! * `matrix_game`: one-step game where agent `i` earns `payoffs[i][a_i]` and
//!   the team reward is the sum. The state is a constant zero vector.
//! * `spread_grid`: agents on a square grid each walk to an assigned landmark.
//!   Per-agent contribution after every move is
//!   `-(manhattan distance to own landmark) / grid_size - 0.5 * (other agents on
//!   the same cell)`; the team reward is the sum. Fixed horizon.

mod dataset;
mod policies;

pub use dataset::{generate_dataset, DatasetComposition, MixtureComponent};
pub use policies::{expert_action, make_policy_pool, BehaviorPolicy, PolicyLevel, PolicyPool};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SPREAD_GRID_HORIZON: usize = 25;
pub const SPREAD_GRID_ACTIONS: usize = 5;
pub const COLLISION_PENALTY: f64 = 0.5;

/// Moves in their fixed tie-breaking order: stay, up, down, left, right.
pub const MOVES: [[i64; 2]; SPREAD_GRID_ACTIONS] = [[0, 0], [0, 1], [0, -1], [-1, 0], [1, 0]];
pub const ACTION_NAMES: [&str; SPREAD_GRID_ACTIONS] = ["stay", "up", "down", "left", "right"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    MatrixGame,
    SpreadGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvParams {
    MatrixGame {
        #[serde(with = "payoffs_fmt")]
        payoffs: Vec<Vec<f64>>,
    },
    SpreadGrid {
        grid_size: usize,
    },
}

mod payoffs_fmt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        crate::textfmt::reals2::serialize(x, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<f64>>::deserialize(d)
    }
}

/// Static description of an environment instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub n_agents: usize,
    /// Type label per agent; agents sharing a label are interchangeable.
    pub agent_types: Vec<usize>,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub horizon: usize,
    pub params: EnvParams,
}

impl EnvSpec {
    /// One-step additive matrix game; `payoffs[i][a]` is agent `i`'s payoff.
    /// Each agent observes its own payoff row; the state is a single zero.
    pub fn matrix_game(payoffs: Vec<Vec<f64>>) -> Result<Self> {
        let n_agents = payoffs.len();
        let n_actions = payoffs.first().map_or(0, |p| p.len());
        let spec = Self {
            env_id: EnvId::MatrixGame,
            n_agents,
            agent_types: vec![0; n_agents],
            n_actions,
            obs_dim: n_actions,
            state_dim: 1,
            horizon: 1,
            params: EnvParams::MatrixGame { payoffs },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same payoff table for every agent.
    pub fn symmetric_matrix_game(n_agents: usize, payoff: &[f64]) -> Result<Self> {
        Self::matrix_game(vec![payoff.to_vec(); n_agents])
    }

    pub fn spread_grid(n_agents: usize, grid_size: usize) -> Result<Self> {
        Self::spread_grid_with_horizon(n_agents, grid_size, SPREAD_GRID_HORIZON)
    }

    pub fn spread_grid_with_horizon(n_agents: usize, grid_size: usize, horizon: usize) -> Result<Self> {
        let spec = Self {
            env_id: EnvId::SpreadGrid,
            n_agents,
            agent_types: vec![0; n_agents],
            n_actions: SPREAD_GRID_ACTIONS,
            obs_dim: 6,
            state_dim: 4 * n_agents,
            horizon,
            params: EnvParams::SpreadGrid { grid_size },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.n_actions == 0 {
            return bad("action space must be non-empty");
        }
        if self.agent_types.len() != self.n_agents {
            return bad("agent_types must name every agent");
        }
        match &self.params {
            EnvParams::MatrixGame { payoffs } => {
                if self.env_id != EnvId::MatrixGame {
                    return bad("env_id does not match params");
                }
                if payoffs.len() != self.n_agents {
                    return bad("one payoff table per agent required");
                }
                if payoffs.iter().any(|p| p.len() != self.n_actions) {
                    return bad("payoff tables must all have |A| entries");
                }
                if payoffs.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("payoffs must be finite");
                }
                if self.horizon != 1 || self.obs_dim != self.n_actions || self.state_dim != 1 {
                    return bad("matrix game has horizon 1, payoff-row observations and a unit state");
                }
            }
            EnvParams::SpreadGrid { grid_size } => {
                if self.env_id != EnvId::SpreadGrid {
                    return bad("env_id does not match params");
                }
                if self.n_agents < 2 {
                    return bad("spread_grid needs at least 2 agents");
                }
                if *grid_size < 2 {
                    return bad("grid_size must be at least 2");
                }
                if grid_size * grid_size < self.n_agents {
                    return bad("grid too small for distinct landmarks");
                }
                if self.n_actions != SPREAD_GRID_ACTIONS || self.obs_dim != 6 || self.state_dim != 4 * self.n_agents {
                    return bad("spread_grid dims are fixed: 5 actions, obs 6, state 4N");
                }
            }
        }
        Ok(())
    }

    /// Input width of `observation ++ one_hot(action)`.
    pub fn obs_action_dim(&self) -> usize {
        self.obs_dim + self.n_actions
    }

    pub fn grid_size(&self) -> Option<usize> {
        match self.params {
            EnvParams::SpreadGrid { grid_size } => Some(grid_size),
            _ => None,
        }
    }

    pub fn reset(&self, seed: u64) -> (EnvState, Vec<Vec<f64>>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        self.reset_with(&mut rng)
    }

    pub fn reset_with<R: Rng + ?Sized>(&self, rng: &mut R) -> (EnvState, Vec<Vec<f64>>) {
        let state = match &self.params {
            EnvParams::MatrixGame { .. } => EnvState {
                s: vec![0.0; self.state_dim],
                t: 0,
                done: false,
                positions: Vec::new(),
                landmarks: Vec::new(),
            },
            EnvParams::SpreadGrid { grid_size } => {
                let g = *grid_size as i64;
                let cells = distinct_cells(2 * self.n_agents, *grid_size, rng);
                // Landmarks must be distinct from each other; agents distinct from
                // each other. Drawing 2N distinct cells satisfies both.
                let landmarks = cells[..self.n_agents].to_vec();
                let positions = cells[self.n_agents..].to_vec();
                debug_assert!(positions.iter().all(|p| p[0] < g && p[1] < g));
                let mut st = EnvState {
                    s: Vec::new(),
                    t: 0,
                    done: false,
                    positions,
                    landmarks,
                };
                st.s = self.global_state(&st.positions, &st.landmarks);
                st
            }
        };
        let obs = self.observations(&state);
        (state, obs)
    }

    fn global_state(&self, positions: &[[i64; 2]], landmarks: &[[i64; 2]]) -> Vec<f64> {
        let g = self.grid_size().unwrap_or(1) as f64;
        positions
            .iter()
            .chain(landmarks)
            .flat_map(|p| [p[0] as f64 / g, p[1] as f64 / g])
            .collect()
    }

    /// Per-agent observation: own position, vector to own landmark, vector to
    /// nearest other agent (all divided by the grid size).
    pub fn observations(&self, state: &EnvState) -> Vec<Vec<f64>> {
        match &self.params {
            EnvParams::MatrixGame { payoffs } => payoffs.clone(),
            EnvParams::SpreadGrid { grid_size } => {
                let g = *grid_size as f64;
                (0..self.n_agents)
                    .map(|i| {
                        let p = state.positions[i];
                        let l = state.landmarks[i];
                        let near = nearest_other(&state.positions, i).map_or([0, 0], |j| {
                            let q = state.positions[j];
                            [q[0] - p[0], q[1] - p[1]]
                        });
                        vec![
                            p[0] as f64 / g,
                            p[1] as f64 / g,
                            (l[0] - p[0]) as f64 / g,
                            (l[1] - p[1]) as f64 / g,
                            near[0] as f64 / g,
                            near[1] as f64 / g,
                        ]
                    })
                    .collect()
            }
        }
    }

    fn check_actions(&self, actions: &[usize]) -> Result<()> {
        if actions.len() != self.n_agents {
            return Err(Error::LengthMismatch(format!(
                "joint action has {} entries, expected {}",
                actions.len(),
                self.n_agents
            )));
        }
        for (agent, &action) in actions.iter().enumerate() {
            if action >= self.n_actions {
                return Err(Error::ActionOutOfRange {
                    agent,
                    action,
                    n_actions: self.n_actions,
                });
            }
        }
        Ok(())
    }

    fn moved(&self, positions: &[[i64; 2]], actions: &[usize]) -> Vec<[i64; 2]> {
        let g = self.grid_size().unwrap_or(1) as i64;
        positions
            .iter()
            .zip(actions)
            .map(|(p, &a)| {
                let d = MOVES[a];
                [(p[0] + d[0]).clamp(0, g - 1), (p[1] + d[1]).clamp(0, g - 1)]
            })
            .collect()
    }

    /// Exact per-agent reward contributions for taking `actions` in `state`.
    /// Their sum (in agent order) is the team reward returned by [`step`](Self::step).
    pub fn oracle_rewards(&self, state: &EnvState, actions: &[usize]) -> Result<Vec<f64>> {
        self.check_actions(actions)?;
        Ok(match &self.params {
            EnvParams::MatrixGame { payoffs } => actions.iter().enumerate().map(|(i, &a)| payoffs[i][a]).collect(),
            EnvParams::SpreadGrid { grid_size } => {
                let next = self.moved(&state.positions, actions);
                contributions(&next, &state.landmarks, *grid_size)
            }
        })
    }

    pub fn step(&self, state: &EnvState, actions: &[usize]) -> Result<Transition> {
        if state.done {
            return Err(Error::EpisodeDone);
        }
        let phi = self.oracle_rewards(state, actions)?;
        let r_tot = phi.iter().sum::<f64>();
        let t = state.t + 1;
        let next = match &self.params {
            EnvParams::MatrixGame { .. } => EnvState {
                s: state.s.clone(),
                t,
                done: t >= self.horizon,
                positions: Vec::new(),
                landmarks: Vec::new(),
            },
            EnvParams::SpreadGrid { .. } => {
                let positions = self.moved(&state.positions, actions);
                let s = self.global_state(&positions, &state.landmarks);
                EnvState {
                    s,
                    t,
                    done: t >= self.horizon,
                    positions,
                    landmarks: state.landmarks.clone(),
                }
            }
        };
        let observations = self.observations(&next);
        let done = next.done;
        Ok(Transition {
            state: next,
            observations,
            r_tot,
            done,
        })
    }
}

/// Per-agent contribution for a configuration of positions.
pub fn contributions(positions: &[[i64; 2]], landmarks: &[[i64; 2]], grid_size: usize) -> Vec<f64> {
    let g = grid_size as f64;
    (0..positions.len())
        .map(|i| {
            let p = positions[i];
            let l = landmarks[i];
            let dist = ((p[0] - l[0]).abs() + (p[1] - l[1]).abs()) as f64;
            let co_located = positions.iter().enumerate().filter(|&(j, q)| j != i && *q == p).count();
            -dist / g - COLLISION_PENALTY * co_located as f64
        })
        .collect()
}

fn nearest_other(positions: &[[i64; 2]], i: usize) -> Option<usize> {
    let p = positions[i];
    (0..positions.len())
        .filter(|&j| j != i)
        .min_by_key(|&j| ((positions[j][0] - p[0]).abs() + (positions[j][1] - p[1]).abs(), j))
}

fn distinct_cells<R: Rng + ?Sized>(n: usize, grid_size: usize, rng: &mut R) -> Vec<[i64; 2]> {
    let total = grid_size * grid_size;
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    while picked.len() < n {
        let c = rng.gen_range(0..total);
        if !picked.contains(&c) {
            picked.push(c);
        }
    }
    picked
        .into_iter()
        .map(|c| [(c % grid_size) as i64, (c / grid_size) as i64])
        .collect()
}

/// Dynamic environment state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    /// Global state vector.
    pub s: Vec<f64>,
    pub t: usize,
    pub done: bool,
    pub positions: Vec<[i64; 2]>,
    pub landmarks: Vec<[i64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub observations: Vec<Vec<f64>>,
    pub r_tot: f64,
    pub done: bool,
}

/// Runs one episode with a joint controller and returns the undiscounted team
/// return. The controller sees the true state, the observations and the
/// previous joint action (`None` at the first step).
pub fn rollout<R, C>(spec: &EnvSpec, rng: &mut R, mut controller: C) -> Result<f64>
where
    R: Rng + ?Sized,
    C: FnMut(&EnvState, &[Vec<f64>], Option<&[usize]>, &mut R) -> Vec<usize>,
{
    let (mut state, mut obs) = spec.reset_with(rng);
    let mut prev: Option<Vec<usize>> = None;
    let mut ret = 0.0;
    while !state.done {
        let actions = controller(&state, &obs, prev.as_deref(), rng);
        let tr = spec.step(&state, &actions)?;
        ret += tr.r_tot;
        state = tr.state;
        obs = tr.observations;
        prev = Some(actions);
    }
    Ok(ret)
}
