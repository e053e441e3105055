use super::nets::ActorNet;
use crate::envkit::{rollout, EnvSpec};
use crate::numerics::one_hot;
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Return statistics over evaluation episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    /// Sample standard deviation over episodes.
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalResult {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        Self {
            mean: crate::stats::mean(&returns),
            std: crate::stats::sample_std(&returns),
            returns,
        }
    }

    pub fn std_error(&self) -> f64 {
        crate::stats::std_error(&self.returns)
    }
}

/// The only input an actor ever sees: own observation and own previous
/// action (all zeros before the first action).
pub fn local_history(obs: &[f64], prev_action: Option<usize>, n_actions: usize) -> Vec<f64> {
    let mut v = obs.to_vec();
    match prev_action {
        Some(a) => v.extend(one_hot::<f64>(a, n_actions)),
        None => v.extend(std::iter::repeat_n(0.0, n_actions)),
    }
    v
}

/// Greedy decentralized execution. Episode `e` uses the evaluation stream
/// `e` of `seed`, so different policies are compared on identical starts.
pub fn evaluate(actors: &[ActorNet], spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    if actors.len() != spec.n_agents {
        return Err(Error::LengthMismatch(format!(
            "{} actors for {} agents",
            actors.len(),
            spec.n_agents
        )));
    }
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = stream_rng(seed, Stream::Evaluation(e));
        let mut failure = None;
        let ret = rollout(spec, &mut rng, |_state, obs, prev, _| {
            actors
                .iter()
                .enumerate()
                .map(|(i, actor)| {
                    let tau = local_history(&obs[i], prev.map(|p| p[i]), spec.n_actions);
                    actor.greedy(&tau).unwrap_or_else(|err| {
                        failure.get_or_insert(err);
                        0
                    })
                })
                .collect()
        })?;
        if let Some(err) = failure {
            return Err(err);
        }
        returns.push(ret);
    }
    Ok(EvalResult::from_returns(returns))
}
