use super::nets::{ActorNet, CriticInput, CriticNet};
use crate::trajstore::{IndividualStep, JointDataset};
use crate::{Error, Result};
use crate::numerics::Parameterized;

/// Upper clamp on `Q/β` before exponentiation in the filter.
pub const FILTER_CLAMP: f64 = 20.0;

/// One decomposed step, ready for the critic and actor losses.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample<'a> {
    pub now: CriticInput<'a>,
    /// `None` at the last step of the episode.
    pub next: Option<CriticInput<'a>>,
    pub r_hat: f64,
    /// Uncertainty after flooring.
    pub u: f64,
}

impl<'a> PolicySample<'a> {
    pub fn from_step(data: &'a JointDataset, step: &IndividualStep, u: f64) -> Self {
        let (k, t, i) = (step.episode, step.t, step.agent);
        let next = (t + 1 < data.episodes[k].len()).then(|| CriticInput {
            tau: data.tau(k, t + 1, i),
            action: data.episodes[k][t + 1].actions[i],
            obs: &data.episodes[k][t + 1].obs,
            agent: i,
        });
        Self {
            now: CriticInput {
                tau: data.tau(k, t, i),
                action: step.action,
                obs: &data.episodes[k][t].obs,
                agent: i,
            },
            next,
            r_hat: step.r_hat,
            u,
        }
    }
}

fn check_batch(batch: &[PolicySample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

/// `r̂ + γ Q'(next)`, with no bootstrap at the last step.
pub fn td_targets(target: &CriticNet, batch: &[PolicySample], gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|b| {
            let next = match &b.next {
                Some(x) => target.q(x)?,
                None => 0.0,
            };
            Ok(b.r_hat + gamma * next)
        })
        .collect()
}

/// Mean of `(η/û)(y − Q)²` with targets from the frozen `target` critic.
pub fn critic_loss(critic: &CriticNet, target: &CriticNet, batch: &[PolicySample], gamma: f64, eta: f64) -> Result<f64> {
    check_batch(batch)?;
    let y = td_targets(target, batch, gamma)?;
    let mut acc = 0.0;
    for (b, y) in batch.iter().zip(&y) {
        let e = y - critic.q(&b.now)?;
        acc += eta / b.u * e * e;
    }
    Ok(acc / batch.len() as f64)
}

pub fn critic_loss_and_grad(
    critic: &CriticNet,
    target: &CriticNet,
    batch: &[PolicySample],
    gamma: f64,
    eta: f64,
) -> Result<(f64, CriticNet)> {
    let mut grad = critic.zeros_like();
    let loss = accumulate_critic_grad(critic, target, batch, gamma, eta, &mut grad)?;
    Ok((loss, grad))
}

pub(crate) fn accumulate_critic_grad(
    critic: &CriticNet,
    target: &CriticNet,
    batch: &[PolicySample],
    gamma: f64,
    eta: f64,
    grad: &mut CriticNet,
) -> Result<f64> {
    check_batch(batch)?;
    let y = td_targets(target, batch, gamma)?;
    let n = batch.len() as f64;
    let mut acc = 0.0;
    for (b, y) in batch.iter().zip(&y) {
        let (q, trace) = critic.q_traced(&b.now)?;
        let c = eta / b.u;
        acc += c * (y - q) * (y - q);
        critic.backward(&b.now, &trace, -2.0 * c * (y - q) / n, grad)?;
    }
    Ok(acc / n)
}

/// `exp(min(x, clamp)) / Z` with `Z` the batch mean, computed with the
/// maximum subtracted; the result always has batch mean 1.
pub fn normalized_exp_weights(x: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = x.iter().map(|v| v.min(FILTER_CLAMP)).collect();
    let m = clamped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = clamped.iter().map(|v| (v - m).exp()).collect();
    let z = e.iter().sum::<f64>() / e.len() as f64;
    e.iter().map(|v| v / z).collect()
}

/// CRR-style filter `e^{Q/β} / Z` at the dataset actions.
pub fn filter_weights(critic: &CriticNet, batch: &[PolicySample], beta: f64) -> Result<Vec<f64>> {
    let x = batch
        .iter()
        .map(|b| {
            Ok(critic.q(&b.now)? / beta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(normalized_exp_weights(&x))
}

fn actor_weights(critic: &CriticNet, batch: &[PolicySample], beta: f64, eta: f64) -> Result<Vec<f64>> {
    let f = filter_weights(critic, batch, beta)?;
    let n = batch.len() as f64;
    Ok(batch.iter().zip(&f).map(|(b, f)| eta / b.u * f / n).collect())
}

/// Mean of `−(η/û)·(e^{Q/β}/Z)·log π(a|τ)`; `Q` is a constant here.
pub fn actor_loss(actor: &ActorNet, critic: &CriticNet, batch: &[PolicySample], beta: f64, eta: f64) -> Result<f64> {
    check_batch(batch)?;
    let w = actor_weights(critic, batch, beta, eta)?;
    let mut acc = 0.0;
    for (b, w) in batch.iter().zip(&w) {
        acc -= w * actor.log_probs(&b.now.tau)?[b.now.action];
    }
    Ok(acc)
}

pub fn actor_loss_and_grad(
    actor: &ActorNet,
    critic: &CriticNet,
    batch: &[PolicySample],
    beta: f64,
    eta: f64,
) -> Result<(f64, ActorNet)> {
    let mut grad = actor.zeros_like();
    let loss = accumulate_actor_grad(actor, critic, batch, beta, eta, &mut grad)?;
    Ok((loss, grad))
}

pub(crate) fn accumulate_actor_grad(
    actor: &ActorNet,
    critic: &CriticNet,
    batch: &[PolicySample],
    beta: f64,
    eta: f64,
    grad: &mut ActorNet,
) -> Result<f64> {
    check_batch(batch)?;
    let w = actor_weights(critic, batch, beta, eta)?;
    let taus: Vec<&[f64]> = batch.iter().map(|b| b.now.tau.as_slice()).collect();
    let actions: Vec<usize> = batch.iter().map(|b| b.now.action).collect();
    actor.weighted_nll(&taus, &actions, &w, grad)
}

/// The actor objective read literally as `−(η/û)·(e^{Q/β}/Z)·Q` at the
/// dataset action. It does not depend on the actor's parameters, so it cannot
/// train a policy; kept only for comparison with [`actor_loss`].
pub fn literal_actor_objective(critic: &CriticNet, batch: &[PolicySample], beta: f64, eta: f64) -> Result<f64> {
    check_batch(batch)?;
    let f = filter_weights(critic, batch, beta)?;
    let mut acc = 0.0;
    for (b, f) in batch.iter().zip(&f) {
        acc -= eta / b.u * f * critic.q(&b.now)?;
    }
    Ok(acc / batch.len() as f64)
}
