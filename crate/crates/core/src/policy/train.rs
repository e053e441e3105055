use std::io::Write;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalResult};
use super::losses::{accumulate_actor_grad, accumulate_critic_grad, PolicySample};
use super::nets::{ActorNet, CriticNet};
use crate::dper::Dper;
use crate::envkit::EnvSpec;
use crate::numerics::{clip_gradients, Parameterized, RmsProp};
use crate::rng::{stream_rng, Stream};
use crate::trajstore::{JointDataset, StepIndex};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyHyper {
    pub gamma: f64,
    /// Filter temperature.
    pub beta: f64,
    /// Loss scale, divided by the step uncertainty.
    pub eta: f64,
    /// Target critics are copied from the online critics every this many epochs.
    pub target_sync: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// One epoch = one minibatch update per agent.
    pub epochs: usize,
    pub clip: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Replace the critic's graph attention by a mean over agents (ablation).
    pub no_gat: bool,
    /// Filter temperature of the ICQ baseline.
    pub icq_beta: f64,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta: 0.1,
            eta: 1.0,
            target_sync: 100,
            actor_lr: 5e-4,
            critic_lr: 1e-4,
            batch_size: 32,
            epochs: 15_000,
            clip: 10.0,
            actor_hidden: 64,
            critic_hidden: 32,
            eval_every: 500,
            eval_episodes: 32,
            no_gat: false,
            icq_beta: 0.1,
        }
    }
}

impl PolicyHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("policy: {m}")));
        for (name, v) in [
            ("beta", self.beta),
            ("eta", self.eta),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("clip", self.clip),
            ("icq_beta", self.icq_beta),
        ] {
            if !(v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("batch_size, target_sync, eval_every and eval_episodes must be at least 1");
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 {
            return bad("hidden sizes must be at least 1");
        }
        Ok(())
    }
}

/// One metrics CSV row; losses are averaged over the logging window.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub agent: usize,
    pub critic_loss: Option<f64>,
    pub actor_loss: f64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
}

pub const METRICS_HEADER: &str = "epoch,agent,critic_loss,actor_loss,eval_return_mean,eval_return_std";

pub fn write_metrics<W: Write>(rows: &[MetricRow], mut w: W) -> std::io::Result<()> {
    use crate::textfmt::fmt_real;
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch,
            r.agent,
            r.critic_loss.map(fmt_real).unwrap_or_default(),
            fmt_real(r.actor_loss),
            fmt_real(r.eval_return_mean),
            fmt_real(r.eval_return_std)
        )?;
    }
    w.flush()
}

/// Trained per-agent networks plus the metric stream.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub actors: Vec<ActorNet>,
    /// Empty for methods without per-agent critics.
    pub critics: Vec<CriticNet>,
    pub metrics: Vec<MetricRow>,
    pub final_eval: EvalResult,
}

/// Running loss sums for the current logging window.
pub(crate) struct Window {
    critic: Vec<f64>,
    actor: Vec<f64>,
    count: usize,
}

impl Window {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            critic: vec![0.0; n],
            actor: vec![0.0; n],
            count: 0,
        }
    }

    pub(crate) fn add(&mut self, agent: usize, critic: f64, actor: f64) {
        self.critic[agent] += critic;
        self.actor[agent] += actor;
    }

    /// Emits one row per agent if `epoch` closes a window.
    pub(crate) fn maybe_log(
        &mut self,
        epoch: usize,
        hyper: &PolicyHyper,
        has_critic: bool,
        actors: &[ActorNet],
        spec: &EnvSpec,
        seed: u64,
        rows: &mut Vec<MetricRow>,
    ) -> Result<Option<EvalResult>> {
        self.count += 1;
        let done = epoch + 1;
        if !done.is_multiple_of(hyper.eval_every) && done != hyper.epochs {
            return Ok(None);
        }
        let eval = evaluate(actors, spec, hyper.eval_episodes, seed)?;
        let c = self.count as f64;
        for agent in 0..actors.len() {
            rows.push(MetricRow {
                epoch: done,
                agent,
                critic_loss: has_critic.then(|| self.critic[agent] / c),
                actor_loss: self.actor[agent] / c,
                eval_return_mean: eval.mean,
                eval_return_std: eval.std,
            });
        }
        *self = Window::new(actors.len());
        Ok(Some(eval))
    }
}

pub(crate) fn diverged(what: &str, epoch: usize, agent: usize, loss: f64, grad_norm: f64) -> Error {
    Error::Divergence(format!(
        "{what}: non-finite value at epoch {epoch}, agent {agent} (loss {loss}, gradient norm {grad_norm})"
    ))
}

/// Stage III: per-agent conservative actor-critic on the prioritized
/// individual-trajectory buffers.
pub fn train_sit(dper: &Dper, hyper: &PolicyHyper, seed: u64) -> Result<TrainOutput> {
    hyper.validate()?;
    let data: &JointDataset = &dper.dataset;
    let spec = &data.spec;
    let n = spec.n_agents;
    let tau_dim = spec.obs_dim + spec.n_actions;
    let mut init = stream_rng(seed, Stream::PolicyInit);
    let mut actors = Vec::with_capacity(n);
    let mut critics = Vec::with_capacity(n);
    for _ in 0..n {
        actors.push(ActorNet::new(tau_dim, spec.n_actions, hyper.actor_hidden, &mut init));
        let mut c = CriticNet::new(tau_dim, spec.obs_dim, spec.n_actions, hyper.critic_hidden, &mut init);
        c.gat.mean_only = hyper.no_gat;
        critics.push(c);
    }
    let mut targets = critics.clone();
    let mut actor_opt: Vec<RmsProp<f64>> = actors.iter().map(|a| RmsProp::new(a, hyper.actor_lr)).collect();
    let mut critic_opt: Vec<RmsProp<f64>> = critics.iter().map(|c| RmsProp::new(c, hyper.critic_lr)).collect();
    let mut actor_grad: Vec<ActorNet> = actors.iter().map(|a| a.zeros_like()).collect();
    let mut critic_grad: Vec<CriticNet> = critics.iter().map(|c| c.zeros_like()).collect();
    let mut rng = stream_rng(seed, Stream::Sampling);
    let mut rows = Vec::new();
    let mut window = Window::new(n);
    let mut final_eval = None;

    for epoch in 0..hyper.epochs {
        for i in 0..n {
            let bucket = dper.bucket_for_agent(i);
            let mut batch = Vec::with_capacity(hyper.batch_size);
            for _ in 0..hyper.batch_size {
                let step = bucket.sample_step(&mut rng);
                if spec.agent_types[step.agent] != spec.agent_types[i] {
                    return Err(Error::InvalidArgument(format!(
                        "agent {i} was handed a trajectory of agent {} with a different type",
                        step.agent
                    )));
                }
                let u = if dper.unit_uncertainty { 1.0 } else { bucket.effective_u(step) };
                batch.push(PolicySample::from_step(data, step, u));
            }

            critic_grad[i].fill_zero();
            let cl = accumulate_critic_grad(&critics[i], &targets[i], &batch, hyper.gamma, hyper.eta, &mut critic_grad[i])?;
            if !cl.is_finite() || !critic_grad[i].all_finite() {
                return Err(diverged("critic", epoch, i, cl, critic_grad[i].global_norm()));
            }
            clip_gradients(&mut critic_grad[i], hyper.clip);
            critic_opt[i].step(&mut critics[i], &critic_grad[i])?;

            actor_grad[i].fill_zero();
            let al = accumulate_actor_grad(&actors[i], &critics[i], &batch, hyper.beta, hyper.eta, &mut actor_grad[i])?;
            if !al.is_finite() || !actor_grad[i].all_finite() {
                return Err(diverged("actor", epoch, i, al, actor_grad[i].global_norm()));
            }
            clip_gradients(&mut actor_grad[i], hyper.clip);
            actor_opt[i].step(&mut actors[i], &actor_grad[i])?;
            window.add(i, cl, al);
        }
        if (epoch + 1) % hyper.target_sync == 0 {
            for (t, c) in targets.iter_mut().zip(&critics) {
                t.copy_from(c);
            }
        }
        if let Some(e) = window.maybe_log(epoch, hyper, true, &actors, spec, seed, &mut rows)? {
            final_eval = Some(e);
        }
    }
    let final_eval = match final_eval {
        Some(e) => e,
        None => evaluate(&actors, spec, hyper.eval_episodes, seed)?,
    };
    Ok(TrainOutput {
        actors,
        critics,
        metrics: rows,
        final_eval,
    })
}

/// Behavior cloning: each agent maximizes the likelihood of its own recorded
/// actions, sampled uniformly over the joint dataset.
pub fn train_bc(data: &JointDataset, hyper: &PolicyHyper, seed: u64) -> Result<TrainOutput> {
    hyper.validate()?;
    let spec = &data.spec;
    let n = spec.n_agents;
    let tau_dim = spec.obs_dim + spec.n_actions;
    let mut init = stream_rng(seed, Stream::PolicyInit);
    let mut actors: Vec<ActorNet> = (0..n)
        .map(|_| ActorNet::new(tau_dim, spec.n_actions, hyper.actor_hidden, &mut init))
        .collect();
    let mut opt: Vec<RmsProp<f64>> = actors.iter().map(|a| RmsProp::new(a, hyper.actor_lr)).collect();
    let mut grad: Vec<ActorNet> = actors.iter().map(|a| a.zeros_like()).collect();
    let index = StepIndex::all(data);
    let mut rng = stream_rng(seed, Stream::Sampling);
    let mut rows = Vec::new();
    let mut window = Window::new(n);
    let mut final_eval = None;
    let w = vec![1.0 / hyper.batch_size as f64; hyper.batch_size];
    for epoch in 0..hyper.epochs {
        for i in 0..n {
            let picks = index.sample(hyper.batch_size, &mut rng);
            let taus: Vec<Vec<f64>> = picks.iter().map(|&(k, t)| data.tau(k, t, i)).collect();
            let tau_refs: Vec<&[f64]> = taus.iter().map(Vec::as_slice).collect();
            let actions: Vec<usize> = picks.iter().map(|&(k, t)| data.step(k, t).actions[i]).collect();
            grad[i].fill_zero();
            let l = actors[i].weighted_nll(&tau_refs, &actions, &w, &mut grad[i])?;
            if !l.is_finite() || !grad[i].all_finite() {
                return Err(diverged("bc", epoch, i, l, grad[i].global_norm()));
            }
            clip_gradients(&mut grad[i], hyper.clip);
            opt[i].step(&mut actors[i], &grad[i])?;
            window.add(i, 0.0, l);
        }
        if let Some(e) = window.maybe_log(epoch, hyper, false, &actors, spec, seed, &mut rows)? {
            final_eval = Some(e);
        }
    }
    let final_eval = match final_eval {
        Some(e) => e,
        None => evaluate(&actors, spec, hyper.eval_episodes, seed)?,
    };
    Ok(TrainOutput {
        actors,
        critics: Vec::new(),
        metrics: rows,
        final_eval,
    })
}
