//! ICQ-style baseline: per-agent Q networks mixed by a state-conditioned
//! non-negative linear mixer, trained with softmax-filtered 1-step targets.

use rand::Rng;

use super::eval::evaluate;
use super::losses::normalized_exp_weights;
use super::nets::ActorNet;
use super::train::{diverged, PolicyHyper, TrainOutput, Window};
use crate::numerics::{clip_gradients, Mlp, MlpTape, Parameterized, RmsProp};
use crate::rng::{stream_rng, Stream};
use crate::trajstore::{JointDataset, StepIndex};
use crate::Result;

/// `Q_tot(s, τ, a) = Σ_i |w_i(s)| Q_i(τ_i)[a_i] + b(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IcqCritic {
    pub q_nets: Vec<Mlp<f64>>,
    pub mixer_w: Mlp<f64>,
    pub mixer_b: Mlp<f64>,
}

/// Joint step inputs for the ICQ critic.
#[derive(Clone, Debug, PartialEq)]
pub struct IcqInput {
    pub s: Vec<f64>,
    pub taus: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
}

/// Joint transition with its next-step input (`None` at episode end).
#[derive(Clone, Debug, PartialEq)]
pub struct IcqSample {
    pub now: IcqInput,
    pub next: Option<IcqInput>,
    pub r_tot: f64,
}

impl IcqInput {
    pub fn at(data: &JointDataset, k: usize, t: usize) -> Self {
        let st = data.step(k, t);
        Self {
            s: st.s.clone(),
            taus: (0..data.spec.n_agents).map(|i| data.tau(k, t, i)).collect(),
            actions: st.actions.clone(),
        }
    }
}

impl IcqSample {
    pub fn at(data: &JointDataset, k: usize, t: usize) -> Self {
        Self {
            now: IcqInput::at(data, k, t),
            next: (t + 1 < data.episodes[k].len()).then(|| IcqInput::at(data, k, t + 1)),
            r_tot: data.step(k, t).r_tot,
        }
    }
}

struct IcqTrace {
    q_tapes: Vec<MlpTape<f64>>,
    q: Vec<f64>,
    w_raw: Vec<f64>,
    w_tape: MlpTape<f64>,
    b_tape: MlpTape<f64>,
}

impl IcqCritic {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        tau_dim: usize,
        state_dim: usize,
        n_actions: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            q_nets: (0..n_agents).map(|_| Mlp::new(&[tau_dim, hidden, hidden, n_actions], rng)).collect(),
            mixer_w: Mlp::new(&[state_dim, hidden, n_agents], rng),
            mixer_b: Mlp::new(&[state_dim, hidden, 1], rng),
        }
    }

    /// Per-agent `Q_i(τ_i, a_i)` and mixing weights `|w_i(s)|`.
    pub fn parts(&self, x: &IcqInput) -> Result<(Vec<f64>, Vec<f64>)> {
        let w: Vec<f64> = self.mixer_w.forward(&x.s)?.iter().map(|v| v.abs()).collect();
        let q = self
            .q_nets
            .iter()
            .zip(&x.taus)
            .zip(&x.actions)
            .map(|((net, tau), &a)| Ok(net.forward(tau)?[a]))
            .collect::<Result<Vec<_>>>()?;
        Ok((q, w))
    }

    pub fn q_tot(&self, x: &IcqInput) -> Result<f64> {
        let (q, w) = self.parts(x)?;
        let b = self.mixer_b.forward(&x.s)?[0];
        Ok(q.iter().zip(&w).map(|(q, w)| q * w).sum::<f64>() + b)
    }

    fn q_tot_traced(&self, x: &IcqInput) -> Result<(f64, IcqTrace)> {
        let (w_raw, w_tape) = self.mixer_w.forward_traced(&x.s)?;
        let (b, b_tape) = self.mixer_b.forward_traced(&x.s)?;
        let mut q_tapes = Vec::with_capacity(self.q_nets.len());
        let mut q = Vec::with_capacity(self.q_nets.len());
        for ((net, tau), &a) in self.q_nets.iter().zip(&x.taus).zip(&x.actions) {
            let (out, tape) = net.forward_traced(tau)?;
            q.push(out[a]);
            q_tapes.push(tape);
        }
        let total = q.iter().zip(&w_raw).map(|(q, w)| q * w.abs()).sum::<f64>() + b[0];
        Ok((
            total,
            IcqTrace {
                q_tapes,
                q,
                w_raw,
                w_tape,
                b_tape,
            },
        ))
    }

    fn backward(&self, x: &IcqInput, tr: &IcqTrace, d: f64, grad: &mut IcqCritic) -> Result<()> {
        let n_actions = self.q_nets[0].out_dim();
        for (i, net) in self.q_nets.iter().enumerate() {
            let mut dq = vec![0.0; n_actions];
            dq[x.actions[i]] = d * tr.w_raw[i].abs();
            net.backward(&tr.q_tapes[i], &dq, &mut grad.q_nets[i])?;
        }
        let dw: Vec<f64> = tr.q.iter().zip(&tr.w_raw).map(|(q, w)| d * q * sign(*w)).collect();
        self.mixer_w.backward(&tr.w_tape, &dw, &mut grad.mixer_w)?;
        self.mixer_b.backward(&tr.b_tape, &[d], &mut grad.mixer_b)?;
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Parameterized<f64> for IcqCritic {
    fn params(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = self.q_nets.iter().flat_map(|n| n.params()).collect();
        p.extend(self.mixer_w.params());
        p.extend(self.mixer_b.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = self.q_nets.iter_mut().flat_map(|n| n.params_mut()).collect();
        p.extend(self.mixer_w.params_mut());
        p.extend(self.mixer_b.params_mut());
        p
    }
}

/// `r + γ (e^{Q'_tot/β}/Z) Q'_tot` with `Z` the mean weight over the
/// non-terminal samples of the batch.
pub fn icq_targets(target: &IcqCritic, batch: &[IcqSample], gamma: f64, beta: f64) -> Result<Vec<f64>> {
    let mut next_q = Vec::new();
    for b in batch {
        if let Some(x) = &b.next {
            next_q.push(target.q_tot(x)?);
        }
    }
    let x: Vec<f64> = next_q.iter().map(|q| q / beta).collect();
    let weights = if x.is_empty() { Vec::new() } else { normalized_exp_weights(&x) };
    let mut it = next_q.iter().zip(&weights);
    Ok(batch
        .iter()
        .map(|b| match b.next {
            Some(_) => {
                let (q, w) = it.next().expect("one weight per non-terminal sample");
                b.r_tot + gamma * w * q
            }
            None => b.r_tot,
        })
        .collect())
}

pub fn icq_critic_loss(critic: &IcqCritic, target: &IcqCritic, batch: &[IcqSample], gamma: f64, beta: f64) -> Result<f64> {
    let y = icq_targets(target, batch, gamma, beta)?;
    let mut acc = 0.0;
    for (b, y) in batch.iter().zip(&y) {
        let e = y - critic.q_tot(&b.now)?;
        acc += e * e;
    }
    Ok(acc / batch.len() as f64)
}

fn accumulate_icq_critic_grad(
    critic: &IcqCritic,
    target: &IcqCritic,
    batch: &[IcqSample],
    gamma: f64,
    beta: f64,
    grad: &mut IcqCritic,
) -> Result<f64> {
    let y = icq_targets(target, batch, gamma, beta)?;
    let n = batch.len() as f64;
    let mut acc = 0.0;
    for (b, y) in batch.iter().zip(&y) {
        let (q, tr) = critic.q_tot_traced(&b.now)?;
        acc += (y - q) * (y - q);
        critic.backward(&b.now, &tr, -2.0 * (y - q) / n, grad)?;
    }
    Ok(acc / n)
}

/// Per-sample actor weights `e^{w_i Q_i/β} / Z_i / B` for agent `i`.
pub fn icq_actor_weights(critic: &IcqCritic, batch: &[IcqSample], agent: usize, beta: f64) -> Result<Vec<f64>> {
    let x = batch
        .iter()
        .map(|b| {
            let (q, w) = critic.parts(&b.now)?;
            Ok(w[agent] * q[agent] / beta)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    Ok(normalized_exp_weights(&x).into_iter().map(|v| v / n).collect())
}

/// Output of [`train_icq`]: actors plus the mixed critic.
#[derive(Clone, Debug)]
pub struct IcqOutput {
    pub train: TrainOutput,
    pub critic: IcqCritic,
}

pub fn train_icq(data: &JointDataset, hyper: &PolicyHyper, seed: u64) -> Result<IcqOutput> {
    hyper.validate()?;
    let spec = &data.spec;
    let n = spec.n_agents;
    let tau_dim = spec.obs_dim + spec.n_actions;
    let mut init = stream_rng(seed, Stream::PolicyInit);
    let mut actors: Vec<ActorNet> = (0..n)
        .map(|_| ActorNet::new(tau_dim, spec.n_actions, hyper.actor_hidden, &mut init))
        .collect();
    let mut critic = IcqCritic::new(n, tau_dim, spec.state_dim, spec.n_actions, hyper.critic_hidden, &mut init);
    let mut target = critic.clone();
    let mut actor_opt: Vec<RmsProp<f64>> = actors.iter().map(|a| RmsProp::new(a, hyper.actor_lr)).collect();
    let mut critic_opt = RmsProp::new(&critic, hyper.critic_lr);
    let mut actor_grad: Vec<ActorNet> = actors.iter().map(|a| a.zeros_like()).collect();
    let mut critic_grad = critic.zeros_like();
    let index = StepIndex::all(data);
    let mut rng = stream_rng(seed, Stream::Sampling);
    let mut rows = Vec::new();
    let mut window = Window::new(n);
    let mut final_eval = None;
    for epoch in 0..hyper.epochs {
        let batch: Vec<IcqSample> = index
            .sample(hyper.batch_size, &mut rng)
            .into_iter()
            .map(|(k, t)| IcqSample::at(data, k, t))
            .collect();
        critic_grad.fill_zero();
        let cl = accumulate_icq_critic_grad(&critic, &target, &batch, hyper.gamma, hyper.icq_beta, &mut critic_grad)?;
        if !cl.is_finite() || !critic_grad.all_finite() {
            return Err(diverged("icq critic", epoch, 0, cl, critic_grad.global_norm()));
        }
        clip_gradients(&mut critic_grad, hyper.clip);
        critic_opt.step(&mut critic, &critic_grad)?;
        for i in 0..n {
            let w = icq_actor_weights(&critic, &batch, i, hyper.icq_beta)?;
            let taus: Vec<&[f64]> = batch.iter().map(|b| b.now.taus[i].as_slice()).collect();
            let actions: Vec<usize> = batch.iter().map(|b| b.now.actions[i]).collect();
            actor_grad[i].fill_zero();
            let al = actors[i].weighted_nll(&taus, &actions, &w, &mut actor_grad[i])?;
            if !al.is_finite() || !actor_grad[i].all_finite() {
                return Err(diverged("icq actor", epoch, i, al, actor_grad[i].global_norm()));
            }
            clip_gradients(&mut actor_grad[i], hyper.clip);
            actor_opt[i].step(&mut actors[i], &actor_grad[i])?;
            window.add(i, cl, al);
        }
        if (epoch + 1) % hyper.target_sync == 0 {
            target.copy_from(&critic);
        }
        if let Some(e) = window.maybe_log(epoch, hyper, true, &actors, spec, seed, &mut rows)? {
            final_eval = Some(e);
        }
    }
    let final_eval = match final_eval {
        Some(e) => e,
        None => evaluate(&actors, spec, hyper.eval_episodes, seed)?,
    };
    Ok(IcqOutput {
        train: TrainOutput {
            actors,
            critics: Vec::new(),
            metrics: rows,
            final_eval,
        },
        critic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{generate_dataset, DatasetComposition, EnvSpec, PolicyLevel};
    use crate::numerics::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data() -> JointDataset {
        let spec = EnvSpec::spread_grid_with_horizon(3, 5, 4).unwrap();
        generate_dataset(&spec, &DatasetComposition::uniform(PolicyLevel::Medium, 3, 6), 0).unwrap()
    }

    #[test]
    fn mixer_weights_are_non_negative() {
        let d = data();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = IcqCritic::new(3, 11, d.spec.state_dim, 5, 8, &mut rng);
        for k in 0..d.num_episodes() {
            let (_, w) = c.parts(&IcqInput::at(&d, k, 0)).unwrap();
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn targets_without_bootstrap_at_episode_end() {
        let d = data();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = IcqCritic::new(3, 11, d.spec.state_dim, 5, 8, &mut rng);
        let batch = vec![IcqSample::at(&d, 0, 3), IcqSample::at(&d, 1, 3)];
        let y = icq_targets(&c, &batch, 0.99, 0.1).unwrap();
        assert_eq!(y, vec![batch[0].r_tot, batch[1].r_tot]);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let d = data();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
            let c = IcqCritic::new(3, 11, d.spec.state_dim, 5, 8, &mut rng);
            let t = IcqCritic::new(3, 11, d.spec.state_dim, 5, 8, &mut rng);
            let batch: Vec<IcqSample> = (0..6).map(|k| IcqSample::at(&d, k, k % 4)).collect();
            let mut g = c.zeros_like();
            accumulate_icq_critic_grad(&c, &t, &batch, 0.99, 0.5, &mut g).unwrap();
            let r = finite_difference_check(&c, &g, |p| icq_critic_loss(p, &t, &batch, 0.99, 0.5).unwrap(), 1e-5);
            assert!(r.max_rel_error <= 1e-4, "{r:?}");
        }
    }

    #[test]
    fn actor_weights_average_to_one() {
        let d = data();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = IcqCritic::new(3, 11, d.spec.state_dim, 5, 8, &mut rng);
        let batch: Vec<IcqSample> = (0..6).map(|k| IcqSample::at(&d, k, 1)).collect();
        let w = icq_actor_weights(&c, &batch, 1, 0.1).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}
