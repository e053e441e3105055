//! Stage I: attention-based reward decomposition with an ensemble of
//! independently trained members.
//!
//! Each member scores agents with `(W_q e_s) · (W_k e_i)`, normalizes the
//! scores with a softmax over agents into `λ`, and predicts the team reward as
//! `Σ_i λ_i f(o_i, a_i)` with one reward net shared by all agents.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numerics::{clip_gradients, dot, softmax, softmax_backward, Dense, Mlp, MlpTape, Parameterized, RmsProp};
use crate::paramfile::ParamFile;
use crate::rng::{stream_rng, Stream};
use crate::trajstore::JointDataset;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArdnemHyper {
    pub lr: f64,
    pub batch_size: usize,
    /// Gradient steps per member.
    pub epochs: usize,
    pub clip: f64,
    pub hidden: usize,
    pub members: usize,
    /// Trailing fraction of episodes kept out of training for fit diagnostics.
    pub holdout_fraction: f64,
    /// Replace the learned attention by `λ_i = 1` (ablation).
    pub no_attention: bool,
    /// Per-agent decomposed rewards are recorded every this many epochs.
    pub log_every: usize,
}

impl Default for ArdnemHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 32,
            epochs: 20_000,
            clip: 10.0,
            hidden: 64,
            members: 5,
            holdout_fraction: 0.1,
            no_attention: false,
            log_every: 500,
        }
    }
}

impl ArdnemHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("ardnem: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.members == 0 || self.log_every == 0 {
            return bad("batch_size, hidden, members and log_every must be at least 1");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// One joint step prepared for the decomposer.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSample {
    pub s: Vec<f64>,
    /// `o_i ++ one_hot(a_i)` per agent.
    pub xs: Vec<Vec<f64>>,
    pub r_tot: f64,
}

impl JointSample {
    pub fn at(dataset: &JointDataset, k: usize, t: usize) -> Self {
        let st = dataset.step(k, t);
        Self {
            s: st.s.clone(),
            xs: (0..dataset.spec.n_agents).map(|i| dataset.obs_action(k, t, i)).collect(),
            r_tot: st.r_tot,
        }
    }

    pub fn collect(dataset: &JointDataset, episodes: Range<usize>) -> Vec<Self> {
        episodes
            .flat_map(|k| (0..dataset.episodes[k].len()).map(move |t| (k, t)))
            .map(|(k, t)| Self::at(dataset, k, t))
            .collect()
    }
}

/// Attention weights, per-agent rewards and their weighted sum for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberOutput {
    pub lambda: Vec<f64>,
    pub rewards: Vec<f64>,
    pub total: f64,
}

impl MemberOutput {
    /// `λ_i f_i` per agent.
    pub fn weighted(&self) -> Vec<f64> {
        self.lambda.iter().zip(&self.rewards).map(|(l, r)| l * r).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionMember {
    pub reward_net: Mlp<f64>,
    pub state_encoder: Mlp<f64>,
    pub obsact_encoder: Mlp<f64>,
    pub w_q: Dense<f64>,
    pub w_k: Dense<f64>,
    /// When set, `λ ≡ 1` and the attention parameters are unused.
    pub uniform_attention: bool,
}

struct Trace {
    f_tapes: Vec<MlpTape<f64>>,
    s_tape: MlpTape<f64>,
    e_s: Vec<f64>,
    e_tapes: Vec<MlpTape<f64>>,
    e: Vec<Vec<f64>>,
    q: Vec<f64>,
    k: Vec<Vec<f64>>,
    out: MemberOutput,
}

impl DecompositionMember {
    pub fn new<R: rand::Rng + ?Sized>(state_dim: usize, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            reward_net: Mlp::new(&[input_dim, hidden, hidden, 1], rng),
            state_encoder: Mlp::new(&[state_dim, hidden, hidden], rng),
            obsact_encoder: Mlp::new(&[input_dim, hidden, hidden], rng),
            w_q: Dense::uniform(hidden, hidden, false, rng),
            w_k: Dense::uniform(hidden, hidden, false, rng),
            uniform_attention: false,
        }
    }

    pub fn zeros(state_dim: usize, input_dim: usize, hidden: usize) -> Self {
        Self {
            reward_net: Mlp::zeros(&[input_dim, hidden, hidden, 1]),
            state_encoder: Mlp::zeros(&[state_dim, hidden, hidden]),
            obsact_encoder: Mlp::zeros(&[input_dim, hidden, hidden]),
            w_q: Dense::zeros(hidden, hidden, false),
            w_k: Dense::zeros(hidden, hidden, false),
            uniform_attention: false,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_q.in_dim
    }

    fn check(&self, xs: &[Vec<f64>]) -> Result<()> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("attention needs at least one agent".into()));
        }
        Ok(())
    }

    /// `λ` over agents.
    pub fn attention_weights(&self, s: &[f64], xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check(xs)?;
        if self.uniform_attention {
            return Ok(vec![1.0; xs.len()]);
        }
        let q = self.w_q.forward(&self.state_encoder.forward(s)?);
        let mut scores = Vec::with_capacity(xs.len());
        for x in xs {
            let k = self.w_k.forward(&self.obsact_encoder.forward(x)?);
            scores.push(dot(&q, &k));
        }
        Ok(softmax(&scores)?)
    }

    pub fn agent_rewards(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| Ok(self.reward_net.forward(x)?[0])).collect()
    }

    pub fn forward(&self, s: &[f64], xs: &[Vec<f64>]) -> Result<MemberOutput> {
        let lambda = self.attention_weights(s, xs)?;
        let rewards = self.agent_rewards(xs)?;
        let total = lambda.iter().zip(&rewards).map(|(l, r)| l * r).sum();
        Ok(MemberOutput { lambda, rewards, total })
    }

    pub fn predict_total(&self, s: &[f64], xs: &[Vec<f64>]) -> Result<f64> {
        Ok(self.forward(s, xs)?.total)
    }

    fn forward_traced(&self, s: &[f64], xs: &[Vec<f64>]) -> Result<Trace> {
        self.check(xs)?;
        let mut f_tapes = Vec::with_capacity(xs.len());
        let mut rewards = Vec::with_capacity(xs.len());
        for x in xs {
            let (y, tape) = self.reward_net.forward_traced(x)?;
            rewards.push(y[0]);
            f_tapes.push(tape);
        }
        let mut trace = Trace {
            f_tapes,
            s_tape: MlpTape::default(),
            e_s: Vec::new(),
            e_tapes: Vec::new(),
            e: Vec::new(),
            q: Vec::new(),
            k: Vec::new(),
            out: MemberOutput {
                lambda: vec![1.0; xs.len()],
                rewards,
                total: 0.0,
            },
        };
        if !self.uniform_attention {
            let (e_s, s_tape) = self.state_encoder.forward_traced(s)?;
            trace.q = self.w_q.forward(&e_s);
            trace.e_s = e_s;
            trace.s_tape = s_tape;
            let mut scores = Vec::with_capacity(xs.len());
            for x in xs {
                let (e, tape) = self.obsact_encoder.forward_traced(x)?;
                let k = self.w_k.forward(&e);
                scores.push(dot(&trace.q, &k));
                trace.e.push(e);
                trace.e_tapes.push(tape);
                trace.k.push(k);
            }
            trace.out.lambda = softmax(&scores)?;
        }
        trace.out.total = trace.out.lambda.iter().zip(&trace.out.rewards).map(|(l, r)| l * r).sum();
        Ok(trace)
    }

    /// Accumulates `d total / d θ · d_total` into `grad`.
    fn backward(&self, trace: &Trace, d_total: f64, grad: &mut Self) -> Result<()> {
        let out = &trace.out;
        for (i, tape) in trace.f_tapes.iter().enumerate() {
            self.reward_net.backward(tape, &[d_total * out.lambda[i]], &mut grad.reward_net)?;
        }
        if self.uniform_attention {
            return Ok(());
        }
        let d_lambda: Vec<f64> = out.rewards.iter().map(|r| d_total * r).collect();
        let d_score = softmax_backward(&out.lambda, &d_lambda);
        let h = self.hidden();
        let mut dq = vec![0.0; h];
        for (i, k) in trace.k.iter().enumerate() {
            crate::numerics::axpy(d_score[i], k, &mut dq);
            let dk: Vec<f64> = trace.q.iter().map(|q| d_score[i] * q).collect();
            let de = self.w_k.backward(&trace.e[i], &dk, &mut grad.w_k);
            self.obsact_encoder.backward(&trace.e_tapes[i], &de, &mut grad.obsact_encoder)?;
        }
        let de_s = self.w_q.backward(&trace.e_s, &dq, &mut grad.w_q);
        self.state_encoder.backward(&trace.s_tape, &de_s, &mut grad.state_encoder)?;
        Ok(())
    }

    /// Mean squared error of the predicted total over `batch`.
    pub fn loss(&self, batch: &[&JointSample]) -> Result<f64> {
        let mut acc = 0.0;
        for b in batch {
            let e = self.predict_total(&b.s, &b.xs)? - b.r_tot;
            acc += e * e;
        }
        Ok(acc / batch.len() as f64)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[&JointSample]) -> Result<(f64, Self)> {
        let mut grad = self.zeros_like();
        let loss = self.accumulate_grad(batch, &mut grad)?;
        Ok((loss, grad))
    }

    fn accumulate_grad(&self, batch: &[&JointSample], grad: &mut Self) -> Result<f64> {
        let n = batch.len() as f64;
        let mut acc = 0.0;
        for b in batch {
            let trace = self.forward_traced(&b.s, &b.xs)?;
            let e = trace.out.total - b.r_tot;
            acc += e * e;
            self.backward(&trace, 2.0 * e / n, grad)?;
        }
        Ok(acc / n)
    }
}

impl Parameterized<f64> for DecompositionMember {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.reward_net.params();
        p.extend(self.state_encoder.params());
        p.extend(self.obsact_encoder.params());
        p.extend(self.w_q.params());
        p.extend(self.w_k.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.reward_net.params_mut();
        p.extend(self.state_encoder.params_mut());
        p.extend(self.obsact_encoder.params_mut());
        p.extend(self.w_q.params_mut());
        p.extend(self.w_k.params_mut());
        p
    }
}

/// Per-member loss curves (one value per gradient step) and decomposition
/// snapshots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub loss_curves: Vec<Vec<f64>>,
    /// Epochs (counted from 1) at which snapshots were taken.
    pub log_epochs: Vec<usize>,
    /// `decomposed[m][l][i]`: member `m`'s mean `λ_i f_i` for agent `i` over
    /// the probe steps at snapshot `l`.
    pub decomposed: Vec<Vec<Vec<f64>>>,
}

impl TrainingLog {
    /// Trailing moving average with the given window.
    pub fn smoothed(&self, member: usize, window: usize) -> Vec<f64> {
        let c = &self.loss_curves[member];
        let w = window.max(1);
        let mut out = Vec::with_capacity(c.len());
        let mut acc = 0.0;
        for i in 0..c.len() {
            acc += c[i];
            if i >= w {
                acc -= c[i - w];
            }
            out.push(acc / (i + 1).min(w) as f64);
        }
        out
    }

    pub fn final_losses(&self, window: usize) -> Vec<f64> {
        (0..self.loss_curves.len())
            .map(|m| self.smoothed(m, window).last().copied().unwrap_or(f64::NAN))
            .collect()
    }

    /// Member-averaged decomposed reward per agent at each snapshot.
    pub fn decomposed_curve(&self) -> Vec<(usize, Vec<f64>)> {
        let m = self.decomposed.len() as f64;
        self.log_epochs
            .iter()
            .enumerate()
            .map(|(l, &epoch)| {
                let n = self.decomposed[0][l].len();
                let avg = (0..n)
                    .map(|i| self.decomposed.iter().map(|d| d[l][i]).sum::<f64>() / m)
                    .collect();
                (epoch, avg)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleRewardModel {
    pub members: Vec<DecompositionMember>,
    pub hyper: ArdnemHyper,
    pub seed: u64,
    pub log: TrainingLog,
}

/// Total-fit quality on a set of steps.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub mse: f64,
    pub variance: f64,
    pub steps: usize,
}

impl FitReport {
    pub fn relative_mse(&self) -> f64 {
        self.mse / self.variance
    }
}

impl EnsembleRewardModel {
    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    /// Output of every member at one joint step.
    pub fn member_outputs(&self, s: &[f64], xs: &[Vec<f64>]) -> Result<Vec<MemberOutput>> {
        self.members.iter().map(|m| m.forward(s, xs)).collect()
    }

    /// Ensemble-mean predicted total reward.
    pub fn predict_total(&self, s: &[f64], xs: &[Vec<f64>]) -> Result<f64> {
        let outs = self.member_outputs(s, xs)?;
        Ok(outs.iter().map(|o| o.total).sum::<f64>() / outs.len() as f64)
    }

    /// Holdout MSE of the ensemble-mean total against the recorded `r_tot`.
    pub fn fit_report(&self, dataset: &JointDataset, episodes: Range<usize>) -> Result<FitReport> {
        let samples = JointSample::collect(dataset, episodes);
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no steps to evaluate".into()));
        }
        let mut sq = 0.0;
        for s in &samples {
            let e = self.predict_total(&s.s, &s.xs)? - s.r_tot;
            sq += e * e;
        }
        let targets: Vec<f64> = samples.iter().map(|s| s.r_tot).collect();
        Ok(FitReport {
            mse: sq / samples.len() as f64,
            variance: crate::stats::variance(&targets),
            steps: samples.len(),
        })
    }

    /// Mean ensemble-averaged `λ_i f_i` of each agent over the given episodes.
    pub fn mean_decomposed_rewards(&self, dataset: &JointDataset, episodes: Range<usize>) -> Result<Vec<f64>> {
        let n = dataset.spec.n_agents;
        let mut acc = vec![0.0; n];
        let mut count = 0usize;
        for s in JointSample::collect(dataset, episodes) {
            for o in self.member_outputs(&s.s, &s.xs)? {
                for (a, w) in acc.iter_mut().zip(o.weighted()) {
                    *a += w;
                }
            }
            count += self.members.len();
        }
        Ok(acc.into_iter().map(|a| a / count.max(1) as f64).collect())
    }

    pub fn to_param_file(&self) -> ParamFile {
        let meta = serde_json::json!({
            "hyper": self.hyper,
            "seed": self.seed,
            "members": self.members.len(),
            "final_loss": self.log.final_losses(100).iter().map(|v| crate::textfmt::R17(*v)).collect::<Vec<_>>(),
        });
        let mut f = ParamFile::new("ardnem", meta);
        for (m, member) in self.members.iter().enumerate() {
            f.push_mlp(&format!("member{m}.reward_net"), &member.reward_net);
            f.push_mlp(&format!("member{m}.state_encoder"), &member.state_encoder);
            f.push_mlp(&format!("member{m}.obsact_encoder"), &member.obsact_encoder);
            f.push_dense(&format!("member{m}.w_q"), &member.w_q);
            f.push_dense(&format!("member{m}.w_k"), &member.w_k);
        }
        f
    }

    pub fn from_param_file(f: &ParamFile) -> Result<Self> {
        if f.kind != "ardnem" {
            return Err(Error::InvalidArgument(format!("expected an ardnem checkpoint, found `{}`", f.kind)));
        }
        let hyper: ArdnemHyper = serde_json::from_value(f.metadata["hyper"].clone())?;
        let seed = f.metadata["seed"].as_u64().unwrap_or(0);
        let n = f.metadata["members"].as_u64().unwrap_or(0) as usize;
        let members = (0..n)
            .map(|m| {
                Ok(DecompositionMember {
                    reward_net: f.mlp(&format!("member{m}.reward_net"))?,
                    state_encoder: f.mlp(&format!("member{m}.state_encoder"))?,
                    obsact_encoder: f.mlp(&format!("member{m}.obsact_encoder"))?,
                    w_q: f.dense(&format!("member{m}.w_q"))?,
                    w_k: f.dense(&format!("member{m}.w_k"))?,
                    uniform_attention: hyper.no_attention,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if members.is_empty() {
            return Err(Error::InvalidArgument("ardnem checkpoint has no members".into()));
        }
        Ok(Self {
            members,
            hyper,
            seed,
            log: TrainingLog::default(),
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_param_file().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_param_file(&ParamFile::load(path)?)
    }
}

fn mean_weighted(member: &DecompositionMember, probe: &[JointSample]) -> Result<Vec<f64>> {
    let n = probe[0].xs.len();
    let mut acc = vec![0.0; n];
    for s in probe {
        for (a, w) in acc.iter_mut().zip(member.forward(&s.s, &s.xs)?.weighted()) {
            *a += w;
        }
    }
    Ok(acc.into_iter().map(|a| a / probe.len() as f64).collect())
}

struct MemberRun {
    curve: Vec<f64>,
    decomposed: Vec<Vec<f64>>,
}

fn train_member(
    member: &mut DecompositionMember,
    samples: &[JointSample],
    probe: &[JointSample],
    hyper: &ArdnemHyper,
    seed: u64,
    index: usize,
) -> Result<MemberRun> {
    let mut rng = stream_rng(seed, Stream::MemberBatch(index));
    let mut opt = RmsProp::new(member, hyper.lr);
    let mut grad = member.zeros_like();
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut decomposed = Vec::new();
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for epoch in 0..hyper.epochs {
        batch.clear();
        batch.extend((0..hyper.batch_size).map(|_| &samples[rng.gen_range(0..samples.len())]));
        grad.fill_zero();
        let loss = member.accumulate_grad(&batch, &mut grad)?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::Divergence(format!(
                "ardnem member {index}: non-finite loss {loss} at epoch {epoch}"
            )));
        }
        clip_gradients(&mut grad, hyper.clip);
        opt.step(member, &grad)?;
        curve.push(loss);
        if is_log_epoch(epoch, hyper) {
            decomposed.push(mean_weighted(member, probe)?);
        }
    }
    Ok(MemberRun { curve, decomposed })
}

fn is_log_epoch(epoch: usize, hyper: &ArdnemHyper) -> bool {
    (epoch + 1).is_multiple_of(hyper.log_every) || epoch + 1 == hyper.epochs
}

/// Steps used for decomposition snapshots: up to 256 held-out steps, or
/// training steps when nothing is held out.
const PROBE_STEPS: usize = 256;

/// Trains `hyper.members` decomposers, each on its own init and minibatch
/// stream, one thread per member.
pub fn train_ardnem(dataset: &JointDataset, hyper: &ArdnemHyper, seed: u64) -> Result<EnsembleRewardModel> {
    hyper.validate()?;
    let spec = &dataset.spec;
    let (train, held) = dataset.holdout_split(hyper.holdout_fraction);
    let samples = JointSample::collect(dataset, train);
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training steps".into()));
    }
    let mut probe = JointSample::collect(dataset, held);
    if probe.is_empty() {
        probe = samples.clone();
    }
    probe.truncate(PROBE_STEPS);
    let mut members: Vec<DecompositionMember> = (0..hyper.members)
        .map(|m| {
            let mut rng = stream_rng(seed, Stream::MemberInit(m));
            let mut member = DecompositionMember::new(spec.state_dim, spec.obs_action_dim(), hyper.hidden, &mut rng);
            member.uniform_attention = hyper.no_attention;
            member
        })
        .collect();
    let results: Vec<Result<MemberRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = members
            .iter_mut()
            .enumerate()
            .map(|(m, member)| {
                let (samples, probe) = (&samples, &probe);
                scope.spawn(move || train_member(member, samples, probe, hyper, seed, m))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("member thread panicked")).collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let log_epochs = (0..hyper.epochs).filter(|&e| is_log_epoch(e, hyper)).map(|e| e + 1).collect();
    let (loss_curves, decomposed) = runs.into_iter().map(|r| (r.curve, r.decomposed)).unzip();
    Ok(EnsembleRewardModel {
        members,
        hyper: hyper.clone(),
        seed,
        log: TrainingLog {
            loss_curves,
            log_epochs,
            decomposed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{generate_dataset, DatasetComposition, EnvSpec, PolicyLevel};
    use crate::numerics::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sample(rng: &mut ChaCha8Rng, sd: usize, d: usize, n: usize) -> JointSample {
        JointSample {
            s: (0..sd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            xs: (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            r_tot: rng.gen_range(-2.0..2.0),
        }
    }

    /// Straight from the definition: exp of raw scores, then normalize.
    fn oracle_lambda(m: &DecompositionMember, s: &[f64], xs: &[Vec<f64>]) -> Vec<f64> {
        let e_s = m.state_encoder.forward(s).unwrap();
        let q = m.w_q.forward(&e_s);
        let scores: Vec<f64> = xs
            .iter()
            .map(|x| {
                let k = m.w_k.forward(&m.obsact_encoder.forward(x).unwrap());
                q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let ex: Vec<f64> = scores.iter().map(|v| v.exp()).collect();
        let z: f64 = ex.iter().sum();
        ex.iter().map(|v| v / z).collect()
    }

    #[test]
    fn single_agent_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = DecompositionMember::new(3, 4, 8, &mut rng);
        let x = random_sample(&mut rng, 3, 4, 1);
        assert_eq!(m.attention_weights(&x.s, &x.xs).unwrap(), vec![1.0]);
        let f = m.reward_net.forward(&x.xs[0]).unwrap()[0];
        assert_eq!(m.predict_total(&x.s, &x.xs).unwrap(), f);
    }

    #[test]
    fn identical_agents_share_weight_equally() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DecompositionMember::new(3, 4, 8, &mut rng);
        let x = random_sample(&mut rng, 3, 4, 1);
        let xs = vec![x.xs[0].clone(); 4];
        for l in m.attention_weights(&x.s, &xs).unwrap() {
            assert!((l - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = DecompositionMember::new(5, 6, 16, &mut rng);
            let x = random_sample(&mut rng, 5, 6, 3);
            let got = m.attention_weights(&x.s, &x.xs).unwrap();
            let want = oracle_lambda(&m, &x.s, &x.xs);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-10);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DecompositionMember::new(4, 4, 8, &mut rng);
        let x = random_sample(&mut rng, 4, 4, 3);
        let lambda = m.attention_weights(&x.s, &x.xs).unwrap();
        let f: Vec<f64> = x.xs.iter().map(|xi| m.reward_net.forward(xi).unwrap()[0]).collect();
        let want: f64 = lambda.iter().zip(&f).map(|(l, r)| l * r).sum();
        assert!((m.predict_total(&x.s, &x.xs).unwrap() - want).abs() <= 1e-12);
    }

    #[test]
    fn zero_reward_net_predicts_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = DecompositionMember::new(4, 4, 8, &mut rng);
        m.reward_net.fill_zero();
        let x = random_sample(&mut rng, 4, 4, 3);
        assert_eq!(m.predict_total(&x.s, &x.xs).unwrap(), 0.0);
    }

    #[test]
    fn agent_permutation_permutes_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DecompositionMember::new(3, 4, 8, &mut rng);
        let x = random_sample(&mut rng, 3, 4, 4);
        let perm = [2, 0, 3, 1];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&p| x.xs[p].clone()).collect();
        let a = m.attention_weights(&x.s, &x.xs).unwrap();
        let b = m.attention_weights(&x.s, &permuted).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!((b[i] - a[p]).abs() <= 1e-15);
        }
    }

    #[test]
    fn empty_agent_list_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = DecompositionMember::new(3, 4, 8, &mut rng);
        assert!(m.attention_weights(&[0.0; 3], &[]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let m = DecompositionMember::new(4, 5, 8, &mut rng);
            let batch: Vec<JointSample> = (0..4).map(|_| random_sample(&mut rng, 4, 5, 3)).collect();
            let refs: Vec<&JointSample> = batch.iter().collect();
            let (_, grad) = m.loss_and_grad(&refs).unwrap();
            let report = finite_difference_check(&m, &grad, |p| p.loss(&refs).unwrap(), 1e-5);
            assert!(report.max_rel_error <= 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn gradient_without_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = DecompositionMember::new(4, 5, 8, &mut rng);
        m.uniform_attention = true;
        let batch: Vec<JointSample> = (0..4).map(|_| random_sample(&mut rng, 4, 5, 2)).collect();
        let refs: Vec<&JointSample> = batch.iter().collect();
        let (_, grad) = m.loss_and_grad(&refs).unwrap();
        assert!(grad.w_q.weight.iter().all(|&g| g == 0.0));
        let report = finite_difference_check(&m, &grad, |p| p.loss(&refs).unwrap(), 1e-5);
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    fn matrix_dataset(episodes: usize, seed: u64) -> JointDataset {
        let spec = EnvSpec::matrix_game(vec![vec![0.0, 1.0, 2.0], vec![0.5, 0.0, -1.0]]).unwrap();
        let comp = DatasetComposition::uniform(PolicyLevel::Random, 2, episodes);
        generate_dataset(&spec, &comp, seed).unwrap()
    }

    #[test]
    fn first_loss_with_zero_nets_is_mean_square_target() {
        let data = matrix_dataset(64, 0);
        let samples = JointSample::collect(&data, 0..data.num_episodes());
        let refs: Vec<&JointSample> = samples.iter().collect();
        let m = DecompositionMember::zeros(1, data.spec.obs_action_dim(), 8);
        let want = samples.iter().map(|s| s.r_tot * s.r_tot).sum::<f64>() / samples.len() as f64;
        assert!((m.loss(&refs).unwrap() - want).abs() <= 1e-15);
    }

    #[test]
    fn fits_a_constant_target() {
        let mut data = matrix_dataset(200, 1);
        for ep in &mut data.episodes {
            for st in ep {
                st.r_tot = 1.5;
            }
        }
        let hyper = ArdnemHyper {
            epochs: 1500,
            hidden: 16,
            members: 2,
            lr: 1e-3,
            ..ArdnemHyper::default()
        };
        let model = train_ardnem(&data, &hyper, 3).unwrap();
        let (_, held) = data.holdout_split(hyper.holdout_fraction);
        for s in JointSample::collect(&data, held) {
            let p = model.predict_total(&s.s, &s.xs).unwrap();
            assert!((p - 1.5).abs() <= 1.5 * 0.05 + 0.01, "{p}");
        }
    }

    #[test]
    fn fits_additive_matrix_game() {
        let data = matrix_dataset(1000, 2);
        // single members occasionally stall near 8% relative error; the ensemble mean does not
        let hyper = ArdnemHyper {
            epochs: 4000,
            hidden: 32,
            members: 5,
            lr: 1e-3,
            ..ArdnemHyper::default()
        };
        let model = train_ardnem(&data, &hyper, 4).unwrap();
        let (_, held) = data.holdout_split(hyper.holdout_fraction);
        let fit = model.fit_report(&data, held).unwrap();
        assert!(fit.relative_mse() <= 0.05, "{fit:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = matrix_dataset(40, 3);
        let hyper = ArdnemHyper {
            epochs: 50,
            hidden: 8,
            members: 3,
            ..ArdnemHyper::default()
        };
        let a = train_ardnem(&data, &hyper, 9).unwrap();
        let b = train_ardnem(&data, &hyper, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.members[0], a.members[1]);
    }

    #[test]
    fn decomposition_snapshots_match_final_model() {
        let data = matrix_dataset(40, 5);
        let hyper = ArdnemHyper {
            epochs: 25,
            hidden: 8,
            members: 2,
            log_every: 10,
            ..ArdnemHyper::default()
        };
        let model = train_ardnem(&data, &hyper, 2).unwrap();
        assert_eq!(model.log.log_epochs, vec![10, 20, 25]);
        let curve = model.log.decomposed_curve();
        assert_eq!(curve.len(), 3);
        let (_, held) = data.holdout_split(hyper.holdout_fraction);
        let want = model.mean_decomposed_rewards(&data, held).unwrap();
        for (a, b) in curve[2].1.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = matrix_dataset(20, 4);
        let hyper = ArdnemHyper {
            epochs: 5,
            hidden: 8,
            members: 2,
            no_attention: true,
            ..ArdnemHyper::default()
        };
        let model = train_ardnem(&data, &hyper, 1).unwrap();
        let mut buf = Vec::new();
        model.to_param_file().write(&mut buf).unwrap();
        let back = EnsembleRewardModel::from_param_file(&ParamFile::read(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back.members, model.members);
        assert_eq!(back.hyper, model.hyper);
    }
}
