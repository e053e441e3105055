use rand::Rng;

use crate::numerics::{
    argmax, dot, leaky_relu, leaky_relu_derivative, log_softmax, one_hot, softmax, softmax_backward, Dense, Mlp,
    MlpTape, Parameterized,
};
use crate::Result;

/// Decentralized policy over the local history `τ = o ++ one_hot(prev a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorNet {
    pub net: Mlp<f64>,
}

impl ActorNet {
    pub fn new<R: Rng + ?Sized>(tau_dim: usize, n_actions: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(&[tau_dim, hidden, hidden, n_actions], rng),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.net.out_dim()
    }

    pub fn logits(&self, tau: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(tau)?)
    }

    pub fn probs(&self, tau: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(tau)?)?)
    }

    pub fn log_probs(&self, tau: &[f64]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.logits(tau)?)?)
    }

    /// Most likely action (lowest index on ties).
    pub fn greedy(&self, tau: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(tau)?))
    }

    /// `-Σ_n w_n log π(a_n | τ_n)` and its gradient, accumulated into `grad`.
    pub fn weighted_nll(&self, taus: &[&[f64]], actions: &[usize], weights: &[f64], grad: &mut Self) -> Result<f64> {
        let mut loss = 0.0;
        for ((tau, &a), &w) in taus.iter().zip(actions).zip(weights) {
            let (logits, tape) = self.net.forward_traced(tau)?;
            let logp = log_softmax(&logits)?;
            loss -= w * logp[a];
            let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let d = crate::numerics::nll_backward(&p, a, w);
            self.net.backward(&tape, &d, &mut grad.net)?;
        }
        Ok(loss)
    }
}

impl Parameterized<f64> for ActorNet {
    fn params(&self) -> Vec<&[f64]> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.params_mut()
    }
}

/// Graph attention over all agents' observations, seen from agent `i`.
///
/// `h_j = W_1 o_j`, `w_ij = softmax_j LeakyReLU(a_1·h_i + a_2·h_j)` where
/// `[a_1; a_2] = W_2`, and `e_global = Σ_j w_ij h_j`. With `mean_only` the
/// attention is dropped and `e_global` is the plain mean of the `h_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gat {
    pub w1: Dense<f64>,
    pub w2: Dense<f64>,
    pub mean_only: bool,
}

/// Intermediate values of one GAT evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct GatOutput {
    pub h: Vec<Vec<f64>>,
    /// Pre-activation scores `a_1·h_i + a_2·h_j`.
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub e_global: Vec<f64>,
}

impl Gat {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: Dense::uniform(obs_dim, hidden, false, rng),
            w2: Dense::uniform(2 * hidden, 1, false, rng),
            mean_only: false,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.out_dim
    }

    pub fn aggregate(&self, obs: &[Vec<f64>], i: usize) -> Result<GatOutput> {
        let n = obs.len();
        if i >= n {
            return Err(crate::Error::InvalidArgument(format!("agent {i} out of range for {n} observations")));
        }
        let mut h = Vec::with_capacity(n);
        for o in obs {
            self.w1.check_input(o, 0)?;
            h.push(self.w1.forward(o));
        }
        let hd = self.hidden();
        if self.mean_only {
            let mut e = vec![0.0; hd];
            for hj in &h {
                crate::numerics::axpy(1.0 / n as f64, hj, &mut e);
            }
            return Ok(GatOutput {
                h,
                scores: vec![0.0; n],
                weights: vec![1.0 / n as f64; n],
                e_global: e,
            });
        }
        let (a1, a2) = self.w2.weight.split_at(hd);
        let own = dot(a1, &h[i]);
        let scores: Vec<f64> = h.iter().map(|hj| own + dot(a2, hj)).collect();
        let act: Vec<f64> = scores.iter().map(|&u| leaky_relu(u)).collect();
        let weights = softmax(&act)?;
        let mut e = vec![0.0; hd];
        for (w, hj) in weights.iter().zip(&h) {
            crate::numerics::axpy(*w, hj, &mut e);
        }
        Ok(GatOutput {
            h,
            scores,
            weights,
            e_global: e,
        })
    }

    fn backward(&self, obs: &[Vec<f64>], i: usize, out: &GatOutput, de: &[f64], grad: &mut Gat) {
        let n = obs.len();
        let hd = self.hidden();
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; hd]; n];
        if self.mean_only {
            for d in &mut dh {
                crate::numerics::axpy(1.0 / n as f64, de, d);
            }
        } else {
            let dw: Vec<f64> = out.h.iter().map(|hj| dot(de, hj)).collect();
            let dact = softmax_backward(&out.weights, &dw);
            let du: Vec<f64> = dact
                .iter()
                .zip(&out.scores)
                .map(|(d, &u)| d * leaky_relu_derivative(u))
                .collect();
            let (a1, a2) = self.w2.weight.split_at(hd);
            let du_sum: f64 = du.iter().sum();
            {
                let (ga1, ga2) = grad.w2.weight.split_at_mut(hd);
                crate::numerics::axpy(du_sum, &out.h[i], ga1);
                for (j, hj) in out.h.iter().enumerate() {
                    crate::numerics::axpy(du[j], hj, ga2);
                }
            }
            crate::numerics::axpy(du_sum, a1, &mut dh[i]);
            for j in 0..n {
                crate::numerics::axpy(out.weights[j], de, &mut dh[j]);
                crate::numerics::axpy(du[j], a2, &mut dh[j]);
            }
        }
        for (o, d) in obs.iter().zip(&dh) {
            self.w1.backward_into(o, d, &mut grad.w1, None);
        }
    }
}

impl Parameterized<f64> for Gat {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.w1.params();
        p.extend(self.w2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.w1.params_mut();
        p.extend(self.w2.params_mut());
        p
    }
}

/// Everything agent `agent`'s critic looks at for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticInput<'a> {
    pub tau: Vec<f64>,
    pub action: usize,
    /// Observations of all agents at this step, in agent order.
    pub obs: &'a [Vec<f64>],
    pub agent: usize,
}

/// Centralized critic `Q_i(τ_i, a_i, o_-i)`: a local embedding of the own
/// history and action, a GAT embedding of all observations, and an
/// aggregation head.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    pub f_local: Mlp<f64>,
    pub gat: Gat,
    pub f_agg: Mlp<f64>,
    pub n_actions: usize,
}

pub(crate) struct CriticTrace {
    local_tape: MlpTape<f64>,
    gat: GatOutput,
    agg_tape: MlpTape<f64>,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(tau_dim: usize, obs_dim: usize, n_actions: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            f_local: Mlp::new(&[tau_dim + n_actions, hidden, hidden], rng),
            gat: Gat::new(obs_dim, hidden, rng),
            f_agg: Mlp::new(&[2 * hidden, hidden, 1], rng),
            n_actions,
        }
    }

    fn local_input(&self, x: &CriticInput) -> Vec<f64> {
        let mut v = x.tau.clone();
        v.extend(one_hot::<f64>(x.action, self.n_actions));
        v
    }

    pub fn q(&self, x: &CriticInput) -> Result<f64> {
        let e_local = self.f_local.forward(&self.local_input(x))?;
        let g = self.gat.aggregate(x.obs, x.agent)?;
        let mut joint = e_local;
        joint.extend(g.e_global);
        Ok(self.f_agg.forward(&joint)?[0])
    }

    pub(crate) fn q_traced(&self, x: &CriticInput) -> Result<(f64, CriticTrace)> {
        let (e_local, local_tape) = self.f_local.forward_traced(&self.local_input(x))?;
        let gat = self.gat.aggregate(x.obs, x.agent)?;
        let mut joint = e_local;
        joint.extend_from_slice(&gat.e_global);
        let (q, agg_tape) = self.f_agg.forward_traced(&joint)?;
        Ok((
            q[0],
            CriticTrace {
                local_tape,
                gat,
                agg_tape,
            },
        ))
    }

    pub(crate) fn backward(&self, x: &CriticInput, trace: &CriticTrace, dq: f64, grad: &mut CriticNet) -> Result<()> {
        let d_joint = self.f_agg.backward(&trace.agg_tape, &[dq], &mut grad.f_agg)?;
        let hd = self.gat.hidden();
        self.f_local.backward(&trace.local_tape, &d_joint[..hd], &mut grad.f_local)?;
        self.gat.backward(x.obs, x.agent, &trace.gat, &d_joint[hd..], &mut grad.gat);
        Ok(())
    }
}

impl Parameterized<f64> for CriticNet {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.f_local.params();
        p.extend(self.gat.params());
        p.extend(self.f_agg.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.f_local.params_mut();
        p.extend(self.gat.params_mut());
        p.extend(self.f_agg.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_obs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    /// Score, normalize, weighted sum, each written out directly.
    fn oracle(gat: &Gat, obs: &[Vec<f64>], i: usize) -> (Vec<f64>, Vec<f64>) {
        let hd = gat.hidden();
        let h: Vec<Vec<f64>> = obs
            .iter()
            .map(|o| {
                (0..hd)
                    .map(|r| (0..o.len()).map(|c| gat.w1.weight[r * o.len() + c] * o[c]).sum())
                    .collect()
            })
            .collect();
        let a = &gat.w2.weight;
        let raw: Vec<f64> = h
            .iter()
            .map(|hj| {
                let s: f64 = (0..hd).map(|k| a[k] * h[i][k] + a[hd + k] * hj[k]).sum();
                if s > 0.0 {
                    s
                } else {
                    0.2 * s
                }
            })
            .collect();
        let ex: Vec<f64> = raw.iter().map(|s| s.exp()).collect();
        let z: f64 = ex.iter().sum();
        let w: Vec<f64> = ex.iter().map(|e| e / z).collect();
        let e = (0..hd).map(|k| (0..obs.len()).map(|j| w[j] * h[j][k]).sum()).collect();
        (w, e)
    }

    #[test]
    fn gat_single_agent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gat = Gat::new(3, 8, &mut rng);
        let obs = random_obs(&mut rng, 1, 3);
        let out = gat.aggregate(&obs, 0).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        assert_eq!(out.e_global, gat.w1.forward(&obs[0]));
    }

    #[test]
    fn gat_identical_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gat = Gat::new(3, 8, &mut rng);
        let o = random_obs(&mut rng, 1, 3).remove(0);
        let obs = vec![o.clone(); 4];
        let out = gat.aggregate(&obs, 2).unwrap();
        let h = gat.w1.forward(&o);
        for w in &out.weights {
            assert!((w - 0.25).abs() < 1e-15);
        }
        for (a, b) in out.e_global.iter().zip(&h) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gat_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let gat = Gat::new(4, 8, &mut rng);
            let n = rng.gen_range(1..6);
            let obs = random_obs(&mut rng, n, 4);
            let i = rng.gen_range(0..n);
            let out = gat.aggregate(&obs, i).unwrap();
            let (w, e) = oracle(&gat, &obs, i);
            for (a, b) in out.weights.iter().zip(&w) {
                assert!((a - b).abs() <= 1e-10);
            }
            for (a, b) in out.e_global.iter().zip(&e) {
                assert!((a - b).abs() <= 1e-10);
            }
            assert!((out.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn gat_rejects_bad_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gat = Gat::new(2, 4, &mut rng);
        assert!(gat.aggregate(&random_obs(&mut rng, 2, 2), 2).is_err());
    }

    #[test]
    fn actor_outputs_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = ActorNet::new(7, 5, 16, &mut rng);
        let p = actor.probs(&[0.1, -0.3, 0.5, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.len(), 5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }
}
