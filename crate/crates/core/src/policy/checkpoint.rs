use super::icq::IcqCritic;
use super::nets::{ActorNet, CriticNet, Gat};
use crate::paramfile::ParamFile;
use crate::{Error, Result};

/// Everything a trained method leaves behind: actors for execution, plus
/// whichever critics it trained.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySet {
    pub method: String,
    pub actors: Vec<ActorNet>,
    pub critics: Vec<CriticNet>,
    pub icq_critic: Option<IcqCritic>,
}

impl PolicySet {
    pub fn to_param_file(&self, metadata: serde_json::Value) -> ParamFile {
        let mut meta = serde_json::json!({
            "method": self.method,
            "agents": self.actors.len(),
            "critics": self.critics.len(),
            "icq": self.icq_critic.is_some(),
        });
        if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), metadata) {
            m.extend(extra);
        }
        let mut f = ParamFile::new("policy", meta);
        for (i, a) in self.actors.iter().enumerate() {
            f.push_mlp(&format!("agent{i}.actor"), &a.net);
        }
        for (i, c) in self.critics.iter().enumerate() {
            f.push_mlp(&format!("agent{i}.critic.f_local"), &c.f_local);
            f.push_dense(&format!("agent{i}.critic.gat.w1"), &c.gat.w1);
            f.push_dense(&format!("agent{i}.critic.gat.w2"), &c.gat.w2);
            f.push_mlp(&format!("agent{i}.critic.f_agg"), &c.f_agg);
        }
        if let Some(c) = &self.icq_critic {
            for (i, q) in c.q_nets.iter().enumerate() {
                f.push_mlp(&format!("agent{i}.icq_q"), q);
            }
            f.push_mlp("mixer.w", &c.mixer_w);
            f.push_mlp("mixer.b", &c.mixer_b);
        }
        f
    }

    pub fn from_param_file(f: &ParamFile) -> Result<Self> {
        if f.kind != "policy" {
            return Err(Error::InvalidArgument(format!("expected a policy checkpoint, found `{}`", f.kind)));
        }
        let count = |key: &str| f.metadata[key].as_u64().unwrap_or(0) as usize;
        let n = count("agents");
        let mean_only = f.metadata["no_gat"].as_bool().unwrap_or(false);
        let actors = (0..n)
            .map(|i| Ok(ActorNet { net: f.mlp(&format!("agent{i}.actor"))? }))
            .collect::<Result<Vec<_>>>()?;
        let critics = (0..count("critics"))
            .map(|i| {
                let f_local = f.mlp(&format!("agent{i}.critic.f_local"))?;
                // f_local sees τ ++ one_hot(a) and τ is the actor's input.
                let n_actions = f_local.in_dim().saturating_sub(actors[i].net.in_dim());
                Ok(CriticNet {
                    f_local,
                    gat: Gat {
                        w1: f.dense(&format!("agent{i}.critic.gat.w1"))?,
                        w2: f.dense(&format!("agent{i}.critic.gat.w2"))?,
                        mean_only,
                    },
                    f_agg: f.mlp(&format!("agent{i}.critic.f_agg"))?,
                    n_actions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let icq_critic = if f.metadata["icq"].as_bool().unwrap_or(false) {
            Some(IcqCritic {
                q_nets: (0..n).map(|i| f.mlp(&format!("agent{i}.icq_q"))).collect::<Result<_>>()?,
                mixer_w: f.mlp("mixer.w")?,
                mixer_b: f.mlp("mixer.b")?,
            })
        } else {
            None
        };
        Ok(Self {
            method: f.metadata["method"].as_str().unwrap_or("").to_string(),
            actors,
            critics,
            icq_critic,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, metadata: serde_json::Value) -> Result<()> {
        self.to_param_file(metadata).save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_param_file(&ParamFile::load(path)?)
    }
}
