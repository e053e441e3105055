//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sit_core::ardnem::ArdnemHyper;
use sit_core::dper::DperHyper;
use sit_core::envkit::{DatasetComposition, EnvSpec, SPREAD_GRID_HORIZON};
use sit_core::policy::PolicyHyper;

use crate::error::{HarnessError, Result};

/// α used by the `sit_no_priority` ablation; large enough that reshaped
/// priorities are uniform to within 1e-6.
pub const UNIFORM_ALPHA: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    SpreadGrid {
        n_agents: usize,
        grid_size: usize,
        #[serde(default = "default_horizon")]
        horizon: usize,
    },
    MatrixGame {
        /// `payoffs[i][a]`: payoff of agent `i` for action `a`.
        payoffs: Vec<Vec<f64>>,
    },
}

fn default_horizon() -> usize {
    SPREAD_GRID_HORIZON
}

impl EnvConfig {
    pub fn spec(&self) -> sit_core::Result<EnvSpec> {
        match self {
            EnvConfig::SpreadGrid {
                n_agents,
                grid_size,
                horizon,
            } => EnvSpec::spread_grid_with_horizon(*n_agents, *grid_size, *horizon),
            EnvConfig::MatrixGame { payoffs } => EnvSpec::matrix_game(payoffs.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Mixture such as `50%[r,r]+50%[r,m]`.
    pub composition: String,
    /// Number of joint episodes `K`.
    pub episodes: usize,
    /// Load this dataset file instead of generating one.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn composition(&self) -> sit_core::Result<DatasetComposition> {
        Ok(self.composition.parse::<DatasetComposition>()?.with_episodes(self.episodes))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sit,
    Bc,
    Icq,
    SitNoPriority,
    SitNoAttention,
    SitNoEnsemble,
    SitNoGat,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Sit,
        Method::Bc,
        Method::Icq,
        Method::SitNoPriority,
        Method::SitNoAttention,
        Method::SitNoEnsemble,
        Method::SitNoGat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sit => "sit",
            Method::Bc => "bc",
            Method::Icq => "icq",
            Method::SitNoPriority => "sit_no_priority",
            Method::SitNoAttention => "sit_no_attention",
            Method::SitNoEnsemble => "sit_no_ensemble",
            Method::SitNoGat => "sit_no_gat",
        }
    }

    /// Whether the method runs reward decomposition and prioritized replay.
    pub fn uses_decomposition(self) -> bool {
        !matches!(self, Method::Bc | Method::Icq)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            HarnessError::Config(format!("unknown method `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Hyperparameters of all three stages after the method's ablation is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageHyper {
    pub ardnem: ArdnemHyper,
    pub dper: DperHyper,
    pub policy: PolicyHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    /// Seed of dataset generation and of the decomposition stage; shared by
    /// every policy seed of the run.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub ardnem: ArdnemHyper,
    #[serde(default)]
    pub dper: DperHyper,
    #[serde(default)]
    pub policy: PolicyHyper,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Policy-training seeds.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_method() -> Method {
    Method::Sit
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl ExperimentConfig {
    pub fn new(env: EnvConfig, dataset: DatasetConfig) -> Self {
        Self {
            env,
            dataset,
            data_seed: 0,
            ardnem: ArdnemHyper::default(),
            dper: DperHyper::default(),
            policy: PolicyHyper::default(),
            method: Method::Sit,
            seeds: default_seeds(),
            out_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: sit_core::Error| HarnessError::Config(e.to_string());
        let spec = self.env.spec().map_err(cfg)?;
        self.dataset.composition().map_err(cfg)?.validate(spec.n_agents).map_err(cfg)?;
        let h = self.stage_hyper();
        h.ardnem.validate().map_err(cfg)?;
        h.policy.validate().map_err(cfg)?;
        if !(h.dper.alpha > 0.0) || !(0.0..=1.0).contains(&h.dper.gamma) || !(h.dper.range.1 > h.dper.range.0) {
            return Err(HarnessError::Config(
                "dper: alpha must be positive, gamma in [0, 1] and range increasing".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        Ok(())
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// Stage hyperparameters with exactly one mechanism changed for an
    /// ablation method.
    pub fn stage_hyper(&self) -> StageHyper {
        let mut h = StageHyper {
            ardnem: self.ardnem.clone(),
            dper: self.dper.clone(),
            policy: self.policy.clone(),
        };
        match self.method {
            Method::SitNoPriority => h.dper.alpha = UNIFORM_ALPHA,
            Method::SitNoAttention => h.ardnem.no_attention = true,
            Method::SitNoEnsemble => h.ardnem.members = 1,
            Method::SitNoGat => h.policy.no_gat = true,
            Method::Sit | Method::Bc | Method::Icq => {}
        }
        h
    }

    /// `field: sit value -> this value` for every hyperparameter this
    /// method changes relative to plain SIT.
    pub fn diff_from_sit(&self) -> Vec<String> {
        let base = serde_json::to_value(self.clone().with_method(Method::Sit).stage_hyper()).expect("hyper to json");
        let this = serde_json::to_value(self.stage_hyper()).expect("hyper to json");
        let mut out = Vec::new();
        diff_values("", &base, &this, &mut out);
        out
    }
}

fn diff_values(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    match (a, b) {
        (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
            for (k, va) in x {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match y.get(k) {
                    Some(vb) => diff_values(&key, va, vb, out),
                    None => out.push(format!("{key}: {va} -> (absent)")),
                }
            }
        }
        _ if a != b => out.push(format!("{prefix}: {a} -> {b}")),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[env]
kind = "spread_grid"
n_agents = 2
grid_size = 5

[dataset]
composition = "50%[r,r]+50%[r,m]"
episodes = 100
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.method, Method::Sit);
        assert_eq!(cfg.policy, PolicyHyper::default());
        assert_eq!(
            cfg.env,
            EnvConfig::SpreadGrid {
                n_agents: 2,
                grid_size: 5,
                horizon: 25
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["\nbogus = 1\n", "\n[policy]\nbetta = 0.3\n", "\n[ardnem]\nmember = 3\n"] {
            let text = format!("{MINIMAL}{extra}");
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(HarnessError::Config(_))), "{extra}");
        }
        let text = MINIMAL.replace("grid_size = 5", "grid_size = 5\nwidth = 3");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for (from, to) in [
            ("episodes = 100", "episodes = 0"),
            ("50%[r,r]+50%[r,m]", "50%[r,r]+40%[r,m]"),
            ("50%[r,r]+50%[r,m]", "100%[r,r,r]"),
            ("grid_size = 5", "grid_size = 1"),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(HarnessError::Config(_))), "{to}");
        }
        let text = format!("{MINIMAL}\n[policy]\nbeta = -1.0\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(HarnessError::Config(_))));
        let text = format!("seeds = [1, 1]\n{MINIMAL}");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(HarnessError::Config(_))));
        let text = format!("method = \"sit_no_everything\"\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.method = Method::SitNoGat;
        cfg.policy.beta = 0.5;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn matrix_game_env() {
        let text = r#"
[env]
kind = "matrix_game"
payoffs = [[0.0, 1.0], [2.0, 0.5]]

[dataset]
composition = "100%[r,e]"
episodes = 10
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.env.spec().unwrap().n_agents, 2);
    }

    #[test]
    fn ablations_change_exactly_one_field() {
        let base = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let want = [
            (Method::SitNoPriority, "dper.alpha"),
            (Method::SitNoAttention, "ardnem.no_attention"),
            (Method::SitNoEnsemble, "ardnem.members"),
            (Method::SitNoGat, "policy.no_gat"),
        ];
        for (m, field) in want {
            let d = base.clone().with_method(m).diff_from_sit();
            assert_eq!(d.len(), 1, "{m}: {d:?}");
            assert!(d[0].starts_with(field), "{m}: {d:?}");
        }
        for m in [Method::Sit, Method::Bc, Method::Icq] {
            assert!(base.clone().with_method(m).diff_from_sit().is_empty());
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
