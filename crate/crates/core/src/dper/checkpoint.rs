//! DPER checkpoint: a header, one `"individual"` record per decomposed step,
//! then one `"priority"` record per trajectory.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Dper, DperHyper, TypeBucket};
use crate::textfmt::real;
use crate::trajstore::{read_lines, IndividualStep, IndividualTrajectory, JointDataset, FORMAT_VERSION};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u64,
    kind: String,
    hyper: DperHyper,
    unit_uncertainty: bool,
    types: usize,
    trajectories: usize,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    kind: String,
    #[serde(rename = "type")]
    agent_type: usize,
    trajectory_id: usize,
    agent: usize,
    episode: usize,
    t: usize,
    action: usize,
    #[serde(serialize_with = "real::serialize")]
    r_hat: f64,
    #[serde(serialize_with = "real::serialize")]
    u_hat: f64,
    #[serde(serialize_with = "real::serialize")]
    g_hat: f64,
}

#[derive(Serialize, Deserialize)]
struct PriorityRecord {
    kind: String,
    #[serde(rename = "type")]
    agent_type: usize,
    trajectory_id: usize,
    #[serde(serialize_with = "real::serialize")]
    p_hat: f64,
    #[serde(serialize_with = "real::serialize")]
    p: f64,
}

impl Dper {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: "dper".into(),
            hyper: self.hyper.clone(),
            unit_uncertainty: self.unit_uncertainty,
            types: self.buckets.len(),
            trajectories: self.num_trajectories(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for b in &self.buckets {
            for (id, traj) in b.trajectories.iter().enumerate() {
                for s in &traj.steps {
                    let rec = StepRecord {
                        kind: "individual".into(),
                        agent_type: b.agent_type,
                        trajectory_id: id,
                        agent: traj.agent,
                        episode: traj.episode,
                        t: s.t,
                        action: s.action,
                        r_hat: s.r_hat,
                        u_hat: s.u_hat,
                        g_hat: s.g_hat,
                    };
                    serde_json::to_writer(&mut w, &rec)?;
                    w.write_all(b"\n")?;
                }
            }
        }
        for b in &self.buckets {
            for (id, traj) in b.trajectories.iter().enumerate() {
                let rec = PriorityRecord {
                    kind: "priority".into(),
                    agent_type: b.agent_type,
                    trajectory_id: id,
                    p_hat: traj.raw_priority,
                    p: traj.priority.unwrap_or(0.0),
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    /// Reads a checkpoint written against `dataset`.
    pub fn read<R: Read>(r: R, dataset: Arc<JointDataset>) -> Result<Self> {
        let mut lines = read_lines(r);
        let header: serde_json::Value = lines
            .next_record()?
            .ok_or_else(|| lines.error("empty file: missing header"))?;
        let found = header.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != FORMAT_VERSION {
            return Err(Error::Version {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let header: Header =
            serde_json::from_value(header).map_err(|e| lines.error(format!("bad header: {e}")))?;
        if header.kind != "dper" {
            return Err(lines.error(format!("expected a dper checkpoint, found `{}`", header.kind)));
        }
        lines.last_good = "header".into();
        let mut trajs: Vec<Vec<IndividualTrajectory>> = vec![Vec::new(); header.types];
        let mut seen_priorities = 0usize;
        while let Some(v) = lines.next_record::<serde_json::Value>()? {
            let kind = v.get("kind").and_then(|k| k.as_str()).unwrap_or("").to_string();
            match kind.as_str() {
                "individual" => {
                    let rec: StepRecord =
                        serde_json::from_value(v).map_err(|e| lines.error(format!("bad record: {e}")))?;
                    let bucket = trajs
                        .get_mut(rec.agent_type)
                        .ok_or_else(|| lines.error(format!("type {} out of range", rec.agent_type)))?;
                    let in_dataset = dataset
                        .episodes
                        .get(rec.episode)
                        .is_some_and(|ep| rec.t < ep.len() && rec.agent < dataset.spec.n_agents);
                    if !in_dataset {
                        return Err(lines.error(format!(
                            "step (episode {}, t {}, agent {}) is not in the dataset",
                            rec.episode, rec.t, rec.agent
                        )));
                    }
                    if rec.trajectory_id == bucket.len() {
                        bucket.push(IndividualTrajectory {
                            agent: rec.agent,
                            agent_type: rec.agent_type,
                            episode: rec.episode,
                            steps: Vec::new(),
                            raw_priority: 0.0,
                            priority: None,
                        });
                    } else if rec.trajectory_id + 1 != bucket.len() {
                        return Err(lines.error(format!("trajectory {} out of order", rec.trajectory_id)));
                    }
                    let traj = bucket.last_mut().expect("just pushed");
                    traj.steps.push(IndividualStep {
                        episode: rec.episode,
                        t: rec.t,
                        agent: rec.agent,
                        action: rec.action,
                        r_hat: rec.r_hat,
                        u_hat: rec.u_hat,
                        g_hat: rec.g_hat,
                    });
                    lines.last_good = format!("type {}, trajectory {}, t={}", rec.agent_type, rec.trajectory_id, rec.t);
                }
                "priority" => {
                    let rec: PriorityRecord =
                        serde_json::from_value(v).map_err(|e| lines.error(format!("bad record: {e}")))?;
                    let traj = trajs
                        .get_mut(rec.agent_type)
                        .and_then(|b| b.get_mut(rec.trajectory_id))
                        .ok_or_else(|| {
                            lines.error(format!(
                                "priority for unknown trajectory {} of type {}",
                                rec.trajectory_id, rec.agent_type
                            ))
                        })?;
                    traj.raw_priority = rec.p_hat;
                    traj.priority = Some(rec.p);
                    seen_priorities += 1;
                    lines.last_good = format!("priority of type {}, trajectory {}", rec.agent_type, rec.trajectory_id);
                }
                other => return Err(lines.error(format!("unknown record kind `{other}`"))),
            }
        }
        let total: usize = trajs.iter().map(Vec::len).sum();
        if total != header.trajectories || seen_priorities != total {
            return Err(lines.error(format!(
                "file truncated: header announces {} trajectories, found {total} with {seen_priorities} priorities",
                header.trajectories
            )));
        }
        let buckets = trajs
            .into_iter()
            .enumerate()
            .map(|(ty, t)| TypeBucket::from_reshaped(ty, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dper {
            dataset,
            hyper: header.hyper,
            buckets,
            unit_uncertainty: header.unit_uncertainty,
        })
    }

    pub fn load(path: impl AsRef<Path>, dataset: Arc<JointDataset>) -> Result<Self> {
        Self::read(File::open(path)?, dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ardnem::{DecompositionMember, EnsembleRewardModel, TrainingLog};
    use crate::dper::build_dper;
    use crate::envkit::{generate_dataset, DatasetComposition, EnvSpec, PolicyLevel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn built() -> Dper {
        let spec = EnvSpec::spread_grid_with_horizon(2, 4, 4).unwrap();
        let data = Arc::new(
            generate_dataset(&spec, &DatasetComposition::uniform(PolicyLevel::Medium, 2, 5), 2).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = EnsembleRewardModel {
            members: (0..3)
                .map(|_| DecompositionMember::new(spec.state_dim, spec.obs_action_dim(), 8, &mut rng))
                .collect(),
            hyper: Default::default(),
            seed: 0,
            log: TrainingLog::default(),
        };
        build_dper(data, &model, &DperHyper::default()).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dper = built();
        let mut buf = Vec::new();
        dper.write(&mut buf).unwrap();
        let back = Dper::read(buf.as_slice(), dper.dataset.clone()).unwrap();
        assert_eq!(back.buckets[0].trajectories, dper.buckets[0].trajectories);
        assert_eq!(back.buckets[0].tree, dper.buckets[0].tree);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncated_file_is_reported() {
        let dper = built();
        let mut buf = Vec::new();
        dper.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let keep: Vec<&str> = text.lines().take(text.lines().count() - 3).collect();
        let err = Dper::read(keep.join("\n").as_bytes(), dper.dataset.clone()).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }
}
