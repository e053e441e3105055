//! Line-delimited dataset file.
//!
//! Line 1 is a header object; every following line is one record tagged with
//! `"kind"`. Joint datasets use `"joint"` records:
//!
//! ```text
//! {"format_version":1,"kind":"joint","env_id":"spread_grid","n_agents":2,"dims":{...},"T":25,...}
//! {"kind":"joint","k":0,"t":0,"s":[...],"obs":[[...],[...]],"actions":[3,1],"r_tot":-1.25e0,"done":false}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{DatasetMetadata, JointDataset, JointStep};
use crate::envkit::{EnvId, EnvSpec};
use crate::textfmt::{real, reals, reals2};
use crate::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Dims {
    obs: usize,
    state: usize,
    actions: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u64,
    kind: String,
    env_id: EnvId,
    n_agents: usize,
    dims: Dims,
    #[serde(rename = "T")]
    horizon: usize,
    spec: EnvSpec,
    metadata: DatasetMetadata,
    episodes: usize,
    records: usize,
}

#[derive(Serialize)]
struct JointRecordOut<'a> {
    kind: &'static str,
    k: usize,
    t: usize,
    #[serde(with = "reals")]
    s: &'a [f64],
    #[serde(serialize_with = "reals2::serialize")]
    obs: &'a [Vec<f64>],
    actions: &'a [usize],
    #[serde(with = "real")]
    r_tot: f64,
    done: bool,
}

#[derive(Deserialize)]
struct JointRecordIn {
    kind: String,
    k: usize,
    t: usize,
    s: Vec<f64>,
    obs: Vec<Vec<f64>>,
    actions: Vec<usize>,
    r_tot: f64,
    done: bool,
}

pub fn write_dataset<W: Write>(dataset: &JointDataset, mut w: W) -> Result<()> {
    let spec = &dataset.spec;
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: "joint".into(),
        env_id: spec.env_id,
        n_agents: spec.n_agents,
        dims: Dims {
            obs: spec.obs_dim,
            state: spec.state_dim,
            actions: spec.n_actions,
        },
        horizon: spec.horizon,
        spec: spec.clone(),
        metadata: dataset.metadata.clone(),
        episodes: dataset.num_episodes(),
        records: dataset.num_steps(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (k, ep) in dataset.episodes.iter().enumerate() {
        for (t, st) in ep.iter().enumerate() {
            let rec = JointRecordOut {
                kind: "joint",
                k,
                t,
                s: &st.s,
                obs: &st.obs,
                actions: &st.actions,
                r_tot: st.r_tot,
                done: st.done,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &JointDataset, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_dataset(dataset, BufWriter::new(f))
}

/// Numbered line iterator that remembers the last successfully parsed record
/// for error messages.
pub struct LineReader<R> {
    lines: std::io::Lines<BufReader<R>>,
    line_no: usize,
    pub last_good: String,
}

pub fn read_lines<R: Read>(r: R) -> LineReader<R> {
    LineReader {
        lines: BufReader::new(r).lines(),
        line_no: 0,
        last_good: "none".into(),
    }
}

impl<R: Read> LineReader<R> {
    pub fn line_no(&self) -> usize {
        self.line_no
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line_no,
            msg: msg.into(),
            last_good: self.last_good.clone(),
        }
    }

    /// Next non-empty line parsed as `T`, or `None` at end of input.
    pub fn next_record<T: DeserializeOwned>(&mut self) -> Result<Option<T>> {
        loop {
            let line = match self.lines.next() {
                None => return Ok(None),
                Some(l) => l?,
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&line)
                .map(Some)
                .map_err(|e| self.error(format!("malformed record: {e}")));
        }
    }
}

pub fn read_dataset<R: Read>(r: R) -> Result<JointDataset> {
    let mut lines = read_lines(r);
    let header_value: serde_json::Value = lines
        .next_record()?
        .ok_or_else(|| lines.error("empty file: missing header"))?;
    let version = header_value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| lines.error("header has no format_version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(header_value).map_err(|e| lines.error(format!("malformed header: {e}")))?;
    if header.kind != "joint" {
        return Err(lines.error(format!("expected a joint dataset, found kind {:?}", header.kind)));
    }
    let spec = header.spec;
    spec.validate()?;
    if spec.env_id != header.env_id
        || spec.n_agents != header.n_agents
        || spec.obs_dim != header.dims.obs
        || spec.state_dim != header.dims.state
        || spec.n_actions != header.dims.actions
        || spec.horizon != header.horizon
    {
        return Err(lines.error("header fields disagree with the embedded spec"));
    }
    lines.last_good = "header".into();

    let mut episodes: Vec<Vec<JointStep>> = Vec::new();
    let mut count = 0usize;
    while let Some(rec) = lines.next_record::<JointRecordIn>()? {
        if rec.kind != "joint" {
            return Err(lines.error(format!("unexpected record kind {:?}", rec.kind)));
        }
        let expected_new = rec.k == episodes.len() && rec.t == 0;
        let expected_next = rec.k + 1 == episodes.len() && episodes.last().is_some_and(|e| e.len() == rec.t);
        if !(expected_new || expected_next) {
            return Err(lines.error(format!("out-of-order record k={}, t={}", rec.k, rec.t)));
        }
        if expected_new {
            episodes.push(Vec::new());
        }
        episodes[rec.k].push(JointStep {
            s: rec.s,
            obs: rec.obs,
            actions: rec.actions,
            r_tot: rec.r_tot,
            done: rec.done,
        });
        count += 1;
        lines.last_good = format!("k={}, t={}", rec.k, rec.t);
    }
    if episodes.is_empty() {
        return Err(lines.error("dataset has no episodes"));
    }
    if episodes.len() != header.episodes || count != header.records {
        return Err(lines.error(format!(
            "truncated: header announces {} episodes / {} records, found {} / {}",
            header.episodes,
            header.records,
            episodes.len(),
            count
        )));
    }
    let dataset = JointDataset {
        spec,
        episodes,
        metadata: header.metadata,
    };
    dataset.validate().map_err(|e| lines.error(e.to_string()))?;
    Ok(dataset)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<JointDataset> {
    read_dataset(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::{generate_dataset, DatasetComposition, EnvSpec};

    fn sample() -> JointDataset {
        let spec = EnvSpec::spread_grid(2, 5).unwrap();
        let comp: DatasetComposition = "50%[r,m]+50%[e,r]".parse().unwrap();
        generate_dataset(&spec, &comp.with_episodes(4), 3).unwrap()
    }

    fn bytes(d: &JointDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(d, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let d = sample();
        let buf = bytes(&d);
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, d);
        assert_eq!(bytes(&back), buf);
    }

    #[test]
    fn header_only_file_is_rejected() {
        let buf = bytes(&sample());
        let header_only: Vec<u8> = buf.split(|&b| b == b'\n').next().unwrap().to_vec();
        let err = read_dataset(&header_only[..]).unwrap_err();
        assert!(err.to_string().contains("no episodes"), "{err}");
    }

    #[test]
    fn truncated_file_names_last_good_record() {
        let buf = bytes(&sample());
        let text = String::from_utf8(buf).unwrap();
        // cut in the middle of the 5th record
        let lines: Vec<&str> = text.lines().collect();
        let mut cut = lines[..5].join("\n");
        cut.push('\n');
        cut.push_str(&lines[5][..lines[5].len() / 2]);
        let err = read_dataset(cut.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, last_good, .. } => {
                assert_eq!(line, 6);
                assert_eq!(last_good, "k=0, t=3");
            }
            other => panic!("unexpected error {other}"),
        }
        // cut exactly at a line boundary
        let mut cut = lines[..5].join("\n");
        cut.push('\n');
        let err = read_dataset(cut.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(err.to_string().contains("k=0, t=3"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = String::from_utf8(bytes(&sample())).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(
            read_dataset(bumped.as_bytes()),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }
}
