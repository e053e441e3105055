//! Text checkpoint for parameter arrays.
//!
//! Line 1 is a header `{"format_version":1,"kind":..,"metadata":{..}}`; each
//! following line holds one named array `{"name":..,"shape":[..],"data":[..]}`
//! in row-major order. Models are rebuilt from the array shapes, so loading
//! needs no separate architecture description.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{Activation, Dense, Mlp};
use crate::textfmt::reals;
use crate::trajstore::{read_lines, FORMAT_VERSION};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize)]
struct ArrayOut<'a> {
    name: &'a str,
    shape: &'a [usize],
    #[serde(with = "reals")]
    data: &'a [f64],
}

#[derive(Deserialize)]
struct ArrayIn {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u64,
    kind: String,
    metadata: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamFile {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub arrays: Vec<ParamArray>,
}

impl ParamFile {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            metadata,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(ParamArray {
            name: name.into(),
            shape,
            data: data.to_vec(),
        });
    }

    pub fn push_dense(&mut self, prefix: &str, d: &Dense<f64>) {
        self.push(format!("{prefix}.weight"), vec![d.out_dim, d.in_dim], &d.weight);
        if let Some(b) = &d.bias {
            self.push(format!("{prefix}.bias"), vec![d.out_dim], b);
        }
    }

    pub fn push_mlp(&mut self, prefix: &str, m: &Mlp<f64>) {
        for (l, layer) in m.layers.iter().enumerate() {
            self.push_dense(&format!("{prefix}.{l}"), layer);
        }
    }

    pub fn find(&self, name: &str) -> Option<&ParamArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamArray> {
        self.find(name)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no array `{name}`")))
    }

    pub fn dense(&self, prefix: &str) -> Result<Dense<f64>> {
        let w = self.get(&format!("{prefix}.weight"))?;
        if w.shape.len() != 2 {
            return Err(Error::LengthMismatch(format!("`{}` must be 2-d, shape {:?}", w.name, w.shape)));
        }
        let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
        let bias = match self.find(&format!("{prefix}.bias")) {
            None => None,
            Some(b) if b.shape == [out_dim] => Some(b.data.clone()),
            Some(b) => {
                return Err(Error::LengthMismatch(format!(
                    "`{}` has shape {:?}, expected [{out_dim}]",
                    b.name, b.shape
                )))
            }
        };
        Ok(Dense {
            in_dim,
            out_dim,
            weight: w.data.clone(),
            bias,
        })
    }

    /// Rebuilds an MLP from `{prefix}.0`, `{prefix}.1`, ... with ReLU hidden
    /// activations.
    pub fn mlp(&self, prefix: &str) -> Result<Mlp<f64>> {
        let mut layers: Vec<Dense<f64>> = Vec::new();
        while self.find(&format!("{prefix}.{}.weight", layers.len())).is_some() {
            let d = self.dense(&format!("{prefix}.{}", layers.len()))?;
            if let Some(prev) = layers.last() {
                if prev.out_dim != d.in_dim {
                    return Err(Error::LengthMismatch(format!(
                        "`{prefix}` layer {} expects {} inputs, previous layer gives {}",
                        layers.len(),
                        d.in_dim,
                        prev.out_dim
                    )));
                }
            }
            layers.push(d);
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument(format!("checkpoint has no network `{prefix}`")));
        }
        Ok(Mlp::from_layers(layers, Activation::Relu))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for a in &self.arrays {
            serde_json::to_writer(
                &mut w,
                &ArrayOut {
                    name: &a.name,
                    shape: &a.shape,
                    data: &a.data,
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
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
        let mut file = ParamFile::new(header.kind, header.metadata);
        lines.last_good = "header".into();
        while let Some(a) = lines.next_record::<ArrayIn>()? {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(lines.error(format!(
                    "array `{}` has {} values but shape {:?}",
                    a.name,
                    a.data.len(),
                    a.shape
                )));
            }
            lines.last_good = format!("array `{}`", a.name);
            file.arrays.push(ParamArray {
                name: a.name,
                shape: a.shape,
                data: a.data,
            });
        }
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(File::open(path)?)
    }
}
