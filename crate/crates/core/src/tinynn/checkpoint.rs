//! Text checkpoints. Values are stored as the hex of their IEEE-754 bits so a
//! save/load cycle is bit-exact.
//!
//! ```text
//! tinynn-checkpoint v1
//! meta <key> <value>
//! tensor <name> <rows> <cols>
//! <rows*cols hex words, space separated>
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use super::{EncoderParams, Network, SoftmaxHead};
use crate::featurize::{EmbeddingDims, EmbeddingTable, POSITION_ROWS};

const MAGIC: &str = "tinynn-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("checkpoint is missing {0}")]
    Missing(String),
    #[error("checkpoint tensor {name} has shape {got:?}, expected {want:?}")]
    Shape { name: String, got: (usize, usize), want: (usize, usize) },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta<T: std::str::FromStr>(&self, key: &str) -> Result<T, CheckpointError> {
        let raw = self.meta.get(key).ok_or_else(|| CheckpointError::Missing(format!("meta {key}")))?;
        raw.parse()
            .map_err(|_| CheckpointError::Format { line: 0, msg: format!("meta {key} has unparsable value {raw:?}") })
    }

    pub fn put(&mut self, name: &str, rows: usize, cols: usize, data: &[f64]) {
        assert_eq!(rows * cols, data.len());
        self.tensors.insert(name.to_string(), Tensor { rows, cols, data: data.to_vec() });
    }

    pub fn take(&self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>, CheckpointError> {
        let t = self.tensors.get(name).ok_or_else(|| CheckpointError::Missing(format!("tensor {name}")))?;
        if (t.rows, t.cols) != (rows, cols) {
            return Err(CheckpointError::Shape { name: name.into(), got: (t.rows, t.cols), want: (rows, cols) });
        }
        Ok(t.data.clone())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            out.push_str(&format!("tensor {name} {} {}\n", t.rows, t.cols));
            let words: Vec<String> = t.data.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(CheckpointError::Format { line: 1, msg: format!("expected header {MAGIC:?}") }),
        }
        let mut ck = Checkpoint::default();
        while let Some((i, line)) = lines.next() {
            let line_no = i + 1;
            let fmt = |msg: String| CheckpointError::Format { line: line_no, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').ok_or_else(|| fmt("meta needs a key and a value".into()))?;
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 3 {
                    return Err(fmt("tensor header needs name, rows, cols".into()));
                }
                let rows: usize = parts[1].parse().map_err(|_| fmt("bad row count".into()))?;
                let cols: usize = parts[2].parse().map_err(|_| fmt("bad column count".into()))?;
                let (_, body) = lines.next().ok_or_else(|| fmt("tensor body missing".into()))?;
                let data: Vec<f64> = body
                    .split_whitespace()
                    .map(|w| u64::from_str_radix(w, 16).map(f64::from_bits))
                    .collect::<Result<_, _>>()
                    .map_err(|e| fmt(format!("bad tensor word: {e}")))?;
                if data.len() != rows * cols {
                    return Err(fmt(format!("tensor {} holds {} values, header says {}", parts[0], data.len(), rows * cols)));
                }
                ck.tensors.insert(parts[0].to_string(), Tensor { rows, cols, data });
            } else {
                return Err(fmt(format!("unexpected line {line:?}")));
            }
        }
        Ok(ck)
    }
}

impl Network {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let dims = self.embeddings.dims;
        ck.set_meta("l_max", self.l_max);
        ck.set_meta("window", self.encoder.window);
        ck.set_meta("kernels", self.encoder.kernels);
        ck.set_meta("d_w", dims.word);
        ck.set_meta("d_p", dims.position);
        ck.set_meta("n_classes", self.head.n_classes);
        ck.set_meta("input_dim", self.head.input_dim);
        ck.put("emb.word", self.embeddings.vocab_len(), dims.word, &self.embeddings.word);
        ck.put("emb.head_pos", POSITION_ROWS, dims.position, &self.embeddings.head_pos);
        ck.put("emb.tail_pos", POSITION_ROWS, dims.position, &self.embeddings.tail_pos);
        ck.put("enc.filters", self.encoder.kernels, self.encoder.filter_len(), &self.encoder.filters);
        ck.put("enc.bias", 1, self.encoder.kernels, &self.encoder.bias);
        ck.put("head.weight", self.head.n_classes, self.head.input_dim, &self.head.weight);
        ck.put("head.bias", 1, self.head.n_classes, &self.head.bias);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let dims = EmbeddingDims { word: ck.meta("d_w")?, position: ck.meta("d_p")? };
        let window: usize = ck.meta("window")?;
        let kernels: usize = ck.meta("kernels")?;
        let n_classes: usize = ck.meta("n_classes")?;
        let input_dim: usize = ck.meta("input_dim")?;
        let vocab_len = ck
            .tensors
            .get("emb.word")
            .ok_or_else(|| CheckpointError::Missing("tensor emb.word".into()))?
            .rows;
        let width = dims.row_width();
        Ok(Network {
            embeddings: EmbeddingTable {
                dims,
                word: ck.take("emb.word", vocab_len, dims.word)?,
                head_pos: ck.take("emb.head_pos", POSITION_ROWS, dims.position)?,
                tail_pos: ck.take("emb.tail_pos", POSITION_ROWS, dims.position)?,
            },
            encoder: EncoderParams {
                window,
                kernels,
                row_width: width,
                filters: ck.take("enc.filters", kernels, window * width)?,
                bias: ck.take("enc.bias", 1, kernels)?,
            },
            head: SoftmaxHead {
                n_classes,
                input_dim,
                weight: ck.take("head.weight", n_classes, input_dim)?,
                bias: ck.take("head.bias", 1, n_classes)?,
            },
            l_max: ck.meta("l_max")?,
        })
    }
}
