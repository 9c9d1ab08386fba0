use std::collections::BTreeMap;

use rand::Rng;

use super::{axpy, log_softmax, softmax, EncoderParams, Pooled, SoftmaxHead, TrainFault};
use crate::featurize::{EmbeddingDims, EmbeddingTable, SentenceIndex, SentenceMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkShape {
    pub dims: EmbeddingDims,
    pub vocab_len: usize,
    pub window: usize,
    pub kernels: usize,
    pub l_max: usize,
    pub n_classes: usize,
    /// Length of the constant side vector appended after the encoded feature.
    pub extra_dim: usize,
}

/// Embeddings, convolutional encoder and softmax head.
///
/// The head sees `[scale * feature, extra]`, where `extra` is a constant input
/// that receives no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub embeddings: EmbeddingTable,
    pub encoder: EncoderParams,
    pub head: SoftmaxHead,
    pub l_max: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossSpec {
    /// `-log p(target)`
    CrossEntropy { target: usize },
    /// `coefficient * log p(action)`
    LogProb { action: usize, coefficient: f64 },
}

/// Forward intermediates needed by the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub matrix: SentenceMatrix,
    pub pooled: Pooled,
    pub feature: Vec<f64>,
    pub input: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Trace {
    pub fn loss(&self, spec: LossSpec) -> f64 {
        let logp = log_softmax(&self.logits);
        match spec {
            LossSpec::CrossEntropy { target } => -logp[target],
            LossSpec::LogProb { action, coefficient } => coefficient * logp[action],
        }
    }
}

/// One supervised example for [`Network::train_epoch`].
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub sentence: &'a SentenceIndex,
    pub extra: &'a [f64],
    pub scale: f64,
    pub target: usize,
}

/// Gradients for every dense tensor plus the embedding rows that were used.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub filters: Vec<f64>,
    pub enc_bias: Vec<f64>,
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
    pub word: BTreeMap<usize, Vec<f64>>,
    pub head_pos: BTreeMap<usize, Vec<f64>>,
    pub tail_pos: BTreeMap<usize, Vec<f64>>,
}

fn add_row(map: &mut BTreeMap<usize, Vec<f64>>, row: usize, values: &[f64]) {
    match map.get_mut(&row) {
        Some(acc) => axpy(1.0, values, acc),
        None => {
            map.insert(row, values.to_vec());
        }
    }
}

impl GradientBundle {
    pub fn zeros_like(net: &Network) -> Self {
        GradientBundle {
            filters: vec![0.0; net.encoder.filters.len()],
            enc_bias: vec![0.0; net.encoder.bias.len()],
            head_weight: vec![0.0; net.head.weight.len()],
            head_bias: vec![0.0; net.head.bias.len()],
            word: BTreeMap::new(),
            head_pos: BTreeMap::new(),
            tail_pos: BTreeMap::new(),
        }
    }

    fn dense(&self) -> [(&'static str, &Vec<f64>); 4] {
        [
            ("filters", &self.filters),
            ("enc_bias", &self.enc_bias),
            ("head_weight", &self.head_weight),
            ("head_bias", &self.head_bias),
        ]
    }

    fn sparse(&self) -> [(&'static str, &BTreeMap<usize, Vec<f64>>); 3] {
        [("word", &self.word), ("head_pos", &self.head_pos), ("tail_pos", &self.tail_pos)]
    }

    pub fn scale(&mut self, c: f64) {
        for t in [&mut self.filters, &mut self.enc_bias, &mut self.head_weight, &mut self.head_bias] {
            t.iter_mut().for_each(|v| *v *= c);
        }
        for m in [&mut self.word, &mut self.head_pos, &mut self.tail_pos] {
            m.values_mut().flatten().for_each(|v| *v *= c);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.dense().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0))
            && self.sparse().iter().all(|(_, m)| m.values().flatten().all(|&v| v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        let dense = self.dense().into_iter().flat_map(|(_, t)| t.iter());
        let sparse = self.sparse().into_iter().flat_map(|(_, m)| m.values().flatten());
        dense.chain(sparse).fold(0.0, |a, &v| a.max(v.abs()))
    }

    pub fn check_finite(&self) -> Result<(), TrainFault> {
        for (tensor, t) in self.dense() {
            if let Some((index, &value)) = t.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(TrainFault::NonFiniteGradient { tensor, index, value });
            }
        }
        for (tensor, m) in self.sparse() {
            for (&row, vals) in m {
                if let Some(&value) = vals.iter().find(|v| !v.is_finite()) {
                    return Err(TrainFault::NonFiniteGradient { tensor, index: row, value });
                }
            }
        }
        Ok(())
    }
}

impl Network {
    pub fn new(shape: NetworkShape, embeddings: EmbeddingTable, rng: &mut impl Rng) -> Self {
        assert_eq!(embeddings.dims, shape.dims);
        assert_eq!(embeddings.vocab_len(), shape.vocab_len);
        assert!(shape.l_max >= shape.window, "l_max must cover one encoder window");
        Network {
            encoder: EncoderParams::random(shape.window, shape.kernels, shape.dims.row_width(), rng),
            head: SoftmaxHead::random(shape.n_classes, shape.kernels + shape.extra_dim, rng),
            embeddings,
            l_max: shape.l_max,
        }
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            dims: self.embeddings.dims,
            vocab_len: self.embeddings.vocab_len(),
            window: self.encoder.window,
            kernels: self.encoder.kernels,
            l_max: self.l_max,
            n_classes: self.head.n_classes,
            extra_dim: self.head.input_dim - self.encoder.kernels,
        }
    }

    pub fn forward(&self, sent: &SentenceIndex, extra: &[f64], scale: f64) -> Trace {
        let matrix = SentenceMatrix::from_index(sent, &self.embeddings);
        let pooled = self.encoder.pool(&matrix);
        let feature = pooled.feature();
        let mut input = Vec::with_capacity(self.head.input_dim);
        input.extend(feature.iter().map(|v| scale * v));
        input.extend_from_slice(extra);
        let logits = self.head.logits(&input);
        let probs = softmax(&logits);
        Trace { matrix, pooled, feature, input, logits, probs }
    }

    pub fn predict(&self, sent: &SentenceIndex, extra: &[f64], scale: f64) -> Vec<f64> {
        self.forward(sent, extra, scale).probs
    }

    pub fn loss(&self, sent: &SentenceIndex, extra: &[f64], scale: f64, spec: LossSpec) -> f64 {
        self.forward(sent, extra, scale).loss(spec)
    }

    /// Accumulates the exact gradient of `spec` for one forward trace into
    /// `grads` and returns the loss value.
    pub fn backward(&self, sent: &SentenceIndex, trace: &Trace, scale: f64, spec: LossSpec, grads: &mut GradientBundle) -> f64 {
        let n = self.head.n_classes;
        let mut dz = vec![0.0; n];
        match spec {
            LossSpec::CrossEntropy { target } => {
                for j in 0..n {
                    dz[j] = trace.probs[j] - if j == target { 1.0 } else { 0.0 };
                }
            }
            LossSpec::LogProb { action, coefficient } => {
                if coefficient == 0.0 {
                    return trace.loss(spec);
                }
                for j in 0..n {
                    dz[j] = coefficient * ((if j == action { 1.0 } else { 0.0 }) - trace.probs[j]);
                }
            }
        }

        let in_dim = self.head.input_dim;
        let kernels = self.encoder.kernels;
        let mut dfeat = vec![0.0; kernels];
        for j in 0..n {
            if dz[j] == 0.0 {
                continue;
            }
            axpy(dz[j], &trace.input, &mut grads.head_weight[j * in_dim..(j + 1) * in_dim]);
            grads.head_bias[j] += dz[j];
            axpy(dz[j], &self.head.row(j)[..kernels], &mut dfeat);
        }

        let width = self.encoder.row_width;
        let flen = self.encoder.filter_len();
        let mut dmatrix = vec![0.0; trace.matrix.data.len()];
        let mut touched = vec![false; trace.matrix.l_max];
        for k in 0..kernels {
            // relu gate on the pooled value; derivative at zero taken as zero
            if trace.pooled.pre[k] <= 0.0 {
                continue;
            }
            let g = scale * dfeat[k];
            if g == 0.0 {
                continue;
            }
            let t = trace.pooled.argmax[k];
            let win = self.encoder.window_slice(&trace.matrix, t);
            axpy(g, win, &mut grads.filters[k * flen..(k + 1) * flen]);
            grads.enc_bias[k] += g;
            axpy(g, self.encoder.filter(k), &mut dmatrix[t * width..t * width + flen]);
            for r in t..t + self.encoder.window {
                touched[r] = true;
            }
        }

        let dims = self.embeddings.dims;
        for t in 0..sent.valid_length() {
            if !touched[t] {
                continue;
            }
            let row = &dmatrix[t * width..(t + 1) * width];
            add_row(&mut grads.word, sent.words[t], &row[..dims.word]);
            add_row(&mut grads.head_pos, sent.head_buckets[t], &row[dims.word..dims.word + dims.position]);
            add_row(&mut grads.tail_pos, sent.tail_buckets[t], &row[dims.word + dims.position..]);
        }
        trace.loss(spec)
    }

    /// Mean cross-entropy gradient over `batch`, returned with the mean loss.
    pub fn batch_gradient(&self, batch: &[Example<'_>]) -> (GradientBundle, f64) {
        let mut grads = GradientBundle::zeros_like(self);
        let mut total = 0.0;
        for ex in batch {
            let trace = self.forward(ex.sentence, ex.extra, ex.scale);
            total += self.backward(ex.sentence, &trace, ex.scale, LossSpec::CrossEntropy { target: ex.target }, &mut grads);
        }
        let inv = 1.0 / batch.len().max(1) as f64;
        grads.scale(inv);
        (grads, total * inv)
    }

    /// One pass over `examples` in `order`, mini-batched; the last partial
    /// batch is kept. Returns the mean training loss.
    pub fn train_epoch(&mut self, opt: &mut super::Sgd, examples: &[Example<'_>], order: &[usize], batch_size: usize) -> Result<f64, TrainFault> {
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(batch_size);
        for chunk in order.chunks(batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (grads, loss) = self.batch_gradient(&batch);
            opt.step(self, &grads)?;
            total += loss * chunk.len() as f64;
        }
        Ok(total / order.len().max(1) as f64)
    }

    /// Mean cross-entropy over `examples` without updating anything.
    pub fn mean_loss(&self, examples: &[Example<'_>]) -> f64 {
        let total: f64 = examples
            .iter()
            .map(|ex| self.loss(ex.sentence, ex.extra, ex.scale, LossSpec::CrossEntropy { target: ex.target }))
            .sum();
        total / examples.len().max(1) as f64
    }

    pub fn all_finite(&self) -> bool {
        self.embeddings.all_finite() && self.encoder.all_finite() && self.head.all_finite()
    }

    pub fn param_count(&self) -> usize {
        let e = &self.embeddings;
        e.word.len() + e.head_pos.len() + e.tail_pos.len() + self.encoder.filters.len() + self.encoder.bias.len() + self.head.weight.len() + self.head.bias.len()
    }
}
