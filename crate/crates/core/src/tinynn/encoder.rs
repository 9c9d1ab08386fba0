use rand::Rng;

use super::dot;
use crate::featurize::SentenceMatrix;

/// `kernels` filters spanning `window` consecutive rows of width `row_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub window: usize,
    pub kernels: usize,
    pub row_width: usize,
    /// `kernels` x (`window` * `row_width`), row-major.
    pub filters: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Max-pooled pre-activations and the window index that produced each.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub pre: Vec<f64>,
    pub argmax: Vec<usize>,
}

impl Pooled {
    pub fn feature(&self) -> Vec<f64> {
        self.pre.iter().map(|&v| v.max(0.0)).collect()
    }
}

impl EncoderParams {
    pub fn zeros(window: usize, kernels: usize, row_width: usize) -> Self {
        assert!(window >= 1 && kernels >= 1, "window and kernel count must be positive");
        EncoderParams {
            window,
            kernels,
            row_width,
            filters: vec![0.0; kernels * window * row_width],
            bias: vec![0.0; kernels],
        }
    }

    /// Filters uniform in +-1/sqrt(fan_in), zero bias.
    pub fn random(window: usize, kernels: usize, row_width: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(window, kernels, row_width);
        let a = (6.0 / (window * row_width) as f64).sqrt();
        for v in &mut p.filters {
            *v = rng.gen_range(-a..=a);
        }
        p
    }

    pub fn filter_len(&self) -> usize {
        self.window * self.row_width
    }

    pub fn filter(&self, k: usize) -> &[f64] {
        let n = self.filter_len();
        &self.filters[k * n..(k + 1) * n]
    }

    /// Number of window positions; sentences shorter than the window are
    /// treated as zero-padded up to it.
    pub fn positions(&self, m: &SentenceMatrix) -> usize {
        let rows = m.valid_length.max(self.window);
        assert!(rows <= m.l_max, "sentence matrix of {} rows cannot hold a window of {}", m.l_max, self.window);
        rows - self.window + 1
    }

    pub fn window_slice<'m>(&self, m: &'m SentenceMatrix, t: usize) -> &'m [f64] {
        &m.data[t * self.row_width..(t + self.window) * self.row_width]
    }

    /// Max over windows of each filter response; ties keep the lowest window.
    pub fn pool(&self, m: &SentenceMatrix) -> Pooled {
        debug_assert_eq!(m.width, self.row_width);
        let positions = self.positions(m);
        let mut pre = vec![f64::NEG_INFINITY; self.kernels];
        let mut argmax = vec![0usize; self.kernels];
        for t in 0..positions {
            let win = self.window_slice(m, t);
            for k in 0..self.kernels {
                let v = dot(self.filter(k), win) + self.bias[k];
                if v > pre[k] {
                    pre[k] = v;
                    argmax[k] = t;
                }
            }
        }
        Pooled { pre, argmax }
    }

    pub fn all_finite(&self) -> bool {
        self.filters.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Sentence feature: relu of the max-pooled convolution.
pub fn encode(params: &EncoderParams, m: &SentenceMatrix) -> Vec<f64> {
    params.pool(m).feature()
}
