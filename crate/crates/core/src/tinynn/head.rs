use rand::Rng;

use super::dot;

/// Affine map followed by softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxHead {
    pub n_classes: usize,
    pub input_dim: usize,
    /// `n_classes` x `input_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftmaxHead {
    pub fn zeros(n_classes: usize, input_dim: usize) -> Self {
        SoftmaxHead {
            n_classes,
            input_dim,
            weight: vec![0.0; n_classes * input_dim],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn random(n_classes: usize, input_dim: usize, rng: &mut impl Rng) -> Self {
        let mut h = Self::zeros(n_classes, input_dim);
        let a = (6.0 / (input_dim + n_classes) as f64).sqrt();
        for v in &mut h.weight {
            *v = rng.gen_range(-a..=a);
        }
        h
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weight[class * self.input_dim..(class + 1) * self.input_dim]
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim, "head input dimension");
        (0..self.n_classes).map(|j| dot(self.row(j), x) + self.bias[j]).collect()
    }

    pub fn forward_softmax(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn all_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}
