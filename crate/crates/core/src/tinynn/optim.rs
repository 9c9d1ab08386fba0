use super::{GradientBundle, Network, TrainFault};

/// `v <- momentum * v + g; p <- p - lr * v`
pub fn sgd_update(params: &mut [f64], velocity: &mut [f64], grads: &[f64], lr: f64, momentum: f64) {
    debug_assert!(params.len() == velocity.len() && params.len() == grads.len());
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[derive(Clone, Debug, Default)]
struct Velocity {
    word: Vec<f64>,
    head_pos: Vec<f64>,
    tail_pos: Vec<f64>,
    filters: Vec<f64>,
    enc_bias: Vec<f64>,
    head_weight: Vec<f64>,
    head_bias: Vec<f64>,
}

/// Stochastic gradient descent with optional heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Velocity>,
}

fn scatter_rows(table: &mut [f64], width: usize, rows: &std::collections::BTreeMap<usize, Vec<f64>>, alpha: f64) {
    for (&r, g) in rows {
        for (p, gv) in table[r * width..(r + 1) * width].iter_mut().zip(g) {
            *p += alpha * gv;
        }
    }
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: None }
    }

    /// Applies one update. Rejects non-finite gradients before touching the
    /// parameters.
    pub fn step(&mut self, net: &mut Network, grads: &GradientBundle) -> Result<(), TrainFault> {
        grads.check_finite()?;
        if grads.filters.len() != net.encoder.filters.len() || grads.head_weight.len() != net.head.weight.len() {
            return Err(TrainFault::Shape("dense tensors"));
        }
        let dims = net.embeddings.dims;
        if self.momentum == 0.0 {
            let lr = self.lr;
            let plain = |p: &mut [f64], g: &[f64]| p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            plain(&mut net.encoder.filters, &grads.filters);
            plain(&mut net.encoder.bias, &grads.enc_bias);
            plain(&mut net.head.weight, &grads.head_weight);
            plain(&mut net.head.bias, &grads.head_bias);
            scatter_rows(&mut net.embeddings.word, dims.word, &grads.word, -lr);
            scatter_rows(&mut net.embeddings.head_pos, dims.position, &grads.head_pos, -lr);
            scatter_rows(&mut net.embeddings.tail_pos, dims.position, &grads.tail_pos, -lr);
            return Ok(());
        }

        let v = self.velocity.get_or_insert_with(|| Velocity {
            word: vec![0.0; net.embeddings.word.len()],
            head_pos: vec![0.0; net.embeddings.head_pos.len()],
            tail_pos: vec![0.0; net.embeddings.tail_pos.len()],
            filters: vec![0.0; net.encoder.filters.len()],
            enc_bias: vec![0.0; net.encoder.bias.len()],
            head_weight: vec![0.0; net.head.weight.len()],
            head_bias: vec![0.0; net.head.bias.len()],
        });
        let (lr, m) = (self.lr, self.momentum);
        sgd_update(&mut net.encoder.filters, &mut v.filters, &grads.filters, lr, m);
        sgd_update(&mut net.encoder.bias, &mut v.enc_bias, &grads.enc_bias, lr, m);
        sgd_update(&mut net.head.weight, &mut v.head_weight, &grads.head_weight, lr, m);
        sgd_update(&mut net.head.bias, &mut v.head_bias, &grads.head_bias, lr, m);
        for (table, vel, rows, width) in [
            (&mut net.embeddings.word, &mut v.word, &grads.word, dims.word),
            (&mut net.embeddings.head_pos, &mut v.head_pos, &grads.head_pos, dims.position),
            (&mut net.embeddings.tail_pos, &mut v.tail_pos, &grads.tail_pos, dims.position),
        ] {
            vel.iter_mut().for_each(|x| *x *= m);
            scatter_rows(vel, width, rows, 1.0);
            for (p, x) in table.iter_mut().zip(vel.iter()) {
                *p -= lr * x;
            }
        }
        Ok(())
    }
}
