//! Central finite-difference checking of [`Network::backward`].
//!
//! Only forward evaluations are used to form the numerical estimate.
//! Coordinates whose perturbation flips a max-pool choice or a relu gate sit
//! on a kink of the loss and are skipped and counted.

use super::{GradientBundle, LossSpec, Network};
use crate::featurize::SentenceIndex;

/// Denominator floor for the relative error, so that coordinates with
/// gradients near zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<String>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Copy)]
enum Slot {
    Filters,
    EncBias,
    HeadWeight,
    HeadBias,
    Word,
    HeadPos,
    TailPos,
}

impl Slot {
    fn name(self) -> &'static str {
        match self {
            Slot::Filters => "filters",
            Slot::EncBias => "enc_bias",
            Slot::HeadWeight => "head_weight",
            Slot::HeadBias => "head_bias",
            Slot::Word => "word",
            Slot::HeadPos => "head_pos",
            Slot::TailPos => "tail_pos",
        }
    }

    fn tensor(self, net: &mut Network) -> &mut Vec<f64> {
        match self {
            Slot::Filters => &mut net.encoder.filters,
            Slot::EncBias => &mut net.encoder.bias,
            Slot::HeadWeight => &mut net.head.weight,
            Slot::HeadBias => &mut net.head.bias,
            Slot::Word => &mut net.embeddings.word,
            Slot::HeadPos => &mut net.embeddings.head_pos,
            Slot::TailPos => &mut net.embeddings.tail_pos,
        }
    }
}

fn pattern(net: &Network, sent: &SentenceIndex, extra: &[f64], scale: f64) -> (Vec<usize>, Vec<bool>) {
    let t = net.forward(sent, extra, scale);
    let active = t.pooled.pre.iter().map(|&v| v > 0.0).collect();
    (t.pooled.argmax, active)
}

/// Compares the analytic gradient of `spec` at one input against central
/// differences with step `eps`, over every parameter and every embedding row
/// the sentence uses.
pub fn check_gradients(net: &Network, sent: &SentenceIndex, extra: &[f64], scale: f64, spec: LossSpec, eps: f64) -> GradCheckReport {
    let trace = net.forward(sent, extra, scale);
    let mut grads = GradientBundle::zeros_like(net);
    net.backward(sent, &trace, scale, spec, &mut grads);
    let base_pattern = (trace.pooled.argmax.clone(), trace.pooled.pre.iter().map(|&v| v > 0.0).collect::<Vec<_>>());

    let dims = net.embeddings.dims;
    let mut coords: Vec<(Slot, usize, f64)> = Vec::new();
    for (i, &g) in grads.filters.iter().enumerate() {
        coords.push((Slot::Filters, i, g));
    }
    for (i, &g) in grads.enc_bias.iter().enumerate() {
        coords.push((Slot::EncBias, i, g));
    }
    for (i, &g) in grads.head_weight.iter().enumerate() {
        coords.push((Slot::HeadWeight, i, g));
    }
    for (i, &g) in grads.head_bias.iter().enumerate() {
        coords.push((Slot::HeadBias, i, g));
    }
    let rows = |slot: Slot, ids: &[usize], width: usize, map: &std::collections::BTreeMap<usize, Vec<f64>>, out: &mut Vec<(Slot, usize, f64)>| {
        let mut uniq = ids.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        for r in uniq {
            for c in 0..width {
                let g = map.get(&r).map_or(0.0, |v| v[c]);
                out.push((slot, r * width + c, g));
            }
        }
    };
    rows(Slot::Word, &sent.words, dims.word, &grads.word, &mut coords);
    rows(Slot::HeadPos, &sent.head_buckets, dims.position, &grads.head_pos, &mut coords);
    rows(Slot::TailPos, &sent.tail_buckets, dims.position, &grads.tail_pos, &mut coords);

    let mut report = GradCheckReport::default();
    let mut probe = net.clone();
    for (slot, idx, analytic) in coords {
        let orig = slot.tensor(&mut probe)[idx];
        slot.tensor(&mut probe)[idx] = orig + eps;
        let plus = probe.loss(sent, extra, scale, spec);
        let plus_pattern = pattern(&probe, sent, extra, scale);
        slot.tensor(&mut probe)[idx] = orig - eps;
        let minus = probe.loss(sent, extra, scale, spec);
        let minus_pattern = pattern(&probe, sent, extra, scale);
        slot.tensor(&mut probe)[idx] = orig;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(format!("{}[{idx}]: analytic {analytic:e} numeric {numeric:e}", slot.name()));
        }
    }
    report
}
