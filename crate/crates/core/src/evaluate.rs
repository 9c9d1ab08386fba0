//! Binary F1, bag-level precision/recall curves, noise-recovery metrics and a
//! Welch two-sample t-test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::corpus::{Dataset, InstanceId, RelationId, NA};
use crate::featurize::FeatureStore;
use crate::tinynn::Network;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("precision/recall curve needs at least one gold positive")]
    NoGoldPositives,
    #[error("noise truth set is empty")]
    EmptyTruth,
    #[error("t-test needs at least two values per sample, got {0} and {1}")]
    SampleTooSmall(usize, usize),
}

/// Precision, recall and F1; a zero denominator yields 0 for that quantity.
pub fn prf1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let p = ratio(tp, fp);
    let r = ratio(tp, fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Class probabilities for an instance.
pub trait InstanceScorer {
    fn class_probs(&self, id: InstanceId) -> Vec<f64>;
}

/// A trained classifier applied to pre-indexed sentences.
pub struct NetworkScorer<'a> {
    pub net: &'a Network,
    pub store: &'a FeatureStore,
}

impl InstanceScorer for NetworkScorer<'_> {
    fn class_probs(&self, id: InstanceId) -> Vec<f64> {
        self.net.predict(self.store.get(id), &[], 1.0)
    }
}

impl<F: Fn(InstanceId) -> Vec<f64>> InstanceScorer for F {
    fn class_probs(&self, id: InstanceId) -> Vec<f64> {
        self(id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BagScore {
    pub bag_id: String,
    pub relation: RelationId,
    pub score: f64,
    pub gold: bool,
}

/// One entry per bag and non-NA relation: the maximum over the bag's
/// instances of the probability of that relation.
pub fn bag_scores(scorer: &impl InstanceScorer, dataset: &Dataset) -> Vec<BagScore> {
    let n_rel = dataset.relations.len();
    let mut out = Vec::new();
    for bag in dataset.bags.values() {
        let mut best = vec![f64::NEG_INFINITY; n_rel];
        for &id in &bag.instance_ids {
            let probs = scorer.class_probs(id);
            for r in 1..n_rel {
                best[r] = best[r].max(probs[r]);
            }
        }
        for (r, &score) in best.iter().enumerate().skip(1) {
            out.push(BagScore { bag_id: bag.bag_id.clone(), relation: r, score, gold: bag.relation == r });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub rank: usize,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Sweeps items by descending score (ties by ascending key), emitting a point
/// after each. The area is a trapezoid sum over recall starting from
/// `(0, precision of the first point)`.
pub fn pr_curve<K: Ord + Clone>(items: &[(K, f64, bool)]) -> Result<PrCurve, MetricError> {
    let total_pos = items.iter().filter(|(_, _, g)| *g).count();
    if total_pos == 0 {
        return Err(MetricError::NoGoldPositives);
    }
    let mut sorted: Vec<&(K, f64, bool)> = items.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut points = Vec::with_capacity(sorted.len());
    let mut tp = 0usize;
    for (i, item) in sorted.iter().enumerate() {
        if item.2 {
            tp += 1;
        }
        points.push(PrPoint { rank: i + 1, recall: tp as f64 / total_pos as f64, precision: tp as f64 / (i + 1) as f64 });
    }
    let mut auc = 0.0;
    let (mut r_prev, mut p_prev) = (0.0, points[0].precision);
    for pt in &points {
        auc += (pt.recall - r_prev) * (pt.precision + p_prev) / 2.0;
        r_prev = pt.recall;
        p_prev = pt.precision;
    }
    Ok(PrCurve { points, auc })
}

pub fn bag_pr_curve(scores: &[BagScore]) -> Result<PrCurve, MetricError> {
    let items: Vec<((String, RelationId), f64, bool)> =
        scores.iter().map(|s| ((s.bag_id.clone(), s.relation), s.score, s.gold)).collect();
    pr_curve(&items)
}

pub fn pr_csv(curve: &PrCurve) -> String {
    let mut out = String::from("threshold_rank,recall,precision\n");
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.rank, p.recall, p.precision).unwrap();
    }
    out
}

/// Single-file line plot of one or more curves.
pub fn pr_svg(curves: &[(&str, &PrCurve)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 40.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">recall</text>\n\
         <text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">precision</text>\n",
        W - 2.0 * M,
        H - 2.0 * M,
        W / 2.0,
        H - 10.0,
        H / 2.0,
        H / 2.0
    );
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", M + p.recall * (W - 2.0 * M), H - M - p.precision * (H - 2.0 * M)))
            .collect();
        writeln!(out, "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", pts.join(" ")).unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{name} (AUC {:.4})</text>",
            W - M - 150.0,
            M + 16.0 * (i + 1) as f64,
            curve.auc
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Precision and recall of a flagged set against ground-truth noise ids.
pub fn noise_recovery(flagged: &BTreeSet<InstanceId>, truth: &BTreeSet<InstanceId>) -> Result<(f64, f64), MetricError> {
    if truth.is_empty() {
        return Err(MetricError::EmptyTruth);
    }
    let hit = flagged.intersection(truth).count() as f64;
    let precision = if flagged.is_empty() { 0.0 } else { hit / flagged.len() as f64 };
    Ok((precision, hit / truth.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationRecovery {
    pub relation: RelationId,
    pub flagged: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenoiseReport {
    pub removal_precision: f64,
    pub removal_recall: f64,
    pub per_relation: Vec<RelationRecovery>,
    /// Flagged-instance counts by bag size 1, 2, 3, 4, 5+.
    pub bag_size_histogram: [usize; 5],
}

/// Recovery metrics of `flagged` on `dataset` (as it was before any
/// redistribution) against its noise truth.
pub fn denoise_report(dataset: &Dataset, flagged: &BTreeSet<InstanceId>, truth: &BTreeSet<InstanceId>) -> Result<DenoiseReport, MetricError> {
    let (removal_precision, removal_recall) = noise_recovery(flagged, truth)?;
    let mut by_rel: BTreeMap<RelationId, (BTreeSet<InstanceId>, BTreeSet<InstanceId>)> = BTreeMap::new();
    for r in 1..dataset.relations.len() {
        by_rel.insert(r, Default::default());
    }
    for &id in flagged {
        by_rel.entry(dataset.instance(id).relation).or_default().0.insert(id);
    }
    for &id in truth {
        by_rel.entry(dataset.instance(id).relation).or_default().1.insert(id);
    }
    let per_relation = by_rel
        .into_iter()
        .filter(|(r, _)| *r != NA)
        .map(|(relation, (f, t))| {
            let (precision, recall) = noise_recovery(&f, &t).unwrap_or((0.0, 0.0));
            RelationRecovery { relation, flagged: f.len(), precision, recall }
        })
        .collect();
    let mut bag_size_histogram = [0usize; 5];
    for &id in flagged {
        bag_size_histogram[dataset.bag_size_of(id).clamp(1, 5) - 1] += 1;
    }
    Ok(DenoiseReport { removal_precision, removal_recall, per_relation, bag_size_histogram })
}

impl DenoiseReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("relation,flagged,precision,recall\n");
        for r in &self.per_relation {
            writeln!(out, "{},{},{},{}", r.relation, r.flagged, r.precision, r.recall).unwrap();
        }
        writeln!(out, "all,{},{},{}", self.bag_size_histogram.iter().sum::<usize>(), self.removal_precision, self.removal_recall).unwrap();
        out.push_str("\nbag_size,flagged\n");
        for (i, n) in self.bag_size_histogram.iter().enumerate() {
            let label = if i == 4 { "5+".to_string() } else { (i + 1).to_string() };
            writeln!(out, "{label},{n}").unwrap();
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch two-sample t statistic and two-sided p-value,
/// `p = I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, MetricError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricError::SampleTooSmall(a.len(), b.len()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            log::warn!("t-test on two identical constant samples; reporting p = 1");
            return Ok(WelchResult { t: 0.0, df: f64::NAN, p: 1.0 });
        }
        let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok(WelchResult { t, df: f64::NAN, p: 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = if t == 0.0 { 1.0 } else { beta_reg(df / 2.0, 0.5, df / (df + t * t)) };
    Ok(WelchResult { t, df, p })
}
