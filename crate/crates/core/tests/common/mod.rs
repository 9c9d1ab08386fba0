#![allow(dead_code)]

use std::collections::BTreeSet;

use dsdenoise::agent::{Budget, PolicyAgent, REMOVE};
use dsdenoise::corpus::{parse_dataset, Dataset, InstanceId};
use dsdenoise::featurize::{EmbeddingDims, EmbeddingTable};
use dsdenoise::rltrain::{compute_reward, omega_sets, rebuild_sets, RelationSets, TrainOutcome};
use dsdenoise::seeds::seeded_rng;
use rand::Rng;

/// Word that makes `detector` flag a sentence.
pub const BAD: &str = "bad";

/// Area under the precision/recall curve computed the slow way: selection
/// sort by (score desc, key asc), each prefix counted from scratch, then a
/// trapezoid sum anchored at recall 0 with the first point's precision.
pub fn auc_brute(items: &[(u64, f64, bool)]) -> f64 {
    let mut left: Vec<(u64, f64, bool)> = items.to_vec();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (&left[i], &left[best]);
            if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                best = i;
            }
        }
        order.push(left.remove(best));
    }
    let total = items.iter().filter(|x| x.2).count() as f64;
    let mut pts = Vec::new();
    for k in 1..=order.len() {
        let tp = order[..k].iter().filter(|x| x.2).count() as f64;
        pts.push((tp / total, tp / k as f64));
    }
    let mut auc = 0.0;
    let (mut r0, mut p0) = (0.0, pts[0].1);
    for &(r, p) in &pts {
        auc += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    auc
}

/// An agent for relation 1 that flags exactly the sentences containing
/// `BAD` and leaves every other sentence at `p_remove = 0.5`.
pub fn detector(ds: &Dataset) -> PolicyAgent {
    let dims = EmbeddingDims { word: 3, position: 2 };
    let mut a = PolicyAgent::new(1, EmbeddingTable::random(ds.vocab.len(), dims, 2), 1, 2, 12, 2.0, 3);
    a.net.head.weight.iter_mut().for_each(|w| *w = 0.0);
    a.net.head.bias = vec![0.0, 0.0];
    a.net.embeddings.word.iter_mut().for_each(|w| *w = 0.0);
    a.net.embeddings.head_pos.iter_mut().for_each(|w| *w = 0.0);
    a.net.embeddings.tail_pos.iter_mut().for_each(|w| *w = 0.0);
    a.net.encoder.filters.iter_mut().for_each(|w| *w = 0.0);
    a.net.encoder.bias = vec![0.0, 0.0];
    a.net.encoder.filters[0] = 1.0;
    if let Some(b) = ds.vocab.get(BAD) {
        a.net.embeddings.word[b * 3] = 1.0;
    }
    a.net.head.weight[REMOVE * 4] = 10.0;
    a.frozen_avg = vec![0.0; 2];
    a
}

/// One TSV line: relation 1 or NA, sentence `h w t` where `w` is `BAD` when
/// `bad` is set.
pub fn line(bag: &str, relation: &str, bad: bool, salt: usize) -> String {
    let w = if bad { BAD.to_string() } else { format!("w{}", salt % 7) };
    format!("{bag}\th{bag}\tt{bag}\t{relation}\t0\t2\th{bag} {w} t{bag}")
}

/// Random dataset with relation 1 bags of size 1..=5 and a few NA bags; each
/// relation-1 sentence is independently `BAD` with probability `p_bad`.
/// Returns the dataset and the ids that should be flagged.
pub fn random_dataset(seed: u64, n_bags: usize, p_bad: f64) -> (Dataset, BTreeSet<InstanceId>) {
    let mut rng = seeded_rng(seed);
    let mut lines = Vec::new();
    let mut bad_ids = BTreeSet::new();
    for b in 0..n_bags {
        let na = rng.gen_bool(0.2);
        let size = rng.gen_range(1..=5);
        for _ in 0..size {
            let bad = !na && rng.gen_bool(p_bad);
            if bad {
                bad_ids.insert(lines.len() as InstanceId);
            }
            lines.push(line(&format!("b{b}"), if na { "NA" } else { "r1" }, bad, lines.len()));
        }
    }
    (parse_dataset(&lines.join("\n")).expect("generated lines parse"), bad_ids)
}

/// `k` distinct ids drawn uniformly from `universe`.
pub fn random_subset(universe: &[InstanceId], k: usize, seed: u64) -> BTreeSet<InstanceId> {
    let mut rng = seeded_rng(seed);
    rand::seq::index::sample(&mut rng, universe.len(), k).into_iter().map(|i| universe[i]).collect()
}

/// Checks one relation's training log against the loop's structural rules and
/// returns a description of every violation.
pub fn structural_violations(out: &TrainOutcome, sets: &RelationSets, budget: Budget, alpha: f64, window: usize) -> Vec<String> {
    let mut bad = Vec::new();
    let size = sets.p_train.len() + sets.n_train.len();
    let positives: BTreeSet<InstanceId> = sets.p_train.iter().copied().collect();
    let mut history = vec![out.baseline_f1];
    let mut prev: Vec<InstanceId> = Vec::new();
    for log in &out.logs {
        let e = log.epoch;
        let cur = &log.removed;
        let (om_prev, om_cur) = omega_sets(&prev, cur);
        if om_prev.iter().any(|id| om_cur.contains(id)) {
            bad.push(format!("epoch {e}: omega sets intersect"));
        }
        if om_cur.iter().any(|id| prev.contains(id)) || om_prev.iter().any(|id| cur.contains(id)) {
            bad.push(format!("epoch {e}: omega sets overlap both removed sets"));
        }
        if cur.len() > budget.gamma_t {
            bad.push(format!("epoch {e}: removed {} > budget {}", cur.len(), budget.gamma_t));
        }
        if cur.iter().collect::<BTreeSet<_>>().len() != cur.len() || !cur.iter().all(|id| positives.contains(id)) {
            bad.push(format!("epoch {e}: removed set is not a set of training positives"));
        }
        match rebuild_sets(&sets.p_train, &sets.n_train, cur) {
            Ok((p, n)) if p.len() + n.len() == size => {}
            _ => bad.push(format!("epoch {e}: |P_t| + |N_t| changed")),
        }
        if log.states.keys().copied().collect::<BTreeSet<_>>() != cur.iter().copied().collect() {
            bad.push(format!("epoch {e}: cached states do not match the removed set"));
        }
        history.push(log.f1);
        let cur_w = &history[(e + 1).saturating_sub(window)..=e];
        let prev_w = &history[e.saturating_sub(window)..e];
        let diff = cur_w.iter().sum::<f64>() / cur_w.len() as f64 - prev_w.iter().sum::<f64>() / prev_w.len() as f64;
        let expect = compute_reward(&history, e, alpha, window);
        if (log.reward - expect).abs() > 1e-9 * alpha.max(1.0) || (diff.abs() > 1e-12 && log.reward.signum() != diff.signum()) {
            bad.push(format!("epoch {e}: reward {} disagrees with windowed F1 change {diff}", log.reward));
        }
        prev = cur.clone();
    }
    let best = out.logs.iter().map(|l| l.f1).fold(f64::NEG_INFINITY, f64::max);
    if out.best_log().f1 != best || out.logs[..out.best_epoch - 1].iter().any(|l| l.f1 == best) {
        bad.push("best epoch is not the first epoch with the highest F1".into());
    }
    bad
}
