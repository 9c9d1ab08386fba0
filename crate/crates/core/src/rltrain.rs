//! The per-relation training loop: stochastic removal, set rebuilding,
//! reward-classifier retraining, windowed-F1 reward and the policy update on
//! the parts of consecutive removed sets that differ.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Action, ActMode, Budget, PolicyAgent, RemovedAverage, REMOVE};
use crate::corpus::InstanceId;
use crate::evaluate::prf1;
use crate::featurize::{EmbeddingTable, FeatureStore};
use crate::seeds::{derive, seeded_rng, Rng as SeededRng};
use crate::tinynn::{softmax, Example, GradientBundle, Network, NetworkShape, Sgd, TrainFault};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("instance {0} is removed but not among the training positives")]
    NotSubset(InstanceId),
    #[error("reward classifier needs both classes, got {positives} positives and {negatives} negatives")]
    EmptyClass { positives: usize, negatives: usize },
    #[error("no cached state for instance {0}")]
    MissingState(InstanceId),
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("epoch {epoch}: {source}")]
    Epoch { epoch: usize, source: Box<RlError> },
    #[error(transparent)]
    Train(#[from] TrainFault),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub window: usize,
    pub kernels: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { epochs: 15, lr: 0.01, momentum: 0.9, batch_size: 64, window: 3, kernels: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub alpha: f64,
    pub lr: f64,
    pub f1_window: usize,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig { epochs: 30, alpha: 100.0, lr: 2e-5, f1_window: 5, classifier: ClassifierConfig::default(), seed: 0 }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.alpha > 0.0) {
            return Err(RlError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.epochs < 2 {
            return Err(RlError::Config(format!("at least 2 epochs needed, got {}", self.epochs)));
        }
        if self.f1_window == 0 {
            return Err(RlError::Config("F1 window must be at least 1".into()));
        }
        if self.classifier.epochs == 0 || self.classifier.batch_size == 0 || self.classifier.kernels == 0 {
            return Err(RlError::Config("classifier epochs, batch size and kernels must be positive".into()));
        }
        Ok(())
    }
}

/// Shared, read-only inputs of one relation's training.
#[derive(Clone, Copy)]
pub struct Features<'a> {
    pub store: &'a FeatureStore,
    /// Initial embeddings for every freshly trained reward classifier.
    pub embeddings: &'a EmbeddingTable,
}

/// Positive and negative views of the training and validation data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSets {
    pub p_train: Vec<InstanceId>,
    pub p_valid: Vec<InstanceId>,
    pub n_train: Vec<InstanceId>,
    pub n_valid: Vec<InstanceId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemovalPass {
    /// Kept removals, highest p_remove first.
    pub removed: Vec<InstanceId>,
    /// Decision-time state of every kept removal.
    pub states: BTreeMap<InstanceId, Vec<f64>>,
    /// Every sampled removal with its p_remove, ranked.
    pub candidates: Vec<(InstanceId, f64)>,
    /// Removed-sentence average at the end of the pass.
    pub final_avg: RemovedAverage,
}

fn rank(candidates: &mut [(InstanceId, f64)]) {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// One stochastic pass over `positives` in ascending id order. Every sampled
/// removal updates the running average; the `budget` most confident of them
/// are kept.
pub fn run_removal_pass(agent: &PolicyAgent, store: &FeatureStore, positives: &[InstanceId], budget: usize, rng: &mut impl Rng) -> RemovalPass {
    let mut ids = positives.to_vec();
    ids.sort_unstable();
    let mut avg = agent.empty_average();
    let mut candidates = Vec::new();
    let mut states = BTreeMap::new();
    for id in ids {
        let d = agent.decide(store.get(id), &avg, ActMode::Sample(&mut *rng));
        if d.action == Action::Remove {
            avg.push(&d.feature);
            candidates.push((id, d.p_remove));
            states.insert(id, d.state);
        }
    }
    rank(&mut candidates);
    let removed: Vec<InstanceId> = candidates.iter().take(budget).map(|&(id, _)| id).collect();
    let kept: BTreeSet<InstanceId> = removed.iter().copied().collect();
    states.retain(|id, _| kept.contains(id));
    RemovalPass { removed, states, candidates, final_avg: avg }
}

/// `(P - removed, N + removed)`.
pub fn rebuild_sets(positives: &[InstanceId], negatives: &[InstanceId], removed: &[InstanceId]) -> Result<(Vec<InstanceId>, Vec<InstanceId>), RlError> {
    let gone: BTreeSet<InstanceId> = removed.iter().copied().collect();
    let pos_set: BTreeSet<InstanceId> = positives.iter().copied().collect();
    if let Some(&bad) = gone.iter().find(|id| !pos_set.contains(id)) {
        return Err(RlError::NotSubset(bad));
    }
    let kept = positives.iter().copied().filter(|id| !gone.contains(id)).collect();
    let mut moved = negatives.to_vec();
    moved.extend_from_slice(removed);
    Ok((kept, moved))
}

/// Deterministic counterpart of [`run_removal_pass`] on validation positives:
/// greedy decisions, then the `budget` most confident removals move to the
/// negatives. Returns the new sets and the moved ids.
pub fn filter_validation(
    agent: &PolicyAgent,
    store: &FeatureStore,
    positives: &[InstanceId],
    negatives: &[InstanceId],
    budget: usize,
) -> (Vec<InstanceId>, Vec<InstanceId>, Vec<InstanceId>) {
    if budget == 0 {
        log::warn!("validation removal budget is zero; validation set left unfiltered");
        return (positives.to_vec(), negatives.to_vec(), Vec::new());
    }
    let mut ids = positives.to_vec();
    ids.sort_unstable();
    let mut avg = agent.empty_average();
    let mut candidates = Vec::new();
    for id in ids {
        let d = agent.decide::<SeededRng>(store.get(id), &avg, ActMode::Greedy);
        if d.action == Action::Remove {
            avg.push(&d.feature);
            candidates.push((id, d.p_remove));
        }
    }
    rank(&mut candidates);
    let removed: Vec<InstanceId> = candidates.iter().take(budget).map(|&(id, _)| id).collect();
    let (p, n) = rebuild_sets(positives, negatives, &removed).expect("removals are drawn from the positives");
    (p, n, removed)
}

/// Binary relation classifier (class 1 = positive) trained from a seed-fixed
/// initialization.
pub fn train_reward_classifier(features: Features<'_>, positives: &[InstanceId], negatives: &[InstanceId], cfg: &ClassifierConfig) -> Result<Network, RlError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(RlError::EmptyClass { positives: positives.len(), negatives: negatives.len() });
    }
    let emb = features.embeddings.clone();
    let l_max = features.store.get(positives[0]).l_max;
    let shape = NetworkShape {
        dims: emb.dims,
        vocab_len: emb.vocab_len(),
        window: cfg.window,
        kernels: cfg.kernels,
        l_max,
        n_classes: 2,
        extra_dim: 0,
    };
    let mut net = Network::new(shape, emb, &mut seeded_rng(derive(cfg.seed, "classifier/init")));
    let examples: Vec<Example<'_>> = positives
        .iter()
        .map(|&id| (id, 1))
        .chain(negatives.iter().map(|&id| (id, 0)))
        .map(|(id, target)| Example { sentence: features.store.get(id), extra: &[], scale: 1.0, target })
        .collect();
    let mut rng = seeded_rng(derive(cfg.seed, "classifier/order"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        net.train_epoch(&mut opt, &examples, &order, cfg.batch_size)?;
    }
    Ok(net)
}

/// F1 of the positive class with threshold 0.5.
pub fn classifier_f1(net: &Network, store: &FeatureStore, positives: &[InstanceId], negatives: &[InstanceId]) -> f64 {
    let says_positive = |id: InstanceId| net.predict(store.get(id), &[], 1.0)[1] > 0.5;
    let tp = positives.iter().filter(|&&id| says_positive(id)).count();
    let fp = negatives.iter().filter(|&&id| says_positive(id)).count();
    prf1(tp, fp, positives.len() - tp).2
}

fn window_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `alpha * (mean F1[i-w+1..=i] - mean F1[i-w..=i-1])`, windows truncated at
/// epoch 0.
pub fn compute_reward(history: &[f64], i: usize, alpha: f64, w: usize) -> f64 {
    assert!(i >= 1 && i < history.len(), "reward needs epochs 0..={i} in the history");
    assert!(w >= 1);
    let cur = &history[(i + 1).saturating_sub(w)..=i];
    let prev = &history[i.saturating_sub(w)..i];
    alpha * (window_mean(cur) - window_mean(prev))
}

/// Parts of two consecutive removed sets outside their intersection, each
/// in ascending id order: `(prev only, cur only)`.
pub fn omega_sets(prev: &[InstanceId], cur: &[InstanceId]) -> (Vec<InstanceId>, Vec<InstanceId>) {
    let p: BTreeSet<InstanceId> = prev.iter().copied().collect();
    let c: BTreeSet<InstanceId> = cur.iter().copied().collect();
    (p.difference(&c).copied().collect(), c.difference(&p).copied().collect())
}

/// Gradient of `coefficient * log pi(action | state)` with respect to the head
/// parameters, accumulated into `grads`.
fn head_log_prob_grad(agent: &PolicyAgent, state: &[f64], action: usize, coefficient: f64, grads: &mut GradientBundle) {
    let head = &agent.net.head;
    let probs = softmax(&head.logits(state));
    for j in 0..head.n_classes {
        let dz = coefficient * ((j == action) as u8 as f64 - probs[j]);
        let row = &mut grads.head_weight[j * head.input_dim..(j + 1) * head.input_dim];
        for (g, s) in row.iter_mut().zip(state) {
            *g += dz * s;
        }
        grads.head_bias[j] += dz;
    }
}

/// One plain gradient step that raises `log pi(remove)` on `omega_cur`'s
/// cached states and lowers it on `omega_prev`'s, both scaled by `reward`.
/// Cached states are constant inputs, so only the head moves.
pub fn policy_update(
    agent: &mut PolicyAgent,
    omega_cur: &[InstanceId],
    omega_prev: &[InstanceId],
    states_cur: &BTreeMap<InstanceId, Vec<f64>>,
    states_prev: &BTreeMap<InstanceId, Vec<f64>>,
    reward: f64,
    lr: f64,
) -> Result<(), RlError> {
    let missing = omega_cur
        .iter()
        .find(|id| !states_cur.contains_key(id))
        .or_else(|| omega_prev.iter().find(|id| !states_prev.contains_key(id)));
    if let Some(&id) = missing {
        return Err(RlError::MissingState(id));
    }
    if reward == 0.0 || (omega_cur.is_empty() && omega_prev.is_empty()) {
        return Ok(());
    }
    let mut grads = GradientBundle::zeros_like(&agent.net);
    // Descent on the negated objective.
    for &id in omega_cur {
        head_log_prob_grad(agent, &states_cur[&id], REMOVE, -reward, &mut grads);
    }
    for &id in omega_prev {
        head_log_prob_grad(agent, &states_prev[&id], REMOVE, reward, &mut grads);
    }
    Sgd::new(lr, 0.0).step(&mut agent.net, &grads)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub removed: Vec<InstanceId>,
    pub states: BTreeMap<InstanceId, Vec<f64>>,
    pub validation_removed: usize,
    pub f1: f64,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Agent with the parameters that produced the best epoch's removals.
    pub best: PolicyAgent,
    pub best_epoch: usize,
    pub baseline_f1: f64,
    pub logs: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn best_log(&self) -> &EpochLog {
        &self.logs[self.best_epoch - 1]
    }
}

pub fn epochs_csv(baseline_f1: f64, logs: &[EpochLog]) -> String {
    let mut out = String::from("epoch,removed,f1,reward\n");
    writeln!(out, "0,0,{baseline_f1},").unwrap();
    for l in logs {
        writeln!(out, "{},{},{},{}", l.epoch, l.removed.len(), l.f1, l.reward).unwrap();
    }
    out
}

/// One line per epoch: the epoch index, a tab, then the removed ids in rank
/// order.
pub fn removed_sidecar(logs: &[EpochLog]) -> String {
    let mut out = String::new();
    for l in logs {
        let ids: Vec<String> = l.removed.iter().map(|id| id.to_string()).collect();
        writeln!(out, "{}\t{}", l.epoch, ids.join(" ")).unwrap();
    }
    out
}

fn at(epoch: usize) -> impl Fn(RlError) -> RlError {
    move |e| RlError::Epoch { epoch, source: Box::new(e) }
}

/// Runs the full loop for one relation, starting from a pre-trained agent.
pub fn train_agent(
    features: Features<'_>,
    sets: &RelationSets,
    pretrained: &PolicyAgent,
    budget: Budget,
    cfg: &TrainerConfig,
) -> Result<TrainOutcome, RlError> {
    cfg.validate()?;
    let clf = train_reward_classifier(features, &sets.p_train, &sets.n_train, &cfg.classifier).map_err(at(0))?;
    let baseline_f1 = classifier_f1(&clf, features.store, &sets.p_valid, &sets.n_valid);
    log::info!("relation {}: unfiltered F1 {baseline_f1:.4}", pretrained.relation);

    let mut agent = pretrained.clone();
    let mut rng = seeded_rng(derive(cfg.seed, "removal"));
    let mut history = vec![baseline_f1];
    let mut logs: Vec<EpochLog> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, PolicyAgent)> = None;
    let no_states = BTreeMap::new();
    for epoch in 1..=cfg.epochs {
        let pass = run_removal_pass(&agent, features.store, &sets.p_train, budget.gamma_t, &mut rng);
        let (p_t, n_t) = rebuild_sets(&sets.p_train, &sets.n_train, &pass.removed).map_err(at(epoch))?;
        let (p_v, n_v, v_removed) = filter_validation(&agent, features.store, &sets.p_valid, &sets.n_valid, budget.gamma_v);
        let clf = train_reward_classifier(features, &p_t, &n_t, &cfg.classifier).map_err(at(epoch))?;
        let f1 = classifier_f1(&clf, features.store, &p_v, &n_v);
        history.push(f1);
        let reward = compute_reward(&history, epoch, cfg.alpha, cfg.f1_window);
        log::debug!(
            "relation {} epoch {epoch}: removed {} (validation {}), F1 {f1:.4}, reward {reward:.4}",
            agent.relation,
            pass.removed.len(),
            v_removed.len()
        );

        if best.as_ref().map_or(true, |(_, f, _)| f1 > *f) {
            let mut snapshot = agent.clone();
            snapshot.frozen_avg = pass.final_avg.mean.clone();
            best = Some((epoch, f1, snapshot));
        }

        let (prev_removed, prev_states) = match logs.last() {
            Some(l) => (l.removed.as_slice(), &l.states),
            None => (&[][..], &no_states),
        };
        let (omega_prev, omega_cur) = omega_sets(prev_removed, &pass.removed);
        policy_update(&mut agent, &omega_cur, &omega_prev, &pass.states, prev_states, reward, cfg.lr).map_err(at(epoch))?;

        logs.push(EpochLog {
            epoch,
            removed: pass.removed,
            states: pass.states,
            validation_removed: v_removed.len(),
            f1,
            reward,
        });
    }
    let (best_epoch, _, best) = best.expect("at least two epochs ran");
    Ok(TrainOutcome { best, best_epoch, baseline_f1, logs })
}
