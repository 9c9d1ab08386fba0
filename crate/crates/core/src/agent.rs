//! Per-relation policy agent: state construction, action selection,
//! supervised warm-up and removal budgets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_negatives, InstanceId, RelationId};
use crate::featurize::{EmbeddingTable, FeatureStore, SentenceIndex};
use crate::seeds::{derive, seeded_rng};
use crate::tinynn::{Checkpoint, CheckpointError, Example, Network, NetworkShape, Sgd, TrainFault};

/// Head class of the remove action; retain is class 1.
pub const REMOVE: usize = 0;
pub const RETAIN: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Remove,
    Retain,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("pre-training needs at least 10 positives, got {0}")]
    TooFewPositives(usize),
    #[error("negative pool is empty")]
    EmptyNegativePool,
    #[error("invalid pre-training config: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainFault),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Running mean of the features of removed sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct RemovedAverage {
    pub mean: Vec<f64>,
    pub count: usize,
}

impl RemovedAverage {
    pub fn zeros(dim: usize) -> Self {
        RemovedAverage { mean: vec![0.0; dim], count: 0 }
    }

    pub fn push(&mut self, feature: &[f64]) {
        assert_eq!(feature.len(), self.mean.len());
        let n = self.count as f64;
        for (m, f) in self.mean.iter_mut().zip(feature) {
            *m = (*m * n + f) / (n + 1.0);
        }
        self.count += 1;
    }
}

pub fn update_avg(avg: &RemovedAverage, removed: &[f64]) -> RemovedAverage {
    let mut next = avg.clone();
    next.push(removed);
    next
}

/// `[lambda * current, removed average]`
pub fn make_state(current: &[f64], avg: &RemovedAverage, lambda: f64) -> Vec<f64> {
    assert_eq!(current.len(), avg.mean.len(), "feature and average dimensions differ");
    current.iter().map(|v| lambda * v).chain(avg.mean.iter().copied()).collect()
}

pub enum ActMode<'r, R: Rng> {
    Sample(&'r mut R),
    /// Remove only when p_remove > 0.5.
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub p_remove: f64,
    pub feature: Vec<f64>,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyAgent {
    pub relation: RelationId,
    pub net: Network,
    pub lambda: f64,
    /// Removed-sentence average at the end of training, used as the state's
    /// second half when the agent classifies on its own.
    pub frozen_avg: Vec<f64>,
}

impl PolicyAgent {
    pub fn new(relation: RelationId, embeddings: EmbeddingTable, window: usize, kernels: usize, l_max: usize, lambda: f64, seed: u64) -> Self {
        assert!(lambda > 0.0, "current-sentence weight must be positive");
        let shape = NetworkShape {
            dims: embeddings.dims,
            vocab_len: embeddings.vocab_len(),
            window,
            kernels,
            l_max,
            n_classes: 2,
            extra_dim: kernels,
        };
        let net = Network::new(shape, embeddings, &mut seeded_rng(seed));
        PolicyAgent { relation, net, lambda, frozen_avg: vec![0.0; kernels] }
    }

    pub fn kernels(&self) -> usize {
        self.net.encoder.kernels
    }

    pub fn empty_average(&self) -> RemovedAverage {
        RemovedAverage::zeros(self.kernels())
    }

    pub fn frozen_average(&self) -> RemovedAverage {
        RemovedAverage { mean: self.frozen_avg.clone(), count: 0 }
    }

    /// Action on an already-built state vector.
    pub fn act<R: Rng>(&self, state: &[f64], mode: ActMode<'_, R>) -> (Action, f64) {
        let probs = self.net.head.forward_softmax(state);
        let p_remove = probs[REMOVE];
        let remove = match mode {
            ActMode::Sample(rng) => rng.gen::<f64>() < p_remove,
            ActMode::Greedy => p_remove > 0.5,
        };
        (if remove { Action::Remove } else { Action::Retain }, p_remove)
    }

    /// Encodes the sentence, builds the state against `avg` and acts on it.
    pub fn decide<R: Rng>(&self, sent: &SentenceIndex, avg: &RemovedAverage, mode: ActMode<'_, R>) -> Decision {
        let trace = self.net.forward(sent, &avg.mean, self.lambda);
        let state = trace.input;
        let (action, p_remove) = self.act(&state, mode);
        Decision { action, p_remove, feature: trace.feature, state }
    }

    pub fn p_remove(&self, sent: &SentenceIndex, avg: &[f64]) -> f64 {
        self.net.predict(sent, avg, self.lambda)[REMOVE]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.net.to_checkpoint();
        ck.set_meta("relation", self.relation);
        ck.set_meta("lambda", format!("{:016x}", self.lambda.to_bits()));
        ck.put("agent.frozen_avg", 1, self.frozen_avg.len(), &self.frozen_avg);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let net = Network::from_checkpoint(ck)?;
        let bits: String = ck.meta("lambda")?;
        let lambda = u64::from_str_radix(&bits, 16)
            .map(f64::from_bits)
            .map_err(|_| CheckpointError::Format { line: 0, msg: format!("bad lambda {bits:?}") })?;
        let frozen_avg = ck.take("agent.frozen_avg", 1, net.encoder.kernels)?;
        Ok(PolicyAgent { relation: ck.meta("relation")?, net, lambda, frozen_avg })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub stop_band: (f64, f64),
    pub max_epochs: usize,
    pub negative_ratio: usize,
    pub holdout_fraction: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            stop_band: (0.85, 0.90),
            max_epochs: 50,
            negative_ratio: 10,
            holdout_fraction: 0.1,
            lr: 0.001,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutcome {
    pub history: Vec<PretrainEpoch>,
    pub reached_band: bool,
    pub negatives_requested: usize,
    pub negatives_used: usize,
}

/// Mean of per-class recall; 0.5 for a constant predictor whatever the class
/// ratio.
pub fn balanced_accuracy(labels: &[usize], predictions: &[usize]) -> f64 {
    let mut hit = [0usize; 2];
    let mut total = [0usize; 2];
    for (&y, &p) in labels.iter().zip(predictions) {
        total[y] += 1;
        if y == p {
            hit[y] += 1;
        }
    }
    let recalls: Vec<f64> = (0..2).filter(|&c| total[c] > 0).map(|c| hit[c] as f64 / total[c] as f64).collect();
    recalls.iter().sum::<f64>() / recalls.len().max(1) as f64
}

/// Supervised warm-up: positives as retain, sampled negatives as remove, with
/// the removed-average half of every state held at zero. Stops after the
/// first epoch whose held-out balanced accuracy lies inside the stop band.
pub fn pretrain(
    agent: &mut PolicyAgent,
    store: &FeatureStore,
    positives: &[InstanceId],
    negative_pool: &[InstanceId],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, AgentError> {
    if positives.len() < 10 {
        return Err(AgentError::TooFewPositives(positives.len()));
    }
    if negative_pool.is_empty() {
        return Err(AgentError::EmptyNegativePool);
    }
    let (lo, hi) = cfg.stop_band;
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) || cfg.max_epochs == 0 || cfg.batch_size == 0 {
        return Err(AgentError::Config(format!("band {:?}, max_epochs {}, batch {}", cfg.stop_band, cfg.max_epochs, cfg.batch_size)));
    }
    let requested = cfg.negative_ratio * positives.len();
    let negatives = sample_negatives(negative_pool, requested, derive(cfg.seed, "negatives"));

    let zero = vec![0.0; agent.kernels()];
    let mut labelled: Vec<(InstanceId, usize)> = positives
        .iter()
        .map(|&id| (id, RETAIN))
        .chain(negatives.iter().map(|&id| (id, REMOVE)))
        .collect();
    let mut rng = seeded_rng(derive(cfg.seed, "pretrain"));
    labelled.shuffle(&mut rng);
    let n_hold = ((cfg.holdout_fraction * labelled.len() as f64).round() as usize).clamp(1, labelled.len() - 1);
    let (held, train) = labelled.split_at(n_hold);

    let examples: Vec<Example<'_>> = train
        .iter()
        .map(|&(id, target)| Example { sentence: store.get(id), extra: &zero, scale: agent.lambda, target })
        .collect();
    let held_labels: Vec<usize> = held.iter().map(|&(_, y)| y).collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut history = Vec::new();
    let mut reached_band = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let train_loss = agent.net.train_epoch(&mut opt, &examples, &order, cfg.batch_size)?;
        let preds: Vec<usize> = held
            .iter()
            .map(|&(id, _)| if agent.p_remove(store.get(id), &zero) > 0.5 { REMOVE } else { RETAIN })
            .collect();
        let acc = balanced_accuracy(&held_labels, &preds);
        log::debug!("relation {} pretrain epoch {epoch}: loss {train_loss:.4} held-out accuracy {acc:.4}", agent.relation);
        history.push(PretrainEpoch { epoch, train_loss, heldout_accuracy: acc });
        if (lo..=hi).contains(&acc) {
            reached_band = true;
            break;
        }
    }
    if !reached_band {
        log::warn!(
            "relation {}: pre-training never reached accuracy band [{lo}, {hi}] in {} epochs",
            agent.relation,
            cfg.max_epochs
        );
    }
    Ok(PretrainOutcome { history, reached_band, negatives_requested: requested, negatives_used: negatives.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub gamma_t: usize,
    pub gamma_v: usize,
    pub flagged: usize,
}

/// Clamps the count of confidently flagged training positives into
/// `[1, |P_t|/2]` and scales it to the validation split.
pub fn budget_from_count(flagged: usize, n_train: usize, n_valid: usize) -> Budget {
    let upper = (n_train / 2).max(1);
    let gamma_t = flagged.clamp(1, upper);
    let gamma_v = ((gamma_t as f64 * n_valid as f64 / n_train.max(1) as f64).round() as usize).max(1);
    Budget { gamma_t, gamma_v, flagged }
}

pub fn derive_budget(agent: &PolicyAgent, store: &FeatureStore, p_train: &[InstanceId], p_valid: &[InstanceId]) -> Budget {
    let zero = vec![0.0; agent.kernels()];
    let flagged = p_train.iter().filter(|&&id| agent.p_remove(store.get(id), &zero) > 0.5).count();
    budget_from_count(flagged, p_train.len(), p_valid.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instance;
    use crate::featurize::EmbeddingDims;
    use crate::seeds::Rng as ChaCha;

    fn agent(kernels: usize) -> PolicyAgent {
        let dims = EmbeddingDims { word: 4, position: 2 };
        PolicyAgent::new(1, EmbeddingTable::random(12, dims, 1), 3, kernels, 10, 2.0, 5)
    }

    fn sentence(tokens: Vec<usize>) -> SentenceIndex {
        let inst = Instance { id: 0, tokens, head_pos: 0, tail_pos: 2, relation: 1, bag_id: "b".into(), noise_flag: None };
        SentenceIndex::new(&inst, 10)
    }

    #[test]
    fn state_examples() {
        let avg = RemovedAverage { mean: vec![0.5, 0.5], count: 2 };
        assert_eq!(make_state(&[1.0, 0.0], &avg, 2.0), vec![2.0, 0.0, 0.5, 0.5]);
        let empty = RemovedAverage::zeros(3);
        assert_eq!(&make_state(&[1.0, 2.0, 3.0], &empty, 2.0)[3..], &[0.0, 0.0, 0.0]);
        let v = [0.3, -0.7];
        let same = RemovedAverage { mean: v.to_vec(), count: 1 };
        assert_eq!(make_state(&v, &same, 1.0), vec![0.3, -0.7, 0.3, -0.7]);
    }

    #[test]
    fn doubling_lambda_doubles_current_half() {
        let avg = RemovedAverage { mean: vec![0.1, 0.2], count: 1 };
        let f = [0.7, 1.3];
        let a = make_state(&f, &avg, 3.0);
        let doubled: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        assert_eq!(make_state(&f, &avg, 6.0), make_state(&doubled, &avg, 3.0));
        assert_eq!(a[2..], [0.1, 0.2]);
    }

    #[test]
    fn running_average_examples() {
        let a = update_avg(&RemovedAverage::zeros(2), &[3.0, 1.0]);
        assert_eq!((a.mean.clone(), a.count), (vec![3.0, 1.0], 1));
        let b = update_avg(&RemovedAverage { mean: vec![1.0, 1.0], count: 1 }, &[3.0, 3.0]);
        assert_eq!(b.mean, vec![2.0, 2.0]);
    }

    #[test]
    fn running_average_matches_batch_mean() {
        let mut rng = seeded_rng(8);
        let feats: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.gen_range(0.0..5.0)).collect()).collect();
        let mut avg = RemovedAverage::zeros(4);
        for f in &feats {
            avg.push(f);
        }
        for c in 0..4 {
            let batch: f64 = feats.iter().map(|f| f[c]).sum::<f64>() / feats.len() as f64;
            assert!((avg.mean[c] - batch).abs() < 1e-12);
        }
    }

    #[test]
    fn forced_head_always_removes() {
        let mut a = agent(3);
        a.net.head.bias = vec![1e6, -1e6];
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let d = a.decide(&sentence(vec![2, 3, 4, 5]), &a.empty_average(), ActMode::Sample(&mut rng));
            assert_eq!(d.action, Action::Remove);
            assert_eq!(d.p_remove, 1.0);
        }
    }

    #[test]
    fn uniform_head_samples_half() {
        let mut a = agent(3);
        a.net.head.weight.iter_mut().for_each(|w| *w = 0.0);
        a.net.head.bias = vec![0.0, 0.0];
        let state = vec![0.0; 6];
        let mut rng = seeded_rng(99);
        let removes = (0..10_000).filter(|_| a.act(&state, ActMode::Sample(&mut rng)).0 == Action::Remove).count();
        let freq = removes as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq), "{freq}");
        let (action, p) = a.act::<ChaCha>(&state, ActMode::Greedy);
        assert_eq!((action, p), (Action::Retain, 0.5));
    }

    #[test]
    fn probabilities_complement() {
        let a = agent(4);
        let mut rng = seeded_rng(3);
        for _ in 0..50 {
            let state: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = a.net.head.forward_softmax(&state);
            assert!((p[REMOVE] + p[RETAIN] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_examples() {
        assert_eq!(budget_from_count(212, 1000, 500).gamma_t, 212);
        assert_eq!(budget_from_count(212, 1000, 500).gamma_v, 106);
        assert_eq!(budget_from_count(0, 1000, 500).gamma_t, 1);
        assert_eq!(budget_from_count(900, 1000, 500).gamma_t, 500);
        assert_eq!(budget_from_count(1, 1000, 10).gamma_v, 1);
    }

    #[test]
    fn balanced_accuracy_ignores_class_ratio() {
        let labels = [REMOVE; 10].iter().chain(&[RETAIN]).copied().collect::<Vec<_>>();
        let all_remove = vec![REMOVE; 11];
        assert_eq!(balanced_accuracy(&labels, &all_remove), 0.5);
        assert_eq!(balanced_accuracy(&labels, &labels), 1.0);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut a = agent(3);
        a.frozen_avg = vec![0.25, 1.0 / 3.0, 7.0];
        a.lambda = 2.0 / 3.0;
        let text = a.to_checkpoint().to_text();
        let back = PolicyAgent::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn pretrain_preconditions() {
        let mut a = agent(2);
        let store = FeatureStore::build(&[], 12, 10).unwrap();
        let cfg = PretrainConfig::default();
        assert!(matches!(pretrain(&mut a, &store, &[1, 2, 3], &[4], &cfg), Err(AgentError::TooFewPositives(3))));
        let p: Vec<InstanceId> = (0..10).collect();
        assert!(matches!(pretrain(&mut a, &store, &p, &[], &cfg), Err(AgentError::EmptyNegativePool)));
    }
}
