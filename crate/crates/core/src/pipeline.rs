//! Per-relation orchestration shared by the command line and the tests:
//! set construction, pre-training and the training loop.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::agent::{derive_budget, pretrain, AgentError, Budget, PolicyAgent, PretrainOutcome};
use crate::config::RunConfig;
use crate::corpus::{cap_subsample, sample_negatives, split_positive, CorpusError, Dataset, InstanceId, RelationId};
use crate::evaluate::pr_curve;
use crate::featurize::{load_embeddings, EmbeddingTable, FeatureError, FeatureStore, Vocab};
use crate::redistribute::classify_instance;
use crate::rltrain::{classifier_f1, rebuild_sets, train_agent, train_reward_classifier, Features, RelationSets, RlError, TrainOutcome};
use crate::seeds::{derive, seeded_rng};
use crate::tinynn::{Example, Network, NetworkShape, Sgd, TrainFault};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("relation {relation}: {source}")]
    Corpus { relation: RelationId, source: CorpusError },
    #[error("relation {relation}: {source}")]
    Agent { relation: RelationId, source: AgentError },
    #[error("relation {relation}: {source}")]
    Rl { relation: RelationId, source: RlError },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// A dataset with its pre-indexed sentences and initial embeddings.
pub struct Prepared {
    pub dataset: Dataset,
    pub store: FeatureStore,
    pub embeddings: EmbeddingTable,
}

impl Prepared {
    pub fn new(dataset: Dataset, embeddings: EmbeddingTable, l_max: usize) -> Result<Self, FeatureError> {
        let store = FeatureStore::build(&dataset.instances, embeddings.vocab_len(), l_max)?;
        Ok(Prepared { dataset, store, embeddings })
    }

    pub fn features(&self) -> Features<'_> {
        Features { store: &self.store, embeddings: &self.embeddings }
    }
}

pub fn relation_seed(master: u64, stage: &str, relation: RelationId) -> u64 {
    derive(master, &format!("{stage}/rel{relation}"))
}

/// Capped positives split 2:1, each side paired with disjoint NA samples of
/// `reward_negative_ratio` times its size.
pub fn relation_sets(ds: &Dataset, relation: RelationId, cfg: &RunConfig) -> Result<RelationSets, CorpusError> {
    let seed = relation_seed(cfg.seed, "sets", relation);
    let positives = cap_subsample(&ds.positives(relation), cfg.positive_cap, derive(seed, "cap"));
    let (p_train, p_valid) = split_positive(&positives, derive(seed, "split"))?;
    let pool = ds.negatives();
    let n_train = sample_negatives(&pool, cfg.reward_negative_ratio * p_train.len(), derive(seed, "n_train"));
    let taken: BTreeSet<InstanceId> = n_train.iter().copied().collect();
    let rest: Vec<InstanceId> = pool.into_iter().filter(|id| !taken.contains(id)).collect();
    let n_valid = sample_negatives(&rest, cfg.reward_negative_ratio * p_valid.len(), derive(seed, "n_valid"));
    Ok(RelationSets { p_train, p_valid, n_train, n_valid })
}

pub struct Pretrained {
    pub agent: PolicyAgent,
    pub outcome: PretrainOutcome,
    pub budget: Budget,
    pub sets: RelationSets,
}

pub fn pretrain_relation(prep: &Prepared, relation: RelationId, cfg: &RunConfig) -> Result<Pretrained, PipelineError> {
    let sets = relation_sets(&prep.dataset, relation, cfg).map_err(|source| PipelineError::Corpus { relation, source })?;
    let seed = relation_seed(cfg.seed, "pretrain", relation);
    let mut agent = PolicyAgent::new(relation, prep.embeddings.clone(), cfg.window, cfg.kernels, cfg.l_max, cfg.lambda, derive(seed, "init"));
    let positives: Vec<InstanceId> = sets.p_train.iter().chain(&sets.p_valid).copied().collect();
    let outcome = pretrain(&mut agent, &prep.store, &positives, &prep.dataset.negatives(), &cfg.pretrain(seed))
        .map_err(|source| PipelineError::Agent { relation, source })?;
    let budget = derive_budget(&agent, &prep.store, &sets.p_train, &sets.p_valid);
    Ok(Pretrained { agent, outcome, budget, sets })
}

pub fn train_relation(prep: &Prepared, pre: &Pretrained, cfg: &RunConfig) -> Result<TrainOutcome, PipelineError> {
    let relation = pre.agent.relation;
    let trainer = cfg.trainer(relation_seed(cfg.seed, "rl", relation));
    train_agent(prep.features(), &pre.sets, &pre.agent, pre.budget, &trainer).map_err(|source| PipelineError::Rl { relation, source })
}

/// Initial embedding table: vectors from the configured file when there is
/// one, seeded random rows otherwise.
pub fn initial_embeddings(cfg: &RunConfig, vocab: &Vocab) -> Result<EmbeddingTable, PipelineError> {
    let seed = derive(cfg.seed, "embeddings");
    match &cfg.embeddings {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io { path: path.clone(), source: e })?;
            Ok(load_embeddings(&text, vocab, cfg.dims(), seed)?)
        }
        None => Ok(EmbeddingTable::random(vocab.len(), cfg.dims(), seed)),
    }
}

/// Moves every id that `flag` marks from the positive sides of `sets` to
/// the matching negative sides.
pub fn filter_sets(sets: &RelationSets, flag: impl Fn(InstanceId) -> bool) -> RelationSets {
    let split = |pos: &[InstanceId], neg: &[InstanceId]| {
        let moved: Vec<InstanceId> = pos.iter().copied().filter(|&id| flag(id)).collect();
        rebuild_sets(pos, neg, &moved).expect("moved ids come from the positives")
    };
    let (p_train, n_train) = split(&sets.p_train, &sets.n_train);
    let (p_valid, n_valid) = split(&sets.p_valid, &sets.n_valid);
    RelationSets { p_train, p_valid, n_train, n_valid }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetScore {
    pub f1: f64,
    pub auc: f64,
    pub removed_train: usize,
    pub removed_valid: usize,
}

/// Trains the reward classifier on the training sides of `sets`, after the
/// agent (if any) has flagged its false positives out of both sides, and
/// scores it on the validation side: F1 at 0.5 and precision/recall AUC.
pub fn score_sets(
    prep: &Prepared,
    relation: RelationId,
    sets: &RelationSets,
    agent: Option<&PolicyAgent>,
    cfg: &RunConfig,
) -> Result<SetScore, PipelineError> {
    let filtered = match agent {
        Some(a) => filter_sets(sets, |id| classify_instance(a, prep.store.get(id), cfg.zero_state_redistribution).0),
        None => sets.clone(),
    };
    let removed_train = sets.p_train.len() - filtered.p_train.len();
    let removed_valid = sets.p_valid.len() - filtered.p_valid.len();
    if filtered.p_train.is_empty() || filtered.p_valid.is_empty() {
        // Nothing left to learn or find: every prediction is negative.
        log::warn!("relation {relation}: the agent flagged every positive of a split; scoring F1 and AUC as 0");
        return Ok(SetScore { f1: 0.0, auc: 0.0, removed_train, removed_valid });
    }
    let clf_cfg = cfg.trainer(relation_seed(cfg.seed, "rl", relation)).classifier;
    let net = train_reward_classifier(prep.features(), &filtered.p_train, &filtered.n_train, &clf_cfg)
        .map_err(|source| PipelineError::Rl { relation, source })?;
    let f1 = classifier_f1(&net, &prep.store, &filtered.p_valid, &filtered.n_valid);
    let items: Vec<(InstanceId, f64, bool)> = filtered
        .p_valid
        .iter()
        .map(|&id| (id, true))
        .chain(filtered.n_valid.iter().map(|&id| (id, false)))
        .map(|(id, gold)| (id, net.predict(prep.store.get(id), &[], 1.0)[1], gold))
        .collect();
    let auc = pr_curve(&items).map_or(0.0, |c| c.auc);
    Ok(SetScore { f1, auc, removed_train, removed_valid })
}

/// Sentence-level classifier over every relation (NA included), trained on
/// all instances of the prepared dataset.
pub fn train_multiclass(prep: &Prepared, cfg: &RunConfig) -> Result<Network, TrainFault> {
    let clf = cfg.classifier(derive(cfg.seed, "multiclass"));
    let emb = prep.embeddings.clone();
    let shape = NetworkShape {
        dims: emb.dims,
        vocab_len: emb.vocab_len(),
        window: clf.window,
        kernels: clf.kernels,
        l_max: cfg.l_max,
        n_classes: prep.dataset.relations.len(),
        extra_dim: 0,
    };
    let mut net = Network::new(shape, emb, &mut seeded_rng(derive(clf.seed, "init")));
    let examples: Vec<Example<'_>> = prep
        .dataset
        .instances
        .iter()
        .map(|inst| Example { sentence: prep.store.get(inst.id), extra: &[], scale: 1.0, target: inst.relation })
        .collect();
    let mut rng = seeded_rng(derive(clf.seed, "order"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut opt = Sgd::new(clf.lr, clf.momentum);
    for epoch in 1..=clf.epochs {
        order.shuffle(&mut rng);
        let loss = net.train_epoch(&mut opt, &examples, &order, clf.batch_size)?;
        log::debug!("classifier epoch {epoch}: loss {loss:.4}");
    }
    Ok(net)
}
