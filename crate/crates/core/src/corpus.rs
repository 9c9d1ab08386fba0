//! Dataset model, TSV ingestion, synthetic noisy corpora and seeded sampling.
//!
//! A dataset line is one sentence:
//!
//! ```text
//! bag_id <TAB> head <TAB> tail <TAB> relation <TAB> head_idx <TAB> tail_idx <TAB> tok tok ...
//! ```
//!
//! Instance ids are the 0-based index of the line among non-empty lines, so
//! writing a dataset back out in id order reproduces the same ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::Vocab;
use crate::seeds::seeded_rng;

pub type InstanceId = u64;
pub type RelationId = usize;

/// Relation id of the negative universe.
pub const NA: RelationId = 0;
pub const NA_NAME: &str = "NA";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("cannot split {0} positives; at least 3 are required")]
    Split(usize),
    #[error("noise file line {line}: {msg}")]
    NoiseFile { line: usize, msg: String },
    #[error("relation {0:?} does not occur in the reference relation list")]
    UnknownRelation(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub id: InstanceId,
    pub tokens: Vec<usize>,
    pub head_pos: usize,
    pub tail_pos: usize,
    pub relation: RelationId,
    pub bag_id: String,
    /// Ground truth for synthetic corpora: `Some(true)` marks an injected false positive.
    pub noise_flag: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bag {
    pub bag_id: String,
    pub head_entity: String,
    pub tail_entity: String,
    pub relation: RelationId,
    pub instance_ids: Vec<InstanceId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub relations: Vec<String>,
    pub bags: BTreeMap<String, Bag>,
    /// Indexed by instance id.
    pub instances: Vec<Instance>,
    pub vocab: Vocab,
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset {
            relations: vec![NA_NAME.to_string()],
            bags: BTreeMap::new(),
            instances: Vec::new(),
            vocab: Vocab::default(),
        }
    }
}

impl Dataset {
    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.iter().position(|r| r == name)
    }

    pub fn instance(&self, id: InstanceId) -> &Instance {
        &self.instances[id as usize]
    }

    /// Ids of instances labelled `relation`, ascending.
    pub fn positives(&self, relation: RelationId) -> Vec<InstanceId> {
        self.instances.iter().filter(|i| i.relation == relation).map(|i| i.id).collect()
    }

    pub fn negatives(&self) -> Vec<InstanceId> {
        self.positives(NA)
    }

    /// Ids whose ground-truth flag marks them as injected noise.
    pub fn noise_truth(&self) -> BTreeSet<InstanceId> {
        self.instances.iter().filter(|i| i.noise_flag == Some(true)).map(|i| i.id).collect()
    }

    pub fn set_noise_truth(&mut self, truth: &BTreeSet<InstanceId>) {
        for inst in &mut self.instances {
            inst.noise_flag = Some(truth.contains(&inst.id));
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |id: InstanceId, msg: String| CorpusError::Validation { line: id as usize + 1, msg };
        for (pos, inst) in self.instances.iter().enumerate() {
            if inst.id != pos as InstanceId {
                return Err(bad(inst.id, format!("instance id {} stored at position {pos}", inst.id)));
            }
            check_positions(inst.tokens.len(), inst.head_pos, inst.tail_pos).map_err(|m| bad(inst.id, m))?;
            let bag = self
                .bags
                .get(&inst.bag_id)
                .ok_or_else(|| bad(inst.id, format!("bag {} does not exist", inst.bag_id)))?;
            if bag.relation != inst.relation {
                return Err(bad(inst.id, format!("relation differs from bag {}", bag.bag_id)));
            }
            if inst.tokens.iter().any(|&t| t >= self.vocab.len()) {
                return Err(bad(inst.id, "token outside vocabulary".into()));
            }
        }
        for bag in self.bags.values() {
            if bag.relation >= self.relations.len() {
                return Err(CorpusError::Validation { line: 0, msg: format!("bag {} has unknown relation", bag.bag_id) });
            }
            if bag.instance_ids.is_empty() {
                return Err(CorpusError::Validation { line: 0, msg: format!("bag {} is empty", bag.bag_id) });
            }
            for &id in &bag.instance_ids {
                if self.instances.get(id as usize).map(|i| &i.bag_id) != Some(&bag.bag_id) {
                    return Err(CorpusError::Validation {
                        line: 0,
                        msg: format!("bag {} lists instance {id} it does not own", bag.bag_id),
                    });
                }
            }
        }
        Ok(())
    }

    /// Serializes every instance, one TSV line each, in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for inst in &self.instances {
            let bag = &self.bags[&inst.bag_id];
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t",
                bag.bag_id, bag.head_entity, bag.tail_entity, self.relations[inst.relation], inst.head_pos, inst.tail_pos
            ));
            for (k, &t) in inst.tokens.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                out.push_str(self.vocab.token(t).unwrap_or(crate::featurize::UNK_TOKEN));
            }
            out.push('\n');
        }
        out
    }

    /// Re-indexes every token against `vocab`; unknown tokens map to `<unk>`.
    pub fn remap_to_vocab(&self, vocab: &Vocab) -> Dataset {
        let mut out = self.clone();
        for inst in &mut out.instances {
            for t in &mut inst.tokens {
                *t = vocab.lookup(self.vocab.token(*t).unwrap_or(crate::featurize::UNK_TOKEN));
            }
        }
        out.vocab = vocab.clone();
        out
    }

    /// Renumbers relations to follow `names` (which must start with NA), so
    /// files parsed separately share one set of relation ids.
    pub fn align_relations(&self, names: &[String]) -> Result<Dataset, CorpusError> {
        let map: Vec<RelationId> = self
            .relations
            .iter()
            .map(|n| names.iter().position(|m| m == n).ok_or_else(|| CorpusError::UnknownRelation(n.clone())))
            .collect::<Result<_, _>>()?;
        let mut out = self.clone();
        out.relations = names.to_vec();
        for inst in &mut out.instances {
            inst.relation = map[inst.relation];
        }
        for bag in out.bags.values_mut() {
            bag.relation = map[bag.relation];
        }
        Ok(out)
    }

    /// Size of the bag each instance currently belongs to.
    pub fn bag_size_of(&self, id: InstanceId) -> usize {
        self.bags[&self.instance(id).bag_id].instance_ids.len()
    }
}

fn check_positions(len: usize, head: usize, tail: usize) -> Result<(), String> {
    if len == 0 {
        return Err("sentence has no tokens".into());
    }
    if head >= len || tail >= len {
        return Err(format!("entity index out of range (head {head}, tail {tail}, {len} tokens)"));
    }
    if head == tail {
        return Err(format!("head and tail share token index {head}"));
    }
    Ok(())
}

/// Incremental dataset construction from string tokens.
#[derive(Debug, Default)]
pub struct DatasetBuilder {
    ds: Dataset,
}

impl DatasetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        match self.ds.relation_id(name) {
            Some(r) => r,
            None => {
                self.ds.relations.push(name.to_string());
                self.ds.relations.len() - 1
            }
        }
    }

    /// Appends one sentence; `line` is used only for error messages.
    #[allow(clippy::too_many_arguments)]
    pub fn push<S: AsRef<str>>(
        &mut self,
        line: usize,
        bag_id: &str,
        head: &str,
        tail: &str,
        relation: &str,
        head_pos: usize,
        tail_pos: usize,
        tokens: &[S],
    ) -> Result<InstanceId, CorpusError> {
        check_positions(tokens.len(), head_pos, tail_pos).map_err(|msg| CorpusError::Validation { line, msg })?;
        let relation = self.relation(relation);
        let id = self.ds.instances.len() as InstanceId;
        match self.ds.bags.get_mut(bag_id) {
            Some(bag) => {
                if bag.head_entity != head || bag.tail_entity != tail || bag.relation != relation {
                    return Err(CorpusError::Validation {
                        line,
                        msg: format!("bag {bag_id} reappears with a different entity pair or relation"),
                    });
                }
                bag.instance_ids.push(id);
            }
            None => {
                self.ds.bags.insert(
                    bag_id.to_string(),
                    Bag {
                        bag_id: bag_id.to_string(),
                        head_entity: head.to_string(),
                        tail_entity: tail.to_string(),
                        relation,
                        instance_ids: vec![id],
                    },
                );
            }
        }
        let tokens = tokens.iter().map(|t| self.ds.vocab.insert(t.as_ref())).collect();
        self.ds.instances.push(Instance {
            id,
            tokens,
            head_pos,
            tail_pos,
            relation,
            bag_id: bag_id.to_string(),
            noise_flag: None,
        });
        Ok(id)
    }

    pub fn finish(self) -> Dataset {
        self.ds
    }
}

pub fn parse_dataset(text: &str) -> Result<Dataset, CorpusError> {
    let mut builder = DatasetBuilder::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(CorpusError::Parse { line: line_no, msg: format!("expected 7 tab-separated fields, found {}", fields.len()) });
        }
        let index = |s: &str, what: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| CorpusError::Parse { line: line_no, msg: format!("bad {what} {s:?}: {e}") })
        };
        let head_pos = index(fields[4], "head_idx")?;
        let tail_pos = index(fields[5], "tail_idx")?;
        let tokens: Vec<&str> = fields[6].split_whitespace().collect();
        for (k, name) in [(0, "bag_id"), (1, "head"), (2, "tail"), (3, "relation")] {
            if fields[k].is_empty() {
                return Err(CorpusError::Parse { line: line_no, msg: format!("empty {name}") });
            }
        }
        builder.push(line_no, fields[0], fields[1], fields[2], fields[3], head_pos, tail_pos, &tokens)?;
    }
    Ok(builder.finish())
}

pub fn noise_ids_to_text(ids: &BTreeSet<InstanceId>) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

pub fn parse_noise_ids(text: &str) -> Result<BTreeSet<InstanceId>, CorpusError> {
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id = line
            .parse()
            .map_err(|e| CorpusError::NoiseFile { line: i + 1, msg: format!("bad id {line:?}: {e}") })?;
        out.insert(id);
    }
    Ok(out)
}

/// Bag-size shares for sizes 1..=5; the observed false-positive shares
/// [55.9, 32.0, 3.7, 4.4, 0.7] renormalized to sum to one.
pub fn default_bag_sizes() -> Vec<f64> {
    let raw = [0.559, 0.320, 0.037, 0.044, 0.007];
    let total: f64 = raw.iter().sum();
    raw.iter().map(|p| p / total).collect()
}

pub const TRIGGERS_PER_RELATION: usize = 4;
const RESERVED_TOKENS: usize = 2;
const MIN_POOL: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_relations: usize,
    pub instances_per_relation: usize,
    pub na_instances: usize,
    pub noise_rate: f64,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub bag_size_distribution: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_relations: 5,
            instances_per_relation: 600,
            na_instances: 6000,
            noise_rate: 0.3,
            vocab_size: 400,
            min_len: 6,
            max_len: 14,
            bag_size_distribution: default_bag_sizes(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn pools(&self) -> (usize, usize) {
        let rest = self
            .vocab_size
            .saturating_sub(RESERVED_TOKENS + TRIGGERS_PER_RELATION * self.n_relations);
        let entities = rest / 2;
        (entities, rest - entities)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        if self.n_relations == 0 {
            return err("n_relations must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return err(format!("noise rate {} outside [0, 1)", self.noise_rate));
        }
        if self.bag_size_distribution.len() != 5 {
            return err("bag_size_distribution needs one probability per size 1..=5".into());
        }
        if self.bag_size_distribution.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return err("bag size probabilities must lie in [0, 1]".into());
        }
        let sum: f64 = self.bag_size_distribution.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return err(format!("bag size probabilities sum to {sum}, not 1"));
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return err(format!("sentence length range {}..={} invalid (minimum 3)", self.min_len, self.max_len));
        }
        let (entities, fillers) = self.pools();
        if entities < MIN_POOL || fillers < MIN_POOL {
            return err(format!(
                "vocab_size {} too small: {} relations need {} trigger tokens plus at least {} entity and {} filler tokens",
                self.vocab_size,
                self.n_relations,
                TRIGGERS_PER_RELATION * self.n_relations,
                MIN_POOL,
                MIN_POOL
            ));
        }
        Ok(())
    }
}

struct SentenceGen<'a> {
    cfg: &'a SyntheticConfig,
    entities: usize,
    fillers: usize,
}

impl SentenceGen<'_> {
    /// Sentence from `source`'s generator: NA yields fillers only; a relation
    /// plants one or two of its trigger tokens between the entities.
    fn sentence(&self, source: RelationId, head: &str, tail: &str, rng: &mut impl Rng) -> (Vec<String>, usize, usize) {
        let len = rng.gen_range(self.cfg.min_len..=self.cfg.max_len);
        let (head_pos, tail_pos) = loop {
            let a = rng.gen_range(0..len);
            let b = rng.gen_range(0..len);
            if a.abs_diff(b) >= 2 {
                break (a, b);
            }
        };
        let mut tokens: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(0..self.fillers))).collect();
        tokens[head_pos] = head.to_string();
        tokens[tail_pos] = tail.to_string();
        if source != NA {
            let (lo, hi) = (head_pos.min(tail_pos), head_pos.max(tail_pos));
            let gap = hi - lo - 1;
            let count = if gap >= 3 && rng.gen_bool(0.5) { 2 } else { 1 };
            for slot in index::sample(rng, gap, count).into_iter() {
                let trig = rng.gen_range(0..TRIGGERS_PER_RELATION);
                tokens[lo + 1 + slot] = format!("trg{source}_{trig}");
            }
        }
        (tokens, head_pos, tail_pos)
    }

    fn entity_pair(&self, rng: &mut impl Rng) -> (String, String) {
        let h = rng.gen_range(0..self.entities);
        let mut t = rng.gen_range(0..self.entities - 1);
        if t >= h {
            t += 1;
        }
        (format!("ent{h}"), format!("ent{t}"))
    }

    fn bag_sizes(&self, total: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut left = total;
        while left > 0 {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut size = 5;
            for (k, p) in self.cfg.bag_size_distribution.iter().enumerate() {
                acc += p;
                if u < acc {
                    size = k + 1;
                    break;
                }
            }
            let size = size.min(left);
            sizes.push(size);
            left -= size;
        }
        sizes
    }
}

/// Generates a corpus whose relations are signalled by trigger tokens, with an
/// exact `round(rho * n)` of each relation's positives replaced by sentences
/// from another generator.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Dataset, BTreeSet<InstanceId>), CorpusError> {
    cfg.validate()?;
    let (entities, fillers) = cfg.pools();
    let gen = SentenceGen { cfg, entities, fillers };
    let mut rng = seeded_rng(cfg.seed);
    let mut builder = DatasetBuilder::new();
    let mut truth = BTreeSet::new();
    let mut flags: HashMap<InstanceId, bool> = HashMap::new();
    let mut bag_counter = 0usize;

    // Register relation names up front so ids do not depend on data order.
    for r in 1..=cfg.n_relations {
        builder.relation(&format!("rel{r}"));
    }

    let mut emit = |builder: &mut DatasetBuilder,
                    rng: &mut rand_chacha::ChaCha8Rng,
                    relation: RelationId,
                    count: usize,
                    noisy: &BTreeSet<usize>| {
        let name = if relation == NA { NA_NAME.to_string() } else { format!("rel{relation}") };
        let mut k = 0usize;
        for size in gen.bag_sizes(count, rng) {
            let bag_id = format!("b{bag_counter:06}");
            bag_counter += 1;
            let (head, tail) = gen.entity_pair(rng);
            for _ in 0..size {
                let is_noise = noisy.contains(&k);
                let source = if is_noise {
                    // NA or any other relation, uniformly.
                    let pick = rng.gen_range(0..cfg.n_relations);
                    if pick == 0 {
                        NA
                    } else if pick < relation {
                        pick
                    } else {
                        pick + 1
                    }
                } else {
                    relation
                };
                let (tokens, hp, tp) = gen.sentence(source, &head, &tail, rng);
                let id = builder
                    .push(0, &bag_id, &head, &tail, &name, hp, tp, &tokens)
                    .expect("generated sentences satisfy instance invariants");
                flags.insert(id, is_noise);
                if is_noise {
                    truth.insert(id);
                }
                k += 1;
            }
        }
    };

    for r in 1..=cfg.n_relations {
        let n = cfg.instances_per_relation;
        let n_noise = (cfg.noise_rate * n as f64).round() as usize;
        let noisy: BTreeSet<usize> = index::sample(&mut rng, n, n_noise).into_iter().collect();
        emit(&mut builder, &mut rng, r, n, &noisy);
    }
    emit(&mut builder, &mut rng, NA, cfg.na_instances, &BTreeSet::new());

    let mut ds = builder.finish();
    for inst in &mut ds.instances {
        inst.noise_flag = Some(flags[&inst.id]);
    }
    Ok((ds, truth))
}

/// Shuffles `positives` and splits them 2:1 into training and validation parts.
pub fn split_positive(positives: &[InstanceId], seed: u64) -> Result<(Vec<InstanceId>, Vec<InstanceId>), CorpusError> {
    if positives.len() < 3 {
        return Err(CorpusError::Split(positives.len()));
    }
    let mut ids = positives.to_vec();
    ids.shuffle(&mut seeded_rng(seed));
    let n_train = (2.0 * ids.len() as f64 / 3.0).round() as usize;
    let valid = ids.split_off(n_train);
    Ok((ids, valid))
}

/// Draws `min(target, |pool|)` ids without replacement.
pub fn sample_negatives(pool: &[InstanceId], target: usize, seed: u64) -> Vec<InstanceId> {
    if target >= pool.len() {
        if target > pool.len() {
            log::warn!("negative pool holds {} ids but {target} were requested; using the whole pool", pool.len());
        }
        return pool.to_vec();
    }
    let mut rng = seeded_rng(seed);
    index::sample(&mut rng, pool.len(), target).into_iter().map(|i| pool[i]).collect()
}

/// Uniform subsample of size `cap` when `ids` is larger, identity otherwise.
pub fn cap_subsample(ids: &[InstanceId], cap: usize, seed: u64) -> Vec<InstanceId> {
    if ids.len() <= cap {
        return ids.to_vec();
    }
    let mut rng = seeded_rng(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, ids.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ids[i]).collect()
}
