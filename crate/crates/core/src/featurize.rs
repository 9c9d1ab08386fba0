//! Vocabulary, word/position embedding tables and sentence matrices.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::corpus::Instance;
use crate::seeds::seeded_rng;

/// Maximum absolute relative distance encoded by the position tables.
pub const MAX_REL_DISTANCE: i64 = 30;
/// Rows in each position table: one per clipped distance in [-30, 30].
pub const POSITION_ROWS: usize = 2 * MAX_REL_DISTANCE as usize + 1;
/// Half-width of the uniform initializer for embedding rows.
pub const INIT_RANGE: f64 = 0.25;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD: usize = 0;
pub const UNK: usize = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("token index {index} outside vocabulary of size {size}")]
    CorruptVocab { index: usize, size: usize },
    #[error("embedding file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("vocabulary file line {line}: {msg}")]
    VocabFormat { line: usize, msg: String },
}

/// Token to index map. Index 0 is padding, index 1 stands in for tokens below
/// `min_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new(1)
    }
}

impl Vocab {
    pub fn new(min_count: usize) -> Self {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
            min_count,
        };
        vocab.insert(PAD_TOKEN);
        vocab.insert(UNK_TOKEN);
        vocab
    }

    /// Builds a vocabulary keeping tokens seen at least `min_count` times,
    /// in order of first appearance.
    pub fn from_counts<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut order: Vec<&str> = Vec::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in tokens {
            let c = counts.entry(tok).or_insert(0);
            if *c == 0 {
                order.push(tok);
            }
            *c += 1;
        }
        let mut vocab = Vocab::new(min_count);
        for tok in order {
            if counts[tok] >= min_count {
                vocab.insert(tok);
            }
        }
        vocab
    }

    /// Returns the index of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or [`UNK`] when it is out of vocabulary.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// One token per line, in index order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FeatureError> {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
            min_count: 1,
        };
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(FeatureError::VocabFormat {
                    line: i + 1,
                    msg: "tokens must be non-empty and contain no whitespace".into(),
                });
            }
            if vocab.index.contains_key(line) {
                return Err(FeatureError::VocabFormat {
                    line: i + 1,
                    msg: format!("duplicate token {line:?}"),
                });
            }
            vocab.insert(line);
        }
        if vocab.token(PAD) != Some(PAD_TOKEN) || vocab.token(UNK) != Some(UNK_TOKEN) {
            return Err(FeatureError::VocabFormat {
                line: 1,
                msg: format!("first two tokens must be {PAD_TOKEN} and {UNK_TOKEN}"),
            });
        }
        Ok(vocab)
    }
}

/// Bucket of a token's distance to an entity, clipped to [-30, 30] and shifted
/// into [0, 60].
pub fn rel_position_bucket(token_index: usize, entity_index: usize) -> usize {
    let d = token_index as i64 - entity_index as i64;
    (d.clamp(-MAX_REL_DISTANCE, MAX_REL_DISTANCE) + MAX_REL_DISTANCE) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingDims {
    pub word: usize,
    pub position: usize,
}

impl Default for EmbeddingDims {
    fn default() -> Self {
        EmbeddingDims { word: 50, position: 5 }
    }
}

impl EmbeddingDims {
    /// Width of one sentence-matrix row.
    pub fn row_width(&self) -> usize {
        self.word + 2 * self.position
    }
}

/// Word table plus head- and tail-relative position tables, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub dims: EmbeddingDims,
    pub word: Vec<f64>,
    pub head_pos: Vec<f64>,
    pub tail_pos: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(vocab_len: usize, dims: EmbeddingDims) -> Self {
        EmbeddingTable {
            dims,
            word: vec![0.0; vocab_len * dims.word],
            head_pos: vec![0.0; POSITION_ROWS * dims.position],
            tail_pos: vec![0.0; POSITION_ROWS * dims.position],
        }
    }

    /// All rows uniform in [-0.25, 0.25] except the padding row, which stays zero.
    pub fn random(vocab_len: usize, dims: EmbeddingDims, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut table = Self::zeros(vocab_len, dims);
        for row in 1..vocab_len {
            for v in &mut table.word[row * dims.word..(row + 1) * dims.word] {
                *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
            }
        }
        table.fill_positions(&mut rng);
        table
    }

    fn fill_positions(&mut self, rng: &mut impl Rng) {
        for v in self.head_pos.iter_mut().chain(self.tail_pos.iter_mut()) {
            *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.word.len() / self.dims.word.max(1)
    }

    pub fn word_row(&self, index: usize) -> &[f64] {
        &self.word[index * self.dims.word..(index + 1) * self.dims.word]
    }

    pub fn scale(&mut self, c: f64) {
        for v in self
            .word
            .iter_mut()
            .chain(self.head_pos.iter_mut())
            .chain(self.tail_pos.iter_mut())
        {
            *v *= c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.word
            .iter()
            .chain(&self.head_pos)
            .chain(&self.tail_pos)
            .all(|v| v.is_finite())
    }
}

/// Parses a `word v_1 ... v_d` embedding file. Vocabulary words missing from
/// the file, and both position tables, are drawn from `seed`.
pub fn load_embeddings(
    text: &str,
    vocab: &Vocab,
    dims: EmbeddingDims,
    seed: u64,
) -> Result<EmbeddingTable, FeatureError> {
    let mut vectors: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut file_dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| FeatureError::Format {
                    line: line_no,
                    msg: format!("bad value {p:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Format { line: line_no, msg: "non-finite value".into() });
        }
        match file_dim {
            None => file_dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(FeatureError::Format {
                    line: line_no,
                    msg: format!("dimension {} differs from earlier lines ({d})", values.len()),
                })
            }
            _ => {}
        }
        if values.len() != dims.word {
            return Err(FeatureError::Format {
                line: line_no,
                msg: format!("dimension {} but word dimension is configured as {}", values.len(), dims.word),
            });
        }
        if let Some(idx) = vocab.get(word) {
            if idx != PAD {
                vectors.insert(idx, values);
            }
        }
    }

    let mut rng = seeded_rng(seed);
    let mut table = EmbeddingTable::zeros(vocab.len(), dims);
    let mut random_rows = 0usize;
    for row in 1..vocab.len() {
        let dst = &mut table.word[row * dims.word..(row + 1) * dims.word];
        match vectors.get(&row) {
            Some(v) => dst.copy_from_slice(v),
            None => {
                random_rows += 1;
                for v in dst.iter_mut() {
                    *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
                }
            }
        }
    }
    table.fill_positions(&mut rng);
    if vectors.is_empty() {
        log::warn!("embedding file provided no vectors for the vocabulary; all {random_rows} rows are random");
    } else if random_rows > 0 {
        log::info!("{random_rows} vocabulary rows missing from embedding file, randomly initialized");
    }
    Ok(table)
}

/// Embedding-row indices for one sentence after truncation to `l_max` tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceIndex {
    pub words: Vec<usize>,
    pub head_buckets: Vec<usize>,
    pub tail_buckets: Vec<usize>,
    pub l_max: usize,
}

impl SentenceIndex {
    /// Keeps the `l_max`-token window centred on the entity midpoint when the
    /// sentence is longer than `l_max`.
    pub fn new(instance: &Instance, l_max: usize) -> Self {
        let n = instance.tokens.len();
        let start = if n > l_max {
            let mid = (instance.head_pos + instance.tail_pos) / 2;
            mid.saturating_sub(l_max / 2).min(n - l_max)
        } else {
            0
        };
        let end = (start + l_max).min(n);
        let range = start..end;
        SentenceIndex {
            words: instance.tokens[range.clone()].to_vec(),
            head_buckets: range.clone().map(|t| rel_position_bucket(t, instance.head_pos)).collect(),
            tail_buckets: range.map(|t| rel_position_bucket(t, instance.tail_pos)).collect(),
            l_max,
        }
    }

    pub fn valid_length(&self) -> usize {
        self.words.len()
    }

    pub fn check_vocab(&self, vocab_len: usize) -> Result<(), FeatureError> {
        match self.words.iter().find(|&&w| w >= vocab_len) {
            Some(&index) => Err(FeatureError::CorruptVocab { index, size: vocab_len }),
            None => Ok(()),
        }
    }
}

/// `l_max` rows of `d_w + 2 d_p` values; rows from `valid_length` on are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceMatrix {
    pub data: Vec<f64>,
    pub width: usize,
    pub l_max: usize,
    pub valid_length: usize,
}

impl SentenceMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn from_index(sent: &SentenceIndex, table: &EmbeddingTable) -> Self {
        let dims = table.dims;
        let width = dims.row_width();
        let mut data = vec![0.0; sent.l_max * width];
        for t in 0..sent.valid_length() {
            let row = &mut data[t * width..(t + 1) * width];
            let w = sent.words[t];
            row[..dims.word].copy_from_slice(&table.word[w * dims.word..(w + 1) * dims.word]);
            let h = sent.head_buckets[t];
            row[dims.word..dims.word + dims.position]
                .copy_from_slice(&table.head_pos[h * dims.position..(h + 1) * dims.position]);
            let p = sent.tail_buckets[t];
            row[dims.word + dims.position..]
                .copy_from_slice(&table.tail_pos[p * dims.position..(p + 1) * dims.position]);
        }
        SentenceMatrix { data, width, l_max: sent.l_max, valid_length: sent.valid_length() }
    }
}

pub fn vectorize(
    instance: &Instance,
    table: &EmbeddingTable,
    l_max: usize,
) -> Result<SentenceMatrix, FeatureError> {
    let sent = SentenceIndex::new(instance, l_max);
    sent.check_vocab(table.vocab_len())?;
    Ok(SentenceMatrix::from_index(&sent, table))
}

/// Pre-indexed sentences for every instance of a dataset, addressed by id.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    sentences: Vec<SentenceIndex>,
}

impl FeatureStore {
    pub fn build(instances: &[Instance], vocab_len: usize, l_max: usize) -> Result<Self, FeatureError> {
        let sentences = instances
            .iter()
            .map(|inst| {
                let s = SentenceIndex::new(inst, l_max);
                s.check_vocab(vocab_len).map(|_| s)
            })
            .collect::<Result<_, _>>()?;
        Ok(FeatureStore { sentences })
    }

    pub fn get(&self, id: u64) -> &SentenceIndex {
        &self.sentences[id as usize]
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}
