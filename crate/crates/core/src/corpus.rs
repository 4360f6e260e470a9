//! Corpora of fixed-length token sequences and their reduction to
//! distinct-context tables.
//!
//! A corpus holds equal-length sequences over the vocabulary `{1, ..., V}`.
//! The first `T-1` tokens of a sequence form the context, the final token is
//! the prediction target. Aggregation groups sequences by distinct context
//! and records, per context: the empirical prior, the sorted support of
//! observed next tokens, their conditional frequencies, and an embedding
//! (looked up, or derived deterministically from the context tokens). The
//! autoregressive variant does this for every prefix length and flattens the
//! per-length tables into one, dividing priors by `T-1`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::io::{sha256_hex, JsonObj};

/// Token ids are 1-based: valid ids are `1..=V`.
pub type TokenId = u32;

const SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableMode {
    FixedLength,
    Autoregressive,
}

impl TableMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TableMode::FixedLength => "fixed-length",
            TableMode::Autoregressive => "autoregressive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed-length" => Ok(TableMode::FixedLength),
            "autoregressive" => Ok(TableMode::Autoregressive),
            other => Err(CoreError::Malformed(format!("unknown table mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub sequences: Vec<Vec<TokenId>>,
    pub vocab_size: u32,
    pub seq_len: usize,
    pub seed: Option<u64>,
    pub generator: Option<String>,
}

#[derive(Clone, Debug)]
pub struct DistinctContext {
    /// Context tokens, when the context came from a corpus.
    pub tokens: Option<Vec<TokenId>>,
    pub embedding: DVector<f64>,
    /// Empirical prior of this context.
    pub prior: f64,
    /// Sorted, strictly ascending token ids with nonzero next-token mass.
    pub support: Vec<TokenId>,
    /// Conditional probabilities aligned with `support`; positive, sum 1.
    pub probs: Vec<f64>,
}

impl DistinctContext {
    /// Anchor token: the smallest support element.
    pub fn anchor(&self) -> TokenId {
        self.support[0]
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    /// Probabilities scattered into a dense length-V vector.
    pub fn dense_probs(&self, vocab: usize) -> DVector<f64> {
        let mut p = DVector::zeros(vocab);
        for (k, &z) in self.support.iter().enumerate() {
            p[(z - 1) as usize] = self.probs[k];
        }
        p
    }
}

#[derive(Clone, Debug)]
pub struct ContextTable {
    pub vocab_size: u32,
    pub dim: usize,
    pub mode: TableMode,
    pub contexts: Vec<DistinctContext>,
}

fn kahan_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

impl ContextTable {
    pub fn new(
        vocab_size: u32,
        dim: usize,
        mode: TableMode,
        contexts: Vec<DistinctContext>,
    ) -> Result<Self> {
        let t = ContextTable {
            vocab_size,
            dim,
            mode,
            contexts,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    /// Number of anchored in-support pairs, summed over contexts.
    pub fn num_anchored_pairs(&self) -> usize {
        self.contexts.iter().map(|c| c.support_size() - 1).sum()
    }

    /// Number of (context, out-of-support token) pairs.
    pub fn num_inequality_rows(&self) -> usize {
        let v = self.vocab_size as usize;
        self.contexts.iter().map(|c| v - c.support_size()).sum()
    }

    pub fn max_embedding_norm(&self) -> f64 {
        self.contexts
            .iter()
            .map(|c| c.embedding.norm())
            .fold(0.0, f64::max)
    }

    /// Embeddings as columns of a d x m matrix.
    pub fn embedding_matrix(&self) -> DMatrix<f64> {
        let d = self.dim;
        let m = self.num_contexts();
        DMatrix::from_fn(d, m, |i, j| self.contexts[j].embedding[i])
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocab_size;
        if v < 2 {
            return Err(CoreError::InvalidTable("vocabulary must have V >= 2".into()));
        }
        if self.dim == 0 {
            return Err(CoreError::InvalidTable("embedding dimension must be >= 1".into()));
        }
        if self.contexts.is_empty() {
            return Err(CoreError::InvalidTable("no contexts".into()));
        }
        let prior_sum = kahan_sum(self.contexts.iter().map(|c| c.prior));
        if (prior_sum - 1.0).abs() > SUM_TOL {
            return Err(CoreError::InvalidTable(format!(
                "priors sum to {prior_sum}, expected 1"
            )));
        }
        let mut some_partial_support = false;
        for (j, c) in self.contexts.iter().enumerate() {
            if !(c.prior.is_finite() && c.prior >= 0.0) {
                return Err(CoreError::InvalidTable(format!("context {j}: bad prior")));
            }
            if c.support.is_empty() {
                return Err(CoreError::InvalidTable(format!("context {j}: empty support")));
            }
            if c.support.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CoreError::InvalidTable(format!(
                    "context {j}: support not strictly ascending"
                )));
            }
            if c.support.iter().any(|&z| z < 1 || z > v) {
                return Err(CoreError::InvalidTable(format!(
                    "context {j}: support token outside 1..={v}"
                )));
            }
            if c.probs.len() != c.support.len() {
                return Err(CoreError::InvalidTable(format!(
                    "context {j}: probs/support length mismatch"
                )));
            }
            if c.probs.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
                return Err(CoreError::InvalidTable(format!(
                    "context {j}: probabilities must be positive on the support"
                )));
            }
            let psum = kahan_sum(c.probs.iter().copied());
            if (psum - 1.0).abs() > SUM_TOL {
                return Err(CoreError::InvalidTable(format!(
                    "context {j}: probs sum to {psum}, expected 1"
                )));
            }
            if c.embedding.len() != self.dim {
                return Err(CoreError::InvalidTable(format!(
                    "context {j}: embedding has length {}, expected {}",
                    c.embedding.len(),
                    self.dim
                )));
            }
            if c.embedding.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::InvalidTable(format!(
                    "context {j}: non-finite embedding"
                )));
            }
            if let Some(tokens) = &c.tokens {
                if tokens.iter().any(|&z| z < 1 || z > v) {
                    return Err(CoreError::InvalidTable(format!(
                        "context {j}: context token outside 1..={v}"
                    )));
                }
            }
            if c.support.len() < v as usize {
                some_partial_support = true;
            }
        }
        if !some_partial_support {
            return Err(CoreError::InvalidTable(
                "every context has full support; at least one must omit some token".into(),
            ));
        }
        let with_tokens: Vec<&Vec<TokenId>> =
            self.contexts.iter().filter_map(|c| c.tokens.as_ref()).collect();
        let mut seen = HashSet::new();
        for t in with_tokens {
            if !seen.insert(t.as_slice()) {
                return Err(CoreError::InvalidTable(format!(
                    "duplicate context tokens {t:?}"
                )));
            }
        }
        Ok(())
    }

    /// Hash of the canonical serialized form (metadata-free).
    pub fn content_hash(&self) -> String {
        sha256_hex(table_to_string(self, &[]).as_bytes())
    }
}

impl Corpus {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 {
            return Err(CoreError::Malformed("corpus vocabulary must be >= 1".into()));
        }
        if self.seq_len < 2 {
            return Err(CoreError::Malformed(
                "sequences need at least one context token and one target".into(),
            ));
        }
        for (i, s) in self.sequences.iter().enumerate() {
            if s.len() != self.seq_len {
                return Err(CoreError::Malformed(format!(
                    "sequence {i} has length {}, expected {}",
                    s.len(),
                    self.seq_len
                )));
            }
            if s.iter().any(|&z| z < 1 || z > self.vocab_size) {
                return Err(CoreError::Malformed(format!(
                    "sequence {i} has a token outside 1..={}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Hash of the canonical serialized form (metadata-free).
    pub fn content_hash(&self) -> String {
        sha256_hex(self.canonical_string().as_bytes())
    }

    fn canonical_string(&self) -> String {
        let mut out = String::new();
        out.push_str(
            &JsonObj::new()
                .int("V", self.vocab_size as i64)
                .int("T", self.seq_len as i64)
                .render(),
        );
        out.push('\n');
        for s in &self.sequences {
            out.push_str(&JsonObj::new().int_array("tokens", s).render());
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------- generation

#[derive(Clone, Debug)]
pub struct GenerateConfig {
    /// Number of distinct contexts (m).
    pub contexts: usize,
    /// Embedding dimension (d).
    pub dim: usize,
    /// Vocabulary size (V).
    pub vocab: u32,
    /// Support size per context (S).
    pub support: usize,
    /// Number of sampled sequences (n).
    pub samples: usize,
    /// Sequence length (T); contexts have T-1 tokens.
    pub seq_len: usize,
    pub seed: u64,
}

fn capacity_at_least(vocab: u32, len: usize, want: usize) -> bool {
    let mut c: u128 = 1;
    for _ in 0..len {
        c = c.saturating_mul(vocab as u128);
        if c >= want as u128 {
            return true;
        }
    }
    c >= want as u128
}

fn sample_subset(rng: &mut ChaCha8Rng, vocab: u32, size: usize) -> Vec<TokenId> {
    let mut pool: Vec<TokenId> = (1..=vocab).collect();
    for i in 0..size {
        let k = rng.random_range(i..pool.len());
        pool.swap(i, k);
    }
    let mut chosen: Vec<TokenId> = pool[..size].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Dirichlet(1,...,1) via normalized unit exponentials.
fn sample_simplex(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..size)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        })
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn gaussian_embedding(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    DVector::from_iterator(
        dim,
        (0..dim).map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            x * scale
        }),
    )
}

/// Samples a synthetic corpus together with the generating (ground-truth)
/// table: uniform context priors, uniform random size-S supports, Dirichlet(1)
/// next-token distributions, N(0, 1/d) embeddings. Deterministic per seed.
pub fn generate_corpus(cfg: &GenerateConfig) -> Result<(Corpus, ContextTable)> {
    if cfg.vocab < 2 {
        return Err(CoreError::InvalidConfig("vocab must be >= 2".into()));
    }
    if cfg.support == 0 || cfg.support >= cfg.vocab as usize {
        return Err(CoreError::InvalidConfig(format!(
            "support size must satisfy 1 <= S < V (got S={}, V={})",
            cfg.support, cfg.vocab
        )));
    }
    if cfg.contexts == 0 {
        return Err(CoreError::InvalidConfig("need at least one context".into()));
    }
    if cfg.samples < cfg.contexts {
        return Err(CoreError::InvalidConfig(format!(
            "need at least as many samples as contexts (n={}, m={})",
            cfg.samples, cfg.contexts
        )));
    }
    if cfg.dim == 0 {
        return Err(CoreError::InvalidConfig("dim must be >= 1".into()));
    }
    if cfg.seq_len < 2 {
        return Err(CoreError::InvalidConfig("seq_len must be >= 2".into()));
    }
    if !capacity_at_least(cfg.vocab, cfg.seq_len - 1, cfg.contexts) {
        return Err(CoreError::InvalidConfig(format!(
            "cannot place {} distinct contexts of length {} over {} tokens",
            cfg.contexts,
            cfg.seq_len - 1,
            cfg.vocab
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.contexts;
    let mut used: HashSet<Vec<TokenId>> = HashSet::with_capacity(m);
    let mut contexts = Vec::with_capacity(m);
    let mut attempts: usize = 0;
    let attempt_cap = 1000 * m.max(8);
    for _ in 0..m {
        let tokens = loop {
            attempts += 1;
            if attempts > attempt_cap {
                return Err(CoreError::InvalidConfig(
                    "could not sample enough distinct contexts".into(),
                ));
            }
            let t: Vec<TokenId> = (0..cfg.seq_len - 1)
                .map(|_| rng.random_range(1..=cfg.vocab))
                .collect();
            if used.insert(t.clone()) {
                break t;
            }
        };
        let support = sample_subset(&mut rng, cfg.vocab, cfg.support);
        let probs = sample_simplex(&mut rng, cfg.support);
        let embedding = gaussian_embedding(&mut rng, cfg.dim);
        contexts.push(DistinctContext {
            tokens: Some(tokens),
            embedding,
            prior: 1.0 / m as f64,
            support,
            probs,
        });
    }

    let mut sequences = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let j = rng.random_range(0..m);
        let u: f64 = rng.random();
        let ctx = &contexts[j];
        let mut z = *ctx.support.last().expect("non-empty support");
        let mut acc = 0.0;
        for (k, &p) in ctx.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                z = ctx.support[k];
                break;
            }
        }
        let mut seq = ctx.tokens.clone().expect("generated context has tokens");
        seq.push(z);
        sequences.push(seq);
    }

    let corpus = Corpus {
        sequences,
        vocab_size: cfg.vocab,
        seq_len: cfg.seq_len,
        seed: Some(cfg.seed),
        generator: Some("uniform-context/dirichlet-next".into()),
    };
    let table = ContextTable::new(cfg.vocab, cfg.dim, TableMode::FixedLength, contexts)?;
    Ok((corpus, table))
}

// --------------------------------------------------------------- aggregation

#[derive(Clone, Debug)]
pub enum EmbeddingSource {
    /// Look embeddings up by context tokens.
    Lookup(HashMap<Vec<TokenId>, DVector<f64>>),
    /// Derive each embedding from a hash of (seed, context tokens): the
    /// embedding depends only on the context content, never on encounter
    /// order, so shuffling a corpus cannot change it.
    Seeded { dim: usize, seed: u64 },
}

impl EmbeddingSource {
    pub fn seeded(dim: usize, seed: u64) -> Self {
        EmbeddingSource::Seeded { dim, seed }
    }

    /// Builds a lookup source from a table whose contexts all carry tokens.
    pub fn lookup_from_table(table: &ContextTable) -> Result<Self> {
        let mut map = HashMap::with_capacity(table.num_contexts());
        for c in &table.contexts {
            let tokens = c
                .tokens
                .clone()
                .ok_or_else(|| CoreError::InvalidTable("context without tokens cannot seed a lookup".into()))?;
            map.insert(tokens, c.embedding.clone());
        }
        Ok(EmbeddingSource::Lookup(map))
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            EmbeddingSource::Lookup(map) => map.values().next().map(|v| v.len()),
            EmbeddingSource::Seeded { dim, .. } => Some(*dim),
        }
    }

    fn embed(&self, tokens: &[TokenId]) -> Result<DVector<f64>> {
        match self {
            EmbeddingSource::Lookup(map) => map
                .get(tokens)
                .cloned()
                .ok_or_else(|| CoreError::MissingEmbedding(tokens.to_vec())),
            EmbeddingSource::Seeded { dim, seed } => {
                let mut hasher = Sha256::new();
                hasher.update(seed.to_le_bytes());
                hasher.update(b"ctx");
                hasher.update((tokens.len() as u64).to_le_bytes());
                for &t in tokens {
                    hasher.update(t.to_le_bytes());
                }
                let digest: [u8; 32] = hasher.finalize().into();
                let mut rng = ChaCha8Rng::from_seed(digest);
                Ok(gaussian_embedding(&mut rng, *dim))
            }
        }
    }
}

/// Worker cap: `NTP_BIAS_THREADS` when set to a positive integer, otherwise
/// the machine's available parallelism.
pub fn worker_count() -> usize {
    if let Ok(s) = std::env::var("NTP_BIAS_THREADS") {
        if let Ok(n) = s.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Groups sequences by their length-`prefix_len` prefix and counts next
/// tokens. Context order is first appearance in the corpus; counting is
/// chunked over `workers` threads and merged by integer sums, so the result
/// does not depend on the worker count.
fn count_next_tokens(
    sequences: &[Vec<TokenId>],
    prefix_len: usize,
    vocab: usize,
    workers: usize,
) -> (Vec<Vec<TokenId>>, Vec<Vec<u64>>) {
    let mut index: HashMap<&[TokenId], usize> = HashMap::new();
    let mut order: Vec<Vec<TokenId>> = Vec::new();
    for s in sequences {
        let prefix = &s[..prefix_len];
        if !index.contains_key(prefix) {
            index.insert(prefix, order.len());
            order.push(prefix.to_vec());
        }
    }

    let m = order.len();
    let workers = workers.clamp(1, sequences.len().max(1));
    let chunk_size = sequences.len().div_ceil(workers);
    let mut counts = vec![vec![0u64; vocab]; m];
    if chunk_size == 0 {
        return (order, counts);
    }
    let chunk_results: Vec<Vec<Vec<u64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sequences
            .chunks(chunk_size)
            .map(|chunk| {
                let index = &index;
                scope.spawn(move || {
                    let mut local = vec![vec![0u64; vocab]; m];
                    for s in chunk {
                        let j = index[&s[..prefix_len]];
                        let z = s[prefix_len] as usize - 1;
                        local[j][z] += 1;
                    }
                    local
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("counting worker")).collect()
    });
    for local in chunk_results {
        for (j, row) in local.into_iter().enumerate() {
            for (z, c) in row.into_iter().enumerate() {
                counts[j][z] += c;
            }
        }
    }
    (order, counts)
}

fn contexts_from_counts(
    order: Vec<Vec<TokenId>>,
    counts: Vec<Vec<u64>>,
    prior_denom: f64,
    prior_scale: f64,
    source: &EmbeddingSource,
) -> Result<Vec<DistinctContext>> {
    let mut out = Vec::with_capacity(order.len());
    for (tokens, row) in order.into_iter().zip(counts) {
        let total: u64 = row.iter().sum();
        let mut support = Vec::new();
        let mut probs = Vec::new();
        for (z, &c) in row.iter().enumerate() {
            if c > 0 {
                support.push((z + 1) as TokenId);
                probs.push(c as f64 / total as f64);
            }
        }
        let embedding = source.embed(&tokens)?;
        out.push(DistinctContext {
            tokens: Some(tokens),
            embedding,
            prior: (total as f64 / prior_denom) * prior_scale,
            support,
            probs,
        });
    }
    Ok(out)
}

/// Fixed-length aggregation with an explicit worker cap.
pub fn aggregate_with_workers(
    corpus: &Corpus,
    source: &EmbeddingSource,
    workers: usize,
) -> Result<ContextTable> {
    corpus.validate()?;
    if corpus.sequences.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    let dim = source
        .dim()
        .ok_or_else(|| CoreError::InvalidConfig("embedding source has no dimension".into()))?;
    let (order, counts) = count_next_tokens(
        &corpus.sequences,
        corpus.seq_len - 1,
        corpus.vocab_size as usize,
        workers,
    );
    let contexts = contexts_from_counts(
        order,
        counts,
        corpus.sequences.len() as f64,
        1.0,
        source,
    )?;
    ContextTable::new(corpus.vocab_size, dim, TableMode::FixedLength, contexts)
}

/// Groups sequences by their full `T-1`-token context and estimates the
/// conditional next-token distribution per distinct context.
pub fn aggregate(corpus: &Corpus, source: &EmbeddingSource) -> Result<ContextTable> {
    aggregate_with_workers(corpus, source, worker_count())
}

/// Autoregressive aggregation: one sub-table per prefix length `t` in
/// `1..=T-1`, flattened into a single table with priors divided by `T-1`.
/// Also returns the per-length conditional entropies as a diagnostic.
pub fn aggregate_autoregressive(
    corpus: &Corpus,
    source: &EmbeddingSource,
) -> Result<(ContextTable, Vec<f64>)> {
    aggregate_autoregressive_with_workers(corpus, source, worker_count())
}

pub fn aggregate_autoregressive_with_workers(
    corpus: &Corpus,
    source: &EmbeddingSource,
    workers: usize,
) -> Result<(ContextTable, Vec<f64>)> {
    corpus.validate()?;
    if corpus.sequences.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    let dim = source
        .dim()
        .ok_or_else(|| CoreError::InvalidConfig("embedding source has no dimension".into()))?;
    let n = corpus.sequences.len() as f64;
    let levels = corpus.seq_len - 1;
    let mut contexts = Vec::new();
    let mut per_length_entropy = Vec::with_capacity(levels);
    for t in 1..=levels {
        let (order, counts) = count_next_tokens(
            &corpus.sequences,
            t,
            corpus.vocab_size as usize,
            workers,
        );
        let mut h_t = 0.0;
        for row in &counts {
            let total: u64 = row.iter().sum();
            let weight = total as f64 / n;
            for &c in row {
                if c > 0 {
                    let p = c as f64 / total as f64;
                    h_t -= weight * p * p.ln();
                }
            }
        }
        per_length_entropy.push(h_t);
        contexts.extend(contexts_from_counts(
            order,
            counts,
            n,
            1.0 / levels as f64,
            source,
        )?);
    }
    let table = ContextTable::new(
        corpus.vocab_size,
        dim,
        TableMode::Autoregressive,
        contexts,
    )?;
    Ok((table, per_length_entropy))
}

// ----------------------------------------------------------------- synthesis

/// Builds a table directly from explicit supports, probabilities and priors.
/// Missing embeddings are derived deterministically from `(seed, index)`.
pub fn synthesize_table(
    vocab: u32,
    dim: usize,
    supports: Vec<Vec<TokenId>>,
    probs: Vec<Vec<f64>>,
    priors: Vec<f64>,
    embeddings: Option<Vec<Vec<f64>>>,
    seed: u64,
) -> Result<ContextTable> {
    let m = supports.len();
    if probs.len() != m || priors.len() != m {
        return Err(CoreError::InvalidConfig(
            "supports, probs and priors must have equal length".into(),
        ));
    }
    if let Some(e) = &embeddings {
        if e.len() != m {
            return Err(CoreError::InvalidConfig(
                "embeddings must match the number of contexts".into(),
            ));
        }
    }
    let mut contexts = Vec::with_capacity(m);
    for j in 0..m {
        let embedding = match &embeddings {
            Some(e) => DVector::from_vec(e[j].clone()),
            None => {
                let mut hasher = Sha256::new();
                hasher.update(seed.to_le_bytes());
                hasher.update(b"syn");
                hasher.update((j as u64).to_le_bytes());
                let digest: [u8; 32] = hasher.finalize().into();
                let mut rng = ChaCha8Rng::from_seed(digest);
                gaussian_embedding(&mut rng, dim)
            }
        };
        contexts.push(DistinctContext {
            tokens: None,
            embedding,
            prior: priors[j],
            support: supports[j].clone(),
            probs: probs[j].clone(),
        });
    }
    ContextTable::new(vocab, dim, TableMode::FixedLength, contexts)
}

// ------------------------------------------------------------------- file io

/// Corpus file: JSONL with a `{"V":..,"T":..}` header line (plus seed and
/// generator metadata when known), then one `{"tokens":[..]}` object per
/// sequence.
pub fn corpus_to_string(c: &Corpus) -> String {
    let mut header = JsonObj::new()
        .int("V", c.vocab_size as i64)
        .int("T", c.seq_len as i64);
    if let Some(seed) = c.seed {
        header = header.int("seed", seed as i64);
    }
    if let Some(g) = &c.generator {
        header = header.str("generator", g);
    }
    let mut out = header.render();
    out.push('\n');
    for s in &c.sequences {
        out.push_str(&JsonObj::new().int_array("tokens", s).render());
        out.push('\n');
    }
    out
}

pub fn write_corpus(c: &Corpus, path: &Path) -> Result<()> {
    c.validate()?;
    std::fs::write(path, corpus_to_string(c))?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| CoreError::Malformed("corpus file is empty".into()))?;
    let header: serde_json::Value = serde_json::from_str(header_line)?;
    let vocab_size = header
        .get("V")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CoreError::Malformed("corpus header missing integer V".into()))?
        as u32;
    let seq_len = header
        .get("T")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CoreError::Malformed("corpus header missing integer T".into()))?
        as usize;
    let seed = header.get("seed").and_then(|v| v.as_u64());
    let generator = header
        .get("generator")
        .and_then(|v| v.as_str())
        .map(|s| s.to_string());

    #[derive(Deserialize)]
    struct LineDto {
        tokens: Vec<TokenId>,
    }
    let mut sequences = Vec::new();
    for line in lines {
        let dto: LineDto = serde_json::from_str(line)?;
        sequences.push(dto.tokens);
    }
    let corpus = Corpus {
        sequences,
        vocab_size,
        seq_len,
        seed,
        generator,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Table file: one JSON object. `extras` are extra top-level keys (already
/// rendered) appended after the core schema; the canonical form used for
/// hashing passes none.
pub fn table_to_string(t: &ContextTable, extras: &[(&str, String)]) -> String {
    let mut ctx_lines: Vec<String> = Vec::with_capacity(t.contexts.len());
    for c in &t.contexts {
        let mut obj = JsonObj::new()
            .num("pi", c.prior)
            .int_array("support", &c.support)
            .num_array("probs", &c.probs)
            .num_array("embedding", c.embedding.as_slice());
        if let Some(tokens) = &c.tokens {
            obj = obj.int_array("tokens", tokens);
        }
        ctx_lines.push(obj.render());
    }
    format!(
        "{{\"V\":{},\"d\":{},\"mode\":\"{}\",\n\"contexts\":[\n{}\n]{}}}\n",
        t.vocab_size,
        t.dim,
        t.mode.as_str(),
        ctx_lines.join(",\n"),
        extras
            .iter()
            .map(|(k, v)| format!(",\n\"{k}\":{v}"))
            .collect::<Vec<_>>()
            .join("")
    )
}

pub fn write_table(t: &ContextTable, path: &Path) -> Result<()> {
    t.validate()?;
    std::fs::write(path, table_to_string(t, &[]))?;
    Ok(())
}

pub fn read_table(path: &Path) -> Result<ContextTable> {
    let text = std::fs::read_to_string(path)?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<ContextTable> {
    #[derive(Deserialize)]
    struct CtxDto {
        pi: f64,
        support: Vec<TokenId>,
        probs: Vec<f64>,
        embedding: Vec<f64>,
        #[serde(default)]
        tokens: Option<Vec<TokenId>>,
    }
    #[derive(Deserialize)]
    struct TableDto {
        #[serde(rename = "V")]
        v: u32,
        d: usize,
        mode: String,
        contexts: Vec<CtxDto>,
    }
    let dto: TableDto = serde_json::from_str(text)?;
    let contexts = dto
        .contexts
        .into_iter()
        .map(|c| DistinctContext {
            tokens: c.tokens,
            embedding: DVector::from_vec(c.embedding),
            prior: c.pi,
            support: c.support,
            probs: c.probs,
        })
        .collect();
    ContextTable::new(dto.v, dto.d, TableMode::parse(&dto.mode)?, contexts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus(sequences: Vec<Vec<TokenId>>, vocab: u32, seq_len: usize) -> Corpus {
        Corpus {
            sequences,
            vocab_size: vocab,
            seq_len,
            seed: None,
            generator: None,
        }
    }

    #[test]
    fn aggregate_counts_single_context() {
        // Four sequences sharing one context; next tokens 1,1,1,2.
        let corpus = tiny_corpus(
            vec![vec![5, 1], vec![5, 1], vec![5, 1], vec![5, 2]],
            5,
            2,
        );
        let table = aggregate_with_workers(&corpus, &EmbeddingSource::seeded(3, 0), 1).unwrap();
        assert_eq!(table.num_contexts(), 1);
        let c = &table.contexts[0];
        assert_eq!(c.prior, 1.0);
        assert_eq!(c.support, vec![1, 2]);
        assert_eq!(c.probs, vec![0.75, 0.25]);
        assert_eq!(c.tokens.as_deref(), Some(&[5][..]));
    }

    #[test]
    fn aggregate_priors_three_to_one() {
        let corpus = tiny_corpus(
            vec![vec![1, 2], vec![1, 2], vec![1, 2], vec![3, 1]],
            3,
            2,
        );
        let table = aggregate_with_workers(&corpus, &EmbeddingSource::seeded(2, 1), 1).unwrap();
        assert_eq!(table.num_contexts(), 2);
        assert_eq!(table.contexts[0].prior, 0.75);
        assert_eq!(table.contexts[1].prior, 0.25);
    }

    #[test]
    fn aggregate_rejects_empty_and_ragged() {
        let empty = tiny_corpus(vec![], 3, 2);
        assert!(matches!(
            aggregate_with_workers(&empty, &EmbeddingSource::seeded(2, 0), 1),
            Err(CoreError::EmptyCorpus)
        ));
        let ragged = tiny_corpus(vec![vec![1, 2], vec![1, 2, 3]], 3, 2);
        assert!(aggregate_with_workers(&ragged, &EmbeddingSource::seeded(2, 0), 1).is_err());
        let out_of_range = tiny_corpus(vec![vec![1, 4]], 3, 2);
        assert!(aggregate_with_workers(&out_of_range, &EmbeddingSource::seeded(2, 0), 1).is_err());
    }

    #[test]
    fn aggregate_worker_count_does_not_change_result() {
        let cfg = GenerateConfig {
            contexts: 8,
            dim: 4,
            vocab: 6,
            support: 3,
            samples: 200,
            seq_len: 4,
            seed: 11,
        };
        let (corpus, _) = generate_corpus(&cfg).unwrap();
        let src = EmbeddingSource::seeded(4, 99);
        let t1 = aggregate_with_workers(&corpus, &src, 1).unwrap();
        let t3 = aggregate_with_workers(&corpus, &src, 3).unwrap();
        assert_eq!(t1.num_contexts(), t3.num_contexts());
        for (a, b) in t1.contexts.iter().zip(&t3.contexts) {
            assert_eq!(a.prior.to_bits(), b.prior.to_bits());
            assert_eq!(a.support, b.support);
            assert_eq!(a.probs, b.probs);
            assert_eq!(
                a.embedding.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.embedding.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn aggregate_is_permutation_invariant_up_to_context_order() {
        let cfg = GenerateConfig {
            contexts: 6,
            dim: 3,
            vocab: 5,
            support: 2,
            samples: 120,
            seq_len: 3,
            seed: 5,
        };
        let (corpus, _) = generate_corpus(&cfg).unwrap();
        let mut shuffled = corpus.clone();
        shuffled.sequences.reverse();
        let src = EmbeddingSource::seeded(3, 7);
        let a = aggregate_with_workers(&corpus, &src, 2).unwrap();
        let b = aggregate_with_workers(&shuffled, &src, 2).unwrap();
        let key = |c: &DistinctContext| c.tokens.clone().unwrap();
        let mut ca = a.contexts.clone();
        let mut cb = b.contexts.clone();
        ca.sort_by_key(&key);
        cb.sort_by_key(&key);
        assert_eq!(ca.len(), cb.len());
        for (x, y) in ca.iter().zip(&cb) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.prior.to_bits(), y.prior.to_bits());
            assert_eq!(x.support, y.support);
            assert_eq!(x.probs, y.probs);
            assert_eq!(
                x.embedding.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.embedding.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn aggregated_supports_are_subsets_of_ground_truth() {
        let cfg = GenerateConfig {
            contexts: 10,
            dim: 4,
            vocab: 8,
            support: 3,
            samples: 60,
            seq_len: 3,
            seed: 21,
        };
        let (corpus, truth) = generate_corpus(&cfg).unwrap();
        let src = EmbeddingSource::lookup_from_table(&truth).unwrap();
        let table = aggregate_with_workers(&corpus, &src, 1).unwrap();
        for c in &table.contexts {
            let truth_ctx = truth
                .contexts
                .iter()
                .find(|t| t.tokens == c.tokens)
                .expect("every observed context was generated");
            for z in &c.support {
                assert!(
                    truth_ctx.support.contains(z),
                    "sampled token {z} outside generating support"
                );
            }
        }
    }

    #[test]
    fn autoregressive_flattens_prefix_levels() {
        let corpus = tiny_corpus(vec![vec![1, 2, 3]], 4, 3);
        let (table, h) =
            aggregate_autoregressive_with_workers(&corpus, &EmbeddingSource::seeded(2, 3), 1)
                .unwrap();
        assert_eq!(table.mode, TableMode::Autoregressive);
        assert_eq!(table.num_contexts(), 2);
        assert_eq!(table.contexts[0].tokens.as_deref(), Some(&[1][..]));
        assert_eq!(table.contexts[0].support, vec![2]);
        assert_eq!(table.contexts[0].prior, 0.5);
        assert_eq!(table.contexts[1].tokens.as_deref(), Some(&[1, 2][..]));
        assert_eq!(table.contexts[1].support, vec![3]);
        assert_eq!(table.contexts[1].prior, 0.5);
        assert_eq!(h, vec![0.0, 0.0]);
    }

    #[test]
    fn autoregressive_priors_always_sum_to_one() {
        let cfg = GenerateConfig {
            contexts: 5,
            dim: 3,
            vocab: 4,
            support: 2,
            samples: 80,
            seq_len: 4,
            seed: 9,
        };
        let (corpus, _) = generate_corpus(&cfg).unwrap();
        let (table, h) =
            aggregate_autoregressive_with_workers(&corpus, &EmbeddingSource::seeded(3, 1), 2)
                .unwrap();
        let sum: f64 = table.contexts.iter().map(|c| c.prior).sum();
        assert!((sum - 1.0).abs() < 1e-12, "prior sum {sum}");
        assert_eq!(h.len(), corpus.seq_len - 1);
        assert!(h.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn generate_shapes_and_determinism() {
        let cfg = GenerateConfig {
            contexts: 12,
            dim: 5,
            vocab: 7,
            support: 3,
            samples: 100,
            seq_len: 4,
            seed: 42,
        };
        let (c1, t1) = generate_corpus(&cfg).unwrap();
        let (c2, t2) = generate_corpus(&cfg).unwrap();
        assert_eq!(c1.sequences.len(), 100);
        assert!(c1.sequences.iter().all(|s| s.len() == 4));
        assert_eq!(t1.num_contexts(), 12);
        for ctx in &t1.contexts {
            assert_eq!(ctx.support.len(), 3);
            assert_eq!(ctx.embedding.len(), 5);
            let s: f64 = ctx.probs.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(c1.sequences, c2.sequences);
        for (a, b) in t1.contexts.iter().zip(&t2.contexts) {
            assert_eq!(
                a.embedding.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.embedding.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn generate_rejects_bad_configs() {
        let base = GenerateConfig {
            contexts: 3,
            dim: 2,
            vocab: 4,
            support: 2,
            samples: 10,
            seq_len: 3,
            seed: 0,
        };
        let mut c = base.clone();
        c.support = 4;
        assert!(generate_corpus(&c).is_err(), "S = V must be rejected");
        let mut c = base.clone();
        c.support = 5;
        assert!(generate_corpus(&c).is_err(), "S > V must be rejected");
        let mut c = base.clone();
        c.samples = 2;
        assert!(generate_corpus(&c).is_err(), "n < m must be rejected");
        let mut c = base.clone();
        c.seq_len = 1;
        assert!(generate_corpus(&c).is_err(), "T < 2 must be rejected");
        let mut c = base;
        c.vocab = 2;
        c.support = 1;
        c.contexts = 3;
        c.seq_len = 2;
        // Only two distinct length-1 contexts exist over two tokens.
        assert!(generate_corpus(&c).is_err());
    }

    #[test]
    fn synthesize_validates_simplex() {
        let ok = synthesize_table(
            3,
            2,
            vec![vec![1, 2], vec![2]],
            vec![vec![0.5, 0.5], vec![1.0]],
            vec![0.5, 0.5],
            None,
            7,
        );
        assert!(ok.is_ok());
        let bad_probs = synthesize_table(
            3,
            2,
            vec![vec![1, 2]],
            vec![vec![0.6, 0.6]],
            vec![1.0],
            None,
            7,
        );
        assert!(bad_probs.is_err());
        let bad_priors = synthesize_table(
            3,
            2,
            vec![vec![1, 2], vec![2]],
            vec![vec![0.5, 0.5], vec![1.0]],
            vec![0.7, 0.7],
            None,
            7,
        );
        assert!(bad_priors.is_err());
    }

    #[test]
    fn standing_assumption_requires_a_partial_support() {
        let full = synthesize_table(
            2,
            2,
            vec![vec![1, 2]],
            vec![vec![0.5, 0.5]],
            vec![1.0],
            None,
            0,
        );
        assert!(full.is_err(), "a lone full-support context must be rejected");
        let one_hot = synthesize_table(
            2,
            2,
            vec![vec![1], vec![2]],
            vec![vec![1.0], vec![1.0]],
            vec![0.5, 0.5],
            None,
            0,
        );
        assert!(one_hot.is_ok());
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let cfg = GenerateConfig {
            contexts: 4,
            dim: 2,
            vocab: 5,
            support: 2,
            samples: 20,
            seq_len: 3,
            seed: 13,
        };
        let (corpus, _) = generate_corpus(&cfg).unwrap();
        write_corpus(&corpus, &path).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back.sequences, corpus.sequences);
        assert_eq!(back.vocab_size, corpus.vocab_size);
        assert_eq!(back.seq_len, corpus.seq_len);
        assert_eq!(back.seed, corpus.seed);
        assert_eq!(back.generator, corpus.generator);
    }

    #[test]
    fn table_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.json");
        let cfg = GenerateConfig {
            contexts: 6,
            dim: 4,
            vocab: 6,
            support: 3,
            samples: 90,
            seq_len: 3,
            seed: 3,
        };
        let (corpus, _) = generate_corpus(&cfg).unwrap();
        let table = aggregate_with_workers(&corpus, &EmbeddingSource::seeded(4, 8), 1).unwrap();
        write_table(&table, &path).unwrap();
        let back = read_table(&path).unwrap();
        assert_eq!(back.vocab_size, table.vocab_size);
        assert_eq!(back.dim, table.dim);
        assert_eq!(back.mode, table.mode);
        assert_eq!(back.num_contexts(), table.num_contexts());
        for (a, b) in table.contexts.iter().zip(&back.contexts) {
            assert_eq!(a.prior.to_bits(), b.prior.to_bits());
            assert_eq!(a.support, b.support);
            assert_eq!(
                a.probs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.probs.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(
                a.embedding.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.embedding.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(a.tokens, b.tokens);
        }
        assert_eq!(back.content_hash(), table.content_hash());
    }

    #[test]
    fn content_hash_tracks_content() {
        let t1 = synthesize_table(
            3,
            2,
            vec![vec![1, 2]],
            vec![vec![0.5, 0.5]],
            vec![1.0],
            Some(vec![vec![1.0, 0.0]]),
            0,
        )
        .unwrap();
        let mut t2 = t1.clone();
        assert_eq!(t1.content_hash(), t2.content_hash());
        t2.contexts[0].probs = vec![0.25, 0.75];
        assert_ne!(t1.content_hash(), t2.content_hash());
    }

    #[test]
    fn lookup_source_reports_missing_contexts() {
        let truth = synthesize_table(
            3,
            2,
            vec![vec![1, 2]],
            vec![vec![0.5, 0.5]],
            vec![1.0],
            None,
            1,
        )
        .unwrap();
        // Synthesized contexts carry no tokens, so a lookup cannot be built.
        assert!(EmbeddingSource::lookup_from_table(&truth).is_err());

        let mut map = HashMap::new();
        map.insert(vec![1u32], DVector::from_vec(vec![1.0, 0.0]));
        let src = EmbeddingSource::Lookup(map);
        let corpus = tiny_corpus(vec![vec![2, 1]], 3, 2);
        let err = aggregate_with_workers(&corpus, &src, 1);
        assert!(matches!(err, Err(CoreError::MissingEmbedding(_))));
    }
}
