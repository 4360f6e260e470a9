//! Benchmark-only crate; see benches/pipeline.rs.

use ntp_bias_core::{aggregate, generate_corpus, ContextTable, EmbeddingSource, GenerateConfig};

/// The 50-context reference table every benchmark operates on.
pub fn reference_table(seed: u64) -> ContextTable {
    let cfg = GenerateConfig {
        contexts: 50,
        dim: 60,
        vocab: 10,
        support: 6,
        samples: 5000,
        seq_len: 3,
        seed,
    };
    let (corpus, _) = generate_corpus(&cfg).expect("generation succeeds");
    aggregate(&corpus, &EmbeddingSource::seeded(60, seed)).expect("aggregation succeeds")
}
