//! Core library for studying next-token prediction with a linear decoder on
//! frozen context embeddings.
//!
//! The pipeline: sample or load a corpus of token sequences, collapse it to a
//! table of distinct contexts with empirical next-token distributions, then
//! analyze the geometry that the table induces on decoder space. That
//! geometry splits R^{V x d} into a span of support-difference directions and
//! its orthogonal complement; a finite minimizer component lives in the span
//! (when the log-odds system is solvable) and the divergent direction, when
//! one exists, is the hard-margin separator of in-support versus
//! out-of-support tokens in the complement. Gradient-descent and
//! norm-constrained training loops expose the convergence behaviour
//! empirically.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod feasibility;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod subspace;
pub mod svm;

pub use corpus::{
    aggregate, aggregate_autoregressive, aggregate_autoregressive_with_workers,
    aggregate_with_workers, generate_corpus, parse_table, read_corpus, read_table,
    synthesize_table, worker_count, write_corpus, write_table, ContextTable, Corpus,
    DistinctContext, EmbeddingSource, GenerateConfig, TableMode, TokenId,
};
pub use decoder::Decoder;
pub use error::{CoreError, Result};
pub use feasibility::{
    analyze, anchored_system, check_separability, overparam_check, solve_wstar, AnalyzeOptions,
    AnchoredSystem, CompatibilityResult, OverparamResult, SeparabilityResult, TableAnalysis,
};
pub use metrics::{
    alignment, ce, ce_gap, entropy, read_trace_csv, softmax, subspace_distance, write_trace_csv,
    TraceRow, TRACE_HEADER,
};
pub use optim::{
    compute_refs, grad_ce, read_regpath_csv, regpath, regpath_to_csv, smoothness_estimate, train,
    write_regpath_csv, Init, RegPathConfig, RegPathPoint, RegPathRow, TrainAlgo, TrainConfig,
    TrainRefs, TrainTrace, REGPATH_HEADER,
};
pub use subspace::{build_basis, read_basis, write_basis, SubspaceBasis};
pub use svm::{
    build_inequalities, margin_of, solve_svm, Certificate, InequalitySystem, MarginReport,
    SvmOptions, SvmSolution, SvmStatus,
};
