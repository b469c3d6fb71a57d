//! Accuracy auditing for entity-linking corpora.
//!
//! Triples (mention → concept links) are partitioned into label-based strata
//! and surface-form clusters, sampled with stratified two-stage weighted
//! cluster sampling, judged by an annotator, and turned into a corpus-level
//! accuracy estimate with a normal-approximation confidence interval. The
//! [`cost`] module models annotation time under context switches and
//! simulates a simple-random-sampling baseline.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod batch;
pub mod corpus;
pub mod cost;
pub mod estimation;
pub mod judgments;
pub mod rng;
pub mod sampling;
pub mod simulate;
pub mod synthetic;

pub use batch::{
    generate_static_batch, generate_static_batch_with, Batch, BatchEntry, BatchError, BatchHeader, StratumInfo,
};
pub use corpus::{
    build_corpus, load_corpus_file, normalize_surface, parse_corpus_file, Cluster, ClusterId, ConceptLink, Corpus,
    CorpusError, Location, Mention, StratificationScheme, Stratum, Triple,
};
pub use estimation::{
    recompute_on_cluster_complete, stwcs_aggregate, EstimateReport, EstimatorConfig, Judgment, JudgmentLog,
    StratumEstimate, Verdict,
};
pub use judgments::JudgmentsFile;
pub use rng::RandomSource;
pub use sampling::{DesignKind, Labeler, SampleUnit, SamplerState, SamplingDesign, SamplingError};
