//! Corpus analysis toolkit that treats transformer self-attention as a
//! candidate feature-selection method.
//!
//! The crate extracts the most attended words from per-document attention
//! dumps, scores the vocabulary with four classical text-classification
//! feature selectors (chi-square, information gain, document frequency and
//! categorical proportional difference) and measures how the two relate:
//! top-k overlap, rank-biased overlap, fold stability, knowledge-graph domain
//! relevance and the accuracy of classifiers trained from scratch on each
//! feature set.
//!
//! Data-parallel loops (per-term scoring, per-record attention processing,
//! cross-validation jobs) run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Results are
//! identical either way: every parallel stage collects into index order
//! before reducing.

#![warn(missing_debug_implementations, rust_2018_idioms)]

pub mod attention;
pub mod classify;
pub mod corpus;
pub mod domainrel;
pub mod featsel;
pub mod format;
pub mod par;
pub mod pipeline;
pub mod rankcmp;
pub mod synth;

pub use attention::{AttendedVocabulary, AttentionRecord, WordAttentionMatrix};
pub use corpus::{Corpus, Document, FoldAssignment, LabelTaxonomy, TokenizationPolicy, Vocabulary};
pub use featsel::{ContingencyTable, Method, MethodTag, TermRanking, Weighting};
pub use rankcmp::{RboParams, RboResult, StabilityReport};
