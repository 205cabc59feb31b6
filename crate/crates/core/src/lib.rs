//! Unsupervised constituency parsing from transformer attention heads.
//!
//! The pipeline ranks every attention head of a model by how well its
//! attention distributions support a low-cost binary bracketing, ensembles
//! the best heads into parse trees, evaluates those trees against a
//! treebank, and learns an anonymized PCFG from them.
//!
//! Modules follow the data flow:
//!
//! - [`attnstore`]: the `attn-corpus` file format holding per-head attention.
//! - [`chart`]: distance kernels, span scores and the min-cost CKY parser.
//! - [`ranking`]: the regularized head-ranking objective and K selection.
//! - [`ensemble`]: syntactic-distance merging of many per-head trees.
//! - [`treebank`]: bracketed treebank I/O, preprocessing and baselines.
//! - [`evaluation`]: unlabeled F1, label recall and many-to-one accuracy.
//! - [`pcfg`]: tabular PCFG trained with tree-constrained EM.

pub mod attnstore;
pub mod chart;
pub mod ensemble;
pub mod evaluation;
pub mod pcfg;
pub mod ranking;
pub mod tree;
pub mod treebank;

pub use attnstore::{AttnMatrix, CorpusHeader, HeadId, SentenceRecord};
pub use chart::{Composition, Distance, ScoreConfig};
pub use tree::{ParseTree, Span, TreeError};
