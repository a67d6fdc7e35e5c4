//! Offline changepoint detection in the topic proportions of a time-ordered
//! text corpus.
//!
//! Topics are fitted once with LDA on two interleaved thirds of the corpus;
//! each remaining document is reduced to a topic-count vector, and changes in
//! the Dirichlet prior over topic proportions are located with a midpoint
//! likelihood-ratio statistic under the Pólya (Dirichlet-multinomial) model,
//! size-dependent permutation thresholds, and a modified wild binary
//! segmentation.

pub mod calibrate;
pub mod corpus;
pub mod cpstat;
pub mod error;
pub mod eval;
pub mod lda;
pub mod lsa;
pub mod polya;
pub mod segment;
pub mod synthgen;
pub mod special;
pub mod topics;

pub use error::{Error, Result};
