//! Visual speech recognition toolkit.
//!
//! Implements a complete lipreading stack: appearance features (2-D DCT
//! with zigzag truncation, PCA Eigenlips), the feature transform pipeline
//! (speaker mean normalization, deltas, splicing, LDA, MLLT, fMLLR),
//! staged GMM-HMM training with tree-based state tying and speaker
//! adaptive training, hybrid DNN-HMM modeling with RBM pretraining,
//! WFST decoding with lattice generation and LM rescoring, and
//! phoneme-vs-viseme lexicon analysis. A synthetic ROI-sequence
//! generator provides desk-scale corpora for end-to-end experiments.

pub mod corpus;
pub mod decoder;
pub mod dnn;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod gmmhmm;
pub mod io;
pub mod lexicon;
pub mod recipe;
pub mod transforms;

pub use error::{Error, Result};
