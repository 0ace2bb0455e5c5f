//! Metaphor detection toolkit.
//!
//! The crate covers the whole pipeline: loading the MOH, TroFi and LCC
//! benchmark files, subword tokenization and input encoding, a transformer
//! encoder written against `ndarray` with hand-derived backward passes, the
//! three task formulations (word-level classification, sentence-level
//! classification and sequential labeling), training, k-fold cross
//! validation with F1 scoring, CLS attention export, and the re-annotation
//! workflow (revision log, agreement statistics, majority-vote merging).

pub mod annotation;
pub mod attention;
pub mod data;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
