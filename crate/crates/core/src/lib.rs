//! Optimized class-label token sets for in-context classification.
//!
//! The pipeline: split a labeled dataset, score every candidate label token
//! after each labeling sentence ([`cache`]), search for the token assignment
//! that maximizes the summed log-softmax of the correct class ([`labelopt`]),
//! evaluate the resulting label sets with N in-context demonstrations
//! ([`eval`]), and summarize learning curves and rank correlations
//! ([`analytics`]). Models sit behind the [`gateway::LogitProvider`] trait.

pub mod analytics;
pub mod cache;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod labelopt;
pub mod util;

pub use cache::LogitMatrix;
pub use dataset::{Dataset, DatasetFormat, LabeledSentence, Split, SplitSpec};
pub use error::{Error, Result};
pub use eval::{AccuracyRecord, LabelSet, PromptTemplate, ShotSpec};
pub use gateway::{CandidateVocabulary, LogitProvider, ProviderCapabilities, TokenEntry};
pub use labelopt::{FitResult, LabelAssignment, OptimizeOptions};
