//! Extraction benchmark core: synthetic corpora with planted canaries, an
//! n-gram target model, candidate-suffix decoders, membership classifiers,
//! and the evaluation/reporting pipeline that ties them together.

pub mod attack;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod game;
pub mod lm;
pub mod mia;
pub mod report;
pub mod seeds;

pub use attack::{AttackConfig, AttackReport, ClassifierChoice};
pub use corpus::{Canary, Corpus, CorpusSpec, ExtractionSample, TokenId, Vocab};
pub use decoding::{DecodeParams, Generation, Strategy};
pub use error::{Error, Result};
pub use eval::{BudgetBase, ConfusionMatrix, Metrics, RankedItem};
pub use game::{Adversary, GameOutcome, GameTranscript};
pub use lm::{LanguageModel, NGramModel};
