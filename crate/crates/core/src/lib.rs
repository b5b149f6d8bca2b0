pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod kg;
pub mod linker;
pub mod matchnet;
pub mod text;

pub use corpus::{gen_corpus, gen_kg, generate, GenConfig, Generated};
pub use embed::{FeatureTables, SkipGramConfig};
pub use error::{Error, Result};
pub use eval::{run_ablation, train_matcher, EvalConfig, EvalReport, LabeledText, NegativeSampling, TimingReport};
pub use kg::{Entity, EntityKind, KnowledgeGraph, RelationType, Triple};
pub use linker::{LinkResult, Linker, LinkerVariant};
pub use matchnet::{MatchModel, MatchModelConfig, ModelOptions, Optimizer};
pub use text::{segment, Lexicon, PosTag, Token};
