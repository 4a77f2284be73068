//! Ranking-competition harness: LLM-driven and baseline document
//! modification agents, the rankers they compete under, and the measures
//! used to evaluate them (rank promotion, faithfulness, significance).

pub mod agents;
pub mod competition;
pub mod corpus;
pub mod metrics;
pub mod prompts;
pub mod rankers;
pub mod services;
pub mod synth;
pub mod text;

pub use corpus::{
    load_competition_log, CompetitionLog, CorpusSnapshot, DocVersion, PlayerKind, Query,
    RoundRanking,
};
pub use metrics::{FaithMode, FaithfulnessReport, PromotionReport};
pub use prompts::{ContextType, PromptBundle, PromptConfig};
pub use rankers::{RankedList, RankingFunction};
