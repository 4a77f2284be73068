//! Document-modifying players.
//!
//! An [`Agent`] receives the competition history visible before the round
//! it is playing and returns the text it submits for that round. LLM bots
//! render a prompt bundle and call a chat model; the remaining agents are
//! static players, a greedy sentence-replacement baseline, a copy-the-winner
//! oracle and scripted stand-ins for human players.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{CompetitionLog, DocVersion, PlayerKind, Query, RoundRanking};
use crate::prompts::{build_context, PromptBundle, PromptConfig, PromptError};
use crate::rankers::{RankError, RankingFunction};
use crate::services::{fnv1a, GenerationRequest, LlmClient, ServiceError};
use crate::text::{sentences, truncate_to_sentences, word_count, TextError, WORD_CAP};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("generation was empty after {attempts} attempt(s)")]
    EmptyGeneration { attempts: u32 },
    #[error("over-length generation could not be truncated: {0}")]
    Untruncatable(#[from] TextError),
    #[error("{0}")]
    Domain(String),
}

/// How an outcome was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeTrace {
    Static,
    Prompt(Box<PromptBundle>),
    SentReplace(SentReplaceTrace),
    CopyTop {
        doc_id: String,
        round: u32,
    },
    Replay {
        round: u32,
        found: bool,
    },
    Shuffle,
    /// A scripted player rewrote the sentence at this index.
    Rewrite {
        sentence: usize,
    },
}

/// Which sentence pair the baseline swapped, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct SentReplaceTrace {
    /// (index in the current document, index in the past winner).
    pub replaced: Option<(usize, usize)>,
    pub score_before: f64,
    pub score_after: f64,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutcome {
    pub new_text: String,
    pub attempts: u32,
    pub truncated: bool,
    pub trace: OutcomeTrace,
}

impl AgentOutcome {
    /// A single-attempt, untruncated outcome.
    pub fn plain(new_text: String, trace: OutcomeTrace) -> Self {
        Self {
            new_text,
            attempts: 1,
            truncated: false,
            trace,
        }
    }
}

/// What an agent sees when producing its document for `round`.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub log: &'a CompetitionLog,
    pub query: &'a Query,
    /// The player's latest version (from round `round - 1`).
    pub current_doc: &'a DocVersion,
    pub round: u32,
}

impl AgentContext<'_> {
    pub fn last_ranking(&self) -> Result<&RoundRanking, AgentError> {
        let prev = self
            .round
            .checked_sub(1)
            .filter(|r| *r >= 1)
            .ok_or_else(|| {
                AgentError::Domain(format!("round {} has no previous ranking", self.round))
            })?;
        self.log.ranking(&self.query.query_id, prev).ok_or_else(|| {
            AgentError::Domain(format!(
                "query {} has no ranking for round {prev}",
                self.query.query_id
            ))
        })
    }
}

pub trait Agent: Send + Sync {
    /// Group label used in reports.
    fn label(&self) -> String;
    fn kind(&self) -> PlayerKind;
    fn modify(&self, ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError>;
}

/// Submits the same text every round.
pub fn static_modify(current_doc: &DocVersion) -> AgentOutcome {
    AgentOutcome::plain(current_doc.text.clone(), OutcomeTrace::Static)
}

/// Replaces the document with the previous winner's text, capped at the
/// word limit.
pub fn copy_top_modify(
    current_doc: &DocVersion,
    last_ranking: &RoundRanking,
    log: &CompetitionLog,
) -> Result<AgentOutcome, AgentError> {
    let top = last_ranking
        .top()
        .ok_or_else(|| AgentError::Domain("last ranking is empty".into()))?;
    if top == current_doc.doc_id && current_doc.round == last_ranking.round {
        return Ok(AgentOutcome::plain(
            current_doc.text.clone(),
            OutcomeTrace::CopyTop {
                doc_id: top.to_string(),
                round: last_ranking.round,
            },
        ));
    }
    let winner = log
        .version(&last_ranking.query_id, last_ranking.round, top)
        .ok_or_else(|| AgentError::Domain(format!("winner {top} missing from log")))?;
    let capped = truncate_to_sentences(&winner.text, WORD_CAP)?;
    let truncated = capped != winner.text.trim();
    Ok(AgentOutcome {
        new_text: capped,
        attempts: 1,
        truncated,
        trace: OutcomeTrace::CopyTop {
            doc_id: top.to_string(),
            round: last_ranking.round,
        },
    })
}

/// Greedy sentence-replacement baseline: tries every swap of one current
/// sentence for one sentence of the past winner and keeps the swap the
/// ranker scores highest, provided it strictly beats the unmodified
/// document. Ties go to the smallest (current, winner) index pair.
pub fn sent_replace_modify(
    current_doc: &DocVersion,
    past_winner: &DocVersion,
    ranker: &dyn RankingFunction,
    query: &Query,
) -> Result<AgentOutcome, AgentError> {
    let current = sentences(&current_doc.text);
    if current.len() < 2 {
        return Err(AgentError::Domain(format!(
            "document {} has {} sentence(s); the baseline needs at least 2",
            current_doc.doc_id,
            current.len()
        )));
    }
    let winner = sentences(&past_winner.text);
    if winner.is_empty() {
        return Err(AgentError::Domain("past winner is empty".into()));
    }

    let mut pairs = Vec::new();
    let mut texts = vec![current_doc.text.clone()];
    for i in 0..current.len() {
        for (j, replacement) in winner.iter().enumerate() {
            let edited: Vec<&str> = current
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    if k == i {
                        replacement.as_str()
                    } else {
                        s.as_str()
                    }
                })
                .collect();
            let edited = edited.join(" ");
            if word_count(&edited) <= WORD_CAP {
                pairs.push((i, j));
                texts.push(edited);
            }
        }
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let scores = ranker.score_all(&query.text, &refs)?;
    let before = scores[0];
    let mut best: Option<usize> = None;
    for idx in 0..pairs.len() {
        let score = scores[idx + 1];
        let threshold = best.map_or(before, |b| scores[b + 1]);
        if score > threshold {
            best = Some(idx);
        }
    }
    let trace = SentReplaceTrace {
        replaced: best.map(|b| pairs[b]),
        score_before: before,
        score_after: best.map_or(before, |b| scores[b + 1]),
        candidates: pairs.len(),
    };
    let new_text = match best {
        Some(b) => texts[b + 1].clone(),
        None => current_doc.text.clone(),
    };
    Ok(AgentOutcome::plain(
        new_text,
        OutcomeTrace::SentReplace(trace),
    ))
}

pub const DEFAULT_MAX_RETRIES: u32 = 2;

/// Renders the prompt for `config`, asks the client for an edit, and
/// enforces the word cap: over-length or empty generations are retried up
/// to `max_retries` times, after which the last over-length response is
/// cut back to whole sentences.
pub fn llm_bot_modify(
    config: &PromptConfig,
    ctx: &AgentContext<'_>,
    client: &dyn LlmClient,
    max_retries: u32,
) -> Result<AgentOutcome, AgentError> {
    let bundle = build_context(config, ctx.log, ctx.query, ctx.current_doc, ctx.round)?;
    let request = GenerationRequest {
        system_text: bundle.shared_part.clone(),
        user_text: bundle.context_part.clone(),
        temperature: config.temperature,
        max_retries,
    };
    generate_capped(&request, client, bundle)
}

fn generate_capped(
    request: &GenerationRequest,
    client: &dyn LlmClient,
    bundle: PromptBundle,
) -> Result<AgentOutcome, AgentError> {
    let mut attempts = 0u32;
    let mut overlong: Option<String> = None;
    while attempts <= request.max_retries {
        attempts += 1;
        let response = client.generate(request)?;
        let text = response.trim();
        if text.is_empty() {
            continue;
        }
        if word_count(text) <= WORD_CAP {
            return Ok(AgentOutcome {
                new_text: text.to_string(),
                attempts,
                truncated: false,
                trace: OutcomeTrace::Prompt(Box::new(bundle)),
            });
        }
        overlong = Some(text.to_string());
    }
    match overlong {
        Some(text) => Ok(AgentOutcome {
            new_text: truncate_to_sentences(&text, WORD_CAP)?,
            attempts,
            truncated: true,
            trace: OutcomeTrace::Prompt(Box::new(bundle)),
        }),
        None => Err(AgentError::EmptyGeneration { attempts }),
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StaticAgent;

impl Agent for StaticAgent {
    fn label(&self) -> String {
        "static".into()
    }

    fn kind(&self) -> PlayerKind {
        PlayerKind::StaticDoc
    }

    fn modify(&self, ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError> {
        Ok(static_modify(ctx.current_doc))
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CopyTopAgent;

impl Agent for CopyTopAgent {
    fn label(&self) -> String {
        "copy_top".into()
    }

    fn kind(&self) -> PlayerKind {
        PlayerKind::MockBot
    }

    fn modify(&self, ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError> {
        copy_top_modify(ctx.current_doc, ctx.last_ranking()?, ctx.log)
    }
}

#[derive(Clone)]
pub struct SentReplaceAgent {
    ranker: Arc<dyn RankingFunction>,
}

impl SentReplaceAgent {
    pub fn new(ranker: Arc<dyn RankingFunction>) -> Self {
        Self { ranker }
    }
}

impl Agent for SentReplaceAgent {
    fn label(&self) -> String {
        "sent_replace".into()
    }

    fn kind(&self) -> PlayerKind {
        PlayerKind::SentReplaceBaseline
    }

    fn modify(&self, ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError> {
        let ranking = ctx.last_ranking()?;
        let top = ranking.top().expect("validated rankings are non-empty");
        let winner = ctx
            .log
            .version(&ranking.query_id, ranking.round, top)
            .ok_or_else(|| AgentError::Domain(format!("winner {top} missing from log")))?;
        sent_replace_modify(ctx.current_doc, winner, self.ranker.as_ref(), ctx.query)
    }
}

#[derive(Clone)]
pub struct LlmBot {
    name: String,
    config: PromptConfig,
    client: Arc<dyn LlmClient>,
    max_retries: u32,
}

impl LlmBot {
    pub fn new(config: PromptConfig, client: Arc<dyn LlmClient>) -> Self {
        Self {
            name: config.label(),
            config,
            client,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }
}

impl Agent for LlmBot {
    fn label(&self) -> String {
        self.name.clone()
    }

    fn kind(&self) -> PlayerKind {
        PlayerKind::LlmBot
    }

    fn modify(&self, ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError> {
        llm_bot_modify(&self.config, ctx, self.client.as_ref(), self.max_retries)
    }
}

/// Replays a recorded player: submits the text the same doc_id had in
/// `source` for the round being played, or keeps the current text when the
/// recording has no such version.
#[derive(Debug, Clone)]
pub struct ReplayAgent {
    source: Arc<CompetitionLog>,
}

impl ReplayAgent {
    pub fn new(source: Arc<CompetitionLog>) -> Self {
        Self { source }
    }
}

impl Agent for ReplayAgent {
    fn label(&self) -> String {
        "student".into()
    }

    fn kind(&self) -> PlayerKind {
        PlayerKind::Student
    }

    fn modify(&self, ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError> {
        let recorded = self
            .source
            .version(&ctx.query.query_id, ctx.round, &ctx.current_doc.doc_id);
        let text = recorded.map_or_else(|| ctx.current_doc.text.clone(), |v| v.text.clone());
        let capped = truncate_to_sentences(&text, WORD_CAP)?;
        Ok(AgentOutcome {
            truncated: capped != text.trim(),
            new_text: capped,
            attempts: 1,
            trace: OutcomeTrace::Replay {
                round: ctx.round,
                found: recorded.is_some(),
            },
        })
    }
}

/// Scripted student: reorders the sentences of its document with a
/// generator seeded by (seed, doc_id, round).
#[derive(Debug, Clone, Copy, Default)]
pub struct ShuffleAgent {
    pub seed: u64,
}

impl Agent for ShuffleAgent {
    fn label(&self) -> String {
        "student".into()
    }

    fn kind(&self) -> PlayerKind {
        PlayerKind::Student
    }

    fn modify(&self, ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError> {
        let mix = format!("{}\u{1f}{}", ctx.current_doc.doc_id, ctx.round);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(mix.as_bytes()));
        let mut parts = sentences(&ctx.current_doc.text);
        parts.shuffle(&mut rng);
        Ok(AgentOutcome::plain(parts.join(" "), OutcomeTrace::Shuffle))
    }
}
