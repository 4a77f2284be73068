//! Prompt construction for LLM document-modification bots.
//!
//! Every prompt has a shared task description (sent as the system message)
//! and a context part (sent as the user message) that exposes past rankings
//! in one of four shapes. Pairwise and Listwise contexts follow their
//! published layouts character for character; Pointwise and Temporal reuse
//! the same labeling idiom.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CompetitionLog, DocVersion, Query, RoundRanking};
use crate::services::fnv1a;
use crate::text::median_word_length;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("invalid prompt configuration: {0}")]
    Config(String),
    #[error("query {query_id}: context needs {needed} past round(s) before round {round}, only {available} available")]
    InsufficientHistory {
        query_id: String,
        round: u32,
        needed: u32,
        available: u32,
    },
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextType {
    Pointwise,
    Pairwise,
    Listwise,
    Temporal,
}

impl ContextType {
    pub const ALL: [ContextType; 4] = [
        Self::Pointwise,
        Self::Pairwise,
        Self::Listwise,
        Self::Temporal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pointwise => "pointwise",
            Self::Pairwise => "pairwise",
            Self::Listwise => "listwise",
            Self::Temporal => "temporal",
        }
    }
}

/// How the two documents of a Pairwise example are drawn from a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Random,
    TopPlusRandom,
}

/// One point of the prompt configuration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub context_type: ContextType,
    pub num_queries: u8,
    pub examples_per_query: u8,
    pub include_current_rank: bool,
    pub include_query_at_hand: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_mode: Option<PairMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_depth: Option<u8>,
    pub temperature: f64,
    pub seed: u64,
}

pub const NUM_QUERIES: [u8; 2] = [1, 2];
pub const EXAMPLES_PER_QUERY: [u8; 3] = [1, 2, 3];
pub const TEMPORAL_DEPTHS: [u8; 2] = [2, 3];
pub const PAIR_MODES: [PairMode; 2] = [PairMode::Random, PairMode::TopPlusRandom];
pub const TEMPERATURES: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
pub const DEFAULT_SEED: u64 = 0;

impl PromptConfig {
    /// Pairwise bot: the query at hand only, one random pair from each of
    /// the last three rankings, no current rank, temperature 0.5.
    pub fn best_pairwise() -> Self {
        Self {
            context_type: ContextType::Pairwise,
            num_queries: 1,
            examples_per_query: 3,
            include_current_rank: false,
            include_query_at_hand: true,
            pair_mode: Some(PairMode::Random),
            temporal_depth: None,
            temperature: 0.5,
            seed: DEFAULT_SEED,
        }
    }

    /// Listwise bot: the query at hand only, the last two rankings, no
    /// current rank, temperature 0.
    pub fn best_listwise() -> Self {
        Self {
            context_type: ContextType::Listwise,
            num_queries: 1,
            examples_per_query: 2,
            include_current_rank: false,
            include_query_at_hand: true,
            pair_mode: None,
            temporal_depth: None,
            temperature: 0.0,
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::Config(m));
        if self.num_queries == 0 {
            return bad("num_queries must be at least 1".into());
        }
        if self.examples_per_query == 0 {
            return bad("examples_per_query must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        match (self.context_type, self.pair_mode) {
            (ContextType::Pairwise, None) => return bad("pairwise config needs pair_mode".into()),
            (ContextType::Pairwise, Some(_)) | (_, None) => {}
            (other, Some(_)) => {
                return bad(format!("{} config must not set pair_mode", other.as_str()))
            }
        }
        match (self.context_type, self.temporal_depth) {
            (ContextType::Temporal, None) => {
                return bad("temporal config needs temporal_depth".into())
            }
            (ContextType::Temporal, Some(0)) => {
                return bad("temporal_depth must be at least 1".into())
            }
            (ContextType::Temporal, Some(_)) | (_, None) => {}
            (other, Some(_)) => {
                return bad(format!(
                    "{} config must not set temporal_depth",
                    other.as_str()
                ))
            }
        }
        Ok(())
    }

    /// Number of past rounds the context draws from.
    pub fn history_needed(&self) -> u32 {
        match self.context_type {
            ContextType::Temporal => u32::from(self.temporal_depth.unwrap_or(1)),
            _ => u32::from(self.examples_per_query),
        }
    }

    /// Compact, unique, filesystem-safe name for this configuration.
    pub fn label(&self) -> String {
        let mut s = format!(
            "{}-q{}-e{}-r{}-h{}",
            self.context_type.as_str(),
            self.num_queries,
            self.examples_per_query,
            u8::from(self.include_current_rank),
            u8::from(self.include_query_at_hand),
        );
        match self.pair_mode {
            Some(PairMode::Random) => s.push_str("-random"),
            Some(PairMode::TopPlusRandom) => s.push_str("-top"),
            None => {}
        }
        if let Some(d) = self.temporal_depth {
            s.push_str(&format!("-d{d}"));
        }
        s.push_str(&format!("-t{}", self.temperature));
        s
    }
}

/// (query_id, round, doc_id) of a document quoted in a context part.
pub type ProvenanceEntry = (String, u32, String);

/// The rendered prompt pair plus what went into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub shared_part: String,
    pub context_part: String,
    pub config: PromptConfig,
    pub provenance: Vec<ProvenanceEntry>,
}

/// The task description with query, candidate document and target length
/// filled in.
pub fn render_shared(query: &Query, current_doc: &DocVersion, median_len: usize) -> String {
    format!(
        "Edit the candidate document to improve its search engine ranking for the candidate query, \
aiming for the highest rank (1 being the highest). Use the black box search engine's past rankings \
over various queries, provided as context by the user, to guide your edits. Focus on editing the \
most impactful sentences to enhance ranking potential. Target an edited document length of around \
{median_len} words, not exceeding 150 words. Ensure the edited document is very similar to the \
candidate document. Generate only the edited document, without additional comments or titles.\n\
Input:\n\
- Candidate Query: {query}\n\
- Candidate Document: {document}\n",
        query = query.text,
        document = current_doc.text,
    )
}

/// "latest", "second to latest", ... for the ranking `back` rounds ago
/// (1 = latest).
pub fn ordinal_ranking(back: u32) -> String {
    const ORDINALS: [&str; 10] = [
        "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
        "eleventh",
    ];
    match back {
        0 | 1 => "latest".to_string(),
        n if (n as usize) <= ORDINALS.len() + 1 => {
            format!("{} to latest", ORDINALS[n as usize - 2])
        }
        n => format!("{n}th to latest"),
    }
}

struct ContextBuilder<'a> {
    log: &'a CompetitionLog,
    round: u32,
    provenance: Vec<ProvenanceEntry>,
    quoted: Vec<&'a str>,
}

impl<'a> ContextBuilder<'a> {
    fn ranking(&self, query_id: &str, back: u32) -> Result<&'a RoundRanking, PromptError> {
        let round = self.round - back;
        self.log.ranking(query_id, round).ok_or_else(|| {
            PromptError::Domain(format!("query {query_id} has no ranking for round {round}"))
        })
    }

    fn quote(&mut self, query_id: &str, round: u32, doc_id: &str) -> Result<&'a str, PromptError> {
        let v = self.log.version(query_id, round, doc_id).ok_or_else(|| {
            PromptError::Domain(format!("missing version of {doc_id} in round {round}"))
        })?;
        self.provenance
            .push((query_id.to_string(), round, doc_id.to_string()));
        self.quoted.push(v.text.as_str());
        Ok(v.text.as_str())
    }
}

/// Consecutive ranked rounds immediately before `round`.
fn available_history(log: &CompetitionLog, query_id: &str, round: u32) -> u32 {
    (1..round)
        .rev()
        .take_while(|r| log.ranking(query_id, *r).is_some())
        .count() as u32
}

fn rng_for(config: &PromptConfig, query: &Query, doc: &DocVersion, round: u32) -> ChaCha8Rng {
    let mix = format!("{}\u{1f}{}\u{1f}{}", query.query_id, doc.doc_id, round);
    ChaCha8Rng::seed_from_u64(config.seed ^ fnv1a(mix.as_bytes()))
}

/// Builds the context part for `current_doc` competing in `round`, using
/// only rankings from earlier rounds, and renders the matching shared part.
pub fn build_context(
    config: &PromptConfig,
    log: &CompetitionLog,
    query: &Query,
    current_doc: &DocVersion,
    round: u32,
) -> Result<PromptBundle, PromptError> {
    config.validate()?;
    if round < 2 {
        return Err(PromptError::Domain(format!(
            "round {round} has no history; contexts need round >= 2"
        )));
    }
    let needed = config.history_needed();
    let available = available_history(log, &query.query_id, round);
    if available < needed && config.include_query_at_hand {
        return Err(PromptError::InsufficientHistory {
            query_id: query.query_id.clone(),
            round,
            needed,
            available,
        });
    }

    let mut rng = rng_for(config, query, current_doc, round);

    let mut selected: Vec<&Query> = Vec::new();
    if config.include_query_at_hand {
        selected.push(query);
    }
    let slots = usize::from(config.num_queries) - selected.len();
    if slots > 0 {
        let others: Vec<&Query> = log
            .queries()
            .filter(|q| q.query_id != query.query_id)
            .filter(|q| available_history(log, &q.query_id, round) >= needed)
            .collect();
        if others.len() < slots {
            return Err(PromptError::Domain(format!(
                "need {slots} other quer{} with {needed} past round(s), found {}",
                if slots == 1 { "y" } else { "ies" },
                others.len()
            )));
        }
        let mut picks = index::sample(&mut rng, others.len(), slots).into_vec();
        picks.sort_unstable();
        selected.extend(picks.into_iter().map(|i| others[i]));
    }

    let mut builder = ContextBuilder {
        log,
        round,
        provenance: Vec::new(),
        quoted: Vec::new(),
    };

    let mut context = String::new();
    match config.context_type {
        ContextType::Pointwise => {
            let mut blocks = Vec::new();
            for q in &selected {
                for back in 1..=needed {
                    let ranking = builder.ranking(&q.query_id, back)?;
                    let (top, rank) = ranking.entries[0].clone();
                    let text = builder.quote(&q.query_id, ranking.round, &top)?;
                    blocks.push(format!(
                        "\n\nquery: {}\n\n* document: {}\n\n{} ranking: {}",
                        q.text,
                        text,
                        ordinal_ranking(back),
                        rank
                    ));
                }
            }
            context.push_str(&blocks.join("\n\n\n"));
        }
        ContextType::Pairwise => {
            let mode = config.pair_mode.expect("validated");
            let mut blocks = Vec::new();
            for q in &selected {
                for back in 1..=needed {
                    let ranking = builder.ranking(&q.query_id, back)?;
                    if ranking.len() < 2 {
                        return Err(PromptError::Domain(format!(
                            "ranking of query {} in round {} has fewer than two documents",
                            q.query_id, ranking.round
                        )));
                    }
                    let (i, j) = match mode {
                        PairMode::Random => {
                            let pick = index::sample(&mut rng, ranking.len(), 2);
                            (pick.index(0), pick.index(1))
                        }
                        PairMode::TopPlusRandom => (0, rng.gen_range(1..ranking.len())),
                    };
                    let (first, second) = (i.min(j), i.max(j));
                    let ord = ordinal_ranking(back);
                    let mut block = format!("\n\nquery: {}", q.text);
                    for (pos, idx) in [first, second].into_iter().enumerate() {
                        let (doc_id, rank) = &ranking.entries[idx];
                        let text = builder.quote(&q.query_id, ranking.round, doc_id)?;
                        if pos > 0 {
                            block.push('\n');
                        }
                        block.push_str(&format!("\n\n* document: {text}\n\n{ord} ranking: {rank}"));
                    }
                    blocks.push(block);
                }
            }
            context.push_str(&blocks.join("\n\n\n"));
        }
        ContextType::Listwise => {
            for q in &selected {
                context.push_str(&format!("\n\nquery: {}\n\n", q.text));
                for back in 1..=needed {
                    let ranking = builder.ranking(&q.query_id, back)?;
                    let ord = ordinal_ranking(back);
                    if back == 1 {
                        context.push_str(&format!(
                            "* documents ordered by {ord} ranking from highest to lowest in relation to the query: "
                        ));
                        for (doc_id, _) in &ranking.entries {
                            if q.query_id == query.query_id && *doc_id == current_doc.doc_id {
                                continue;
                            }
                            let text = builder.quote(&q.query_id, ranking.round, doc_id)?;
                            context.push_str(&format!("\n\n\n* {text}"));
                        }
                    } else {
                        context.push_str(&format!(
                            "\n\n\n\n\n\n * documents ranked by {ord} ranking from highest to lowest in relation to the query:"
                        ));
                        for (pos, (doc_id, _)) in ranking.entries.iter().enumerate() {
                            let text = builder.quote(&q.query_id, ranking.round, doc_id)?;
                            context.push_str(&format!("\n{}. {text}", pos + 1));
                        }
                    }
                }
                context.push_str("\n\n\n\n");
            }
        }
        ContextType::Temporal => {
            let mut blocks = Vec::new();
            for q in &selected {
                let latest = builder.ranking(&q.query_id, 1)?;
                let tracked: Vec<&String> = latest
                    .entries
                    .iter()
                    .map(|(d, _)| d)
                    .filter(|d| {
                        (1..=needed).all(|back| {
                            log.ranking(&q.query_id, round - back)
                                .is_some_and(|r| r.rank_of(d).is_some())
                        })
                    })
                    .collect();
                let mut chosen: Vec<&String> = Vec::new();
                let mut pool = tracked.clone();
                if q.query_id == query.query_id {
                    if let Some(pos) = pool.iter().position(|d| **d == current_doc.doc_id) {
                        chosen.push(pool.remove(pos));
                    }
                }
                let want = usize::from(config.examples_per_query).saturating_sub(chosen.len());
                if pool.len() + chosen.len() < usize::from(config.examples_per_query) {
                    return Err(PromptError::Domain(format!(
                        "query {} has only {} document(s) present in the last {needed} rounds",
                        q.query_id,
                        tracked.len()
                    )));
                }
                if want > 0 {
                    let mut picks = index::sample(&mut rng, pool.len(), want).into_vec();
                    picks.sort_unstable();
                    chosen.extend(picks.into_iter().map(|i| pool[i]));
                }
                for doc_id in chosen {
                    let mut block = format!(
                        "\n\nquery: {}\n\n* versions of the same document and their rankings, from latest to oldest:",
                        q.text
                    );
                    for back in 1..=needed {
                        let ranking = builder.ranking(&q.query_id, back)?;
                        let rank = ranking.rank_of(doc_id).expect("filtered above");
                        let text = builder.quote(&q.query_id, ranking.round, doc_id)?;
                        block.push_str(&format!(
                            "\n\n\n* document: {text}\n\n{} ranking: {rank}",
                            ordinal_ranking(back)
                        ));
                    }
                    blocks.push(block);
                }
            }
            context.push_str(&blocks.join("\n\n\n"));
        }
    }

    if config.include_current_rank {
        let rank = log
            .ranking(&query.query_id, round - 1)
            .and_then(|r| r.rank_of(&current_doc.doc_id))
            .or(current_doc.rank);
        if let Some(rank) = rank {
            context.push_str(&format!("\n\ncandidate document latest ranking: {rank}"));
        }
    }

    let median = median_word_length(builder.quoted.iter().copied())
        .map_err(|e| PromptError::Domain(e.to_string()))?;
    Ok(PromptBundle {
        shared_part: render_shared(query, current_doc, median),
        context_part: context,
        config: config.clone(),
        provenance: builder.provenance,
    })
}

/// Per-factor breakdown of the configuration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub count: usize,
    pub prompts_without_temperature: usize,
    pub formula: String,
    pub per_context: BTreeMap<String, usize>,
    pub factors: BTreeMap<String, Vec<String>>,
}

/// Every configuration of the documented factor domains, with the default
/// sampling seed.
pub fn enumerate_grid() -> Vec<PromptConfig> {
    enumerate_grid_with_seed(DEFAULT_SEED)
}

pub fn enumerate_grid_with_seed(seed: u64) -> Vec<PromptConfig> {
    let mut out = Vec::new();
    for context_type in ContextType::ALL {
        let pair_modes: Vec<Option<PairMode>> = match context_type {
            ContextType::Pairwise => PAIR_MODES.iter().copied().map(Some).collect(),
            _ => vec![None],
        };
        let depths: Vec<Option<u8>> = match context_type {
            ContextType::Temporal => TEMPORAL_DEPTHS.iter().copied().map(Some).collect(),
            _ => vec![None],
        };
        for num_queries in NUM_QUERIES {
            for examples_per_query in EXAMPLES_PER_QUERY {
                for include_current_rank in [false, true] {
                    for include_query_at_hand in [true, false] {
                        for pair_mode in &pair_modes {
                            for temporal_depth in &depths {
                                for temperature in TEMPERATURES {
                                    out.push(PromptConfig {
                                        context_type,
                                        num_queries,
                                        examples_per_query,
                                        include_current_rank,
                                        include_query_at_hand,
                                        pair_mode: *pair_mode,
                                        temporal_depth: *temporal_depth,
                                        temperature,
                                        seed,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn grid_manifest() -> GridManifest {
    let grid = enumerate_grid();
    let mut per_context = BTreeMap::new();
    for c in &grid {
        *per_context
            .entry(c.context_type.as_str().to_string())
            .or_insert(0) += 1;
    }
    let shared = NUM_QUERIES.len() * EXAMPLES_PER_QUERY.len() * 2 * 2;
    let per_temperature = shared * (1 + PAIR_MODES.len() + 1 + TEMPORAL_DEPTHS.len());
    let factors = BTreeMap::from([
        (
            "context_type".to_string(),
            ContextType::ALL
                .iter()
                .map(|c| c.as_str().to_string())
                .collect(),
        ),
        (
            "num_queries".to_string(),
            NUM_QUERIES.iter().map(u8::to_string).collect(),
        ),
        (
            "examples_per_query".to_string(),
            EXAMPLES_PER_QUERY.iter().map(u8::to_string).collect(),
        ),
        (
            "include_current_rank".to_string(),
            vec!["false".into(), "true".into()],
        ),
        (
            "include_query_at_hand".to_string(),
            vec!["true".into(), "false".into()],
        ),
        (
            "pair_mode (pairwise only)".to_string(),
            vec!["random".into(), "top_plus_random".into()],
        ),
        (
            "temporal_depth (temporal only)".to_string(),
            TEMPORAL_DEPTHS.iter().map(u8::to_string).collect(),
        ),
        (
            "temperature".to_string(),
            TEMPERATURES.iter().map(f64::to_string).collect(),
        ),
    ]);
    GridManifest {
        count: grid.len(),
        prompts_without_temperature: per_temperature,
        formula: format!(
            "num_queries({}) x examples_per_query({}) x include_current_rank(2) x include_query_at_hand(2) \
x [pointwise(1) + pairwise: pair_mode({}) + listwise(1) + temporal: temporal_depth({})] x temperature({}) = {}",
            NUM_QUERIES.len(),
            EXAMPLES_PER_QUERY.len(),
            PAIR_MODES.len(),
            TEMPORAL_DEPTHS.len(),
            TEMPERATURES.len(),
            per_temperature * TEMPERATURES.len()
        ),
        per_context,
        factors,
    }
}
