//! Evaluation protocols.
//!
//! * Offline: for one round of a recorded competition, every non-top
//!   document is modified by the agent under test and ranked against the
//!   recorded next-round versions of the other players.
//! * Online: a simulated multi-round competition in which every player
//!   edits simultaneously and the ranker induces each round's ranking.
//!
//! Both produce [`EvalRow`]s, which [`aggregate`] turns into grouped means
//! and pairwise significance tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentContext, AgentError, AgentOutcome};
use crate::corpus::{
    history_upto, CompetitionLog, CorpusError, CorpusSnapshot, DocVersion, PlayerKind, Query,
};
use crate::metrics::{
    corpus_faithfulness_indexed, majority_grade, orig_faith, permutation_test, scaled_promotion,
    CorpusFaithOptions, FaithMode, FaithfulnessReport, MetricError, ProbeChoice, PromotionReport,
    DEFAULT_K,
};
use crate::rankers::{
    rank_documents, RankError, RankedList, RankingFunction, Representation, SnapshotIndex,
};
use crate::services::{EmbeddingProvider, EntailmentScorer, ServiceError};

#[derive(Debug, Error)]
pub enum CompetitionError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("{0}")]
    Domain(String),
}

impl CompetitionError {
    /// True when the failure came from an external service rather than from
    /// the data or configuration.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Self::Rank(RankError::Provider { .. })
                | Self::Metric(MetricError::Service(_))
                | Self::Metric(MetricError::Rank(RankError::Provider { .. }))
        )
    }
}

/// Which history the corpus-faithfulness snapshot covers when evaluating
/// round `r` offline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotScope {
    /// Rounds `<= r` (includes the originals of the modified round).
    #[default]
    ThroughRound,
    /// Rounds `< r`.
    BeforeRound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    pub mode: FaithMode,
    pub probe: ProbeChoice,
    pub snapshot: SnapshotScope,
    /// Also emit rows for the other players of each induced ranking.
    pub include_peers: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            mode: FaithMode::Thresholded,
            probe: ProbeChoice::Current,
            snapshot: SnapshotScope::ThroughRound,
            include_peers: true,
        }
    }
}

/// The services an evaluation run needs.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub ranker: &'a dyn RankingFunction,
    pub scorer: &'a dyn EntailmentScorer,
    pub embedder: &'a dyn EmbeddingProvider,
    pub options: EvalOptions,
}

impl Evaluator<'_> {
    /// OrigFaith plus corpus faithfulness in both representations.
    /// Prepares `snapshot` for repeated searches in both representations.
    pub fn index<'s>(&self, snapshot: &'s CorpusSnapshot) -> Result<SnapshotIndex<'s>, RankError> {
        SnapshotIndex::new(snapshot)?.with_dense(self.embedder)
    }

    pub fn faithfulness(
        &self,
        current: &DocVersion,
        modified: &DocVersion,
        index: &SnapshotIndex<'_>,
    ) -> Result<FaithfulnessReport, MetricError> {
        let orig = orig_faith(
            &current.text,
            &modified.text,
            self.scorer,
            self.options.mode,
        )?;
        let cf = CorpusFaithOptions {
            k: self.options.k,
            mode: self.options.mode,
            probe: self.options.probe,
        };
        let sparse = corpus_faithfulness_indexed(
            current,
            modified,
            index,
            Representation::Sparse,
            self.scorer,
            cf,
        )?;
        let dense = corpus_faithfulness_indexed(
            current,
            modified,
            index,
            Representation::Dense(self.embedder),
            self.scorer,
            cf,
        )?;
        Ok(FaithfulnessReport {
            rf_raw: orig.rf_raw,
            orig_faith: orig.normalized,
            sparse,
            dense,
            k: self.options.k,
            mode: self.options.mode,
        })
    }
}

/// Per-document evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub query_id: String,
    /// Round in which the evaluated version competes.
    pub round: u32,
    pub player_id: String,
    pub doc_id: String,
    /// Group label (agent label, or player kind for peers).
    pub agent: String,
    pub player_kind: PlayerKind,
    pub promotion: PromotionReport,
    /// Ranker score of the evaluated version in the ranking it was placed in.
    pub score: f64,
    pub faithfulness: FaithfulnessReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// A failure confined to one query (or one document of it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub query_id: String,
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub message: String,
    /// The failure came from an external service.
    #[serde(default)]
    pub transport: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OfflineRun {
    /// One row per modified document.
    pub rows: Vec<EvalRow>,
    /// Rows for the unmodified players of each induced ranking.
    pub peer_rows: Vec<EvalRow>,
    pub errors: Vec<RowError>,
}

fn outcome_flags(outcome: &AgentOutcome) -> Vec<String> {
    let mut flags = Vec::new();
    if outcome.truncated {
        flags.push("truncated".to_string());
    }
    if outcome.attempts > 1 {
        flags.push(format!("attempts={}", outcome.attempts));
    }
    flags
}

fn faith_flags(report: &FaithfulnessReport, flags: &mut Vec<String>) {
    if report.degenerate() {
        flags.push("degenerate".into());
    }
    if report.sparse.short_set || report.dense.short_set {
        flags.push("short_set".into());
    }
}

struct OfflineTask<'a> {
    query: &'a Query,
    current: &'a DocVersion,
    rank_curr: u32,
    others_next: Vec<&'a DocVersion>,
}

/// Runs the offline protocol on round `round` of `log`.
pub fn run_offline_eval(
    log: &CompetitionLog,
    round: u32,
    agent: &dyn Agent,
    ev: &Evaluator<'_>,
) -> Result<OfflineRun, CompetitionError> {
    if round == 0 {
        return Err(CompetitionError::Domain("rounds start at 1".into()));
    }
    let snapshot = match ev.options.snapshot {
        SnapshotScope::ThroughRound => history_upto(log, round + 1)?,
        SnapshotScope::BeforeRound if round >= 2 => history_upto(log, round)?,
        SnapshotScope::BeforeRound => CorpusSnapshot::default(),
    };

    // The snapshot only holds rounds <= `round`, so the modified version
    // (competing in round + 1) is never part of it.
    let index = ev.index(&snapshot)?;

    let mut run = OfflineRun::default();
    let mut tasks: Vec<OfflineTask<'_>> = Vec::new();
    for query in log.queries() {
        let Some(ranking) = log.ranking(&query.query_id, round) else {
            run.errors.push(RowError {
                query_id: query.query_id.clone(),
                round,
                doc_id: None,
                message: format!("no ranking for round {round}"),
                transport: false,
            });
            continue;
        };
        let missing: Vec<&str> = ranking
            .entries
            .iter()
            .filter(|(d, _)| log.version(&query.query_id, round + 1, d).is_none())
            .map(|(d, _)| d.as_str())
            .collect();
        if !missing.is_empty() {
            run.errors.push(RowError {
                query_id: query.query_id.clone(),
                round,
                doc_id: None,
                message: format!(
                    "missing round-{} versions for: {}",
                    round + 1,
                    missing.join(", ")
                ),
                transport: false,
            });
            continue;
        }
        for (doc_id, rank) in ranking.entries.iter().skip(1) {
            let current = log
                .version(&query.query_id, round, doc_id)
                .expect("ranked docs exist");
            let others_next = ranking
                .entries
                .iter()
                .filter(|(d, _)| d != doc_id)
                .map(|(d, _)| {
                    log.version(&query.query_id, round + 1, d)
                        .expect("checked above")
                })
                .collect();
            tasks.push(OfflineTask {
                query,
                current,
                rank_curr: *rank,
                others_next,
            });
        }
    }

    let results: Vec<Result<(EvalRow, Vec<EvalRow>), RowError>> = tasks
        .par_iter()
        .map(|task| offline_task(log, round, agent, ev, &index, task))
        .collect::<Result<Vec<_>, CompetitionError>>()?;

    for r in results {
        match r {
            Ok((row, peers)) => {
                run.rows.push(row);
                run.peer_rows.extend(peers);
            }
            Err(e) => run.errors.push(e),
        }
    }
    Ok(run)
}

fn offline_task(
    log: &CompetitionLog,
    round: u32,
    agent: &dyn Agent,
    ev: &Evaluator<'_>,
    index: &SnapshotIndex<'_>,
    task: &OfflineTask<'_>,
) -> Result<Result<(EvalRow, Vec<EvalRow>), RowError>, CompetitionError> {
    let ctx = AgentContext {
        log,
        query: task.query,
        current_doc: task.current,
        round: round + 1,
    };
    let outcome = match agent.modify(&ctx) {
        Ok(o) => o,
        Err(e) => {
            return Ok(Err(RowError {
                query_id: task.query.query_id.clone(),
                round,
                doc_id: Some(task.current.doc_id.clone()),
                message: format!("agent {} failed: {e}", agent.label()),
                transport: matches!(e, AgentError::Service(ServiceError::Transport { .. })),
            }))
        }
    };
    let modified = DocVersion {
        doc_id: task.current.doc_id.clone(),
        player_id: task.current.player_id.clone(),
        query_id: task.current.query_id.clone(),
        round: round + 1,
        text: outcome.new_text.clone(),
        rank: None,
    };
    let mut pool: Vec<&DocVersion> = vec![&modified];
    pool.extend(task.others_next.iter().copied());
    let induced = rank_documents(ev.ranker, task.query, &pool)?;
    let n = induced.len() as u32;
    let rank_next = induced
        .rank_of(&modified.doc_id)
        .expect("modified doc is ranked");
    let promotion = scaled_promotion(task.rank_curr, rank_next, n)?;
    let faithfulness = ev.faithfulness(task.current, &modified, index)?;

    let mut flags = outcome_flags(&outcome);
    faith_flags(&faithfulness, &mut flags);
    let row = EvalRow {
        query_id: task.query.query_id.clone(),
        round: round + 1,
        player_id: modified.player_id.clone(),
        doc_id: modified.doc_id.clone(),
        agent: agent.label(),
        player_kind: agent.kind(),
        promotion,
        score: induced.score_of(&modified.doc_id).expect("ranked"),
        faithfulness,
        quality: None,
        relevance: None,
        flags,
    };

    let mut peers = Vec::new();
    if ev.options.include_peers {
        for other in &task.others_next {
            let before = log
                .version(&task.query.query_id, round, &other.doc_id)
                .expect("ranked docs exist");
            peers.push(peer_row(log, ev, index, before, other, &induced)?);
        }
    }
    Ok(Ok((row, peers)))
}

fn peer_row(
    log: &CompetitionLog,
    ev: &Evaluator<'_>,
    index: &SnapshotIndex<'_>,
    before: &DocVersion,
    after: &DocVersion,
    induced: &RankedList,
) -> Result<EvalRow, CompetitionError> {
    let rank_curr = before.rank.expect("ranked round");
    let rank_next = induced.rank_of(&after.doc_id).expect("peer is ranked");
    let promotion = scaled_promotion(rank_curr, rank_next, induced.len() as u32)?;
    let faithfulness = ev.faithfulness(before, after, index)?;
    let kind = log
        .player_kind(&after.player_id)
        .unwrap_or(PlayerKind::Student);
    let mut flags = Vec::new();
    faith_flags(&faithfulness, &mut flags);
    Ok(EvalRow {
        query_id: after.query_id.clone(),
        round: after.round,
        player_id: after.player_id.clone(),
        doc_id: after.doc_id.clone(),
        agent: kind.as_str().to_string(),
        player_kind: kind,
        promotion,
        score: induced.score_of(&after.doc_id).expect("ranked"),
        faithfulness,
        quality: None,
        relevance: None,
        flags,
    })
}

/// One player of a simulated game.
#[derive(Clone)]
pub struct Seat {
    pub player_id: String,
    pub doc_id: String,
    pub kind: PlayerKind,
    pub initial_text: String,
    pub agent: Arc<dyn Agent>,
}

/// One query's simulated game.
#[derive(Clone)]
pub struct Game {
    pub query: Query,
    pub seats: Vec<Seat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFailure {
    pub query_id: String,
    pub round: u32,
    pub player_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub log: CompetitionLog,
    pub failures: Vec<SimFailure>,
}

pub const MIN_SEATS: usize = 2;
pub const MAX_SEATS: usize = 8;

/// Simulates `rounds` rounds of every game. In round 1 the initial texts are
/// ranked; from round 2 on every seat's agent edits its latest version given
/// the history so far (bots act as static players before
/// `bot_entry_round`), and the ranker induces the round's ranking. A failing
/// agent keeps its previous text and the failure is recorded.
pub fn run_online_sim(
    games: &[Game],
    rounds: u32,
    ranker: &dyn RankingFunction,
    bot_entry_round: u32,
) -> Result<SimOutcome, CompetitionError> {
    if rounds == 0 {
        return Err(CompetitionError::Domain("need at least one round".into()));
    }
    if bot_entry_round > rounds {
        return Err(CompetitionError::Domain(format!(
            "bot entry round {bot_entry_round} is after the last round {rounds}"
        )));
    }
    let mut players: BTreeMap<String, PlayerKind> = BTreeMap::new();
    let mut query_ids = BTreeSet::new();
    for game in games {
        if !query_ids.insert(game.query.query_id.as_str()) {
            return Err(CompetitionError::Domain(format!(
                "query {} has two games",
                game.query.query_id
            )));
        }
        if !(MIN_SEATS..=MAX_SEATS).contains(&game.seats.len()) {
            return Err(CompetitionError::Domain(format!(
                "query {} has {} players; allowed {MIN_SEATS}..={MAX_SEATS}",
                game.query.query_id,
                game.seats.len()
            )));
        }
        for seat in &game.seats {
            if let Some(prev) = players.insert(seat.player_id.clone(), seat.kind) {
                if prev != seat.kind {
                    return Err(CompetitionError::Domain(format!(
                        "player {} seated as both {} and {}",
                        seat.player_id,
                        prev.as_str(),
                        seat.kind.as_str()
                    )));
                }
            }
        }
    }
    let queries: Vec<Query> = games.iter().map(|g| g.query.clone()).collect();

    let mut versions: Vec<DocVersion> = Vec::new();
    let mut failures = Vec::new();
    let first: Vec<Vec<DocVersion>> = games
        .par_iter()
        .map(|game| {
            let round_docs: Vec<DocVersion> = game
                .seats
                .iter()
                .map(|s| DocVersion {
                    doc_id: s.doc_id.clone(),
                    player_id: s.player_id.clone(),
                    query_id: game.query.query_id.clone(),
                    round: 1,
                    text: s.initial_text.clone(),
                    rank: None,
                })
                .collect();
            rank_in_place(ranker, &game.query, round_docs)
        })
        .collect::<Result<_, _>>()?;
    versions.extend(first.into_iter().flatten());

    for round in 2..=rounds {
        let history =
            CompetitionLog::from_parts(queries.clone(), players.clone(), versions.clone())?;
        let produced: Vec<(Vec<DocVersion>, Vec<SimFailure>)> = games
            .par_iter()
            .map(|game| play_round(game, &history, round, ranker, bot_entry_round))
            .collect::<Result<_, _>>()?;
        for (docs, fails) in produced {
            versions.extend(docs);
            failures.extend(fails);
        }
    }

    let log = CompetitionLog::from_parts(queries, players, versions)?;
    Ok(SimOutcome { log, failures })
}

fn rank_in_place(
    ranker: &dyn RankingFunction,
    query: &Query,
    mut docs: Vec<DocVersion>,
) -> Result<Vec<DocVersion>, CompetitionError> {
    let refs: Vec<&DocVersion> = docs.iter().collect();
    let list = rank_documents(ranker, query, &refs)?;
    for d in &mut docs {
        d.rank = list.rank_of(&d.doc_id);
    }
    Ok(docs)
}

fn play_round(
    game: &Game,
    history: &CompetitionLog,
    round: u32,
    ranker: &dyn RankingFunction,
    bot_entry_round: u32,
) -> Result<(Vec<DocVersion>, Vec<SimFailure>), CompetitionError> {
    let mut docs = Vec::with_capacity(game.seats.len());
    let mut failures = Vec::new();
    for seat in &game.seats {
        let current = history
            .version(&game.query.query_id, round - 1, &seat.doc_id)
            .ok_or_else(|| {
                CompetitionError::Domain(format!("{} lost its document", seat.doc_id))
            })?;
        let inert = seat.kind.is_bot() && round < bot_entry_round;
        let text = if inert {
            current.text.clone()
        } else {
            let ctx = AgentContext {
                log: history,
                query: &game.query,
                current_doc: current,
                round,
            };
            match seat.agent.modify(&ctx) {
                Ok(outcome) => outcome.new_text,
                Err(e) => {
                    failures.push(SimFailure {
                        query_id: game.query.query_id.clone(),
                        round,
                        player_id: seat.player_id.clone(),
                        message: e.to_string(),
                    });
                    current.text.clone()
                }
            }
        };
        docs.push(DocVersion {
            doc_id: seat.doc_id.clone(),
            player_id: seat.player_id.clone(),
            query_id: game.query.query_id.clone(),
            round,
            text,
            rank: None,
        });
    }
    Ok((rank_in_place(ranker, &game.query, docs)?, failures))
}

/// Annotation dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Quality,
    Relevance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub doc_id: String,
    pub round: u32,
    pub dimension: Dimension,
    pub votes: Vec<bool>,
}

/// Majority grades keyed by (doc_id, round, dimension).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoteTable {
    grades: BTreeMap<(String, u32, Dimension), u8>,
}

impl VoteTable {
    pub fn from_records(
        records: impl IntoIterator<Item = VoteRecord>,
    ) -> Result<Self, MetricError> {
        let mut grades = BTreeMap::new();
        for r in records {
            let grade = majority_grade(&r.votes)
                .map_err(|e| MetricError::Domain(format!("{} round {}: {e}", r.doc_id, r.round)))?;
            grades.insert((r.doc_id, r.round, r.dimension), grade);
        }
        Ok(Self { grades })
    }

    pub fn grade(&self, doc_id: &str, round: u32, dimension: Dimension) -> Option<u8> {
        self.grades
            .get(&(doc_id.to_string(), round, dimension))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    /// Fills quality/relevance on every row that has votes.
    pub fn annotate(&self, rows: &mut [EvalRow]) {
        for row in rows {
            row.quality = self.grade(&row.doc_id, row.round, Dimension::Quality);
            row.relevance = self.grade(&row.doc_id, row.round, Dimension::Relevance);
        }
    }
}

pub fn load_votes(path: impl AsRef<Path>) -> Result<VoteTable, CompetitionError> {
    let reader = BufReader::new(File::open(path).map_err(CorpusError::from)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(CorpusError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(VoteTable::from_records(records)?)
}

/// Rows for every player of a (simulated or recorded) competition in rounds
/// `from_round..=last`: promotion from the previous round's rank,
/// faithfulness to the previous version, corpus = all earlier rounds.
/// `labels` maps player ids to group labels; unmapped players are grouped by
/// kind.
pub fn evaluate_log(
    log: &CompetitionLog,
    from_round: u32,
    ev: &Evaluator<'_>,
    labels: &BTreeMap<String, String>,
) -> Result<Vec<EvalRow>, CompetitionError> {
    let from_round = from_round.max(2);
    let mut tasks = Vec::new();
    for query in log.queries() {
        for round in from_round..=log.rounds(&query.query_id) {
            let (Some(prev), Some(curr)) = (
                log.ranking(&query.query_id, round - 1),
                log.ranking(&query.query_id, round),
            ) else {
                continue;
            };
            for (doc_id, _) in &curr.entries {
                if prev.rank_of(doc_id).is_some() {
                    tasks.push((query, round, doc_id.as_str()));
                }
            }
        }
    }
    let rounds: BTreeSet<u32> = tasks.iter().map(|t| t.1).collect();
    let snapshots = rounds
        .iter()
        .map(|&r| Ok((r, history_upto(log, r)?)))
        .collect::<Result<BTreeMap<u32, CorpusSnapshot>, CorpusError>>()?;
    let indices = snapshots
        .iter()
        .map(|(&r, snap)| Ok((r, ev.index(snap)?)))
        .collect::<Result<BTreeMap<u32, SnapshotIndex<'_>>, RankError>>()?;

    tasks
        .par_iter()
        .map(|(query, round, doc_id)| {
            let before = log
                .version(&query.query_id, round - 1, doc_id)
                .expect("ranked");
            let after = log
                .version(&query.query_id, *round, doc_id)
                .expect("ranked");
            let n = log.ranking(&query.query_id, *round).expect("ranked").len() as u32;
            let promotion =
                scaled_promotion(before.rank.expect("ranked"), after.rank.expect("ranked"), n)?;
            let faithfulness = ev.faithfulness(before, after, &indices[round])?;
            let kind = log
                .player_kind(&after.player_id)
                .unwrap_or(PlayerKind::Student);
            let mut flags = Vec::new();
            faith_flags(&faithfulness, &mut flags);
            let score = ev.ranker.score_all(&query.text, &[after.text.as_str()])?[0];
            Ok(EvalRow {
                query_id: query.query_id.clone(),
                round: *round,
                player_id: after.player_id.clone(),
                doc_id: after.doc_id.clone(),
                agent: labels
                    .get(&after.player_id)
                    .cloned()
                    .unwrap_or_else(|| kind.as_str().to_string()),
                player_kind: kind,
                promotion,
                score,
                faithfulness,
                quality: None,
                relevance: None,
                flags,
            })
        })
        .collect()
}

/// Columns reported per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    ScaledPromotion,
    OrigFaith,
    CorpFaithDense,
    CorpFaithSparse,
    Quality,
    Relevance,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Self::ScaledPromotion,
        Self::OrigFaith,
        Self::CorpFaithDense,
        Self::CorpFaithSparse,
        Self::Quality,
        Self::Relevance,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Self::ScaledPromotion => "Scaled Promotion",
            Self::OrigFaith => "OrigFaith",
            Self::CorpFaithDense => "CorpFaith(dense)",
            Self::CorpFaithSparse => "CorpFaith(sparse)",
            Self::Quality => "Q",
            Self::Relevance => "R",
        }
    }

    pub fn value(self, row: &EvalRow) -> Option<f64> {
        match self {
            Self::ScaledPromotion => Some(row.promotion.scaled),
            Self::OrigFaith => Some(row.faithfulness.orig_faith.value),
            Self::CorpFaithDense => Some(row.faithfulness.corp_faith_dense()),
            Self::CorpFaithSparse => Some(row.faithfulness.corp_faith_sparse()),
            Self::Quality => row.quality.map(f64::from),
            Self::Relevance => row.relevance.map(f64::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub rows: usize,
    pub means: BTreeMap<Measure, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub group_a: String,
    pub group_b: String,
    pub measure: Measure,
    /// Number of (query, round) cells both groups have values for.
    pub pairs: usize,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub groups: Vec<GroupSummary>,
    pub tests: Vec<PairTest>,
}

impl EvalTable {
    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn p_value(&self, a: &str, b: &str, measure: Measure) -> Option<f64> {
        self.tests
            .iter()
            .find(|t| {
                t.measure == measure
                    && ((t.group_a == a && t.group_b == b) || (t.group_a == b && t.group_b == a))
            })
            .and_then(|t| t.p_value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateOptions {
    /// Average per-round means instead of pooling all rows.
    pub rounds_mean: bool,
    pub permutations: usize,
    pub seed: u64,
    /// Groups under test. When non-empty, only pairs involving at least one
    /// of them are tested; otherwise every pair is.
    pub focus: Vec<String>,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            rounds_mean: false,
            permutations: crate::metrics::DEFAULT_PERMUTATIONS,
            seed: 0,
            focus: Vec::new(),
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Group means per measure and pairwise paired permutation tests.
///
/// Groups are paired on (query_id, round) cells: each group contributes the
/// mean of its rows in a cell, and only cells both groups cover enter the
/// test.
pub fn aggregate(
    rows: &[EvalRow],
    options: AggregateOptions,
) -> Result<EvalTable, CompetitionError> {
    if rows.is_empty() {
        return Err(CompetitionError::Domain(
            "cannot aggregate zero rows".into(),
        ));
    }
    let mut by_group: BTreeMap<&str, Vec<&EvalRow>> = BTreeMap::new();
    for row in rows {
        by_group.entry(row.agent.as_str()).or_default().push(row);
    }

    let groups = by_group
        .iter()
        .map(|(name, rows)| {
            let means = Measure::ALL
                .iter()
                .map(|m| {
                    let value = if options.rounds_mean {
                        let mut per_round: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
                        for r in rows {
                            if let Some(v) = m.value(r) {
                                per_round.entry(r.round).or_default().push(v);
                            }
                        }
                        let round_means: Vec<f64> =
                            per_round.values().filter_map(|v| mean(v)).collect();
                        mean(&round_means)
                    } else {
                        let values: Vec<f64> = rows.iter().filter_map(|r| m.value(r)).collect();
                        mean(&values)
                    };
                    (*m, value)
                })
                .collect();
            GroupSummary {
                group: name.to_string(),
                rows: rows.len(),
                means,
            }
        })
        .collect();

    let cells = |rows: &[&EvalRow], m: Measure| -> BTreeMap<(String, u32), f64> {
        let mut acc: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
        for r in rows {
            if let Some(v) = m.value(r) {
                acc.entry((r.query_id.clone(), r.round))
                    .or_default()
                    .push(v);
            }
        }
        acc.into_iter()
            .filter_map(|(k, v)| mean(&v).map(|m| (k, m)))
            .collect()
    };

    let names: Vec<&str> = by_group.keys().copied().collect();
    let mut tests = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let focused = |g: &str| options.focus.iter().any(|f| f == g);
            if !options.focus.is_empty() && !focused(a) && !focused(b) {
                continue;
            }
            for m in Measure::ALL {
                let ca = cells(&by_group[a], m);
                let cb = cells(&by_group[b], m);
                let (xs, ys): (Vec<f64>, Vec<f64>) = ca
                    .iter()
                    .filter_map(|(k, va)| cb.get(k).map(|vb| (*va, *vb)))
                    .unzip();
                let p_value = if xs.is_empty() {
                    None
                } else {
                    Some(permutation_test(
                        &xs,
                        &ys,
                        options.permutations,
                        options.seed,
                    )?)
                };
                tests.push(PairTest {
                    group_a: a.to_string(),
                    group_b: b.to_string(),
                    measure: m,
                    pairs: xs.len(),
                    p_value,
                });
            }
        }
    }
    Ok(EvalTable { groups, tests })
}
