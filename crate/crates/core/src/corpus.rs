//! Ranking-competition logs: queries, document versions, per-round rankings
//! and the player registry, with JSONL ingestion and validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{word_count, WORD_CAP};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("query {query_id}, round {round}: {message}")]
    Invariant {
        query_id: String,
        round: u32,
        message: String,
    },
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerKind {
    Student,
    StaticDoc,
    LlmBot,
    SentReplaceBaseline,
    MockBot,
}

impl PlayerKind {
    /// Kinds whose documents are produced by an automated modification
    /// method rather than a (scripted) human or a fixed text.
    pub fn is_bot(self) -> bool {
        matches!(
            self,
            Self::LlmBot | Self::SentReplaceBaseline | Self::MockBot
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Student => "student",
            Self::StaticDoc => "static_doc",
            Self::LlmBot => "llm_bot",
            Self::SentReplaceBaseline => "sent_replace_baseline",
            Self::MockBot => "mock_bot",
        }
    }
}

/// One version of a player's document for one query in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocVersion {
    pub doc_id: String,
    pub player_id: String,
    pub query_id: String,
    pub round: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

impl DocVersion {
    pub fn word_count(&self) -> usize {
        word_count(&self.text)
    }

    /// Identity of this version within a corpus.
    pub fn key(&self) -> (&str, u32) {
        (&self.doc_id, self.round)
    }
}

/// Ranking induced for one query in one round; `entries` are ordered by
/// rank, rank 1 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRanking {
    pub query_id: String,
    pub round: u32,
    pub entries: Vec<(String, u32)>,
}

impl RoundRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<&str> {
        self.entries.first().map(|(d, _)| d.as_str())
    }

    pub fn rank_of(&self, doc_id: &str) -> Option<u32> {
        self.entries
            .iter()
            .find(|(d, _)| d == doc_id)
            .map(|(_, r)| *r)
    }
}

/// A single line of the JSONL log format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub query_id: String,
    pub query_text: String,
    pub round: u32,
    pub player_id: String,
    pub player_kind: PlayerKind,
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

/// Non-fatal observation made while validating a log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogWarning {
    pub query_id: String,
    pub round: u32,
    pub doc_id: String,
    pub message: String,
}

/// A validated competition history. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CompetitionLog {
    queries: BTreeMap<String, Query>,
    players: BTreeMap<String, PlayerKind>,
    /// Sorted by (query_id, round, player_id).
    versions: Vec<DocVersion>,
    rankings: BTreeMap<(String, u32), RoundRanking>,
    warnings: Vec<LogWarning>,
}

impl CompetitionLog {
    pub fn empty() -> Self {
        Self {
            queries: BTreeMap::new(),
            players: BTreeMap::new(),
            versions: Vec::new(),
            rankings: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    /// Builds and validates a log from flat records.
    pub fn from_records(records: Vec<LogRecord>) -> Result<Self, CorpusError> {
        let mut queries: BTreeMap<String, Query> = BTreeMap::new();
        let mut players: BTreeMap<String, PlayerKind> = BTreeMap::new();
        let mut versions = Vec::with_capacity(records.len());

        for rec in records {
            let invariant = |message: String| CorpusError::Invariant {
                query_id: rec.query_id.clone(),
                round: rec.round,
                message,
            };
            if rec.query_text.trim().is_empty() {
                return Err(invariant("query text is empty".into()));
            }
            if rec.round == 0 {
                return Err(invariant("rounds start at 1".into()));
            }
            if rec.text.trim().is_empty() {
                return Err(invariant(format!("document {} has empty text", rec.doc_id)));
            }
            match queries.get(&rec.query_id) {
                Some(q) if q.text != rec.query_text => {
                    return Err(invariant(format!(
                        "conflicting texts for query: {:?} vs {:?}",
                        q.text, rec.query_text
                    )))
                }
                Some(_) => {}
                None => {
                    queries.insert(
                        rec.query_id.clone(),
                        Query {
                            query_id: rec.query_id.clone(),
                            text: rec.query_text.clone(),
                        },
                    );
                }
            }
            match players.get(&rec.player_id) {
                Some(kind) if *kind != rec.player_kind => {
                    return Err(invariant(format!(
                        "player {} registered as both {} and {}",
                        rec.player_id,
                        kind.as_str(),
                        rec.player_kind.as_str()
                    )))
                }
                Some(_) => {}
                None => {
                    players.insert(rec.player_id.clone(), rec.player_kind);
                }
            }
            versions.push(DocVersion {
                doc_id: rec.doc_id,
                player_id: rec.player_id,
                query_id: rec.query_id,
                round: rec.round,
                text: rec.text,
                rank: rec.rank,
            });
        }
        Self::assemble(queries, players, versions)
    }

    fn assemble(
        queries: BTreeMap<String, Query>,
        players: BTreeMap<String, PlayerKind>,
        mut versions: Vec<DocVersion>,
    ) -> Result<Self, CorpusError> {
        versions.sort_by(|a, b| {
            (&a.query_id, a.round, &a.player_id).cmp(&(&b.query_id, b.round, &b.player_id))
        });

        let mut rankings = BTreeMap::new();
        let mut warnings = Vec::new();
        let mut rounds_seen: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();

        for group in versions.chunk_by(|a, b| a.query_id == b.query_id && a.round == b.round) {
            let (query_id, round) = (&group[0].query_id, group[0].round);
            let invariant = |message: String| CorpusError::Invariant {
                query_id: query_id.clone(),
                round,
                message,
            };
            rounds_seen.entry(query_id).or_default().insert(round);

            let mut player_ids = BTreeSet::new();
            let mut doc_ids = BTreeSet::new();
            for v in group {
                if !player_ids.insert(&v.player_id) {
                    return Err(invariant(format!(
                        "player {} has two versions",
                        v.player_id
                    )));
                }
                if !doc_ids.insert(&v.doc_id) {
                    return Err(invariant(format!("doc_id {} appears twice", v.doc_id)));
                }
                if v.word_count() > WORD_CAP {
                    warnings.push(LogWarning {
                        query_id: query_id.clone(),
                        round,
                        doc_id: v.doc_id.clone(),
                        message: format!(
                            "{} words exceeds the {WORD_CAP}-word cap",
                            v.word_count()
                        ),
                    });
                }
            }

            let ranked = group.iter().filter(|v| v.rank.is_some()).count();
            if ranked == 0 {
                continue;
            }
            if ranked != group.len() {
                return Err(invariant("round mixes ranked and unranked versions".into()));
            }
            let mut entries: Vec<(String, u32)> = group
                .iter()
                .map(|v| (v.doc_id.clone(), v.rank.unwrap()))
                .collect();
            entries.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            for (pos, (doc_id, rank)) in entries.iter().enumerate() {
                let expected = pos as u32 + 1;
                if *rank != expected {
                    let message = if pos > 0 && entries[pos - 1].1 == *rank {
                        format!("duplicate rank {rank} (doc {doc_id})")
                    } else {
                        format!(
                            "ranks must be exactly 1..{}; found {rank} at position {expected}",
                            entries.len()
                        )
                    };
                    return Err(invariant(message));
                }
            }
            rankings.insert(
                (query_id.clone(), round),
                RoundRanking {
                    query_id: query_id.clone(),
                    round,
                    entries,
                },
            );
        }

        for (query_id, rounds) in &rounds_seen {
            for (expected, round) in (1u32..).zip(rounds.iter()) {
                if *round != expected {
                    return Err(CorpusError::Invariant {
                        query_id: query_id.to_string(),
                        round: expected,
                        message: format!(
                            "rounds are not contiguous from 1 (next present round is {round})"
                        ),
                    });
                }
            }
        }

        Ok(Self {
            queries,
            players,
            versions,
            rankings,
            warnings,
        })
    }

    /// Builds a log from already-typed parts.
    pub fn from_parts(
        queries: impl IntoIterator<Item = Query>,
        players: impl IntoIterator<Item = (String, PlayerKind)>,
        versions: Vec<DocVersion>,
    ) -> Result<Self, CorpusError> {
        let queries: BTreeMap<String, Query> = queries
            .into_iter()
            .map(|q| (q.query_id.clone(), q))
            .collect();
        let players: BTreeMap<String, PlayerKind> = players.into_iter().collect();
        for v in &versions {
            let invariant = |message: String| CorpusError::Invariant {
                query_id: v.query_id.clone(),
                round: v.round,
                message,
            };
            if !queries.contains_key(&v.query_id) {
                return Err(invariant("version references an unknown query".into()));
            }
            if !players.contains_key(&v.player_id) {
                return Err(invariant(format!("unregistered player {}", v.player_id)));
            }
            if v.round == 0 {
                return Err(invariant("rounds start at 1".into()));
            }
        }
        Self::assemble(queries, players, versions)
    }

    /// Flattens the log back into JSONL records, in canonical order.
    pub fn to_records(&self) -> Vec<LogRecord> {
        self.versions
            .iter()
            .map(|v| LogRecord {
                query_id: v.query_id.clone(),
                query_text: self.queries[&v.query_id].text.clone(),
                round: v.round,
                player_id: v.player_id.clone(),
                player_kind: self.players[&v.player_id],
                doc_id: v.doc_id.clone(),
                text: v.text.clone(),
                rank: v.rank,
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), CorpusError> {
        for rec in self.to_records() {
            let line =
                serde_json::to_string(&rec).map_err(|e| CorpusError::Domain(e.to_string()))?;
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn queries(&self) -> impl Iterator<Item = &Query> {
        self.queries.values()
    }

    pub fn query(&self, query_id: &str) -> Option<&Query> {
        self.queries.get(query_id)
    }

    pub fn player_kind(&self, player_id: &str) -> Option<PlayerKind> {
        self.players.get(player_id).copied()
    }

    pub fn players(&self) -> impl Iterator<Item = (&str, PlayerKind)> {
        self.players.iter().map(|(p, k)| (p.as_str(), *k))
    }

    /// All versions in (query_id, round, player_id) order.
    pub fn versions(&self) -> &[DocVersion] {
        &self.versions
    }

    pub fn warnings(&self) -> &[LogWarning] {
        &self.warnings
    }

    pub fn rounds(&self, query_id: &str) -> u32 {
        self.versions
            .iter()
            .filter(|v| v.query_id == query_id)
            .map(|v| v.round)
            .max()
            .unwrap_or(0)
    }

    pub fn max_round(&self) -> u32 {
        self.versions.iter().map(|v| v.round).max().unwrap_or(0)
    }

    pub fn versions_in(&self, query_id: &str, round: u32) -> &[DocVersion] {
        let lo = self
            .versions
            .partition_point(|v| (v.query_id.as_str(), v.round) < (query_id, round));
        let hi = self
            .versions
            .partition_point(|v| (v.query_id.as_str(), v.round) <= (query_id, round));
        &self.versions[lo..hi]
    }

    pub fn version(&self, query_id: &str, round: u32, doc_id: &str) -> Option<&DocVersion> {
        self.versions_in(query_id, round)
            .iter()
            .find(|v| v.doc_id == doc_id)
    }

    pub fn ranking(&self, query_id: &str, round: u32) -> Option<&RoundRanking> {
        self.rankings.get(&(query_id.to_string(), round))
    }

    pub fn rankings(&self) -> impl Iterator<Item = &RoundRanking> {
        self.rankings.values()
    }
}

/// Reads and validates a JSONL competition log.
pub fn load_competition_log(path: impl AsRef<Path>) -> Result<CompetitionLog, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    CompetitionLog::from_records(records)
}

/// Every document version visible before some round, across all queries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusSnapshot {
    docs: Vec<DocVersion>,
}

impl CorpusSnapshot {
    pub fn new(mut docs: Vec<DocVersion>) -> Self {
        docs.sort_by(|a, b| {
            (&a.query_id, a.round, &a.player_id).cmp(&(&b.query_id, b.round, &b.player_id))
        });
        Self { docs }
    }

    pub fn docs(&self) -> &[DocVersion] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Drops the version identified by `(doc_id, round)`, if present.
    pub fn without(mut self, doc_id: &str, round: u32) -> Self {
        self.docs.retain(|d| d.key() != (doc_id, round));
        self
    }
}

/// All versions with `version.round < round`.
pub fn history_upto(log: &CompetitionLog, round: u32) -> Result<CorpusSnapshot, CorpusError> {
    if round < 2 {
        return Err(CorpusError::Domain(format!(
            "history requires round >= 2, got {round}"
        )));
    }
    Ok(CorpusSnapshot {
        docs: log
            .versions
            .iter()
            .filter(|v| v.round < round)
            .cloned()
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(q: &str, round: u32, player: &str, rank: Option<u32>) -> LogRecord {
        LogRecord {
            query_id: q.into(),
            query_text: format!("query {q}"),
            round,
            player_id: player.into(),
            player_kind: PlayerKind::Student,
            doc_id: format!("{q}-{player}"),
            text: format!("Document of {player} for {q} in round {round}."),
            rank,
        }
    }

    #[test]
    fn minimal_log() {
        let log = CompetitionLog::from_records(vec![
            record("q1", 1, "a", Some(2)),
            record("q1", 1, "b", Some(1)),
            record("q1", 1, "c", Some(3)),
        ])
        .unwrap();
        let ranking = log.ranking("q1", 1).unwrap();
        assert_eq!(ranking.len(), 3);
        assert_eq!(ranking.top(), Some("q1-b"));
        assert_eq!(ranking.rank_of("q1-c"), Some(3));
    }

    #[test]
    fn duplicate_rank_is_rejected() {
        let err = CompetitionLog::from_records(vec![
            record("q1", 1, "a", Some(1)),
            record("q1", 1, "b", Some(2)),
            record("q1", 1, "c", Some(2)),
        ])
        .unwrap_err();
        match err {
            CorpusError::Invariant {
                query_id,
                round,
                message,
            } => {
                assert_eq!((query_id.as_str(), round), ("q1", 1));
                assert!(message.contains("duplicate rank"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gap_in_ranks_is_rejected() {
        let err = CompetitionLog::from_records(vec![
            record("q1", 1, "a", Some(1)),
            record("q1", 1, "b", Some(3)),
        ])
        .unwrap_err();
        assert!(matches!(err, CorpusError::Invariant { .. }));
    }

    #[test]
    fn non_contiguous_rounds_are_rejected() {
        let err = CompetitionLog::from_records(vec![
            record("q1", 1, "a", Some(1)),
            record("q1", 3, "a", Some(1)),
        ])
        .unwrap_err();
        assert!(
            matches!(err, CorpusError::Invariant { round: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn duplicate_player_version_is_rejected() {
        let mut dup = record("q1", 1, "a", Some(2));
        dup.doc_id = "other".into();
        let err =
            CompetitionLog::from_records(vec![record("q1", 1, "a", Some(1)), dup]).unwrap_err();
        assert!(err.to_string().contains("two versions"), "{err}");
    }

    #[test]
    fn conflicting_player_kind_is_rejected() {
        let mut other = record("q2", 1, "a", Some(1));
        other.player_kind = PlayerKind::StaticDoc;
        let err =
            CompetitionLog::from_records(vec![record("q1", 1, "a", Some(1)), other]).unwrap_err();
        assert!(err.to_string().contains("registered as both"));
    }

    #[test]
    fn over_cap_versions_are_flagged_not_rejected() {
        let mut long = record("q1", 1, "a", Some(1));
        long.text = "word ".repeat(151);
        let log = CompetitionLog::from_records(vec![long]).unwrap();
        assert_eq!(log.warnings().len(), 1);
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let good = serde_json::to_string(&record("q1", 1, "a", Some(1))).unwrap();
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        match load_competition_log(&path).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn history_rules() {
        let log = CompetitionLog::from_records(
            ["a", "b", "c", "d"]
                .iter()
                .enumerate()
                .map(|(i, p)| record("q1", 1, p, Some(i as u32 + 1)))
                .collect(),
        )
        .unwrap();
        assert_eq!(history_upto(&log, 2).unwrap().len(), 4);
        assert!(history_upto(&log, 1).is_err());
        assert!(history_upto(&CompetitionLog::empty(), 2)
            .unwrap()
            .is_empty());
    }
}
