//! Seeded synthetic competition logs for tests, demos and smoke runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::sync::Arc;

use crate::agents::{Agent, AgentContext, AgentError, AgentOutcome, OutcomeTrace};
use crate::competition::{run_online_sim, CompetitionError, Game, Seat};
use crate::corpus::{CompetitionLog, CorpusError, DocVersion, PlayerKind, Query};
use crate::rankers::{rank_documents, RankingFunction, TfidfRanker};
use crate::services::fnv1a;

const WORDS: &[&str] = &[
    "river",
    "garden",
    "engine",
    "market",
    "forest",
    "signal",
    "harbor",
    "planet",
    "museum",
    "castle",
    "battery",
    "climate",
    "doctor",
    "village",
    "winter",
    "summer",
    "orchard",
    "bridge",
    "island",
    "desert",
    "network",
    "library",
    "kitchen",
    "theater",
    "factory",
    "mineral",
    "ocean",
    "valley",
    "highway",
    "pilot",
    "farmer",
    "student",
    "teacher",
    "history",
    "science",
    "painter",
    "music",
    "poetry",
    "harvest",
    "weather",
    "storm",
    "canyon",
    "glacier",
    "volcano",
    "satellite",
    "rocket",
    "vaccine",
    "protein",
    "budget",
    "election",
    "senate",
    "court",
    "treaty",
    "border",
    "tariff",
    "export",
    "import",
    "railway",
    "airport",
    "bicycle",
    "engineer",
    "circuit",
    "software",
    "hardware",
    "language",
    "grammar",
    "novel",
    "author",
    "camera",
    "lens",
    "window",
    "marble",
    "copper",
    "silver",
    "gold",
    "diamond",
    "coffee",
    "tea",
    "bread",
    "cheese",
    "olive",
    "lemon",
    "pepper",
    "salt",
    "sugar",
    "honey",
    "wool",
    "cotton",
    "silk",
];

const FILLER: &[&str] = &[
    "the", "a", "of", "and", "is", "in", "for", "with", "many", "often", "can", "new", "old",
    "local", "people", "use", "from", "about", "every", "some",
];

/// Shape of a generated log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub queries: usize,
    pub players: usize,
    pub rounds: u32,
    /// The first `static_players` players of every query never edit.
    pub static_players: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            queries: 15,
            players: 4,
            rounds: 7,
            static_players: 1,
            seed: 7,
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// A sentence of 6..=11 words mixing filler, random topic words and
/// (sometimes) the query terms.
pub fn random_sentence(rng: &mut impl Rng, query_terms: &[&str]) -> String {
    let len = rng.gen_range(6..=11);
    let mut words: Vec<&str> = Vec::with_capacity(len);
    for _ in 0..len {
        let roll: f64 = rng.gen();
        let w = if roll < 0.15 && !query_terms.is_empty() {
            query_terms.choose(rng).copied().unwrap()
        } else if roll < 0.55 {
            FILLER.choose(rng).copied().unwrap()
        } else {
            WORDS.choose(rng).copied().unwrap()
        };
        words.push(w);
    }
    format!("{}.", capitalize(&words.join(" ")))
}

/// A document of 3..=6 sentences.
pub fn random_document(rng: &mut impl Rng, query_terms: &[&str]) -> String {
    let n = rng.gen_range(3..=6);
    (0..n)
        .map(|_| random_sentence(rng, query_terms))
        .collect::<Vec<_>>()
        .join(" ")
}

/// (player_id, doc_id, kind, initial text) of one generated seat.
pub type SeatSpec = (String, String, PlayerKind, String);

/// Generates queries and initial documents; ids are `q{NN}` and
/// `q{NN}-p{N}`, players are `p{N}`.
pub fn synthetic_queries(spec: &SyntheticSpec) -> Vec<(Query, Vec<SeatSpec>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.queries)
        .map(|qi| {
            let terms: Vec<&str> = WORDS.choose_multiple(&mut rng, 2).copied().collect();
            let query = Query {
                query_id: format!("q{:02}", qi + 1),
                text: terms.join(" "),
            };
            let seats = (0..spec.players)
                .map(|pi| {
                    let player_id = format!("p{}", pi + 1);
                    let doc_id = format!("{}-{}", query.query_id, player_id);
                    let kind = if pi < spec.static_players {
                        PlayerKind::StaticDoc
                    } else {
                        PlayerKind::Student
                    };
                    (player_id, doc_id, kind, random_document(&mut rng, &terms))
                })
                .collect();
            (query, seats)
        })
        .collect()
}

/// A full synthetic competition. Non-static players rewrite one random
/// sentence per round; every round is ranked by a TF.IDF model fitted on
/// all generated texts.
pub fn synthetic_log(spec: &SyntheticSpec) -> Result<CompetitionLog, CorpusError> {
    let games = synthetic_queries(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut versions: Vec<DocVersion> = Vec::new();
    let mut players = Vec::new();

    for (query, seats) in &games {
        let terms: Vec<&str> = query.text.split(' ').collect();
        for (player_id, doc_id, kind, initial) in seats {
            players.push((player_id.clone(), *kind));
            let mut text = initial.clone();
            for round in 1..=spec.rounds {
                if round > 1 && *kind != PlayerKind::StaticDoc {
                    let mut parts = crate::text::sentences(&text);
                    let idx = rng.gen_range(0..parts.len());
                    parts[idx] = random_sentence(&mut rng, &terms);
                    text = parts.join(" ");
                }
                versions.push(DocVersion {
                    doc_id: doc_id.clone(),
                    player_id: player_id.clone(),
                    query_id: query.query_id.clone(),
                    round,
                    text: text.clone(),
                    rank: None,
                });
            }
        }
    }

    let ranker = TfidfRanker::fit(versions.iter().map(|v| v.text.as_str()))
        .map_err(|e| CorpusError::Domain(e.to_string()))?;
    assign_ranks(
        &mut versions,
        &games.iter().map(|(q, _)| q.clone()).collect::<Vec<_>>(),
        &ranker,
    )?;
    CompetitionLog::from_parts(games.into_iter().map(|(q, _)| q), players, versions)
}

/// Ranks every (query, round) group of `versions` in place.
pub fn assign_ranks(
    versions: &mut [DocVersion],
    queries: &[Query],
    ranker: &dyn RankingFunction,
) -> Result<(), CorpusError> {
    versions.sort_by(|a, b| {
        (&a.query_id, a.round, &a.player_id).cmp(&(&b.query_id, b.round, &b.player_id))
    });
    for group in versions.chunk_by_mut(|a, b| a.query_id == b.query_id && a.round == b.round) {
        let query = queries
            .iter()
            .find(|q| q.query_id == group[0].query_id)
            .ok_or_else(|| CorpusError::Domain(format!("unknown query {}", group[0].query_id)))?;
        let refs: Vec<&DocVersion> = group.iter().collect();
        let list =
            rank_documents(ranker, query, &refs).map_err(|e| CorpusError::Domain(e.to_string()))?;
        for v in group.iter_mut() {
            v.rank = list.rank_of(&v.doc_id);
        }
    }
    Ok(())
}

/// Scripted student that rewrites one random sentence while it holds rank 1
/// and otherwise resubmits its document unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeaderEditAgent {
    pub seed: u64,
}

impl Agent for LeaderEditAgent {
    fn label(&self) -> String {
        "student".into()
    }

    fn kind(&self) -> PlayerKind {
        PlayerKind::Student
    }

    fn modify(&self, ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError> {
        let doc = ctx.current_doc;
        if ctx.last_ranking()?.top() != Some(doc.doc_id.as_str()) {
            return Ok(AgentOutcome::plain(doc.text.clone(), OutcomeTrace::Static));
        }
        let mix = format!("{}\u{1f}{}", doc.doc_id, ctx.round);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(mix.as_bytes()));
        let terms: Vec<&str> = ctx.query.text.split(' ').collect();
        let mut parts = crate::text::sentences(&doc.text);
        let idx = rng.gen_range(0..parts.len());
        parts[idx] = random_sentence(&mut rng, &terms);
        let text = crate::text::truncate_to_sentences(&parts.join(" "), crate::text::WORD_CAP)?;
        Ok(AgentOutcome::plain(
            text,
            OutcomeTrace::Rewrite { sentence: idx },
        ))
    }
}

/// A simulated log plus the fixed ranker that produced its rankings.
pub struct ReplayFixture {
    pub log: CompetitionLog,
    pub ranker: TfidfRanker,
}

/// Simulates `spec` with [`LeaderEditAgent`] students and static players,
/// ranked by TF.IDF fitted on the initial documents. Because only the
/// round's leader changes its text, every other document's next-round
/// version equals its current one.
pub fn leader_edit_fixture(spec: &SyntheticSpec) -> Result<ReplayFixture, CompetitionError> {
    let games_spec = synthetic_queries(spec);
    let ranker = TfidfRanker::fit(
        games_spec
            .iter()
            .flat_map(|(_, seats)| seats.iter().map(|s| s.3.as_str())),
    )?;
    let student: Arc<dyn Agent> = Arc::new(LeaderEditAgent { seed: spec.seed });
    let statik: Arc<dyn Agent> = Arc::new(crate::agents::StaticAgent);
    let games: Vec<Game> = games_spec
        .into_iter()
        .map(|(query, seats)| Game {
            query,
            seats: seats
                .into_iter()
                .map(|(player_id, doc_id, kind, initial_text)| Seat {
                    agent: if kind == PlayerKind::StaticDoc {
                        statik.clone()
                    } else {
                        student.clone()
                    },
                    player_id,
                    doc_id,
                    kind,
                    initial_text,
                })
                .collect(),
        })
        .collect();
    let outcome = run_online_sim(&games, spec.rounds, &ranker, 1)?;
    debug_assert!(outcome.failures.is_empty());
    Ok(ReplayFixture {
        log: outcome.log,
        ranker,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fixture_has_expected_size() {
        let log = synthetic_log(&SyntheticSpec::default()).unwrap();
        assert_eq!(log.versions().len(), 15 * 7 * 4);
        assert_eq!(log.queries().count(), 15);
        assert!(log.warnings().is_empty());
        assert_eq!(log, synthetic_log(&SyntheticSpec::default()).unwrap());
    }

    #[test]
    fn only_leaders_change_text() {
        let spec = SyntheticSpec {
            queries: 6,
            players: 4,
            rounds: 5,
            static_players: 1,
            seed: 11,
        };
        let fx = leader_edit_fixture(&spec).unwrap();
        let log = &fx.log;
        assert_eq!(log.versions().len(), 6 * 4 * 5);
        let mut edits = 0;
        for q in log.queries() {
            for r in 1..5 {
                let top = log
                    .ranking(&q.query_id, r)
                    .unwrap()
                    .top()
                    .unwrap()
                    .to_string();
                for v in log.versions_in(&q.query_id, r) {
                    let next = log.version(&q.query_id, r + 1, &v.doc_id).unwrap();
                    if v.doc_id != top {
                        assert_eq!(v.text, next.text);
                    } else if v.text != next.text {
                        edits += 1;
                    }
                }
            }
        }
        assert!(edits > 0);
    }
}
