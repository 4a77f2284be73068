//! Offline and online competition protocols on scripted fixtures.

use std::collections::BTreeMap;
use std::sync::Arc;

use rankcomp_core::agents::{
    Agent, AgentContext, AgentError, AgentOutcome, CopyTopAgent, ShuffleAgent, StaticAgent,
};
use rankcomp_core::competition::{
    run_offline_eval, run_online_sim, EvalOptions, Evaluator, Game, Seat,
};
use rankcomp_core::rankers::TfidfRanker;
use rankcomp_core::services::{HashedBowEmbedder, LexicalEntailment};
use rankcomp_core::synth::{leader_edit_fixture, synthetic_queries, ReplayFixture, SyntheticSpec};
use rankcomp_core::{load_competition_log, PlayerKind, RankingFunction};

fn fixture() -> ReplayFixture {
    leader_edit_fixture(&SyntheticSpec {
        queries: 6,
        players: 4,
        rounds: 5,
        static_players: 1,
        seed: 11,
    })
    .unwrap()
}

fn evaluator<'a>(
    ranker: &'a dyn RankingFunction,
    embedder: &'a HashedBowEmbedder,
) -> Evaluator<'a> {
    Evaluator {
        ranker,
        scorer: &LexicalEntailment,
        embedder,
        options: EvalOptions::default(),
    }
}

#[test]
fn static_replay_reproduces_log_movements() {
    let fx = fixture();
    let embedder = HashedBowEmbedder::default();
    let ev = evaluator(&fx.ranker, &embedder);
    let before = fx.log.clone();
    for round in 1..=4 {
        let run = run_offline_eval(&fx.log, round, &StaticAgent, &ev).unwrap();
        assert!(run.errors.is_empty(), "{:?}", run.errors);
        let mut per_query: BTreeMap<&str, usize> = BTreeMap::new();
        for row in &run.rows {
            *per_query.entry(row.query_id.as_str()).or_default() += 1;
            let curr = fx.log.ranking(&row.query_id, round).unwrap();
            let next = fx.log.ranking(&row.query_id, round + 1).unwrap();
            assert_ne!(
                curr.top(),
                Some(row.doc_id.as_str()),
                "leaders are not modified"
            );
            assert_eq!(row.round, round + 1);
            assert_eq!(row.promotion.rank_curr, curr.rank_of(&row.doc_id).unwrap());
            assert_eq!(row.promotion.rank_next, next.rank_of(&row.doc_id).unwrap());
            assert_eq!(row.promotion.n, 4);
        }
        assert_eq!(per_query.len(), 6);
        assert!(per_query.values().all(|c| *c == 3));
    }
    assert_eq!(fx.log, before);
}

#[test]
fn copy_top_ties_with_previous_winner() {
    let fx = fixture();
    let embedder = HashedBowEmbedder::default();
    let ev = evaluator(&fx.ranker, &embedder);
    for round in 1..=4 {
        let run = run_offline_eval(&fx.log, round, &CopyTopAgent, &ev).unwrap();
        assert_eq!(run.rows.len(), 18);
        for row in &run.rows {
            let query = fx.log.query(&row.query_id).unwrap();
            let top = fx.log.ranking(&row.query_id, round).unwrap().top().unwrap();
            let winner = fx.log.version(&row.query_id, round, top).unwrap();
            let expect = fx
                .ranker
                .score_all(&query.text, &[winner.text.as_str()])
                .unwrap()[0];
            assert!(
                (row.score - expect).abs() <= 1e-12,
                "{} vs {expect}",
                row.score
            );
            assert!(row.promotion.scaled >= 0.0, "{:?}", row.promotion);
        }
    }
}

fn seat(player: &str, kind: PlayerKind, text: &str, agent: Arc<dyn Agent>) -> Seat {
    Seat {
        player_id: player.into(),
        doc_id: format!("{player}-doc"),
        kind,
        initial_text: text.into(),
        agent,
    }
}

fn game(query_id: &str, text: &str, seats: Vec<Seat>) -> Game {
    Game {
        query: rankcomp_core::Query {
            query_id: query_id.into(),
            text: text.into(),
        },
        seats,
    }
}

const TEXTS: [&str; 4] = [
    "Solar panels turn sunlight into power. Roofs suit them well.",
    "Batteries keep solar power for the evening.",
    "Gardens need water and patience.",
    "Solar power grows every year. Sunlight is free.",
];

fn tfidf() -> TfidfRanker {
    TfidfRanker::fit(TEXTS.iter().copied()).unwrap()
}

#[test]
fn all_static_roster_keeps_its_ranking() {
    let statik: Arc<dyn Agent> = Arc::new(StaticAgent);
    let seats = (0..4)
        .map(|i| {
            seat(
                &format!("p{i}"),
                PlayerKind::StaticDoc,
                TEXTS[i],
                statik.clone(),
            )
        })
        .collect();
    let out = run_online_sim(&[game("q", "solar power", seats)], 5, &tfidf(), 1).unwrap();
    assert!(out.failures.is_empty());
    let first = out.log.ranking("q", 1).unwrap().entries.clone();
    for r in 2..=5 {
        assert_eq!(out.log.ranking("q", r).unwrap().entries, first);
    }
}

#[test]
fn copy_top_bot_ties_with_round_one_winner() {
    let statik: Arc<dyn Agent> = Arc::new(StaticAgent);
    let mut seats: Vec<Seat> = (0..3)
        .map(|i| {
            seat(
                &format!("p{i}"),
                PlayerKind::StaticDoc,
                TEXTS[i],
                statik.clone(),
            )
        })
        .collect();
    seats.push(seat(
        "bot",
        PlayerKind::MockBot,
        TEXTS[2],
        Arc::new(CopyTopAgent),
    ));
    let ranker = tfidf();
    let out = run_online_sim(&[game("q", "solar power", seats)], 4, &ranker, 2).unwrap();
    let query = out.log.query("q").unwrap().clone();
    let winner = out.log.ranking("q", 1).unwrap().top().unwrap().to_string();
    let winner_text = out.log.version("q", 1, &winner).unwrap().text.clone();
    for r in 2..=4 {
        let bot = out.log.version("q", r, "bot-doc").unwrap();
        assert_eq!(bot.text, winner_text);
        let s = ranker
            .score_all(&query.text, &[bot.text.as_str(), winner_text.as_str()])
            .unwrap();
        assert!((s[0] - s[1]).abs() <= 1e-12);
        assert!(out.log.ranking("q", r).unwrap().rank_of("bot-doc").unwrap() <= 2);
    }
}

#[test]
fn full_simulation_round_trips_through_jsonl() {
    let spec = SyntheticSpec {
        queries: 15,
        players: 5,
        rounds: 7,
        static_players: 1,
        seed: 3,
    };
    let specs = synthetic_queries(&spec);
    let ranker = TfidfRanker::fit(
        specs
            .iter()
            .flat_map(|(_, s)| s.iter().map(|x| x.3.as_str())),
    )
    .unwrap();
    let statik: Arc<dyn Agent> = Arc::new(StaticAgent);
    let student: Arc<dyn Agent> = Arc::new(ShuffleAgent { seed: 3 });
    let games: Vec<Game> = specs
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
    let out = run_online_sim(&games, 7, &ranker, 1).unwrap();
    assert_eq!(out.log.versions().len(), 525);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.jsonl");
    out.log
        .write_jsonl(std::fs::File::create(&path).unwrap())
        .unwrap();
    assert_eq!(load_competition_log(&path).unwrap(), out.log);
}

struct FailingAgent;

impl Agent for FailingAgent {
    fn label(&self) -> String {
        "failing".into()
    }

    fn kind(&self) -> PlayerKind {
        PlayerKind::LlmBot
    }

    fn modify(&self, _ctx: &AgentContext<'_>) -> Result<AgentOutcome, AgentError> {
        Err(AgentError::Domain("scripted failure".into()))
    }
}

#[test]
fn failing_agent_keeps_previous_text() {
    let statik: Arc<dyn Agent> = Arc::new(StaticAgent);
    let seats = vec![
        seat("p0", PlayerKind::StaticDoc, TEXTS[0], statik.clone()),
        seat("p1", PlayerKind::StaticDoc, TEXTS[1], statik),
        seat("bad", PlayerKind::LlmBot, TEXTS[2], Arc::new(FailingAgent)),
    ];
    let out = run_online_sim(&[game("q", "solar power", seats)], 3, &tfidf(), 2).unwrap();
    assert_eq!(out.failures.len(), 2);
    assert!(out.failures.iter().all(|f| f.player_id == "bad"));
    for r in 1..=3 {
        assert_eq!(out.log.version("q", r, "bad-doc").unwrap().text, TEXTS[2]);
    }
}

#[test]
fn seat_limits_are_enforced() {
    let statik: Arc<dyn Agent> = Arc::new(StaticAgent);
    let one = vec![seat("p0", PlayerKind::StaticDoc, TEXTS[0], statik)];
    assert!(run_online_sim(&[game("q", "solar", one)], 2, &tfidf(), 1).is_err());
}
