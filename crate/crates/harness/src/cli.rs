//! Command-line surface and command implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rankcomp_core::agents::{
    Agent, CopyTopAgent, LlmBot, SentReplaceAgent, ShuffleAgent, StaticAgent,
};
use rankcomp_core::competition::{
    aggregate, evaluate_log, load_votes, run_offline_eval, run_online_sim, AggregateOptions,
    EvalOptions, EvalRow, Evaluator, Game, RowError, Seat, SimFailure,
};
use rankcomp_core::corpus::{load_competition_log, CompetitionLog, PlayerKind};
use rankcomp_core::prompts::{
    build_context, enumerate_grid_with_seed, grid_manifest, PromptConfig,
};
use rankcomp_core::rankers::{DenseRanker, RankingFunction, TfidfRanker};
use rankcomp_core::services::{
    AppendQueryClient, EchoClient, EmbeddingProvider, EntailmentScorer, HashedBowEmbedder,
    LexicalEntailment, LlmClient,
};
use rankcomp_core::synth::{synthetic_log, synthetic_queries, SyntheticSpec};
use serde::Serialize;

use crate::cache::ResponseCache;
use crate::clients::{
    HttpEmbedder, HttpEntailment, HttpLlm, RetryPolicy, ServiceClient, Transport, UreqTransport,
};
use crate::config::{MockLlm, RankerKind, RunConfig};
use crate::error::HarnessError;
use crate::fsio::{read_jsonl, write_atomic, write_json, write_jsonl};
use crate::report::{pvalues_csv, rows_csv, table_csv, table_markdown};

#[derive(Debug, Parser)]
#[command(
    name = "rankcomp",
    version,
    about = "Ranking-competition document-modification harness"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Competition log (JSONL).
    #[arg(long, global = true, value_name = "PATH")]
    pub log: Option<PathBuf>,
    /// Annotation votes (JSONL).
    #[arg(long, global = true, value_name = "PATH")]
    pub votes: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub round: Option<u32>,
    /// Agent name, grid label, or `grid`; repeat or comma-separate for several.
    #[arg(long, global = true, value_name = "NAME|grid", value_delimiter = ',')]
    pub agent: Vec<String>,
    #[arg(long, global = true, value_enum)]
    pub ranker: Option<RankerKind>,
    /// Use a deterministic mock LLM (default variant: append-query).
    #[arg(long, global = true, value_enum, num_args = 0..=1, default_missing_value = "append-query")]
    pub mock_llm: Option<MockLlm>,
    #[arg(long, global = true)]
    pub mock_entail: bool,
    #[arg(long, global = true)]
    pub mock_embed: bool,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub permutations: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a log and write its normalized form.
    Ingest,
    /// Modify-and-rerank evaluation of one recorded round.
    Offline,
    /// Simulate a multi-round competition and evaluate it.
    OnlineSim,
    /// Enumerate the prompt configuration grid.
    Grid {
        /// Also render every configuration's prompt for the first eligible
        /// document of the log at `--round`.
        #[arg(long)]
        render: bool,
    },
    /// Aggregate row files into summary tables.
    Report {
        /// Row files (JSONL) written by `offline` or `online-sim`.
        #[arg(long = "rows", value_name = "PATH", required = true)]
        rows: Vec<PathBuf>,
        /// Average per-round means instead of pooling rows.
        #[arg(long)]
        rounds_mean: bool,
        /// Only test pairs involving these groups (default: every pair).
        #[arg(long, value_delimiter = ',')]
        focus: Vec<String>,
    },
    /// Write a seeded synthetic competition log.
    Synth,
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub outputs: Vec<PathBuf>,
}

/// Merges file config, environment and flags.
pub fn resolve_config(
    common: &CommonArgs,
    env: impl Fn(&str) -> Option<String>,
) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(env);
    if let Some(p) = &common.log {
        cfg.paths.log = Some(p.clone());
    }
    if let Some(p) = &common.votes {
        cfg.paths.votes = Some(p.clone());
    }
    if let Some(p) = &common.out {
        cfg.paths.out_dir = Some(p.clone());
    }
    if let Some(p) = &common.cache_dir {
        cfg.paths.cache_dir = Some(p.clone());
    }
    if let Some(r) = common.round {
        cfg.evaluation.round = Some(r);
    }
    if !common.agent.is_empty() {
        cfg.agents = common.agent.clone();
    }
    if let Some(r) = common.ranker {
        cfg.ranker = r;
    }
    if let Some(m) = common.mock_llm {
        cfg.services.mock_llm = Some(m);
    }
    cfg.services.mock_entail |= common.mock_entail;
    cfg.services.mock_embed |= common.mock_embed;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.permutations {
        cfg.evaluation.permutations = n;
    }
    if let Some(k) = common.k {
        cfg.evaluation.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Concrete service handles for one run.
pub struct Services {
    pub llm: Option<Arc<dyn LlmClient>>,
    pub scorer: Arc<dyn EntailmentScorer>,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl Services {
    pub fn build(
        cfg: &RunConfig,
        need_llm: bool,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, HarnessError> {
        cfg.require_services(need_llm, true, true)?;
        let s = &cfg.services;
        let client = Arc::new(
            ServiceClient::new(
                transport,
                cfg.paths.cache_dir.as_ref().map(ResponseCache::new),
            )
            .with_policy(RetryPolicy {
                attempts: s.attempts,
                base_delay: Duration::from_millis(s.backoff_ms),
                timeout: Duration::from_secs(s.timeout_secs),
            })
            .with_max_in_flight(s.max_in_flight),
        );
        let llm: Option<Arc<dyn LlmClient>> = match (need_llm, s.mock_llm, &s.llm_url) {
            (false, _, _) => None,
            (true, Some(MockLlm::Echo), _) => Some(Arc::new(EchoClient)),
            (true, Some(MockLlm::AppendQuery), _) => Some(Arc::new(AppendQueryClient)),
            (true, None, Some(url)) => {
                let mut c = HttpLlm::new(client.clone(), url, &s.llm_model);
                if let Some(key) = &s.llm_api_key {
                    c = c.with_api_key(key);
                }
                Some(Arc::new(c))
            }
            (true, None, None) => unreachable!("checked by require_services"),
        };
        let scorer: Arc<dyn EntailmentScorer> = match &s.entail_url {
            _ if s.mock_entail => Arc::new(LexicalEntailment),
            Some(url) => Arc::new(HttpEntailment::new(client.clone(), url)),
            None => unreachable!("checked by require_services"),
        };
        let embedder: Arc<dyn EmbeddingProvider> = match &s.embed_url {
            _ if s.mock_embed => Arc::new(HashedBowEmbedder::default()),
            Some(url) => Arc::new(HttpEmbedder::new(client, url, s.embed_dim)),
            None => unreachable!("checked by require_services"),
        };
        Ok(Self {
            llm,
            scorer,
            embedder,
        })
    }
}

/// Names accepted by `--agent` besides grid labels.
pub const NAMED_AGENTS: [&str; 5] = [
    "static",
    "copy_top",
    "sent_replace",
    "pairwise_best",
    "listwise_best",
];

fn is_llm_agent(name: &str) -> bool {
    !matches!(name, "static" | "copy_top" | "sent_replace")
}

fn grid_by_label(seed: u64) -> BTreeMap<String, PromptConfig> {
    enumerate_grid_with_seed(seed)
        .into_iter()
        .map(|c| (c.label(), c))
        .collect()
}

/// Resolves agent names; `grid` expands to every grid configuration.
pub fn build_agents(
    names: &[String],
    seed: u64,
    ranker: &Arc<dyn RankingFunction>,
    llm: Option<&Arc<dyn LlmClient>>,
) -> Result<Vec<Arc<dyn Agent>>, HarnessError> {
    let grid = grid_by_label(seed);
    let llm_bot = |config: PromptConfig,
                   name: Option<&str>|
     -> Result<Arc<dyn Agent>, HarnessError> {
        let client =
            llm.ok_or_else(|| HarnessError::Config("LLM agent selected but no LLM client".into()))?;
        let bot = LlmBot::new(config, client.clone());
        Ok(Arc::new(match name {
            Some(n) => bot.named(n),
            None => bot,
        }))
    };
    let mut out: Vec<Arc<dyn Agent>> = Vec::new();
    for name in names {
        match name.as_str() {
            "static" => out.push(Arc::new(StaticAgent)),
            "copy_top" => out.push(Arc::new(CopyTopAgent)),
            "sent_replace" => out.push(Arc::new(SentReplaceAgent::new(ranker.clone()))),
            "pairwise_best" => out.push(llm_bot(
                PromptConfig {
                    seed,
                    ..PromptConfig::best_pairwise()
                },
                Some("pairwise_best"),
            )?),
            "listwise_best" => out.push(llm_bot(
                PromptConfig {
                    seed,
                    ..PromptConfig::best_listwise()
                },
                Some("listwise_best"),
            )?),
            "grid" => {
                for config in grid.values() {
                    out.push(llm_bot(config.clone(), None)?);
                }
            }
            label => match grid.get(label) {
                Some(config) => out.push(llm_bot(config.clone(), None)?),
                None => {
                    return Err(HarnessError::Config(format!(
                        "unknown agent `{label}`; expected one of {} , `grid`, or a grid label",
                        NAMED_AGENTS.join(", ")
                    )))
                }
            },
        }
    }
    Ok(out)
}

fn build_ranker(
    kind: RankerKind,
    fit_texts: &[&str],
    embedder: &Arc<dyn EmbeddingProvider>,
) -> Result<Arc<dyn RankingFunction>, HarnessError> {
    Ok(match kind {
        RankerKind::Tfidf => Arc::new(TfidfRanker::fit(fit_texts.iter().copied())?),
        RankerKind::Dense => Arc::new(DenseRanker::new(embedder.clone())),
    })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, HarnessError> {
    cfg.paths
        .out_dir
        .as_deref()
        .ok_or_else(|| HarnessError::Config("no output directory: pass --out".into()))
}

fn require_log(cfg: &RunConfig) -> Result<CompetitionLog, HarnessError> {
    let path = cfg
        .paths
        .log
        .as_ref()
        .ok_or_else(|| HarnessError::Config("no log: pass --log".into()))?;
    Ok(load_competition_log(path)?)
}

fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        k: cfg.evaluation.k,
        mode: cfg.evaluation.faith_mode,
        probe: cfg.evaluation.probe,
        snapshot: cfg.evaluation.snapshot,
        include_peers: cfg.evaluation.include_peers,
    }
}

fn write_reports(
    dir: &Path,
    rows: &[EvalRow],
    cfg: &RunConfig,
    rounds_mean: bool,
    focus: Vec<String>,
    outputs: &mut Vec<PathBuf>,
) -> Result<(), HarnessError> {
    let mut emit = |name: &str, bytes: &[u8]| -> Result<(), HarnessError> {
        let p = dir.join(name);
        write_atomic(&p, bytes)?;
        outputs.push(p);
        Ok(())
    };
    if rows.is_empty() {
        emit("report.md", b"No rows.\n")?;
        return Ok(());
    }
    let table = aggregate(
        rows,
        AggregateOptions {
            rounds_mean,
            permutations: cfg.evaluation.permutations,
            seed: cfg.seed,
            focus,
        },
    )?;
    emit("report.csv", &table_csv(&table)?)?;
    emit("report_pvalues.csv", &pvalues_csv(&table)?)?;
    emit("report.md", table_markdown(&table).as_bytes())?;
    Ok(())
}

fn write_rows(
    dir: &Path,
    rows: &[EvalRow],
    outputs: &mut Vec<PathBuf>,
) -> Result<(), HarnessError> {
    let jsonl = dir.join("rows.jsonl");
    write_jsonl(&jsonl, rows)?;
    let csv = dir.join("rows.csv");
    write_atomic(&csv, &rows_csv(rows)?)?;
    outputs.push(jsonl);
    outputs.push(csv);
    Ok(())
}

fn annotate(cfg: &RunConfig, rows: &mut [EvalRow]) -> Result<(), HarnessError> {
    if let Some(p) = &cfg.paths.votes {
        load_votes(p)?.annotate(rows);
    }
    Ok(())
}

/// Runs `command` under `cfg`, using `transport` for any non-mocked service.
pub fn execute(
    command: &Command,
    cfg: &RunConfig,
    transport: Arc<dyn Transport>,
) -> Result<Summary, HarnessError> {
    match command {
        Command::Ingest => ingest(cfg),
        Command::Offline => offline(cfg, transport),
        Command::OnlineSim => online_sim(cfg, transport),
        Command::Grid { render } => grid(cfg, *render),
        Command::Report {
            rows,
            rounds_mean,
            focus,
        } => report(cfg, rows, *rounds_mean || cfg.evaluation.rounds_mean, focus),
        Command::Synth => synth(cfg),
    }
}

pub fn run(cli: &Cli) -> Result<Summary, HarnessError> {
    let cfg = resolve_config(&cli.common, |k| std::env::var(k).ok())?;
    execute(&cli.command, &cfg, Arc::new(UreqTransport))
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    queries: usize,
    players: usize,
    versions: usize,
    max_round: u32,
    warnings: &'a [rankcomp_core::corpus::LogWarning],
}

fn ingest(cfg: &RunConfig) -> Result<Summary, HarnessError> {
    let log = require_log(cfg)?;
    let dir = out_dir(cfg)?;
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    let log_path = dir.join("log.jsonl");
    write_atomic(&log_path, &buf)?;
    let summary_path = dir.join("ingest.json");
    write_json(
        &summary_path,
        &IngestSummary {
            queries: log.queries().count(),
            players: log.players().count(),
            versions: log.versions().len(),
            max_round: log.max_round(),
            warnings: log.warnings(),
        },
    )?;
    Ok(Summary {
        command: "ingest",
        outputs: vec![log_path, summary_path],
    })
}

fn transport_failures(errors: &[RowError]) -> usize {
    errors.iter().filter(|e| e.transport).count()
}

fn offline(cfg: &RunConfig, transport: Arc<dyn Transport>) -> Result<Summary, HarnessError> {
    let log = require_log(cfg)?;
    let dir = out_dir(cfg)?;
    let round = cfg
        .evaluation
        .round
        .ok_or_else(|| HarnessError::Config("offline needs --round".into()))?;
    let need_llm = cfg.agents.iter().any(|a| is_llm_agent(a));
    let services = Services::build(cfg, need_llm, transport)?;
    let texts: Vec<&str> = log.versions().iter().map(|v| v.text.as_str()).collect();
    let ranker = build_ranker(cfg.ranker, &texts, &services.embedder)?;
    let agents = build_agents(&cfg.agents, cfg.seed, &ranker, services.llm.as_ref())?;
    let ev = Evaluator {
        ranker: ranker.as_ref(),
        scorer: services.scorer.as_ref(),
        embedder: services.embedder.as_ref(),
        options: eval_options(cfg),
    };

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let several = agents.len() > 1;
    for agent in &agents {
        let run = run_offline_eval(&log, round, agent.as_ref(), &ev)?;
        rows.extend(run.rows);
        // Peers are ranked against this agent's edits, so with several
        // agents their rows are kept apart per agent.
        rows.extend(run.peer_rows.into_iter().map(|mut r| {
            if several {
                r.agent = format!("{} vs {}", r.agent, agent.label());
            }
            r
        }));
        errors.extend(run.errors);
    }
    annotate(cfg, &mut rows)?;

    let mut outputs = Vec::new();
    write_rows(dir, &rows, &mut outputs)?;
    let err_path = dir.join("errors.jsonl");
    write_jsonl(&err_path, &errors)?;
    outputs.push(err_path);
    let focus = agents.iter().map(|a| a.label()).collect();
    write_reports(
        dir,
        &rows,
        cfg,
        cfg.evaluation.rounds_mean,
        focus,
        &mut outputs,
    )?;

    let failed = transport_failures(&errors);
    if failed > 0 {
        return Err(HarnessError::Transport(format!(
            "{failed} document(s) failed on service calls; see {}",
            dir.join("errors.jsonl").display()
        )));
    }
    Ok(Summary {
        command: "offline",
        outputs,
    })
}

/// Builds the games of an online simulation. Seeded from a log: students
/// replay their recorded texts, static players stay static and every bot
/// seat is taken by an agent under test. Otherwise a synthetic roster is
/// generated: static players, shuffling students and one bot seat.
/// Agents are assigned to queries round-robin.
fn build_games(
    cfg: &RunConfig,
    log: Option<&CompetitionLog>,
    agents: &[Arc<dyn Agent>],
) -> Result<(Vec<Game>, BTreeMap<String, String>), HarnessError> {
    let mut labels = BTreeMap::new();
    let mut games = Vec::new();
    let students: Arc<dyn Agent> = match log {
        Some(l) => Arc::new(rankcomp_core::agents::ReplayAgent::new(Arc::new(l.clone()))),
        None => Arc::new(ShuffleAgent { seed: cfg.seed }),
    };
    match log {
        Some(log) => {
            for (qi, query) in log.queries().enumerate() {
                let agent = &agents[qi % agents.len()];
                let mut seats = Vec::new();
                for v in log.versions_in(&query.query_id, 1) {
                    let kind = log.player_kind(&v.player_id).unwrap_or(PlayerKind::Student);
                    let (seat_agent, player_id, kind): (Arc<dyn Agent>, String, PlayerKind) =
                        match kind {
                            PlayerKind::StaticDoc => {
                                (Arc::new(StaticAgent), v.player_id.clone(), kind)
                            }
                            PlayerKind::Student => (students.clone(), v.player_id.clone(), kind),
                            _ => {
                                let id = format!("{}@{}", v.player_id, agent.label());
                                labels.insert(id.clone(), agent.label());
                                (agent.clone(), id, agent.kind())
                            }
                        };
                    seats.push(Seat {
                        player_id,
                        doc_id: v.doc_id.clone(),
                        kind,
                        initial_text: v.text.clone(),
                        agent: seat_agent,
                    });
                }
                games.push(Game {
                    query: query.clone(),
                    seats,
                });
            }
        }
        None => {
            let sim = &cfg.simulation;
            let spec = SyntheticSpec {
                queries: sim.queries,
                players: sim.players,
                rounds: sim.rounds,
                static_players: sim.static_players,
                seed: cfg.seed,
            };
            for (qi, (query, seats)) in synthetic_queries(&spec).into_iter().enumerate() {
                let agent = &agents[qi % agents.len()];
                let last = seats.len() - 1;
                let seats = seats
                    .into_iter()
                    .enumerate()
                    .map(|(i, (player_id, doc_id, kind, text))| {
                        let (seat_agent, player_id, kind): (Arc<dyn Agent>, String, PlayerKind) =
                            if i == last {
                                let id = format!("{player_id}@{}", agent.label());
                                labels.insert(id.clone(), agent.label());
                                (agent.clone(), id, agent.kind())
                            } else if kind == PlayerKind::StaticDoc {
                                (Arc::new(StaticAgent), player_id, kind)
                            } else {
                                (students.clone(), player_id, kind)
                            };
                        Seat {
                            player_id,
                            doc_id,
                            kind,
                            initial_text: text,
                            agent: seat_agent,
                        }
                    })
                    .collect();
                games.push(Game { query, seats });
            }
        }
    }
    Ok((games, labels))
}

fn online_sim(cfg: &RunConfig, transport: Arc<dyn Transport>) -> Result<Summary, HarnessError> {
    let dir = out_dir(cfg)?;
    let seed_log = cfg
        .paths
        .log
        .as_ref()
        .map(load_competition_log)
        .transpose()?;
    let need_llm = cfg.agents.iter().any(|a| is_llm_agent(a));
    let services = Services::build(cfg, need_llm, transport)?;

    // The ranker is fixed before play: fitted on the texts that seed it.
    let fit_texts: Vec<String> = match &seed_log {
        Some(l) => l.versions().iter().map(|v| v.text.clone()).collect(),
        None => synthetic_queries(&SyntheticSpec {
            queries: cfg.simulation.queries,
            players: cfg.simulation.players,
            rounds: cfg.simulation.rounds,
            static_players: cfg.simulation.static_players,
            seed: cfg.seed,
        })
        .into_iter()
        .flat_map(|(_, seats)| seats.into_iter().map(|s| s.3))
        .collect(),
    };
    let fit_refs: Vec<&str> = fit_texts.iter().map(String::as_str).collect();
    let ranker = build_ranker(cfg.ranker, &fit_refs, &services.embedder)?;
    let agents = build_agents(&cfg.agents, cfg.seed, &ranker, services.llm.as_ref())?;
    let (games, labels) = build_games(cfg, seed_log.as_ref(), &agents)?;

    let rounds = match &seed_log {
        Some(l) => l.max_round().max(cfg.simulation.rounds),
        None => cfg.simulation.rounds,
    };
    let outcome = run_online_sim(
        &games,
        rounds,
        ranker.as_ref(),
        cfg.simulation.bot_entry_round,
    )?;

    let ev = Evaluator {
        ranker: ranker.as_ref(),
        scorer: services.scorer.as_ref(),
        embedder: services.embedder.as_ref(),
        options: eval_options(cfg),
    };
    let mut rows = evaluate_log(&outcome.log, cfg.simulation.bot_entry_round, &ev, &labels)?;
    annotate(cfg, &mut rows)?;

    let mut outputs = Vec::new();
    let mut buf = Vec::new();
    outcome.log.write_jsonl(&mut buf)?;
    let log_path = dir.join("log.jsonl");
    write_atomic(&log_path, &buf)?;
    outputs.push(log_path);
    let fail_path = dir.join("failures.jsonl");
    write_jsonl::<SimFailure>(&fail_path, &outcome.failures)?;
    outputs.push(fail_path);
    write_rows(dir, &rows, &mut outputs)?;
    let focus = agents.iter().map(|a| a.label()).collect();
    write_reports(dir, &rows, cfg, true, focus, &mut outputs)?;
    Ok(Summary {
        command: "online-sim",
        outputs,
    })
}

#[derive(Serialize)]
struct RenderedBundle {
    label: String,
    query_id: String,
    doc_id: String,
    round: u32,
    #[serde(flatten)]
    result: RenderResult,
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum RenderResult {
    Bundle(rankcomp_core::prompts::PromptBundle),
    Error(String),
}

fn grid(cfg: &RunConfig, render: bool) -> Result<Summary, HarnessError> {
    let dir = out_dir(cfg)?;
    let configs = enumerate_grid_with_seed(cfg.seed);
    let manifest = grid_manifest();
    if manifest.count != configs.len() {
        return Err(HarnessError::Data(format!(
            "grid has {} configurations but the manifest formula gives {}",
            configs.len(),
            manifest.count
        )));
    }
    let mut outputs = Vec::new();
    let manifest_path = dir.join("grid.json");
    write_json(&manifest_path, &manifest)?;
    outputs.push(manifest_path);
    let configs_path = dir.join("configs.jsonl");
    write_jsonl(&configs_path, &configs)?;
    outputs.push(configs_path);

    if render {
        let log = require_log(cfg)?;
        let round = cfg
            .evaluation
            .round
            .ok_or_else(|| HarnessError::Config("grid --render needs --round".into()))?;
        // The first non-top document of the first query, competing next round.
        let (query, doc) = log
            .queries()
            .find_map(|q| {
                let ranking = log.ranking(&q.query_id, round)?;
                let (doc_id, _) = ranking.entries.get(1)?;
                Some((q, log.version(&q.query_id, round, doc_id)?))
            })
            .ok_or_else(|| {
                HarnessError::Data(format!("no query has a non-top document in round {round}"))
            })?;
        let bundles: Vec<RenderedBundle> = configs
            .iter()
            .map(|c| RenderedBundle {
                label: c.label(),
                query_id: query.query_id.clone(),
                doc_id: doc.doc_id.clone(),
                round: round + 1,
                result: match build_context(c, &log, query, doc, round + 1) {
                    Ok(b) => RenderResult::Bundle(b),
                    Err(e) => RenderResult::Error(e.to_string()),
                },
            })
            .collect();
        let p = dir.join("bundles.jsonl");
        write_jsonl(&p, &bundles)?;
        outputs.push(p);
    }
    Ok(Summary {
        command: "grid",
        outputs,
    })
}

fn report(
    cfg: &RunConfig,
    files: &[PathBuf],
    rounds_mean: bool,
    focus: &[String],
) -> Result<Summary, HarnessError> {
    let dir = out_dir(cfg)?;
    let mut rows: Vec<EvalRow> = Vec::new();
    for f in files {
        rows.extend(read_jsonl::<EvalRow>(f)?);
    }
    if rows.is_empty() {
        return Err(HarnessError::Data("no rows to report".into()));
    }
    annotate(cfg, &mut rows)?;
    let mut outputs = Vec::new();
    write_reports(dir, &rows, cfg, rounds_mean, focus.to_vec(), &mut outputs)?;
    Ok(Summary {
        command: "report",
        outputs,
    })
}

fn synth(cfg: &RunConfig) -> Result<Summary, HarnessError> {
    let dir = out_dir(cfg)?;
    let sim = &cfg.simulation;
    let log = synthetic_log(&SyntheticSpec {
        queries: sim.queries,
        players: sim.players,
        rounds: sim.rounds,
        static_players: sim.static_players,
        seed: cfg.seed,
    })?;
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    let p = dir.join("log.jsonl");
    write_atomic(&p, &buf)?;
    Ok(Summary {
        command: "synth",
        outputs: vec![p],
    })
}
