//! Run configuration: a TOML file, then environment overrides for service
//! endpoints and secrets, then command-line flags.

use std::path::{Path, PathBuf};

use rankcomp_core::competition::SnapshotScope;
use rankcomp_core::metrics::{FaithMode, ProbeChoice, DEFAULT_K, DEFAULT_PERMUTATIONS};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

pub const ENV_LLM_URL: &str = "RANKCOMP_LLM_URL";
pub const ENV_LLM_MODEL: &str = "RANKCOMP_LLM_MODEL";
pub const ENV_LLM_API_KEY: &str = "RANKCOMP_LLM_API_KEY";
pub const ENV_ENTAIL_URL: &str = "RANKCOMP_ENTAIL_URL";
pub const ENV_EMBED_URL: &str = "RANKCOMP_EMBED_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RankerKind {
    #[default]
    Tfidf,
    Dense,
}

/// Deterministic LLM stand-ins selectable from the config or `--mock-llm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MockLlm {
    Echo,
    #[default]
    AppendQuery,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub log: Option<PathBuf>,
    pub votes: Option<PathBuf>,
    pub rows: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Services {
    pub llm_url: Option<String>,
    pub llm_model: String,
    #[serde(skip_serializing)]
    pub llm_api_key: Option<String>,
    pub entail_url: Option<String>,
    pub embed_url: Option<String>,
    pub embed_dim: usize,
    pub mock_llm: Option<MockLlm>,
    pub mock_entail: bool,
    pub mock_embed: bool,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for Services {
    fn default() -> Self {
        Self {
            llm_url: None,
            llm_model: "gpt-4o".into(),
            llm_api_key: None,
            entail_url: None,
            embed_url: None,
            embed_dim: 1024,
            mock_llm: None,
            mock_entail: false,
            mock_embed: false,
            max_in_flight: crate::clients::DEFAULT_MAX_IN_FLIGHT,
            timeout_secs: 60,
            attempts: 3,
            backoff_ms: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Evaluation {
    pub round: Option<u32>,
    pub k: usize,
    pub permutations: usize,
    pub faith_mode: FaithMode,
    pub probe: ProbeChoice,
    pub snapshot: SnapshotScope,
    pub include_peers: bool,
    pub rounds_mean: bool,
}

impl Default for Evaluation {
    fn default() -> Self {
        Self {
            round: None,
            k: DEFAULT_K,
            permutations: DEFAULT_PERMUTATIONS,
            faith_mode: FaithMode::Thresholded,
            probe: ProbeChoice::Current,
            snapshot: SnapshotScope::ThroughRound,
            include_peers: true,
            rounds_mean: false,
        }
    }
}

/// Shape of a simulated competition when no log seeds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Simulation {
    pub queries: usize,
    pub players: usize,
    pub static_players: usize,
    pub rounds: u32,
    pub bot_entry_round: u32,
}

impl Default for Simulation {
    fn default() -> Self {
        Self {
            queries: 15,
            players: 5,
            static_players: 1,
            rounds: 7,
            bot_entry_round: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub ranker: RankerKind,
    /// Agent names: `static`, `copy_top`, `sent_replace`, `pairwise_best`,
    /// `listwise_best`, a grid label such as `pairwise-q1-e3-r0-h1-random-t0`,
    /// or `grid` for every grid configuration.
    pub agents: Vec<String>,
    pub seed: u64,
    pub services: Services,
    pub evaluation: Evaluation,
    pub simulation: Simulation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            ranker: RankerKind::Tfidf,
            agents: vec!["pairwise_best".into()],
            seed: 0,
            services: Services::default(),
            evaluation: Evaluation::default(),
            simulation: Simulation::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths in the file are relative to the file.
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    /// Applies endpoint/secret overrides from `lookup` (normally the process
    /// environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let s = &mut self.services;
        if let Some(v) = lookup(ENV_LLM_URL) {
            s.llm_url = Some(v);
        }
        if let Some(v) = lookup(ENV_LLM_MODEL) {
            s.llm_model = v;
        }
        if let Some(v) = lookup(ENV_LLM_API_KEY) {
            s.llm_api_key = Some(v);
        }
        if let Some(v) = lookup(ENV_ENTAIL_URL) {
            s.entail_url = Some(v);
        }
        if let Some(v) = lookup(ENV_EMBED_URL) {
            s.embed_url = Some(v);
        }
    }

    /// Checks the settings every command relies on.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.agents.is_empty() {
            return bad("at least one agent must be selected".into());
        }
        for (name, p) in [
            ("log", &self.paths.log),
            ("votes", &self.paths.votes),
            ("rows", &self.paths.rows),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("{name} path {} does not exist", p.display()));
                }
            }
        }
        if self.evaluation.k == 0 {
            return bad("k must be positive".into());
        }
        if self.evaluation.permutations == 0 {
            return bad("permutation count must be positive".into());
        }
        if self.services.attempts == 0 {
            return bad("attempts must be positive".into());
        }
        if self.services.max_in_flight == 0 {
            return bad("max_in_flight must be positive".into());
        }
        let sim = &self.simulation;
        if sim.bot_entry_round > sim.rounds || sim.rounds == 0 {
            return bad(format!(
                "bot_entry_round {} must be within 1..={}",
                sim.bot_entry_round, sim.rounds
            ));
        }
        if sim.static_players >= sim.players {
            return bad("simulation needs at least one non-static player".into());
        }
        Ok(())
    }

    /// Checks that every non-mocked service has an endpoint.
    pub fn require_services(
        &self,
        llm: bool,
        entail: bool,
        embed: bool,
    ) -> Result<(), HarnessError> {
        let s = &self.services;
        let missing = [
            (
                llm && s.mock_llm.is_none() && s.llm_url.is_none(),
                ENV_LLM_URL,
                "--mock-llm",
            ),
            (
                entail && !s.mock_entail && s.entail_url.is_none(),
                ENV_ENTAIL_URL,
                "--mock-entail",
            ),
            (
                embed && !s.mock_embed && s.embed_url.is_none(),
                ENV_EMBED_URL,
                "--mock-embed",
            ),
        ];
        for (absent, env, flag) in missing {
            if absent {
                return Err(HarnessError::Config(format!(
                    "no endpoint: set {env} or pass {flag}"
                )));
            }
        }
        Ok(())
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.log,
            &mut self.votes,
            &mut self.rows,
            &mut self.cache_dir,
            &mut self.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
