//! Evaluation measures: scaled rank promotion, entailment-based
//! faithfulness to the original document and to the corpus, annotator vote
//! aggregation and the paired permutation test.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusSnapshot, DocVersion};
use crate::rankers::{RankError, Representation, SnapshotIndex};
use crate::services::{EntailmentScorer, ServiceError};
use crate::text::sentences;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Rank(#[from] RankError),
}

/// Entailment threshold above which a sentence counts as supported.
pub const ENTAILMENT_THRESHOLD: f64 = 0.5;

/// Default retrieval depth for corpus faithfulness.
pub const DEFAULT_K: usize = 10;

/// Default number of random sign flips in the permutation test.
pub const DEFAULT_PERMUTATIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromotionReport {
    pub rank_curr: u32,
    pub rank_next: u32,
    pub n: u32,
    pub raw: i64,
    pub scaled: f64,
}

/// Rank change between rounds, normalized by the largest promotion (if the
/// document moved up) or demotion (if it moved down) available from
/// `rank_curr`.
pub fn scaled_promotion(
    rank_curr: u32,
    rank_next: u32,
    n: u32,
) -> Result<PromotionReport, MetricError> {
    if n < 2 {
        return Err(MetricError::Domain(format!(
            "need at least 2 documents, got {n}"
        )));
    }
    for (name, r) in [("rank_curr", rank_curr), ("rank_next", rank_next)] {
        if r < 1 || r > n {
            return Err(MetricError::Domain(format!("{name}={r} outside [1, {n}]")));
        }
    }
    let raw = i64::from(rank_curr) - i64::from(rank_next);
    let scaled = match raw.signum() {
        1 => raw as f64 / f64::from(rank_curr - 1),
        -1 => raw as f64 / f64::from(n - rank_curr),
        _ => 0.0,
    };
    Ok(PromotionReport {
        rank_curr,
        rank_next,
        n,
        raw,
        scaled,
    })
}

/// How per-sentence entailment scores are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaithMode {
    /// Fraction of sentences with score >= 0.5.
    #[default]
    Thresholded,
    /// Mean of the raw scores.
    Mean,
}

fn aggregate_scores(scores: &[f64], mode: FaithMode) -> f64 {
    let n = scores.len() as f64;
    match mode {
        FaithMode::Thresholded => {
            scores
                .iter()
                .filter(|s| **s >= ENTAILMENT_THRESHOLD)
                .count() as f64
                / n
        }
        FaithMode::Mean => scores.iter().sum::<f64>() / n,
    }
}

/// Raw faithfulness of `hypothesis` to `premise`: per-sentence entailment of
/// the hypothesis' sentences by the whole premise, aggregated by `mode`.
pub fn raw_faithfulness(
    premise: &str,
    hypothesis: &str,
    scorer: &dyn EntailmentScorer,
    mode: FaithMode,
) -> Result<f64, MetricError> {
    let parts = sentences(hypothesis);
    if parts.is_empty() {
        return Err(MetricError::Domain("hypothesis has no sentences".into()));
    }
    let mut scores = Vec::with_capacity(parts.len());
    for s in &parts {
        let score = scorer.score(premise, s)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(
                ServiceError::Protocol(format!("entailment score {score} outside [0, 1]")).into(),
            );
        }
        scores.push(score);
    }
    Ok(aggregate_scores(&scores, mode))
}

/// A ratio whose denominator may vanish; degenerate ratios report 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub value: f64,
    pub degenerate: bool,
}

impl Normalized {
    pub fn ratio(numerator: f64, denominator: f64) -> Self {
        if denominator == 0.0 {
            Self {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Self {
                value: numerator / denominator,
                degenerate: false,
            }
        }
    }
}

/// Faithfulness of the modified document to the current one, normalized by
/// the current document's faithfulness to itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrigFaith {
    pub rf_raw: f64,
    pub rf_self: f64,
    pub normalized: Normalized,
}

pub fn orig_faith(
    current: &str,
    modified: &str,
    scorer: &dyn EntailmentScorer,
    mode: FaithMode,
) -> Result<OrigFaith, MetricError> {
    let rf_raw = raw_faithfulness(current, modified, scorer, mode)?;
    let rf_self = raw_faithfulness(current, current, scorer, mode)?;
    Ok(OrigFaith {
        rf_raw,
        rf_self,
        normalized: Normalized::ratio(rf_raw, rf_self),
    })
}

/// Which document probes the corpus for the retrieval set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeChoice {
    /// The current document retrieves one set used for both RCF values.
    #[default]
    Current,
    /// Each document retrieves its own set.
    Each,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFaith {
    pub rcf_mod: f64,
    pub rcf_curr: f64,
    pub normalized: Normalized,
    /// Fewer than k documents were available.
    pub short_set: bool,
    /// (doc_id, round) of the retrieved documents.
    pub retrieved: Vec<(String, u32)>,
}

/// Options for corpus faithfulness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusFaithOptions {
    pub k: usize,
    pub mode: FaithMode,
    pub probe: ProbeChoice,
}

impl Default for CorpusFaithOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            mode: FaithMode::Thresholded,
            probe: ProbeChoice::Current,
        }
    }
}

fn rcf(
    doc: &str,
    set: &[&DocVersion],
    scorer: &dyn EntailmentScorer,
    mode: FaithMode,
) -> Result<f64, MetricError> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for other in set {
        total += raw_faithfulness(&other.text, doc, scorer, mode)?;
        total += raw_faithfulness(doc, &other.text, scorer, mode)?;
    }
    Ok(total / (2.0 * set.len() as f64))
}

/// Raw corpus faithfulness of the modified and current documents against
/// their nearest corpus neighbours, and their ratio.
pub fn corpus_faithfulness(
    current: &DocVersion,
    modified: &DocVersion,
    snapshot: &CorpusSnapshot,
    representation: Representation<'_>,
    scorer: &dyn EntailmentScorer,
    options: CorpusFaithOptions,
) -> Result<CorpusFaith, MetricError> {
    let index = SnapshotIndex::new(snapshot)?;
    corpus_faithfulness_indexed(current, modified, &index, representation, scorer, options)
}

/// [`corpus_faithfulness`] over a prepared index, for evaluating many
/// documents against one snapshot.
pub fn corpus_faithfulness_indexed(
    current: &DocVersion,
    modified: &DocVersion,
    index: &SnapshotIndex<'_>,
    representation: Representation<'_>,
    scorer: &dyn EntailmentScorer,
    options: CorpusFaithOptions,
) -> Result<CorpusFaith, MetricError> {
    let curr_top = index.search(current, options.k, representation)?;
    let curr_set: Vec<&DocVersion> = curr_top.hits.iter().map(|(d, _)| d).collect();
    let mut short_set = curr_top.short;

    let rcf_curr = rcf(&current.text, &curr_set, scorer, options.mode)?;
    let rcf_mod = match options.probe {
        ProbeChoice::Current => rcf(&modified.text, &curr_set, scorer, options.mode)?,
        ProbeChoice::Each => {
            let mod_top = index.search(modified, options.k, representation)?;
            short_set |= mod_top.short;
            let mod_set: Vec<&DocVersion> = mod_top.hits.iter().map(|(d, _)| d).collect();
            rcf(&modified.text, &mod_set, scorer, options.mode)?
        }
    };
    Ok(CorpusFaith {
        rcf_mod,
        rcf_curr,
        normalized: Normalized::ratio(rcf_mod, rcf_curr),
        short_set,
        retrieved: curr_set
            .iter()
            .map(|d| (d.doc_id.clone(), d.round))
            .collect(),
    })
}

/// All faithfulness measures for one modified document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub rf_raw: f64,
    pub orig_faith: Normalized,
    pub sparse: CorpusFaith,
    pub dense: CorpusFaith,
    pub k: usize,
    pub mode: FaithMode,
}

impl FaithfulnessReport {
    pub fn corp_faith_sparse(&self) -> f64 {
        self.sparse.normalized.value
    }

    pub fn corp_faith_dense(&self) -> f64 {
        self.dense.normalized.value
    }

    pub fn degenerate(&self) -> bool {
        self.orig_faith.degenerate
            || self.sparse.normalized.degenerate
            || self.dense.normalized.degenerate
    }
}

/// 1 when at least three of the five annotators voted true.
pub fn majority_grade(votes: &[bool]) -> Result<u8, MetricError> {
    if votes.len() != 5 {
        return Err(MetricError::Domain(format!(
            "expected 5 votes, got {}",
            votes.len()
        )));
    }
    Ok(u8::from(votes.iter().filter(|v| **v).count() >= 3))
}

/// Relative slack when comparing permuted statistics against the observed
/// one, so that sums of the same magnitudes in a different order still
/// count as "at least as extreme".
const STAT_EPS: f64 = 1e-9;

pub(crate) fn at_least_as_extreme(stat: f64, observed: f64) -> bool {
    stat.abs() >= observed.abs() - STAT_EPS * observed.abs().max(1.0)
}

/// Two-tailed paired permutation test on the mean difference.
///
/// Each permutation flips the sign of every paired difference independently
/// with probability 1/2. The p-value counts the observed assignment:
/// `(1 + #{|stat| >= |observed|}) / (1 + permutations)`.
pub fn permutation_test(
    a: &[f64],
    b: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Domain(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(MetricError::Domain("paired samples are empty".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(MetricError::Domain(
            "paired samples contain non-finite values".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed: f64 = diffs.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..permutations {
        let mut stat = 0.0;
        for chunk in diffs.chunks(64) {
            let bits = rng.next_u64();
            for (i, d) in chunk.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    stat -= d;
                } else {
                    stat += d;
                }
            }
        }
        if at_least_as_extreme(stat, observed) {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (permutations + 1) as f64)
}
