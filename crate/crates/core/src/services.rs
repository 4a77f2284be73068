//! Contracts for the external models the harness consumes (entailment
//! scorer, embedding encoder, chat LLM) together with deterministic mock
//! implementations used in tests and offline runs.

use std::collections::BTreeSet;
use std::sync::Mutex;

use thiserror::Error;

use crate::rankers::{tokenize, DenseVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("transport failure for request {digest} after {attempts} attempt(s): {message}")]
    Transport {
        digest: String,
        attempts: u32,
        message: String,
    },
    #[error("malformed service response: {0}")]
    Protocol(String),
}

/// Scores how strongly `premise` entails `hypothesis`, in `[0, 1]`.
pub trait EntailmentScorer: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ServiceError>;
}

/// Maps texts to dense vectors of a fixed, declared dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<DenseVector>, ServiceError>;
}

/// A single-turn chat generation request.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_retries: u32,
}

pub trait LlmClient: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ServiceError>;
}

/// Lexical-overlap stand-in for an NLI model: the fraction of the
/// hypothesis' distinct tokens that also occur in the premise.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalEntailment;

impl EntailmentScorer for LexicalEntailment {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ServiceError> {
        let hyp: BTreeSet<String> = tokenize(hypothesis).into_iter().collect();
        if hyp.is_empty() {
            return Ok(0.0);
        }
        let prem: BTreeSet<String> = tokenize(premise).into_iter().collect();
        let shared = hyp.iter().filter(|t| prem.contains(*t)).count();
        Ok(shared as f64 / hyp.len() as f64)
    }
}

/// Dimension of the hashed bag-of-words mock encoder.
pub const MOCK_EMBED_DIM: usize = 64;

/// 64-bit FNV-1a; stable across platforms and releases, unlike `std`'s
/// `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hashed bag-of-words encoder: each token increments the bucket it hashes
/// to, then the vector is L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedBowEmbedder {
    dim: usize,
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self {
            dim: MOCK_EMBED_DIM,
        }
    }
}

impl HashedBowEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_one(&self, text: &str) -> DenseVector {
        let mut v = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            v[(fnv1a(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        DenseVector::new(v).expect("hashed counts are finite")
    }
}

impl EmbeddingProvider for HashedBowEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<DenseVector>, ServiceError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

const QUERY_LABEL: &str = "- Candidate Query: ";
const DOCUMENT_LABEL: &str = "- Candidate Document: ";

/// Pulls the candidate document out of a rendered shared prompt.
pub fn candidate_document(system_text: &str) -> Option<&str> {
    let start = system_text.find(DOCUMENT_LABEL)? + DOCUMENT_LABEL.len();
    Some(system_text[start..].trim_end_matches('\n'))
}

/// Pulls the candidate query out of a rendered shared prompt.
pub fn candidate_query(system_text: &str) -> Option<&str> {
    let start = system_text.find(QUERY_LABEL)? + QUERY_LABEL.len();
    let rest = &system_text[start..];
    Some(rest.split('\n').next().unwrap_or(rest))
}

/// Returns the candidate document unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoClient;

impl LlmClient for EchoClient {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ServiceError> {
        candidate_document(&request.system_text)
            .map(str::to_string)
            .ok_or_else(|| ServiceError::Protocol("prompt has no candidate document".into()))
    }
}

/// Appends the candidate query as an extra sentence, dropping trailing
/// sentences if needed to stay under the word cap.
#[derive(Debug, Default, Clone, Copy)]
pub struct AppendQueryClient;

impl LlmClient for AppendQueryClient {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ServiceError> {
        let doc = candidate_document(&request.system_text)
            .ok_or_else(|| ServiceError::Protocol("prompt has no candidate document".into()))?;
        let query = candidate_query(&request.system_text).unwrap_or_default();
        let addition = format!("{}.", capitalize(query.trim()));
        let budget = crate::text::WORD_CAP.saturating_sub(crate::text::word_count(&addition));
        let mut kept = Vec::new();
        let mut used = 0;
        for s in crate::text::sentences(doc) {
            let n = crate::text::word_count(&s);
            if used + n > budget {
                break;
            }
            used += n;
            kept.push(s);
        }
        kept.push(addition);
        Ok(kept.join(" "))
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Replays a fixed transcript, one response per call; the final response
/// repeats once the transcript is exhausted.
#[derive(Debug)]
pub struct ScriptedClient {
    responses: Vec<Result<String, ServiceError>>,
    cursor: Mutex<usize>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_results(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_results<I>(responses: I) -> Self
    where
        I: IntoIterator<Item = Result<String, ServiceError>>,
    {
        let responses: Vec<_> = responses.into_iter().collect();
        assert!(
            !responses.is_empty(),
            "scripted client needs at least one response"
        );
        Self {
            responses,
            cursor: Mutex::new(0),
        }
    }

    /// Number of calls served so far.
    pub fn calls(&self) -> usize {
        *self.cursor.lock().unwrap()
    }
}

impl LlmClient for ScriptedClient {
    fn generate(&self, _request: &GenerationRequest) -> Result<String, ServiceError> {
        let mut cursor = self.cursor.lock().unwrap();
        let idx = (*cursor).min(self.responses.len() - 1);
        *cursor += 1;
        self.responses[idx].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_entailment_bounds() {
        let s = LexicalEntailment;
        assert_eq!(s.score("the cat sat", "The cat!").unwrap(), 1.0);
        assert_eq!(s.score("the cat sat", "dogs bark").unwrap(), 0.0);
        assert_eq!(s.score("the cat sat", "cat dog").unwrap(), 0.5);
        assert_eq!(s.score("anything", "...").unwrap(), 0.0);
    }

    #[test]
    fn hashed_embedder_is_unit_norm_and_deterministic() {
        let e = HashedBowEmbedder::default();
        let a = e.embed_one("solar panels on the roof");
        let b = e.embed_one("solar panels on the roof");
        assert_eq!(a, b);
        assert_eq!(a.dim(), MOCK_EMBED_DIM);
        let norm: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(e.embed_one("").as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn scripted_client_repeats_last() {
        let c = ScriptedClient::new(["one", "two"]);
        let req = GenerationRequest {
            system_text: String::new(),
            user_text: String::new(),
            temperature: 0.0,
            max_retries: 0,
        };
        assert_eq!(c.generate(&req).unwrap(), "one");
        assert_eq!(c.generate(&req).unwrap(), "two");
        assert_eq!(c.generate(&req).unwrap(), "two");
        assert_eq!(c.calls(), 3);
    }
}
