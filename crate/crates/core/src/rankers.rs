//! Ranking functions: a TF.IDF cosine ranker, a dense-embedding cosine
//! ranker, and exhaustive top-k similarity search over a corpus snapshot.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::corpus::{CorpusSnapshot, DocVersion, Query};
use crate::services::{EmbeddingProvider, ServiceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("{0}")]
    Domain(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("representation mismatch: cannot compare sparse and dense vectors")]
    RepresentationMismatch,
    #[error("embedding request for documents [{}] failed: {source}", doc_ids.join(", "))]
    Provider {
        doc_ids: Vec<String>,
        #[source]
        source: ServiceError,
    },
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Term-id → weight, sorted by term id, zero weights never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Builds a vector from arbitrary (term, weight) pairs. Duplicate ids are
    /// summed; zero and non-finite weights are rejected or dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, RankError> {
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for (id, w) in pairs {
            if !w.is_finite() {
                return Err(RankError::Domain(format!(
                    "non-finite weight for term {id}"
                )));
            }
            *map.entry(id).or_insert(0.0) += w;
        }
        Ok(Self {
            entries: map.into_iter().filter(|(_, w)| *w != 0.0).collect(),
        })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, id: u32) -> f64 {
        self.entries
            .binary_search_by_key(&id, |(i, _)| *i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, wa) = self.entries[i];
            let (b, wb) = other.entries[j];
            match a.cmp(&b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += wa * wb;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self, RankError> {
        if let Some(pos) = values.iter().position(|x| !x.is_finite()) {
            return Err(RankError::Domain(format!("non-finite component at {pos}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Either representation; cosine is only defined within one.
#[derive(Debug, Clone, PartialEq)]
pub enum Vector {
    Sparse(SparseVector),
    Dense(DenseVector),
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

pub fn sparse_cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 0.0;
    }
    clamp_unit(a.dot(b) / denom)
}

pub fn dense_cosine(a: &DenseVector, b: &DenseVector) -> Result<f64, RankError> {
    if a.dim() != b.dim() {
        return Err(RankError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(clamp_unit(dot / (na.sqrt() * nb.sqrt())))
}

/// Cosine similarity; a zero vector scores 0 against anything.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, RankError> {
    match (a, b) {
        (Vector::Sparse(a), Vector::Sparse(b)) => Ok(sparse_cosine(a, b)),
        (Vector::Dense(a), Vector::Dense(b)) => dense_cosine(a, b),
        _ => Err(RankError::RepresentationMismatch),
    }
}

/// Vocabulary and document frequencies of a fitted corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocab: BTreeMap<String, u32>,
    df: Vec<u32>,
    n_docs: usize,
}

impl TfidfModel {
    pub fn fit<'a, I>(corpus: I) -> Result<Self, RankError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df_by_term: BTreeMap<String, u32> = BTreeMap::new();
        let mut n_docs = 0usize;
        for text in corpus {
            n_docs += 1;
            let mut terms = tokenize(text);
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df_by_term.entry(t).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(RankError::Domain(
                "cannot fit TF.IDF on an empty corpus".into(),
            ));
        }
        let mut vocab = BTreeMap::new();
        let mut df = Vec::with_capacity(df_by_term.len());
        for (id, (term, count)) in df_by_term.into_iter().enumerate() {
            vocab.insert(term, id as u32);
            df.push(count);
        }
        Ok(Self { vocab, df, n_docs })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.vocab.get(term).copied()
    }

    pub fn df(&self, term: &str) -> Option<u32> {
        self.term_id(term).map(|id| self.df[id as usize])
    }

    /// Smoothed inverse document frequency, `ln((N+1)/(df+1)) + 1`.
    pub fn idf(&self, term_id: u32) -> f64 {
        let df = f64::from(self.df[term_id as usize]);
        ((self.n_docs as f64 + 1.0) / (df + 1.0)).ln() + 1.0
    }

    /// Raw term frequency times smoothed idf, L2-normalized. Out-of-vocabulary
    /// tokens are ignored; an all-OOV text yields the zero vector.
    pub fn vector(&self, text: &str) -> SparseVector {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(id) = self.term_id(&token) {
                *tf.entry(id).or_insert(0.0) += 1.0;
            }
        }
        let weighted: Vec<(u32, f64)> = tf
            .into_iter()
            .map(|(id, count)| (id, count * self.idf(id)))
            .collect();
        let norm = weighted.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        SparseVector {
            entries: if norm > 0.0 {
                weighted.into_iter().map(|(id, w)| (id, w / norm)).collect()
            } else {
                Vec::new()
            },
        }
    }
}

/// One scored entry of a ranked list.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Documents ordered by descending score with ties broken by ascending
/// doc_id. Rank is the 1-based position.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
    /// Adjacent (doc_id, doc_id) pairs whose scores were exactly equal and
    /// were ordered by the doc_id rule.
    pub ties: Vec<(String, String)>,
}

impl RankedList {
    pub fn rank_of(&self, doc_id: &str) -> Option<u32> {
        self.entries
            .iter()
            .position(|e| e.doc_id == doc_id)
            .map(|p| p as u32 + 1)
    }

    pub fn score_of(&self, doc_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.doc_id == doc_id)
            .map(|e| e.score)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sorts `(id, score)` pairs by descending score, then ascending id.
pub fn order_by_score<T: AsRef<str>>(items: &mut [(T, f64)]) {
    items.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| a.0.as_ref().cmp(b.0.as_ref()))
    });
}

/// A query-document scoring function.
pub trait RankingFunction: Send + Sync {
    fn name(&self) -> &str;

    /// Scores every document against the query; output aligned with `docs`.
    fn score_all(&self, query: &str, docs: &[&str]) -> Result<Vec<f64>, RankError>;
}

/// Cosine between TF.IDF vectors under a fixed model.
#[derive(Debug, Clone)]
pub struct TfidfRanker {
    model: Arc<TfidfModel>,
}

impl TfidfRanker {
    pub fn new(model: TfidfModel) -> Self {
        Self {
            model: Arc::new(model),
        }
    }

    pub fn fit<'a, I: IntoIterator<Item = &'a str>>(corpus: I) -> Result<Self, RankError> {
        TfidfModel::fit(corpus).map(Self::new)
    }

    pub fn model(&self) -> &TfidfModel {
        &self.model
    }
}

impl RankingFunction for TfidfRanker {
    fn name(&self) -> &str {
        "tfidf"
    }

    fn score_all(&self, query: &str, docs: &[&str]) -> Result<Vec<f64>, RankError> {
        let q = self.model.vector(query);
        Ok(docs
            .iter()
            .map(|d| sparse_cosine(&q, &self.model.vector(d)))
            .collect())
    }
}

/// Cosine between dense embeddings from a provider.
#[derive(Clone)]
pub struct DenseRanker {
    provider: Arc<dyn EmbeddingProvider>,
}

impl DenseRanker {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self { provider }
    }
}

fn embed_checked(
    provider: &dyn EmbeddingProvider,
    texts: Vec<String>,
    labels: &[String],
) -> Result<Vec<DenseVector>, RankError> {
    let failed = |source| RankError::Provider {
        doc_ids: labels.to_vec(),
        source,
    };
    let vectors = provider.embed(&texts).map_err(failed)?;
    if vectors.len() != texts.len() {
        return Err(failed(ServiceError::Protocol(format!(
            "expected {} vectors, got {}",
            texts.len(),
            vectors.len()
        ))));
    }
    if let Some(bad) = vectors.iter().find(|v| v.dim() != provider.dim()) {
        return Err(RankError::DimensionMismatch {
            left: bad.dim(),
            right: provider.dim(),
        });
    }
    Ok(vectors)
}

impl RankingFunction for DenseRanker {
    fn name(&self) -> &str {
        "dense"
    }

    fn score_all(&self, query: &str, docs: &[&str]) -> Result<Vec<f64>, RankError> {
        let mut texts = Vec::with_capacity(docs.len() + 1);
        texts.push(query.to_string());
        texts.extend(docs.iter().map(|d| d.to_string()));
        let labels: Vec<String> = (0..docs.len()).map(|i| format!("#{i}")).collect();
        let vectors = embed_checked(self.provider.as_ref(), texts, &labels)?;
        let (q, rest) = vectors.split_first().expect("query vector present");
        rest.iter().map(|d| dense_cosine(q, d)).collect()
    }
}

/// Ranks `docs` for `query` by descending score, ties by ascending doc_id.
pub fn rank_documents(
    ranker: &dyn RankingFunction,
    query: &Query,
    docs: &[&DocVersion],
) -> Result<RankedList, RankError> {
    if docs.is_empty() {
        return Err(RankError::Domain(
            "cannot rank an empty document set".into(),
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(RankError::Domain(format!(
                "doc_id {} given twice",
                d.doc_id
            )));
        }
    }
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let scores = ranker.score_all(&query.text, &texts).map_err(|e| match e {
        RankError::Provider { source, .. } => RankError::Provider {
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            source,
        },
        other => other,
    })?;
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .zip(scores)
        .map(|(d, s)| (d.doc_id.clone(), s))
        .collect();
    order_by_score(&mut scored);
    let ties = scored
        .windows(2)
        .filter(|w| w[0].1 == w[1].1)
        .map(|w| (w[0].0.clone(), w[1].0.clone()))
        .collect();
    Ok(RankedList {
        query_id: query.query_id.clone(),
        entries: scored
            .into_iter()
            .map(|(doc_id, score)| RankedEntry { doc_id, score })
            .collect(),
        ties,
    })
}

/// Which representation similarity search runs in.
#[derive(Clone, Copy)]
pub enum Representation<'a> {
    /// TF.IDF fitted on the snapshot being searched.
    Sparse,
    Dense(&'a dyn EmbeddingProvider),
}

impl Representation<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Sparse => "sparse",
            Self::Dense(_) => "dense",
        }
    }
}

/// Result of a top-k search.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub hits: Vec<(DocVersion, f64)>,
    /// Fewer than `k` candidates were available.
    pub short: bool,
}

/// A snapshot prepared for repeated top-k searches: the TF.IDF model fitted
/// on it, every document's sparse vector and, once [`with_dense`] has been
/// called, every document's embedding.
///
/// [`with_dense`]: SnapshotIndex::with_dense
pub struct SnapshotIndex<'a> {
    snapshot: &'a CorpusSnapshot,
    model: Option<TfidfModel>,
    sparse: Vec<SparseVector>,
    dense: Option<Vec<DenseVector>>,
}

impl<'a> SnapshotIndex<'a> {
    pub fn new(snapshot: &'a CorpusSnapshot) -> Result<Self, RankError> {
        let (model, sparse) = if snapshot.is_empty() {
            (None, Vec::new())
        } else {
            let model = TfidfModel::fit(snapshot.docs().iter().map(|d| d.text.as_str()))?;
            let sparse = snapshot
                .docs()
                .iter()
                .map(|d| model.vector(&d.text))
                .collect();
            (Some(model), sparse)
        };
        Ok(Self {
            snapshot,
            model,
            sparse,
            dense: None,
        })
    }

    /// Embeds every snapshot document once, in a single batch.
    pub fn with_dense(mut self, provider: &dyn EmbeddingProvider) -> Result<Self, RankError> {
        if !self.snapshot.is_empty() {
            let docs = self.snapshot.docs();
            let texts = docs.iter().map(|d| d.text.clone()).collect();
            let labels: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
            self.dense = Some(embed_checked(provider, texts, &labels)?);
        }
        Ok(self)
    }

    pub fn snapshot(&self) -> &'a CorpusSnapshot {
        self.snapshot
    }

    /// The `k` snapshot documents most similar to `probe`, excluding the
    /// probe's own version (same doc_id and round). Ties are broken by
    /// ascending doc_id, then round.
    pub fn search(
        &self,
        probe: &DocVersion,
        k: usize,
        representation: Representation<'_>,
    ) -> Result<TopK, RankError> {
        if k == 0 {
            return Err(RankError::Domain("k must be at least 1".into()));
        }
        let docs = self.snapshot.docs();
        let candidates: Vec<usize> = (0..docs.len())
            .filter(|&i| docs[i].key() != probe.key())
            .collect();
        if candidates.is_empty() {
            return Ok(TopK {
                hits: Vec::new(),
                short: true,
            });
        }

        let scores: Vec<f64> = match representation {
            Representation::Sparse => {
                let model = self.model.as_ref().expect("non-empty snapshot has a model");
                let p = model.vector(&probe.text);
                candidates
                    .iter()
                    .map(|&i| sparse_cosine(&p, &self.sparse[i]))
                    .collect()
            }
            Representation::Dense(provider) => match &self.dense {
                Some(vectors) => {
                    let p = embed_checked(
                        provider,
                        vec![probe.text.clone()],
                        std::slice::from_ref(&probe.doc_id),
                    )?;
                    candidates
                        .iter()
                        .map(|&i| dense_cosine(&p[0], &vectors[i]))
                        .collect::<Result<_, _>>()?
                }
                None => {
                    let mut texts = Vec::with_capacity(candidates.len() + 1);
                    texts.push(probe.text.clone());
                    texts.extend(candidates.iter().map(|&i| docs[i].text.clone()));
                    let mut labels = vec![probe.doc_id.clone()];
                    labels.extend(candidates.iter().map(|&i| docs[i].doc_id.clone()));
                    let vectors = embed_checked(provider, texts, &labels)?;
                    let (p, rest) = vectors.split_first().expect("probe vector present");
                    rest.iter()
                        .map(|d| dense_cosine(p, d))
                        .collect::<Result<_, _>>()?
                }
            },
        };

        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            let (da, db) = (&docs[candidates[a]], &docs[candidates[b]]);
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| da.doc_id.cmp(&db.doc_id))
                .then_with(|| da.round.cmp(&db.round))
        });
        let short = candidates.len() < k;
        Ok(TopK {
            hits: order
                .into_iter()
                .take(k)
                .map(|i| (docs[candidates[i]].clone(), scores[i]))
                .collect(),
            short,
        })
    }
}

/// One-shot [`SnapshotIndex::search`].
pub fn top_k_similar(
    snapshot: &CorpusSnapshot,
    probe: &DocVersion,
    k: usize,
    representation: Representation<'_>,
) -> Result<TopK, RankError> {
    SnapshotIndex::new(snapshot)?.search(probe, k, representation)
}
