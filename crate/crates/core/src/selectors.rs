//! Per-query few-shot selection: random and KNN baselines, three-channel
//! hybrid retrieval with weighted score fusion, LLM reranking, and the
//! tree-pool hybrids that restrict any of those to a TreePrompt pool.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, SentencePair};
use crate::embedding::{
    cosine_similarity, EmbeddingError, EmbeddingProvider, EmbeddingVector, VectorIndex,
};
use crate::llm::{ChatRequest, LlmClient, LlmError, Phase};
use crate::prompting::{PromptError, PromptSet};
use crate::rng;
use crate::tree::ExamplePool;

/// Largest candidate list ever handed to the reranker.
pub const RERANK_WINDOW_CAP: usize = 20;

const RERANK_MAX_TOKENS: u32 = 64;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("sample of {requested} exceeds candidate count {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("channels disagree on candidates: {0}")]
    CandidateMismatch(String),
    #[error("pool has {available} selectable examples, need {requested}")]
    InsufficientPool { requested: usize, available: usize },
    #[error("weights must be >= 0 and sum to 1 (got sum {0})")]
    InvalidWeights(f64),
    #[error("method requires {0}")]
    MissingResource(&'static str),
    #[error("pool supplied for non-tree method")]
    UnexpectedPool,
    #[error("id {0:?} not found in the prompt source corpus")]
    UnknownId(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Base selection strategies; tree variants draw from a TreePrompt pool
/// instead of the whole corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseMethod {
    Random,
    Knn,
    Afsp,
    TreeRandom,
    TreeKnn,
    TreeAfsp,
}

impl BaseMethod {
    pub fn is_tree(self) -> bool {
        matches!(
            self,
            BaseMethod::TreeRandom | BaseMethod::TreeKnn | BaseMethod::TreeAfsp
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseMethod::Random => "random",
            BaseMethod::Knn => "knn",
            BaseMethod::Afsp => "afsp",
            BaseMethod::TreeRandom => "tree_random",
            BaseMethod::TreeKnn => "tree_knn",
            BaseMethod::TreeAfsp => "tree_afsp",
        }
    }
}

/// A base method plus the optional rerank pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MethodSpec {
    pub base: BaseMethod,
    pub rerank: bool,
}

impl std::fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.base.name())?;
        if self.rerank {
            write!(f, "+rerank")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, rerank) = match s.strip_suffix("+rerank") {
            Some(prefix) => (prefix, true),
            None => (s, false),
        };
        let base = match name {
            "random" => BaseMethod::Random,
            "knn" => BaseMethod::Knn,
            "afsp" => BaseMethod::Afsp,
            "tree_random" => BaseMethod::TreeRandom,
            "tree_knn" => BaseMethod::TreeKnn,
            "tree_afsp" => BaseMethod::TreeAfsp,
            other => return Err(format!("unknown selection method {other:?}")),
        };
        Ok(MethodSpec { base, rerank })
    }
}

/// `k` distinct ids drawn without replacement, seeded.
pub fn select_random(candidates: &[String], k: usize, seed: u64) -> Result<Vec<String>, SelectError> {
    if k > candidates.len() {
        return Err(SelectError::SampleTooLarge {
            requested: k,
            available: candidates.len(),
        });
    }
    let mut rng = rng::seeded(seed);
    Ok(rng::sample_indices(candidates.len(), k, &mut rng)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}

/// Top-`k` ids by cosine against `query_embedding`, over the whole index or
/// a candidate subset.
pub fn select_knn(
    index: &VectorIndex,
    query_embedding: &EmbeddingVector,
    k: usize,
    candidates: Option<&HashSet<String>>,
) -> Result<Vec<String>, SelectError> {
    let neighbors = match candidates {
        None => index.knn_query(query_embedding, k, &HashSet::new())?,
        Some(set) => {
            if set.is_empty() {
                return Err(SelectError::EmptyCandidateSet);
            }
            index.knn_among(query_embedding, k, set)?
        }
    };
    Ok(neighbors.into_iter().map(|n| n.id).collect())
}

/// Per-channel similarity scores for one candidate set, with fusion weights.
#[derive(Debug, Clone)]
pub struct ChannelScores {
    pub channels: [BTreeMap<String, f64>; 3],
    pub weights: [f64; 3],
}

impl ChannelScores {
    fn validate(&self) -> Result<(), SelectError> {
        if let Some(&w) = self.weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(SelectError::InvalidWeights(w));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SelectError::InvalidWeights(sum));
        }
        for channel in &self.channels[1..] {
            if channel.len() != self.channels[0].len()
                || !channel.keys().eq(self.channels[0].keys())
            {
                let only: Vec<&String> = channel
                    .keys()
                    .filter(|k| !self.channels[0].contains_key(*k))
                    .chain(self.channels[0].keys().filter(|k| !channel.contains_key(*k)))
                    .take(3)
                    .collect();
                return Err(SelectError::CandidateMismatch(format!(
                    "ids not shared by all channels: {only:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Weighted fusion of min-max-normalized channel scores:
/// `fused(id) = sum_c w_c * norm_c(score_c(id))`. A constant channel
/// normalizes to 0.5 everywhere. Ranked descending, ties by ascending id.
pub fn fuse_scores(scores: &ChannelScores) -> Result<Vec<(String, f64)>, SelectError> {
    scores.validate()?;
    if scores.channels[0].is_empty() {
        return Err(SelectError::EmptyCandidateSet);
    }
    let mut fused: BTreeMap<&String, f64> =
        scores.channels[0].keys().map(|id| (id, 0.0)).collect();
    for (channel, &weight) in scores.channels.iter().zip(&scores.weights) {
        let min = channel.values().cloned().fold(f64::INFINITY, f64::min);
        let max = channel.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        for (id, &score) in channel {
            let normalized = if span == 0.0 { 0.5 } else { (score - min) / span };
            *fused.get_mut(id).expect("validated id sets match") += weight * normalized;
        }
    }
    let mut ranked: Vec<(String, f64)> = fused
        .into_iter()
        .map(|(id, score)| (id.clone(), score))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("fused scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(ranked)
}

/// One hybrid-retrieval channel: an embedding space and its index over the
/// prompt source.
pub struct AfspChannel<'a> {
    pub provider: &'a dyn EmbeddingProvider,
    pub index: &'a VectorIndex,
}

/// Embed the query in each channel, score every candidate per channel, fuse
/// with `weights`, and return the top-`k` ids.
pub fn select_afsp(
    query: &SentencePair,
    channels: &[AfspChannel<'_>; 3],
    weights: [f64; 3],
    k: usize,
    candidates: Option<&HashSet<String>>,
) -> Result<Vec<String>, SelectError> {
    let universe: Vec<String> = match candidates {
        Some(set) => {
            if set.is_empty() {
                return Err(SelectError::EmptyCandidateSet);
            }
            set.iter().cloned().collect()
        }
        None => channels[0].index.ids().map(String::from).collect(),
    };
    let mut scored: [BTreeMap<String, f64>; 3] = Default::default();
    for (c, channel) in channels.iter().enumerate() {
        let embedded = channel
            .provider
            .embed(std::slice::from_ref(&query.source_text))?;
        let query_vec = &embedded[0];
        for id in &universe {
            let stored = channel.index.vector_of(id).ok_or_else(|| {
                SelectError::CandidateMismatch(format!("channel {c} has no vector for {id:?}"))
            })?;
            scored[c].insert(id.clone(), cosine_similarity(query_vec, &stored)?);
        }
    }
    let ranked = fuse_scores(&ChannelScores {
        channels: scored,
        weights,
    })?;
    Ok(ranked.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Parse a reranker reply into a candidate ordering. Numbers are read in
/// order of appearance; out-of-range and repeated values are dropped, and
/// any candidates the reply never mentions follow in input order.
pub fn parse_ranking(text: &str, n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut keep = |value: usize| {
        if (1..=n).contains(&value) && !seen[value - 1] {
            seen[value - 1] = true;
            order.push(value - 1);
        }
    };
    let mut current: Option<usize> = None;
    for c in text.chars() {
        if let Some(digit) = c.to_digit(10) {
            current = Some(
                current
                    .unwrap_or(0)
                    .saturating_mul(10)
                    .saturating_add(digit as usize),
            );
        } else if let Some(value) = current.take() {
            keep(value);
        }
    }
    if let Some(value) = current {
        keep(value);
    }
    for (i, mentioned) in seen.iter().enumerate() {
        if !mentioned {
            order.push(i);
        }
    }
    order
}

/// Resources for the rerank pass.
pub struct Reranker<'a> {
    pub client: &'a LlmClient,
    pub prompts: &'a PromptSet,
    pub model: &'a str,
}

/// Ask the LLM to reorder `candidates` for `query` and return the first `k`
/// ids. The output is always a k-prefix of a permutation of the input; an
/// unparsable reply degrades to input order.
pub fn rerank(
    reranker: &Reranker<'_>,
    query: &SentencePair,
    candidates: &[SentencePair],
    k: usize,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<Vec<String>, SelectError> {
    if candidates.len() < k {
        return Err(SelectError::SampleTooLarge {
            requested: k,
            available: candidates.len(),
        });
    }
    let prompt = reranker
        .prompts
        .render_rerank_prompt(query, candidates, src_lang, tgt_lang)?;
    let request = ChatRequest::deterministic(reranker.model, prompt, RERANK_MAX_TOKENS);
    let reply = reranker.client.cached_complete(Phase::Reranking, &request)?;
    let order = parse_ranking(&reply, candidates.len());
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| candidates[i].id.clone())
        .collect())
}

/// One selection request: pick `k` demonstrations for `query`.
pub struct SelectionRequest<'a> {
    pub query: &'a SentencePair,
    pub k: usize,
    pub method: MethodSpec,
    pub pool: Option<&'a ExamplePool>,
    pub seed: u64,
}

/// AFSP channels plus fusion weights.
pub struct AfspResources<'a> {
    pub channels: [AfspChannel<'a>; 3],
    pub weights: [f64; 3],
}

/// Everything a method might need; populate what the configured methods use.
pub struct SelectionResources<'a> {
    pub corpus: &'a Corpus,
    pub index: Option<&'a VectorIndex>,
    pub query_provider: Option<&'a dyn EmbeddingProvider>,
    pub afsp: Option<AfspResources<'a>>,
    pub reranker: Option<Reranker<'a>>,
    pub rerank_window_cap: usize,
}

impl<'a> SelectionResources<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        SelectionResources {
            corpus,
            index: None,
            query_provider: None,
            afsp: None,
            reranker: None,
            rerank_window_cap: RERANK_WINDOW_CAP,
        }
    }
}

fn embed_query(
    provider: &dyn EmbeddingProvider,
    query: &SentencePair,
) -> Result<EmbeddingVector, SelectError> {
    let mut embedded = provider.embed(std::slice::from_ref(&query.source_text))?;
    Ok(embedded.remove(0))
}

/// Dispatch a request over the corpus or a tree pool, applying the rerank
/// pass when flagged. Returns exactly `k` pairs.
pub fn select(
    request: &SelectionRequest<'_>,
    resources: &SelectionResources<'_>,
) -> Result<Vec<SentencePair>, SelectError> {
    if request.method.base.is_tree() != request.pool.is_some() {
        return if request.pool.is_some() {
            Err(SelectError::UnexpectedPool)
        } else {
            Err(SelectError::MissingResource("a TreePrompt pool"))
        };
    }
    if request.k == 0 {
        return Ok(Vec::new());
    }
    let candidate_ids: Vec<String> = match request.pool {
        Some(pool) => {
            let ids = pool.selectable_ids();
            if ids.len() < request.k {
                return Err(SelectError::InsufficientPool {
                    requested: request.k,
                    available: ids.len(),
                });
            }
            ids
        }
        None => {
            if resources.corpus.len() < request.k {
                return Err(SelectError::SampleTooLarge {
                    requested: request.k,
                    available: resources.corpus.len(),
                });
            }
            resources.corpus.ids().map(String::from).collect()
        }
    };
    let window = if request.method.rerank {
        (4 * request.k)
            .min(resources.rerank_window_cap)
            .max(request.k)
            .min(candidate_ids.len())
    } else {
        request.k
    };
    let candidate_set: Option<HashSet<String>> = request
        .pool
        .map(|_| candidate_ids.iter().cloned().collect());

    let base_ids: Vec<String> = match request.method.base {
        BaseMethod::Random | BaseMethod::TreeRandom => {
            select_random(&candidate_ids, window, request.seed)?
        }
        BaseMethod::Knn | BaseMethod::TreeKnn => {
            let index = resources
                .index
                .ok_or(SelectError::MissingResource("a vector index"))?;
            let provider = resources
                .query_provider
                .ok_or(SelectError::MissingResource("a query embedding provider"))?;
            let query_vec = embed_query(provider, request.query)?;
            select_knn(index, &query_vec, window, candidate_set.as_ref())?
        }
        BaseMethod::Afsp | BaseMethod::TreeAfsp => {
            let afsp = resources
                .afsp
                .as_ref()
                .ok_or(SelectError::MissingResource("AFSP channels"))?;
            select_afsp(
                request.query,
                &afsp.channels,
                afsp.weights,
                window,
                candidate_set.as_ref(),
            )?
        }
    };

    let final_ids = if request.method.rerank {
        let pairs = resolve(resources.corpus, &base_ids)?;
        let reranker = resources
            .reranker
            .as_ref()
            .ok_or(SelectError::MissingResource("an LLM reranker"))?;
        rerank(
            reranker,
            request.query,
            &pairs,
            request.k,
            &resources.corpus.source_lang,
            &resources.corpus.target_lang,
        )?
    } else {
        base_ids
    };
    resolve(resources.corpus, &final_ids)
}

fn resolve(corpus: &Corpus, ids: &[String]) -> Result<Vec<SentencePair>, SelectError> {
    ids.iter()
        .map(|id| {
            corpus
                .get(id)
                .cloned()
                .ok_or_else(|| SelectError::UnknownId(id.clone()))
        })
        .collect()
}
