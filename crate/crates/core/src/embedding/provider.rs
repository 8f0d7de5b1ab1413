//! Embedding providers: file-backed lookup over precomputed vectors and an
//! HTTP endpoint speaking `POST {"texts": [...]} -> {"vectors": [[...]]}`.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingVector, VectorStore};
use crate::corpus::Corpus;

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input text, in input order, all with equal dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

/// Lookup provider over precomputed vectors keyed by exact text.
#[derive(Debug, Clone, Default)]
pub struct FileProvider {
    by_text: HashMap<String, EmbeddingVector>,
}

impl FileProvider {
    pub fn new(entries: impl IntoIterator<Item = (String, EmbeddingVector)>) -> Self {
        FileProvider {
            by_text: entries.into_iter().collect(),
        }
    }

    /// Join an id-keyed store with a corpus so source texts resolve to their
    /// precomputed vectors.
    pub fn for_corpus(corpus: &Corpus, store: &VectorStore) -> Result<Self, EmbeddingError> {
        let mut by_text = HashMap::with_capacity(corpus.len());
        for pair in corpus.pairs() {
            let vector = store
                .get(&pair.id)
                .ok_or_else(|| EmbeddingError::MissingEmbedding(pair.id.clone()))?;
            by_text.insert(pair.source_text.clone(), vector.clone());
        }
        Ok(FileProvider { by_text })
    }
}

impl EmbeddingProvider for FileProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts
            .iter()
            .map(|text| {
                self.by_text
                    .get(text)
                    .cloned()
                    .ok_or_else(|| EmbeddingError::MissingEmbedding(text.clone()))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// HTTP embedding endpoint client with retries and bounded request
/// parallelism.
pub struct HttpProvider {
    endpoint: String,
    client: reqwest::blocking::Client,
    retries: u32,
    parallelism: usize,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpProvider {
            endpoint: endpoint.into(),
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("client builds"),
            retries: 2,
            parallelism: 4,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("client builds");
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    fn post_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut last_err = None;
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            match self.try_post(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(e @ (EmbeddingError::ProviderError { .. } | EmbeddingError::Transport(_))) => {
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn try_post(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(EmbeddingError::ProviderError {
                status: status.as_u16(),
                body: response.text().unwrap_or_default(),
            });
        }
        let body: EmbedResponse = response
            .json()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: texts.len(),
                got: body.vectors.len(),
            });
        }
        body.vectors.into_iter().map(EmbeddingVector::new).collect()
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if self.parallelism == 1 || texts.len() <= self.parallelism {
            return self.post_batch(texts);
        }
        let chunk_size = texts.len().div_ceil(self.parallelism);
        let chunks: Vec<&[String]> = texts.chunks(chunk_size).collect();
        let mut results: Vec<Option<Result<Vec<EmbeddingVector>, EmbeddingError>>> =
            (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in &chunks {
                handles.push(scope.spawn(move || self.post_batch(chunk)));
            }
            for (slot, handle) in results.iter_mut().zip(handles) {
                *slot = Some(handle.join().expect("embedding worker panicked"));
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for slot in results {
            out.extend(slot.expect("worker filled slot")?);
        }
        let dim = out.first().map(EmbeddingVector::dim).unwrap_or(0);
        if let Some(bad) = out.iter().find(|v| v.dim() != dim) {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(out)
    }
}
