//! Sentence embeddings: vector type, cosine similarity, on-disk stores,
//! pluggable providers, and the KNN index.
//!
//! Vectors are 64-bit floats. The index L2-normalizes at build time so a
//! query reduces to a dot product; ranking ties break by ascending id to keep
//! every downstream selection deterministic.

mod index;
mod provider;

pub use index::{build_index, ApproxParams, IndexMode, Neighbor, VectorIndex};
pub use provider::{EmbeddingProvider, FileProvider, HttpProvider};

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector for {0:?}")]
    ZeroVector(String),
    #[error("empty vector")]
    EmptyVector,
    #[error("no embedding stored for key {0:?}")]
    MissingEmbedding(String),
    #[error("embedding provider returned HTTP {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("embedding provider request failed: {0}")]
    Transport(String),
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error(transparent)]
    File(#[from] JsonlError),
}

/// A fixed-length, non-zero embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.values
    }
}

impl EmbeddingVector {
    /// Rejects empty and all-zero inputs at ingestion.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyVector);
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(EmbeddingError::ZeroVector("<input>".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scale to unit L2 norm.
    pub fn normalized(&self) -> EmbeddingVector {
        let norm = self.l2_norm();
        EmbeddingVector {
            values: self.values.iter().map(|v| v / norm).collect(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity `dot(a,b) / (|a||b|)`. The result lies in `[-1, 1]` up
/// to floating-point slack on the order of 1e-12.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.l2_norm(), b.l2_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector("<operand>".into()));
    }
    Ok(dot(a.values(), b.values()) / (na * nb))
}

#[derive(Serialize, Deserialize)]
struct VectorRecord {
    id: String,
    vec: Vec<f64>,
}

/// Id-keyed embedding collection, the in-memory form of the vectors JSONL
/// format `{"id": string, "vec": [floats]}`.
#[derive(Debug, Clone)]
pub struct VectorStore {
    entries: Vec<(String, EmbeddingVector)>,
    by_id: HashMap<String, usize>,
    dim: usize,
}

impl VectorStore {
    pub fn new(entries: Vec<(String, EmbeddingVector)>) -> Result<Self, EmbeddingError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        let mut dim = 0;
        for (idx, (id, vector)) in entries.iter().enumerate() {
            if idx == 0 {
                dim = vector.dim();
            } else if vector.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    got: vector.dim(),
                });
            }
            if by_id.insert(id.clone(), idx).is_some() {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        Ok(VectorStore {
            entries,
            by_id,
            dim,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let records: Vec<VectorRecord> = jsonl::read(path)?;
        let entries = records
            .into_iter()
            .map(|r| {
                let vector =
                    EmbeddingVector::new(r.vec).map_err(|e| match e {
                        EmbeddingError::ZeroVector(_) => EmbeddingError::ZeroVector(r.id.clone()),
                        other => other,
                    })?;
                Ok((r.id, vector))
            })
            .collect::<Result<Vec<_>, EmbeddingError>>()?;
        VectorStore::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        jsonl::write(
            path,
            self.entries.iter().map(|(id, v)| VectorRecord {
                id: id.clone(),
                vec: v.values().to_vec(),
            }),
        )?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.by_id.get(id).map(|&idx| &self.entries[idx].1)
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_of(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identity() {
        let v = vec_of(&[0.3, -1.2, 2.0]);
        let sim = cosine_similarity(&v, &v).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal() {
        let a = vec_of(&[1.0, 0.0]);
        let b = vec_of(&[0.0, 1.0]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn cosine_hand_value() {
        // dot = 4, norms sqrt(5) each -> 4/5
        let a = vec_of(&[1.0, 2.0]);
        let b = vec_of(&[2.0, 1.0]);
        let sim = cosine_similarity(&a, &b).unwrap();
        assert!((sim - 0.8).abs() < 1e-12);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let a = vec_of(&[1.0, 2.0]);
        let b = vec_of(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            cosine_similarity(&a, &b),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(
            EmbeddingVector::new(vec![0.0, 0.0]),
            Err(EmbeddingError::ZeroVector(_))
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![]),
            Err(EmbeddingError::EmptyVector)
        ));
    }

    #[test]
    fn store_round_trip() {
        let store = VectorStore::new(vec![
            ("a".into(), vec_of(&[1.0, 2.0])),
            ("b".into(), vec_of(&[3.0, -4.0])),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.jsonl");
        store.save(&path).unwrap();
        let reloaded = VectorStore::load(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded.get("b").unwrap(), store.get("b").unwrap());
        assert_eq!(reloaded.dim(), 2);
    }

    #[test]
    fn store_rejects_duplicates_and_mixed_dims() {
        assert!(matches!(
            VectorStore::new(vec![
                ("a".into(), vec_of(&[1.0])),
                ("a".into(), vec_of(&[2.0])),
            ]),
            Err(EmbeddingError::DuplicateId(_))
        ));
        assert!(matches!(
            VectorStore::new(vec![
                ("a".into(), vec_of(&[1.0])),
                ("b".into(), vec_of(&[2.0, 3.0])),
            ]),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }
}
