//! Cosine KNN over L2-normalized vectors.
//!
//! Exact mode is a full scan, which is the right default for corpora in the
//! thousands. Approximate mode is an inverted-file (IVF) layer: spherical
//! k-means coarse centroids, with queries probing the best-ranked lists
//! first and widening until enough non-excluded candidates are found, so the
//! result-count contract matches exact mode even under heavy exclusion.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{dot, EmbeddingError, EmbeddingVector};
use crate::corpus::SentencePair;
use crate::rng;

/// IVF tuning. `nlist` defaults to `ceil(sqrt(n))`; `nprobe` lists are
/// scanned per query before widening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxParams {
    pub nlist: Option<usize>,
    pub nprobe: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for ApproxParams {
    fn default() -> Self {
        ApproxParams {
            nlist: None,
            nprobe: 32,
            kmeans_iters: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    #[default]
    Exact,
    Approximate(ApproxParams),
}

/// One KNN result. Result lists are sorted by similarity descending with
/// ties broken by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
struct IvfLayer {
    centroids: Vec<Vec<f64>>,
    lists: Vec<Vec<usize>>,
    nprobe: usize,
}

/// Immutable embedding index over a corpus. Vectors are L2-normalized at
/// build time; queries are safe to run concurrently.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    positions: std::collections::HashMap<String, usize>,
    dim: usize,
    mode: IndexMode,
    ivf: Option<IvfLayer>,
}

/// Build an index over `pairs` and their `vectors` (same order, same length).
pub fn build_index(
    pairs: &[SentencePair],
    vectors: &[EmbeddingVector],
    mode: IndexMode,
) -> Result<VectorIndex, EmbeddingError> {
    VectorIndex::build(
        pairs.iter().map(|p| p.id.clone()).zip(vectors.iter().cloned()),
        mode,
    )
}

impl VectorIndex {
    pub fn build(
        entries: impl IntoIterator<Item = (String, EmbeddingVector)>,
        mode: IndexMode,
    ) -> Result<Self, EmbeddingError> {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let mut positions = std::collections::HashMap::new();
        let mut dim = 0usize;
        for (id, vector) in entries {
            if ids.is_empty() {
                dim = vector.dim();
            } else if vector.dim() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dim,
                    got: vector.dim(),
                });
            }
            let norm = vector.l2_norm();
            if norm == 0.0 {
                return Err(EmbeddingError::ZeroVector(id));
            }
            if positions.insert(id.clone(), ids.len()).is_some() {
                return Err(EmbeddingError::DuplicateId(id));
            }
            ids.push(id);
            vectors.push(vector.values().iter().map(|v| v / norm).collect());
        }
        let mut index = VectorIndex {
            ids,
            vectors,
            positions,
            dim,
            mode,
            ivf: None,
        };
        if let IndexMode::Approximate(params) = mode {
            if !index.is_empty() {
                index.ivf = Some(index.build_ivf(params));
            }
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(|s| s.as_str())
    }

    /// The stored (normalized) vector for `id`.
    pub fn vector_of(&self, id: &str) -> Option<EmbeddingVector> {
        self.positions.get(id).map(|&i| EmbeddingVector {
            values: self.vectors[i].clone(),
        })
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<Vec<f64>, EmbeddingError> {
        if self.is_empty() {
            return Err(EmbeddingError::EmptyIndex);
        }
        if query.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let norm = query.l2_norm();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroVector("<query>".into()));
        }
        Ok(query.values().iter().map(|v| v / norm).collect())
    }

    /// Top-`k` most similar entries, never returning anything in `exclude`.
    /// Returns `min(k, len - excluded)` neighbors.
    pub fn knn_query(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<Neighbor>, EmbeddingError> {
        let q = self.check_query(query)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let candidates: Vec<usize> = match &self.ivf {
            Some(ivf) => self.probe(ivf, &q, k, |i| !exclude.contains(&self.ids[i])),
            None => (0..self.len())
                .filter(|&i| !exclude.contains(&self.ids[i]))
                .collect(),
        };
        Ok(self.rank(&q, candidates, k))
    }

    /// Top-`k` among an explicit candidate id set (ids absent from the index
    /// are ignored). Used by pool-restricted selection.
    pub fn knn_among(
        &self,
        query: &EmbeddingVector,
        k: usize,
        candidates: &HashSet<String>,
    ) -> Result<Vec<Neighbor>, EmbeddingError> {
        let q = self.check_query(query)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        // Candidate sets are small relative to the index; scan them exactly
        // regardless of mode.
        let indices: Vec<usize> = (0..self.len())
            .filter(|&i| candidates.contains(&self.ids[i]))
            .collect();
        Ok(self.rank(&q, indices, k))
    }

    fn rank(&self, q: &[f64], candidates: Vec<usize>, k: usize) -> Vec<Neighbor> {
        let mut scored: Vec<(f64, usize)> = candidates
            .into_iter()
            .map(|i| (dot(q, &self.vectors[i]), i))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("similarities are finite")
                .then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(sim, i)| Neighbor {
                id: self.ids[i].clone(),
                similarity: sim.clamp(-1.0, 1.0),
            })
            .collect()
    }

    fn build_ivf(&self, params: ApproxParams) -> IvfLayer {
        let n = self.len();
        let nlist = params
            .nlist
            .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
            .clamp(1, n);
        let mut rng = rng::seeded(params.seed);
        let mut centroids: Vec<Vec<f64>> = rng::sample_indices(n, nlist, &mut rng)
            .into_iter()
            .map(|i| self.vectors[i].clone())
            .collect();
        let mut assignment = vec![0usize; n];
        for _ in 0..params.kmeans_iters.max(1) {
            for (i, v) in self.vectors.iter().enumerate() {
                assignment[i] = nearest_centroid(&centroids, v);
            }
            let mut sums = vec![vec![0.0; self.dim]; nlist];
            let mut counts = vec![0usize; nlist];
            for (i, v) in self.vectors.iter().enumerate() {
                let c = assignment[i];
                counts[c] += 1;
                for (s, x) in sums[c].iter_mut().zip(v) {
                    *s += x;
                }
            }
            for (c, sum) in sums.into_iter().enumerate() {
                if counts[c] == 0 {
                    continue; // keep the old centroid for empty lists
                }
                let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    centroids[c] = sum.into_iter().map(|v| v / norm).collect();
                }
            }
        }
        let mut lists = vec![Vec::new(); nlist];
        for (i, v) in self.vectors.iter().enumerate() {
            lists[nearest_centroid(&centroids, v)].push(i);
        }
        IvfLayer {
            centroids,
            lists,
            nprobe: params.nprobe.max(1),
        }
    }

    fn probe(
        &self,
        ivf: &IvfLayer,
        q: &[f64],
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = ivf
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (dot(q, centroid), c))
            .collect();
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        let mut candidates = Vec::new();
        for (rank, &(_, list)) in order.iter().enumerate() {
            // Widen past nprobe only while short of k survivors, so the
            // count contract holds under exclusion.
            if rank >= ivf.nprobe && candidates.len() >= k {
                break;
            }
            candidates.extend(ivf.lists[list].iter().copied().filter(|&i| keep(i)));
        }
        candidates
    }
}

fn nearest_centroid(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let sim = dot(centroid, v);
        if sim > best_sim {
            best = c;
            best_sim = sim;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::RngCore;

    fn pair(id: &str) -> SentencePair {
        SentencePair {
            id: id.into(),
            source_text: format!("src {id}"),
            target_text: format!("tgt {id}"),
        }
    }

    fn random_vector(rng: &mut rand_chacha::ChaCha8Rng, dim: usize) -> EmbeddingVector {
        let values: Vec<f64> = (0..dim)
            .map(|_| (rng.next_u64() as f64 / u64::MAX as f64) * 2.0 - 1.0)
            .collect();
        EmbeddingVector::new(values).unwrap()
    }

    fn build_random(n: usize, dim: usize, seed: u64, mode: IndexMode) -> (Vec<SentencePair>, Vec<EmbeddingVector>, VectorIndex) {
        let mut rng = rng::seeded(seed);
        let pairs: Vec<SentencePair> = (0..n).map(|i| pair(&format!("{i:04}"))).collect();
        let vectors: Vec<EmbeddingVector> = (0..n).map(|_| random_vector(&mut rng, dim)).collect();
        let index = build_index(&pairs, &vectors, mode).unwrap();
        (pairs, vectors, index)
    }

    /// Independent O(n*d) scan used as the ranking oracle.
    fn brute_force(
        vectors: &[(String, EmbeddingVector)],
        query: &EmbeddingVector,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Vec<String> {
        let mut scored: Vec<(f64, &str)> = vectors
            .iter()
            .filter(|(id, _)| !exclude.contains(id))
            .map(|(id, v)| {
                (
                    crate::embedding::cosine_similarity(query, v).unwrap(),
                    id.as_str(),
                )
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
    }

    #[test]
    fn self_similarity_is_one() {
        let (_, vectors, index) = build_random(10, 8, 3, IndexMode::Exact);
        let hits = index.knn_query(&vectors[4], 1, &HashSet::new()).unwrap();
        assert_eq!(hits[0].id, "0004");
        assert!((hits[0].similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn saturation_returns_all_non_excluded() {
        let (_, vectors, index) = build_random(5, 4, 9, IndexMode::Exact);
        let exclude: HashSet<String> = ["0001".to_string()].into();
        let hits = index.knn_query(&vectors[0], 50, &exclude).unwrap();
        assert_eq!(hits.len(), 4);
        assert!(hits.iter().all(|n| n.id != "0001"));
    }

    #[test]
    fn matches_brute_force_oracle() {
        let (pairs, vectors, index) = build_random(50, 12, 7, IndexMode::Exact);
        let named: Vec<(String, EmbeddingVector)> = pairs
            .iter()
            .map(|p| p.id.clone())
            .zip(vectors.iter().cloned())
            .collect();
        let mut rng = rng::seeded(99);
        let query = random_vector(&mut rng, 12);
        let hits = index.knn_query(&query, 5, &HashSet::new()).unwrap();
        let expected = brute_force(&named, &query, 5, &HashSet::new());
        assert_eq!(hits.iter().map(|n| n.id.clone()).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn normalization_is_idempotent() {
        let (_, vectors, index) = build_random(6, 5, 21, IndexMode::Exact);
        let prenormalized: Vec<EmbeddingVector> =
            vectors.iter().map(|v| v.normalized()).collect();
        let pairs: Vec<SentencePair> = (0..6).map(|i| pair(&format!("{i:04}"))).collect();
        let rebuilt = build_index(&pairs, &prenormalized, IndexMode::Exact).unwrap();
        for (id, original) in pairs.iter().map(|p| p.id.as_str()).zip(&prenormalized) {
            let stored = rebuilt.vector_of(id).unwrap();
            for (a, b) in stored.values().iter().zip(original.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for id in index.ids() {
            let norm = index.vector_of(id).unwrap().l2_norm();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let pairs = vec![pair("a"), pair("b")];
        let vectors = vec![
            EmbeddingVector::new(vec![1.0, 0.0]).unwrap(),
            EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap(),
        ];
        assert!(matches!(
            build_index(&pairs, &vectors, IndexMode::Exact),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empty_index_is_an_error() {
        let index = VectorIndex::build(std::iter::empty(), IndexMode::Exact).unwrap();
        let q = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            index.knn_query(&q, 1, &HashSet::new()),
            Err(EmbeddingError::EmptyIndex)
        ));
    }

    #[test]
    fn approximate_mode_recall_at_10() {
        let n = 10_000;
        let dim = 16;
        let (pairs, vectors, exact) = build_random(n, dim, 11, IndexMode::Exact);
        let approx = build_index(
            &pairs,
            &vectors,
            IndexMode::Approximate(ApproxParams::default()),
        )
        .unwrap();
        let mut rng = rng::seeded(5);
        let mut found = 0usize;
        let mut total = 0usize;
        for _ in 0..30 {
            let query = random_vector(&mut rng, dim);
            let truth: HashSet<String> = exact
                .knn_query(&query, 10, &HashSet::new())
                .unwrap()
                .into_iter()
                .map(|n| n.id)
                .collect();
            let got = approx.knn_query(&query, 10, &HashSet::new()).unwrap();
            assert_eq!(got.len(), 10);
            found += got.iter().filter(|n| truth.contains(&n.id)).count();
            total += 10;
        }
        let recall = found as f64 / total as f64;
        assert!(recall >= 0.95, "recall@10 was {recall:.3}");
    }

    #[test]
    fn approximate_mode_honors_exclusion_count() {
        let (_, vectors, _) = build_random(200, 8, 2, IndexMode::Exact);
        let pairs: Vec<SentencePair> = (0..200).map(|i| pair(&format!("{i:04}"))).collect();
        let approx = build_index(
            &pairs,
            &vectors,
            IndexMode::Approximate(ApproxParams {
                nprobe: 1,
                ..ApproxParams::default()
            }),
        )
        .unwrap();
        // Exclude half the index; the probe must widen until it can still
        // return the full k.
        let exclude: HashSet<String> = (0..100).map(|i| format!("{i:04}")).collect();
        let hits = approx.knn_query(&vectors[150], 60, &exclude).unwrap();
        assert_eq!(hits.len(), 60);
        assert!(hits.iter().all(|n| !exclude.contains(&n.id)));
    }
}
