//! Cosine-similarity retrieval over objects and rooms, background filtering,
//! and the top-k retrieval metrics.
//!
//! Only embeddings are compared; the semantic labels stored on nodes are
//! never consulted, so label misclassifications do not leak into search.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

use crate::embedding::Embedding;
use crate::graph::{NodeId, SceneGraph};
use crate::providers::{Embedder, ProviderError};

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("empty query list")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("true label {0:?} is not in the vocabulary")]
    UnknownLabel(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, SearchError> {
    if a.dim() != b.dim() {
        return Err(SearchError::DimMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SearchError::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub node: NodeId,
    pub similarity: f64,
    pub query: String,
}

fn rank(matches: &mut [Match]) {
    matches.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.node.cmp(&b.node)));
}

/// Objects whose feature has cosine above `threshold` with each name,
/// best first (ties by id). `scope` restricts the candidates.
pub fn find_objects(
    graph: &SceneGraph,
    names: &[String],
    embedder: &dyn Embedder,
    threshold: f64,
    scope: Option<&BTreeSet<NodeId>>,
) -> Result<BTreeMap<String, Vec<Match>>, SearchError> {
    if names.is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let mut out = BTreeMap::new();
    for name in names {
        let q = embedder.embed_text(name)?;
        let mut hits = Vec::new();
        for (id, obj) in graph.objects() {
            if scope.is_some_and(|s| !s.contains(&id)) {
                continue;
            }
            let Some(f) = &obj.feature else { continue };
            let Ok(sim) = cosine(&q, f) else { continue };
            if sim > threshold {
                hits.push(Match {
                    node: id,
                    similarity: sim,
                    query: name.clone(),
                });
            }
        }
        rank(&mut hits);
        out.insert(name.clone(), hits);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomMatch {
    pub node: NodeId,
    /// Mean cosine over every (feature cluster, query) pair.
    pub mean_similarity: f64,
}

/// Mean of all cluster-query cosines for one room, if it has clusters.
pub fn room_score(clusters: &[Embedding], queries: &[Embedding]) -> Option<f64> {
    if clusters.is_empty() || queries.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for c in clusters {
        for q in queries {
            sum += cosine(c, q).unwrap_or(0.0);
        }
    }
    Some(sum / (clusters.len() * queries.len()) as f64)
}

pub fn find_rooms(
    graph: &SceneGraph,
    names: &[String],
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<Vec<RoomMatch>, SearchError> {
    if names.is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let queries = names
        .iter()
        .map(|n| embedder.embed_text(n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rooms: Vec<RoomMatch> = graph
        .rooms()
        .filter_map(|(id, room)| {
            room_score(&room.feature_clusters, &queries).map(|mean| RoomMatch {
                node: id,
                mean_similarity: mean,
            })
        })
        .filter(|m| m.mean_similarity > threshold)
        .collect();
    rooms.sort_by(|a, b| {
        b.mean_similarity
            .total_cmp(&a.mean_similarity)
            .then(a.node.cmp(&b.node))
    });
    Ok(rooms)
}

/// Objects whose best similarity to any background name exceeds `threshold`.
pub fn filter_background(
    graph: &SceneGraph,
    background_names: &[String],
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<Vec<NodeId>, SearchError> {
    if background_names.is_empty() {
        return Ok(Vec::new());
    }
    let queries = background_names
        .iter()
        .map(|n| embedder.embed_text(n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(graph
        .objects()
        .filter(|(_, obj)| {
            obj.feature.as_ref().is_some_and(|f| {
                queries
                    .iter()
                    .filter_map(|q| cosine(q, f).ok())
                    .any(|s| s > threshold)
            })
        })
        .map(|(id, _)| id)
        .collect())
}

/// 1-based rank of `truth` among `vocab` by cosine to `feature`: ties go to
/// the earlier vocabulary entry.
fn rank_of(feature: &Embedding, vocab: &[Embedding], truth: usize) -> Result<usize, SearchError> {
    let sims = vocab
        .iter()
        .map(|v| cosine(feature, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..vocab.len()).collect();
    order.sort_by(|a, b| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b)));
    Ok(order.iter().position(|i| *i == truth).expect("truth indexes vocab") + 1)
}

/// Acc_k over precomputed vocabulary embeddings, as fractions in `[0, 1]`.
pub fn topk_accuracy_embedded(
    features: &[Embedding],
    truth: &[usize],
    vocab: &[Embedding],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, SearchError> {
    if ks.contains(&0) {
        return Err(SearchError::InvalidK);
    }
    let ranks = features
        .iter()
        .zip(truth)
        .map(|(f, t)| rank_of(f, vocab, *t))
        .collect::<Result<Vec<_>, _>>()?;
    let n = ranks.len().max(1) as f64;
    Ok(ks
        .iter()
        .map(|k| (*k, ranks.iter().filter(|r| **r <= *k).count() as f64 / n))
        .collect())
}

pub fn topk_accuracy(
    features: &[Embedding],
    true_labels: &[String],
    vocabulary: &[String],
    embedder: &dyn Embedder,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, SearchError> {
    let truth = true_labels
        .iter()
        .map(|l| {
            vocabulary
                .iter()
                .position(|v| v == l)
                .ok_or_else(|| SearchError::UnknownLabel(l.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let vocab = vocabulary
        .iter()
        .map(|v| embedder.embed_text(v))
        .collect::<Result<Vec<_>, _>>()?;
    topk_accuracy_embedded(features, &truth, &vocab, ks)
}

/// Area under the accuracy-vs-k curve on `[1, k_max]` as a percentage.
///
/// The curve is linearly interpolated between the given k and held constant
/// beyond its first and last points; the integral is divided by the interval
/// length `k_max - 1`, so a constant curve `c` scores `100 c`.
pub fn auc_topk(curve: &BTreeMap<usize, f64>, k_max: usize) -> f64 {
    let points: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(k, _)| **k <= k_max)
        .map(|(k, a)| (*k as f64, *a))
        .collect();
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return 0.0;
    };
    let k_max = k_max.max(1) as f64;
    if k_max <= 1.0 {
        return first.1 * 100.0;
    }
    let at = |k: f64| -> f64 {
        if k <= first.0 {
            return first.1;
        }
        if k >= last.0 {
            return last.1;
        }
        let i = points.partition_point(|p| p.0 <= k);
        let (a, b) = (points[i - 1], points[i]);
        a.1 + (b.1 - a.1) * (k - a.0) / (b.0 - a.0)
    };
    let mut xs: Vec<f64> = vec![1.0];
    xs.extend(points.iter().map(|p| p.0).filter(|k| *k > 1.0 && *k < k_max));
    xs.push(k_max);
    let area: f64 = xs
        .windows(2)
        .map(|w| (w[1] - w[0]) * (at(w[0]) + at(w[1])) / 2.0)
        .sum();
    area / (k_max - 1.0) * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Acc_k as percentages.
    pub accuracy: BTreeMap<usize, f64>,
    pub auc: f64,
    pub k_max: usize,
    pub objects: usize,
}

impl RetrievalReport {
    pub fn new(acc: &BTreeMap<usize, f64>, k_max: usize, objects: usize) -> Self {
        Self {
            accuracy: acc.iter().map(|(k, a)| (*k, a * 100.0)).collect(),
            auc: auc_topk(acc, k_max),
            k_max,
            objects,
        }
    }
}

impl fmt::Display for RetrievalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in self.accuracy.keys() {
            write!(f, "{:>9}", format!("Acc_{k}"))?;
        }
        writeln!(f, "{:>9}{:>10}", "AUC", "#objects")?;
        for a in self.accuracy.values() {
            write!(f, "{a:>9.2}")?;
        }
        writeln!(f, "{:>9.2}{:>10}", self.auc, self.objects)
    }
}
