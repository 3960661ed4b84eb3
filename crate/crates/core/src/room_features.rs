//! Pose-tagged full-frame embeddings and their K-Means summary per room.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::RoomFeatureConfig;
use crate::embedding::Embedding;
use crate::graph::{NodeId, SceneGraph};
use crate::ingest::{FrameRecord, Pose};
use crate::providers::Embedder;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("k-means needs at least one cluster")]
    ZeroK,
    #[error("k-means needs at least one point")]
    NoPoints,
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimMismatch { index: usize, expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEmbedding {
    pub pose: Pose,
    pub embedding: Embedding,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseStore {
    entries: Vec<PoseEmbedding>,
}

impl PoseStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[PoseEmbedding] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: PoseEmbedding) {
        debug_assert!(self.entries.last().is_none_or(|e| e.timestamp <= entry.timestamp));
        self.entries.push(entry);
    }
}

/// Embed the full RGB frame and append it with its pose. Returns whether an
/// entry was added; provider failures are logged and skipped.
pub fn record_pose_embedding(store: &mut PoseStore, frame: &FrameRecord, embedder: &dyn Embedder) -> bool {
    match embedder.embed_image(&frame.rgb) {
        Ok(embedding) => {
            store.push(PoseEmbedding {
                pose: frame.pose,
                embedding,
                timestamp: frame.timestamp,
            });
            true
        }
        Err(e) => {
            log::warn!("frame {}: full-frame embedding failed: {e}", frame.index);
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Embedding>,
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn wcss(&self) -> f64 {
        self.wcss_trace.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let d = sq_dist(p, q);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut r = rng.random::<f64>() * total;
            let mut idx = d.len() - 1;
            for (i, w) in d.iter().enumerate() {
                if r < *w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        };
        centroids.push(points[pick].to_vec());
    }
    centroids
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> KMeansResult {
    let dim = points[0].len();
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (next, wcss): (Vec<usize>, f64) = points.iter().fold((Vec::new(), 0.0), |(mut a, s), p| {
            let (c, d) = nearest(p, &centroids);
            a.push(c);
            (a, s + d)
        });
        trace.push(wcss);
        let stable = next == assignments;
        assignments = next;
        if stable || iterations >= max_iter {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, c) in points.iter().zip(&assignments) {
            counts[*c] += 1;
            for (s, x) in sums[*c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, sum) in sums.into_iter().enumerate() {
            // an emptied cluster keeps its previous centroid
            if counts[c] > 0 {
                let mean: Vec<f64> = sum.into_iter().map(|s| s / counts[c] as f64).collect();
                shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
                centroids[c] = mean;
            }
        }
        if shift < tol {
            // centroids have settled; one more pass refreshes the assignment
            let (next, wcss): (Vec<usize>, f64) = points.iter().fold((Vec::new(), 0.0), |(mut a, s), p| {
                let (c, d) = nearest(p, &centroids);
                a.push(c);
                (a, s + d)
            });
            trace.push(wcss);
            assignments = next;
            break;
        }
    }
    KMeansResult {
        centroids: centroids.into_iter().map(Embedding::new).collect(),
        assignments,
        wcss_trace: trace,
        iterations,
    }
}

const RESTARTS: u64 = 8;

/// Lloyd's algorithm with k-means++ seeding, keeping the best of a few
/// seeded restarts. With at most `k` points every point is its own
/// cluster; with at most `k` distinct points the distinct points are.
pub fn kmeans(points: &[Embedding], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<KMeansResult, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    let first = points.first().ok_or(KMeansError::NoPoints)?;
    for (index, p) in points.iter().enumerate() {
        if p.dim() != first.dim() {
            return Err(KMeansError::DimMismatch { index, expected: first.dim(), got: p.dim() });
        }
    }
    let raw: Vec<&[f64]> = points.iter().map(|p| p.values()).collect();
    if points.len() <= k {
        return Ok(KMeansResult {
            centroids: points.to_vec(),
            assignments: (0..points.len()).collect(),
            wcss_trace: vec![0.0],
            iterations: 0,
        });
    }
    let mut distinct: Vec<&[f64]> = Vec::new();
    for p in &raw {
        if !distinct.contains(p) {
            distinct.push(p);
        }
    }
    if distinct.len() <= k {
        let centroids: Vec<Vec<f64>> = distinct.iter().map(|p| p.to_vec()).collect();
        return Ok(lloyd(&raw, centroids, 0, tol));
    }

    let mut best: Option<KMeansResult> = None;
    for r in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let run = lloyd(&raw, seed_plus_plus(&raw, k, &mut rng), max_iter, tol);
        if best.as_ref().is_none_or(|b| run.wcss() < b.wcss()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Route every stored embedding to the room whose footprint contains its
/// pose and replace each room's feature clusters with K-Means centroids of
/// its embeddings. Entries outside every room are dropped.
pub fn assign_room_features(
    graph: &mut SceneGraph,
    store: &PoseStore,
    cfg: &RoomFeatureConfig,
    seed: u64,
) -> Result<BTreeMap<NodeId, usize>, KMeansError> {
    let rooms: Vec<NodeId> = graph.rooms().map(|(id, _)| id).collect();
    let mut per_room: BTreeMap<NodeId, Vec<Embedding>> = rooms.iter().map(|r| (*r, Vec::new())).collect();
    for entry in store.entries() {
        let p = entry.pose.position;
        let home = graph.rooms().find(|(_, r)| r.extent.contains_point(&p)).map(|(id, _)| id);
        if let Some(room) = home {
            per_room.get_mut(&room).expect("listed above").push(entry.embedding.clone());
        }
    }
    let mut counts = BTreeMap::new();
    for (room, samples) in per_room {
        counts.insert(room, samples.len());
        let clusters = if samples.is_empty() {
            Vec::new()
        } else {
            kmeans(&samples, cfg.room_feature_clusters, seed, cfg.kmeans_max_iter, cfg.kmeans_tol)?.centroids
        };
        graph.room_mut(room).expect("listed above").feature_clusters = clusters;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    #[test]
    fn k1_is_the_mean() {
        let pts = vec![e(&[0.0, 0.0]), e(&[2.0, 0.0]), e(&[1.0, 3.0])];
        let r = kmeans(&pts, 1, 0, 100, 1e-6).unwrap();
        assert_eq!(r.centroids.len(), 1);
        assert!(sq_dist(r.centroids[0].values(), &[1.0, 1.0]) < 1e-18);
    }

    #[test]
    fn duplicates_collapse_to_distinct_points() {
        let (u, v) = (e(&[1.0, 0.0]), e(&[0.0, 1.0]));
        let r = kmeans(&[u.clone(), u.clone(), v.clone(), v.clone()], 2, 3, 100, 1e-6).unwrap();
        let mut c: Vec<Vec<f64>> = r.centroids.iter().map(|c| c.values().to_vec()).collect();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![v.values().to_vec(), u.values().to_vec()]);
    }

    #[test]
    fn fewer_samples_than_k_are_returned_as_is() {
        let pts = vec![e(&[1.0, 2.0]), e(&[3.0, 4.0])];
        assert_eq!(kmeans(&pts, 4, 0, 100, 1e-6).unwrap().centroids, pts);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(kmeans(&[e(&[1.0])], 0, 0, 10, 1e-6), Err(KMeansError::ZeroK));
        assert_eq!(kmeans(&[], 2, 0, 10, 1e-6), Err(KMeansError::NoPoints));
        assert!(matches!(
            kmeans(&[e(&[1.0]), e(&[1.0, 2.0])], 1, 0, 10, 1e-6),
            Err(KMeansError::DimMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let pts: Vec<Embedding> = (0..30).map(|i| e(&[(i * 7 % 11) as f64, (i * 5 % 13) as f64])).collect();
        assert_eq!(kmeans(&pts, 3, 42, 100, 1e-6).unwrap(), kmeans(&pts, 3, 42, 100, 1e-6).unwrap());
    }

    fn points() -> impl Strategy<Value = Vec<Embedding>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..40)
            .prop_map(|v| v.into_iter().map(Embedding::new).collect())
    }

    proptest! {
        #[test]
        fn wcss_never_increases(pts in points(), k in 1usize..6, seed in any::<u64>()) {
            let r = kmeans(&pts, k, seed, 100, 1e-6).unwrap();
            for w in r.wcss_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
        }

        #[test]
        fn converged_centroids_are_means(pts in points(), k in 1usize..6, seed in any::<u64>()) {
            let r = kmeans(&pts, k, seed, 100, 1e-6).unwrap();
            let cents: Vec<Vec<f64>> = r.centroids.iter().map(|c| c.values().to_vec()).collect();
            let mut sums = vec![vec![0.0; 3]; cents.len()];
            let mut counts = vec![0usize; cents.len()];
            for p in &pts {
                let (c, _) = nearest(p.values(), &cents);
                counts[c] += 1;
                for a in 0..3 { sums[c][a] += p.values()[a]; }
            }
            for c in 0..cents.len() {
                if counts[c] > 0 {
                    for a in 0..3 {
                        prop_assert!((sums[c][a] / counts[c] as f64 - cents[c][a]).abs() <= 1e-6);
                    }
                }
            }
        }
    }
}
