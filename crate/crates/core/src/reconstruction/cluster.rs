use std::collections::{BTreeMap, HashSet};

use super::grid::{SemanticVoxelGrid, VoxelIndex};
use crate::graph::Aabb;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub label: u32,
    /// Member voxels in index order.
    pub members: Vec<VoxelIndex>,
    /// Mean of member voxel centers.
    pub centroid: [f64; 3],
    /// Tight box around member voxel centers.
    pub bbox: Aabb,
    /// Feature index -> number of member voxels carrying it.
    pub feature_indices: BTreeMap<usize, usize>,
    /// Relation id -> number of member voxels carrying it.
    pub relation_ids: BTreeMap<u64, usize>,
}

impl Cluster {
    /// Box covering the member voxels themselves (centers padded by half a voxel).
    pub fn extent(&self, voxel_size: f64) -> Aabb {
        self.bbox.inflated(voxel_size / 2.0)
    }

    /// The relation id stamped on the most member voxels (ties: smallest id).
    pub fn dominant_relation_id(&self) -> Option<(u64, usize)> {
        self.relation_ids
            .iter()
            .fold(None, |best: Option<(u64, usize)>, (id, n)| match best {
                Some((_, m)) if m >= *n => best,
                _ => Some((*id, *n)),
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

const NEIGHBORS_26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dx = -1;
    while dx <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dz = -1;
            while dz <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dz += 1;
            }
            dy += 1;
        }
        dx += 1;
    }
    out
};

/// Connected components of labeled voxels under 26-connectivity, where
/// neighbors must share a label. Components below `min_voxels` are dropped.
/// Clusters come out ordered by their smallest voxel index.
pub fn cluster_objects(grid: &SemanticVoxelGrid, min_voxels: usize) -> ClusterSet {
    let mut seen: HashSet<VoxelIndex> = HashSet::new();
    let mut clusters = Vec::new();
    for (start, voxel) in grid.iter() {
        let Some(label) = voxel.label else { continue };
        if !seen.insert(*start) {
            continue;
        }
        let mut members = vec![*start];
        let mut stack = vec![*start];
        while let Some(at) = stack.pop() {
            for d in NEIGHBORS_26 {
                let n = [at[0] + d[0], at[1] + d[1], at[2] + d[2]];
                if seen.contains(&n) {
                    continue;
                }
                if grid.get(&n).is_some_and(|v| v.label == Some(label)) {
                    seen.insert(n);
                    members.push(n);
                    stack.push(n);
                }
            }
        }
        if members.len() < min_voxels.max(1) {
            continue;
        }
        members.sort_unstable();
        clusters.push(summarize(grid, label, members));
    }
    ClusterSet { clusters }
}

fn summarize(grid: &SemanticVoxelGrid, label: u32, members: Vec<VoxelIndex>) -> Cluster {
    let mut sum = [0.0f64; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut feature_indices = BTreeMap::new();
    let mut relation_ids = BTreeMap::new();
    for idx in &members {
        let c = grid.center(idx);
        for a in 0..3 {
            sum[a] += c[a];
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
        let v = grid.get(idx).expect("member voxels exist");
        if let Some(k) = v.transient_feature_index {
            *feature_indices.entry(k).or_insert(0) += 1;
        }
        if let Some(r) = v.transient_relation_id {
            *relation_ids.entry(r).or_insert(0) += 1;
        }
    }
    let n = members.len() as f64;
    let mut centroid = sum.map(|s| s / n);
    // keep the centroid inside the box despite rounding
    for a in 0..3 {
        centroid[a] = centroid[a].clamp(lo[a], hi[a]);
    }
    Cluster {
        label,
        members,
        centroid,
        bbox: Aabb::new(lo, hi),
        feature_indices,
        relation_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::grid::Voxel;
    use proptest::prelude::*;

    fn grid(cells: &[([i64; 3], u32)]) -> SemanticVoxelGrid {
        let mut g = SemanticVoxelGrid::new(1.0);
        for (idx, label) in cells {
            g.insert(*idx, Voxel::occupied([0, 0, 0], Some(*label)));
        }
        g
    }

    #[test]
    fn separated_blobs_are_two_clusters() {
        let g = grid(&[([0, 0, 0], 1), ([1, 0, 0], 1), ([3, 0, 0], 1), ([4, 0, 0], 1)]);
        assert_eq!(cluster_objects(&g, 1).clusters.len(), 2);
    }

    #[test]
    fn labels_gate_connectivity() {
        let g = grid(&[([0, 0, 0], 1), ([1, 0, 0], 2)]);
        let cs = cluster_objects(&g, 1);
        assert_eq!(cs.clusters.len(), 2);
        assert_eq!(cs.clusters[0].label, 1);
        assert_eq!(cs.clusters[1].label, 2);
    }

    #[test]
    fn diagonal_neighbors_connect() {
        let g = grid(&[([0, 0, 0], 1), ([1, 1, 1], 1)]);
        assert_eq!(cluster_objects(&g, 1).clusters.len(), 1);
    }

    #[test]
    fn l_shape_is_one_cluster_with_tight_box() {
        let cells: Vec<([i64; 3], u32)> = (0..4)
            .map(|x| ([x, 0, 0], 3))
            .chain((1..3).map(|y| ([0, y, 0], 3)))
            .collect();
        let cs = cluster_objects(&grid(&cells), 1);
        assert_eq!(cs.clusters.len(), 1);
        let c = &cs.clusters[0];
        assert_eq!(c.members.len(), 6);
        assert_eq!(c.bbox, Aabb::new([0.5, 0.5, 0.5], [3.5, 2.5, 0.5]));
        assert_eq!(c.extent(1.0), Aabb::new([0.0, 0.0, 0.0], [4.0, 3.0, 1.0]));
    }

    #[test]
    fn small_components_are_dropped() {
        let g = grid(&[([0, 0, 0], 1), ([5, 5, 5], 1), ([6, 5, 5], 1)]);
        let cs = cluster_objects(&g, 2);
        assert_eq!(cs.clusters.len(), 1);
        assert_eq!(cs.clusters[0].members.len(), 2);
    }

    /// Independent oracle: label-aware union-find over all voxel pairs.
    fn oracle_components(cells: &BTreeMap<VoxelIndex, u32>) -> Vec<Vec<VoxelIndex>> {
        let keys: Vec<VoxelIndex> = cells.keys().copied().collect();
        let mut parent: Vec<usize> = (0..keys.len()).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                let adj = (0..3).all(|a| (keys[i][a] - keys[j][a]).abs() <= 1);
                if adj && cells[&keys[i]] == cells[&keys[j]] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<VoxelIndex>> = BTreeMap::new();
        for i in 0..keys.len() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(keys[i]);
        }
        let mut out: Vec<Vec<VoxelIndex>> = groups.into_values().collect();
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn clusters_match_union_find_and_are_pure(
            cells in proptest::collection::btree_map(
                (0i64..6, 0i64..6, 0i64..3).prop_map(|(x, y, z)| [x, y, z]),
                0u32..3,
                0..60,
            )
        ) {
            let g = grid(&cells.iter().map(|(k, v)| (*k, *v)).collect::<Vec<_>>());
            let cs = cluster_objects(&g, 1);
            let mut got: Vec<Vec<VoxelIndex>> = cs.clusters.iter().map(|c| c.members.clone()).collect();
            got.sort();
            prop_assert_eq!(got, oracle_components(&cells));
            let mut all = HashSet::new();
            for c in &cs.clusters {
                for m in &c.members {
                    prop_assert!(all.insert(*m));
                    prop_assert_eq!(cells[m], c.label);
                }
            }
        }
    }
}
