use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::free_space::FreeSpace;
use crate::graph::{GraphError, Layer, NodeId, PlaceNode, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaceParams {
    pub min_sep: f64,
    pub min_clearance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaceLayout {
    pub cells: Vec<[i64; 2]>,
    /// Index pairs `(a, b)` with `a < b`.
    pub edges: BTreeSet<(usize, usize)>,
}

impl PlaceLayout {
    pub fn centers(&self, fs: &FreeSpace) -> Vec<[f64; 2]> {
        self.cells.iter().map(|c| fs.center(*c)).collect()
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Sparse places on the free-space ridge: local maxima of the obstacle
/// distance (with enough clearance), thinned greedily to `min_sep`, linked
/// by line-of-sight edges pruned to a relative neighborhood graph, plus
/// bridging places wherever free space connects places that the edges do
/// not (doors, corridors).
pub fn extract_places(fs: &FreeSpace, params: PlaceParams) -> PlaceLayout {
    let dist = fs.distance_field();
    let at = |x: i64, y: i64| -> f64 {
        fs.index([fs.origin[0] + x, fs.origin[1] + y]).map_or(0.0, |i| dist[i])
    };
    let mut candidates: Vec<usize> = (0..fs.len())
        .filter(|i| fs.is_free_at(*i) && dist[*i] > 0.0 && dist[*i] >= params.min_clearance)
        .filter(|i| {
            let (x, y) = ((i % fs.width) as i64, (i / fs.width) as i64);
            let d = dist[*i];
            (-1..=1).all(|dy| (-1..=1).all(|dx| (dx == 0 && dy == 0) || at(x + dx, y + dy) <= d))
        })
        .collect();
    candidates.sort_by(|a, b| dist[*b].total_cmp(&dist[*a]).then(a.cmp(b)));

    let sep2 = params.min_sep * params.min_sep;
    let mut cells: Vec<[i64; 2]> = Vec::new();
    for i in candidates {
        let c = fs.cell_at(i);
        let p = fs.center(c);
        if cells.iter().all(|q| dist2(fs.center(*q), p) >= sep2 - 1e-12) {
            cells.push(c);
        }
    }
    let mut layout = PlaceLayout {
        cells,
        edges: BTreeSet::new(),
    };
    link_line_of_sight(fs, &mut layout);
    bridge_components(fs, &dist, params.min_clearance, &mut layout);
    layout
}

fn link_line_of_sight(fs: &FreeSpace, layout: &mut PlaceLayout) {
    let pts = layout.centers(fs);
    let n = pts.len();
    let mut los = vec![false; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let v = fs.segment_free(pts[a], pts[b]);
            los[a * n + b] = v;
            los[b * n + a] = v;
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            if !los[a * n + b] {
                continue;
            }
            let dab = dist2(pts[a], pts[b]);
            // drop the edge when a visible third place is closer to both ends;
            // a and b stay connected through strictly shorter edges
            let redundant = (0..n).any(|c| {
                c != a
                    && c != b
                    && los[a * n + c]
                    && los[c * n + b]
                    && dist2(pts[a], pts[c]) < dab
                    && dist2(pts[c], pts[b]) < dab
            });
            if !redundant {
                layout.edges.insert((a, b));
            }
        }
    }
}

fn components(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<usize> {
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(c: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while c[r] != r {
            r = c[r];
        }
        let mut j = i;
        while c[j] != r {
            let next = c[j];
            c[j] = r;
            j = next;
        }
        r
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut comp, *a), find(&mut comp, *b));
        if ra != rb {
            comp[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..n).map(|i| find(&mut comp, i)).collect()
}

/// Shortest 4-connected path from `from` to any cell in `goals`, through
/// free cells satisfying `ok`.
fn bfs_path(fs: &FreeSpace, from: usize, goals: &BTreeMap<usize, usize>, ok: impl Fn(usize) -> bool) -> Option<Vec<usize>> {
    let mut prev = vec![usize::MAX; fs.len()];
    prev[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(i) = queue.pop_front() {
        if i != from && goals.contains_key(&i) {
            let mut path = vec![i];
            let mut at = i;
            while at != from {
                at = prev[at];
                path.push(at);
            }
            path.reverse();
            return Some(path);
        }
        for j in fs.neighbors4(i) {
            if prev[j] == usize::MAX && fs.is_free_at(j) && (ok(j) || goals.contains_key(&j)) {
                prev[j] = i;
                queue.push_back(j);
            }
        }
    }
    None
}

fn bridge_components(fs: &FreeSpace, dist: &[f64], min_clearance: f64, layout: &mut PlaceLayout) {
    loop {
        let comp = components(layout.cells.len(), &layout.edges);
        let roots: BTreeSet<usize> = comp.iter().copied().collect();
        if roots.len() <= 1 {
            return;
        }
        let mut merged = false;
        for root in roots {
            let comp = components(layout.cells.len(), &layout.edges);
            let start_place = comp.iter().position(|c| *c == comp[root]).expect("root is a member");
            let from = fs.index(layout.cells[start_place]).expect("places lie in the map");
            let goals: BTreeMap<usize, usize> = layout
                .cells
                .iter()
                .enumerate()
                .filter(|(p, _)| comp[*p] != comp[root])
                .map(|(p, c)| (fs.index(*c).expect("places lie in the map"), p))
                .collect();
            let path = bfs_path(fs, from, &goals, |j| dist[j] >= min_clearance)
                .or_else(|| bfs_path(fs, from, &goals, |_| true));
            let Some(path) = path else { continue };
            let target = goals[path.last().expect("non-empty path")];
            let mut anchor = start_place;
            for w in 1..path.len() {
                let here = fs.center(fs.cell_at(path[w]));
                if !fs.segment_free(fs.center(layout.cells[anchor]), here) {
                    layout.cells.push(fs.cell_at(path[w - 1]));
                    let new = layout.cells.len() - 1;
                    layout.edges.insert((anchor.min(new), anchor.max(new)));
                    anchor = new;
                }
            }
            layout.edges.insert((anchor.min(target), anchor.max(target)));
            merged = true;
            break;
        }
        if !merged {
            return;
        }
    }
}

/// Write a layout into the place layer, reusing the nearest existing place
/// (within half the minimum separation) so ids stay stable between cycles.
/// Places that disappear are removed; returns the node id of every layout
/// place.
pub fn sync_places(
    graph: &mut SceneGraph,
    fs: &FreeSpace,
    layout: &PlaceLayout,
    height: f64,
    min_sep: f64,
) -> Result<Vec<NodeId>, GraphError> {
    let existing: Vec<(NodeId, [f64; 2])> = graph
        .places()
        .map(|(id, p)| (id, [p.centroid[0], p.centroid[1]]))
        .collect();
    let reuse2 = (min_sep / 2.0).powi(2);
    let mut claimed: BTreeSet<NodeId> = BTreeSet::new();
    let mut ids = Vec::with_capacity(layout.cells.len());
    for cell in &layout.cells {
        let p = fs.center(*cell);
        let best = existing
            .iter()
            .filter(|(id, q)| !claimed.contains(id) && dist2(*q, p) <= reuse2)
            .min_by(|a, b| dist2(a.1, p).total_cmp(&dist2(b.1, p)).then(a.0.cmp(&b.0)));
        let node = PlaceNode {
            centroid: [p[0], p[1], height],
            neighbors: BTreeSet::new(),
            cell: Some(*cell),
        };
        let id = match best {
            Some((id, _)) => {
                let place = graph.place_mut(*id).expect("listed above");
                place.centroid = node.centroid;
                place.cell = node.cell;
                *id
            }
            None => graph.add_node(Layer::Place, node)?,
        };
        claimed.insert(id);
        ids.push(id);
    }
    for (id, _) in existing {
        if !claimed.contains(&id) {
            graph.remove_node(id);
        }
    }
    for id in &ids {
        graph.place_mut(*id).expect("synced").neighbors.clear();
    }
    for (a, b) in &layout.edges {
        graph.link_places(ids[*a], ids[*b])?;
    }
    Ok(ids)
}

/// Parent every object to its nearest place (Euclidean centroid distance,
/// ties to the lower id).
pub fn attach_objects_to_places(graph: &mut SceneGraph) -> Result<(), GraphError> {
    let places: Vec<(NodeId, [f64; 3])> = graph.places().map(|(id, p)| (id, p.centroid)).collect();
    let objects: Vec<(NodeId, [f64; 3])> = graph.objects().map(|(id, o)| (id, o.centroid)).collect();
    for (obj, c) in objects {
        let d = |p: &[f64; 3]| (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>();
        let nearest = places
            .iter()
            .min_by(|a, b| d(&a.1).total_cmp(&d(&b.1)).then(a.0.cmp(&b.0)));
        match nearest {
            Some((place, _)) => graph.set_parent(obj, *place)?,
            None => graph.clear_parent(obj),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PlaceParams {
        PlaceParams { min_sep: 0.8, min_clearance: 0.2 }
    }

    #[test]
    fn empty_square_room_gets_a_central_place() {
        let row = ".".repeat(21);
        let text = vec![row.as_str(); 21].join("\n");
        let fs = FreeSpace::from_ascii(&text, 0.1);
        let layout = extract_places(&fs, params());
        assert!(!layout.cells.is_empty());
        let d = fs.distance_field();
        let argmax = (0..fs.len()).max_by(|a, b| d[*a].total_cmp(&d[*b])).unwrap();
        let m = fs.cell_at(argmax);
        assert!(layout
            .cells
            .iter()
            .any(|c| (c[0] - m[0]).abs() <= 1 && (c[1] - m[1]).abs() <= 1));
    }

    #[test]
    fn fully_blocked_map_has_no_places() {
        let fs = FreeSpace::from_ascii("###\n###", 0.1);
        assert!(extract_places(&fs, params()).cells.is_empty());
    }

    fn two_rooms_and_corridor() -> FreeSpace {
        let mut rows = Vec::new();
        for y in 0..15 {
            let mut row = String::new();
            for x in 0..45 {
                let room_a = x < 15;
                let room_b = x >= 30;
                let corridor = (6..9).contains(&y);
                row.push(if room_a || room_b || corridor { '.' } else { '#' });
            }
            rows.push(row);
        }
        FreeSpace::from_ascii(&rows.join("\n"), 0.1)
    }

    #[test]
    fn corridor_connects_both_rooms() {
        let fs = two_rooms_and_corridor();
        let layout = extract_places(&fs, params());
        let centers = layout.centers(&fs);
        let in_a: Vec<usize> = (0..centers.len()).filter(|i| centers[*i][0] < 1.5).collect();
        let in_b: Vec<usize> = (0..centers.len()).filter(|i| centers[*i][0] >= 3.0).collect();
        assert!(!in_a.is_empty() && !in_b.is_empty());
        let comp = components(layout.cells.len(), &layout.edges);
        assert_eq!(comp[in_a[0]], comp[in_b[0]]);
        // every edge stays in free space
        for (a, b) in &layout.edges {
            assert!(fs.segment_free(centers[*a], centers[*b]));
        }
    }

    #[test]
    fn sync_reuses_nearby_places() {
        let fs = two_rooms_and_corridor();
        let layout = extract_places(&fs, params());
        let mut g = SceneGraph::new();
        let first = sync_places(&mut g, &fs, &layout, 1.0, 0.8).unwrap();
        let second = sync_places(&mut g, &fs, &layout, 1.0, 0.8).unwrap();
        assert_eq!(first, second);
        assert!(g.validate().is_empty(), "{:?}", g.validate());
        assert_eq!(g.summary().place_edges, layout.edges.len());
    }
}
