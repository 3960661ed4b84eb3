use std::collections::{BTreeSet, VecDeque};

use super::free_space::FreeSpace;
use crate::graph::{BuildingNode, GraphError, Layer, NodeId, RoomExtent, RoomNode, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomParams {
    /// Free-space openings narrower than twice this radius separate rooms.
    pub door_radius: f64,
    /// Minimum eroded area (m²) for a component to seed a room.
    pub min_room_area: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoomLayout {
    /// Sorted cell lists, one per room.
    pub rooms: Vec<Vec<[i64; 2]>>,
}

/// Split free space into rooms: erode by the door radius so doorways
/// vanish, keep the large connected components as seeds, then grow the
/// seeds back over the free space they came from.
pub fn detect_rooms(fs: &FreeSpace, params: RoomParams) -> RoomLayout {
    let d2 = fs.squared_distance_cells();
    let r = params.door_radius / fs.cell;
    let min_cells = params.min_room_area / (fs.cell * fs.cell);
    let (mut labels, mut n) = fs.components(|i| fs.is_free_at(i) && d2[i] > r * r + 1e-6);
    let keep = |labels: &[Option<usize>], n: usize| -> Vec<usize> {
        let mut area = vec![0usize; n];
        for l in labels.iter().flatten() {
            area[*l] += 1;
        }
        (0..n).filter(|c| area[*c] as f64 >= min_cells - 1e-9).collect()
    };
    let mut kept = keep(&labels, n);
    if kept.is_empty() {
        // nothing survives the erosion: fall back to plain connectivity
        (labels, n) = fs.components(|i| fs.is_free_at(i));
        kept = (0..n).collect();
    }
    let remap: Vec<Option<usize>> = (0..n).map(|c| kept.iter().position(|k| *k == c)).collect();
    let mut owner: Vec<Option<usize>> = labels.iter().map(|l| l.and_then(|c| remap[c])).collect();

    let mut queue: VecDeque<usize> = (0..fs.len()).filter(|i| owner[*i].is_some()).collect();
    while let Some(i) = queue.pop_front() {
        let room = owner[i];
        for j in fs.neighbors4(i) {
            if owner[j].is_none() && fs.is_free_at(j) {
                owner[j] = room;
                queue.push_back(j);
            }
        }
    }

    let mut rooms = vec![Vec::new(); kept.len()];
    for (i, o) in owner.iter().enumerate() {
        if let Some(room) = o {
            rooms[*room].push(fs.cell_at(i));
        }
    }
    for cells in &mut rooms {
        cells.sort_unstable();
    }
    RoomLayout { rooms }
}

/// Write the layout into the room layer under a single building. Existing
/// rooms are reused by largest cell overlap (keeping their features);
/// rooms with no counterpart are removed.
pub fn sync_rooms(
    graph: &mut SceneGraph,
    fs: &FreeSpace,
    layout: &RoomLayout,
    height: f64,
) -> Result<Vec<NodeId>, GraphError> {
    let existing: Vec<(NodeId, BTreeSet<(i64, i64)>)> = graph
        .rooms()
        .map(|(id, r)| (id, r.extent.cells().collect()))
        .collect();
    let mut overlaps: Vec<(usize, usize, usize)> = Vec::new();
    for (li, cells) in layout.rooms.iter().enumerate() {
        for (ei, (_, old)) in existing.iter().enumerate() {
            let n = cells.iter().filter(|c| old.contains(&(c[0], c[1]))).count();
            if n > 0 {
                overlaps.push((n, li, ei));
            }
        }
    }
    overlaps.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut reuse: Vec<Option<NodeId>> = vec![None; layout.rooms.len()];
    let mut claimed = vec![false; existing.len()];
    for (_, li, ei) in overlaps {
        if reuse[li].is_none() && !claimed[ei] {
            reuse[li] = Some(existing[ei].0);
            claimed[ei] = true;
        }
    }
    for (ei, (id, _)) in existing.iter().enumerate() {
        if !claimed[ei] {
            graph.remove_node(*id);
        }
    }

    let mut ids = Vec::with_capacity(layout.rooms.len());
    for (li, cells) in layout.rooms.iter().enumerate() {
        let n = cells.len().max(1) as f64;
        let (sx, sy) = cells.iter().fold((0.0, 0.0), |(x, y), c| {
            let p = fs.center(*c);
            (x + p[0], y + p[1])
        });
        let centroid = [sx / n, sy / n, height];
        let extent = RoomExtent::from_cells(fs.cell, cells.iter().map(|c| (c[0], c[1])));
        let id = match reuse[li] {
            Some(id) => {
                let room = graph.room_mut(id).expect("reused room exists");
                room.centroid = centroid;
                room.extent = extent;
                id
            }
            None => graph.add_node(
                Layer::Room,
                RoomNode {
                    centroid,
                    feature_clusters: Vec::new(),
                    extent,
                },
            )?,
        };
        ids.push(id);
    }
    sync_building(graph)?;
    Ok(ids)
}

/// Keep exactly one building (when there are rooms) at the mean room
/// centroid, parenting every room.
pub fn sync_building(graph: &mut SceneGraph) -> Result<(), GraphError> {
    let rooms: Vec<(NodeId, [f64; 3])> = graph.rooms().map(|(id, r)| (id, r.centroid)).collect();
    let buildings: Vec<NodeId> = graph.buildings().map(|(id, _)| id).collect();
    if rooms.is_empty() {
        return Ok(());
    }
    let n = rooms.len() as f64;
    let mut centroid = [0.0; 3];
    for (_, c) in &rooms {
        for a in 0..3 {
            centroid[a] += c[a] / n;
        }
    }
    let building = match buildings.first() {
        Some(b) => {
            if let Some(crate::graph::Node::Building(node)) = graph.node_mut(*b) {
                node.centroid = centroid;
            }
            *b
        }
        None => graph.add_node(Layer::Building, BuildingNode { centroid })?,
    };
    for extra in buildings.iter().skip(1) {
        graph.remove_node(*extra);
    }
    for (room, _) in rooms {
        graph.set_parent(room, building)?;
    }
    Ok(())
}

/// Parent every place to the room whose footprint contains it, or to the
/// nearest room centroid when none does.
pub fn attach_places_to_rooms(graph: &mut SceneGraph) -> Result<(), GraphError> {
    let places: Vec<NodeId> = graph.places().map(|(id, _)| id).collect();
    attach_some_places(graph, &places)
}

pub fn attach_some_places(graph: &mut SceneGraph, places: &[NodeId]) -> Result<(), GraphError> {
    let rooms: Vec<(NodeId, RoomNode)> = graph.rooms().map(|(id, r)| (id, r.clone())).collect();
    for place in places {
        let Some(c) = graph.places().find(|(id, _)| id == place).map(|(_, p)| p.centroid) else {
            continue;
        };
        let d = |r: &RoomNode| (r.centroid[0] - c[0]).powi(2) + (r.centroid[1] - c[1]).powi(2);
        let room = rooms
            .iter()
            .find(|(_, r)| r.extent.contains_point(&c))
            .or_else(|| rooms.iter().min_by(|a, b| d(&a.1).total_cmp(&d(&b.1)).then(a.0.cmp(&b.0))));
        match room {
            Some((room, _)) => graph.set_parent(*place, *room)?,
            None => graph.clear_parent(*place),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two 10x10 rooms side by side, separated by a wall with a one-cell door.
    fn two_rooms(door: bool) -> FreeSpace {
        let mut rows = Vec::new();
        for y in 0..10 {
            let mut row = String::new();
            for x in 0..21 {
                let wall = x == 10 && !(door && y == 5);
                row.push(if wall { '#' } else { '.' });
            }
            rows.push(row);
        }
        FreeSpace::from_ascii(&rows.join("\n"), 0.1)
    }

    fn params() -> RoomParams {
        RoomParams { door_radius: 0.1, min_room_area: 0.1 }
    }

    #[test]
    fn one_cell_door_splits_two_rooms() {
        let fs = two_rooms(true);
        let layout = detect_rooms(&fs, params());
        assert_eq!(layout.rooms.len(), 2);
        let total: usize = layout.rooms.iter().map(Vec::len).sum();
        assert_eq!(total, fs.free_count());
    }

    #[test]
    fn tiny_radius_merges_through_the_door() {
        let fs = two_rooms(true);
        let layout = detect_rooms(&fs, RoomParams { door_radius: 0.01, min_room_area: 0.1 });
        assert_eq!(layout.rooms.len(), 1);
    }

    #[test]
    fn everything_eroded_falls_back_to_components() {
        let fs = FreeSpace::from_ascii("...\n...", 0.1);
        let layout = detect_rooms(&fs, RoomParams { door_radius: 1.0, min_room_area: 0.0 });
        assert_eq!(layout.rooms.len(), 1);
        assert_eq!(layout.rooms[0].len(), 6);
    }

    #[test]
    fn sync_keeps_ids_and_builds_a_tree() {
        let fs = two_rooms(true);
        let layout = detect_rooms(&fs, params());
        let mut g = SceneGraph::new();
        let a = sync_rooms(&mut g, &fs, &layout, 1.0).unwrap();
        let b = sync_rooms(&mut g, &fs, &layout, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(g.buildings().count(), 1);
        for id in &a {
            assert!(g.parent_of(*id).is_some());
        }
        assert!(g.validate().is_empty(), "{:?}", g.validate());
    }

    #[test]
    fn places_follow_room_footprints() {
        let fs = two_rooms(true);
        let layout = detect_rooms(&fs, params());
        let mut g = SceneGraph::new();
        let rooms = sync_rooms(&mut g, &fs, &layout, 1.0).unwrap();
        let place = |g: &mut SceneGraph, x: f64| {
            let node = crate::graph::PlaceNode { centroid: [x, 0.5, 1.0], neighbors: BTreeSet::new(), cell: None };
            g.add_node(Layer::Place, node).unwrap()
        };
        let left = place(&mut g, 0.25);
        let right = place(&mut g, 1.85);
        attach_places_to_rooms(&mut g).unwrap();
        assert_eq!(g.parent_of(left), Some(rooms[0]));
        assert_eq!(g.parent_of(right), Some(rooms[1]));
    }
}
