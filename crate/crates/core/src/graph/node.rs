use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

use crate::embedding::Embedding;

/// Stable node identifier. Ids come from a monotonic counter and are never
/// reused, even after a node is removed or merged away.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// The five layers of the hierarchy, bottom to top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Mesh,
    Object,
    Place,
    Room,
    Building,
}

impl Layer {
    pub const ALL: [Layer; 5] = [
        Layer::Mesh,
        Layer::Object,
        Layer::Place,
        Layer::Room,
        Layer::Building,
    ];

    /// 1-based layer index.
    pub fn index(self) -> u8 {
        match self {
            Layer::Mesh => 1,
            Layer::Object => 2,
            Layer::Place => 3,
            Layer::Room => 4,
            Layer::Building => 5,
        }
    }

    pub fn from_index(index: u8) -> Option<Layer> {
        Layer::ALL.get(usize::from(index).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Mesh => "mesh",
            Layer::Object => "objects",
            Layer::Place => "places",
            Layer::Room => "rooms",
            Layer::Building => "building",
        }
    }

    pub fn above(self) -> Option<Layer> {
        Layer::from_index(self.index() + 1)
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.index())
    }
}

impl Serialize for Layer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.index())
    }
}

impl<'de> Deserialize<'de> for Layer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let i = u8::deserialize(d)?;
        Layer::from_index(i)
            .ok_or_else(|| serde::de::Error::custom(format!("layer index {i} outside 1..=5")))
    }
}

pub type Point3 = [f64; 3];

/// Axis-aligned box given by its min and max corners, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    pub fn is_ordered(&self) -> bool {
        (0..3).all(|i| self.min[i] <= self.max[i])
    }

    pub fn contains(&self, p: &Point3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    /// Grow every face outward by `pad`.
    pub fn inflated(&self, pad: f64) -> Aabb {
        Aabb {
            min: [self.min[0] - pad, self.min[1] - pad, self.min[2] - pad],
            max: [self.max[0] + pad, self.max[1] + pad, self.max[2] + pad],
        }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| (self.max[i] - self.min[i]).max(0.0)).product()
    }

    pub fn intersection_volume(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|i| (self.max[i].min(other.max[i]) - self.min[i].max(other.min[i])).max(0.0))
            .product()
    }

    /// Volumetric intersection-over-union; 0 when both boxes are empty.
    pub fn iou(&self, other: &Aabb) -> f64 {
        let inter = self.intersection_volume(other);
        let union = self.volume() + other.volume() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: [
                self.min[0].min(other.min[0]),
                self.min[1].min(other.min[1]),
                self.min[2].min(other.min[2]),
            ],
            max: [
                self.max[0].max(other.max[0]),
                self.max[1].max(other.max[1]),
                self.max[2].max(other.max[2]),
            ],
        }
    }
}

/// Layer 1: a surface vertex of the metric-semantic map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshVertex {
    pub position: Point3,
    pub color: [u8; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u32>,
    /// Only populated while an update cycle is in flight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_feature: Option<Embedding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_relation_id: Option<u64>,
}

/// Layer 2: an object instance with a fused open-vocabulary feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub centroid: Point3,
    pub bbox: Aabb,
    pub label: u32,
    /// Mean of every fused per-cycle feature; absent until the first one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Embedding>,
    pub update_count: u64,
    /// Detection-linkage id, refreshed each cycle the object is observed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u64>,
}

/// Layer 3: a free-space place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceNode {
    pub centroid: Point3,
    #[serde(default)]
    pub neighbors: BTreeSet<NodeId>,
    /// Free-space cell the place was extracted at, used to keep ids stable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<[i64; 2]>,
}

/// A run of cells `[start, end]` (inclusive) on one grid row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellSpan {
    pub row: i64,
    pub start: i64,
    pub end: i64,
}

/// Horizontal footprint of a room as a set of square cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoomExtent {
    pub cell_size: f64,
    /// Sorted, non-overlapping row spans.
    pub spans: Vec<CellSpan>,
}

impl RoomExtent {
    /// Build from cell coordinates `(x, y)`; duplicates are ignored.
    pub fn from_cells<I: IntoIterator<Item = (i64, i64)>>(cell_size: f64, cells: I) -> Self {
        let mut sorted: Vec<(i64, i64)> = cells.into_iter().map(|(x, y)| (y, x)).collect();
        sorted.sort_unstable();
        sorted.dedup();
        let mut spans: Vec<CellSpan> = Vec::new();
        for (row, x) in sorted {
            match spans.last_mut() {
                Some(s) if s.row == row && s.end + 1 == x => s.end = x,
                _ => spans.push(CellSpan { row, start: x, end: x }),
            }
        }
        Self { cell_size, spans }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (x / self.cell_size).floor() as i64,
            (y / self.cell_size).floor() as i64,
        )
    }

    pub fn contains_cell(&self, cx: i64, cy: i64) -> bool {
        let lo = self.spans.partition_point(|s| s.row < cy);
        self.spans[lo..]
            .iter()
            .take_while(|s| s.row == cy)
            .any(|s| s.start <= cx && cx <= s.end)
    }

    /// Containment test on the horizontal projection of a point.
    pub fn contains_point(&self, p: &Point3) -> bool {
        if self.cell_size <= 0.0 {
            return false;
        }
        let (cx, cy) = self.cell_of(p[0], p[1]);
        self.contains_cell(cx, cy)
    }

    pub fn cell_count(&self) -> usize {
        self.spans.iter().map(|s| (s.end - s.start + 1) as usize).sum()
    }

    pub fn cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.spans
            .iter()
            .flat_map(|s| (s.start..=s.end).map(move |x| (x, s.row)))
    }
}

/// Layer 4: a room with its clustered appearance features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomNode {
    pub centroid: Point3,
    #[serde(default)]
    pub feature_clusters: Vec<Embedding>,
    #[serde(default)]
    pub extent: RoomExtent,
}

/// Layer 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingNode {
    pub centroid: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    MeshVertex(MeshVertex),
    Object(ObjectNode),
    Place(PlaceNode),
    Room(RoomNode),
    Building(BuildingNode),
}

impl Node {
    pub fn layer(&self) -> Layer {
        match self {
            Node::MeshVertex(_) => Layer::Mesh,
            Node::Object(_) => Layer::Object,
            Node::Place(_) => Layer::Place,
            Node::Room(_) => Layer::Room,
            Node::Building(_) => Layer::Building,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Node::MeshVertex(_) => "mesh_vertex",
            Node::Object(_) => "object",
            Node::Place(_) => "place",
            Node::Room(_) => "room",
            Node::Building(_) => "building",
        }
    }

    pub fn position(&self) -> Point3 {
        match self {
            Node::MeshVertex(v) => v.position,
            Node::Object(o) => o.centroid,
            Node::Place(p) => p.centroid,
            Node::Room(r) => r.centroid,
            Node::Building(b) => b.centroid,
        }
    }
}

impl From<MeshVertex> for Node {
    fn from(v: MeshVertex) -> Self {
        Node::MeshVertex(v)
    }
}
impl From<ObjectNode> for Node {
    fn from(v: ObjectNode) -> Self {
        Node::Object(v)
    }
}
impl From<PlaceNode> for Node {
    fn from(v: PlaceNode) -> Self {
        Node::Place(v)
    }
}
impl From<RoomNode> for Node {
    fn from(v: RoomNode) -> Self {
        Node::Room(v)
    }
}
impl From<BuildingNode> for Node {
    fn from(v: BuildingNode) -> Self {
        Node::Building(v)
    }
}

/// Intra-object-layer edge carrying the fused relation feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub edge_id: u64,
    /// Unordered pair, stored with the smaller id first.
    pub endpoints: (NodeId, NodeId),
    pub feature: Embedding,
    pub update_count: u64,
    /// Path of the most recent persisted pair crop, relative to the graph store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_crop: Option<String>,
}

impl RelationEdge {
    pub fn other(&self, id: NodeId) -> Option<NodeId> {
        if self.endpoints.0 == id {
            Some(self.endpoints.1)
        } else if self.endpoints.1 == id {
            Some(self.endpoints.0)
        } else {
            None
        }
    }
}

pub(crate) fn pair_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
