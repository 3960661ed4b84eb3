//! Geometry side of the graph: voxel integration, object clustering and
//! fusion, free space, places and rooms.

mod cluster;
mod free_space;
mod grid;
mod objects;
mod places;
mod rooms;

pub use cluster::{cluster_objects, Cluster, ClusterSet};
pub use free_space::FreeSpace;
pub use grid::{FrameAnnotations, SemanticVoxelGrid, Voxel, VoxelIndex};
pub use objects::{fuse_or_create_objects, FuseOutcome};
pub use places::{attach_objects_to_places, extract_places, sync_places, PlaceLayout, PlaceParams};
pub use rooms::{
    attach_places_to_rooms, attach_some_places, detect_rooms, sync_building, sync_rooms, RoomLayout, RoomParams,
};
