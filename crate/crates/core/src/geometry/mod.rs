//! Minimum distance between the deformable object and static obstacles.
//!
//! Planar scenes (used with rods) extrude a polygon along the normal of a
//! working plane and report a signed distance: negative values are the depth
//! of the deepest object vertex inside the polygon. Mesh scenes (used with
//! cloth) report the unsigned distance to a triangle mesh plus an inside flag
//! for convex meshes.
//!
//! Every query is exhaustive over element pairs. Ties keep the lowest element
//! index, so results are deterministic.

mod primitives;
mod scene;

use thiserror::Error;

pub use primitives::{
    closest_point_on_triangle, point_in_polygon, point_segment_distance, point_triangle_distance,
    segment_segment_distance, segment_triangle_distance, SegmentPair,
};
pub use scene::{
    min_distance_to_obstacle, min_distance_to_scene, DistanceResult, MeshObstacle, ObjectElement,
    ObjectGeometry, Obstacle, PlanarObstacle, WorkingPlane,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate (zero-area) triangle")]
    DegenerateTriangle,
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon is not simple: edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("polygon vertices must be counter-clockwise")]
    Clockwise,
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    FaceOutOfRange { face: usize, index: usize, count: usize },
    #[error("face {0} has zero area")]
    DegenerateFace(usize),
    #[error("object geometry is empty")]
    EmptyObject,
    #[error("mesh file line {line}: {message}")]
    MeshParse { line: usize, message: String },
    #[error("reading mesh file: {0}")]
    Io(String),
}
