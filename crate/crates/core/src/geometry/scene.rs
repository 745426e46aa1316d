use std::path::Path;

use serde::{Deserialize, Serialize};

use super::primitives::{
    closest_point_on_triangle, point_in_polygon, point_segment_distance, segment_segment_distance,
    segment_triangle_distance,
};
use super::GeometryError;
use crate::math::Vec3;
use crate::pbd::DeformableObject;

/// Plane in which planar obstacles are defined. Coordinates `(u, v)` map to
/// the two named axes in order; the remaining axis is the extrusion normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkingPlane {
    Xy,
    Yz,
    Xz,
}

impl WorkingPlane {
    fn axes(self) -> (usize, usize, usize) {
        match self {
            WorkingPlane::Xy => (0, 1, 2),
            WorkingPlane::Yz => (1, 2, 0),
            WorkingPlane::Xz => (0, 2, 1),
        }
    }

    pub fn project(self, p: &Vec3) -> [f64; 2] {
        let (u, v, _) = self.axes();
        [p[u], p[v]]
    }

    /// Out-of-plane coordinate.
    pub fn normal_coordinate(self, p: &Vec3) -> f64 {
        p[self.axes().2]
    }

    pub fn lift(self, q: [f64; 2], normal: f64) -> Vec3 {
        let (u, v, n) = self.axes();
        let mut p = Vec3::zeros();
        p[u] = q[0];
        p[v] = q[1];
        p[n] = normal;
        p
    }
}

/// Simple counter-clockwise polygon, extruded along the working-plane normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarObstacle {
    pub plane: WorkingPlane,
    pub vertices: Vec<[f64; 2]>,
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect_2d(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let d1 = orient(r, s, p);
    let d2 = orient(r, s, q);
    let d3 = orient(p, q, r);
    let d4 = orient(p, q, s);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: [f64; 2], b: [f64; 2], c: [f64; 2], d: f64| {
        d == 0.0
            && c[0] >= a[0].min(b[0])
            && c[0] <= a[0].max(b[0])
            && c[1] >= a[1].min(b[1])
            && c[1] <= a[1].max(b[1])
    };
    on(r, s, p, d1) || on(r, s, q, d2) || on(p, q, r, d3) || on(p, q, s, d4)
}

impl PlanarObstacle {
    pub fn new(plane: WorkingPlane, vertices: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect_2d(vertices[i], vertices[(i + 1) % n], vertices[j], vertices[(j + 1) % n]) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        let area2: f64 = (0..n)
            .map(|i| {
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        if area2 <= 0.0 {
            return Err(GeometryError::Clockwise);
        }
        Ok(PlanarObstacle { plane, vertices })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        point_in_polygon(p, &self.vertices)
    }

    fn edges(&self) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            (Vec3::new(a[0], a[1], 0.0), Vec3::new(b[0], b[1], 0.0))
        })
    }

    /// Distance from a 2-D point to the polygon boundary and the closest
    /// boundary point.
    fn boundary_distance(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let pt = Vec3::new(p[0], p[1], 0.0);
        let mut best = (f64::INFINITY, p);
        for (a, b) in self.edges() {
            let (d, _, q) = point_segment_distance(&pt, &a, &b);
            if d < best.0 {
                best = (d, [q.x, q.y]);
            }
        }
        best
    }
}

/// Triangle mesh obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshObstacle {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Enables the inside test (point behind every face plane).
    pub convex: bool,
}

impl MeshObstacle {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, convex: bool) -> Result<Self, GeometryError> {
        let count = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= count) {
                return Err(GeometryError::FaceOutOfRange { face: fi, index, count });
            }
            let (a, b, c) = (&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            let n = (b - a).cross(&(c - a));
            let scale = (b - a).norm_squared().max((c - a).norm_squared());
            if !(n.norm() > 1e-12 * scale) || scale == 0.0 {
                return Err(GeometryError::DegenerateFace(fi));
            }
        }
        Ok(MeshObstacle { vertices, faces, convex })
    }

    /// Parse the text triangle format: `v x y z` vertex lines and `f i j k`
    /// face lines with 1-based indices; `#` starts a comment.
    pub fn parse(text: &str, convex: bool) -> Result<Self, GeometryError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            let fields: Vec<&str> = parts.collect();
            let err = |message: String| GeometryError::MeshParse { line: line_no, message };
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields after `{tag}`, got {}", fields.len())));
            }
            match tag {
                "v" => {
                    let mut c = [0.0; 3];
                    for (slot, f) in c.iter_mut().zip(&fields) {
                        *slot = f.parse().map_err(|_| err(format!("bad coordinate `{f}`")))?;
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                "f" => {
                    let mut idx = [0usize; 3];
                    for (slot, f) in idx.iter_mut().zip(&fields) {
                        let i: usize = f.parse().map_err(|_| err(format!("bad index `{f}`")))?;
                        if i == 0 {
                            return Err(err("face indices are 1-based".into()));
                        }
                        *slot = i - 1;
                    }
                    faces.push(idx);
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        Self::new(vertices, faces, convex)
    }

    pub fn load(path: &Path, convex: bool) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, convex)
    }

    /// Axis-aligned box with 8 vertices and 12 outward-facing triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> Result<Self, GeometryError> {
        let v = |x: bool, y: bool, z: bool| {
            Vec3::new(if x { max.x } else { min.x }, if y { max.y } else { min.y }, if z { max.z } else { min.z })
        };
        let vertices = vec![
            v(false, false, false),
            v(true, false, false),
            v(true, true, false),
            v(false, true, false),
            v(false, false, true),
            v(true, false, true),
            v(true, true, true),
            v(false, true, true),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [0, 4, 7],
            [0, 7, 3],
        ];
        Self::new(vertices, faces, true)
    }

    fn face(&self, k: usize) -> [&Vec3; 3] {
        let f = self.faces[k];
        [&self.vertices[f[0]], &self.vertices[f[1]], &self.vertices[f[2]]]
    }

    /// Unique undirected edges in first-appearance order.
    fn edges(&self) -> Vec<(usize, usize)> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if seen.insert((a.min(b), a.max(b))) {
                    out.push((a.min(b), a.max(b)));
                }
            }
        }
        out
    }

    /// Inside test for convex meshes: the point is on the centroid side of
    /// every face plane.
    pub fn contains(&self, p: &Vec3) -> bool {
        if !self.convex || self.faces.is_empty() {
            return false;
        }
        let centroid = self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64;
        self.faces.iter().all(|f| {
            let (a, b, c) = (&self.vertices[f[0]], &self.vertices[f[1]], &self.vertices[f[2]]);
            let mut n = (b - a).cross(&(c - a));
            if n.dot(&(centroid - a)) > 0.0 {
                n = -n;
            }
            n.dot(&(p - a)) <= 0.0
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Obstacle {
    Planar(PlanarObstacle),
    Mesh(MeshObstacle),
}

/// Object geometry as seen by distance queries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectGeometry {
    pub points: Vec<Vec3>,
    pub segments: Vec<[usize; 2]>,
    /// Optional surface triangles (cloth); lets obstacle edges that pass
    /// through a cloth face register as contact.
    pub triangles: Vec<[usize; 3]>,
}

impl ObjectGeometry {
    pub fn polyline(points: Vec<Vec3>) -> Self {
        let segments = (1..points.len()).map(|k| [k - 1, k]).collect();
        ObjectGeometry { points, segments, triangles: Vec::new() }
    }

    pub fn points(points: Vec<Vec3>) -> Self {
        ObjectGeometry { points, segments: Vec::new(), triangles: Vec::new() }
    }

    /// Rods become their centreline polyline; cloth contributes particles,
    /// stretch edges and triangles.
    pub fn from_object(object: &DeformableObject) -> Self {
        match object {
            DeformableObject::Rod(r) => Self::polyline(r.polyline()),
            DeformableObject::Cloth(c) => ObjectGeometry {
                points: c.particles.iter().map(|p| p.position).collect(),
                segments: c.stretch_edges.iter().map(|e| [e.i, e.j]).collect(),
                triangles: c.triangles.clone(),
            },
        }
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        ObjectGeometry {
            points: self.points.iter().map(|p| p + offset).collect(),
            segments: self.segments.clone(),
            triangles: self.triangles.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "index", rename_all = "lowercase")]
pub enum ObjectElement {
    Point(usize),
    Segment(usize),
    Triangle(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceResult {
    /// Signed for planar obstacles (negative = penetration depth); unsigned
    /// for meshes (see `inside`). `+inf` when there is nothing to measure.
    pub distance: f64,
    pub object_witness: Vec3,
    pub obstacle_witness: Vec3,
    pub object_element: Option<ObjectElement>,
    pub obstacle_index: Option<usize>,
    /// Some object point lies inside a convex mesh obstacle.
    pub inside: bool,
    pub infinite: bool,
}

impl DistanceResult {
    pub fn infinite() -> Self {
        DistanceResult {
            distance: f64::INFINITY,
            object_witness: Vec3::zeros(),
            obstacle_witness: Vec3::zeros(),
            object_element: None,
            obstacle_index: None,
            inside: false,
            infinite: true,
        }
    }

    /// Distance with penetration reported as negative for every obstacle
    /// kind; this is the value the collision barrier uses.
    pub fn signed_distance(&self) -> f64 {
        if self.inside && self.distance > 0.0 {
            -self.distance
        } else {
            self.distance
        }
    }
}

struct Candidate {
    distance: f64,
    object: Vec3,
    obstacle: Vec3,
    element: ObjectElement,
}

fn keep_min(best: &mut Option<Candidate>, c: Candidate) {
    if best.as_ref().is_none_or(|b| c.distance < b.distance) {
        *best = Some(c);
    }
}

fn planar_distance(geom: &ObjectGeometry, poly: &PlanarObstacle) -> DistanceResult {
    let plane = poly.plane;
    let flat: Vec<[f64; 2]> = geom.points.iter().map(|p| plane.project(p)).collect();

    // penetration: deepest vertex inside the polygon
    let mut deepest: Option<(f64, usize, [f64; 2])> = None;
    for (i, q) in flat.iter().enumerate() {
        if poly.contains(*q) {
            let (depth, on_boundary) = poly.boundary_distance(*q);
            if deepest.is_none_or(|(d, _, _)| depth > d) {
                deepest = Some((depth, i, on_boundary));
            }
        }
    }
    if let Some((depth, i, b)) = deepest {
        let p = geom.points[i];
        return DistanceResult {
            distance: if depth > 0.0 { -depth } else { 0.0 },
            object_witness: p,
            obstacle_witness: plane.lift(b, plane.normal_coordinate(&p)),
            object_element: Some(ObjectElement::Point(i)),
            obstacle_index: None,
            inside: true,
            infinite: false,
        };
    }

    let to3 = |q: [f64; 2]| Vec3::new(q[0], q[1], 0.0);
    let mut best: Option<Candidate> = None;
    if geom.segments.is_empty() {
        for (i, q) in flat.iter().enumerate() {
            let pt = to3(*q);
            for (a, b) in poly.edges() {
                let (d, _, w) = point_segment_distance(&pt, &a, &b);
                let p = geom.points[i];
                keep_min(
                    &mut best,
                    Candidate {
                        distance: d,
                        object: p,
                        obstacle: plane.lift([w.x, w.y], plane.normal_coordinate(&p)),
                        element: ObjectElement::Point(i),
                    },
                );
            }
        }
    } else {
        for (k, &[i, j]) in geom.segments.iter().enumerate() {
            let (p0, p1) = (to3(flat[i]), to3(flat[j]));
            for (a, b) in poly.edges() {
                let sp = segment_segment_distance(&p0, &p1, &a, &b);
                if best.as_ref().is_some_and(|c| sp.distance >= c.distance) {
                    continue;
                }
                let p = geom.points[i] + (geom.points[j] - geom.points[i]) * sp.s;
                let w = plane.lift([sp.on_second.x, sp.on_second.y], plane.normal_coordinate(&p));
                keep_min(
                    &mut best,
                    Candidate { distance: sp.distance, object: p, obstacle: w, element: ObjectElement::Segment(k) },
                );
            }
        }
    }
    finish(best, false)
}

fn finish(best: Option<Candidate>, inside: bool) -> DistanceResult {
    match best {
        None => DistanceResult::infinite(),
        Some(c) => DistanceResult {
            // re-measured in 3-D so witnesses reproduce the distance exactly
            distance: (c.object - c.obstacle).norm(),
            object_witness: c.object,
            obstacle_witness: c.obstacle,
            object_element: Some(c.element),
            obstacle_index: None,
            inside,
            infinite: false,
        },
    }
}

fn mesh_distance(geom: &ObjectGeometry, mesh: &MeshObstacle) -> DistanceResult {
    let mut best: Option<Candidate> = None;
    for (i, p) in geom.points.iter().enumerate() {
        for k in 0..mesh.faces.len() {
            let [a, b, c] = mesh.face(k);
            let q = closest_point_on_triangle(p, a, b, c);
            keep_min(&mut best, Candidate { distance: (p - q).norm(), object: *p, obstacle: q, element: ObjectElement::Point(i) });
        }
    }
    for (s, &[i, j]) in geom.segments.iter().enumerate() {
        let (p0, p1) = (&geom.points[i], &geom.points[j]);
        for k in 0..mesh.faces.len() {
            let (d, _, on_seg, on_tri) = segment_triangle_distance(p0, p1, mesh.face(k));
            keep_min(&mut best, Candidate { distance: d, object: on_seg, obstacle: on_tri, element: ObjectElement::Segment(s) });
        }
    }
    if !geom.triangles.is_empty() {
        let edges = mesh.edges();
        for (t, tri) in geom.triangles.iter().enumerate() {
            let corners = [&geom.points[tri[0]], &geom.points[tri[1]], &geom.points[tri[2]]];
            for &(a, b) in &edges {
                let (d, _, on_edge, on_tri) = segment_triangle_distance(&mesh.vertices[a], &mesh.vertices[b], corners);
                keep_min(&mut best, Candidate { distance: d, object: on_tri, obstacle: on_edge, element: ObjectElement::Triangle(t) });
            }
        }
    }
    let inside = mesh.convex && geom.points.iter().any(|p| mesh.contains(p));
    finish(best, inside)
}

/// Minimum distance between the object and one obstacle.
pub fn min_distance_to_obstacle(geom: &ObjectGeometry, obstacle: &Obstacle) -> Result<DistanceResult, GeometryError> {
    if geom.points.is_empty() {
        return Err(GeometryError::EmptyObject);
    }
    Ok(match obstacle {
        Obstacle::Planar(p) => planar_distance(geom, p),
        Obstacle::Mesh(m) => mesh_distance(geom, m),
    })
}

/// Global minimum over all obstacles; the lowest obstacle index wins ties.
/// Comparison uses [`DistanceResult::signed_distance`].
pub fn min_distance_to_scene(geom: &ObjectGeometry, obstacles: &[Obstacle]) -> Result<DistanceResult, GeometryError> {
    if geom.points.is_empty() {
        return Err(GeometryError::EmptyObject);
    }
    let mut best = DistanceResult::infinite();
    for (k, obstacle) in obstacles.iter().enumerate() {
        let mut r = min_distance_to_obstacle(geom, obstacle)?;
        if best.infinite || r.signed_distance() < best.signed_distance() {
            r.obstacle_index = Some(k);
            best = r;
        }
    }
    Ok(best)
}
