//! Exact closest-point queries between points, segments and triangles.

use super::GeometryError;
use crate::math::Vec3;

/// Closest points between two segments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentPair {
    pub distance: f64,
    /// Parameter along the first segment, in `[0, 1]`.
    pub s: f64,
    /// Parameter along the second segment, in `[0, 1]`.
    pub t: f64,
    pub on_first: Vec3,
    pub on_second: Vec3,
}

fn is_degenerate_triangle(a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let ab = b - a;
    let ac = c - a;
    let scale = ab.norm_squared().max(ac.norm_squared());
    !(ab.cross(&ac).norm() > 1e-12 * scale) || scale == 0.0
}

/// Closest point on the closed triangle `abc` to `p`, by Voronoi region.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Euclidean distance from `p` to the closed triangle, with the witness point.
pub fn point_triangle_distance(p: &Vec3, tri: [&Vec3; 3]) -> Result<(f64, Vec3), GeometryError> {
    let [a, b, c] = tri;
    if is_degenerate_triangle(a, b, c) {
        return Err(GeometryError::DegenerateTriangle);
    }
    let q = closest_point_on_triangle(p, a, b, c);
    Ok(((p - q).norm(), q))
}

/// Distance from `p` to segment `ab`; returns `(distance, parameter, witness)`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> (f64, f64, Vec3) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = a + ab * t;
    ((p - q).norm(), t, q)
}

/// Closest points between segments `p0p1` and `q0q1`. Zero-length segments
/// are treated as points.
pub fn segment_segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> SegmentPair {
    const EPS: f64 = 1e-300;
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        s = 0.0;
        t = 0.0;
    } else if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let on_first = p0 + d1 * s;
    let on_second = q0 + d2 * t;
    SegmentPair { distance: (on_first - on_second).norm(), s, t, on_first, on_second }
}

/// Intersection parameter of segment `p0p1` with the closed triangle, if any.
fn segment_hits_triangle(p0: &Vec3, p1: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let dir = p1 - p0;
    let e1 = b - a;
    let e2 = c - a;
    let n = e1.cross(&e2);
    let denom = n.dot(&dir);
    if denom.abs() <= 1e-14 * n.norm() * dir.norm() {
        // parallel: touching cases are covered by the edge and endpoint queries
        return None;
    }
    let t = n.dot(&(a - p0)) / denom;
    if !(0.0..=1.0).contains(&t) {
        return None;
    }
    let x = p0 + dir * t;
    let inside = |u: &Vec3, v: &Vec3| (v - u).cross(&(x - u)).dot(&n) >= 0.0;
    if inside(a, b) && inside(b, c) && inside(c, a) {
        Some(t)
    } else {
        None
    }
}

/// Closest points between segment `p0p1` and a triangle:
/// `(distance, segment parameter, point on segment, point on triangle)`.
pub fn segment_triangle_distance(p0: &Vec3, p1: &Vec3, tri: [&Vec3; 3]) -> (f64, f64, Vec3, Vec3) {
    let [a, b, c] = tri;
    if let Some(t) = segment_hits_triangle(p0, p1, a, b, c) {
        let x = p0 + (p1 - p0) * t;
        return (0.0, t, x, x);
    }
    let q0 = closest_point_on_triangle(p0, a, b, c);
    let mut best = ((p0 - q0).norm(), 0.0, *p0, q0);
    let q1 = closest_point_on_triangle(p1, a, b, c);
    let d1 = (p1 - q1).norm();
    if d1 < best.0 {
        best = (d1, 1.0, *p1, q1);
    }
    for (u, v) in [(a, b), (b, c), (c, a)] {
        let sp = segment_segment_distance(p0, p1, u, v);
        if sp.distance < best.0 {
            best = (sp.distance, sp.s, sp.on_first, sp.on_second);
        }
    }
    best
}

/// Even-odd membership of a 2-D point; points on the boundary count as inside.
pub fn point_in_polygon(p: [f64; 2], vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let pt = Vec3::new(p[0], p[1], 0.0);
    let mut inside = false;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let (d, _, _) =
            point_segment_distance(&pt, &Vec3::new(a[0], a[1], 0.0), &Vec3::new(b[0], b[1], 0.0));
        if d <= 1e-12 {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn perpendicular_foot_inside_face() {
        let (a, b, c) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0));
        let (d, w) = point_triangle_distance(&v(0.0, 0.0, 1.0), [&a, &b, &c]).unwrap();
        assert_eq!(d, 1.0);
        assert_eq!(w, v(0.0, 0.0, 0.0));
        let (d, w) = point_triangle_distance(&v(0.2, 0.2, -0.5), [&a, &b, &c]).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        assert!((w - v(0.2, 0.2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn point_on_vertex_is_zero() {
        let (a, b, c) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0));
        assert_eq!(point_triangle_distance(&b, [&a, &b, &c]).unwrap().0, 0.0);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let (a, b, c) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0));
        assert_eq!(point_triangle_distance(&v(0.0, 1.0, 0.0), [&a, &b, &c]), Err(GeometryError::DegenerateTriangle));
    }

    #[test]
    fn crossing_and_parallel_segments() {
        let sp = segment_segment_distance(&v(-1.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), &v(0.0, -1.0, 0.0), &v(0.0, 1.0, 0.0));
        assert_eq!(sp.distance, 0.0);
        let sp = segment_segment_distance(&v(0.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), &v(0.0, 0.0, 0.5), &v(1.0, 0.0, 0.5));
        assert!((sp.distance - 0.5).abs() < 1e-15);
        // point-like segments
        let sp = segment_segment_distance(&v(0.0, 0.0, 0.0), &v(0.0, 0.0, 0.0), &v(3.0, 4.0, 0.0), &v(3.0, 4.0, 0.0));
        assert_eq!(sp.distance, 5.0);
    }

    #[test]
    fn segment_piercing_triangle() {
        let (a, b, c) = (v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0));
        let (d, t, _, w) = segment_triangle_distance(&v(0.2, 0.2, -1.0), &v(0.2, 0.2, 1.0), [&a, &b, &c]);
        assert_eq!(d, 0.0);
        assert!((t - 0.5).abs() < 1e-15);
        assert!((w - v(0.2, 0.2, 0.0)).norm() < 1e-15);
    }

    // Independent oracle: enumerate the seven Voronoi candidates (face
    // projection if barycentric coordinates are non-negative, three edge
    // projections, three vertices) and keep the minimum.
    fn barycentric_oracle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
        let n = (b - a).cross(&(c - a));
        let area2 = n.norm_squared();
        let q = p - n * ((p - a).dot(&n) / area2);
        let l0 = (b - q).cross(&(c - q)).dot(&n) / area2;
        let l1 = (c - q).cross(&(a - q)).dot(&n) / area2;
        let l2 = 1.0 - l0 - l1;
        let mut best = f64::INFINITY;
        if l0 >= 0.0 && l1 >= 0.0 && l2 >= 0.0 {
            best = (p - q).norm();
        }
        for (u, w) in [(a, b), (b, c), (c, a)] {
            let e = w - u;
            let t = ((p - u).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
            best = best.min((p - (u + e * t)).norm());
        }
        best
    }

    fn random_point(rng: &mut StdRng) -> Vec3 {
        v(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn point_triangle_matches_barycentric_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10_000 {
            let (a, b, c) = (random_point(&mut rng), random_point(&mut rng), random_point(&mut rng));
            let p = random_point(&mut rng) * 1.5;
            let Ok((d, w)) = point_triangle_distance(&p, [&a, &b, &c]) else { continue };
            let oracle = barycentric_oracle(&p, &a, &b, &c);
            assert!((d - oracle).abs() < 1e-9, "{d} vs {oracle}");
            assert!(((p - w).norm() - d).abs() < 1e-12);
        }
    }

    #[test]
    fn point_triangle_matches_dense_sampling() {
        // 10^6 samples on a barycentric lattice bound the true minimum from
        // above; the lattice spacing bounds the gap from below.
        let mut rng = StdRng::seed_from_u64(11);
        let k = 1413usize; // ~10^6 lattice points
        for _ in 0..4 {
            let (a, b, c) = (random_point(&mut rng), random_point(&mut rng), random_point(&mut rng));
            let p = random_point(&mut rng) * 1.5;
            let Ok((d, _)) = point_triangle_distance(&p, [&a, &b, &c]) else { continue };
            let mut best = f64::INFINITY;
            for i in 0..=k {
                for j in 0..=(k - i) {
                    let (u, w) = (i as f64 / k as f64, j as f64 / k as f64);
                    let x = a + (b - a) * u + (c - a) * w;
                    best = best.min((p - x).norm());
                }
            }
            assert!(d <= best + 1e-12);
            assert!(best - d < 1e-3, "{d} vs sampled {best}");
        }
    }

    #[test]
    fn segment_segment_matches_grid() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut pts = || random_point(&mut rng);
        for _ in 0..10_000 {
            let (p0, p1, q0, q1) = (pts(), pts(), pts(), pts());
            let sp = segment_segment_distance(&p0, &p1, &q0, &q1);
            // 200x200 over the unit square, then 200x200 over the 4x4-cell
            // block around the best node (the distance is convex in (s, t))
            let grid = |s0: f64, t0: f64, span: f64| {
                let mut best = (f64::INFINITY, 0.0, 0.0);
                for i in 0..=200 {
                    let s = (s0 + span * i as f64 / 200.0).clamp(0.0, 1.0);
                    let x = p0 + (p1 - p0) * s;
                    for j in 0..=200 {
                        let t = (t0 + span * j as f64 / 200.0).clamp(0.0, 1.0);
                        let d = (x - (q0 + (q1 - q0) * t)).norm();
                        if d < best.0 {
                            best = (d, s, t);
                        }
                    }
                }
                best
            };
            let coarse = grid(0.0, 0.0, 1.0);
            let best = grid(coarse.1 - 0.01, coarse.2 - 0.01, 0.02).0.min(coarse.0);
            assert!(sp.distance <= best + 1e-12);
            assert!(best - sp.distance < 1e-3, "{} vs grid {best}", sp.distance);
            // symmetric
            let rev = segment_segment_distance(&q0, &q1, &p0, &p1);
            assert!((rev.distance - sp.distance).abs() < 1e-12);
        }
    }

    #[test]
    fn polygon_membership_basics() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(point_in_polygon([0.5, 0.5], &square));
        assert!(point_in_polygon([1.0, 0.5], &square));
        assert!(!point_in_polygon([2.5, 0.5], &square));
        assert!(!point_in_polygon([0.5, -1.0], &square));
    }
}
