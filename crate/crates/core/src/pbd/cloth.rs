use std::collections::BTreeMap;

use super::{Particle, SimError, SolveReport};
use crate::math::Vec3;

/// Edges shorter than this are treated as coincident endpoints and skipped.
const DEGENERATE_EDGE: f64 = 1e-12;

/// A distance constraint between two particles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceConstraint {
    pub i: usize,
    pub j: usize,
    pub rest: f64,
}

/// Compliances in m/N; zero is inextensible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClothCompliance {
    pub stretching: f64,
    pub bending: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClothObject {
    pub particles: Vec<Particle>,
    pub triangles: Vec<[usize; 3]>,
    pub stretch_edges: Vec<DistanceConstraint>,
    /// Opposite vertices of triangle pairs sharing an edge.
    pub bending_pairs: Vec<DistanceConstraint>,
    pub stretching_compliance: f64,
    pub bending_compliance: f64,
    stretch_lambda: Vec<f64>,
    bending_lambda: Vec<f64>,
}

impl ClothObject {
    /// Build a cloth from a triangle mesh; rest lengths come from `positions`.
    pub fn from_mesh(
        positions: &[Vec3],
        triangles: Vec<[usize; 3]>,
        particle_mass: f64,
        compliance: ClothCompliance,
    ) -> Result<Self, SimError> {
        if !(particle_mass > 0.0) {
            return Err(SimError::InvalidConfig("particle mass must be positive".into()));
        }
        if compliance.stretching < 0.0 || compliance.bending < 0.0 {
            return Err(SimError::InvalidConfig("compliance must be non-negative".into()));
        }
        let n = positions.len();
        for t in &triangles {
            if t.iter().any(|&v| v >= n) {
                return Err(SimError::InvalidConfig(format!("triangle {t:?} out of range")));
            }
        }
        let particles = positions
            .iter()
            .map(|&p| Particle::new(p, 1.0 / particle_mass))
            .collect::<Vec<_>>();

        // edge -> opposite vertices of the triangles that contain it
        let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b, opp) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push(opp);
            }
        }
        let dist = |i: usize, j: usize| (positions[i] - positions[j]).norm();
        let mut stretch_edges = Vec::with_capacity(edges.len());
        let mut bending_pairs = Vec::new();
        for (&(i, j), opposite) in &edges {
            let rest = dist(i, j);
            if !(rest > 0.0) {
                return Err(SimError::InvalidConfig(format!("edge ({i}, {j}) has zero rest length")));
            }
            stretch_edges.push(DistanceConstraint { i, j, rest });
            if let [a, b] = opposite[..] {
                bending_pairs.push(DistanceConstraint { i: a, j: b, rest: dist(a, b) });
            }
        }

        Ok(ClothObject {
            stretch_lambda: vec![0.0; stretch_edges.len()],
            bending_lambda: vec![0.0; bending_pairs.len()],
            particles,
            triangles,
            stretch_edges,
            bending_pairs,
            stretching_compliance: compliance.stretching,
            bending_compliance: compliance.bending,
        })
    }

    /// A rectangular `rows x cols` grid spanning `origin + s*u_extent + t*v_extent`,
    /// `s, t` in `[0, 1]`. Particle `r * cols + c` sits in row `r`, column `c`.
    /// Quads are split along alternating diagonals.
    pub fn grid(
        origin: Vec3,
        u_extent: Vec3,
        v_extent: Vec3,
        rows: usize,
        cols: usize,
        total_mass: f64,
        compliance: ClothCompliance,
    ) -> Result<Self, SimError> {
        if rows < 2 || cols < 2 {
            return Err(SimError::InvalidConfig("cloth grid needs at least 2x2 particles".into()));
        }
        let mut positions = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let s = c as f64 / (cols - 1) as f64;
                let t = r as f64 / (rows - 1) as f64;
                positions.push(origin + u_extent * s + v_extent * t);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let a = r * cols + c;
                let b = a + 1;
                let d = a + cols;
                let e = d + 1;
                if (r + c) % 2 == 0 {
                    triangles.push([a, b, e]);
                    triangles.push([a, e, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, e, d]);
                }
            }
        }
        Self::from_mesh(&positions, triangles, total_mass / (rows * cols) as f64, compliance)
    }

    /// A cloth made of loose particles with no constraints (useful for probes).
    pub fn from_particles(positions: &[Vec3], particle_mass: f64) -> Result<Self, SimError> {
        Self::from_mesh(
            positions,
            Vec::new(),
            particle_mass,
            ClothCompliance { stretching: 0.0, bending: 0.0 },
        )
    }

    pub(crate) fn reset_multipliers(&mut self) {
        self.stretch_lambda.iter_mut().for_each(|l| *l = 0.0);
        self.bending_lambda.iter_mut().for_each(|l| *l = 0.0);
    }

    /// Largest relative elongation over the stretch edges.
    pub fn max_strain(&self) -> f64 {
        self.stretch_edges
            .iter()
            .map(|e| {
                let len = (self.particles[e.i].position - self.particles[e.j].position).norm();
                (len - e.rest) / e.rest
            })
            .fold(0.0, f64::max)
    }
}

fn project_distance(
    particles: &mut [Particle],
    c: &DistanceConstraint,
    alpha_tilde: f64,
    lambda: &mut f64,
) -> bool {
    let (pi, pj) = (particles[c.i].position, particles[c.j].position);
    let d = pi - pj;
    let len = d.norm();
    if len < DEGENERATE_EDGE {
        return false;
    }
    let wi = particles[c.i].inverse_mass;
    let wj = particles[c.j].inverse_mass;
    let w = wi + wj;
    if w == 0.0 {
        return true;
    }
    let n = d / len;
    let err = len - c.rest;
    let dlambda = (-err - alpha_tilde * *lambda) / (w + alpha_tilde);
    *lambda += dlambda;
    particles[c.i].position += n * (wi * dlambda);
    particles[c.j].position -= n * (wj * dlambda);
    true
}

/// One Gauss-Seidel sweep over the stretch edges.
pub fn solve_stretch(cloth: &mut ClothObject, h: f64) -> SolveReport {
    let alpha_tilde = cloth.stretching_compliance / (h * h);
    let mut report = SolveReport::default();
    for (c, lambda) in cloth.stretch_edges.iter().zip(cloth.stretch_lambda.iter_mut()) {
        if !project_distance(&mut cloth.particles, c, alpha_tilde, lambda) {
            report.degenerate_edges += 1;
        }
    }
    if report.degenerate_edges > 0 {
        log::warn!("skipped {} degenerate stretch edges", report.degenerate_edges);
    }
    report
}

/// One Gauss-Seidel sweep over the bending pairs.
pub fn solve_bending(cloth: &mut ClothObject, h: f64) -> SolveReport {
    let alpha_tilde = cloth.bending_compliance / (h * h);
    let mut report = SolveReport::default();
    for (c, lambda) in cloth.bending_pairs.iter().zip(cloth.bending_lambda.iter_mut()) {
        if !project_distance(&mut cloth.particles, c, alpha_tilde, lambda) {
            report.degenerate_edges += 1;
        }
    }
    if report.degenerate_edges > 0 {
        log::warn!("skipped {} degenerate bending pairs", report.degenerate_edges);
    }
    report
}
