//! Exact solver for the three-variable safety QP.
//!
//! minimise ½‖Γ(u − u_nom)‖²  subject to  a_k·u ≥ b_k  and  ‖u‖∞ ≤ u_max.
//!
//! With `z = Γu` the objective becomes a Euclidean projection of `z_nom`
//! onto a polyhedron. Every KKT point of that projection has at most three
//! linearly independent active rows, so enumerating active sets of size ≤ 3
//! and keeping the feasible candidate with non-negative multipliers finds the
//! exact optimum.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{ConstraintRow, RowLabel};
use crate::math::{Axis, Vec3};

/// Primal feasibility tolerance for an `optimal` answer.
const FEASIBILITY_TOL: f64 = 1e-10;
/// Relaxed tolerance for the `degenerate` fallback.
const RELAXED_TOL: f64 = 1e-7;
const MULTIPLIER_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QpStatus {
    Optimal,
    /// A solution was found only after relaxing the feasibility tolerance
    /// (nearly dependent or nearly contradictory rows).
    Degenerate,
    /// No point satisfies every row; `u` is zero.
    Infeasible,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Degenerate => "degenerate",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpResult {
    pub u: Vec3,
    pub status: QpStatus,
    pub active_labels: Vec<RowLabel>,
    /// `(row index, μ)` for the active rows. Indices past the caller's rows
    /// refer to the six speed rows in +x, −x, +y, −y, +z, −z order.
    pub multipliers: Vec<(usize, f64)>,
    /// Wall-clock seconds.
    pub solve_time: f64,
}

/// The six rows of `‖u‖∞ ≤ u_max`.
pub fn speed_rows(u_max: f64) -> Vec<ConstraintRow> {
    let mut rows = Vec::with_capacity(6);
    for axis in Axis::ALL {
        for positive in [true, false] {
            // u_k ≤ u_max  ⇔  −u_k ≥ −u_max
            let sign = if positive { -1.0 } else { 1.0 };
            rows.push(ConstraintRow { a: axis.unit() * sign, b: -u_max, label: RowLabel::Speed { axis, positive } });
        }
    }
    rows
}

struct Candidate {
    z: Vector3<f64>,
    objective: f64,
    active: Vec<(usize, f64)>,
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    let singles = (0..n).map(|i| vec![i]);
    let pairs = (0..n).flat_map(move |i| (i + 1..n).map(move |j| vec![i, j]));
    let triples = (0..n).flat_map(move |i| (i + 1..n).flat_map(move |j| (j + 1..n).map(move |k| vec![i, j, k])));
    singles.chain(pairs).chain(triples)
}

/// Solve `G μ = r` for the Gram matrix of the chosen rows; `None` when the
/// rows are (nearly) dependent.
fn solve_active(a: &[Vector3<f64>], r: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut g = Matrix3::<f64>::identity();
    let mut rhs = Vector3::<f64>::zeros();
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = a[i].dot(&a[j]);
        }
        rhs[i] = r[i];
    }
    let scale = (0..n).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let det = match n {
        1 => g[(0, 0)],
        2 => g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)],
        _ => g.determinant(),
    };
    if !(det.abs() > 1e-12 * scale.powi(n as i32)) {
        return None;
    }
    let mu = match n {
        1 => vec![rhs[0] / g[(0, 0)]],
        2 => {
            let m = g.fixed_view::<2, 2>(0, 0).into_owned();
            let s = m.lu().solve(&rhs.fixed_rows::<2>(0).into_owned())?;
            vec![s[0], s[1]]
        }
        _ => {
            let s = g.lu().solve(&rhs)?;
            vec![s[0], s[1], s[2]]
        }
    };
    Some(mu)
}

fn search(z_nom: &Vector3<f64>, a: &[Vector3<f64>], b: &[f64], tol: f64) -> Option<Candidate> {
    let violation = |z: &Vector3<f64>| {
        a.iter().zip(b).map(|(ak, bk)| (bk - ak.dot(z)) / ak.norm().max(1e-300)).fold(f64::NEG_INFINITY, f64::max)
    };
    if violation(z_nom) <= tol {
        return Some(Candidate { z: *z_nom, objective: 0.0, active: Vec::new() });
    }
    let mut best: Option<Candidate> = None;
    for set in subsets(a.len()) {
        let rows: Vec<Vector3<f64>> = set.iter().map(|&i| a[i]).collect();
        let r: Vec<f64> = set.iter().map(|&i| b[i] - a[i].dot(z_nom)).collect();
        let Some(mu) = solve_active(&rows, &r) else { continue };
        if mu.iter().any(|&m| m < -MULTIPLIER_TOL) {
            continue;
        }
        let mut z = *z_nom;
        for (row, m) in rows.iter().zip(&mu) {
            z += row * *m;
        }
        if violation(&z) > tol {
            continue;
        }
        let objective = 0.5 * (z - z_nom).norm_squared();
        if best.as_ref().is_none_or(|c| objective < c.objective) {
            best = Some(Candidate { z, objective, active: set.into_iter().zip(mu).collect() });
        }
    }
    best
}

/// Closest input to `u_nom` (in the Γ-weighted norm) satisfying every row
/// and the speed bound.
pub fn solve_qp(u_nom: &Vec3, gamma: &Vec3, rows: &[ConstraintRow], u_max: f64) -> QpResult {
    let started = Instant::now();
    let mut all: Vec<ConstraintRow> = rows.to_vec();
    all.extend(speed_rows(u_max));

    // rows with a = 0 are either vacuous or contradictory
    let mut kept = Vec::with_capacity(all.len());
    let mut contradictory = false;
    for (k, row) in all.iter().enumerate() {
        if row.a.norm() == 0.0 {
            contradictory |= row.b > 0.0;
        } else {
            kept.push(k);
        }
    }

    let a: Vec<Vector3<f64>> = kept.iter().map(|&k| all[k].a.component_div(gamma)).collect();
    let b: Vec<f64> = kept.iter().map(|&k| all[k].b).collect();
    let z_nom = u_nom.component_mul(gamma);

    let found = if contradictory || !u_nom.iter().chain(gamma.iter()).all(|v| v.is_finite()) {
        None
    } else {
        search(&z_nom, &a, &b, FEASIBILITY_TOL)
            .map(|c| (c, QpStatus::Optimal))
            .or_else(|| search(&z_nom, &a, &b, RELAXED_TOL).map(|c| (c, QpStatus::Degenerate)))
    };

    let (u, status, multipliers) = match found {
        Some((c, status)) => {
            // an interior optimum returns u_nom bit-for-bit
            let u = if c.active.is_empty() { *u_nom } else { c.z.component_div(gamma) };
            let multipliers: Vec<(usize, f64)> = c.active.iter().map(|&(i, m)| (kept[i], m)).collect();
            (u, status, multipliers)
        }
        None => (Vec3::zeros(), QpStatus::Infeasible, Vec::new()),
    };
    let active_labels = multipliers.iter().filter(|(_, m)| *m > 0.0).map(|&(k, _)| all[k].label.clone()).collect();
    QpResult { u, status, active_labels, multipliers, solve_time: started.elapsed().as_secs_f64() }
}
