use std::f64::consts::PI;

use nalgebra::{Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{RigidSegment, SimError, SolveReport};
use crate::math::{is_finite3, normalize_quat, rotate, rotate_inv, Quat, Vec3};

/// Rod material. Moduli in Pa; radius in m; linear density in kg/m.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RodMaterial {
    pub youngs_modulus: f64,
    pub torsion_modulus: f64,
    /// Fraction of the joint gap closed per projection, in `(0, 1]`.
    pub zero_stretch_stiffness: f64,
    pub radius: f64,
    pub linear_density: f64,
}

impl Default for RodMaterial {
    fn default() -> Self {
        RodMaterial {
            youngs_modulus: 1e6,
            torsion_modulus: 1e6,
            zero_stretch_stiffness: 1.0,
            radius: 0.005,
            linear_density: 1.0,
        }
    }
}

impl RodMaterial {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if !(self.youngs_modulus >= 0.0) || !(self.torsion_modulus >= 0.0) {
            return bad("rod moduli must be non-negative");
        }
        if !(self.zero_stretch_stiffness > 0.0 && self.zero_stretch_stiffness <= 1.0) {
            return bad("zero_stretch_stiffness must lie in (0, 1]");
        }
        if !(self.radius > 0.0) || !(self.linear_density > 0.0) {
            return bad("rod radius and linear density must be positive");
        }
        Ok(())
    }

    /// Bending and torsion compliance (rad / (N m)) of one joint between
    /// segments of length `l`. Zero modulus means no resistance.
    fn joint_compliance(&self, l: f64) -> (f64, f64) {
        let r4 = self.radius.powi(4);
        let area_moment = PI * r4 / 4.0;
        let polar_moment = PI * r4 / 2.0;
        let c = |k: f64| if k > 0.0 { l / k } else { f64::INFINITY };
        (c(self.youngs_modulus * area_moment), c(self.torsion_modulus * polar_moment))
    }
}

/// Joint between consecutive segments with its rest relative rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SbtConstraint {
    pub first: usize,
    pub second: usize,
    pub rest_darboux: Quat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RodObject {
    pub segments: Vec<RigidSegment>,
    pub sbt_constraints: Vec<SbtConstraint>,
    pub material: RodMaterial,
    bend_compliance: f64,
    twist_compliance: f64,
    lambdas: Vec<[f64; 4]>,
}

impl RodObject {
    /// A straight rod of `length` starting at `start` and running along
    /// `direction`, discretised into `segment_count` equal segments.
    pub fn straight(
        start: Vec3,
        direction: Vec3,
        length: f64,
        segment_count: usize,
        material: RodMaterial,
    ) -> Result<Self, SimError> {
        if segment_count == 0 {
            return Err(SimError::InvalidConfig("rod needs at least one segment".into()));
        }
        if !(length > 0.0) {
            return Err(SimError::InvalidConfig("rod length must be positive".into()));
        }
        let dir_norm = direction.norm();
        if !(dir_norm > 0.0) || !is_finite3(&direction) {
            return Err(SimError::InvalidConfig("rod direction must be non-zero".into()));
        }
        material.validate()?;
        let dir = direction / dir_norm;
        let seg_len = length / segment_count as f64;
        let q = UnitQuaternion::rotation_between(&Vec3::z(), &dir)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vec3::x()), PI))
            .into_inner();

        let mass = material.linear_density * seg_len;
        let r2 = material.radius * material.radius;
        let transverse = mass * (3.0 * r2 + seg_len * seg_len) / 12.0;
        let axial = mass * r2 / 2.0;
        let inverse_inertia = Vec3::new(1.0 / transverse, 1.0 / transverse, 1.0 / axial);

        let segments = (0..segment_count)
            .map(|k| {
                let position = start + dir * (seg_len * (k as f64 + 0.5));
                RigidSegment {
                    position,
                    orientation: q,
                    previous_position: position,
                    previous_orientation: q,
                    velocity: Vec3::zeros(),
                    angular_velocity: Vec3::zeros(),
                    inverse_mass: 1.0 / mass,
                    inverse_inertia,
                    rest_length: seg_len,
                }
            })
            .collect::<Vec<_>>();
        let sbt_constraints = (0..segment_count - 1)
            .map(|k| SbtConstraint { first: k, second: k + 1, rest_darboux: Quat::identity() })
            .collect::<Vec<_>>();
        let (bend_compliance, twist_compliance) = material.joint_compliance(seg_len);
        Ok(RodObject {
            lambdas: vec![[0.0; 4]; sbt_constraints.len()],
            segments,
            sbt_constraints,
            material,
            bend_compliance,
            twist_compliance,
        })
    }

    /// Take the current configuration as the rest shape of every joint.
    pub fn capture_rest_shape(&mut self) {
        for c in &mut self.sbt_constraints {
            let mut d = self.segments[c.first].orientation.conjugate() * self.segments[c.second].orientation;
            if d.w < 0.0 {
                d = -d;
            }
            normalize_quat(&mut d);
            c.rest_darboux = d;
        }
    }

    pub(crate) fn reset_multipliers(&mut self) {
        self.lambdas.iter_mut().for_each(|l| *l = [0.0; 4]);
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.rest_length).sum()
    }

    /// World-space endpoint of segment `k` at `sign = +1` (tip) or `-1` (tail).
    pub fn segment_end(&self, k: usize, sign: f64) -> Vec3 {
        let s = &self.segments[k];
        s.position + rotate(&s.orientation, &Vec3::new(0.0, 0.0, sign * 0.5 * s.rest_length))
    }

    /// Centerline polyline: tail of the first segment, joint midpoints, tip of
    /// the last segment.
    pub fn polyline(&self) -> Vec<Vec3> {
        let n = self.segments.len();
        let mut pts = Vec::with_capacity(n + 1);
        pts.push(self.segment_end(0, -1.0));
        for k in 0..n - 1 {
            pts.push((self.segment_end(k, 1.0) + self.segment_end(k + 1, -1.0)) * 0.5);
        }
        pts.push(self.segment_end(n - 1, 1.0));
        pts
    }

    /// Sum over joints of the distance between the adjoining segment ends.
    pub fn total_joint_gap(&self) -> f64 {
        self.sbt_constraints
            .iter()
            .map(|c| (self.segment_end(c.first, 1.0) - self.segment_end(c.second, -1.0)).norm())
            .sum()
    }

    /// Relative rotation angle (rad) of joint `k` away from its rest shape.
    pub fn joint_angle_error(&self, k: usize) -> f64 {
        let c = &self.sbt_constraints[k];
        let omega = self.segments[c.first].orientation.conjugate() * self.segments[c.second].orientation;
        let e = c.rest_darboux.conjugate() * omega;
        2.0 * e.imag().norm().atan2(e.w.abs())
    }
}

fn inverse_inertia_world(s: &RigidSegment, v: &Vec3) -> Vec3 {
    let local = rotate_inv(&s.orientation, v);
    rotate(&s.orientation, &s.inverse_inertia.component_mul(&local))
}

fn apply_rotation(s: &mut RigidSegment, dw: &Vec3) {
    let dq = Quat::from_imag(*dw) * s.orientation;
    s.orientation += dq * 0.5;
    normalize_quat(&mut s.orientation);
}

fn pair_mut(segments: &mut [RigidSegment], a: usize, b: usize) -> (&mut RigidSegment, &mut RigidSegment) {
    assert!(a < b);
    let (lo, hi) = segments.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// One Gauss-Seidel sweep of the zero-stretch, bend and twist projections.
pub fn solve_sbt(rod: &mut RodObject, h: f64) -> SolveReport {
    let mut report = SolveReport::default();
    let h2 = h * h;
    let stiffness = rod.material.zero_stretch_stiffness;
    let bend_tilde = rod.bend_compliance / h2;
    let twist_tilde = rod.twist_compliance / h2;

    for s in rod.segments.iter_mut() {
        let n = s.orientation.norm();
        if (n - 1.0).abs() > 1e-9 && n.is_finite() && n > 0.0 {
            log::warn!("renormalising rod segment orientation (|q| = {n})");
            s.orientation /= n;
            report.renormalized_quaternions += 1;
        }
    }

    for (c, lambda) in rod.sbt_constraints.iter().zip(rod.lambdas.iter_mut()) {
        let (sa, sb) = pair_mut(&mut rod.segments, c.first, c.second);

        // zero-stretch: the tip of `a` meets the tail of `b`
        let ra = rotate(&sa.orientation, &Vec3::new(0.0, 0.0, 0.5 * sa.rest_length));
        let rb = rotate(&sb.orientation, &Vec3::new(0.0, 0.0, -0.5 * sb.rest_length));
        let gap = (sa.position + ra) - (sb.position + rb);
        let len = gap.norm();
        if len > 1e-15 {
            let n = gap / len;
            let ca = ra.cross(&n);
            let cb = rb.cross(&n);
            let w = sa.inverse_mass
                + sb.inverse_mass
                + ca.dot(&inverse_inertia_world(sa, &ca))
                + cb.dot(&inverse_inertia_world(sb, &cb));
            if w > 0.0 {
                let dlambda = -len / w * stiffness;
                lambda[0] += dlambda;
                let p = n * dlambda;
                sa.position += p * sa.inverse_mass;
                sb.position -= p * sb.inverse_mass;
                let dwa = inverse_inertia_world(sa, &ra.cross(&p));
                let dwb = inverse_inertia_world(sb, &rb.cross(&p));
                apply_rotation(sa, &dwa);
                apply_rotation(sb, &(-dwb));
            }
        }

        // bend and twist: drive q_a^-1 q_b toward the rest Darboux rotation
        let target = sa.orientation * c.rest_darboux;
        let mut delta = target * sb.orientation.conjugate();
        if delta.w < 0.0 {
            delta = -delta;
        }
        let v = delta.imag();
        let vn = v.norm();
        if vn < 1e-15 {
            continue;
        }
        let theta_world = v * (2.0 * vn.atan2(delta.w) / vn);
        let theta_local = rotate_inv(&sa.orientation, &theta_world);
        for k in 0..3 {
            let alpha_tilde = if k < 2 { bend_tilde } else { twist_tilde };
            if alpha_tilde.is_infinite() {
                continue;
            }
            let mut axis = Vec3::zeros();
            axis[k] = 1.0;
            let n = rotate(&sa.orientation, &axis);
            let w = n.dot(&inverse_inertia_world(sa, &n)) + n.dot(&inverse_inertia_world(sb, &n));
            if !(w > 0.0) {
                continue;
            }
            let err = theta_local[k];
            let dlambda = (err - alpha_tilde * lambda[k + 1]) / (w + alpha_tilde);
            lambda[k + 1] += dlambda;
            let p = n * dlambda;
            let dwa = inverse_inertia_world(sa, &p);
            let dwb = inverse_inertia_world(sb, &p);
            apply_rotation(sa, &(-dwa));
            apply_rotation(sb, &dwb);
        }
    }
    report
}
