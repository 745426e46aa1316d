//! Shared vector types and small helpers.

use std::fmt;

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Quat = Quaternion<f64>;

/// Identifier of a holding agent (the leader or an assistant).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_owned())
    }
}

/// Cartesian axis, used to name perturbation directions and speed rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn unit(self) -> Vec3 {
        let mut v = Vec3::zeros();
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

pub(crate) fn is_finite3(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Rotate `v` by the unit quaternion `q`.
pub(crate) fn rotate(q: &Quat, v: &Vec3) -> Vec3 {
    // v' = v + 2w(u x v) + 2u x (u x v)
    let u = q.imag();
    let t = 2.0 * u.cross(v);
    v + q.w * t + u.cross(&t)
}

/// Rotate `v` by the inverse of the unit quaternion `q`.
pub(crate) fn rotate_inv(q: &Quat, v: &Vec3) -> Vec3 {
    rotate(&q.conjugate(), v)
}

/// `q += 0.5 * [w, 0] * q` followed by renormalisation.
pub(crate) fn integrate_rotation(q: &mut Quat, w: &Vec3) {
    let dq = Quat::from_imag(*w) * *q;
    *q += dq * 0.5;
    normalize_quat(q);
}

pub(crate) fn normalize_quat(q: &mut Quat) {
    let n = q.norm();
    if n > 0.0 {
        *q /= n;
    }
}
