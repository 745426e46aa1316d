//! Extended position-based dynamics with small substeps.
//!
//! Two object kinds are supported:
//!
//! * [`RodObject`]: a chain of rigid segments joined by a combined
//!   zero-stretch / bend-twist constraint, solved with Gauss-Seidel sweeps.
//! * [`ClothObject`]: point-mass particles on a triangle mesh with stretch
//!   constraints on mesh edges and distance-based bending constraints across
//!   adjacent triangles.
//!
//! A [`WorldState`] owns one object, gravity, damping and the kinematic
//! [`Attachment`]s through which agents hold the object.

mod cloth;
mod rod;
mod world;

use thiserror::Error;

use crate::math::{AgentId, Quat, Vec3};

pub use cloth::{solve_bending, solve_stretch, ClothCompliance, ClothObject, DistanceConstraint};
pub use rod::{solve_sbt, RodMaterial, RodObject, SbtConstraint};
pub use world::{apply_damping, clone_world, set_attachment_target, step, SubstepConfig, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("integration diverged: non-finite state at body {body}")]
    Diverged { body: usize },
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("agent `{0}` already holds a body")]
    AgentAlreadyAttached(AgentId),
    #[error("body {0} is already held by another agent")]
    BodyAlreadyHeld(usize),
    #[error("body index {index} out of range ({count} bodies)")]
    BodyOutOfRange { index: usize, count: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// A point mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub position: Vec3,
    pub previous_position: Vec3,
    pub velocity: Vec3,
    /// Zero marks a kinematically driven (held or pinned) particle.
    pub inverse_mass: f64,
}

impl Particle {
    pub fn new(position: Vec3, inverse_mass: f64) -> Self {
        Particle {
            position,
            previous_position: position,
            velocity: Vec3::zeros(),
            inverse_mass,
        }
    }
}

/// A rigid rod segment. Its third body axis runs along the rod.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidSegment {
    pub position: Vec3,
    pub orientation: Quat,
    pub previous_position: Vec3,
    pub previous_orientation: Quat,
    pub velocity: Vec3,
    /// World frame.
    pub angular_velocity: Vec3,
    pub inverse_mass: f64,
    /// Body-frame diagonal.
    pub inverse_inertia: Vec3,
    pub rest_length: f64,
}

/// An agent's grip on one body of the object.
#[derive(Clone, Debug, PartialEq)]
pub struct Attachment {
    pub agent_id: AgentId,
    pub body_index: usize,
    pub target_position: Vec3,
    /// Inverse mass the body had before it was grabbed.
    pub(crate) released_inverse_mass: f64,
}

/// The simulated object.
#[derive(Clone, Debug, PartialEq)]
pub enum DeformableObject {
    Rod(RodObject),
    Cloth(ClothObject),
}

impl DeformableObject {
    pub fn body_count(&self) -> usize {
        match self {
            DeformableObject::Rod(r) => r.segments.len(),
            DeformableObject::Cloth(c) => c.particles.len(),
        }
    }

    pub fn body_position(&self, index: usize) -> Option<Vec3> {
        match self {
            DeformableObject::Rod(r) => r.segments.get(index).map(|s| s.position),
            DeformableObject::Cloth(c) => c.particles.get(index).map(|p| p.position),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DeformableObject::Rod(_) => "rod",
            DeformableObject::Cloth(_) => "cloth",
        }
    }
}

/// Counters for conditions the solver recovers from without failing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveReport {
    pub degenerate_edges: usize,
    pub renormalized_quaternions: usize,
}

impl std::ops::AddAssign for SolveReport {
    fn add_assign(&mut self, rhs: Self) {
        self.degenerate_edges += rhs.degenerate_edges;
        self.renormalized_quaternions += rhs.renormalized_quaternions;
    }
}
