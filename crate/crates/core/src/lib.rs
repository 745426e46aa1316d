//! Real-time simulation and safety control for multi-agent manipulation of
//! deformable objects.
//!
//! The crate is organised around one control loop:
//!
//! 1. [`pbd`] steps rods (rigid segments joined by stretch-bend-twist
//!    constraints) and cloth (particles with stretch and bending distance
//!    constraints) with small substeps.
//! 2. [`geometry`] measures the minimum distance between the object and
//!    static obstacles.
//! 3. [`jacobian`] keeps a nominal world plus three persistently perturbed
//!    copies per agent and turns their distance differences into a collision
//!    Jacobian row.
//! 4. [`controller`] filters each agent's leader-following command through a
//!    small quadratic program built from control barrier function rows.
//! 5. [`scenario`] wires everything into a deterministic closed loop driven by
//!    declarative scenario files, and [`bridge`] exposes a running session over
//!    a WebSocket.
//!
//! The guide under `book/` walks through each stage; its code blocks are
//! compiled as doc-tests of this crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod controller;
pub mod geometry;
pub mod jacobian;
pub mod math;
pub mod pbd;
pub mod scenario;

pub use controller::{
    solve_qp, ConstraintRow, ControllerParams, PiecewiseLinearAlpha, QpResult, QpStatus,
    RowLabel, SafetyController,
};
pub use geometry::{min_distance_to_scene, DistanceResult, MeshObstacle, Obstacle, PlanarObstacle};
pub use jacobian::{JacobianRow, ReplicaSet};
pub use math::{AgentId, Vec3};
pub use pbd::{ClothObject, DeformableObject, RodObject, SimError, WorldState};
pub use scenario::{load_scenario, run, Metrics, ScenarioConfig, TickLog};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub struct Simulation;
    #[doc = include_str!("../../../book/src/distance.md")]
    pub struct Distance;
    #[doc = include_str!("../../../book/src/jacobian.md")]
    pub struct Jacobian;
    #[doc = include_str!("../../../book/src/controller.md")]
    pub struct Controller;
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub struct Scenarios;
    #[doc = include_str!("../../../book/src/bridge.md")]
    pub struct Bridge;
}
