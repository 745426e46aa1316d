use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::controller::ControllerParams;
use crate::geometry::{MeshObstacle, Obstacle, PlanarObstacle, WorkingPlane};
use crate::math::{AgentId, Vec3};
use crate::pbd::{ClothCompliance, ClothObject, DeformableObject, RodMaterial, RodObject, SubstepConfig, WorldState};

/// Reserved identifier of the scripted (or remotely steered) leader.
pub const LEADER_ID: &str = "leader";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub object: ObjectConfig,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    pub agents: Vec<AgentConfig>,
    pub leader: LeaderConfig,
    #[serde(default)]
    pub controller: ControllerParams,
    #[serde(default)]
    pub sim: SimConfig,
    pub run: RunConfig,
    /// Directory that relative mesh paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectConfig {
    Rod(RodConfig),
    Cloth(ClothConfig),
}

fn default_direction() -> Vec3 {
    Vec3::y()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodConfig {
    pub length: f64,
    pub segment_count: usize,
    /// First endpoint of the straight initial rod.
    pub origin: Vec3,
    #[serde(default = "default_direction")]
    pub direction: Vec3,
    #[serde(default)]
    pub material: RodMaterial,
}

fn default_u_axis() -> Vec3 {
    Vec3::x()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClothConfig {
    /// Edge lengths along the u and v axes.
    pub size: [f64; 2],
    /// Particle rows (along v) and columns (along u).
    pub resolution: [usize; 2],
    pub origin: Vec3,
    #[serde(default = "default_u_axis")]
    pub u_axis: Vec3,
    #[serde(default = "default_direction")]
    pub v_axis: Vec3,
    /// Total mass in kg.
    pub mass: f64,
    #[serde(default)]
    pub stretching_compliance: f64,
    #[serde(default)]
    pub bending_compliance: f64,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObstacleConfig {
    Polygon {
        plane: WorkingPlane,
        vertices: Vec<[f64; 2]>,
    },
    /// Triangle mesh from a text file (`v`/`f` records) or inline arrays
    /// with 0-based face indices.
    Mesh {
        #[serde(default)]
        file: Option<PathBuf>,
        #[serde(default)]
        vertices: Vec<Vec3>,
        #[serde(default)]
        faces: Vec<[usize; 3]>,
        #[serde(default = "default_true")]
        convex: bool,
    },
    Box {
        min: Vec3,
        max: Vec3,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: AgentId,
    pub held_body_index: usize,
    /// Where the agent carries its body during settling; defaults to the
    /// body's initial location.
    #[serde(default)]
    pub initial_position: Option<Vec3>,
    /// Desired offset from the leader; defaults to the offset at t = 0.
    #[serde(default)]
    pub relative_pose: Option<Vec3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub position: Vec3,
    /// m/s along the straight line from the previous waypoint.
    pub speed: f64,
    /// Seconds spent at this waypoint after arriving.
    #[serde(default)]
    pub dwell: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderConfig {
    pub held_body_index: usize,
    #[serde(default)]
    pub initial_position: Option<Vec3>,
    #[serde(default)]
    pub waypoints: Vec<Waypoint>,
}

fn default_substeps() -> usize {
    20
}
fn default_one() -> usize {
    1
}
fn default_damping() -> f64 {
    1.0
}
fn default_gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -9.81)
}
fn default_settle() -> f64 {
    3.0
}
fn default_replica_settle() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_substeps")]
    pub num_substeps: usize,
    #[serde(default = "default_one")]
    pub num_steps: usize,
    #[serde(default = "default_one")]
    pub iterations: usize,
    /// Velocity damping coefficient, 1/s.
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_gravity")]
    pub gravity: Vec3,
    /// Seconds spent carrying the grips to their initial positions and
    /// letting the object come to rest before replicas are created.
    #[serde(default = "default_settle")]
    pub settle_time: f64,
    /// Seconds the perturbed replicas run before t = 0.
    #[serde(default = "default_replica_settle")]
    pub replica_settle_time: f64,
    #[serde(default)]
    pub resync_interval: Option<usize>,
    /// Tick length; must equal `1 / run.tick_rate` when given.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_substeps: default_substeps(),
            num_steps: 1,
            iterations: 1,
            damping: default_damping(),
            gravity: default_gravity(),
            settle_time: default_settle(),
            replica_settle_time: default_replica_settle(),
            resync_interval: None,
            dt: None,
            parallel: true,
        }
    }
}

fn default_tick_rate() -> f64 {
    50.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub duration: f64,
    #[serde(default = "default_tick_rate")]
    pub tick_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Uniform random offset (m, per axis) added to the assistants'
    /// initial positions.
    #[serde(default)]
    pub initial_jitter: f64,
}

fn finite3(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Parse { path: base_dir.display().to_string(), message: e.to_string() })?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# unable to echo configuration: {e}\n"))
    }

    pub fn tick_dt(&self) -> f64 {
        1.0 / self.run.tick_rate
    }

    pub fn tick_count(&self) -> usize {
        (self.run.duration * self.run.tick_rate).round() as usize
    }

    pub fn body_count(&self) -> usize {
        match &self.object {
            ObjectConfig::Rod(r) => r.segment_count,
            ObjectConfig::Cloth(c) => c.resolution[0] * c.resolution[1],
        }
    }

    pub fn leader_id(&self) -> AgentId {
        AgentId::from(LEADER_ID)
    }

    /// Every violated invariant.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let bodies = self.body_count();
        match &self.object {
            ObjectConfig::Rod(r) => {
                if r.segment_count == 0 {
                    out.push("object.segment_count must be at least 1".into());
                }
                if !(r.length > 0.0) {
                    out.push(format!("object.length must be positive, got {}", r.length));
                }
                if !(r.direction.norm() > 0.0) || !finite3(&r.direction) {
                    out.push("object.direction must be a non-zero vector".into());
                }
                if let Err(e) = r.material.validate() {
                    out.push(format!("object.material: {e}"));
                }
            }
            ObjectConfig::Cloth(c) => {
                if c.resolution.iter().any(|&n| n < 2) {
                    out.push(format!("object.resolution must be at least 2x2, got {:?}", c.resolution));
                }
                if c.size.iter().any(|&s| !(s > 0.0)) {
                    out.push(format!("object.size must be positive, got {:?}", c.size));
                }
                if !(c.mass > 0.0) {
                    out.push(format!("object.mass must be positive, got {}", c.mass));
                }
                if c.stretching_compliance < 0.0 || c.bending_compliance < 0.0 {
                    out.push("object compliances must be non-negative".into());
                }
                if c.u_axis.cross(&c.v_axis).norm() < 1e-9 {
                    out.push("object.u_axis and object.v_axis must not be parallel".into());
                }
            }
        }

        let mut held = BTreeSet::new();
        let mut ids = BTreeSet::new();
        let mut check_hold = |who: &str, index: usize, out: &mut Vec<String>| {
            if index >= bodies {
                out.push(format!("{who}: held_body_index {index} out of range ({bodies} bodies)"));
            }
            if !held.insert(index) {
                out.push(format!("{who}: held_body_index {index} is already held by another agent"));
            }
        };
        check_hold("leader", self.leader.held_body_index, &mut out);
        if self.agents.is_empty() {
            out.push("at least one assistant agent is required".into());
        }
        for a in &self.agents {
            if a.id.as_str() == LEADER_ID {
                out.push(format!("agent id `{LEADER_ID}` is reserved"));
            }
            if !ids.insert(a.id.clone()) {
                out.push(format!("duplicate agent id `{}`", a.id));
            }
            check_hold(&format!("agent `{}`", a.id), a.held_body_index, &mut out);
        }
        for (k, w) in self.leader.waypoints.iter().enumerate() {
            if !(w.speed > 0.0 && w.speed.is_finite()) {
                out.push(format!("leader.waypoints[{k}].speed must be positive, got {}", w.speed));
            }
            if !(w.dwell >= 0.0) {
                out.push(format!("leader.waypoints[{k}].dwell must be non-negative, got {}", w.dwell));
            }
            if !finite3(&w.position) {
                out.push(format!("leader.waypoints[{k}].position must be finite"));
            }
        }

        out.extend(self.controller.problems());
        ids.insert(self.leader_id());
        for p in &self.controller.pairs {
            for id in [&p.a, &p.b] {
                if !ids.contains(id) {
                    out.push(format!("pair ({}, {}) names unknown agent `{id}`", p.a, p.b));
                }
            }
        }

        let s = &self.sim;
        if s.num_substeps == 0 || s.num_steps == 0 || s.iterations == 0 {
            out.push("sim.num_substeps, sim.num_steps and sim.iterations must be at least 1".into());
        }
        if !(s.damping >= 0.0) {
            out.push(format!("sim.damping must be non-negative, got {}", s.damping));
        }
        if !(s.settle_time >= 0.0) || !(s.replica_settle_time >= 0.0) {
            out.push("sim settle times must be non-negative".into());
        }
        if !(self.run.duration > 0.0) {
            out.push(format!("run.duration must be positive, got {}", self.run.duration));
        }
        if !(self.run.tick_rate > 0.0 && self.run.tick_rate.is_finite()) {
            out.push(format!("run.tick_rate must be positive, got {}", self.run.tick_rate));
        } else if let Some(dt) = s.dt {
            if (dt * self.run.tick_rate - 1.0).abs() > 1e-9 {
                out.push(format!("sim.dt = {dt} disagrees with run.tick_rate = {} (dt must be 1/tick_rate)", self.run.tick_rate));
            }
        }
        if !(self.run.initial_jitter >= 0.0) {
            out.push("run.initial_jitter must be non-negative".into());
        }
        for (k, o) in self.obstacles.iter().enumerate() {
            if let Err(e) = self.build_obstacle(o) {
                out.push(format!("obstacles[{k}]: {e}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(problems))
        }
    }

    fn build_obstacle(&self, o: &ObstacleConfig) -> Result<Obstacle, ScenarioError> {
        Ok(match o {
            ObstacleConfig::Polygon { plane, vertices } => Obstacle::Planar(PlanarObstacle::new(*plane, vertices.clone())?),
            ObstacleConfig::Box { min, max } => Obstacle::Mesh(MeshObstacle::cuboid(*min, *max)?),
            ObstacleConfig::Mesh { file: Some(path), vertices, faces, convex } => {
                if !vertices.is_empty() || !faces.is_empty() {
                    return Err(ScenarioError::Invalid(vec!["give either a mesh file or inline data, not both".into()]));
                }
                Obstacle::Mesh(MeshObstacle::load(&self.base_dir.join(path), *convex)?)
            }
            ObstacleConfig::Mesh { file: None, vertices, faces, convex } => {
                Obstacle::Mesh(MeshObstacle::new(vertices.clone(), faces.clone(), *convex)?)
            }
        })
    }

    pub fn build_obstacles(&self) -> Result<Vec<Obstacle>, ScenarioError> {
        self.obstacles.iter().map(|o| self.build_obstacle(o)).collect()
    }

    /// The object in its initial configuration with leader and assistants
    /// attached, targets at the current body positions.
    pub fn build_world(&self) -> Result<WorldState, ScenarioError> {
        let object = match &self.object {
            ObjectConfig::Rod(r) => {
                DeformableObject::Rod(RodObject::straight(r.origin, r.direction, r.length, r.segment_count, r.material)?)
            }
            ObjectConfig::Cloth(c) => {
                let [rows, cols] = c.resolution;
                DeformableObject::Cloth(ClothObject::grid(
                    c.origin,
                    c.u_axis.normalize() * c.size[0],
                    c.v_axis.normalize() * c.size[1],
                    rows,
                    cols,
                    c.mass,
                    ClothCompliance { stretching: c.stretching_compliance, bending: c.bending_compliance },
                )?)
            }
        };
        let substeps = SubstepConfig {
            dt: self.tick_dt() / self.sim.num_steps as f64,
            num_substeps: self.sim.num_substeps,
            num_steps: self.sim.num_steps,
        };
        let mut world = WorldState::new(object, substeps)?;
        world.gravity = self.sim.gravity;
        world.damping_coefficient = self.sim.damping;
        world.solver_iterations = self.sim.iterations;
        world.attach(self.leader_id(), self.leader.held_body_index)?;
        for a in &self.agents {
            world.attach(a.id.clone(), a.held_body_index)?;
        }
        Ok(world)
    }
}
