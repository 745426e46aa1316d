//! Finite-difference collision Jacobians from persistently perturbed replicas.
//!
//! Besides the nominal world, every controlled agent owns three replica
//! worlds whose copy of that agent's grip is permanently displaced by `delta`
//! along x, y or z. All replicas receive the same commands as the nominal
//! world, so after settling they show how the object would sit if the agent
//! were slightly elsewhere. The forward difference of the minimum obstacle
//! distance across those worlds is the agent's Jacobian row.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{min_distance_to_obstacle, DistanceResult, GeometryError, ObjectGeometry, Obstacle};
use crate::math::{AgentId, Axis, Vec3};
use crate::pbd::{set_attachment_target, step, SimError, WorldState};

/// Below this norm a Jacobian row carries no usable direction.
pub const DEFAULT_EPSILON_J: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReplicaId {
    Nominal,
    Perturbed { agent: AgentId, axis: Axis },
}

impl std::fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReplicaId::Nominal => f.write_str("nominal"),
            ReplicaId::Perturbed { agent, axis } => write!(f, "{agent}+{axis}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplicaError {
    #[error("perturbation delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("agent `{0}` holds nothing in the world")]
    NotAttached(AgentId),
    #[error("replica {replica}: {source}")]
    Diverged { replica: ReplicaId, source: SimError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug)]
pub struct PerturbedReplica {
    pub agent: AgentId,
    pub axis: Axis,
    pub world: WorldState,
}

impl PerturbedReplica {
    pub fn id(&self) -> ReplicaId {
        ReplicaId::Perturbed { agent: self.agent.clone(), axis: self.axis }
    }
}

#[derive(Clone, Debug)]
pub struct ReplicaSet {
    pub nominal: WorldState,
    /// Ordered by agent, then x, y, z.
    pub perturbed: Vec<PerturbedReplica>,
    pub delta: f64,
    /// Step replicas on the rayon pool.
    pub parallel: bool,
    /// Copy the nominal state into every perturbed replica every this many
    /// ticks. `None` keeps replicas running independently forever.
    pub resync_interval: Option<usize>,
    /// Wall-clock seconds the nominal world took in the last step.
    pub last_nominal_step_time: f64,
    ticks: usize,
}

/// `J = ∂f/∂x` for one agent, with `valid = ‖J‖ ≥ ε_J`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianRow {
    pub j: Vec3,
    pub valid: bool,
}

impl JacobianRow {
    pub fn from_differences(nominal: f64, perturbed: [f64; 3], delta: f64, epsilon: f64) -> Self {
        let j = Vec3::new(
            (perturbed[0] - nominal) / delta,
            (perturbed[1] - nominal) / delta,
            (perturbed[2] - nominal) / delta,
        );
        let valid = j.iter().all(|v| v.is_finite()) && j.norm() >= epsilon;
        JacobianRow { j: if j.iter().all(|v| v.is_finite()) { j } else { Vec3::zeros() }, valid }
    }
}

/// Distances of every replica to every obstacle, measured once per tick.
#[derive(Clone, Debug)]
pub struct ReplicaDistances {
    /// `nominal[k]` is the distance to obstacle `k`.
    pub nominal: Vec<DistanceResult>,
    /// Same layout as [`ReplicaSet::perturbed`].
    pub perturbed: Vec<Vec<f64>>,
    agents: Vec<AgentId>,
    delta: f64,
}

impl ReplicaDistances {
    /// Nominal distance to the whole scene; lowest obstacle index wins ties.
    pub fn scene_minimum(&self) -> DistanceResult {
        let mut best = DistanceResult::infinite();
        for (k, r) in self.nominal.iter().enumerate() {
            if best.infinite || r.signed_distance() < best.signed_distance() {
                best = r.clone();
                best.obstacle_index = Some(k);
            }
        }
        best
    }

    fn agent_slot(&self, agent: &AgentId) -> Option<usize> {
        self.agents.iter().position(|a| a == agent)
    }

    /// Jacobian of the distance to obstacle `obstacle` with respect to the
    /// agent's grip position.
    pub fn obstacle_row(&self, agent: &AgentId, obstacle: usize, epsilon: f64) -> Option<JacobianRow> {
        let slot = self.agent_slot(agent)?;
        let f0 = self.nominal.get(obstacle)?.signed_distance();
        let f = [0, 1, 2].map(|a| self.perturbed[3 * slot + a][obstacle]);
        Some(JacobianRow::from_differences(f0, f, self.delta, epsilon))
    }

    /// Jacobian of the scene-wide minimum distance.
    pub fn scene_row(&self, agent: &AgentId, epsilon: f64) -> Option<JacobianRow> {
        let slot = self.agent_slot(agent)?;
        let min_of = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let f0 = self.scene_minimum().signed_distance();
        let f = [0, 1, 2].map(|a| min_of(&self.perturbed[3 * slot + a]));
        Some(JacobianRow::from_differences(f0, f, self.delta, epsilon))
    }
}

fn distances(world: &WorldState, scene: &[Obstacle]) -> Result<Vec<DistanceResult>, GeometryError> {
    let geom = ObjectGeometry::from_object(&world.object);
    scene.iter().map(|o| min_distance_to_obstacle(&geom, o)).collect()
}

impl ReplicaSet {
    /// Clone `world` into `3·agents.len()` perturbed replicas.
    pub fn new(world: WorldState, agents: &[AgentId], delta: f64) -> Result<Self, ReplicaError> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(ReplicaError::InvalidDelta(delta));
        }
        Self::build(world, agents, delta)
    }

    fn build(world: WorldState, agents: &[AgentId], delta: f64) -> Result<Self, ReplicaError> {
        let mut perturbed = Vec::with_capacity(3 * agents.len());
        for agent in agents {
            let target = world
                .attachment(agent)
                .ok_or_else(|| ReplicaError::NotAttached(agent.clone()))?
                .target_position;
            for axis in Axis::ALL {
                let mut w = world.clone();
                set_attachment_target(&mut w, agent, target + axis.unit() * delta)?;
                perturbed.push(PerturbedReplica { agent: agent.clone(), axis, world: w });
            }
        }
        Ok(ReplicaSet { nominal: world, perturbed, delta, parallel: true, resync_interval: None, last_nominal_step_time: 0.0, ticks: 0 })
    }

    pub fn len(&self) -> usize {
        1 + self.perturbed.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn agents(&self) -> Vec<AgentId> {
        self.perturbed.iter().step_by(3).map(|r| r.agent.clone()).collect()
    }

    /// Set an agent's grip target in every replica, keeping each perturbed
    /// replica's offset on its own agent.
    pub fn set_target(&mut self, agent: &AgentId, target: Vec3) -> Result<(), ReplicaError> {
        set_attachment_target(&mut self.nominal, agent, target)?;
        for r in &mut self.perturbed {
            let t = if &r.agent == agent { target + r.axis.unit() * self.delta } else { target };
            set_attachment_target(&mut r.world, agent, t)?;
        }
        Ok(())
    }

    pub fn target(&self, agent: &AgentId) -> Option<Vec3> {
        self.nominal.attachment(agent).map(|a| a.target_position)
    }

    /// Integrate velocity commands over `dt` into grip targets, then step.
    pub fn tick(&mut self, commands: &[(AgentId, Vec3)], dt: f64) -> Result<(), ReplicaError> {
        for (agent, u) in commands {
            let t = self.target(agent).ok_or_else(|| ReplicaError::NotAttached(agent.clone()))?;
            self.set_target(agent, t + u * dt)?;
        }
        self.step_all()
    }

    /// Step every replica once. Divergence names the first failing replica.
    pub fn step_all(&mut self) -> Result<(), ReplicaError> {
        let nominal = &mut self.nominal;
        let perturbed = &mut self.perturbed;
        let timed = |w: &mut WorldState| {
            let started = Instant::now();
            let r = step(w);
            (r, started.elapsed().as_secs_f64())
        };
        let ((r0, elapsed), rest): (_, Vec<Result<(), SimError>>) = if self.parallel {
            rayon::join(|| timed(nominal), || perturbed.par_iter_mut().map(|r| step(&mut r.world)).collect())
        } else {
            (timed(nominal), perturbed.iter_mut().map(|r| step(&mut r.world)).collect())
        };
        self.last_nominal_step_time = elapsed;
        r0.map_err(|source| ReplicaError::Diverged { replica: ReplicaId::Nominal, source })?;
        for (r, res) in self.perturbed.iter().zip(rest) {
            res.map_err(|source| ReplicaError::Diverged { replica: r.id(), source })?;
        }
        self.ticks += 1;
        if let Some(n) = self.resync_interval {
            if n > 0 && self.ticks.is_multiple_of(n) {
                self.resync()?;
            }
        }
        Ok(())
    }

    /// Overwrite every perturbed replica with the nominal state, keeping its
    /// offset target.
    pub fn resync(&mut self) -> Result<(), ReplicaError> {
        for r in &mut self.perturbed {
            let target = self
                .nominal
                .attachment(&r.agent)
                .ok_or_else(|| ReplicaError::NotAttached(r.agent.clone()))?
                .target_position;
            r.world = self.nominal.clone();
            set_attachment_target(&mut r.world, &r.agent, target + r.axis.unit() * self.delta)?;
        }
        Ok(())
    }

    /// Measure all replicas against the scene.
    pub fn evaluate(&self, scene: &[Obstacle]) -> Result<ReplicaDistances, ReplicaError> {
        let measure = |w: &WorldState| -> Result<Vec<f64>, GeometryError> {
            Ok(distances(w, scene)?.iter().map(DistanceResult::signed_distance).collect())
        };
        let (nominal, perturbed) = if self.parallel {
            let (n, p): (_, Result<Vec<_>, _>) = rayon::join(
                || distances(&self.nominal, scene),
                || self.perturbed.par_iter().map(|r| measure(&r.world)).collect(),
            );
            (n?, p?)
        } else {
            let p: Result<Vec<_>, _> = self.perturbed.iter().map(|r| measure(&r.world)).collect();
            (distances(&self.nominal, scene)?, p?)
        };
        Ok(ReplicaDistances { nominal, perturbed, agents: self.agents(), delta: self.delta })
    }

    /// Jacobian row of the scene-wide minimum distance for one agent.
    pub fn jacobian_row(&self, agent: &AgentId, scene: &[Obstacle]) -> Result<JacobianRow, ReplicaError> {
        self.evaluate(scene)?
            .scene_row(agent, DEFAULT_EPSILON_J)
            .ok_or_else(|| ReplicaError::NotAttached(agent.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PlanarObstacle, WorkingPlane};
    use crate::pbd::{ClothObject, DeformableObject, RodMaterial, RodObject, SubstepConfig};

    fn ground() -> Vec<Obstacle> {
        vec![Obstacle::Planar(
            PlanarObstacle::new(WorkingPlane::Yz, vec![[-5.0, -1.0], [5.0, -1.0], [5.0, 0.0], [-5.0, 0.0]]).unwrap(),
        )]
    }

    fn single_particle(height: f64) -> WorldState {
        let cloth = ClothObject::from_particles(&[Vec3::new(0.0, 0.0, height)], 0.1).unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), SubstepConfig { dt: 0.02, num_substeps: 10, num_steps: 1 }).unwrap();
        w.attach(AgentId::from("a"), 0).unwrap();
        w
    }

    fn hanging_rope() -> WorldState {
        let rod = RodObject::straight(Vec3::new(0.0, -0.5, 0.6), Vec3::y(), 1.0, 20, RodMaterial::default()).unwrap();
        let mut w = WorldState::new(DeformableObject::Rod(rod), SubstepConfig { dt: 0.02, num_substeps: 20, num_steps: 1 }).unwrap();
        w.damping_coefficient = 2.0;
        w.attach(AgentId::from("a"), 0).unwrap();
        w.attach(AgentId::from("b"), 19).unwrap();
        w
    }

    #[test]
    fn replica_count_is_three_per_agent_plus_one() {
        let w = hanging_rope();
        let set = ReplicaSet::new(w.clone(), &[AgentId::from("a"), AgentId::from("b")], 0.1).unwrap();
        assert_eq!(set.len(), 7);
        let set = ReplicaSet::new(w, &[AgentId::from("a")], 0.1).unwrap();
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn rejects_bad_delta_and_unknown_agent() {
        let w = single_particle(0.5);
        assert_eq!(ReplicaSet::new(w.clone(), &[AgentId::from("a")], 0.0).unwrap_err(), ReplicaError::InvalidDelta(0.0));
        assert_eq!(
            ReplicaSet::new(w, &[AgentId::from("zz")], 0.1).unwrap_err(),
            ReplicaError::NotAttached(AgentId::from("zz"))
        );
    }

    #[test]
    fn offsets_persist_through_retargeting() {
        let mut set = ReplicaSet::new(single_particle(0.5), &[AgentId::from("a")], 0.1).unwrap();
        let a = AgentId::from("a");
        set.tick(&[(a.clone(), Vec3::new(0.1, 0.0, 0.0))], 0.5).unwrap();
        let nominal = set.target(&a).unwrap();
        for r in &set.perturbed {
            let t = r.world.attachment(&a).unwrap().target_position;
            assert!((t - nominal - r.axis.unit() * 0.1).norm() < 1e-15);
        }
    }

    #[test]
    fn held_particle_over_ground_has_vertical_jacobian() {
        let mut set = ReplicaSet::new(single_particle(0.4), &[AgentId::from("a")], 0.1).unwrap();
        set.step_all().unwrap();
        let row = set.jacobian_row(&AgentId::from("a"), &ground()).unwrap();
        assert!(row.valid);
        assert!((row.j - Vec3::z()).amax() < 0.05, "{:?}", row.j);
    }

    #[test]
    fn pinned_object_point_gives_degenerate_row() {
        // the bottom edge is held by other agents, so a's grip at the top
        // cannot change the minimum distance
        let cloth = ClothObject::grid(
            Vec3::new(0.0, 0.0, 0.2),
            Vec3::new(0.4, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.8),
            2,
            2,
            0.4,
            crate::pbd::ClothCompliance { stretching: 0.0, bending: 1e-3 },
        )
        .unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), SubstepConfig { dt: 0.02, num_substeps: 10, num_steps: 1 }).unwrap();
        w.attach(AgentId::from("a"), 3).unwrap();
        w.attach(AgentId::from("b"), 0).unwrap();
        w.attach(AgentId::from("c"), 1).unwrap();
        let mut set = ReplicaSet::new(w, &[AgentId::from("a")], 0.1).unwrap();
        for _ in 0..5 {
            set.step_all().unwrap();
        }
        let row = set.jacobian_row(&AgentId::from("a"), &ground()).unwrap();
        assert!(row.j.norm() < DEFAULT_EPSILON_J, "{:?}", row.j);
        assert!(!row.valid);
    }

    #[test]
    fn vanishing_delta_reproduces_nominal_exactly() {
        let mut set = ReplicaSet::build(hanging_rope(), &[AgentId::from("a"), AgentId::from("b")], 0.0).unwrap();
        for k in 0..20 {
            let u = Vec3::new(0.0, 0.01 * (k as f64).sin(), -0.02);
            set.tick(&[(AgentId::from("a"), u), (AgentId::from("b"), -u)], 0.02).unwrap();
        }
        for r in &set.perturbed {
            assert_eq!(r.world.object, set.nominal.object);
        }
    }

    #[test]
    fn serial_and_parallel_stepping_agree() {
        let mut a = ReplicaSet::new(hanging_rope(), &[AgentId::from("a")], 0.1).unwrap();
        let mut b = a.clone();
        b.parallel = false;
        for _ in 0..10 {
            a.step_all().unwrap();
            b.step_all().unwrap();
        }
        assert_eq!(a.nominal.object, b.nominal.object);
        for (x, y) in a.perturbed.iter().zip(&b.perturbed) {
            assert_eq!(x.world.object, y.world.object);
        }
    }

    #[test]
    fn translation_leaves_jacobian_unchanged() {
        let offset = Vec3::new(0.0, 0.7, -0.3);
        let build = |shift: Vec3| {
            let mut w = single_particle(0.4);
            if let DeformableObject::Cloth(c) = &mut w.object {
                c.particles[0].position += shift;
                c.particles[0].previous_position += shift;
            }
            w.attachments[0].target_position += shift;
            let mut set = ReplicaSet::new(w, &[AgentId::from("a")], 0.1).unwrap();
            set.step_all().unwrap();
            set
        };
        let scene_at = |shift: Vec3| {
            let v = [[-5.0, -1.0], [5.0, -1.0], [5.0, 0.0], [-5.0, 0.0]].map(|[y, z]| [y + shift.y, z + shift.z]);
            vec![Obstacle::Planar(PlanarObstacle::new(WorkingPlane::Yz, v.to_vec()).unwrap())]
        };
        let j0 = build(Vec3::zeros()).jacobian_row(&AgentId::from("a"), &scene_at(Vec3::zeros())).unwrap();
        let j1 = build(offset).jacobian_row(&AgentId::from("a"), &scene_at(offset)).unwrap();
        assert!((j0.j - j1.j).norm() < 1e-9);
    }

    #[test]
    fn divergence_names_the_replica() {
        let mut set = ReplicaSet::new(single_particle(0.4), &[AgentId::from("a")], 0.1).unwrap();
        set.set_target(&AgentId::from("a"), Vec3::new(f64::NAN, 0.0, 0.0)).unwrap();
        let err = set.step_all().unwrap_err();
        assert!(matches!(err, ReplicaError::Diverged { replica: ReplicaId::Nominal, .. }), "{err}");
    }
}
