use super::{
    cloth::{solve_bending, solve_stretch},
    rod::solve_sbt,
    Attachment, DeformableObject, SimError, SolveReport,
};
use crate::math::{integrate_rotation, is_finite3, rotate, rotate_inv, AgentId, Vec3};

/// Time discretisation of one simulation tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubstepConfig {
    /// Step length in seconds.
    pub dt: f64,
    pub num_substeps: usize,
    pub num_steps: usize,
}

impl SubstepConfig {
    pub fn substep(&self) -> f64 {
        self.dt / self.num_substeps as f64
    }

    /// Simulated time covered by one call to [`step`].
    pub fn tick_duration(&self) -> f64 {
        self.dt * self.num_steps as f64
    }
}

/// Full simulation state. Cloning yields an independent replica that evolves
/// bit-identically under identical inputs.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub object: DeformableObject,
    pub attachments: Vec<Attachment>,
    pub gravity: Vec3,
    /// 1/s.
    pub damping_coefficient: f64,
    pub substeps: SubstepConfig,
    pub solver_iterations: usize,
    /// Accumulated recoverable solver conditions.
    pub diagnostics: SolveReport,
}

impl WorldState {
    pub fn new(object: DeformableObject, substeps: SubstepConfig) -> Result<Self, SimError> {
        let world = WorldState {
            object,
            attachments: Vec::new(),
            gravity: Vec3::new(0.0, 0.0, -9.81),
            damping_coefficient: 0.0,
            substeps,
            solver_iterations: 1,
            diagnostics: SolveReport::default(),
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let s = &self.substeps;
        if !(s.dt > 0.0) || !s.dt.is_finite() || s.num_substeps == 0 || s.num_steps == 0 {
            return Err(SimError::InvalidConfig(
                "need dt > 0, num_substeps >= 1 and num_steps >= 1".into(),
            ));
        }
        if self.solver_iterations == 0 {
            return Err(SimError::InvalidConfig("solver_iterations must be >= 1".into()));
        }
        if !(self.damping_coefficient >= 0.0) {
            return Err(SimError::InvalidConfig("damping must be non-negative".into()));
        }
        Ok(())
    }

    pub fn body_count(&self) -> usize {
        self.object.body_count()
    }

    pub fn body_position(&self, index: usize) -> Option<Vec3> {
        self.object.body_position(index)
    }

    fn inverse_mass_mut(&mut self, index: usize) -> &mut f64 {
        match &mut self.object {
            DeformableObject::Rod(r) => &mut r.segments[index].inverse_mass,
            DeformableObject::Cloth(c) => &mut c.particles[index].inverse_mass,
        }
    }

    fn check_index(&self, index: usize) -> Result<(), SimError> {
        let count = self.body_count();
        if index >= count {
            return Err(SimError::BodyOutOfRange { index, count });
        }
        Ok(())
    }

    /// Let `agent_id` hold body `body_index`. The body becomes kinematic and
    /// its target starts at its current position.
    pub fn attach(&mut self, agent_id: AgentId, body_index: usize) -> Result<(), SimError> {
        self.check_index(body_index)?;
        if self.attachments.iter().any(|a| a.agent_id == agent_id) {
            return Err(SimError::AgentAlreadyAttached(agent_id));
        }
        if self.attachments.iter().any(|a| a.body_index == body_index) {
            return Err(SimError::BodyAlreadyHeld(body_index));
        }
        let target_position = self.body_position(body_index).expect("index checked");
        let im = self.inverse_mass_mut(body_index);
        let released_inverse_mass = *im;
        *im = 0.0;
        self.attachments.push(Attachment { agent_id, body_index, target_position, released_inverse_mass });
        Ok(())
    }

    /// Release an agent's grip, restoring the body's mass.
    pub fn detach(&mut self, agent_id: &AgentId) -> Result<(), SimError> {
        let k = self
            .attachments
            .iter()
            .position(|a| &a.agent_id == agent_id)
            .ok_or_else(|| SimError::UnknownAgent(agent_id.clone()))?;
        let a = self.attachments.remove(k);
        *self.inverse_mass_mut(a.body_index) = a.released_inverse_mass;
        Ok(())
    }

    /// Make a body immovable without assigning it to an agent.
    pub fn pin(&mut self, body_index: usize) -> Result<(), SimError> {
        self.check_index(body_index)?;
        *self.inverse_mass_mut(body_index) = 0.0;
        Ok(())
    }

    pub fn attachment(&self, agent_id: &AgentId) -> Option<&Attachment> {
        self.attachments.iter().find(|a| &a.agent_id == agent_id)
    }

    /// Current position of the body an agent holds.
    pub fn agent_position(&self, agent_id: &AgentId) -> Option<Vec3> {
        self.attachment(agent_id).and_then(|a| self.body_position(a.body_index))
    }

    pub fn kinetic_energy(&self) -> f64 {
        match &self.object {
            DeformableObject::Rod(r) => r
                .segments
                .iter()
                .filter(|s| s.inverse_mass > 0.0)
                .map(|s| {
                    let w = rotate_inv(&s.orientation, &s.angular_velocity);
                    let rot: f64 = (0..3).map(|k| w[k] * w[k] / s.inverse_inertia[k]).sum();
                    0.5 * (s.velocity.norm_squared() / s.inverse_mass + rot)
                })
                .sum(),
            DeformableObject::Cloth(c) => c
                .particles
                .iter()
                .filter(|p| p.inverse_mass > 0.0)
                .map(|p| 0.5 * p.velocity.norm_squared() / p.inverse_mass)
                .sum(),
        }
    }

    fn substep(&mut self, h: f64, drive: &[(usize, Vec3)]) -> Result<(), SimError> {
        let g = self.gravity;
        match &mut self.object {
            DeformableObject::Cloth(cloth) => {
                for p in cloth.particles.iter_mut() {
                    p.previous_position = p.position;
                    if p.inverse_mass > 0.0 {
                        p.velocity += g * h;
                        p.position += p.velocity * h;
                    }
                }
                for &(i, target) in drive {
                    cloth.particles[i].position = target;
                }
                cloth.reset_multipliers();
                for _ in 0..self.solver_iterations {
                    self.diagnostics += solve_stretch(cloth, h);
                    self.diagnostics += solve_bending(cloth, h);
                }
                for p in cloth.particles.iter_mut() {
                    p.velocity = (p.position - p.previous_position) / h;
                }
            }
            DeformableObject::Rod(rod) => {
                for s in rod.segments.iter_mut() {
                    s.previous_position = s.position;
                    if s.inverse_mass > 0.0 {
                        s.velocity += g * h;
                        s.position += s.velocity * h;
                    }
                    s.previous_orientation = s.orientation;
                    // gyroscopic term in the body frame; no external torque
                    if s.inverse_inertia.iter().all(|&v| v > 0.0) {
                        let inertia = s.inverse_inertia.map(|v| 1.0 / v);
                        let wb = rotate_inv(&s.orientation, &s.angular_velocity);
                        let gyro = wb.cross(&inertia.component_mul(&wb));
                        let wb = wb - h * s.inverse_inertia.component_mul(&gyro);
                        s.angular_velocity = rotate(&s.orientation, &wb);
                    }
                    integrate_rotation(&mut s.orientation, &(s.angular_velocity * h));
                }
                for &(i, target) in drive {
                    rod.segments[i].position = target;
                }
                rod.reset_multipliers();
                for _ in 0..self.solver_iterations {
                    self.diagnostics += solve_sbt(rod, h);
                }
                for s in rod.segments.iter_mut() {
                    s.velocity = (s.position - s.previous_position) / h;
                    let mut dq = s.orientation * s.previous_orientation.conjugate();
                    if dq.w < 0.0 {
                        dq = -dq;
                    }
                    s.angular_velocity = dq.imag() * (2.0 / h);
                }
            }
        }
        apply_damping(self, h);
        self.check_finite()
    }

    fn check_finite(&self) -> Result<(), SimError> {
        let bad = match &self.object {
            DeformableObject::Cloth(c) => c
                .particles
                .iter()
                .position(|p| !is_finite3(&p.position) || !is_finite3(&p.velocity)),
            DeformableObject::Rod(r) => r.segments.iter().position(|s| {
                !is_finite3(&s.position)
                    || !is_finite3(&s.velocity)
                    || !is_finite3(&s.angular_velocity)
                    || !s.orientation.coords.iter().all(|c| c.is_finite())
            }),
        };
        match bad {
            Some(body) => Err(SimError::Diverged { body }),
            None => Ok(()),
        }
    }
}

/// Advance the world by `num_steps x num_substeps` substeps. Held bodies are
/// moved linearly from where they were at the start of the call to their
/// attachment target, arriving exactly on the last substep.
pub fn step(world: &mut WorldState) -> Result<(), SimError> {
    world.validate()?;
    let h = world.substeps.substep();
    let total = world.substeps.num_steps * world.substeps.num_substeps;
    let starts: Vec<(usize, Vec3, Vec3)> = world
        .attachments
        .iter()
        .map(|a| (a.body_index, world.body_position(a.body_index).expect("attached body exists"), a.target_position))
        .collect();
    let mut drive = Vec::with_capacity(starts.len());
    for k in 1..=total {
        drive.clear();
        let frac = k as f64 / total as f64;
        drive.extend(starts.iter().map(|&(i, from, to)| {
            let p = if k == total { to } else { from + (to - from) * frac };
            (i, p)
        }));
        world.substep(h, &drive)?;
    }
    Ok(())
}

/// Linear velocity damping `v <- v (1 - c h)`, likewise for angular velocity.
pub fn apply_damping(world: &mut WorldState, h: f64) {
    let factor = (1.0 - world.damping_coefficient * h).clamp(0.0, 1.0);
    if factor == 1.0 {
        return;
    }
    match &mut world.object {
        DeformableObject::Cloth(c) => c.particles.iter_mut().for_each(|p| p.velocity *= factor),
        DeformableObject::Rod(r) => r.segments.iter_mut().for_each(|s| {
            s.velocity *= factor;
            s.angular_velocity *= factor;
        }),
    }
}

/// Deep copy of a world.
pub fn clone_world(world: &WorldState) -> WorldState {
    world.clone()
}

/// Move an agent's kinematic target; takes effect on the next [`step`].
pub fn set_attachment_target(world: &mut WorldState, agent_id: &AgentId, target: Vec3) -> Result<(), SimError> {
    let a = world
        .attachments
        .iter_mut()
        .find(|a| &a.agent_id == agent_id)
        .ok_or_else(|| SimError::UnknownAgent(agent_id.clone()))?;
    a.target_position = target;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pbd::{ClothCompliance, ClothObject, RodMaterial, RodObject};

    fn cfg(dt: f64, n: usize) -> SubstepConfig {
        SubstepConfig { dt, num_substeps: n, num_steps: 1 }
    }

    #[test]
    fn free_fall_matches_semi_implicit_closed_form() {
        let cloth = ClothObject::from_particles(&[Vec3::zeros()], 1.0).unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), cfg(1.0, 100)).unwrap();
        w.gravity = Vec3::new(0.0, 0.0, -10.0);
        step(&mut w).unwrap();
        let z = w.body_position(0).unwrap().z;
        assert!((z - (-5.05)).abs() < 1e-9, "z = {z}");
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let comp = ClothCompliance { stretching: 0.0, bending: 0.0 };
        let cloth = ClothObject::grid(Vec3::zeros(), Vec3::x(), Vec3::y(), 5, 5, 1.0, comp).unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), cfg(0.02, 10)).unwrap();
        w.gravity = Vec3::zeros();
        let before: Vec<_> = (0..25).map(|i| w.body_position(i).unwrap()).collect();
        for _ in 0..10 {
            step(&mut w).unwrap();
        }
        for (i, b) in before.iter().enumerate() {
            assert_eq!(w.body_position(i).unwrap(), *b);
        }

        let rod = RodObject::straight(Vec3::zeros(), Vec3::y(), 1.0, 10, RodMaterial::default()).unwrap();
        let mut w = WorldState::new(DeformableObject::Rod(rod), cfg(0.02, 10)).unwrap();
        w.gravity = Vec3::zeros();
        let before: Vec<_> = (0..10).map(|i| w.body_position(i).unwrap()).collect();
        for _ in 0..10 {
            step(&mut w).unwrap();
        }
        for (i, b) in before.iter().enumerate() {
            assert!((w.body_position(i).unwrap() - b).norm() < 1e-15);
        }
    }

    #[test]
    fn attachment_errors() {
        let cloth = ClothObject::from_particles(&[Vec3::zeros(), Vec3::x()], 1.0).unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), cfg(0.02, 4)).unwrap();
        w.attach("a".into(), 0).unwrap();
        assert_eq!(w.attach("a".into(), 1), Err(SimError::AgentAlreadyAttached("a".into())));
        assert_eq!(w.attach("b".into(), 0), Err(SimError::BodyAlreadyHeld(0)));
        assert_eq!(w.attach("b".into(), 9), Err(SimError::BodyOutOfRange { index: 9, count: 2 }));
        assert_eq!(
            set_attachment_target(&mut w, &"zz".into(), Vec3::zeros()),
            Err(SimError::UnknownAgent("zz".into()))
        );
        w.detach(&"a".into()).unwrap();
        match &w.object {
            DeformableObject::Cloth(c) => assert_eq!(c.particles[0].inverse_mass, 1.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn kinematic_drive() {
        let cloth = ClothObject::from_particles(&[Vec3::new(0.0, 0.0, 1.0)], 1.0).unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), cfg(0.02, 10)).unwrap();
        let id = AgentId::from("a");
        w.attach(id.clone(), 0).unwrap();
        // target at current position: stays put despite gravity
        step(&mut w).unwrap();
        assert_eq!(w.body_position(0).unwrap(), Vec3::new(0.0, 0.0, 1.0));
        // jump by +0.1 x
        set_attachment_target(&mut w, &id, Vec3::new(0.1, 0.0, 1.0)).unwrap();
        step(&mut w).unwrap();
        assert_eq!(w.body_position(0).unwrap(), Vec3::new(0.1, 0.0, 1.0));
        // ramp at 0.2 m/s for 1 s
        let start = w.body_position(0).unwrap();
        for k in 1..=50 {
            let target = start + Vec3::new(0.2 * 0.02 * k as f64, 0.0, 0.0);
            set_attachment_target(&mut w, &id, target).unwrap();
            step(&mut w).unwrap();
        }
        let moved = w.body_position(0).unwrap() - start;
        assert!((moved.x - 0.2).abs() < 1e-9);
    }

    #[test]
    fn damping_formula() {
        let cloth = ClothObject::from_particles(&[Vec3::zeros()], 1.0).unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), cfg(0.02, 1)).unwrap();
        if let DeformableObject::Cloth(c) = &mut w.object {
            c.particles[0].velocity = Vec3::new(1.0, 0.0, 0.0);
        }
        w.damping_coefficient = 0.0;
        apply_damping(&mut w, 0.1);
        let v = |w: &WorldState| match &w.object {
            DeformableObject::Cloth(c) => c.particles[0].velocity,
            _ => unreachable!(),
        };
        assert_eq!(v(&w), Vec3::new(1.0, 0.0, 0.0));
        w.damping_coefficient = 1.0;
        apply_damping(&mut w, 0.1);
        assert!((v(&w) - Vec3::new(0.9, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn divergence_is_reported_with_body_index() {
        let cloth = ClothObject::from_particles(&[Vec3::zeros(), Vec3::x()], 1.0).unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), cfg(0.02, 2)).unwrap();
        if let DeformableObject::Cloth(c) = &mut w.object {
            c.particles[1].velocity = Vec3::new(f64::NAN, 0.0, 0.0);
        }
        assert_eq!(step(&mut w), Err(SimError::Diverged { body: 1 }));
    }

    #[test]
    fn clone_isolation() {
        let cloth = ClothObject::from_particles(&[Vec3::zeros()], 1.0).unwrap();
        let mut w = WorldState::new(DeformableObject::Cloth(cloth), cfg(0.02, 2)).unwrap();
        w.attach("a".into(), 0).unwrap();
        let mut c = clone_world(&w);
        set_attachment_target(&mut c, &"a".into(), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(w.attachments[0].target_position, Vec3::zeros());
    }
}
