//! Declarative scenarios and the closed control loop that runs them.
//!
//! A tick at time `t` goes:
//!
//! 1. measure every replica against the obstacles and read agent positions;
//! 2. run every assistant's safety controller on that snapshot;
//! 3. move the leader's grip to its position at `t + dt`, integrate each
//!    assistant's command into its grip target, and step all replicas;
//! 4. record the snapshot and decisions as a [`TickLog`].

mod config;
mod leader;
mod output;

use std::path::Path;
use std::time::Instant;

use rand::{rngs::StdRng, Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    AgentConfig, ClothConfig, LeaderConfig, ObjectConfig, ObstacleConfig, RodConfig, RunConfig, ScenarioConfig,
    SimConfig, Waypoint, LEADER_ID,
};
pub use leader::LeaderPath;
pub use output::{write_csv, write_outputs, CSV_FILE, ECHO_FILE, JSONL_FILE, METRICS_FILE};

use crate::controller::{tracking_error, ControlOutput, ControllerError, Observation, QpStatus, SafetyController};
use crate::geometry::{GeometryError, Obstacle};
use crate::jacobian::{ReplicaError, ReplicaSet};
use crate::math::{AgentId, Vec3};
use crate::pbd::{set_attachment_target, step, SimError, WorldState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Replica(#[from] ReplicaError),
    #[error("simulation diverged at tick {tick}: {source}")]
    Diverged { tick: u64, source: ReplicaError, partial: Vec<TickLog> },
    #[error("cannot summarise an empty log")]
    EmptyLog,
}

/// Read and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioConfig::from_toml_str(&text, base).map_err(|e| match e {
        ScenarioError::Parse { message, .. } => ScenarioError::Parse { path: path.display().to_string(), message },
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentLog {
    pub id: AgentId,
    pub position: Vec3,
    pub p_r0: Vec3,
    pub u_nom: Vec3,
    pub u: Vec3,
    pub status: QpStatus,
    pub active_labels: Vec<String>,
    /// Seconds.
    pub solve_time: f64,
    pub tracking_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLog {
    pub a: AgentId,
    pub b: AgentId,
    pub distance: f64,
    pub h_stretch: f64,
    pub h_prox: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickLog {
    pub tick: u64,
    pub t: f64,
    pub leader_pos: Vec3,
    pub agents: Vec<AgentLog>,
    /// `min_distance − d_offset`; absent without obstacles.
    pub h_coll: Option<f64>,
    /// Signed object-to-scene distance on the nominal world.
    pub min_distance: Option<f64>,
    /// Object and obstacle witness points.
    pub witness: Option<[Vec3; 2]>,
    pub obstacle_index: Option<usize>,
    pub pairs: Vec<PairLog>,
    /// Wall-clock seconds to step all replicas this tick.
    pub step_time: f64,
    /// Wall-clock seconds per substep of the nominal world.
    pub substep_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationTicks {
    pub collision: usize,
    pub stretch: usize,
    pub proximity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: usize,
    pub rms_tracking_error: f64,
    pub max_tracking_error: f64,
    pub final_tracking_error: f64,
    pub min_h_coll: Option<f64>,
    pub min_distance: Option<f64>,
    pub max_pair_distance: Option<f64>,
    pub min_pair_distance: Option<f64>,
    pub min_h_stretch: Option<f64>,
    pub min_h_prox: Option<f64>,
    pub violation_ticks: ViolationTicks,
    pub infeasible_ticks: usize,
    pub mean_solve_time: f64,
    pub max_solve_time: f64,
    pub mean_sim_step_time: f64,
    pub mean_substep_time: f64,
}

fn fold_opt(acc: Option<f64>, v: Option<f64>, f: fn(f64, f64) -> f64) -> Option<f64> {
    match (acc, v) {
        (Some(a), Some(b)) => Some(f(a, b)),
        (a, b) => a.or(b),
    }
}

/// Summarise a run.
pub fn compute_metrics(logs: &[TickLog]) -> Result<Metrics, ScenarioError> {
    if logs.is_empty() {
        return Err(ScenarioError::EmptyLog);
    }
    let mut sq = 0.0;
    let mut n_err = 0usize;
    let mut max_err: f64 = 0.0;
    let mut m = Metrics {
        ticks: logs.len(),
        rms_tracking_error: 0.0,
        max_tracking_error: 0.0,
        final_tracking_error: 0.0,
        min_h_coll: None,
        min_distance: None,
        max_pair_distance: None,
        min_pair_distance: None,
        min_h_stretch: None,
        min_h_prox: None,
        violation_ticks: ViolationTicks::default(),
        infeasible_ticks: 0,
        mean_solve_time: 0.0,
        max_solve_time: 0.0,
        mean_sim_step_time: 0.0,
        mean_substep_time: 0.0,
    };
    let mut solves = 0usize;
    for log in logs {
        for a in &log.agents {
            sq += a.tracking_error * a.tracking_error;
            n_err += 1;
            max_err = max_err.max(a.tracking_error);
            m.mean_solve_time += a.solve_time;
            m.max_solve_time = m.max_solve_time.max(a.solve_time);
            solves += 1;
        }
        if log.agents.iter().any(|a| a.status == QpStatus::Infeasible) {
            m.infeasible_ticks += 1;
        }
        m.min_h_coll = fold_opt(m.min_h_coll, log.h_coll, f64::min);
        m.min_distance = fold_opt(m.min_distance, log.min_distance, f64::min);
        if log.h_coll.is_some_and(|h| h < 0.0) {
            m.violation_ticks.collision += 1;
        }
        for p in &log.pairs {
            m.max_pair_distance = fold_opt(m.max_pair_distance, Some(p.distance), f64::max);
            m.min_pair_distance = fold_opt(m.min_pair_distance, Some(p.distance), f64::min);
            m.min_h_stretch = fold_opt(m.min_h_stretch, Some(p.h_stretch), f64::min);
            m.min_h_prox = fold_opt(m.min_h_prox, Some(p.h_prox), f64::min);
        }
        if log.pairs.iter().any(|p| p.h_stretch < 0.0) {
            m.violation_ticks.stretch += 1;
        }
        if log.pairs.iter().any(|p| p.h_prox < 0.0) {
            m.violation_ticks.proximity += 1;
        }
        m.mean_sim_step_time += log.step_time;
        m.mean_substep_time += log.substep_time;
    }
    let last = logs.last().expect("non-empty");
    m.final_tracking_error = last.agents.iter().map(|a| a.tracking_error).fold(0.0, f64::max);
    m.rms_tracking_error = if n_err > 0 { (sq / n_err as f64).sqrt() } else { 0.0 };
    m.max_tracking_error = max_err;
    if solves > 0 {
        m.mean_solve_time /= solves as f64;
    }
    m.mean_sim_step_time /= logs.len() as f64;
    m.mean_substep_time /= logs.len() as f64;
    Ok(m)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Apply `u_nom` directly, skipping the safety QP.
    pub bypass_qp: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub logs: Vec<TickLog>,
    pub metrics: Metrics,
}

/// A scenario being executed tick by tick.
pub struct Session {
    pub config: ScenarioConfig,
    pub obstacles: Vec<Obstacle>,
    pub replicas: ReplicaSet,
    pub controllers: Vec<SafetyController>,
    path: LeaderPath,
    leader: AgentId,
    /// Remote steering; replaces the scripted path once set.
    leader_velocity: Option<Vec3>,
    tick: u64,
    dt: f64,
    last_log: Option<TickLog>,
}

fn settle(world: &mut WorldState, goals: &[(AgentId, Vec3)], ticks: usize) -> Result<(), ScenarioError> {
    let starts: Vec<Vec3> = goals
        .iter()
        .map(|(id, _)| world.attachment(id).map(|a| a.target_position).ok_or_else(|| SimError::UnknownAgent(id.clone())))
        .collect::<Result<_, _>>()?;
    // carry the grips over the first half, then hold still
    let ramp = (ticks / 2).max(1);
    for k in 1..=ticks {
        let s = (k as f64 / ramp as f64).min(1.0);
        for ((id, goal), start) in goals.iter().zip(&starts) {
            set_attachment_target(world, id, start + (goal - start) * s)?;
        }
        step(world)?;
    }
    for (id, goal) in goals {
        set_attachment_target(world, id, *goal)?;
    }
    Ok(())
}

impl Session {
    pub fn new(config: ScenarioConfig, options: &RunOptions) -> Result<Self, ScenarioError> {
        config.validate()?;
        let obstacles = config.build_obstacles()?;
        let mut world = config.build_world()?;
        let leader = config.leader_id();
        let rate = config.run.tick_rate;

        let mut rng = StdRng::seed_from_u64(config.run.seed);
        let mut goals = Vec::with_capacity(config.agents.len() + 1);
        let leader_start = world.agent_position(&leader).expect("leader attached");
        goals.push((leader.clone(), config.leader.initial_position.unwrap_or(leader_start)));
        for a in &config.agents {
            let here = world.agent_position(&a.id).expect("agent attached");
            let mut goal = a.initial_position.unwrap_or(here);
            let j = config.run.initial_jitter;
            if j > 0.0 {
                goal += Vec3::from_fn(|_, _| rng.gen_range(-j..=j));
            }
            goals.push((a.id.clone(), goal));
        }
        settle(&mut world, &goals, (config.sim.settle_time * rate).round() as usize)?;

        let ids: Vec<AgentId> = config.agents.iter().map(|a| a.id.clone()).collect();
        let mut replicas = ReplicaSet::new(world, &ids, config.controller.jacobian_delta)?;
        replicas.parallel = config.sim.parallel;
        replicas.resync_interval = config.sim.resync_interval;
        for _ in 0..(config.sim.replica_settle_time * rate).round() as usize {
            replicas.step_all()?;
        }

        let x_l = replicas.nominal.agent_position(&leader).expect("leader attached");
        let mut controllers = Vec::with_capacity(config.agents.len());
        for a in &config.agents {
            let x_i = replicas.nominal.agent_position(&a.id).expect("agent attached");
            let mut c = SafetyController::new(a.id.clone(), config.controller.clone(), x_i, x_l)?;
            if let Some(p) = a.relative_pose {
                c.state.p_r0 = p;
            }
            c.bypass = options.bypass_qp;
            controllers.push(c);
        }
        let path = LeaderPath::new(x_l, &config.leader.waypoints);
        let dt = config.tick_dt();
        Ok(Session { config, obstacles, replicas, controllers, path, leader, leader_velocity: None, tick: 0, dt, last_log: None })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn world(&self) -> &WorldState {
        &self.replicas.nominal
    }

    pub fn leader_id(&self) -> &AgentId {
        &self.leader
    }

    pub fn leader_position(&self) -> Vec3 {
        self.replicas.nominal.agent_position(&self.leader).expect("leader attached")
    }

    pub fn last_log(&self) -> Option<&TickLog> {
        self.last_log.as_ref()
    }

    /// Steer the leader at a constant velocity from the next tick on;
    /// `None` goes back to holding still.
    pub fn set_leader_velocity(&mut self, v: Vec3) {
        self.leader_velocity = Some(v);
    }

    pub fn leader_velocity(&self) -> Option<Vec3> {
        self.leader_velocity
    }

    fn positions(&self) -> Vec<(AgentId, Vec3)> {
        let w = &self.replicas.nominal;
        w.attachments.iter().map(|a| (a.agent_id.clone(), w.body_position(a.body_index).expect("held body"))).collect()
    }

    /// Advance one tick.
    pub fn step(&mut self) -> Result<TickLog, ScenarioError> {
        let t = self.time();
        let distances = self.replicas.evaluate(&self.obstacles)?;
        let positions = self.positions();
        let x_l = self.leader_position();
        let dt = self.dt;

        let decide = |c: &mut SafetyController| -> Result<ControlOutput, ControllerError> {
            let own = positions.iter().find(|(id, _)| id == &c.agent).map(|p| p.1).expect("agent attached");
            let peers: Vec<(AgentId, Vec3)> = positions.iter().filter(|(id, _)| id != &c.agent).cloned().collect();
            c.control_tick(&Observation { own_position: own, leader_position: x_l, peers: &peers, distances: &distances, dt })
        };
        let outputs: Vec<ControlOutput> = if self.config.sim.parallel {
            self.controllers.par_iter_mut().map(decide).collect::<Result<_, _>>()?
        } else {
            self.controllers.iter_mut().map(decide).collect::<Result<_, _>>()?
        };

        let scene = distances.scene_minimum();
        let (h_coll, min_distance, witness, obstacle_index) = if scene.infinite {
            (None, None, None, None)
        } else {
            let d = scene.signed_distance();
            (Some(d - self.config.controller.d_offset), Some(d), Some([scene.object_witness, scene.obstacle_witness]), scene.obstacle_index)
        };
        let pos_of = |id: &AgentId| positions.iter().find(|(a, _)| a == id).map(|p| p.1).expect("validated pair");
        let pairs = self
            .config
            .controller
            .pairs
            .iter()
            .map(|p| {
                let distance = (pos_of(&p.b) - pos_of(&p.a)).norm();
                PairLog { a: p.a.clone(), b: p.b.clone(), distance, h_stretch: p.d_max - distance, h_prox: distance - p.d_min }
            })
            .collect();
        let agents: Vec<AgentLog> = self
            .controllers
            .iter()
            .zip(&outputs)
            .map(|(c, o)| {
                let x_i = pos_of(&c.agent);
                AgentLog {
                    id: c.agent.clone(),
                    position: x_i,
                    p_r0: c.state.p_r0,
                    u_nom: o.u_nom,
                    u: o.qp.u,
                    status: o.qp.status,
                    active_labels: o.qp.active_labels.iter().map(ToString::to_string).collect(),
                    solve_time: o.qp.solve_time,
                    tracking_error: tracking_error(&x_l, &x_i, &c.state).norm(),
                }
            })
            .collect();

        let next_leader = match self.leader_velocity {
            Some(v) => self.replicas.target(&self.leader).expect("leader attached") + v * dt,
            None => self.path.position(t + dt),
        };
        self.replicas.set_target(&self.leader, next_leader)?;
        let commands: Vec<(AgentId, Vec3)> = self.controllers.iter().zip(&outputs).map(|(c, o)| (c.agent.clone(), o.qp.u)).collect();
        let started = Instant::now();
        let stepped = self.replicas.tick(&commands, dt);
        let step_time = started.elapsed().as_secs_f64();

        let substeps = (self.config.sim.num_substeps * self.config.sim.num_steps) as f64;
        let log = TickLog {
            tick: self.tick,
            t,
            leader_pos: x_l,
            agents,
            h_coll,
            min_distance,
            witness,
            obstacle_index,
            pairs,
            step_time,
            substep_time: self.replicas.last_nominal_step_time / substeps,
        };
        if let Err(source) = stepped {
            return Err(ScenarioError::Diverged { tick: self.tick, source, partial: vec![log] });
        }
        self.tick += 1;
        self.last_log = Some(log.clone());
        Ok(log)
    }
}

/// Execute a scenario for its configured duration.
pub fn run(config: &ScenarioConfig, options: &RunOptions) -> Result<RunOutput, ScenarioError> {
    let mut session = Session::new(config.clone(), options)?;
    let n = config.tick_count();
    let mut logs = Vec::with_capacity(n);
    for _ in 0..n {
        match session.step() {
            Ok(log) => logs.push(log),
            Err(ScenarioError::Diverged { tick, source, partial }) => {
                logs.extend(partial);
                return Err(ScenarioError::Diverged { tick, source, partial: logs });
            }
            Err(e) => return Err(e),
        }
    }
    let metrics = compute_metrics(&logs)?;
    Ok(RunOutput { logs, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(err: f64, solve: f64) -> AgentLog {
        AgentLog {
            id: AgentId::from("a1"),
            position: Vec3::zeros(),
            p_r0: Vec3::zeros(),
            u_nom: Vec3::zeros(),
            u: Vec3::zeros(),
            status: QpStatus::Optimal,
            active_labels: Vec::new(),
            solve_time: solve,
            tracking_error: err,
        }
    }

    fn log(tick: u64, h: f64, err: f64) -> TickLog {
        TickLog {
            tick,
            t: tick as f64 * 0.02,
            leader_pos: Vec3::zeros(),
            agents: vec![agent(err, 1e-5)],
            h_coll: Some(h),
            min_distance: Some(h + 0.05),
            witness: None,
            obstacle_index: Some(0),
            pairs: vec![PairLog { a: AgentId::from("leader"), b: AgentId::from("a1"), distance: 1.0, h_stretch: 0.2, h_prox: 0.5 }],
            step_time: 1e-3,
            substep_time: 5e-5,
        }
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(matches!(compute_metrics(&[]), Err(ScenarioError::EmptyLog)));
    }

    #[test]
    fn single_tick_metrics_equal_the_tick() {
        let m = compute_metrics(&[log(0, 0.3, 0.1)]).unwrap();
        assert_eq!(m.min_h_coll, Some(0.3));
        assert_eq!(m.rms_tracking_error, 0.1);
        assert_eq!(m.max_pair_distance, Some(1.0));
        assert_eq!(m.violation_ticks, ViolationTicks::default());
    }

    #[test]
    fn one_injected_violation_is_counted() {
        let logs = [log(0, 0.2, 0.0), log(1, -0.013, 0.0), log(2, 0.1, 0.0)];
        let m = compute_metrics(&logs).unwrap();
        assert_eq!(m.violation_ticks.collision, 1);
        assert_eq!(m.min_h_coll, Some(-0.013));
    }

    #[test]
    fn rms_over_agents_and_ticks() {
        let m = compute_metrics(&[log(0, 1.0, 3.0), log(1, 1.0, 4.0)]).unwrap();
        assert!((m.rms_tracking_error - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.final_tracking_error, 4.0);
    }
}
