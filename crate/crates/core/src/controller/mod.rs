//! Per-agent safety filter: a leader-following velocity command corrected by
//! a small QP built from control barrier function rows.
//!
//! Barrier values and the rows they produce, for agent `i` with command `u`:
//!
//! | barrier | `h` | row `a·u ≥ b` |
//! |---|---|---|
//! | collision with obstacle k | `f_k − d_offset` | `J_k·u ≥ −α(h)` |
//! | overstretch vs peer j | `d_max − ‖x_j − x_i‖` | `n·u ≥ −α(h) + n·ẋ_j` |
//! | proximity vs peer j | `‖x_j − x_i‖ − d_min` | `−n·u ≥ −α(h) − n·ẋ_j` |
//!
//! with `n` the unit vector from `i` to `j` and `α` piecewise linear.

mod qp;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use qp::{solve_qp, speed_rows, QpResult, QpStatus};

use crate::jacobian::{JacobianRow, ReplicaDistances, DEFAULT_EPSILON_J};
use crate::math::{AgentId, Axis, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("agents `{0}` and `{1}` coincide; pair direction undefined")]
    CoincidentAgents(AgentId, AgentId),
    #[error("invalid controller parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
}

/// Two-slope extended class-K∞ function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseLinearAlpha {
    pub slope_pos: f64,
    pub slope_neg: f64,
}

impl Default for PiecewiseLinearAlpha {
    fn default() -> Self {
        PiecewiseLinearAlpha { slope_pos: 2.0, slope_neg: 10.0 }
    }
}

impl PiecewiseLinearAlpha {
    pub fn new(slope_pos: f64, slope_neg: f64) -> Self {
        PiecewiseLinearAlpha { slope_pos, slope_neg }
    }

    pub fn eval(&self, h: f64) -> f64 {
        if h >= 0.0 {
            self.slope_pos * h
        } else {
            self.slope_neg * h
        }
    }
}

pub fn alpha(h: f64, p: &PiecewiseLinearAlpha) -> f64 {
    p.eval(h)
}

/// Distance band for one pair of agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairLimit {
    pub a: AgentId,
    pub b: AgentId,
    pub d_min: f64,
    pub d_max: f64,
}

impl PairLimit {
    /// The partner of `agent` in this pair, if it is part of it.
    pub fn peer_of(&self, agent: &AgentId) -> Option<&AgentId> {
        if &self.a == agent {
            Some(&self.b)
        } else if &self.b == agent {
            Some(&self.a)
        } else {
            None
        }
    }
}

fn default_k_p() -> f64 {
    0.5
}
fn default_gamma() -> Vec3 {
    Vec3::repeat(1.0)
}
fn default_u_max() -> f64 {
    0.2
}
fn default_d_offset() -> f64 {
    0.05
}
fn default_delta() -> f64 {
    0.1
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_J
}
fn default_smoothing() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    #[serde(default = "default_k_p")]
    pub k_p: f64,
    #[serde(default = "default_gamma")]
    pub gamma: Vec3,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default = "default_d_offset")]
    pub d_offset: f64,
    #[serde(default)]
    pub alpha_coll: PiecewiseLinearAlpha,
    #[serde(default)]
    pub alpha_stretch: PiecewiseLinearAlpha,
    #[serde(default)]
    pub alpha_prox: PiecewiseLinearAlpha,
    #[serde(default)]
    pub pairs: Vec<PairLimit>,
    /// Perturbation of the replica grips, in metres.
    #[serde(default = "default_delta")]
    pub jacobian_delta: f64,
    #[serde(default = "default_epsilon")]
    pub jacobian_epsilon: f64,
    /// Weight of the previous neighbour-velocity estimate.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        ControllerParams {
            k_p: default_k_p(),
            gamma: default_gamma(),
            u_max: default_u_max(),
            d_offset: default_d_offset(),
            alpha_coll: PiecewiseLinearAlpha::default(),
            alpha_stretch: PiecewiseLinearAlpha::default(),
            alpha_prox: PiecewiseLinearAlpha::default(),
            pairs: Vec::new(),
            jacobian_delta: default_delta(),
            jacobian_epsilon: default_epsilon(),
            smoothing: default_smoothing(),
        }
    }
}

impl ControllerParams {
    /// Every violated invariant, as readable messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = |name: &str, v: f64, out: &mut Vec<String>| {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        };
        positive("controller.k_p", self.k_p, &mut out);
        positive("controller.u_max", self.u_max, &mut out);
        positive("controller.jacobian_delta", self.jacobian_delta, &mut out);
        for (k, g) in self.gamma.iter().enumerate() {
            positive(&format!("controller.gamma[{k}]"), *g, &mut out);
        }
        if !(self.d_offset >= 0.0) {
            out.push(format!("controller.d_offset must be non-negative, got {}", self.d_offset));
        }
        for (name, a) in [("alpha_coll", &self.alpha_coll), ("alpha_stretch", &self.alpha_stretch), ("alpha_prox", &self.alpha_prox)] {
            positive(&format!("controller.{name}.slope_pos"), a.slope_pos, &mut out);
            positive(&format!("controller.{name}.slope_neg"), a.slope_neg, &mut out);
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            out.push(format!("controller.smoothing must lie in [0, 1), got {}", self.smoothing));
        }
        for p in &self.pairs {
            if !(p.d_min < p.d_max) {
                out.push(format!("pair ({}, {}): d_min {} must be below d_max {}", p.a, p.b, p.d_min, p.d_max));
            }
            if p.a == p.b {
                out.push(format!("pair ({}, {}) names the same agent twice", p.a, p.b));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ControllerError::InvalidParams(problems))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RowLabel {
    Collision { obstacle: usize },
    Stretch { peer: AgentId },
    Proximity { peer: AgentId },
    Speed { axis: Axis, positive: bool },
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::Collision { obstacle } => write!(f, "collision[{obstacle}]"),
            RowLabel::Stretch { peer } => write!(f, "stretch({peer})"),
            RowLabel::Proximity { peer } => write!(f, "proximity({peer})"),
            RowLabel::Speed { axis, positive } => write!(f, "speed{}{axis}", if *positive { '+' } else { '-' }),
        }
    }
}

/// `a·u ≥ b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintRow {
    pub a: Vec3,
    pub b: f64,
    pub label: RowLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    Stretch,
    Proximity,
}

/// Tracks a neighbour's position to estimate its velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborTrack {
    pub last_position: Option<Vec3>,
    pub velocity_estimate: Vec3,
    pub smoothing: f64,
}

impl NeighborTrack {
    pub fn new(smoothing: f64) -> Self {
        NeighborTrack { last_position: None, velocity_estimate: Vec3::zeros(), smoothing }
    }
}

/// Exponentially smoothed finite-difference velocity. The first observation
/// only records the position.
pub fn estimate_neighbor_velocity(track: &mut NeighborTrack, new_position: Vec3, dt: f64) -> Vec3 {
    if let Some(last) = track.last_position {
        let raw = (new_position - last) / dt;
        track.velocity_estimate = track.velocity_estimate * track.smoothing + raw * (1.0 - track.smoothing);
    }
    track.last_position = Some(new_position);
    track.velocity_estimate
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    /// Desired offset from the leader, fixed at start-up.
    pub p_r0: Vec3,
    pub neighbor_tracks: BTreeMap<AgentId, NeighborTrack>,
}

impl ControllerState {
    pub fn new(agent_position: Vec3, leader_position: Vec3) -> Self {
        ControllerState { p_r0: agent_position - leader_position, neighbor_tracks: BTreeMap::new() }
    }
}

/// `u_nom = k_p (p_r0 + x_l − x_i)`.
pub fn nominal_control(leader_pos: &Vec3, agent_pos: &Vec3, state: &ControllerState, k_p: f64) -> Vec3 {
    tracking_error(leader_pos, agent_pos, state) * k_p
}

pub fn tracking_error(leader_pos: &Vec3, agent_pos: &Vec3, state: &ControllerState) -> Vec3 {
    state.p_r0 + leader_pos - agent_pos
}

/// Collision row for one obstacle, or `None` (with a warning) when the
/// Jacobian is degenerate.
pub fn build_collision_row(j: &JacobianRow, distance: f64, p: &ControllerParams, obstacle: usize) -> Option<ConstraintRow> {
    if !j.valid {
        log::warn!("dropping collision row for obstacle {obstacle}: |J| = {:.3e}", j.j.norm());
        return None;
    }
    let h = distance - p.d_offset;
    Some(ConstraintRow { a: j.j, b: -p.alpha_coll.eval(h), label: RowLabel::Collision { obstacle } })
}

pub fn build_pair_row(
    x_i: &Vec3,
    x_j: &Vec3,
    xdot_j: &Vec3,
    limits: &PairLimit,
    p: &ControllerParams,
    kind: PairKind,
    peer: &AgentId,
) -> Result<ConstraintRow, ControllerError> {
    let diff = x_j - x_i;
    let dist = diff.norm();
    if !(dist > 1e-9) {
        return Err(ControllerError::CoincidentAgents(limits.a.clone(), limits.b.clone()));
    }
    let n = diff / dist;
    Ok(match kind {
        PairKind::Stretch => {
            let h = limits.d_max - dist;
            ConstraintRow { a: n, b: -p.alpha_stretch.eval(h) + n.dot(xdot_j), label: RowLabel::Stretch { peer: peer.clone() } }
        }
        PairKind::Proximity => {
            let h = dist - limits.d_min;
            ConstraintRow { a: -n, b: -p.alpha_prox.eval(h) - n.dot(xdot_j), label: RowLabel::Proximity { peer: peer.clone() } }
        }
    })
}

/// What one controller sees at a tick.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub own_position: Vec3,
    pub leader_position: Vec3,
    /// Positions of every other agent, leader included.
    pub peers: &'a [(AgentId, Vec3)],
    pub distances: &'a ReplicaDistances,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlOutput {
    pub u_nom: Vec3,
    pub qp: QpResult,
    pub rows: Vec<ConstraintRow>,
}

#[derive(Clone, Debug)]
pub struct SafetyController {
    pub agent: AgentId,
    pub params: ControllerParams,
    pub state: ControllerState,
    /// Skip the QP and apply `u_nom` unchanged.
    pub bypass: bool,
}

impl SafetyController {
    pub fn new(agent: AgentId, params: ControllerParams, agent_position: Vec3, leader_position: Vec3) -> Result<Self, ControllerError> {
        params.validate()?;
        Ok(SafetyController { agent, params, state: ControllerState::new(agent_position, leader_position), bypass: false })
    }

    /// Every CBF row for this tick. Updates the neighbour velocity tracks.
    pub fn build_rows(&mut self, obs: &Observation<'_>) -> Result<Vec<ConstraintRow>, ControllerError> {
        let mut rows = Vec::new();
        for k in 0..obs.distances.nominal.len() {
            let d = &obs.distances.nominal[k];
            if d.infinite {
                continue;
            }
            if let Some(j) = obs.distances.obstacle_row(&self.agent, k, self.params.jacobian_epsilon) {
                rows.extend(build_collision_row(&j, d.signed_distance(), &self.params, k));
            }
        }
        for (peer, pos) in obs.peers {
            let smoothing = self.params.smoothing;
            let track = self.state.neighbor_tracks.entry(peer.clone()).or_insert_with(|| NeighborTrack::new(smoothing));
            let v = estimate_neighbor_velocity(track, *pos, obs.dt);
            for limits in self.params.pairs.iter().filter(|l| l.peer_of(&self.agent) == Some(peer)) {
                for kind in [PairKind::Stretch, PairKind::Proximity] {
                    rows.push(build_pair_row(&obs.own_position, pos, &v, limits, &self.params, kind, peer)?);
                }
            }
        }
        Ok(rows)
    }

    pub fn control_tick(&mut self, obs: &Observation<'_>) -> Result<ControlOutput, ControllerError> {
        let u_nom = nominal_control(&obs.leader_position, &obs.own_position, &self.state, self.params.k_p);
        let rows = self.build_rows(obs)?;
        let qp = if self.bypass {
            QpResult { u: u_nom, status: QpStatus::Optimal, active_labels: Vec::new(), multipliers: Vec::new(), solve_time: 0.0 }
        } else {
            solve_qp(&u_nom, &self.params.gamma, &rows, self.params.u_max)
        };
        if qp.status == QpStatus::Infeasible {
            log::warn!("agent {}: safety QP infeasible, holding still", self.agent);
        }
        Ok(ControlOutput { u_nom, qp, rows })
    }
}
