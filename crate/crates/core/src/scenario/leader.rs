use super::config::Waypoint;
use crate::math::Vec3;

#[derive(Clone, Debug, PartialEq)]
struct Leg {
    start_time: f64,
    arrive_time: f64,
    leave_time: f64,
    from: Vec3,
    to: Vec3,
}

/// Piecewise-linear constant-speed path through waypoints, with dwells.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderPath {
    start: Vec3,
    legs: Vec<Leg>,
}

impl LeaderPath {
    pub fn new(start: Vec3, waypoints: &[Waypoint]) -> Self {
        let mut legs = Vec::with_capacity(waypoints.len());
        let mut t = 0.0;
        let mut from = start;
        for w in waypoints {
            let travel = (w.position - from).norm() / w.speed;
            let leg = Leg { start_time: t, arrive_time: t + travel, leave_time: t + travel + w.dwell, from, to: w.position };
            t = leg.leave_time;
            from = w.position;
            legs.push(leg);
        }
        LeaderPath { start, legs }
    }

    /// Time at which the last dwell ends.
    pub fn end_time(&self) -> f64 {
        self.legs.last().map_or(0.0, |l| l.leave_time)
    }

    pub fn position(&self, t: f64) -> Vec3 {
        if t <= 0.0 {
            return self.start;
        }
        for leg in &self.legs {
            if t < leg.arrive_time {
                let span = leg.arrive_time - leg.start_time;
                let s = if span > 0.0 { (t - leg.start_time) / span } else { 1.0 };
                return leg.from + (leg.to - leg.from) * s;
            }
            if t < leg.leave_time {
                return leg.to;
            }
        }
        self.legs.last().map_or(self.start, |l| l.to)
    }
}
