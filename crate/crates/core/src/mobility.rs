//! Random-waypoint motion and session traffic.

use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::topology::{Point, Room};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobileUser {
    pub position: Point,
    pub waypoint: Point,
    pub speed_mps: f64,
    pub mobile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub users: Vec<MobileUser>,
    pub speed_range_mps: (f64, f64),
}

fn uniform_point(room: &Room, rng: &mut Rng) -> Point {
    Point::new(rng.random::<f64>() * room.width_m, rng.random::<f64>() * room.depth_m)
}

fn draw_speed(range: (f64, f64), rng: &mut Rng) -> f64 {
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

impl MobilityState {
    /// Users at uniform positions; the first `stationary` indices listed in
    /// `stationary_ids` never move.
    pub fn random(
        room: &Room,
        users: usize,
        stationary_ids: &[usize],
        speed_range_mps: (f64, f64),
        rng: &mut Rng,
    ) -> Self {
        let users = (0..users)
            .map(|u| {
                let position = uniform_point(room, rng);
                let mobile = !stationary_ids.contains(&u);
                let waypoint = if mobile { uniform_point(room, rng) } else { position };
                let speed_mps = if mobile { draw_speed(speed_range_mps, rng) } else { 0.0 };
                MobileUser { position, waypoint, speed_mps, mobile }
            })
            .collect();
        Self { users, speed_range_mps }
    }

    pub fn positions(&self) -> Vec<Point> {
        self.users.iter().map(|u| u.position).collect()
    }

    /// Advance every mobile user by `dt` seconds.
    pub fn step(&mut self, dt: f64, rng: &mut Rng, room: &Room) {
        for user in self.users.iter_mut().filter(|u| u.mobile) {
            let remaining = user.position.distance(user.waypoint);
            let travel = user.speed_mps * dt;
            if travel >= remaining {
                user.position = user.waypoint;
                user.waypoint = uniform_point(room, rng);
                user.speed_mps = draw_speed(self.speed_range_mps, rng);
            } else {
                let f = travel / remaining;
                user.position = room.clamp(Point::new(
                    user.position.x + f * (user.waypoint.x - user.position.x),
                    user.position.y + f * (user.waypoint.y - user.position.y),
                ));
            }
        }
    }
}

/// Functional form of [`MobilityState::step`].
pub fn rwp_step(state: &MobilityState, dt: f64, rng: &mut Rng, room: &Room) -> MobilityState {
    let mut next = state.clone();
    next.step(dt, rng, room);
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficModel {
    pub arrival_rate_hz: f64,
    /// Hyper-exponential phases as `(probability, rate)`.
    pub duration_phases: Vec<(f64, f64)>,
    pub p_min_w: f64,
    pub p_max_w: f64,
}

impl Default for TrafficModel {
    fn default() -> Self {
        Self { arrival_rate_hz: 0.5, duration_phases: vec![(0.7, 0.2), (0.3, 0.02)], p_min_w: 0.010, p_max_w: 0.050 }
    }
}

impl TrafficModel {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.duration_phases.iter().map(|p| p.0).sum();
        if self.duration_phases.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("phase probabilities sum to {total}, expected 1")));
        }
        if self.duration_phases.iter().any(|&(p, r)| p < 0.0 || !(r > 0.0)) || !(self.arrival_rate_hz >= 0.0) {
            return Err(Error::Config("traffic rates must be positive".into()));
        }
        if !(0.0 <= self.p_min_w && self.p_min_w <= self.p_max_w) {
            return Err(Error::Config(format!("demand bounds {} > {}", self.p_min_w, self.p_max_w)));
        }
        Ok(())
    }

    pub fn mean_duration_s(&self) -> f64 {
        self.duration_phases.iter().map(|&(p, r)| p / r).sum()
    }

    /// Long-run fraction of time a user spends in a session.
    pub fn activity(&self) -> f64 {
        let on = self.arrival_rate_hz * self.mean_duration_s();
        on / (1.0 + on)
    }

    /// A `(p_min, p_max)` demand pair inside the configured bounds.
    pub fn draw_demand(&self, rng: &mut Rng) -> (f64, f64) {
        let span = self.p_max_w - self.p_min_w;
        let a = self.p_min_w + span * rng.random::<f64>();
        let b = self.p_min_w + span * rng.random::<f64>();
        (a.min(b), a.max(b))
    }
}

pub fn sample_session_duration(model: &TrafficModel, rng: &mut Rng) -> f64 {
    let pick: f64 = rng.random();
    let mut acc = 0.0;
    let mut rate = model.duration_phases.last().map(|p| p.1).unwrap_or(1.0);
    for &(p, r) in &model.duration_phases {
        acc += p;
        if pick < acc {
            rate = r;
            break;
        }
    }
    let d = Exp::new(rate).expect("positive rate").sample(rng);
    // Exp can return exactly 0 with vanishing probability.
    d.max(f64::MIN_POSITIVE)
}

/// Arrivals of a Poisson process in a window of length `dt`, counted by
/// accumulating exponential inter-arrival times.
pub fn poisson_arrivals(rate_hz: f64, dt: f64, rng: &mut Rng) -> u32 {
    if rate_hz <= 0.0 {
        return 0;
    }
    let exp = Exp::new(rate_hz).expect("positive rate");
    let mut t = exp.sample(rng);
    let mut n = 0;
    while t <= dt {
        n += 1;
        t += exp.sample(rng);
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub active: bool,
    pub ends_at_s: f64,
    pub demand: (f64, f64),
}

/// Per-user on/off sessions driven by a [`TrafficModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    pub sessions: Vec<SessionState>,
}

impl TrafficState {
    pub fn new(users: usize, model: &TrafficModel, always_active: bool, rng: &mut Rng) -> Self {
        let sessions = (0..users)
            .map(|_| {
                let active = always_active || rng.random::<f64>() < model.activity();
                let ends_at_s = if always_active {
                    f64::INFINITY
                } else if active {
                    sample_session_duration(model, rng)
                } else {
                    0.0
                };
                SessionState { active, ends_at_s, demand: model.draw_demand(rng) }
            })
            .collect();
        Self { sessions }
    }

    /// Advance sessions over `[t, t + dt)`.
    pub fn step(&mut self, t: f64, dt: f64, model: &TrafficModel, rng: &mut Rng) {
        for s in &mut self.sessions {
            if s.active && s.ends_at_s <= t + dt {
                s.active = false;
            }
            if !s.active && poisson_arrivals(model.arrival_rate_hz, dt, rng) > 0 {
                s.active = true;
                s.ends_at_s = t + dt + sample_session_duration(model, rng);
                s.demand = model.draw_demand(rng);
            }
        }
    }
}

/// Trace rows `(t_s, user_id, x_m, y_m, active, p_min_w, p_max_w)`.
pub fn write_trace_csv<W: Write>(
    out: &mut W,
    rows: impl IntoIterator<Item = (f64, usize, Point, bool, (f64, f64))>,
) -> std::io::Result<()> {
    writeln!(out, "t_s,user_id,x_m,y_m,active,p_min_w,p_max_w")?;
    for (t, u, p, active, (lo, hi)) in rows {
        writeln!(out, "{t},{u},{},{},{},{lo},{hi}", p.x, p.y, active as u8)?;
    }
    Ok(())
}
