//! Court coordinates and single-integrator motion.
//!
//! Positions are `(l, w)` in meters: `l` runs along the court length from
//! the left basket, `w` across it from the bottom edge. Actions are
//! velocities in m/s, and `u[t]` moves `x[t]` to `x[t + 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Human top speed in m/s; every observed or generated action is clamped to it.
pub const MAX_SPEED: f64 = 12.42;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CourtState {
    pub l: f64,
    pub w: f64,
}

impl CourtState {
    pub const fn new(l: f64, w: f64) -> Self {
        Self { l, w }
    }

    pub fn distance(&self, other: &CourtState) -> f64 {
        (self.l - other.l).hypot(self.w - other.w)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CourtAction {
    pub dl: f64,
    pub dw: f64,
}

impl CourtAction {
    pub const fn new(dl: f64, dw: f64) -> Self {
        Self { dl, dw }
    }

    pub fn speed(&self) -> f64 {
        self.dl.hypot(self.dw)
    }

    pub fn heading(&self) -> f64 {
        self.dw.atan2(self.dl)
    }
}

/// Playing surface extents. Defaults to an NBA court.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CourtSpec {
    pub length_m: f64,
    pub width_m: f64,
}

impl Default for CourtSpec {
    fn default() -> Self {
        Self {
            length_m: 28.65,
            width_m: 15.24,
        }
    }
}

impl CourtSpec {
    pub fn contains(&self, x: &CourtState) -> bool {
        (0.0..=self.length_m).contains(&x.l) && (0.0..=self.width_m).contains(&x.w)
    }

    pub fn clip(&self, x: CourtState) -> CourtState {
        CourtState::new(x.l.clamp(0.0, self.length_m), x.w.clamp(0.0, self.width_m))
    }
}

/// Explicit Euler step of the single integrator.
pub fn propagate(x: CourtState, u: CourtAction, dt: f64) -> Result<CourtState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "time step must be positive, got {dt}"
        )));
    }
    Ok(CourtState::new(x.l + u.dl * dt, x.w + u.dw * dt))
}

/// Rescale to [`MAX_SPEED`] if faster, keeping the heading.
pub fn clamp_speed(u: CourtAction) -> CourtAction {
    let speed = u.speed();
    if speed <= MAX_SPEED {
        return u;
    }
    let mut k = MAX_SPEED / speed;
    // Rounding can land one ulp above the cap; shrink until it holds so a
    // second clamp is a no-op.
    loop {
        let c = CourtAction::new(u.dl * k, u.dw * k);
        if c.speed() <= MAX_SPEED {
            return c;
        }
        k *= 1.0 - f64::EPSILON;
    }
}

/// Forward differences `(x[t+1] - x[t]) / dt`, clamped.
pub fn actions_from_positions(positions: &[CourtState], dt: f64) -> Result<Vec<CourtAction>> {
    if positions.len() < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 positions to recover actions, got {}",
            positions.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "time step must be positive, got {dt}"
        )));
    }
    Ok(positions
        .windows(2)
        .map(|p| {
            clamp_speed(CourtAction::new(
                (p[1].l - p[0].l) / dt,
                (p[1].w - p[0].w) / dt,
            ))
        })
        .collect())
}

/// Roll actions forward from `start`; returns `actions.len() + 1` states.
pub fn rollout(start: CourtState, actions: &[CourtAction], dt: f64) -> Result<Vec<CourtState>> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(start);
    let mut x = start;
    for &u in actions {
        x = propagate(x, u, dt)?;
        states.push(x);
    }
    Ok(states)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<CourtState>,
    pub actions: Vec<CourtAction>,
}

impl Trajectory {
    pub fn from_actions(start: CourtState, actions: Vec<CourtAction>, dt: f64) -> Result<Self> {
        let states = rollout(start, &actions, dt)?;
        Ok(Self {
            dt,
            states,
            actions,
        })
    }

    pub fn from_positions(states: Vec<CourtState>, dt: f64) -> Result<Self> {
        let actions = actions_from_positions(&states, dt)?;
        Ok(Self {
            dt,
            states,
            actions,
        })
    }

    /// Largest gap between a stored state and the one `propagate` predicts.
    pub fn consistency_error(&self) -> f64 {
        self.states
            .windows(2)
            .zip(&self.actions)
            .map(|(s, &u)| {
                let p = CourtState::new(s[0].l + u.dl * self.dt, s[0].w + u.dw * self.dt);
                p.distance(&s[1])
            })
            .fold(0.0, f64::max)
    }
}
