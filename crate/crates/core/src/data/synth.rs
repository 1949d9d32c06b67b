//! Seeded multimodal interaction generator.
//!
//! Every player holds one of `M` attractor goals and walks toward it at a
//! cruise speed, holding still once it arrives. Each frame it may switch to
//! a different goal, so a player standing at a goal has several distinct
//! futures. Players push apart when closer than the repulsion radius, and
//! action noise can grow with the number of players nearby, which makes
//! neighbor multiplicity matter for prediction.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::play::{Play, PlayerTrack};
use crate::dynamics::{clamp_speed, CourtAction, CourtSpec, CourtState};
use crate::error::{Error, Result};
use crate::graph::{Role, Team};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub plays: usize,
    /// Frames per play.
    pub play_length: usize,
    pub dt: f64,
    /// Inclusive range of players per play, agent included.
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub attractors: Vec<CourtState>,
    /// Per-frame probability of switching to another goal.
    pub switch_prob: f64,
    /// Action noise standard deviation, m/s per axis.
    pub noise: f64,
    pub cruise_speed: f64,
    pub arrive_radius: f64,
    pub repulsion_radius: f64,
    /// Repulsive speed at contact, m/s.
    pub repulsion_gain: f64,
    /// Noise grows by `crowd_noise_gain × noise` per player within
    /// `crowd_radius`.
    pub crowd_radius: f64,
    pub crowd_noise_gain: f64,
    /// Spread of initial positions around the starting attractor.
    pub spawn_spread: f64,
    /// (team, role) labels assigned to players in order, cycling.
    pub types: Vec<(Team, Role)>,
    pub court: CourtSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            plays: 30,
            play_length: 100,
            dt: 0.04,
            min_nodes: 3,
            max_nodes: 5,
            attractors: vec![
                CourtState::new(9.0, 4.5),
                CourtState::new(9.0, 10.7),
                CourtState::new(19.6, 4.5),
                CourtState::new(19.6, 10.7),
            ],
            switch_prob: 0.04,
            noise: 0.3,
            cruise_speed: 4.0,
            arrive_radius: 0.3,
            repulsion_radius: 1.0,
            repulsion_gain: 1.5,
            crowd_radius: 3.0,
            crowd_noise_gain: 0.0,
            spawn_spread: 1.5,
            types: vec![(Team::Home, Role::PG), (Team::Away, Role::PG)],
            court: CourtSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return bad("switch_prob must be in [0, 1]");
        }
        if self.attractors.is_empty() {
            return bad("need at least one attractor");
        }
        if self.min_nodes < 1 || self.min_nodes > self.max_nodes {
            return bad("node count range is empty");
        }
        if self.play_length < 2 {
            return bad("play_length must be at least 2");
        }
        if !(self.dt > 0.0) || self.noise < 0.0 || self.cruise_speed < 0.0 {
            return bad("dt must be positive; noise and speed non-negative");
        }
        if self.types.is_empty() {
            return bad("type pool is empty");
        }
        Ok(())
    }

    /// Index of the attractor whose bearing from `from` best matches `heading`.
    pub fn mode_of_heading(&self, from: CourtState, dl: f64, dw: f64) -> usize {
        let norm = dl.hypot(dw).max(1e-12);
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, a) in self.attractors.iter().enumerate() {
            let (al, aw) = (a.l - from.l, a.w - from.w);
            let d = al.hypot(aw);
            if d < self.arrive_radius {
                continue;
            }
            let cos = (al * dl + aw * dw) / (d * norm);
            if cos > best.0 {
                best = (cos, i);
            }
        }
        best.1
    }
}

struct Walker {
    pos: CourtState,
    goal: usize,
}

pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Play>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plays = Vec::with_capacity(config.plays);
    for p in 0..config.plays {
        plays.push(generate_play(config, format!("synth-{p:04}"), &mut rng)?);
    }
    Ok(plays)
}

fn generate_play(cfg: &SynthConfig, play_id: String, rng: &mut ChaCha8Rng) -> Result<Play> {
    let m = cfg.attractors.len();
    let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut walkers: Vec<Walker> = (0..n)
        .map(|_| {
            let home = *cfg.attractors.choose(rng).expect("non-empty");
            let pos = cfg.court.clip(CourtState::new(
                home.l + rng.random_range(-cfg.spawn_spread..=cfg.spawn_spread),
                home.w + rng.random_range(-cfg.spawn_spread..=cfg.spawn_spread),
            ));
            Walker {
                pos,
                goal: rng.random_range(0..m),
            }
        })
        .collect();

    let mut positions = vec![Vec::with_capacity(cfg.play_length); n];
    let mut modes = vec![Vec::with_capacity(cfg.play_length); n];
    for (i, w) in walkers.iter().enumerate() {
        positions[i].push(w.pos);
        modes[i].push(w.goal as u32);
    }

    for _ in 1..cfg.play_length {
        let snapshot: Vec<CourtState> = walkers.iter().map(|w| w.pos).collect();
        for (i, w) in walkers.iter_mut().enumerate() {
            if m > 1 && rng.random::<f64>() < cfg.switch_prob {
                let pick = rng.random_range(0..m - 1);
                w.goal = if pick >= w.goal { pick + 1 } else { pick };
            }
            let goal = cfg.attractors[w.goal];
            let (gl, gw) = (goal.l - w.pos.l, goal.w - w.pos.w);
            let dist = gl.hypot(gw);
            let mut u = if dist > cfg.arrive_radius {
                // Do not overshoot the goal in one step.
                let step = (cfg.cruise_speed * cfg.dt).min(dist);
                CourtAction::new(gl / dist * step / cfg.dt, gw / dist * step / cfg.dt)
            } else {
                CourtAction::default()
            };

            let mut crowd = 0usize;
            for (j, other) in snapshot.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = w.pos.distance(other);
                if d <= cfg.crowd_radius {
                    crowd += 1;
                }
                if d < cfg.repulsion_radius && d > 1e-9 {
                    let push = cfg.repulsion_gain * (1.0 - d / cfg.repulsion_radius);
                    u.dl += push * (w.pos.l - other.l) / d;
                    u.dw += push * (w.pos.w - other.w) / d;
                }
            }

            let sigma = cfg.noise * (1.0 + cfg.crowd_noise_gain * crowd as f64);
            if sigma > 0.0 {
                u.dl += sigma * noise.sample(rng);
                u.dw += sigma * noise.sample(rng);
            }
            let u = clamp_speed(u);
            w.pos = cfg.court.clip(CourtState::new(
                w.pos.l + u.dl * cfg.dt,
                w.pos.w + u.dw * cfg.dt,
            ));
            positions[i].push(w.pos);
            modes[i].push(w.goal as u32);
        }
    }

    let players = positions
        .into_iter()
        .zip(modes)
        .enumerate()
        .map(|(i, (pos, md))| {
            let (team, role) = cfg.types[i % cfg.types.len()];
            PlayerTrack {
                id: i as u32,
                team,
                role,
                positions: pos,
                modes: Some(md),
            }
        })
        .collect();
    let play = Play {
        play_id,
        game_id: Some("synthetic".into()),
        dt: cfg.dt,
        agent_id: 0,
        players,
    };
    play.validate()?;
    Ok(play)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MAX_SPEED;

    #[test]
    fn deterministic_limit_is_a_straight_line() {
        let cfg = SynthConfig {
            plays: 1,
            min_nodes: 1,
            max_nodes: 1,
            attractors: vec![CourtState::new(20.0, 8.0)],
            switch_prob: 0.0,
            noise: 0.0,
            play_length: 60,
            ..SynthConfig::default()
        };
        let play = &synth_generate(&cfg).unwrap()[0];
        let xs = &play.players[0].positions;
        let start = xs[0];
        let goal = cfg.attractors[0];
        let (dl, dw) = (goal.l - start.l, goal.w - start.w);
        for x in xs {
            // Every point lies on the segment from start toward the goal.
            let cross = (x.l - start.l) * dw - (x.w - start.w) * dl;
            assert!(cross.abs() < 1e-9, "off the line by {cross}");
            assert!(x.distance(&goal) <= start.distance(&goal) + 1e-12);
        }
    }

    #[test]
    fn actions_obey_the_speed_cap() {
        let cfg = SynthConfig {
            cruise_speed: 15.0,
            noise: 3.0,
            plays: 3,
            ..SynthConfig::default()
        };
        for play in synth_generate(&cfg).unwrap() {
            for p in &play.players {
                assert!(p
                    .actions(play.dt)
                    .unwrap()
                    .iter()
                    .all(|u| u.speed() <= MAX_SPEED));
            }
        }
    }

    #[test]
    fn same_seed_same_plays() {
        let cfg = SynthConfig {
            plays: 2,
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig {
            seed: 8,
            ..cfg.clone()
        };
        assert_ne!(
            synth_generate(&cfg).unwrap(),
            synth_generate(&other).unwrap()
        );
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig {
            switch_prob: 1.5,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&bad).is_err());
    }

    #[test]
    fn heading_modes() {
        let cfg = SynthConfig::default();
        let from = CourtState::new(9.0, 4.5);
        assert_eq!(cfg.mode_of_heading(from, 0.0, 1.0), 1);
        assert_eq!(cfg.mode_of_heading(from, 1.0, 0.0), 2);
    }
}
