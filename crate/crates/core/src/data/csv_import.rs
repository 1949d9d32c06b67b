//! Import shim for SportVU-style tracking exports.
//!
//! Expected header columns: `game_clock, player_id, x, y`, plus optional
//! `play_id, team, role`. Coordinates follow the SportVU convention (feet,
//! origin at the left baseline, bottom sideline) and are converted to meters.
//! The game clock counts down, so frames are ordered by decreasing clock.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::play::{Play, PlayerTrack};
use crate::dynamics::CourtState;
use crate::error::{Error, Result};
use crate::graph::{Role, Team};

const FEET_TO_METERS: f64 = 0.3048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Units {
    Feet,
    Meters,
}

#[derive(Clone, Debug)]
pub struct CsvImportOptions {
    pub units: Units,
    /// Agent player id; defaults to the smallest id in each play.
    pub agent_id: Option<u32>,
}

impl Default for CsvImportOptions {
    fn default() -> Self {
        Self {
            units: Units::Feet,
            agent_id: None,
        }
    }
}

#[derive(Deserialize)]
struct Row {
    game_clock: f64,
    player_id: u32,
    x: f64,
    y: f64,
    #[serde(default)]
    play_id: Option<String>,
    #[serde(default)]
    team: Option<String>,
    #[serde(default)]
    role: Option<String>,
}

struct Pending {
    team: Team,
    role: Role,
    frames: BTreeMap<i64, CourtState>,
}

pub fn import_sportvu_csv(text: &str, opts: &CsvImportOptions) -> Result<Vec<Play>> {
    let scale = match opts.units {
        Units::Feet => FEET_TO_METERS,
        Units::Meters => 1.0,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    // play id → player id → track
    let mut plays: BTreeMap<String, BTreeMap<u32, Pending>> = BTreeMap::new();

    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let ctx = |detail: String| Error::Parse {
            context: format!("csv line {line}"),
            detail,
        };
        let row = rec.map_err(|e| ctx(e.to_string()))?;
        let team = row
            .team
            .as_deref()
            .map_or(Ok(Team::Home), str::parse)
            .map_err(|e| ctx(e.to_string()))?;
        let role = row
            .role
            .as_deref()
            .map_or(Ok(Role::PG), str::parse)
            .map_err(|e| ctx(e.to_string()))?;
        // Clock in whole milliseconds, negated so ascending keys run forward in time.
        let key = -(row.game_clock * 1000.0).round() as i64;
        let play = plays
            .entry(row.play_id.unwrap_or_else(|| "csv-0".into()))
            .or_default();
        let track = play.entry(row.player_id).or_insert_with(|| Pending {
            team,
            role,
            frames: BTreeMap::new(),
        });
        let pos = CourtState::new(row.x * scale, row.y * scale);
        if track.frames.insert(key, pos).is_some() {
            return Err(ctx(format!(
                "player {} appears twice at game clock {}",
                row.player_id, row.game_clock
            )));
        }
    }

    let mut out = Vec::new();
    for (play_id, tracks) in plays {
        let ctx = |detail: String| Error::Parse {
            context: format!("csv play {play_id}"),
            detail,
        };
        let clocks: Vec<i64> = tracks
            .values()
            .next()
            .map(|t| t.frames.keys().copied().collect())
            .unwrap_or_default();
        if clocks.len() < 2 {
            return Err(ctx("need at least two frames".into()));
        }
        for (id, t) in &tracks {
            if !t.frames.keys().copied().eq(clocks.iter().copied()) {
                return Err(ctx(format!("player {id} is missing frames")));
            }
        }
        let step_ms = clocks[1] - clocks[0];
        if step_ms <= 0 || clocks.windows(2).any(|w| w[1] - w[0] != step_ms) {
            return Err(ctx("frames are not evenly spaced".into()));
        }
        let agent_id = opts
            .agent_id
            .unwrap_or_else(|| *tracks.keys().next().expect("non-empty"));
        let play = Play {
            play_id: play_id.clone(),
            game_id: None,
            dt: step_ms as f64 / 1000.0,
            agent_id,
            players: tracks
                .into_iter()
                .map(|(id, t)| PlayerTrack {
                    id,
                    team: t.team,
                    role: t.role,
                    positions: t.frames.into_values().collect(),
                    modes: None,
                })
                .collect(),
        };
        play.validate()?;
        out.push(play);
    }
    Ok(out)
}
