use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{actions_from_positions, CourtAction, CourtSpec, CourtState};
use crate::error::{Error, Result};
use crate::graph::{NodeType, Role, Team};

pub const PLAY_FORMAT_VERSION: u32 = 1;

/// One tracked person over a play.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerTrack {
    pub id: u32,
    pub team: Team,
    pub role: Role,
    pub positions: Vec<CourtState>,
    /// Generator goal index per frame, for synthetic plays.
    pub modes: Option<Vec<u32>>,
}

impl PlayerTrack {
    pub fn human_type(&self) -> NodeType {
        NodeType::human(self.team, self.role)
    }

    pub fn actions(&self, dt: f64) -> Result<Vec<CourtAction>> {
        actions_from_positions(&self.positions, dt)
    }
}

/// A contiguous stretch of tracked play. One player is the
/// future-conditioning agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Play {
    pub play_id: String,
    pub game_id: Option<String>,
    pub dt: f64,
    pub agent_id: u32,
    pub players: Vec<PlayerTrack>,
}

impl Play {
    pub fn frames(&self) -> usize {
        self.players.first().map_or(0, |p| p.positions.len())
    }

    pub fn player(&self, id: u32) -> Option<&PlayerTrack> {
        self.players.iter().find(|p| p.id == id)
    }

    /// Graph type of a player: the agent marker or its (team, role).
    pub fn node_type(&self, player: &PlayerTrack) -> NodeType {
        if player.id == self.agent_id {
            NodeType::Agent
        } else {
            player.human_type()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |detail: String| Error::Parse {
            context: format!("play {}", self.play_id),
            detail,
        };
        if self.players.is_empty() {
            return Err(ctx("no players".into()));
        }
        if !(self.dt > 0.0) {
            return Err(ctx(format!(
                "frame interval must be positive, got {}",
                self.dt
            )));
        }
        let mut ids = BTreeSet::new();
        let frames = self.frames();
        if frames < 2 {
            return Err(ctx(format!("need at least 2 frames, got {frames}")));
        }
        for (j, p) in self.players.iter().enumerate() {
            if !ids.insert(p.id) {
                return Err(ctx(format!("duplicate player id {}", p.id)));
            }
            if p.positions.len() != frames {
                return Err(ctx(format!(
                    "player[{j}] (id {}) has {} frames, expected {frames}",
                    p.id,
                    p.positions.len()
                )));
            }
            if let Some(k) = p
                .positions
                .iter()
                .position(|x| !x.l.is_finite() || !x.w.is_finite())
            {
                return Err(ctx(format!(
                    "player[{j}] (id {}) frame {k} is not finite",
                    p.id
                )));
            }
            if let Some(m) = &p.modes {
                if m.len() != frames {
                    return Err(ctx(format!(
                        "player[{j}] mode labels do not cover every frame"
                    )));
                }
            }
        }
        if !ids.contains(&self.agent_id) {
            return Err(ctx(format!("agent_id {} is not a player", self.agent_id)));
        }
        Ok(())
    }

    /// Apply the court bounds policy.
    pub fn enforce_bounds(&mut self, court: &CourtSpec, policy: BoundsPolicy) -> Result<()> {
        for (j, p) in self.players.iter_mut().enumerate() {
            for (k, x) in p.positions.iter_mut().enumerate() {
                if court.contains(x) {
                    continue;
                }
                match policy {
                    BoundsPolicy::Clip => *x = court.clip(*x),
                    BoundsPolicy::Reject => {
                        return Err(Error::Parse {
                            context: format!(
                                "play {} player[{j}] (id {}) frame {k}",
                                self.play_id, p.id
                            ),
                            detail: format!("position ({}, {}) outside the court", x.l, x.w),
                        })
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsPolicy {
    #[default]
    Reject,
    Clip,
}

// ----- wire format -----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayFileHeader {
    pub format_version: u32,
    pub dt_ms: f64,
    pub court: CourtSpec,
}

#[derive(Serialize, Deserialize)]
struct PlayerWire {
    id: u32,
    team: Team,
    role: Role,
    xy: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    modes: Option<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct PlayWire {
    play_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    game_id: Option<String>,
    agent_id: u32,
    players: Vec<PlayerWire>,
}

#[derive(Serialize, Deserialize)]
struct PlayFileWire {
    header: PlayFileHeader,
    plays: Vec<PlayWire>,
}

/// Parsed play file.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayFile {
    pub header: PlayFileHeader,
    pub plays: Vec<Play>,
}

impl PlayFile {
    pub fn new(dt: f64, court: CourtSpec, plays: Vec<Play>) -> Self {
        Self {
            header: PlayFileHeader {
                format_version: PLAY_FORMAT_VERSION,
                dt_ms: dt * 1000.0,
                court,
            },
            plays,
        }
    }

    pub fn from_json(text: &str, policy: BoundsPolicy) -> Result<Self> {
        let wire: PlayFileWire = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: format!("line {} column {}", e.line(), e.column()),
            detail: e.to_string(),
        })?;
        if wire.header.format_version != PLAY_FORMAT_VERSION {
            return Err(Error::Parse {
                context: "header".into(),
                detail: format!("unsupported format_version {}", wire.header.format_version),
            });
        }
        let dt = wire.header.dt_ms / 1000.0;
        let court = wire.header.court;
        let mut plays = Vec::with_capacity(wire.plays.len());
        for (i, pw) in wire.plays.into_iter().enumerate() {
            let mut play = Play {
                play_id: pw.play_id,
                game_id: pw.game_id,
                dt,
                agent_id: pw.agent_id,
                players: pw
                    .players
                    .into_iter()
                    .map(|p| PlayerTrack {
                        id: p.id,
                        team: p.team,
                        role: p.role,
                        positions: p.xy.iter().map(|&[l, w]| CourtState::new(l, w)).collect(),
                        modes: p.modes,
                    })
                    .collect(),
            };
            play.validate().map_err(|e| match e {
                Error::Parse { context, detail } => Error::Parse {
                    context: format!("plays[{i}] {context}"),
                    detail,
                },
                other => other,
            })?;
            play.enforce_bounds(&court, policy)?;
            plays.push(play);
        }
        Ok(Self {
            header: wire.header,
            plays,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let wire = PlayFileWire {
            header: self.header.clone(),
            plays: self
                .plays
                .iter()
                .map(|p| PlayWire {
                    play_id: p.play_id.clone(),
                    game_id: p.game_id.clone(),
                    agent_id: p.agent_id,
                    players: p
                        .players
                        .iter()
                        .map(|t| PlayerWire {
                            id: t.id,
                            team: t.team,
                            role: t.role,
                            xy: t.positions.iter().map(|x| [x.l, x.w]).collect(),
                            modes: t.modes.clone(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&wire).map_err(|e| Error::Contract(format!("play file encode: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Read and validate a JSON play file.
pub fn parse_plays(path: impl AsRef<Path>, policy: BoundsPolicy) -> Result<PlayFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PlayFile::from_json(&text, policy)
}
