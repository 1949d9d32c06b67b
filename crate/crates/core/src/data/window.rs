//! Cutting plays into fixed-size prediction problems.
//!
//! A play with frames `0..=T` yields one example per prediction frame
//! `t ∈ [H, T − S]`. Each frame carries the state and the action that led
//! into it (`u[k-1]` for `x[k]`), so the history window is frames
//! `t−H+1 ..= t` and the future is frames `t+1 ..= t+S`, whose actions are
//! `u[t] .. u[t+S−1]`.

use serde::{Deserialize, Serialize};

use super::play::Play;
use crate::dynamics::{rollout, CourtAction, CourtState};
use crate::error::{Error, Result};
use crate::graph::{build_graph, GraphNode, NodeType, SceneGraph};

/// A state together with the action that produced it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub state: CourtState,
    pub action: CourtAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries {
    pub id: u32,
    pub node_type: NodeType,
    /// `H` frames ending at the prediction frame.
    pub history: Vec<Frame>,
    /// `S` frames after the prediction frame. For the agent this is the
    /// candidate future being conditioned on.
    pub future: Vec<Frame>,
    /// Generator goal at the prediction frame, when known.
    pub mode: Option<u32>,
}

impl NodeSeries {
    pub fn current(&self) -> Frame {
        *self.history.last().expect("non-empty history")
    }

    pub fn future_actions(&self) -> Vec<CourtAction> {
        self.future.iter().map(|f| f.action).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub play_id: String,
    pub t: usize,
    pub dt: f64,
    pub agent_id: u32,
    /// Ordered by id; includes the agent.
    pub nodes: Vec<NodeSeries>,
    pub graph: SceneGraph,
}

impl TrainingExample {
    pub fn history_len(&self) -> usize {
        self.nodes[0].history.len()
    }

    pub fn horizon(&self) -> usize {
        self.nodes[0].future.len()
    }

    pub fn node(&self, id: u32) -> Result<&NodeSeries> {
        self.nodes.iter().find(|n| n.id == id).ok_or_else(|| {
            Error::UnknownId(format!(
                "node {id} not in example {}@{}",
                self.play_id, self.t
            ))
        })
    }

    pub fn agent(&self) -> &NodeSeries {
        self.node(self.agent_id).expect("agent present")
    }

    /// Modeled (non-agent) nodes.
    pub fn humans(&self) -> impl Iterator<Item = &NodeSeries> {
        self.nodes.iter().filter(|n| !n.node_type.is_agent())
    }

    /// Same example with a different candidate agent future.
    pub fn with_agent_future(&self, actions: &[CourtAction]) -> Result<TrainingExample> {
        if actions.len() != self.horizon() {
            return Err(Error::Contract(format!(
                "agent future has {} steps, horizon is {}",
                actions.len(),
                self.horizon()
            )));
        }
        let mut out = self.clone();
        let agent = out
            .nodes
            .iter_mut()
            .find(|n| n.id == self.agent_id)
            .expect("agent present");
        let states = rollout(agent.current().state, actions, self.dt)?;
        agent.future = states[1..]
            .iter()
            .zip(actions)
            .map(|(&state, &action)| Frame { state, action })
            .collect();
        Ok(out)
    }

    /// Same example with the graph rebuilt at another radius.
    pub fn with_radius(&self, radius: f64) -> Result<TrainingExample> {
        let mut out = self.clone();
        out.graph = build_graph(self.graph.nodes().iter().copied(), radius)?;
        Ok(out)
    }
}

/// Examples cut from a set of plays, plus plays that were too short.
#[derive(Clone, Debug, Default)]
pub struct Windowed {
    pub examples: Vec<TrainingExample>,
    pub skipped: Vec<String>,
}

/// Number of windows a play with frames `0..=last_frame` yields.
pub fn window_count(last_frame: usize, history: usize, horizon: usize) -> usize {
    (last_frame + 1).saturating_sub(history + horizon)
}

pub fn window_play(
    play: &Play,
    history: usize,
    horizon: usize,
    radius: f64,
) -> Result<Vec<TrainingExample>> {
    if history == 0 || horizon == 0 {
        return Err(Error::Config(
            "history and horizon must be at least 1".into(),
        ));
    }
    let frames = play.frames();
    if frames < history + horizon + 1 {
        return Ok(Vec::new());
    }
    let last = frames - 1;
    let tracks: Vec<(
        u32,
        NodeType,
        &[CourtState],
        Vec<CourtAction>,
        Option<&Vec<u32>>,
    )> = {
        let mut v = Vec::with_capacity(play.players.len());
        for p in &play.players {
            v.push((
                p.id,
                play.node_type(p),
                p.positions.as_slice(),
                p.actions(play.dt)?,
                p.modes.as_ref(),
            ));
        }
        v.sort_by_key(|t| t.0);
        v
    };

    let mut out = Vec::with_capacity(window_count(last, history, horizon));
    for t in history..=last - horizon {
        let frame = |pos: &[CourtState], act: &[CourtAction], k: usize| Frame {
            state: pos[k],
            action: act[k - 1],
        };
        let nodes: Vec<NodeSeries> = tracks
            .iter()
            .map(|(id, ty, pos, act, modes)| NodeSeries {
                id: *id,
                node_type: *ty,
                history: (t + 1 - history..=t).map(|k| frame(pos, act, k)).collect(),
                future: (t + 1..=t + horizon).map(|k| frame(pos, act, k)).collect(),
                mode: modes.map(|m| m[t]),
            })
            .collect();
        let graph = build_graph(
            tracks.iter().map(|(id, ty, pos, _, _)| GraphNode {
                id: *id,
                node_type: *ty,
                state: pos[t],
            }),
            radius,
        )?;
        out.push(TrainingExample {
            play_id: play.play_id.clone(),
            t,
            dt: play.dt,
            agent_id: play.agent_id,
            nodes,
            graph,
        });
    }
    Ok(out)
}

pub fn window_dataset(
    plays: &[Play],
    history: usize,
    horizon: usize,
    radius: f64,
) -> Result<Windowed> {
    let mut out = Windowed::default();
    for play in plays {
        if play.frames() < history + horizon + 1 {
            out.skipped.push(play.play_id.clone());
            continue;
        }
        out.examples
            .extend(window_play(play, history, horizon, radius)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::play::PlayerTrack;
    use crate::dynamics::propagate;
    use crate::graph::{Role, Team};

    fn play(frames: usize) -> Play {
        let track = |id: u32, team, w: f64| PlayerTrack {
            id,
            team,
            role: Role::SF,
            positions: (0..frames)
                .map(|k| CourtState::new(3.0 + 0.05 * k as f64, w + 0.01 * ((k * k) % 7) as f64))
                .collect(),
            modes: None,
        };
        Play {
            play_id: format!("len{frames}"),
            game_id: None,
            dt: 0.04,
            agent_id: 1,
            players: vec![
                track(1, Team::Home, 2.0),
                track(2, Team::Away, 4.0),
                track(3, Team::Home, 9.0),
            ],
        }
    }

    #[test]
    fn window_counts() {
        // frames 0..=100
        assert_eq!(window_play(&play(101), 8, 15, 2.0).unwrap().len(), 78);
        assert_eq!(window_count(100, 8, 15), 78);
        // frames 0..=H+S
        assert_eq!(window_play(&play(8 + 15 + 1), 8, 15, 2.0).unwrap().len(), 1);
        let w = window_dataset(&[play(101), play(20)], 8, 15, 2.0).unwrap();
        assert_eq!(w.examples.len(), 78);
        assert_eq!(w.skipped, vec!["len20".to_string()]);
    }

    #[test]
    fn horizon_of_15_is_600ms() {
        let ex = &window_play(&play(40), 8, 15, 2.0).unwrap()[0];
        assert!((ex.horizon() as f64 * ex.dt - 0.6).abs() < 1e-12);
        assert_eq!(ex.history_len(), 8);
    }

    #[test]
    fn example_layout() {
        let p = play(40);
        let examples = window_play(&p, 4, 5, 2.0).unwrap();
        let ex = &examples[0];
        assert_eq!(ex.t, 4);
        assert_eq!(ex.agent().node_type, NodeType::Agent);
        assert_eq!(ex.humans().count(), 2);
        let n = ex.node(2).unwrap();
        assert_eq!(n.history.last().unwrap().state, p.players[1].positions[4]);
        assert_eq!(n.future[0].state, p.players[1].positions[5]);
        // graph at t: players 1 and 2 are 2 m apart.
        assert!(ex.graph.has_edge(1, 2));
        assert!(!ex.graph.has_edge(1, 3));
    }

    #[test]
    fn frames_reconstruct_positions() {
        for ex in window_play(&play(40), 4, 5, 2.0).unwrap() {
            for n in &ex.nodes {
                let frames: Vec<_> = n.history.iter().chain(&n.future).collect();
                for w in frames.windows(2) {
                    let next = propagate(w[0].state, w[1].action, ex.dt).unwrap();
                    assert!(next.distance(&w[1].state) <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn agent_future_swap() {
        let ex = &window_play(&play(40), 4, 5, 2.0).unwrap()[3];
        let still = vec![CourtAction::default(); 5];
        let swapped = ex.with_agent_future(&still).unwrap();
        let a = swapped.agent();
        assert!(a.future.iter().all(|f| f.state == a.current().state));
        assert_eq!(swapped.node(2).unwrap(), ex.node(2).unwrap());
        assert!(ex.with_agent_future(&still[..3]).is_err());
    }
}
