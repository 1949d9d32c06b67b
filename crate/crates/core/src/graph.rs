//! Proximity scene graphs over typed nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::CourtState;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Team {
    Home,
    Away,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    C,
    PF,
    SF,
    SG,
    PG,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::C, Role::PF, Role::SF, Role::SG, Role::PG];
}

impl fmt::Display for Team {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Team::Home => "Home",
            Team::Away => "Away",
        })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::C => "C",
            Role::PF => "PF",
            Role::SF => "SF",
            Role::SG => "SG",
            Role::PG => "PG",
        })
    }
}

impl FromStr for Team {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Home" => Ok(Team::Home),
            "Away" => Ok(Team::Away),
            _ => Err(Error::Config(format!("unknown team {s:?}"))),
        }
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown role {s:?}")))
    }
}

/// Node label under which weights are shared. The future-conditioning agent
/// gets its own marker type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    Human { team: Team, role: Role },
    Agent,
}

impl NodeType {
    pub const fn human(team: Team, role: Role) -> Self {
        NodeType::Human { team, role }
    }

    /// All ten (team, role) combinations.
    pub fn all_humans() -> Vec<NodeType> {
        [Team::Home, Team::Away]
            .into_iter()
            .flat_map(|t| Role::ALL.into_iter().map(move |r| NodeType::human(t, r)))
            .collect()
    }

    pub fn is_agent(&self) -> bool {
        matches!(self, NodeType::Agent)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeType::Human { team, role } => write!(f, "{team}-{role}"),
            NodeType::Agent => f.write_str("Agent"),
        }
    }
}

impl FromStr for NodeType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "Agent" {
            return Ok(NodeType::Agent);
        }
        let (team, role) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("node type {s:?} is not Team-Role")))?;
        Ok(NodeType::human(team.parse()?, role.parse()?))
    }
}

/// Unordered pair of node types, stored with the lexicographically smaller
/// type name first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeType {
    first: NodeType,
    second: NodeType,
}

impl EdgeType {
    pub fn new(a: NodeType, b: NodeType) -> Self {
        if a.to_string() <= b.to_string() {
            Self {
                first: a,
                second: b,
            }
        } else {
            Self {
                first: b,
                second: a,
            }
        }
    }

    pub fn types(&self) -> (NodeType, NodeType) {
        (self.first, self.second)
    }

    /// Canonical string key, e.g. `Away-C—Home-PG`.
    pub fn key(&self) -> String {
        format!("{}—{}", self.first, self.second)
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: u32,
    pub node_type: NodeType,
    pub state: CourtState,
}

/// Undirected graph with an edge between every pair of distinct nodes at
/// most `radius` meters apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    radius: f64,
    nodes: Vec<GraphNode>,
    edges: BTreeSet<(u32, u32)>,
    #[serde(skip)]
    adjacency: BTreeMap<u32, Vec<u32>>,
}

/// Build the proximity graph. Distance ties at exactly `radius` are edges.
pub fn build_graph(nodes: impl IntoIterator<Item = GraphNode>, radius: f64) -> Result<SceneGraph> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!(
            "edge radius must be positive, got {radius}"
        )));
    }
    let mut nodes: Vec<GraphNode> = nodes.into_iter().collect();
    if nodes.is_empty() {
        return Err(Error::Contract(
            "scene graph needs at least one node".into(),
        ));
    }
    nodes.sort_by_key(|n| n.id);
    if let Some(w) = nodes.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Contract(format!("duplicate node id {}", w[0].id)));
    }

    let mut edges = BTreeSet::new();
    let mut adjacency: BTreeMap<u32, Vec<u32>> = nodes.iter().map(|n| (n.id, Vec::new())).collect();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if a.state.distance(&b.state) <= radius {
                edges.insert((a.id, b.id));
                adjacency.get_mut(&a.id).expect("known").push(b.id);
                adjacency.get_mut(&b.id).expect("known").push(a.id);
            }
        }
    }
    for list in adjacency.values_mut() {
        list.sort_unstable();
    }
    Ok(SceneGraph {
        radius,
        nodes,
        edges,
        adjacency,
    })
}

impl SceneGraph {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> Result<&GraphNode> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .map(|i| &self.nodes[i])
            .map_err(|_| Error::UnknownId(format!("node {id} not in scene graph")))
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, id: u32) -> Result<&[u32]> {
        self.adjacency
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownId(format!("node {id} not in scene graph")))
    }

    pub fn degree(&self, id: u32) -> Result<usize> {
        self.neighbors(id).map(<[u32]>::len)
    }

    /// Neighbors bucketed by edge type, ids ascending within each bucket.
    pub fn neighbors_by_edge_type(&self, id: u32) -> Result<BTreeMap<EdgeType, Vec<u32>>> {
        let own = self.node(id)?.node_type;
        let mut buckets: BTreeMap<EdgeType, Vec<u32>> = BTreeMap::new();
        for &n in self.neighbors(id)? {
            let et = EdgeType::new(own, self.node(n)?.node_type);
            buckets.entry(et).or_default().push(n);
        }
        Ok(buckets)
    }

    pub fn agent_adjacent(&self, id: u32, agent_id: u32) -> Result<bool> {
        self.node(id)?;
        self.node(agent_id)?;
        Ok(self.has_edge(id, agent_id))
    }

    /// Edge types present in this graph.
    pub fn edge_types(&self) -> BTreeSet<EdgeType> {
        self.edges
            .iter()
            .map(|&(a, b)| {
                let ta = self.node(a).expect("edge endpoint").node_type;
                let tb = self.node(b).expect("edge endpoint").node_type;
                EdgeType::new(ta, tb)
            })
            .collect()
    }

    /// Rebuild derived adjacency after deserialization.
    pub fn reindex(mut self) -> Self {
        let mut adjacency: BTreeMap<u32, Vec<u32>> =
            self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for &(a, b) in &self.edges {
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
        for list in adjacency.values_mut() {
            list.sort_unstable();
        }
        self.adjacency = adjacency;
        self
    }
}
