//! Undirected topology with injectable node and link failures, plus the hello
//! beacon that keeps each node's neighbor set in sync with it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{NodeId, NodeState};
use crate::error::{Error, Result};
use crate::fsm::Action;

/// An undirected link, stored with the smaller endpoint first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link(NodeId, NodeId);

impl Link {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            Link(a, b)
        } else {
            Link(b, a)
        }
    }

    pub fn ends(self) -> (NodeId, NodeId) {
        (self.0, self.1)
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    down_nodes: BTreeSet<NodeId>,
    down_links: BTreeSet<Link>,
    version: u64,
}

/// On-disk form: `{"nodes": [..], "edges": [[a, b], ..]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub nodes: Vec<u16>,
    pub edges: Vec<[u16; 2]>,
}

impl Topology {
    /// Builds a topology, rejecting duplicate nodes, self-loops, duplicate
    /// edges and edges naming unknown nodes.
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for n in nodes {
            if adjacency.insert(n, BTreeSet::new()).is_some() {
                return Err(Error::Config(format!("duplicate node {n}")));
            }
        }
        for (a, b) in edges {
            if a == b {
                return Err(Error::Config(format!("self-loop at node {a}")));
            }
            for end in [a, b] {
                if !adjacency.contains_key(&end) {
                    return Err(Error::UnknownNode(end));
                }
            }
            if !adjacency.get_mut(&a).expect("checked above").insert(b) {
                return Err(Error::Config(format!("duplicate edge {}", Link::new(a, b))));
            }
            adjacency.get_mut(&b).expect("checked above").insert(a);
        }
        Ok(Topology {
            adjacency,
            down_nodes: BTreeSet::new(),
            down_links: BTreeSet::new(),
            version: 0,
        })
    }

    /// Convenience constructor for tests and generators.
    pub fn from_edges(node_count: u16, edges: &[(u16, u16)]) -> Result<Self> {
        Topology::new(
            (0..node_count).map(NodeId),
            edges.iter().map(|&(a, b)| (NodeId(a), NodeId(b))),
        )
    }

    pub fn from_file(file: &TopologyFile) -> Result<Self> {
        Topology::new(
            file.nodes.iter().copied().map(NodeId),
            file.edges.iter().map(|&[a, b]| (NodeId(a), NodeId(b))),
        )
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            nodes: self.nodes().map(|n| n.0).collect(),
            edges: self.edges().map(|l| [l.0 .0, l.1 .0]).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TopologyFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("topology: {e}")))?;
        Topology::from_file(&file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("topology file serializes")
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.adjacency.contains_key(&n)
    }

    /// Every configured edge, up or down.
    pub fn edges(&self) -> impl Iterator<Item = Link> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(&a, nb)| nb.iter().filter(move |&&b| a < b).map(move |&b| Link(a, b)))
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.get(&a).is_some_and(|nb| nb.contains(&b))
    }

    /// Edges whose link and both endpoints are up.
    pub fn live_edges(&self) -> impl Iterator<Item = Link> + '_ {
        self.edges().filter(|&l| self.is_live(l.0, l.1))
    }

    pub fn is_live(&self, a: NodeId, b: NodeId) -> bool {
        self.has_edge(a, b)
            && !self.down_nodes.contains(&a)
            && !self.down_nodes.contains(&b)
            && !self.down_links.contains(&Link::new(a, b))
    }

    pub fn is_up(&self, n: NodeId) -> bool {
        self.contains(n) && !self.down_nodes.contains(&n)
    }

    pub fn neighbors(&self, n: NodeId) -> Result<BTreeSet<NodeId>> {
        let nb = self.adjacency.get(&n).ok_or(Error::UnknownNode(n))?;
        if self.down_nodes.contains(&n) {
            return Ok(BTreeSet::new());
        }
        Ok(nb.iter().copied().filter(|&m| self.is_live(n, m)).collect())
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.adjacency.get(&n).map_or(0, BTreeSet::len)
    }

    /// Incremented on every effective fault or restore.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn down_nodes(&self) -> &BTreeSet<NodeId> {
        &self.down_nodes
    }

    pub fn down_links(&self) -> &BTreeSet<Link> {
        &self.down_links
    }

    pub fn fail_node(&mut self, n: NodeId) -> Result<()> {
        self.check_node(n)?;
        if self.down_nodes.insert(n) {
            self.version += 1;
        }
        Ok(())
    }

    pub fn restore_node(&mut self, n: NodeId) -> Result<()> {
        self.check_node(n)?;
        if self.down_nodes.remove(&n) {
            self.version += 1;
        }
        Ok(())
    }

    pub fn fail_link(&mut self, a: NodeId, b: NodeId) -> Result<()> {
        self.check_edge(a, b)?;
        if self.down_links.insert(Link::new(a, b)) {
            self.version += 1;
        }
        Ok(())
    }

    pub fn restore_link(&mut self, a: NodeId, b: NodeId) -> Result<()> {
        self.check_edge(a, b)?;
        if self.down_links.remove(&Link::new(a, b)) {
            self.version += 1;
        }
        Ok(())
    }

    /// Adds an edge to the configured graph (used by generators).
    pub(crate) fn add_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        if a == b || !self.contains(a) || !self.contains(b) {
            return false;
        }
        let fresh = self.adjacency.get_mut(&a).expect("checked").insert(b);
        self.adjacency.get_mut(&b).expect("checked").insert(a);
        fresh
    }

    fn check_node(&self, n: NodeId) -> Result<()> {
        if self.contains(n) {
            Ok(())
        } else {
            Err(Error::UnknownNode(n))
        }
    }

    fn check_edge(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.has_edge(a, b) {
            Ok(())
        } else {
            Err(Error::UnknownEdge(a, b))
        }
    }
}

/// Refreshes `node.nbors` from the topology, as a hello beacon round would.
///
/// Vanished neighbors are removed along with every route through them. New
/// neighbors are only added to `nbors`; routes to them are learned later from
/// bottles.
pub fn hello_tick(topology: &Topology, node: &mut NodeState) -> Result<Vec<Action>> {
    let current = topology.neighbors(node.nid)?;
    let mut out = Vec::new();
    let vanished: Vec<NodeId> = node.nbors.difference(&current).copied().collect();
    for peer in vanished {
        node.nbors.remove(&peer);
        out.push(Action::NeighborDown { peer });
        for dest in node.rtab.purge_via(peer) {
            out.push(Action::RouteRemoved { dest });
        }
    }
    let appeared: Vec<NodeId> = current.difference(&node.nbors).copied().collect();
    for peer in appeared {
        node.nbors.insert(peer);
        out.push(Action::NeighborUp { peer });
    }
    Ok(out)
}
