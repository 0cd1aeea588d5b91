//! Ground-truth shortest paths and connectivity for checking the protocol.
//!
//! Distances are recomputed from the live edge list on every call; nothing is
//! shared with the routing logic.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::domain::NodeId;
use crate::error::{Error, Result};
use crate::network::Topology;

fn live_adjacency(t: &Topology) -> BTreeMap<NodeId, Vec<NodeId>> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = t.nodes().map(|n| (n, Vec::new())).collect();
    for link in t.live_edges() {
        let (a, b) = link.ends();
        adj.get_mut(&a).expect("endpoint exists").push(b);
        adj.get_mut(&b).expect("endpoint exists").push(a);
    }
    adj
}

fn bfs(adj: &BTreeMap<NodeId, Vec<NodeId>>, from: NodeId) -> BTreeMap<NodeId, u32> {
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for &v in &adj[&u] {
            if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(v) {
                slot.insert(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Hop count of a shortest live path, or `None` when `b` is unreachable from `a`.
pub fn bfs_distance(t: &Topology, a: NodeId, b: NodeId) -> Result<Option<u32>> {
    for n in [a, b] {
        if !t.contains(n) {
            return Err(Error::UnknownNode(n));
        }
    }
    Ok(bfs(&live_adjacency(t), a).get(&b).copied())
}

pub fn connected(t: &Topology, a: NodeId, b: NodeId) -> Result<bool> {
    Ok(bfs_distance(t, a, b)?.is_some())
}

/// Distances from `a` to every reachable node (including `a` at 0).
pub fn distances_from(t: &Topology, a: NodeId) -> Result<BTreeMap<NodeId, u32>> {
    if !t.contains(a) {
        return Err(Error::UnknownNode(a));
    }
    Ok(bfs(&live_adjacency(t), a))
}

/// All-pairs distances over live links.
pub fn all_distances(t: &Topology) -> BTreeMap<NodeId, BTreeMap<NodeId, u32>> {
    let adj = live_adjacency(t);
    t.nodes().map(|n| (n, bfs(&adj, n))).collect()
}

/// Connected components of the live graph, ordered by smallest member.
pub fn components(t: &Topology) -> Vec<BTreeSet<NodeId>> {
    let adj = live_adjacency(t);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in t.nodes() {
        if seen.contains(&n) {
            continue;
        }
        let comp: BTreeSet<NodeId> = bfs(&adj, n).into_keys().collect();
        seen.extend(comp.iter().copied());
        out.push(comp);
    }
    out
}

/// True when every consecutive pair in `path` is joined by a live link and no node repeats.
pub fn is_simple_path(t: &Topology, path: &[NodeId]) -> bool {
    let distinct: BTreeSet<_> = path.iter().collect();
    !path.is_empty()
        && distinct.len() == path.len()
        && path.iter().all(|&n| t.is_up(n))
        && path.windows(2).all(|w| t.is_live(w[0], w[1]))
}
