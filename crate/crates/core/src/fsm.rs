//! Per-node protocol state machine.
//!
//! A node is a Mealy machine over three states (`idle`, `route_req`,
//! `btl_manage`). Each handler takes the node's state by mutable reference and
//! returns the [`Action`]s the node emits; nothing here touches the network
//! directly, so every handler can be exercised without the simulator.
//!
//! Forwarding rules for an exploring bottle, in order:
//! 1. the destination is a neighbor: hand the bottle to it;
//! 2. the routing table knows the destination through an unvisited neighbor:
//!    follow that entry;
//! 3. otherwise pick uniformly among neighbors not yet in the history.
//!
//! Nodes absent from the history are the only candidates, so a bottle's walk
//! is always a simple path and a bottle with no unvisited neighbor dies.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Bottle, BottleId, DataPacket, FsmState, NodeId, NodeState, PendingRequest, RouteEntry,
    RoutingTable, Tick,
};
use crate::error::{Error, Result};

/// Tunables shared by every node in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// A bottle is dropped once its history reaches this many hops.
    pub hop_limit: u32,
    /// Ticks the source waits for a bottle to come back.
    pub timeout: Tick,
    /// Fresh bottles sent after the first one times out.
    pub retry_limit: u32,
    /// Packets one pending discovery may hold.
    pub queue_cap: usize,
    pub per_hop_latency: Tick,
    pub beacon_period: Tick,
}

impl ProtocolConfig {
    /// Defaults for a network of `nodes` nodes: hop limit 4|V|, a timeout long
    /// enough for a full out-and-back walk, three retries.
    pub fn for_network(nodes: usize) -> Self {
        let per_hop_latency = 1;
        let hop_limit = (4 * nodes.max(1)).min(u32::MAX as usize) as u32;
        ProtocolConfig {
            hop_limit,
            timeout: 2 * hop_limit as Tick * per_hop_latency,
            retry_limit: 3,
            queue_cap: 64,
            per_hop_latency,
            beacon_period: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EliminationReason {
    HopLimit,
    DeadEnd,
    /// The link to the next node was down.
    LinkFailure,
    Malformed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    QueueFull,
    Inaccessible,
    /// Forwarding failed and a route-failure bottle went back to the source.
    RouteFailure,
    TooManyHops,
}

/// What a node asks the outside world to do.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send {
        bottle: Bottle,
        to: NodeId,
    },
    SendData {
        packet: DataPacket,
        to: NodeId,
    },
    Eliminate {
        btl_id: BottleId,
        reason: EliminationReason,
    },
    SetTimer {
        btl_id: BottleId,
        deadline: Tick,
    },
    DeclareInaccessible {
        dest: NodeId,
    },
    TableUpdated {
        dest: NodeId,
        entry: RouteEntry,
    },
    RouteRemoved {
        dest: NodeId,
    },
    /// A new discovery (not a retry) began at this node.
    DiscoveryStarted {
        dest: NodeId,
    },
    /// A pending discovery was answered by a returning bottle.
    RouteFound {
        dest: NodeId,
        path: Vec<NodeId>,
    },
    DropData {
        packet: DataPacket,
        reason: DropReason,
    },
    NeighborUp {
        peer: NodeId,
    },
    NeighborDown {
        peer: NodeId,
    },
}

/// The transition function. Pending bottles take priority over pending packets.
pub fn next_state(_current: FsmState, pkt_queue_empty: bool, btl_queue_empty: bool) -> FsmState {
    if !btl_queue_empty {
        FsmState::BtlManage
    } else if !pkt_queue_empty {
        FsmState::RouteReq
    } else {
        FsmState::Idle
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hop {
    Next(NodeId),
    DeadEnd,
}

/// Uniform choice among neighbors that are not in `history`.
pub fn choose_next_hop<R: Rng + ?Sized>(
    nbors: &BTreeSet<NodeId>,
    history: &[NodeId],
    rng: &mut R,
) -> Hop {
    let candidates: Vec<NodeId> = nbors
        .iter()
        .copied()
        .filter(|n| !history.contains(n))
        .collect();
    if candidates.is_empty() {
        return Hop::DeadEnd;
    }
    // u32 keeps the draw identical on 32- and 64-bit targets.
    let pick = rng.random_range(0..candidates.len() as u32);
    Hop::Next(candidates[pick as usize])
}

/// Next hop for an exploring bottle: direct neighbor, then known route, then random.
fn steer<R: Rng + ?Sized>(node: &NodeState, dest: NodeId, history: &[NodeId], rng: &mut R) -> Hop {
    let fresh = |n: NodeId| node.nbors.contains(&n) && !history.contains(&n);
    if fresh(dest) {
        return Hop::Next(dest);
    }
    if let Some(entry) = node.rtab.get(dest) {
        if fresh(entry.next_hop) {
            return Hop::Next(entry.next_hop);
        }
    }
    choose_next_hop(&node.nbors, history, rng)
}

/// Harvests routes from a bottle's history into `rtab`.
///
/// With `me` at index `i`, every earlier node `history[j]` is reachable in
/// `i - j` hops through `history[i - 1]`, and every later node in `j - i` hops
/// through `history[i + 1]`. A side is skipped when its adjacent node is not a
/// current neighbor. Returns the entries that were installed.
pub fn harvest_history(
    rtab: &mut RoutingTable,
    history: &[NodeId],
    me: NodeId,
    nbors: &BTreeSet<NodeId>,
) -> Result<Vec<(NodeId, RouteEntry)>> {
    let idx = history.iter().position(|&n| n == me).ok_or_else(|| {
        Error::PreconditionViolation(format!("node {me} is not in the bottle history"))
    })?;
    let mut installed = Vec::new();
    if idx > 0 && nbors.contains(&history[idx - 1]) {
        let next_hop = history[idx - 1];
        for (j, &dest) in history[..idx].iter().enumerate().rev() {
            let entry = RouteEntry {
                next_hop,
                hop_count: (idx - j) as u32,
            };
            if rtab.offer(dest, entry) {
                installed.push((dest, entry));
            }
        }
    }
    if idx + 1 < history.len() && nbors.contains(&history[idx + 1]) {
        let next_hop = history[idx + 1];
        for (j, &dest) in history.iter().enumerate().skip(idx + 1) {
            let entry = RouteEntry {
                next_hop,
                hop_count: (j - idx) as u32,
            };
            if rtab.offer(dest, entry) {
                installed.push((dest, entry));
            }
        }
    }
    Ok(installed)
}

/// Pure form of [`harvest_history`]: returns the updated table and one
/// `TableUpdated` action per installed entry.
pub fn update_table_from_history(
    rtab: &RoutingTable,
    history: &[NodeId],
    me: NodeId,
    nbors: &BTreeSet<NodeId>,
) -> Result<(RoutingTable, Vec<Action>)> {
    let mut table = rtab.clone();
    let installed = harvest_history(&mut table, history, me, nbors)?;
    Ok((table, table_actions(installed)))
}

fn table_actions(installed: Vec<(NodeId, RouteEntry)>) -> Vec<Action> {
    installed
        .into_iter()
        .map(|(dest, entry)| Action::TableUpdated { dest, entry })
        .collect()
}

/// Sends a freshly made bottle from its source and arms the retry timer.
fn launch<R: Rng + ?Sized>(
    node: &mut NodeState,
    dest: NodeId,
    now: Tick,
    cfg: &ProtocolConfig,
    rng: &mut R,
    out: &mut Vec<Action>,
) -> Result<BottleId> {
    let bottle = Bottle::new(node.nid, dest, node.next_seq())?;
    let btl_id = bottle.btl_id;
    match steer(node, dest, &bottle.history, rng) {
        Hop::Next(to) => out.push(Action::Send { bottle, to }),
        Hop::DeadEnd => out.push(Action::Eliminate {
            btl_id,
            reason: EliminationReason::DeadEnd,
        }),
    }
    out.push(Action::SetTimer {
        btl_id,
        deadline: now + cfg.timeout,
    });
    Ok(btl_id)
}

/// Queues `packet` (if any) on the discovery for `dest`, starting one if needed.
fn discover<R: Rng + ?Sized>(
    node: &mut NodeState,
    dest: NodeId,
    packet: Option<DataPacket>,
    now: Tick,
    cfg: &ProtocolConfig,
    rng: &mut R,
    out: &mut Vec<Action>,
) -> Result<()> {
    if let Some(id) = node.pending_for(dest) {
        if let Some(packet) = packet {
            let pending = node.pending.get_mut(&id).expect("pending entry just found");
            if pending.queued_packets.len() < cfg.queue_cap {
                pending.queued_packets.push(packet);
            } else {
                reject_packet(node, packet, DropReason::QueueFull, out);
            }
        }
        return Ok(());
    }
    out.push(Action::DiscoveryStarted { dest });
    let btl_id = launch(node, dest, now, cfg, rng, out)?;
    let queued_packets = packet.into_iter().collect();
    node.pending.insert(
        btl_id,
        PendingRequest {
            dest,
            retries_used: 0,
            deadline: now + cfg.timeout,
            queued_packets,
        },
    );
    Ok(())
}

/// Drops a packet. Packets forwarded on behalf of another source also send a
/// route-failure bottle back along the packet's trail.
fn reject_packet(
    node: &mut NodeState,
    packet: DataPacket,
    reason: DropReason,
    out: &mut Vec<Action>,
) {
    if packet.src != node.nid {
        if let Some(bottle) = failure_bottle(node, &packet) {
            let to = bottle.history[bottle.history.len() - 2];
            if node.nbors.contains(&to) {
                out.push(Action::Send { bottle, to });
            } else {
                out.push(Action::Eliminate {
                    btl_id: bottle.btl_id,
                    reason: EliminationReason::LinkFailure,
                });
            }
        }
    }
    out.push(Action::DropData { packet, reason });
}

/// Builds the route-failure bottle for `packet`, whose history is the loop-free
/// part of the packet's trail ending at this node.
fn failure_bottle(node: &mut NodeState, packet: &DataPacket) -> Option<Bottle> {
    let mut history: Vec<NodeId> = Vec::with_capacity(packet.trail.len());
    for &n in &packet.trail {
        if let Some(pos) = history.iter().position(|&h| h == n) {
            history.truncate(pos);
        }
        history.push(n);
    }
    if history.last() != Some(&node.nid) {
        history.push(node.nid);
    }
    if history.len() < 2 || history[0] != packet.src {
        return None;
    }
    Some(Bottle {
        src: packet.src,
        dest: packet.dest,
        btl_id: BottleId::new(node.nid, node.next_seq()),
        rf: false,
        failure: true,
        history,
    })
}

/// Handles one packet from `pkt_queue`: send along a known route, or start a discovery.
pub fn handle_route_request<R: Rng + ?Sized>(
    node: &mut NodeState,
    packet: DataPacket,
    now: Tick,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<Vec<Action>> {
    let mut out = Vec::new();
    if packet.dest == node.nid {
        return Ok(out);
    }
    if packet.hops() >= cfg.hop_limit as usize {
        out.push(Action::DropData {
            packet,
            reason: DropReason::TooManyHops,
        });
        return Ok(out);
    }
    if let Some(entry) = node.rtab.get(packet.dest) {
        out.push(Action::SendData {
            packet,
            to: entry.next_hop,
        });
        return Ok(out);
    }
    let dest = packet.dest;
    discover(node, dest, Some(packet), now, cfg, rng, &mut out)?;
    Ok(out)
}

/// Handles one bottle from `btl_queue`: harvest its history, then regulate and
/// forward it (exploring) or relay it toward its source (returning).
pub fn handle_bottle<R: Rng + ?Sized>(
    node: &mut NodeState,
    mut bottle: Bottle,
    now: Tick,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<Vec<Action>> {
    bottle.validate()?;
    let me = node.nid;
    let mut out = Vec::new();

    if !bottle.is_returning() {
        if bottle.history.contains(&me) {
            return Err(Error::MalformedBottle(format!(
                "{} revisits node {me}",
                bottle.btl_id
            )));
        }
        bottle.history.push(me);
        let installed = harvest_history(&mut node.rtab, &bottle.history, me, &node.nbors)?;
        out.extend(table_actions(installed));

        if me == bottle.dest {
            bottle.rf = true;
            let to = bottle.history[bottle.history.len() - 2];
            relay(node, bottle, to, &mut out);
            return Ok(out);
        }
        if bottle.hops() >= cfg.hop_limit as usize {
            out.push(Action::Eliminate {
                btl_id: bottle.btl_id,
                reason: EliminationReason::HopLimit,
            });
            return Ok(out);
        }
        match steer(node, bottle.dest, &bottle.history, rng) {
            Hop::Next(to) => out.push(Action::Send { bottle, to }),
            Hop::DeadEnd => out.push(Action::Eliminate {
                btl_id: bottle.btl_id,
                reason: EliminationReason::DeadEnd,
            }),
        }
        return Ok(out);
    }

    let idx = bottle
        .history
        .iter()
        .position(|&n| n == me)
        .ok_or_else(|| {
            Error::MalformedBottle(format!(
                "{} returned to node {me} off its path",
                bottle.btl_id
            ))
        })?;
    let installed = harvest_history(&mut node.rtab, &bottle.history, me, &node.nbors)?;
    out.extend(table_actions(installed));

    if bottle.failure {
        // Anyone still routing toward dest over the broken stretch forgets it.
        let downstream = bottle.history.get(idx + 1).copied();
        if downstream.is_some() && node.rtab.get(bottle.dest).map(|e| e.next_hop) == downstream {
            node.rtab.remove(bottle.dest);
            out.push(Action::RouteRemoved { dest: bottle.dest });
        }
    }

    if idx > 0 {
        let to = bottle.history[idx - 1];
        relay(node, bottle, to, &mut out);
        return Ok(out);
    }

    // Back at the source.
    let dest = bottle.dest;
    if bottle.rf {
        let answered = if node.pending.contains_key(&bottle.btl_id) {
            Some(bottle.btl_id)
        } else {
            node.pending_for(dest)
        };
        if let Some(id) = answered {
            let pending = node.pending.remove(&id).expect("pending entry just found");
            out.push(Action::RouteFound {
                dest,
                path: bottle.history,
            });
            for packet in pending.queued_packets {
                out.extend(handle_route_request(node, packet, now, cfg, rng)?);
            }
        }
    } else {
        if node.rtab.remove(dest).is_some() {
            out.push(Action::RouteRemoved { dest });
        }
        discover(node, dest, None, now, cfg, rng, &mut out)?;
    }
    Ok(out)
}

fn relay(node: &NodeState, bottle: Bottle, to: NodeId, out: &mut Vec<Action>) {
    if node.nbors.contains(&to) {
        out.push(Action::Send { bottle, to });
    } else {
        out.push(Action::Eliminate {
            btl_id: bottle.btl_id,
            reason: EliminationReason::LinkFailure,
        });
    }
}

/// The retry timer for `btl_id` fired without the bottle coming back.
///
/// Returns [`Error::UnknownBottle`] for a stale timer (the request was already
/// answered or superseded); callers should ignore it.
pub fn on_timeout<R: Rng + ?Sized>(
    node: &mut NodeState,
    btl_id: BottleId,
    now: Tick,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<Vec<Action>> {
    let mut pending = node
        .pending
        .remove(&btl_id)
        .ok_or(Error::UnknownBottle(btl_id))?;
    let mut out = Vec::new();
    if pending.retries_used < cfg.retry_limit {
        let fresh = launch(node, pending.dest, now, cfg, rng, &mut out)?;
        pending.retries_used += 1;
        pending.deadline = now + cfg.timeout;
        node.pending.insert(fresh, pending);
    } else {
        out.push(Action::DeclareInaccessible { dest: pending.dest });
        for packet in pending.queued_packets {
            out.push(Action::DropData {
                packet,
                reason: DropReason::Inaccessible,
            });
        }
    }
    Ok(out)
}

/// What could not be delivered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Undelivered {
    Bottle(Bottle),
    Data(DataPacket),
}

/// A send to `failed_neighbor` was refused: the link or the neighbor is down.
pub fn on_delivery_failure<R: Rng + ?Sized>(
    node: &mut NodeState,
    failed: Undelivered,
    failed_neighbor: NodeId,
    now: Tick,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<Vec<Action>> {
    let mut out = Vec::new();
    for dest in node.rtab.purge_via(failed_neighbor) {
        out.push(Action::RouteRemoved { dest });
    }
    if node.nbors.remove(&failed_neighbor) {
        out.push(Action::NeighborDown {
            peer: failed_neighbor,
        });
    }
    match failed {
        Undelivered::Bottle(bottle) => out.push(Action::Eliminate {
            btl_id: bottle.btl_id,
            reason: EliminationReason::LinkFailure,
        }),
        Undelivered::Data(packet) if packet.src == node.nid => {
            out.extend(handle_route_request(node, packet, now, cfg, rng)?);
        }
        Undelivered::Data(packet) => {
            reject_packet(node, packet, DropReason::RouteFailure, &mut out)
        }
    }
    Ok(out)
}
