//! Trace checkers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use miabnet::engine::{Fault, FinishReason, Payload};
use miabnet::fsm::EliminationReason;
use miabnet::{oracle, Bottle, BottleId, NodeId, Record, Scenario, Topology, Trace};

pub fn finished_quiescent(trace: &Trace) -> bool {
    matches!(
        trace.events().last().map(|e| &e.record),
        Some(Record::Finished {
            reason: FinishReason::Quiescent
        })
    )
}

fn apply_fault(t: &mut Topology, fault: Fault) {
    match fault {
        Fault::FailNode { node } => t.fail_node(node),
        Fault::RestoreNode { node } => t.restore_node(node),
        Fault::FailLink { a, b } => t.fail_link(a, b),
        Fault::RestoreLink { a, b } => t.restore_link(a, b),
    }
    .unwrap();
}

/// Every `Sent` pairs with exactly one `Received` or `DeliveryFailed`, by the right nodes.
pub fn check_conservation(trace: &Trace, latency: u64) -> Vec<String> {
    let mut out = Vec::new();
    let mut sent: BTreeMap<u64, (u64, NodeId, NodeId)> = BTreeMap::new();
    let mut resolved: BTreeMap<u64, u32> = BTreeMap::new();
    for e in trace {
        let node = e.node;
        match e.record {
            Record::Sent { msg, to, .. } => {
                if sent.insert(msg, (e.at, node.unwrap(), to)).is_some() {
                    out.push(format!("message {msg} sent twice"));
                }
            }
            Record::Received { msg, from } => {
                *resolved.entry(msg).or_default() += 1;
                match sent.get(&msg) {
                    Some(&(at, src, to)) => {
                        if src != from || Some(to) != node || e.at != at + latency {
                            out.push(format!("message {msg} received inconsistently"));
                        }
                    }
                    None => out.push(format!("message {msg} received before it was sent")),
                }
            }
            Record::DeliveryFailed { msg, to } => {
                *resolved.entry(msg).or_default() += 1;
                match sent.get(&msg) {
                    Some(&(_, src, dst)) if Some(src) == node && dst == to => {}
                    _ => out.push(format!("message {msg} failed inconsistently")),
                }
            }
            _ => {}
        }
    }
    let complete = finished_quiescent(trace);
    for msg in sent.keys() {
        match resolved.get(msg).copied().unwrap_or(0) {
            1 => {}
            0 if !complete => {}
            k => out.push(format!("message {msg} resolved {k} times")),
        }
    }
    out
}

#[derive(Clone, Debug)]
enum Life {
    Held(NodeId, Option<Bottle>),
    InFlight(u64, Bottle),
    Lost,
    Dead,
}

/// Bottle-level checks: simple histories, hop cap, faithful return, and each
/// bottle's life ending in exactly one terminal event.
pub fn check_bottles(trace: &Trace, scenario: &Scenario) -> Vec<String> {
    let hop_limit = scenario.protocol.hop_limit as usize;
    let mut out = Vec::new();
    let mut life: BTreeMap<BottleId, Life> = BTreeMap::new();
    let mut msg_bottle: BTreeMap<u64, BottleId> = BTreeMap::new();
    let mut frozen: BTreeMap<BottleId, Vec<NodeId>> = BTreeMap::new();
    for e in trace {
        let Some(node) = e.node else { continue };
        match &e.record {
            Record::Sent {
                msg,
                to,
                payload: Payload::Bottle(b),
            } => {
                let distinct: BTreeSet<_> = b.history.iter().collect();
                if distinct.len() != b.history.len() || b.history[0] != b.src {
                    out.push(format!(
                        "{} has a non-simple history {:?}",
                        b.btl_id, b.history
                    ));
                }
                if b.rf && b.history.last() != Some(&b.dest) {
                    out.push(format!(
                        "{} found a route that does not end at dest",
                        b.btl_id
                    ));
                }
                if !b.is_returning() {
                    if b.hops() > hop_limit {
                        out.push(format!("{} exceeded the hop limit", b.btl_id));
                    }
                    if b.history.last() != Some(&node) || b.history.contains(to) {
                        out.push(format!("{} forwarded badly from {node} to {to}", b.btl_id));
                    }
                } else {
                    let idx = b.history.iter().position(|&n| n == node);
                    if idx.is_none_or(|i| i == 0 || b.history[i - 1] != *to) {
                        out.push(format!("{} strayed from its history at {node}", b.btl_id));
                    }
                    if let Some(old) = frozen.get(&b.btl_id) {
                        if b.rf && old != &b.history {
                            out.push(format!("{} history changed on the way back", b.btl_id));
                        }
                    }
                    if b.rf {
                        frozen.insert(b.btl_id, b.history.clone());
                    }
                }
                match life.get(&b.btl_id) {
                    None | Some(Life::Held(..)) => {
                        if let Some(Life::Held(h, _)) = life.get(&b.btl_id) {
                            if *h != node {
                                out.push(format!("{} sent by {node} but held by {h}", b.btl_id));
                            }
                        }
                        life.insert(b.btl_id, Life::InFlight(*msg, b.clone()));
                        msg_bottle.insert(*msg, b.btl_id);
                    }
                    Some(other) => out.push(format!("{} sent while {other:?}", b.btl_id)),
                }
            }
            Record::Received { msg, .. } => {
                if let Some(id) = msg_bottle.get(msg) {
                    match life.get(id) {
                        Some(Life::InFlight(m, b)) if m == msg => {
                            let b = b.clone();
                            life.insert(*id, Life::Held(node, Some(b)));
                        }
                        other => out.push(format!("{id} received while {other:?}")),
                    }
                }
            }
            Record::DeliveryFailed { msg, .. } => {
                if let Some(id) = msg_bottle.get(msg) {
                    life.insert(*id, Life::Lost);
                }
            }
            Record::Eliminated { btl_id, reason } => match life.get(btl_id) {
                None if *reason == EliminationReason::DeadEnd => {
                    life.insert(*btl_id, Life::Dead);
                }
                Some(Life::Held(..)) => {
                    life.insert(*btl_id, Life::Dead);
                }
                Some(Life::Lost) if *reason == EliminationReason::LinkFailure => {
                    life.insert(*btl_id, Life::Dead);
                }
                other => out.push(format!("{btl_id} eliminated ({reason:?}) while {other:?}")),
            },
            _ => {}
        }
    }
    if finished_quiescent(trace) {
        for (id, l) in life {
            match l {
                Life::Dead => {}
                Life::Held(n, Some(b)) if b.is_returning() && n == b.src => {}
                other => out.push(format!("{id} never terminated: {other:?}")),
            }
        }
    }
    out
}

/// Replays tables, neighbor sets and faults; every entry must point at a
/// current neighbor, and (when `with_distance`) be no shorter than the true distance.
pub fn check_admissibility(trace: &Trace, initial: &Topology, with_distance: bool) -> Vec<String> {
    let mut out = Vec::new();
    let mut topo = initial.clone();
    let mut dist = oracle::all_distances(&topo);
    let mut nbors: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut tables: BTreeMap<NodeId, BTreeMap<NodeId, (NodeId, u32)>> = BTreeMap::new();
    let events = trace.events();
    for (i, e) in events.iter().enumerate() {
        match (&e.record, e.node) {
            (Record::Fault { fault }, _) => {
                apply_fault(&mut topo, *fault);
                dist = oracle::all_distances(&topo);
            }
            (Record::NeighborUp { peer }, Some(n)) => {
                nbors.entry(n).or_default().insert(*peer);
            }
            (Record::NeighborDown { peer }, Some(n)) => {
                nbors.entry(n).or_default().remove(peer);
            }
            (
                Record::TableUpdated {
                    dest,
                    next_hop,
                    hops,
                },
                Some(n),
            ) => {
                tables
                    .entry(n)
                    .or_default()
                    .insert(*dest, (*next_hop, *hops));
                if with_distance {
                    match dist[&n].get(dest) {
                        Some(&d) if *hops >= d => {}
                        d => out.push(format!(
                            "seq {}: {n} holds {dest} at {hops} hops, true distance {d:?}",
                            e.seq
                        )),
                    }
                }
            }
            (Record::RouteRemoved { dest }, Some(n)) => {
                tables.entry(n).or_default().remove(dest);
            }
            _ => {}
        }
        let Some(n) = e.node else { continue };
        let in_purge =
            |r: &Record| matches!(r, Record::RouteRemoved { .. } | Record::NeighborDown { .. });
        let next_same = events
            .get(i + 1)
            .is_some_and(|x| x.node == Some(n) && in_purge(&x.record));
        if in_purge(&e.record) && next_same {
            continue;
        }
        let empty = BTreeSet::new();
        let nb = nbors.get(&n).unwrap_or(&empty);
        for (dest, (hop, _)) in tables.get(&n).into_iter().flatten() {
            if !nb.contains(hop) {
                out.push(format!(
                    "seq {}: {n} routes {dest} via non-neighbor {hop}",
                    e.seq
                ));
            }
        }
    }
    out
}

/// Every request ends in exactly one delivery or drop.
pub fn check_requests(trace: &Trace) -> Vec<String> {
    let mut outcome: BTreeMap<u64, u32> = BTreeMap::new();
    let mut requested = BTreeSet::new();
    for e in trace {
        match e.record {
            Record::Request { id, .. } => {
                requested.insert(id);
            }
            Record::Delivered { id, .. } | Record::DataDropped { id, .. } => {
                *outcome.entry(id).or_default() += 1
            }
            _ => {}
        }
    }
    requested
        .into_iter()
        .filter(|id| outcome.get(id) != Some(&1))
        .map(|id| format!("request {id} resolved {:?} times", outcome.get(&id)))
        .collect()
}

/// An installed hop count only ever shrinks until the entry is removed.
pub fn check_monotone(trace: &Trace) -> Vec<String> {
    let mut out = Vec::new();
    let mut held: BTreeMap<(NodeId, NodeId), u32> = BTreeMap::new();
    for e in trace {
        let Some(n) = e.node else { continue };
        match e.record {
            Record::TableUpdated { dest, hops, .. } => {
                if let Some(old) = held.insert((n, dest), hops) {
                    if hops >= old {
                        out.push(format!(
                            "seq {}: {n} -> {dest} went from {old} to {hops}",
                            e.seq
                        ));
                    }
                }
            }
            Record::RouteRemoved { dest } => {
                held.remove(&(n, dest));
            }
            _ => {}
        }
    }
    out
}

pub fn check_all(trace: &Trace, scenario: &Scenario) -> Vec<String> {
    let mut v = check_conservation(trace, scenario.protocol.per_hop_latency);
    v.extend(check_monotone(trace));
    v.extend(check_bottles(trace, scenario));
    v.extend(check_admissibility(
        trace,
        &scenario.topology,
        scenario.faults.is_empty(),
    ));
    v
}

/// Found paths, with their source.
pub fn routes(trace: &Trace) -> Vec<(NodeId, NodeId, Vec<NodeId>)> {
    trace
        .iter()
        .filter_map(|e| match &e.record {
            Record::RouteFound { src, dest, path } => Some((*src, *dest, path.clone())),
            _ => None,
        })
        .collect()
}
