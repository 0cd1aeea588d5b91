//! Post-hoc analysis of a trace: discovery success and latency, route stretch,
//! bottle overhead and routing-table optimality.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{NodeId, Tick, BOTTLE_HEADER_LEN};
use crate::engine::{Payload, Record, Trace};
use crate::error::{Error, Result};
use crate::network::Topology;
use crate::oracle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub discoveries_attempted: u64,
    pub discoveries_succeeded: u64,
    pub discoveries_failed: u64,
    /// Ticks from discovery start to the route-found bottle reaching the source.
    pub mean_discovery_latency: Option<f64>,
    /// Found hops / shortest hops, successful discoveries only.
    pub mean_stretch: Option<f64>,
    pub total_bottle_bytes: u64,
    pub bottle_sends: u64,
    /// Bottles created by sources, retries included.
    pub bottles_launched: u64,
    pub packets_requested: u64,
    pub packets_delivered: u64,
    /// Fraction of routing-table entries at the end of the run whose hop count is optimal.
    pub table_optimality: Option<f64>,
}

impl RunSummary {
    pub fn mean_bottle_bytes(&self) -> Option<f64> {
        (self.bottle_sends > 0).then(|| self.total_bottle_bytes as f64 / self.bottle_sends as f64)
    }

    /// Two-column aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let rows = [
            (
                "discoveries attempted",
                self.discoveries_attempted.to_string(),
            ),
            (
                "discoveries succeeded",
                self.discoveries_succeeded.to_string(),
            ),
            ("discoveries failed", self.discoveries_failed.to_string()),
            ("mean discovery latency", opt(self.mean_discovery_latency)),
            ("mean stretch", opt(self.mean_stretch)),
            ("bottles launched", self.bottles_launched.to_string()),
            ("bottle sends", self.bottle_sends.to_string()),
            ("total bottle bytes", self.total_bottle_bytes.to_string()),
            ("mean bottle bytes", opt(self.mean_bottle_bytes())),
            ("packets requested", self.packets_requested.to_string()),
            ("packets delivered", self.packets_delivered.to_string()),
            ("table optimality", opt(self.table_optimality)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>12}");
        }
        out
    }
}

/// Routing tables reconstructed from a trace: node -> dest -> (next hop, hops).
pub type Tables = BTreeMap<NodeId, BTreeMap<NodeId, (NodeId, u32)>>;

/// Replays table changes for every record with `seq < until` (all records when `None`).
pub fn tables_at(trace: &Trace, until: Option<u64>) -> Tables {
    let mut tables = Tables::new();
    for ev in trace.iter().take_while(|e| until.is_none_or(|u| e.seq < u)) {
        let Some(node) = ev.node else { continue };
        match ev.record {
            Record::TableUpdated {
                dest,
                next_hop,
                hops,
            } => {
                tables
                    .entry(node)
                    .or_default()
                    .insert(dest, (next_hop, hops));
            }
            Record::RouteRemoved { dest } => {
                if let Some(t) = tables.get_mut(&node) {
                    t.remove(&dest);
                }
            }
            _ => {}
        }
    }
    tables
}

/// Fraction of entries whose hop count equals the shortest-path distance.
pub fn table_optimality(tables: &Tables, topology: &Topology) -> Option<f64> {
    let dist = oracle::all_distances(topology);
    let (mut optimal, mut total) = (0u64, 0u64);
    for (node, table) in tables {
        for (dest, &(_, hops)) in table {
            total += 1;
            if dist.get(node).and_then(|d| d.get(dest)) == Some(&hops) {
                optimal += 1;
            }
        }
    }
    (total > 0).then(|| optimal as f64 / total as f64)
}

/// Sum of `11 + 2 * history length` over every bottle transmission.
pub fn bottle_bytes(trace: &Trace) -> u64 {
    trace
        .iter()
        .filter_map(|e| match &e.record {
            Record::Sent {
                payload: Payload::Bottle(b),
                ..
            } => Some((BOTTLE_HEADER_LEN + 2 * b.history.len()) as u64),
            _ => None,
        })
        .sum()
}

/// Delivered hops over shortest hops, per request id.
pub fn delivery_stretch(trace: &Trace, topology: &Topology) -> BTreeMap<u64, f64> {
    let dist = oracle::all_distances(topology);
    trace
        .iter()
        .filter_map(|e| match e.record {
            Record::Delivered {
                id,
                src,
                dest,
                hops,
            } if src != dest => {
                let best = *dist.get(&src)?.get(&dest)?;
                Some((id, hops as f64 / best as f64))
            }
            _ => None,
        })
        .collect()
}

/// Sequence number of the `Request` record for request `id`.
pub fn request_seq(trace: &Trace, id: u64) -> Option<u64> {
    trace.iter().find_map(|e| match e.record {
        Record::Request { id: rid, .. } if rid == id => Some(e.seq),
        _ => None,
    })
}

pub fn summarize(trace: &Trace, topology: &Topology) -> Result<RunSummary> {
    if !trace.is_complete() {
        return Err(Error::IncompleteTrace(format!(
            "{} records and no final record",
            trace.len()
        )));
    }
    let dist = oracle::all_distances(topology);
    let mut open: BTreeMap<(NodeId, NodeId), Vec<Tick>> = BTreeMap::new();
    let mut s = RunSummary {
        discoveries_attempted: 0,
        discoveries_succeeded: 0,
        discoveries_failed: 0,
        mean_discovery_latency: None,
        mean_stretch: None,
        total_bottle_bytes: 0,
        bottle_sends: 0,
        bottles_launched: 0,
        packets_requested: 0,
        packets_delivered: 0,
        table_optimality: None,
    };
    let mut latencies = Vec::new();
    let mut stretches = Vec::new();
    for ev in trace {
        let node = ev.node;
        match &ev.record {
            Record::Discovery { dest } => {
                s.discoveries_attempted += 1;
                if let Some(n) = node {
                    open.entry((n, *dest)).or_default().push(ev.at);
                }
            }
            Record::RouteFound { src, dest, path } => {
                s.discoveries_succeeded += 1;
                if let Some(start) = open.get_mut(&(*src, *dest)).and_then(|v| v.pop()) {
                    latencies.push((ev.at - start) as f64);
                }
                let best = dist.get(src).and_then(|d| d.get(dest)).copied();
                if let Some(best) = best.filter(|&b| b > 0) {
                    stretches.push((path.len() - 1) as f64 / best as f64);
                }
            }
            Record::Inaccessible { src, dest } => {
                s.discoveries_failed += 1;
                if let Some(v) = open.get_mut(&(*src, *dest)) {
                    v.pop();
                }
            }
            Record::Sent {
                payload: Payload::Bottle(b),
                ..
            } => {
                s.bottle_sends += 1;
                s.total_bottle_bytes += b.wire_len() as u64;
            }
            Record::TimerSet { .. } => s.bottles_launched += 1,
            Record::Request { .. } => s.packets_requested += 1,
            Record::Delivered { .. } => s.packets_delivered += 1,
            _ => {}
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    s.mean_discovery_latency = mean(&latencies);
    s.mean_stretch = mean(&stretches);
    s.table_optimality = table_optimality(&tables_at(trace, None), topology);
    Ok(s)
}
