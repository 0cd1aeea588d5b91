//! Trace records and their line-delimited JSON form.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{Bottle, BottleId, DataPacket, NodeId, Tick};
use crate::error::{Error, Result};
use crate::fsm::{DropReason, EliminationReason};

/// A topology change injected by the scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Fault {
    FailNode { node: NodeId },
    RestoreNode { node: NodeId },
    FailLink { a: NodeId, b: NodeId },
    RestoreLink { a: NodeId, b: NodeId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Bottle(Bottle),
    Data(DataPacket),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// Nothing left to do but beacons.
    Quiescent,
    Horizon,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    NeighborUp {
        peer: NodeId,
    },
    NeighborDown {
        peer: NodeId,
    },
    /// The application asked this node to send a packet.
    Request {
        id: u64,
        dest: NodeId,
        payload_len: u32,
    },
    Discovery {
        dest: NodeId,
    },
    /// A bottle was launched by its source; one per attempt.
    TimerSet {
        btl_id: BottleId,
        deadline: Tick,
    },
    Sent {
        msg: u64,
        to: NodeId,
        payload: Payload,
    },
    Received {
        msg: u64,
        from: NodeId,
    },
    DeliveryFailed {
        msg: u64,
        to: NodeId,
    },
    Eliminated {
        btl_id: BottleId,
        reason: EliminationReason,
    },
    TableUpdated {
        dest: NodeId,
        next_hop: NodeId,
        hops: u32,
    },
    RouteRemoved {
        dest: NodeId,
    },
    RouteFound {
        src: NodeId,
        dest: NodeId,
        path: Vec<NodeId>,
    },
    Inaccessible {
        src: NodeId,
        dest: NodeId,
    },
    Delivered {
        id: u64,
        src: NodeId,
        dest: NodeId,
        hops: u32,
    },
    DataDropped {
        id: u64,
        src: NodeId,
        dest: NodeId,
        reason: DropReason,
    },
    Fault {
        fault: Fault,
    },
    Finished {
        reason: FinishReason,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub at: Tick,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(flatten)]
    pub record: Record,
}

/// Append-only record of a run, ordered by `(at, seq)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub(crate) fn push(&mut self, at: Tick, node: Option<NodeId>, record: Record) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent {
            at,
            seq,
            node,
            record,
        });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter()
    }

    /// The run ended normally (last record is `Finished`).
    pub fn is_complete(&self) -> bool {
        matches!(
            self.events.last(),
            Some(TraceEvent {
                record: Record::Finished { .. },
                ..
            })
        )
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut events = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line =
                line.map_err(|e| Error::Config(format!("trace line {}: {e}", lineno + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: TraceEvent = serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("trace line {}: {e}", lineno + 1)))?;
            events.push(ev);
        }
        Ok(Trace { events })
    }
}

impl<'a> IntoIterator for &'a Trace {
    type Item = &'a TraceEvent;
    type IntoIter = std::slice::Iter<'a, TraceEvent>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}
