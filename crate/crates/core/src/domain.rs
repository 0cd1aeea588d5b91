//! Protocol data types: node identity, bottles, routing tables and per-node state.
//!
//! Everything here is plain data. Behavior lives in [`crate::fsm`]; the only
//! logic in this module is construction, validation and the bottle wire format.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Simulation time in ticks.
pub type Tick = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for NodeId {
    fn from(v: u16) -> Self {
        NodeId(v)
    }
}

/// Identifies a bottle by the node that created it and that node's bottle counter.
///
/// Rendered as `"origin-seq"`, which is also its serialized form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BottleId {
    pub origin: NodeId,
    pub seq: u16,
}

impl BottleId {
    pub fn new(origin: NodeId, seq: u16) -> Self {
        BottleId { origin, seq }
    }
}

impl fmt::Display for BottleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.origin, self.seq)
    }
}

impl FromStr for BottleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::MalformedBottle(format!("bad bottle id {s:?}"));
        let (origin, seq) = s.split_once('-').ok_or_else(bad)?;
        Ok(BottleId {
            origin: NodeId(origin.parse().map_err(|_| bad())?),
            seq: seq.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for BottleId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BottleId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The route-request packet. Its history is the ordered list of nodes it has visited.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bottle {
    pub src: NodeId,
    pub dest: NodeId,
    pub btl_id: BottleId,
    /// Set by the destination; the bottle then retraces its history to `src`.
    pub rf: bool,
    /// Route-failure marker; the bottle retraces its history to `src`.
    pub failure: bool,
    pub history: Vec<NodeId>,
}

/// Fixed part of the wire layout: src, dest, origin, seq, flags, history length.
pub const BOTTLE_HEADER_LEN: usize = 2 + 2 + 2 + 2 + 1 + 2;

const FLAG_RF: u8 = 0b01;
const FLAG_FAILURE: u8 = 0b10;

impl Bottle {
    /// Creates a fresh route-request bottle whose history holds only `src`.
    pub fn new(src: NodeId, dest: NodeId, seq: u16) -> Result<Self> {
        if src == dest {
            return Err(Error::InvalidRequest(format!(
                "route from {src} to itself needs no bottle"
            )));
        }
        Ok(Bottle {
            src,
            dest,
            btl_id: BottleId::new(src, seq),
            rf: false,
            failure: false,
            history: vec![src],
        })
    }

    /// Number of hops travelled so far.
    pub fn hops(&self) -> usize {
        self.history.len().saturating_sub(1)
    }

    /// Travelling back toward `src` rather than exploring.
    pub fn is_returning(&self) -> bool {
        self.rf || self.failure
    }

    pub fn wire_len(&self) -> usize {
        BOTTLE_HEADER_LEN + 2 * self.history.len()
    }

    pub fn validate(&self) -> Result<()> {
        let malformed = |msg: &str| Err(Error::MalformedBottle(format!("{}: {msg}", self.btl_id)));
        match self.history.first() {
            None => return malformed("empty history"),
            Some(&first) if first != self.src => return malformed("history does not start at src"),
            _ => {}
        }
        let mut seen = BTreeSet::new();
        if !self.history.iter().all(|n| seen.insert(*n)) {
            return malformed("history revisits a node");
        }
        if self.rf && self.failure {
            return malformed("rf and failure both set");
        }
        if self.rf && self.history.last() != Some(&self.dest) {
            return malformed("rf set but history does not end at dest");
        }
        Ok(())
    }

    /// Big-endian layout: src, dest, origin, seq, flags, history length, history.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let len =
            u16::try_from(self.history.len()).map_err(|_| Error::Overflow(self.history.len()))?;
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.src.0.to_be_bytes());
        out.extend_from_slice(&self.dest.0.to_be_bytes());
        out.extend_from_slice(&self.btl_id.origin.0.to_be_bytes());
        out.extend_from_slice(&self.btl_id.seq.to_be_bytes());
        let mut flags = 0;
        if self.rf {
            flags |= FLAG_RF;
        }
        if self.failure {
            flags |= FLAG_FAILURE;
        }
        out.push(flags);
        out.extend_from_slice(&len.to_be_bytes());
        for n in &self.history {
            out.extend_from_slice(&n.0.to_be_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::MalformedBottle(format!("truncated at {} bytes", bytes.len()));
        let word = |at: usize| -> Result<u16> {
            bytes
                .get(at..at + 2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .ok_or_else(truncated)
        };
        let flags = *bytes.get(8).ok_or_else(truncated)?;
        if flags & !(FLAG_RF | FLAG_FAILURE) != 0 {
            return Err(Error::MalformedBottle(format!(
                "unknown flag bits {flags:#04x}"
            )));
        }
        let len = word(9)? as usize;
        let expected = BOTTLE_HEADER_LEN + 2 * len;
        if bytes.len() != expected {
            return Err(Error::MalformedBottle(format!(
                "expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let history = (0..len)
            .map(|i| word(BOTTLE_HEADER_LEN + 2 * i).map(NodeId))
            .collect::<Result<Vec<_>>>()?;
        let bottle = Bottle {
            src: NodeId(word(0)?),
            dest: NodeId(word(2)?),
            btl_id: BottleId::new(NodeId(word(4)?), word(6)?),
            rf: flags & FLAG_RF != 0,
            failure: flags & FLAG_FAILURE != 0,
            history,
        };
        bottle.validate()?;
        Ok(bottle)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    pub hop_count: u32,
}

/// Destination -> (next hop, hop count) for one node. Never holds the owner itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingTable {
    owner: NodeId,
    entries: BTreeMap<NodeId, RouteEntry>,
}

impl RoutingTable {
    pub fn new(owner: NodeId) -> Self {
        RoutingTable {
            owner,
            entries: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }

    pub fn contains(&self, dest: NodeId) -> bool {
        self.entries.contains_key(&dest)
    }

    /// Installs `entry` if `dest` is unknown or the entry is strictly shorter.
    /// Ties keep the existing route. Returns whether the table changed.
    pub fn offer(&mut self, dest: NodeId, entry: RouteEntry) -> bool {
        if dest == self.owner || entry.hop_count == 0 {
            return false;
        }
        match self.entries.get(&dest) {
            Some(existing) if existing.hop_count <= entry.hop_count => false,
            _ => {
                self.entries.insert(dest, entry);
                true
            }
        }
    }

    pub fn remove(&mut self, dest: NodeId) -> Option<RouteEntry> {
        self.entries.remove(&dest)
    }

    /// Drops every entry forwarding through `next_hop`, returning the affected destinations.
    pub fn purge_via(&mut self, next_hop: NodeId) -> Vec<NodeId> {
        let gone: Vec<NodeId> = self
            .entries
            .iter()
            .filter(|(_, e)| e.next_hop == next_hop)
            .map(|(d, _)| *d)
            .collect();
        for d in &gone {
            self.entries.remove(d);
        }
        gone
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &RouteEntry)> + '_ {
        self.entries.iter().map(|(d, e)| (*d, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    Idle,
    RouteReq,
    BtlManage,
}

/// Application data. Only accounting fields are carried.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPacket {
    /// Request number assigned by the workload.
    pub id: u64,
    pub src: NodeId,
    pub dest: NodeId,
    pub payload_len: u32,
    /// Nodes this packet has passed through, starting at `src`.
    pub trail: Vec<NodeId>,
}

impl DataPacket {
    pub fn new(id: u64, src: NodeId, dest: NodeId, payload_len: u32) -> Self {
        DataPacket {
            id,
            src,
            dest,
            payload_len,
            trail: vec![src],
        }
    }

    pub fn hops(&self) -> usize {
        self.trail.len().saturating_sub(1)
    }
}

/// An outstanding route discovery at its source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingRequest {
    pub dest: NodeId,
    pub retries_used: u32,
    pub deadline: Tick,
    pub queued_packets: Vec<DataPacket>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeState {
    pub nid: NodeId,
    /// Sequence number for the next bottle this node creates.
    pub bid: u16,
    pub nbors: BTreeSet<NodeId>,
    pub rtab: RoutingTable,
    pub state: FsmState,
    pub pkt_queue: VecDeque<DataPacket>,
    pub btl_queue: VecDeque<Bottle>,
    pub pending: BTreeMap<BottleId, PendingRequest>,
}

impl NodeState {
    pub fn new(nid: NodeId) -> Self {
        NodeState {
            nid,
            bid: 0,
            nbors: BTreeSet::new(),
            rtab: RoutingTable::new(nid),
            state: FsmState::Idle,
            pkt_queue: VecDeque::new(),
            btl_queue: VecDeque::new(),
            pending: BTreeMap::new(),
        }
    }

    /// Takes the next bottle sequence number.
    pub fn next_seq(&mut self) -> u16 {
        let seq = self.bid;
        self.bid = self.bid.wrapping_add(1);
        seq
    }

    pub fn pending_for(&self, dest: NodeId) -> Option<BottleId> {
        self.pending
            .iter()
            .find(|(_, p)| p.dest == dest)
            .map(|(id, _)| *id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(v: u16) -> NodeId {
        NodeId(v)
    }

    #[test]
    fn make_bottle_examples() {
        let b = Bottle::new(n(0), n(8), 0).unwrap();
        assert_eq!(b.btl_id.to_string(), "0-0");
        assert!(!b.rf && !b.failure);
        assert_eq!(b.history, vec![n(0)]);

        let b = Bottle::new(n(3), n(19), 7).unwrap();
        assert_eq!(b.btl_id.to_string(), "3-7");
        assert_eq!(b.history, vec![n(3)]);

        assert!(matches!(
            Bottle::new(n(5), n(5), 0),
            Err(Error::InvalidRequest(_))
        ));
    }

    #[test]
    fn hop_counts() {
        let mut b = Bottle::new(n(0), n(8), 0).unwrap();
        assert_eq!(b.hops(), 0);
        b.history.extend([n(7), n(9)]);
        assert_eq!(b.hops(), 2);

        let route = [3u16, 93, 49, 60, 88, 57, 32, 76, 27, 12, 61, 33, 80, 39, 19];
        let mut b = Bottle::new(n(3), n(19), 0).unwrap();
        b.history = route.iter().copied().map(NodeId).collect();
        assert_eq!(b.hops(), 14);
        assert_eq!(b.to_bytes().unwrap().len(), 41);
    }

    #[test]
    fn fresh_bottle_is_thirteen_bytes() {
        let b = Bottle::new(n(0), n(1), 0).unwrap();
        let bytes = b.to_bytes().unwrap();
        assert_eq!(bytes.len(), 13);
        assert_eq!(bytes, [0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0]);
    }

    #[test]
    fn flags_byte() {
        let mut b = Bottle::new(n(1), n(2), 0x0102).unwrap();
        b.history.push(n(2));
        b.rf = true;
        let bytes = b.to_bytes().unwrap();
        assert_eq!(&bytes[6..9], &[0x01, 0x02, FLAG_RF]);
        b.rf = false;
        b.failure = true;
        assert_eq!(b.to_bytes().unwrap()[8], FLAG_FAILURE);
    }

    #[test]
    fn oversized_history_overflows() {
        let mut b = Bottle::new(n(0), n(1), 0).unwrap();
        b.history = (0..=u16::MAX).map(NodeId).collect();
        b.history.push(n(0));
        assert_eq!(b.to_bytes(), Err(Error::Overflow(65537)));
    }

    #[test]
    fn decode_rejects_garbage() {
        let b = Bottle::new(n(0), n(1), 0).unwrap();
        let bytes = b.to_bytes().unwrap();
        assert!(Bottle::from_bytes(&bytes[..12]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Bottle::from_bytes(&extra).is_err());
        let mut flags = bytes.clone();
        flags[8] = 0x80;
        assert!(Bottle::from_bytes(&flags).is_err());
        // history[0] != src
        let mut wrong = bytes;
        wrong[12] = 9;
        assert!(matches!(
            Bottle::from_bytes(&wrong),
            Err(Error::MalformedBottle(_))
        ));
    }

    #[test]
    fn validate_catches_invariant_breaks() {
        let mut b = Bottle::new(n(0), n(3), 0).unwrap();
        b.history.extend([n(1), n(0)]);
        assert!(b.validate().is_err());
        let mut b = Bottle::new(n(0), n(3), 0).unwrap();
        b.rf = true;
        assert!(b.validate().is_err(), "rf without reaching dest");
        b.history.push(n(3));
        assert!(b.validate().is_ok());
        b.failure = true;
        assert!(b.validate().is_err());
    }

    #[test]
    fn bottle_id_text_form() {
        let id: BottleId = "12-345".parse().unwrap();
        assert_eq!(id, BottleId::new(n(12), 345));
        assert!("12".parse::<BottleId>().is_err());
        assert!("a-1".parse::<BottleId>().is_err());
        assert_eq!(serde_json::to_string(&id).unwrap(), "\"12-345\"");
    }

    #[test]
    fn table_keeps_shorter_and_ties() {
        let mut t = RoutingTable::new(n(0));
        assert!(!t.offer(
            n(0),
            RouteEntry {
                next_hop: n(1),
                hop_count: 1
            }
        ));
        assert!(t.offer(
            n(5),
            RouteEntry {
                next_hop: n(1),
                hop_count: 3
            }
        ));
        assert!(!t.offer(
            n(5),
            RouteEntry {
                next_hop: n(2),
                hop_count: 3
            }
        ));
        assert_eq!(t.get(n(5)).unwrap().next_hop, n(1));
        assert!(t.offer(
            n(5),
            RouteEntry {
                next_hop: n(2),
                hop_count: 2
            }
        ));
        assert_eq!(t.get(n(5)).unwrap().next_hop, n(2));
    }

    #[test]
    fn purge_through_neighbor() {
        let mut t = RoutingTable::new(n(0));
        t.offer(
            n(8),
            RouteEntry {
                next_hop: n(4),
                hop_count: 3,
            },
        );
        t.offer(
            n(9),
            RouteEntry {
                next_hop: n(4),
                hop_count: 5,
            },
        );
        t.offer(
            n(2),
            RouteEntry {
                next_hop: n(6),
                hop_count: 1,
            },
        );
        assert_eq!(t.purge_via(n(4)), vec![n(8), n(9)]);
        assert_eq!(t.len(), 1);
        assert!(t.contains(n(2)));
    }

    #[test]
    fn seq_counter_is_unique_per_node() {
        let mut node = NodeState::new(n(4));
        let ids: BTreeSet<u16> = (0..1000).map(|_| node.next_seq()).collect();
        assert_eq!(ids.len(), 1000);
    }

    fn arb_bottle() -> impl Strategy<Value = Bottle> {
        (
            proptest::collection::vec(any::<u16>(), 1..64),
            any::<u16>(),
            any::<u16>(),
            any::<u16>(),
            0u8..3,
        )
            .prop_filter_map("needs src != dest", |(raw, dest, origin, seq, mode)| {
                let mut seen = BTreeSet::new();
                let history: Vec<NodeId> = raw
                    .into_iter()
                    .filter(|v| seen.insert(*v))
                    .map(NodeId)
                    .collect();
                let src = history[0];
                let (dest, rf, failure) = match mode {
                    0 => (NodeId(dest), false, false),
                    1 => (*history.last().unwrap(), true, false),
                    _ => (NodeId(dest), false, true),
                };
                (dest != src).then(|| Bottle {
                    src,
                    dest,
                    btl_id: BottleId::new(NodeId(origin), seq),
                    rf,
                    failure,
                    history,
                })
            })
    }

    proptest! {
        #[test]
        fn wire_round_trip(b in arb_bottle()) {
            prop_assert!(b.validate().is_ok());
            let bytes = b.to_bytes().unwrap();
            prop_assert_eq!(bytes.len(), 11 + 2 * b.history.len());
            prop_assert_eq!(Bottle::from_bytes(&bytes).unwrap(), b);
        }
    }
}
