//! Deterministic discrete-event simulation of a network of protocol nodes.
//!
//! Events are ordered by `(at, seq)` where `seq` is insertion order, so a run
//! is a pure function of its [`Scenario`]. Each node draws from its own ChaCha
//! stream (seeded by the scenario seed, stream number = node id), which keeps
//! one node's choices independent of everything else that happens.

mod trace;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{Bottle, BottleId, DataPacket, FsmState, NodeId, NodeState, Tick};
use crate::error::{Error, Result};
use crate::fsm::{self, Action, EliminationReason, ProtocolConfig, Undelivered};
use crate::network::{hello_tick, Topology};

pub use trace::{Fault, FinishReason, Payload, Record, Trace, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AppRequest {
    pub at: Tick,
    pub src: NodeId,
    pub dest: NodeId,
    pub payload_len: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultInjection {
    pub at: Tick,
    pub fault: Fault,
}

/// Everything a run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    pub seed: u64,
    pub protocol: ProtocolConfig,
    pub requests: Vec<AppRequest>,
    pub faults: Vec<FaultInjection>,
    /// Last tick processed. Defaults to the last scripted event plus enough
    /// time for every retry to expire.
    pub horizon: Option<Tick>,
}

impl Scenario {
    pub fn new(topology: Topology, seed: u64) -> Self {
        let protocol = ProtocolConfig::for_network(topology.node_count());
        Scenario {
            topology,
            seed,
            protocol,
            requests: Vec::new(),
            faults: Vec::new(),
            horizon: None,
        }
    }

    pub fn request(mut self, at: Tick, src: u16, dest: u16) -> Self {
        self.requests.push(AppRequest {
            at,
            src: NodeId(src),
            dest: NodeId(dest),
            payload_len: 0,
        });
        self
    }

    pub fn fault(mut self, at: Tick, fault: Fault) -> Self {
        self.faults.push(FaultInjection { at, fault });
        self
    }

    pub fn effective_horizon(&self) -> Tick {
        self.horizon.unwrap_or_else(|| {
            let last = self
                .requests
                .iter()
                .map(|r| r.at)
                .chain(self.faults.iter().map(|f| f.at))
                .max()
                .unwrap_or(0);
            let p = &self.protocol;
            last + (p.retry_limit as Tick + 2) * p.timeout + p.beacon_period
        })
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        if p.hop_limit == 0 || p.timeout == 0 || p.per_hop_latency == 0 || p.beacon_period == 0 {
            return Err(Error::Config(
                "hop_limit, timeout, per_hop_latency and beacon_period must be positive".into(),
            ));
        }
        let known = |n: NodeId| {
            if self.topology.contains(n) {
                Ok(())
            } else {
                Err(Error::Config(format!("node {n} is not in the topology")))
            }
        };
        for r in &self.requests {
            known(r.src)?;
            known(r.dest)?;
        }
        for f in &self.faults {
            match f.fault {
                Fault::FailNode { node } | Fault::RestoreNode { node } => known(node)?,
                Fault::FailLink { a, b } | Fault::RestoreLink { a, b } => {
                    if !self.topology.has_edge(a, b) {
                        return Err(Error::Config(format!("no edge {a}-{b} in the topology")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    BottleArrival {
        to: NodeId,
        from: NodeId,
        msg: u64,
        bottle: Bottle,
    },
    DataArrival {
        to: NodeId,
        from: NodeId,
        msg: u64,
        packet: DataPacket,
    },
    TimerFire {
        node: NodeId,
        btl_id: BottleId,
    },
    /// One hello round: every live node refreshes its neighbor set, in id order.
    BeaconTick,
    FaultInjection(Fault),
    AppRequest {
        id: u64,
        src: NodeId,
        dest: NodeId,
        payload_len: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub at: Tick,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Simulator {
    now: Tick,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    /// Queued events other than beacons.
    work: usize,
    horizon: Tick,
    finished: bool,
    topology: Topology,
    cfg: ProtocolConfig,
    nodes: BTreeMap<NodeId, NodeState>,
    rngs: BTreeMap<NodeId, ChaCha8Rng>,
    /// Timers that fired while their node was down.
    frozen_timers: BTreeMap<NodeId, Vec<BottleId>>,
    beacon_version: Option<u64>,
    trace: Trace,
    next_msg: u64,
    bottle_bytes: u64,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let nodes = scenario
            .topology
            .nodes()
            .map(|n| (n, NodeState::new(n)))
            .collect();
        let rngs = scenario
            .topology
            .nodes()
            .map(|n| {
                let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
                rng.set_stream(u64::from(n.0));
                (n, rng)
            })
            .collect();
        let mut sim = Simulator {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            work: 0,
            horizon: scenario.effective_horizon(),
            finished: false,
            topology: scenario.topology.clone(),
            cfg: scenario.protocol,
            nodes,
            rngs,
            frozen_timers: BTreeMap::new(),
            beacon_version: None,
            trace: Trace::new(),
            next_msg: 0,
            bottle_bytes: 0,
        };
        sim.schedule(0, EventKind::BeaconTick)?;
        for f in &scenario.faults {
            sim.schedule(f.at, EventKind::FaultInjection(f.fault))?;
        }
        for (id, r) in scenario.requests.iter().enumerate() {
            sim.schedule(
                r.at,
                EventKind::AppRequest {
                    id: id as u64,
                    src: r.src,
                    dest: r.dest,
                    payload_len: r.payload_len,
                },
            )?;
        }
        Ok(sim)
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    /// Queues an event. Events in the past are rejected.
    pub fn schedule(&mut self, at: Tick, kind: EventKind) -> Result<u64> {
        if at < self.now {
            return Err(Error::Config(format!(
                "cannot schedule at tick {at}, simulation is at {}",
                self.now
            )));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        if kind != EventKind::BeaconTick {
            self.work += 1;
        }
        self.queue.push(Reverse(Event { at, seq, kind }));
        Ok(seq)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn protocol(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.values()
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    /// Wire bytes of every bottle transmission so far, counted as they are sent.
    pub fn bottle_bytes(&self) -> u64 {
        self.bottle_bytes
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Processes the next event. Returns `false` once the run is over.
    pub fn step(&mut self) -> bool {
        if self.finished {
            return false;
        }
        let settled = self.beacon_version == Some(self.topology.version());
        if self.work == 0 && settled {
            self.finish(self.now, FinishReason::Quiescent);
            return false;
        }
        let Some(Reverse(event)) = self.queue.pop() else {
            self.finish(self.now, FinishReason::Quiescent);
            return false;
        };
        if event.at > self.horizon {
            self.finish(self.horizon, FinishReason::Horizon);
            return false;
        }
        self.now = event.at;
        if event.kind != EventKind::BeaconTick {
            self.work -= 1;
        }
        self.dispatch(event.kind);
        true
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    fn finish(&mut self, at: Tick, reason: FinishReason) {
        self.finished = true;
        self.trace.push(at, None, Record::Finished { reason });
    }

    fn record(&mut self, node: NodeId, record: Record) {
        self.trace.push(self.now, Some(node), record);
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::BeaconTick => self.beacon(),
            EventKind::FaultInjection(fault) => self.inject(fault),
            EventKind::AppRequest {
                id,
                src,
                dest,
                payload_len,
            } => {
                self.record(
                    src,
                    Record::Request {
                        id,
                        dest,
                        payload_len,
                    },
                );
                if src == dest {
                    self.record(
                        src,
                        Record::Delivered {
                            id,
                            src,
                            dest,
                            hops: 0,
                        },
                    );
                } else if !self.topology.is_up(src) {
                    self.record(
                        src,
                        Record::DataDropped {
                            id,
                            src,
                            dest,
                            reason: fsm::DropReason::Inaccessible,
                        },
                    );
                } else {
                    let packet = DataPacket::new(id, src, dest, payload_len);
                    self.node_mut(src).pkt_queue.push_back(packet);
                    self.drive(src);
                }
            }
            EventKind::BottleArrival {
                to,
                from,
                msg,
                bottle,
            } => {
                if !self.topology.is_up(to) {
                    self.bounce(from, to, msg, Undelivered::Bottle(bottle));
                    return;
                }
                self.record(to, Record::Received { msg, from });
                self.node_mut(to).btl_queue.push_back(bottle);
                self.drive(to);
            }
            EventKind::DataArrival {
                to,
                from,
                msg,
                mut packet,
            } => {
                if !self.topology.is_up(to) {
                    self.bounce(from, to, msg, Undelivered::Data(packet));
                    return;
                }
                self.record(to, Record::Received { msg, from });
                packet.trail.push(to);
                if packet.dest == to {
                    let rec = Record::Delivered {
                        id: packet.id,
                        src: packet.src,
                        dest: packet.dest,
                        hops: packet.hops() as u32,
                    };
                    self.record(to, rec);
                    return;
                }
                self.node_mut(to).pkt_queue.push_back(packet);
                self.drive(to);
            }
            EventKind::TimerFire { node, btl_id } => {
                if !self.topology.is_up(node) {
                    self.frozen_timers.entry(node).or_default().push(btl_id);
                    return;
                }
                let cfg = self.cfg;
                let now = self.now;
                let (state, rng) = self.node_and_rng(node);
                // A stale timer (answered or superseded request) is a no-op.
                if let Ok(actions) = fsm::on_timeout(state, btl_id, now, &cfg, rng) {
                    self.apply(node, actions);
                }
            }
        }
    }

    fn beacon(&mut self) {
        let version = self.topology.version();
        if self.beacon_version != Some(version) {
            let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
            for id in ids {
                if !self.topology.is_up(id) {
                    continue;
                }
                let node = self.nodes.get_mut(&id).expect("node exists");
                let actions = hello_tick(&self.topology, node).expect("node is in the topology");
                self.apply(id, actions);
            }
            self.beacon_version = Some(version);
        }
        let next = self.now + self.cfg.beacon_period;
        self.schedule(next, EventKind::BeaconTick)
            .expect("beacon is scheduled in the future");
    }

    fn inject(&mut self, fault: Fault) {
        let res = match fault {
            Fault::FailNode { node } => self.topology.fail_node(node),
            Fault::RestoreNode { node } => self.topology.restore_node(node),
            Fault::FailLink { a, b } => self.topology.fail_link(a, b),
            Fault::RestoreLink { a, b } => self.topology.restore_link(a, b),
        };
        res.expect("faults are validated with the scenario");
        self.trace.push(self.now, None, Record::Fault { fault });
        if let Fault::RestoreNode { node } = fault {
            let deadline = self.now + self.cfg.timeout;
            for btl_id in self.frozen_timers.remove(&node).unwrap_or_default() {
                self.schedule(deadline, EventKind::TimerFire { node, btl_id })
                    .expect("deadline is in the future");
            }
        }
    }

    /// A message reached a node that is down: the sender learns of the failure.
    fn bounce(&mut self, from: NodeId, to: NodeId, msg: u64, what: Undelivered) {
        self.record(from, Record::DeliveryFailed { msg, to });
        if self.topology.is_up(from) {
            self.delivery_failed(from, to, what);
        } else if let Undelivered::Bottle(b) = what {
            let rec = Record::Eliminated {
                btl_id: b.btl_id,
                reason: EliminationReason::LinkFailure,
            };
            self.record(from, rec);
        }
    }

    fn delivery_failed(&mut self, node: NodeId, to: NodeId, what: Undelivered) {
        let cfg = self.cfg;
        let now = self.now;
        let (state, rng) = self.node_and_rng(node);
        match fsm::on_delivery_failure(state, what, to, now, &cfg, rng) {
            Ok(actions) => self.apply(node, actions),
            Err(e) => panic!("delivery failure handling at {node}: {e}"),
        }
    }

    fn node_mut(&mut self, id: NodeId) -> &mut NodeState {
        self.nodes.get_mut(&id).expect("node exists")
    }

    fn node_and_rng(&mut self, id: NodeId) -> (&mut NodeState, &mut ChaCha8Rng) {
        (
            self.nodes.get_mut(&id).expect("node exists"),
            self.rngs.get_mut(&id).expect("rng exists"),
        )
    }

    /// Runs the node's state machine until both queues are drained.
    fn drive(&mut self, id: NodeId) {
        let cfg = self.cfg;
        loop {
            let now = self.now;
            let (node, rng) = self.node_and_rng(id);
            node.state = fsm::next_state(
                node.state,
                node.pkt_queue.is_empty(),
                node.btl_queue.is_empty(),
            );
            let result = match node.state {
                FsmState::Idle => break,
                FsmState::BtlManage => {
                    let bottle = node.btl_queue.pop_front().expect("queue is non-empty");
                    let btl_id = bottle.btl_id;
                    fsm::handle_bottle(node, bottle, now, &cfg, rng).map_err(|_| btl_id)
                }
                FsmState::RouteReq => {
                    let packet = node.pkt_queue.pop_front().expect("queue is non-empty");
                    Ok(fsm::handle_route_request(node, packet, now, &cfg, rng)
                        .expect("route requests only fail on self-routes, which are filtered"))
                }
            };
            match result {
                Ok(actions) => self.apply(id, actions),
                Err(btl_id) => self.record(
                    id,
                    Record::Eliminated {
                        btl_id,
                        reason: EliminationReason::Malformed,
                    },
                ),
            }
        }
    }

    fn apply(&mut self, id: NodeId, actions: Vec<Action>) {
        let mut work: VecDeque<Action> = actions.into();
        while let Some(action) = work.pop_front() {
            let follow_up = self.perform(id, action);
            for a in follow_up.into_iter().rev() {
                work.push_front(a);
            }
        }
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, payload: Payload) -> Vec<Action> {
        let msg = self.next_msg;
        self.next_msg += 1;
        if let Payload::Bottle(b) = &payload {
            self.bottle_bytes += b.wire_len() as u64;
        }
        self.record(
            from,
            Record::Sent {
                msg,
                to,
                payload: payload.clone(),
            },
        );
        if self.topology.is_live(from, to) {
            let at = self.now + self.cfg.per_hop_latency;
            let kind = match payload {
                Payload::Bottle(bottle) => EventKind::BottleArrival {
                    to,
                    from,
                    msg,
                    bottle,
                },
                Payload::Data(packet) => EventKind::DataArrival {
                    to,
                    from,
                    msg,
                    packet,
                },
            };
            self.schedule(at, kind).expect("arrival is in the future");
            return Vec::new();
        }
        self.record(from, Record::DeliveryFailed { msg, to });
        let what = match payload {
            Payload::Bottle(b) => Undelivered::Bottle(b),
            Payload::Data(p) => Undelivered::Data(p),
        };
        let cfg = self.cfg;
        let now = self.now;
        let (state, rng) = self.node_and_rng(from);
        fsm::on_delivery_failure(state, what, to, now, &cfg, rng)
            .expect("delivery failure handling never fails for live nodes")
    }

    fn perform(&mut self, id: NodeId, action: Action) -> Vec<Action> {
        match action {
            Action::Send { bottle, to } => return self.transmit(id, to, Payload::Bottle(bottle)),
            Action::SendData { packet, to } => return self.transmit(id, to, Payload::Data(packet)),
            Action::Eliminate { btl_id, reason } => {
                self.record(id, Record::Eliminated { btl_id, reason })
            }
            Action::SetTimer { btl_id, deadline } => {
                self.record(id, Record::TimerSet { btl_id, deadline });
                self.schedule(deadline, EventKind::TimerFire { node: id, btl_id })
                    .expect("deadline is in the future");
            }
            Action::DeclareInaccessible { dest } => {
                self.record(id, Record::Inaccessible { src: id, dest })
            }
            Action::TableUpdated { dest, entry } => self.record(
                id,
                Record::TableUpdated {
                    dest,
                    next_hop: entry.next_hop,
                    hops: entry.hop_count,
                },
            ),
            Action::RouteRemoved { dest } => self.record(id, Record::RouteRemoved { dest }),
            Action::DiscoveryStarted { dest } => self.record(id, Record::Discovery { dest }),
            Action::RouteFound { dest, path } => self.record(
                id,
                Record::RouteFound {
                    src: id,
                    dest,
                    path,
                },
            ),
            Action::DropData { packet, reason } => self.record(
                id,
                Record::DataDropped {
                    id: packet.id,
                    src: packet.src,
                    dest: packet.dest,
                    reason,
                },
            ),
            Action::NeighborUp { peer } => self.record(id, Record::NeighborUp { peer }),
            Action::NeighborDown { peer } => self.record(id, Record::NeighborDown { peer }),
        }
        Vec::new()
    }
}

/// Runs a scenario to completion and returns its trace.
pub fn run(scenario: &Scenario) -> Result<Trace> {
    let mut sim = Simulator::new(scenario)?;
    sim.run_to_end();
    Ok(sim.into_trace())
}
