//! Message-in-a-bottle route discovery for mobile ad-hoc networks.
//!
//! A node that needs a route it does not know sends a *bottle* on a random
//! walk. Every node the bottle visits appends itself to the bottle's history
//! and learns routes from it; the destination flips the bottle's route-found
//! flag and the bottle retraces its history back to the source.
//!
//! The crate is split into the protocol itself ([`domain`], [`fsm`],
//! [`network`]) and the machinery to run and judge it: a deterministic
//! discrete-event [`engine`], a BFS [`oracle`], trace [`metrics`], topology
//! generators ([`topogen`]), scenario files ([`scenario`]) and DOT export ([`dot`]).

pub mod domain;
pub mod dot;
pub mod engine;
pub mod error;
pub mod fsm;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod scenario;
pub mod topogen;

pub use domain::{
    Bottle, BottleId, DataPacket, FsmState, NodeId, NodeState, PendingRequest, RouteEntry,
    RoutingTable, Tick,
};
pub use engine::{run, Record, Scenario, Simulator, Trace, TraceEvent};
pub use error::{Error, Result};
pub use fsm::{Action, ProtocolConfig};
pub use metrics::{summarize, RunSummary};
pub use network::Topology;
pub use topogen::{generate_topology, TopologyKind};
