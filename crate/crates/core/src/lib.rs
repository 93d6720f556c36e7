//! Multileader generalized state machine replication.
//!
//! Commands are placed in a graph of vertices. Any leader can propose: it
//! assigns a vertex id, asks a dependency service for the vertices the
//! command conflicts with, and runs one instance of Paxos per vertex to
//! choose `(command, deps)`. Replicas execute the chosen graph one strongly
//! connected component at a time in reverse topological order.
//!
//! Roles are event-driven state machines implementing [`actor::Actor`]; the
//! [`harness`] runs them in a deterministic simulator and [`net`] over local
//! TCP sockets.

pub mod actor;
pub mod client;
pub mod config;
pub mod consensus;
pub mod depservice;
pub mod error;
pub mod graph;
pub mod harness;
pub mod leader;
pub mod message;
pub mod modelcheck;
pub mod net;
pub mod replica;
pub mod types;
pub mod wire;

pub use config::{ClusterConfig, Mutation, ProtocolConfig, Time, MILLIS};
pub use error::{ConfigError, DepsError, SafetyViolation, WireError};
pub use message::{Addr, Message, Output, Role, Round};
pub use types::{
    conflicts, expand_deps, union_deps, vertex_id_order, ClientId, CmdOrNoop, Command, Deps, KvOp, Proposal,
    VertexId,
};
