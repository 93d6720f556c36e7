//! The event-driven interface every role implements. Roles never touch the
//! network or the clock directly: they read `now`, and push sends, timers and
//! observations into a [`Ctx`] that the transport (simulator or sockets)
//! drains after each step.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Time;
use crate::message::{Addr, Message, Output, Round};
use crate::types::{ClientId, Command, Proposal, VertexId};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Timer {
    ClientStart,
    ClientRetry { seq: u64, attempt: u32 },
    LeaderResend(VertexId),
    BatchFlush(u64),
    ProposerResend { v: VertexId, round: Round },
    ProposerBackoff { v: VertexId, attempt: u32 },
    Recovery(VertexId),
}

/// How a replica disposed of one command (or noop) while executing a vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecOutcome {
    Applied(Output),
    Duplicate,
    Noop,
}

/// Observations a role reports for the execution history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Note {
    Invoke { client: ClientId, seq: u64, cmd: Command },
    Respond { client: ClientId, seq: u64, output: Output, latency: Time },
    Chosen { v: VertexId, proposal: Proposal },
    Executed { v: VertexId, cmd: Option<Command>, outcome: ExecOutcome },
    Alarm { v: VertexId, detail: String },
}

pub struct Ctx<'a> {
    pub now: Time,
    pub rng: &'a mut ChaCha8Rng,
    pub sends: Vec<(Addr, Message)>,
    pub timers: Vec<(Time, Timer)>,
    pub notes: Vec<Note>,
}

impl<'a> Ctx<'a> {
    pub fn new(now: Time, rng: &'a mut ChaCha8Rng) -> Self {
        Ctx { now, rng, sends: Vec::new(), timers: Vec::new(), notes: Vec::new() }
    }

    pub fn send(&mut self, to: Addr, msg: Message) {
        self.sends.push((to, msg));
    }

    pub fn broadcast<I: IntoIterator<Item = Addr>>(&mut self, to: I, msg: &Message) {
        for a in to {
            self.sends.push((a, msg.clone()));
        }
    }

    /// Fires `timer` after `delay`.
    pub fn set_timer(&mut self, delay: Time, timer: Timer) {
        self.timers.push((delay, timer));
    }

    pub fn note(&mut self, note: Note) {
        self.notes.push(note);
    }
}

pub trait Actor {
    fn on_message(&mut self, from: Addr, msg: Message, ctx: &mut Ctx<'_>);
    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>);
}

/// Any role instance, for transports that host heterogeneous nodes.
pub enum Node {
    Client(crate::client::Client),
    Leader(crate::leader::Leader),
    DepNode(crate::depservice::DepNode),
    Proposer(crate::consensus::Proposer),
    Acceptor(crate::consensus::Acceptor),
    Replica(crate::replica::Replica),
}

impl Node {
    /// Builds the protocol role at `addr`. Clients are constructed
    /// separately because they need a workload.
    pub fn for_addr(addr: Addr, config: &crate::config::ClusterConfig) -> Option<Node> {
        use crate::message::Role;
        let cfg = config.clone();
        Some(match addr.role {
            Role::Client => return None,
            Role::Leader => Node::Leader(crate::leader::Leader::new(addr.index, cfg)),
            Role::DepNode => Node::DepNode(crate::depservice::DepNode::new(addr.index, &cfg)),
            Role::Proposer => Node::Proposer(crate::consensus::Proposer::new(addr.index, cfg)),
            Role::Acceptor => Node::Acceptor(crate::consensus::Acceptor::new(addr.index, &cfg)),
            Role::Replica => Node::Replica(crate::replica::Replica::new(addr.index, cfg)),
        })
    }

    fn actor(&mut self) -> &mut dyn Actor {
        match self {
            Node::Client(a) => a,
            Node::Leader(a) => a,
            Node::DepNode(a) => a,
            Node::Proposer(a) => a,
            Node::Acceptor(a) => a,
            Node::Replica(a) => a,
        }
    }
}

impl Actor for Node {
    fn on_message(&mut self, from: Addr, msg: Message, ctx: &mut Ctx<'_>) {
        self.actor().on_message(from, msg, ctx)
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>) {
        self.actor().on_timer(timer, ctx)
    }
}
