//! Node addresses and the protocol message set shared by every role.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::{ClientId, CmdOrNoop, Command, Deps, Proposal, VertexId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Client,
    Leader,
    DepNode,
    Proposer,
    Acceptor,
    Replica,
}

impl Role {
    pub const ALL: [Role; 6] =
        [Role::Client, Role::Leader, Role::DepNode, Role::Proposer, Role::Acceptor, Role::Replica];

    pub fn name(self) -> &'static str {
        match self {
            Role::Client => "client",
            Role::Leader => "leader",
            Role::DepNode => "dep",
            Role::Proposer => "proposer",
            Role::Acceptor => "acceptor",
            Role::Replica => "replica",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Role> {
        Role::ALL.get(tag as usize).copied()
    }
}

/// Logical address of one role instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Addr {
    pub role: Role,
    pub index: u32,
}

impl Addr {
    pub const fn new(role: Role, index: u32) -> Self {
        Addr { role, index }
    }
    pub const fn client(i: u32) -> Self {
        Addr::new(Role::Client, i)
    }
    pub const fn leader(i: u32) -> Self {
        Addr::new(Role::Leader, i)
    }
    pub const fn dep(i: u32) -> Self {
        Addr::new(Role::DepNode, i)
    }
    pub const fn proposer(i: u32) -> Self {
        Addr::new(Role::Proposer, i)
    }
    pub const fn acceptor(i: u32) -> Self {
        Addr::new(Role::Acceptor, i)
    }
    pub const fn replica(i: u32) -> Self {
        Addr::new(Role::Replica, i)
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.role.name(), self.index)
    }
}

impl FromStr for Addr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let split = s
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| format!("node name `{s}` has no index"))?;
        let (name, idx) = s.split_at(split);
        let role = Role::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| format!("unknown role `{name}`"))?;
        let index = idx.parse().map_err(|_| format!("bad index in `{s}`"))?;
        Ok(Addr { role, index })
    }
}

/// Paxos round number. Ownership of rounds is decided by [`RoundScheme`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Round(pub u64);

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Round allocation over `ids` proposer identities. Round `k` of a vertex
/// belongs to identity `(designated + k) mod ids`; round 0 belongs to the
/// vertex's designated proposer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundScheme {
    pub ids: u32,
}

impl RoundScheme {
    pub fn owner(&self, designated: u32, round: Round) -> u32 {
        ((designated as u64 + round.0) % self.ids as u64) as u32
    }

    /// Smallest round owned by `me` that is strictly greater than `above`
    /// (or at least `floor` when nothing has been seen).
    pub fn next_owned(&self, me: u32, designated: u32, above: Option<Round>, floor: u64) -> Round {
        let n = self.ids as u64;
        let start = match above {
            Some(r) => r.0 + 1,
            None => floor,
        }
        .max(floor);
        // offset of `me` relative to the designated proposer
        let offset = (me as u64 + n - designated as u64 % n) % n;
        let base = start - start % n;
        let candidate = base + offset;
        Round(if candidate >= start { candidate } else { candidate + n })
    }
}

/// Result of executing one command, as returned to clients.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Output {
    /// Result of a `Get`; `None` when the key is absent.
    Value(Option<Vec<u8>>),
    /// Result of a `Set`.
    Ack,
    /// The command already executed but its output is no longer cached.
    DuplicateUnavailable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    ClientRequest { cmd: Command },
    DepRequest { v: VertexId, cmd: CmdOrNoop },
    DepReply { v: VertexId, cmd: CmdOrNoop, deps: Deps },
    ProposeRequest { v: VertexId, proposal: Proposal },
    Phase1a { v: VertexId, round: Round },
    Phase1b { v: VertexId, round: Round, vote: Option<(Round, Proposal)> },
    Phase2a { v: VertexId, round: Round, proposal: Proposal },
    Phase2b { v: VertexId, round: Round },
    Nack { v: VertexId, round: Round, promised: Round },
    Commit { v: VertexId, proposal: Proposal },
    ClientResponse { client: ClientId, client_seq: u64, output: Output },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::ClientRequest { .. } => "ClientRequest",
            Message::DepRequest { .. } => "DepRequest",
            Message::DepReply { .. } => "DepReply",
            Message::ProposeRequest { .. } => "ProposeRequest",
            Message::Phase1a { .. } => "Phase1a",
            Message::Phase1b { .. } => "Phase1b",
            Message::Phase2a { .. } => "Phase2a",
            Message::Phase2b { .. } => "Phase2b",
            Message::Nack { .. } => "Nack",
            Message::Commit { .. } => "Commit",
            Message::ClientResponse { .. } => "ClientResponse",
        }
    }
}
