//! Cluster shape and protocol tunables shared by all roles.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::message::{Addr, RoundScheme};
use crate::types::VertexId;

/// Simulated and wall-clock time, in microseconds.
pub type Time = u64;

pub const MILLIS: Time = 1_000;

/// Deliberate protocol bugs used to validate the history checker and model
/// checker. Never enabled outside tests and mutation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mutation {
    /// Leaders propose after a single dependency-service reply.
    DepQuorumOne,
    /// Acceptors vote in any round, ignoring their promise.
    AcceptorIgnoresPromises,
    /// Replicas execute vertices as soon as they are committed.
    ReplicaSkipsSccOrdering,
    /// Client table keeps only the largest executed id per client.
    ClientTableLargestIdOnly,
}

impl Mutation {
    pub const ALL: [Mutation; 4] = [
        Mutation::DepQuorumOne,
        Mutation::AcceptorIgnoresPromises,
        Mutation::ReplicaSkipsSccOrdering,
        Mutation::ClientTableLargestIdOnly,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Contact only f+1 dependency nodes / acceptors first.
    pub thrifty: bool,
    /// Commands per vertex at the leaders; 1 disables batching.
    pub batch_size: usize,
    pub batch_flush: Time,
    /// Dependency nodes reply with per-leader watermarks.
    pub compaction: bool,
    pub leader_resend: Time,
    pub proposer_resend: Time,
    /// First backoff after a nack; doubles per attempt, plus jitter.
    pub backoff_base: Time,
    pub recovery_timeout: Time,
    pub client_retry: Time,
    pub mutation: Option<Mutation>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            thrifty: false,
            batch_size: 1,
            batch_flush: 5 * MILLIS,
            compaction: false,
            leader_resend: 20 * MILLIS,
            proposer_resend: 20 * MILLIS,
            backoff_base: 10 * MILLIS,
            recovery_timeout: 100 * MILLIS,
            client_retry: 500 * MILLIS,
            mutation: None,
        }
    }
}

/// Number of instances of each role and the fault parameter `f`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub f: usize,
    pub leaders: usize,
    pub proposers: usize,
    pub dep_nodes: usize,
    pub acceptors: usize,
    pub replicas: usize,
    pub protocol: ProtocolConfig,
}

impl ClusterConfig {
    /// Minimal deployment: f+1 leaders, proposers and replicas; 2f+1 dependency
    /// nodes and acceptors.
    pub fn minimal(f: usize) -> Self {
        ClusterConfig {
            f,
            leaders: f + 1,
            proposers: f + 1,
            dep_nodes: 2 * f + 1,
            acceptors: 2 * f + 1,
            replicas: f + 1,
            protocol: ProtocolConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = 2 * self.f + 1;
        if self.dep_nodes != n {
            return Err(ConfigError::DepNodes { expected: n, got: self.dep_nodes });
        }
        if self.acceptors != n {
            return Err(ConfigError::Acceptors { expected: n, got: self.acceptors });
        }
        for (role, got) in
            [("leaders", self.leaders), ("proposers", self.proposers), ("replicas", self.replicas)]
        {
            if got < self.f + 1 {
                return Err(ConfigError::TooFew { role, min: self.f + 1, got });
            }
        }
        if self.protocol.batch_size == 0 {
            return Err(ConfigError::BatchSize);
        }
        Ok(())
    }

    pub fn quorum(&self) -> usize {
        self.f + 1
    }

    pub fn mutation(&self, m: Mutation) -> bool {
        self.protocol.mutation == Some(m)
    }

    /// Round allocation across proposers and the replicas' recovery
    /// proposers.
    pub fn round_scheme(&self) -> RoundScheme {
        RoundScheme { ids: (self.proposers + self.replicas) as u32 }
    }

    /// Index of the proposer that owns round 0 of `v`.
    pub fn designated_proposer(&self, v: VertexId) -> u32 {
        v.leader % self.proposers as u32
    }

    /// Round-scheme identity of a replica's recovery proposer.
    pub fn recovery_proposer_id(&self, replica: u32) -> u32 {
        self.proposers as u32 + replica
    }

    pub fn dep_addrs(&self) -> impl Iterator<Item = Addr> {
        (0..self.dep_nodes as u32).map(Addr::dep)
    }

    pub fn acceptor_addrs(&self) -> impl Iterator<Item = Addr> {
        (0..self.acceptors as u32).map(Addr::acceptor)
    }

    pub fn replica_addrs(&self) -> impl Iterator<Item = Addr> {
        (0..self.replicas as u32).map(Addr::replica)
    }

    /// Every non-client role address.
    pub fn all_addrs(&self) -> Vec<Addr> {
        let mut out = Vec::new();
        out.extend((0..self.leaders as u32).map(Addr::leader));
        out.extend(self.dep_addrs());
        out.extend((0..self.proposers as u32).map(Addr::proposer));
        out.extend(self.acceptor_addrs());
        out.extend(self.replica_addrs());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_is_valid() {
        for f in 0..4 {
            ClusterConfig::minimal(f).validate().unwrap();
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ClusterConfig::minimal(1);
        c.dep_nodes = 2;
        assert!(matches!(c.validate(), Err(ConfigError::DepNodes { .. })));
        let mut c = ClusterConfig::minimal(1);
        c.replicas = 1;
        assert!(matches!(c.validate(), Err(ConfigError::TooFew { role: "replicas", .. })));
        let mut c = ClusterConfig::minimal(1);
        c.protocol.batch_size = 0;
        assert_eq!(c.validate(), Err(ConfigError::BatchSize));
    }
}
