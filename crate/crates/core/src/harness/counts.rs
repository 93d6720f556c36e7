//! Per-node message accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ClusterConfig;
use crate::message::{Addr, Role};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounts {
    pub sent: BTreeMap<Addr, u64>,
    pub received: BTreeMap<Addr, u64>,
    /// Client commands answered during the run.
    pub commands: u64,
}

impl MessageCounts {
    pub fn record_send(&mut self, from: Addr) {
        *self.sent.entry(from).or_default() += 1;
    }

    pub fn record_receive(&mut self, to: Addr) {
        *self.received.entry(to).or_default() += 1;
    }

    /// Messages sent plus received by `node`.
    pub fn node_total(&self, node: Addr) -> u64 {
        self.sent.get(&node).copied().unwrap_or(0) + self.received.get(&node).copied().unwrap_or(0)
    }

    pub fn role_total(&self, role: Role) -> u64 {
        let sent: u64 = self.sent.iter().filter(|(a, _)| a.role == role).map(|(_, n)| n).sum();
        let recv: u64 = self.received.iter().filter(|(a, _)| a.role == role).map(|(_, n)| n).sum();
        sent + recv
    }

    /// Average messages per command at one node of `role`.
    ///
    /// Each command passes through one leader and one proposer, so their
    /// role totals are divided by the command count alone. Every dependency
    /// node, acceptor and replica sees every command, so their totals are
    /// also divided by the number of such nodes.
    pub fn per_command(&self, role: Role, cluster: &ClusterConfig) -> f64 {
        if self.commands == 0 {
            return 0.0;
        }
        let nodes = match role {
            Role::DepNode => cluster.dep_nodes,
            Role::Acceptor => cluster.acceptors,
            Role::Replica => cluster.replicas,
            _ => 1,
        };
        self.role_total(role) as f64 / self.commands as f64 / nodes as f64
    }
}
