//! Analytic throughput model from per-command message counts.
//!
//! A node's throughput is taken to be inversely proportional to the number
//! of messages it sends and receives per command. With `L` leaders and
//! proposers, `N` dependency nodes and acceptors and `R` replicas, a BPaxos
//! leader handles `2N + 2` messages per command and a proposer `2N + R + 1`,
//! so the proposers bound throughput at `L / (2N + R + 1)`. A single-leader
//! protocol is bound by its leader at `1 / (2N + 2)`. Dependency nodes and
//! acceptors see every command at 2 messages each, capping BPaxos at 1/2.

use thiserror::Error;

/// Messages a dependency node or acceptor handles per command.
pub const PER_NODE_FLOOR: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("model inputs must be at least 1 (got L={leaders}, N={n}, R={replicas})")]
pub struct ModelInputError {
    pub leaders: u64,
    pub n: u64,
    pub replicas: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bottleneck {
    /// `L / (2N + R + 1)`, ignoring saturation.
    pub bpaxos: f64,
    pub single_leader: f64,
    /// Smallest `L` at which the 2-message roles bind instead.
    pub saturation_leaders: u64,
    /// `min(bpaxos, 1/2)`.
    pub bpaxos_capped: f64,
}

pub fn bottleneck_model(leaders: u64, n: u64, replicas: u64) -> Result<Bottleneck, ModelInputError> {
    if leaders == 0 || n == 0 || replicas == 0 {
        return Err(ModelInputError { leaders, n, replicas });
    }
    let proposer_load = 2 * n + replicas + 1;
    let bpaxos = leaders as f64 / proposer_load as f64;
    let cap = 1.0 / PER_NODE_FLOOR as f64;
    Ok(Bottleneck {
        bpaxos,
        single_leader: 1.0 / (2 * n + 2) as f64,
        saturation_leaders: proposer_load.div_ceil(PER_NODE_FLOOR),
        bpaxos_capped: bpaxos.min(cap),
    })
}
