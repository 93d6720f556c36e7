//! Closed-loop benchmarks over the simulator or loopback sockets.
//!
//! Simulator throughput is measured in simulated time under the harness's
//! service-time load model, so it shows trends, not hardware numbers.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Duration;

use bpaxos::actor::Note;
use bpaxos::harness::{check_history, run_simulation, History, SimConfig, Violation};
use bpaxos::net::{run_cluster, NetConfig, NetError};
use bpaxos::{ClusterConfig, ConfigError, Role, Time, MILLIS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::workload::generate_workload;

pub const CSV_HEADER: [&str; 9] =
    ["config_id", "f", "leaders", "clients", "conflict_rate", "batch", "throughput", "p50_ms", "p99_ms"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    Sim,
    Socket,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Transport::Sim),
            "socket" => Ok(Transport::Socket),
            _ => Err(format!("unknown transport `{s}` (expected sim or socket)")),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transport::Sim => "sim",
            Transport::Socket => "socket",
        })
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("conflict_rate must be in [0, 1], got {0}")]
    ConflictRate(f64),
    #[error("clients must be at least 1")]
    NoClients,
    #[error("batch_size must be at least 1")]
    BatchSize,
    #[error("warmup_ms ({warmup}) must be shorter than duration_ms ({duration})")]
    Warmup { warmup: u64, duration: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("history check failed: {0}")]
    Violation(Violation),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub clients: usize,
    pub conflict_rate: f64,
    pub batch_size: usize,
    /// Run length: simulated time for `sim`, wall time for `socket`.
    pub duration_ms: u64,
    /// Responses before this point are excluded from the measurements.
    pub warmup_ms: u64,
    /// Stop each client after this many commands instead of running for
    /// the whole duration.
    pub commands_per_client: Option<u64>,
    pub f: usize,
    pub leaders: usize,
    /// Defaults to `leaders`.
    pub proposers: Option<usize>,
    /// Defaults to `f + 1`.
    pub replicas: Option<usize>,
    pub thrifty: bool,
    pub seed: u64,
    pub transport: Transport,
    /// Co-locate one leader, dependency node, proposer, acceptor and replica
    /// per host (`2f + 1` hosts). Overrides the role counts. Simulator only.
    pub coupled: bool,
    /// Simulated processing time per message handled.
    pub service_cost_us: u64,
    pub delay_min_us: u64,
    pub delay_max_us: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            clients: 10,
            conflict_rate: 0.0,
            batch_size: 1,
            duration_ms: 1_000,
            warmup_ms: 100,
            commands_per_client: None,
            f: 1,
            leaders: 2,
            proposers: None,
            replicas: None,
            thrifty: true,
            seed: 0,
            transport: Transport::Sim,
            coupled: false,
            service_cost_us: 10,
            delay_min_us: 50,
            delay_max_us: 150,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if !(0.0..=1.0).contains(&self.conflict_rate) {
            return Err(BenchError::ConflictRate(self.conflict_rate));
        }
        if self.clients == 0 {
            return Err(BenchError::NoClients);
        }
        if self.batch_size == 0 {
            return Err(BenchError::BatchSize);
        }
        if self.commands_per_client.is_none() && self.warmup_ms >= self.duration_ms {
            return Err(BenchError::Warmup { warmup: self.warmup_ms, duration: self.duration_ms });
        }
        self.cluster().validate()?;
        Ok(())
    }

    /// Cluster shape and protocol settings for this benchmark. Timeouts are
    /// long because benchmark runs are failure free and heavily queued.
    pub fn cluster(&self) -> ClusterConfig {
        let mut c = ClusterConfig::minimal(self.f);
        if self.coupled {
            let n = 2 * self.f + 1;
            c.leaders = n;
            c.proposers = n;
            c.replicas = n;
        } else {
            c.leaders = self.leaders;
            c.proposers = self.proposers.unwrap_or(self.leaders);
            c.replicas = self.replicas.unwrap_or(self.f + 1);
        }
        let p = &mut c.protocol;
        p.thrifty = self.thrifty;
        p.batch_size = self.batch_size;
        p.leader_resend = 1_000 * MILLIS;
        p.proposer_resend = 1_000 * MILLIS;
        p.recovery_timeout = 2_000 * MILLIS;
        p.client_retry = 5_000 * MILLIS;
        c
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub config: BenchConfig,
    /// Commands per second answered after warm-up.
    pub throughput: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    /// Commands answered after warm-up.
    pub commands: u64,
    /// Messages sent plus received per command, per node of each role.
    /// Simulator only.
    pub loads: BTreeMap<Role, f64>,
    /// Total messages the acceptors sent and received. Simulator only.
    pub acceptor_messages: u64,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[Time], p: f64) -> Time {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

struct Measured {
    throughput: f64,
    p50_ms: f64,
    p99_ms: f64,
    commands: u64,
}

fn measure(history: &History, from: Time, until: Time) -> Measured {
    let mut lat: Vec<Time> = history
        .iter()
        .filter(|e| e.time >= from && e.time <= until)
        .filter_map(|e| match e.note {
            Note::Respond { latency, .. } => Some(latency),
            _ => None,
        })
        .collect();
    lat.sort_unstable();
    let window = (until.saturating_sub(from)).max(1) as f64 / 1e6;
    let ms = |t: Time| t as f64 / MILLIS as f64;
    Measured {
        throughput: lat.len() as f64 / window,
        p50_ms: ms(percentile(&lat, 50.0)),
        p99_ms: ms(percentile(&lat, 99.0)),
        commands: lat.len() as u64,
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let cluster = cfg.cluster();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let workload = generate_workload(cfg, &mut rng);
    let limit = cfg.duration_ms * MILLIS;
    let warmup = if cfg.commands_per_client.is_some() { 0 } else { cfg.warmup_ms * MILLIS };

    match cfg.transport {
        Transport::Sim => {
            let mut sim = SimConfig::new(cluster.clone(), cfg.seed);
            sim.coupled = cfg.coupled;
            sim.service_cost = cfg.service_cost_us;
            sim.delay = (cfg.delay_min_us, cfg.delay_max_us);
            sim.time_limit = limit;
            let res = run_simulation(sim, workload, &[])?;
            check_history(&res.history).map_err(BenchError::Violation)?;
            let until = if cfg.commands_per_client.is_some() { res.end_time } else { limit };
            let m = measure(&res.history, warmup, until);
            let loads = Role::ALL
                .into_iter()
                .filter(|r| *r != Role::Client)
                .map(|r| (r, res.counts.per_command(r, &cluster)))
                .collect();
            Ok(BenchReport {
                config: cfg.clone(),
                throughput: m.throughput,
                p50_ms: m.p50_ms,
                p99_ms: m.p99_ms,
                commands: m.commands,
                loads,
                acceptor_messages: res.counts.role_total(Role::Acceptor),
            })
        }
        Transport::Socket => {
            let net = NetConfig { cluster, seed: cfg.seed, time_limit: Duration::from_millis(cfg.duration_ms) };
            let res = run_cluster(net, workload)?;
            check_history(&res.history).map_err(BenchError::Violation)?;
            let until = (res.elapsed.as_micros() as Time).max(warmup + 1);
            let m = measure(&res.history, warmup, until);
            Ok(BenchReport {
                config: cfg.clone(),
                throughput: m.throughput,
                p50_ms: m.p50_ms,
                p99_ms: m.p99_ms,
                commands: m.commands,
                loads: BTreeMap::new(),
                acceptor_messages: 0,
            })
        }
    }
}

/// Writes the header and one row per `(config_id, report)`.
pub fn write_csv<W: io::Write>(out: W, rows: &[(String, BenchReport)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (id, r) in rows {
        let c = &r.config;
        w.write_record([
            id.clone(),
            c.f.to_string(),
            c.cluster().leaders.to_string(),
            c.clients.to_string(),
            c.conflict_rate.to_string(),
            c.batch_size.to_string(),
            format!("{:.1}", r.throughput),
            format!("{:.3}", r.p50_ms),
            format!("{:.3}", r.p99_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}
