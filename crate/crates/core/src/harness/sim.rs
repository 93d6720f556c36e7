//! Deterministic discrete-event simulator.
//!
//! Every role instance lives on a simulated host. Delivering a message or
//! firing a timer occupies the host for `service_cost` per message received
//! and sent; work that arrives while the host is busy waits in a FIFO
//! backlog. Sends leave when the step finishes and arrive after a uniformly
//! drawn link delay. Events at the same instant run in insertion order, so a
//! run is a pure function of its configuration, workload, faults and seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actor::{Actor, Ctx, Node, Note, Timer};
use crate::client::{Client, OpStream};
use crate::config::{ClusterConfig, Time, MILLIS};
use crate::error::ConfigError;
use crate::harness::counts::MessageCounts;
use crate::harness::faults::{Fault, Link};
use crate::harness::history::History;
use crate::message::{Addr, Message};
use crate::replica::Replica;
use crate::wire;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub seed: u64,
    pub cluster: ClusterConfig,
    /// One-way link delay, drawn uniformly from `[min, max]`.
    pub delay: (Time, Time),
    pub drop_prob: f64,
    pub dup_prob: f64,
    /// One host per index runs a leader, dependency node, proposer,
    /// acceptor and replica. Messages between co-located roles have no
    /// link delay but are still charged service time.
    pub coupled: bool,
    pub service_cost: Time,
    pub time_limit: Time,
    /// Record every transmitted frame in [`SimResult::trace`].
    pub trace: bool,
}

impl SimConfig {
    pub fn new(cluster: ClusterConfig, seed: u64) -> Self {
        SimConfig {
            seed,
            cluster,
            delay: (100, 1_000),
            drop_prob: 0.0,
            dup_prob: 0.0,
            coupled: false,
            service_cost: 0,
            time_limit: 60_000 * MILLIS,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cluster.validate()?;
        for p in [self.drop_prob, self.dup_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Probability(p));
            }
        }
        if self.delay.0 > self.delay.1 {
            return Err(ConfigError::Delay { min: self.delay.0, max: self.delay.1 });
        }
        let c = &self.cluster;
        let n = c.dep_nodes;
        if self.coupled && (c.leaders != n || c.proposers != n || c.replicas != n) {
            return Err(ConfigError::Coupled { expected: n });
        }
        Ok(())
    }
}

pub struct SimResult {
    pub history: History,
    pub counts: MessageCounts,
    /// Time of the last processed event.
    pub end_time: Time,
    /// Events were still pending when the time limit was reached.
    pub timed_out: bool,
    pub nodes: BTreeMap<Addr, Node>,
    /// Transmitted frames: departure time (`u64`), destination (role byte,
    /// `u32` index), then the wire frame.
    pub trace: Vec<u8>,
}

impl SimResult {
    pub fn replica(&self, i: u32) -> Option<&Replica> {
        match self.nodes.get(&Addr::replica(i)) {
            Some(Node::Replica(r)) => Some(r),
            _ => None,
        }
    }

    pub fn client(&self, i: u32) -> Option<&Client> {
        match self.nodes.get(&Addr::client(i)) {
            Some(Node::Client(c)) => Some(c),
            _ => None,
        }
    }
}

enum Work {
    Deliver { from: Addr, to: Addr, msg: Message },
    Timer { to: Addr, timer: Timer },
}

enum Payload {
    Arrive(Work),
    HostFree(usize),
}

struct Queued {
    time: Time,
    seq: u64,
    payload: Payload,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Host {
    cost: Time,
    busy_until: Time,
    backlog: VecDeque<Work>,
}

pub struct Simulation {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    now: Time,
    seq: u64,
    queue: BinaryHeap<Queued>,
    nodes: BTreeMap<Addr, Node>,
    host_of: BTreeMap<Addr, usize>,
    hosts: Vec<Host>,
    crash_at: BTreeMap<Addr, Time>,
    partitions: Vec<(Vec<Addr>, Time, Time)>,
    link_drop: BTreeMap<Link, f64>,
    link_dup: BTreeMap<Link, f64>,
    history: History,
    counts: MessageCounts,
    trace: Vec<u8>,
}

impl Simulation {
    /// Builds the cluster plus one closed-loop client per op stream.
    pub fn new(cfg: SimConfig, workload: Vec<OpStream>, faults: &[Fault]) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let cluster = cfg.cluster.clone();
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            host_of: BTreeMap::new(),
            hosts: Vec::new(),
            crash_at: BTreeMap::new(),
            partitions: Vec::new(),
            link_drop: BTreeMap::new(),
            link_dup: BTreeMap::new(),
            history: History::default(),
            counts: MessageCounts::default(),
            trace: Vec::new(),
            cfg,
        };

        let mut coupled_hosts: BTreeMap<u32, usize> = BTreeMap::new();
        for addr in cluster.all_addrs() {
            let node = Node::for_addr(addr, &cluster).expect("protocol role");
            let host = if sim.cfg.coupled {
                *coupled_hosts.entry(addr.index).or_insert_with(|| sim.add_host(sim.cfg.service_cost))
            } else {
                sim.add_host(sim.cfg.service_cost)
            };
            sim.host_of.insert(addr, host);
            sim.nodes.insert(addr, node);
        }
        let retry = cluster.protocol.client_retry;
        for (i, ops) in workload.into_iter().enumerate() {
            let addr = Addr::client(i as u32);
            let host = sim.add_host(0);
            sim.host_of.insert(addr, host);
            sim.nodes.insert(addr, Node::Client(Client::new(i as u32, cluster.leaders, retry, ops)));
            sim.schedule(0, Payload::Arrive(Work::Timer { to: addr, timer: Timer::ClientStart }));
        }

        for fault in faults {
            match fault {
                Fault::Crash { node, at } => {
                    let t = sim.crash_at.entry(*node).or_insert(*at);
                    *t = (*t).min(*at);
                }
                Fault::Partition { nodes, start, end } => sim.partitions.push((nodes.clone(), *start, *end)),
                Fault::Drop { link, prob } => {
                    sim.link_drop.insert(*link, *prob);
                }
                Fault::Duplicate { link, prob } => {
                    sim.link_dup.insert(*link, *prob);
                }
            }
        }
        Ok(sim)
    }

    fn add_host(&mut self, cost: Time) -> usize {
        self.hosts.push(Host { cost, busy_until: 0, backlog: VecDeque::new() });
        self.hosts.len() - 1
    }

    fn schedule(&mut self, time: Time, payload: Payload) {
        self.seq += 1;
        self.queue.push(Queued { time, seq: self.seq, payload });
    }

    fn crashed(&self, addr: Addr, t: Time) -> bool {
        self.crash_at.get(&addr).is_some_and(|c| *c <= t)
    }

    fn partitioned(&self, a: Addr, b: Addr, t: Time) -> bool {
        self.partitions
            .iter()
            .any(|(set, s, e)| *s <= t && t < *e && (set.contains(&a) != set.contains(&b)))
    }

    pub fn run(mut self) -> SimResult {
        let mut timed_out = false;
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.cfg.time_limit {
                timed_out = true;
                break;
            }
            self.now = ev.time;
            match ev.payload {
                Payload::Arrive(work) => {
                    let to = match &work {
                        Work::Deliver { to, .. } | Work::Timer { to, .. } => *to,
                    };
                    let Some(&h) = self.host_of.get(&to) else { continue };
                    let host = &mut self.hosts[h];
                    if host.busy_until > self.now || !host.backlog.is_empty() {
                        host.backlog.push_back(work);
                    } else {
                        self.process(h, work);
                    }
                }
                Payload::HostFree(h) => {
                    if self.hosts[h].busy_until > self.now {
                        continue;
                    }
                    if let Some(work) = self.hosts[h].backlog.pop_front() {
                        self.process(h, work);
                    }
                }
            }
        }
        SimResult {
            history: self.history,
            counts: self.counts,
            end_time: self.now,
            timed_out,
            nodes: self.nodes,
            trace: self.trace,
        }
    }

    fn process(&mut self, h: usize, work: Work) {
        let now = self.now;
        let (addr, received) = match &work {
            Work::Deliver { to, .. } => (*to, 1),
            Work::Timer { to, .. } => (*to, 0),
        };
        if self.crashed(addr, now) {
            if !self.hosts[h].backlog.is_empty() {
                self.schedule(now, Payload::HostFree(h));
            }
            return;
        }
        let node = self.nodes.get_mut(&addr).expect("routed to a known node");
        let mut ctx = Ctx::new(now, &mut self.rng);
        match work {
            Work::Deliver { from, msg, .. } => {
                self.counts.record_receive(addr);
                node.on_message(from, msg, &mut ctx);
            }
            Work::Timer { timer, .. } => node.on_timer(timer, &mut ctx),
        }
        let Ctx { sends, timers, notes, .. } = ctx;

        let cost = self.hosts[h].cost * (received + sends.len() as u64);
        let depart = now + cost;
        self.hosts[h].busy_until = depart;
        if cost > 0 || !self.hosts[h].backlog.is_empty() {
            self.schedule(depart, Payload::HostFree(h));
        }
        for note in notes {
            if matches!(note, Note::Respond { .. }) {
                self.counts.commands += 1;
            }
            self.history.push(now, addr, note);
        }
        for (delay, timer) in timers {
            self.schedule(now + delay, Payload::Arrive(Work::Timer { to: addr, timer }));
        }
        for (to, msg) in sends {
            self.counts.record_send(addr);
            self.transmit(addr, to, msg, depart);
        }
    }

    fn transmit(&mut self, from: Addr, to: Addr, msg: Message, depart: Time) {
        let Some(&to_host) = self.host_of.get(&to) else { return };
        if self.partitioned(from, to, depart) {
            return;
        }
        let local = self.host_of.get(&from) == Some(&to_host);
        let link = Link::new(from, to);
        let (drop, dup) = if local {
            (0.0, 0.0)
        } else {
            let combine = |g: f64, l: Option<&f64>| 1.0 - (1.0 - g) * (1.0 - l.copied().unwrap_or(0.0));
            (combine(self.cfg.drop_prob, self.link_drop.get(&link)), combine(self.cfg.dup_prob, self.link_dup.get(&link)))
        };
        if drop > 0.0 && self.rng.gen_bool(drop) {
            return;
        }
        let copies = if dup > 0.0 && self.rng.gen_bool(dup) { 2 } else { 1 };
        for _ in 0..copies {
            let delay = if local { 0 } else { self.rng.gen_range(self.cfg.delay.0..=self.cfg.delay.1) };
            if self.cfg.trace {
                self.trace.extend_from_slice(&depart.to_be_bytes());
                self.trace.push(to.role as u8);
                self.trace.extend_from_slice(&to.index.to_be_bytes());
                self.trace.extend_from_slice(&wire::encode_frame(from, &msg));
            }
            self.schedule(depart + delay, Payload::Arrive(Work::Deliver { from, to, msg: msg.clone() }));
        }
    }
}

/// Runs a cluster with one closed-loop client per op stream until no events
/// remain or the time limit passes.
pub fn run_simulation(cfg: SimConfig, workload: Vec<OpStream>, faults: &[Fault]) -> Result<SimResult, ConfigError> {
    Ok(Simulation::new(cfg, workload, faults)?.run())
}
