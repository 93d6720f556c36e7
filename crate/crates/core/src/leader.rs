//! Leaders: assign vertex ids, gather dependencies from a quorum of the
//! dependency service, and hand `(command, deps)` to a proposer.

use std::collections::{BTreeMap, HashMap};

use crate::actor::{Actor, Ctx, Timer};
use crate::config::{ClusterConfig, Mutation};
use crate::message::{Addr, Message};
use crate::types::{union_deps, ClientId, CmdOrNoop, Command, Deps, Proposal, VertexId};

#[derive(Debug, Clone)]
struct PendingVertex {
    cmd: CmdOrNoop,
    replies: BTreeMap<u32, Deps>,
    contacted: Vec<u32>,
    proposer: u32,
}

/// What caused a batch flush attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushTrigger {
    /// A command was just buffered; flush only if the batch is full.
    Size,
    /// The flush timer for buffer generation `n` fired.
    Timer(u64),
}

#[derive(Debug, Clone)]
pub struct Leader {
    pub index: u32,
    config: ClusterConfig,
    next_seq: u32,
    pending: HashMap<VertexId, PendingVertex>,
    batch_buffer: Vec<Command>,
    batch_gen: u64,
    thrifty_cursor: usize,
    // times each client command has reached this leader
    submissions: HashMap<(ClientId, u64), u32>,
}

impl Leader {
    pub fn new(index: u32, config: ClusterConfig) -> Self {
        Leader {
            index,
            config,
            next_seq: 0,
            pending: HashMap::new(),
            batch_buffer: Vec::new(),
            batch_gen: 0,
            thrifty_cursor: 0,
            submissions: HashMap::new(),
        }
    }

    /// Number of vertex ids issued so far.
    pub fn issued(&self) -> u32 {
        self.next_seq
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn buffered(&self) -> usize {
        self.batch_buffer.len()
    }

    fn quorum(&self) -> usize {
        if self.config.mutation(Mutation::DepQuorumOne) {
            1
        } else {
            self.config.quorum()
        }
    }

    /// Issues the next vertex id for `cmd` and sends it to the dependency
    /// service (all nodes, or a rotating quorum in thrifty mode).
    pub fn assign_vertex_id(&mut self, cmd: CmdOrNoop, ctx: &mut Ctx<'_>) -> VertexId {
        let v = VertexId::new(self.index, self.next_seq);
        self.next_seq += 1;

        let n = self.config.dep_nodes;
        let targets: Vec<u32> = if self.config.protocol.thrifty {
            let start = self.thrifty_cursor;
            self.thrifty_cursor = (self.thrifty_cursor + 1) % n;
            (0..self.config.quorum()).map(|k| ((start + k) % n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        let req = Message::DepRequest { v, cmd: cmd.clone() };
        ctx.broadcast(targets.iter().map(|i| Addr::dep(*i)), &req);
        ctx.set_timer(self.config.protocol.leader_resend, Timer::LeaderResend(v));
        // a command this leader already handled once goes to the next
        // proposer, in case the designated one is down
        let resubmits = cmd
            .commands()
            .iter()
            .map(|c| self.submissions.get(&(c.client, c.client_seq)).map_or(0, |n| n - 1))
            .max()
            .unwrap_or(0);
        let proposer = (self.config.designated_proposer(v) + resubmits) % self.config.proposers as u32;
        self.pending.insert(v, PendingVertex { cmd, replies: BTreeMap::new(), contacted: targets, proposer });
        v
    }

    /// Records a dependency reply. Once a quorum of distinct nodes has
    /// answered, returns the proposal built from the union of their replies
    /// and the proposer to send it to.
    pub fn on_dep_reply(&mut self, node: u32, v: VertexId, deps: Deps) -> Option<(Proposal, u32)> {
        let quorum = self.quorum();
        let p = self.pending.get_mut(&v)?;
        p.replies.entry(node).or_insert(deps);
        if p.replies.len() < quorum {
            return None;
        }
        let p = self.pending.remove(&v)?;
        let mut replies = p.replies.into_values();
        let first = replies.next()?;
        let deps = replies.try_fold(first, |acc, d| union_deps(&acc, &d)).ok()?;
        Some((Proposal::new(p.cmd, deps), p.proposer))
    }

    pub fn form_batch(&mut self, trigger: FlushTrigger) -> Option<Vec<Command>> {
        let ready = match trigger {
            FlushTrigger::Size => self.batch_buffer.len() >= self.config.protocol.batch_size,
            FlushTrigger::Timer(gen) => gen == self.batch_gen && !self.batch_buffer.is_empty(),
        };
        if !ready {
            return None;
        }
        self.batch_gen += 1;
        Some(std::mem::take(&mut self.batch_buffer))
    }

    fn on_client_request(&mut self, cmd: Command, ctx: &mut Ctx<'_>) {
        *self.submissions.entry((cmd.client, cmd.client_seq)).or_default() += 1;
        if self.config.protocol.batch_size <= 1 {
            self.assign_vertex_id(CmdOrNoop::Command(cmd), ctx);
            return;
        }
        if self.batch_buffer.is_empty() {
            ctx.set_timer(self.config.protocol.batch_flush, Timer::BatchFlush(self.batch_gen));
        }
        self.batch_buffer.push(cmd);
        if let Some(batch) = self.form_batch(FlushTrigger::Size) {
            self.propose_batch(batch, ctx);
        }
    }

    fn propose_batch(&mut self, mut batch: Vec<Command>, ctx: &mut Ctx<'_>) {
        let cmd = if batch.len() == 1 {
            CmdOrNoop::Command(batch.pop().expect("len checked"))
        } else {
            CmdOrNoop::Batch(batch)
        };
        self.assign_vertex_id(cmd, ctx);
    }
}

impl Actor for Leader {
    fn on_message(&mut self, from: Addr, msg: Message, ctx: &mut Ctx<'_>) {
        match msg {
            Message::ClientRequest { cmd } => self.on_client_request(cmd, ctx),
            Message::DepReply { v, deps, .. } => {
                if let Some((proposal, proposer)) = self.on_dep_reply(from.index, v, deps) {
                    ctx.send(Addr::proposer(proposer), Message::ProposeRequest { v, proposal });
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>) {
        match timer {
            Timer::LeaderResend(v) => {
                let thrifty = self.config.protocol.thrifty;
                let all = self.config.dep_nodes as u32;
                let Some(p) = self.pending.get_mut(&v) else { return };
                if thrifty {
                    // widen to every node after the first timeout
                    p.contacted = (0..all).collect();
                }
                let req = Message::DepRequest { v, cmd: p.cmd.clone() };
                let missing: Vec<Addr> = p
                    .contacted
                    .iter()
                    .filter(|i| !p.replies.contains_key(i))
                    .map(|i| Addr::dep(*i))
                    .collect();
                ctx.broadcast(missing, &req);
                ctx.set_timer(self.config.protocol.leader_resend, Timer::LeaderResend(v));
            }
            Timer::BatchFlush(gen) => {
                if let Some(batch) = self.form_batch(FlushTrigger::Timer(gen)) {
                    self.propose_batch(batch, ctx);
                }
            }
            _ => {}
        }
    }
}
