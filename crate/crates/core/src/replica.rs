//! Replicas: execute chosen vertices one strongly connected component at a
//! time, deduplicate client retries and recover vertices that never commit.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use crate::actor::{Actor, Ctx, ExecOutcome, Note, Timer};
use crate::config::{ClusterConfig, Mutation};
use crate::consensus::{backoff, ProposerCore};
use crate::error::SafetyViolation;
use crate::graph::{strongly_connected_components, BPaxosGraph, Insert};
use crate::message::{Addr, Message, Output, Role};
use crate::types::{ClientId, CmdOrNoop, Command, Deps, KvOp, Proposal, VertexId};

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The replica that answers clients for vertex `v`.
pub fn owner_replica(v: VertexId, num_replicas: usize) -> u32 {
    (fnv1a64(&v.to_bytes()) % num_replicas as u64) as u32
}

/// The replicated state machine.
pub trait StateMachine {
    fn apply(&mut self, op: &KvOp) -> Output;
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvStore {
    map: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl KvStore {
    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn entries(&self) -> &BTreeMap<Vec<u8>, Vec<u8>> {
        &self.map
    }
}

impl StateMachine for KvStore {
    fn apply(&mut self, op: &KvOp) -> Output {
        match op {
            KvOp::Get { key } => Output::Value(self.map.get(key).cloned()),
            KvOp::Set { key, value } => {
                self.map.insert(key.clone(), value.clone());
                Output::Ack
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientRow {
    /// Every id in `1..=prefix` has executed.
    prefix: u64,
    sparse: BTreeSet<u64>,
    pub highest_seq: u64,
    pub cached_output: Option<Output>,
}

impl ClientRow {
    fn contains(&self, seq: u64) -> bool {
        (seq >= 1 && seq <= self.prefix) || self.sparse.contains(&seq)
    }

    fn insert(&mut self, seq: u64) {
        if self.contains(seq) {
            return;
        }
        self.sparse.insert(seq);
        while self.sparse.remove(&(self.prefix + 1)) {
            self.prefix += 1;
        }
    }
}

/// Executed request ids and the latest output, per client.
#[derive(Clone, Debug, Default)]
pub struct ClientTable {
    rows: HashMap<ClientId, ClientRow>,
    largest_id_only: bool,
}

impl ClientTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn row(&self, client: ClientId) -> Option<&ClientRow> {
        self.rows.get(&client)
    }

    pub fn executed(&self, client: ClientId, seq: u64) -> bool {
        let Some(row) = self.rows.get(&client) else { return false };
        if self.largest_id_only {
            seq <= row.highest_seq
        } else {
            row.contains(seq)
        }
    }

    /// Output to replay for a duplicate of `(client, seq)`.
    pub fn replay(&self, client: ClientId, seq: u64) -> Output {
        match self.rows.get(&client) {
            Some(row) if row.highest_seq == seq => {
                row.cached_output.clone().unwrap_or(Output::DuplicateUnavailable)
            }
            _ => Output::DuplicateUnavailable,
        }
    }

    pub fn record(&mut self, client: ClientId, seq: u64, output: Output) {
        let row = self.rows.entry(client).or_default();
        row.insert(seq);
        if seq >= row.highest_seq {
            row.highest_seq = seq;
            row.cached_output = Some(output);
        }
    }
}

/// One command (or noop) executed by a replica.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Execution {
    pub v: VertexId,
    pub cmd: Option<Command>,
    pub outcome: ExecOutcome,
    /// What the owner replica sends back to the client.
    pub reply: Option<Output>,
}

pub struct Replica<S = KvStore> {
    pub index: u32,
    config: ClusterConfig,
    graph: BPaxosGraph,
    state: S,
    clients: ClientTable,
    pending: HashSet<VertexId>,
    // unexecuted vertex -> pending vertices that depend on it
    dependents: HashMap<VertexId, Vec<VertexId>>,
    next_unexecuted: Vec<u32>,
    order: Vec<VertexId>,
    recovery: ProposerCore,
    recovery_attempts: HashMap<VertexId, u32>,
}

impl Replica<KvStore> {
    pub fn new(index: u32, config: ClusterConfig) -> Self {
        Replica::with_state_machine(index, config, KvStore::default())
    }
}

impl<S: StateMachine> Replica<S> {
    pub fn with_state_machine(index: u32, config: ClusterConfig, state: S) -> Self {
        let clients = ClientTable {
            rows: HashMap::new(),
            largest_id_only: config.mutation(Mutation::ClientTableLargestIdOnly),
        };
        Replica {
            index,
            recovery: ProposerCore::new(config.recovery_proposer_id(index), config.clone()),
            next_unexecuted: vec![0; config.leaders],
            config,
            graph: BPaxosGraph::new(),
            state,
            clients,
            pending: HashSet::new(),
            dependents: HashMap::new(),
            order: Vec::new(),
            recovery_attempts: HashMap::new(),
        }
    }

    pub fn graph(&self) -> &BPaxosGraph {
        &self.graph
    }

    pub fn state_machine(&self) -> &S {
        &self.state
    }

    pub fn client_table(&self) -> &ClientTable {
        &self.clients
    }

    /// Vertices in the order they executed.
    pub fn executed_order(&self) -> &[VertexId] {
        &self.order
    }

    /// Committed but not yet executed.
    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Uncommitted vertices with a running recovery timer.
    pub fn recovering(&self) -> impl Iterator<Item = &VertexId> {
        self.recovery_attempts.keys()
    }

    pub fn is_owner(&self, v: VertexId) -> bool {
        owner_replica(v, self.config.replicas) == self.index
    }

    /// Adds a chosen vertex and executes whatever became eligible.
    pub fn commit(&mut self, v: VertexId, p: Proposal, ctx: &mut Ctx<'_>) -> Result<Vec<Execution>, SafetyViolation> {
        if self.graph.insert(v, p)? == Insert::Duplicate {
            return Ok(Vec::new());
        }
        self.recovery_attempts.remove(&v);
        self.recovery.forget(v);
        if self.config.mutation(Mutation::ReplicaSkipsSccOrdering) {
            return Ok(self.execute_vertex(v));
        }
        self.pending.insert(v);
        for u in self.unexecuted_deps(v) {
            self.dependents.entry(u).or_default().push(v);
            if !self.graph.is_committed(u) && !self.recovery_attempts.contains_key(&u) {
                self.recovery_attempts.insert(u, 0);
                ctx.set_timer(self.config.protocol.recovery_timeout, Timer::Recovery(u));
            }
        }
        Ok(self.execute_eligible(v))
    }

    fn unexecuted_deps(&self, v: VertexId) -> Vec<VertexId> {
        let p = self.graph.get(v).expect("committed");
        let live = |u: &VertexId| *u != v && !self.graph.is_executed(*u);
        match &p.deps {
            Deps::Exact(s) => s.iter().copied().filter(live).collect(),
            Deps::Compact(marks) => {
                let mut out = Vec::new();
                for (leader, mark) in marks.iter().enumerate() {
                    let Some(mark) = *mark else { continue };
                    let start = self.next_unexecuted.get(leader).copied().unwrap_or(0);
                    if start > mark {
                        continue;
                    }
                    out.extend((start..=mark).map(|k| VertexId::new(leader as u32, k)).filter(live));
                }
                out
            }
        }
    }

    /// Executes every component that the commit of `start` made eligible.
    ///
    /// Only `start` and the pending vertices that (transitively) depend on
    /// it can have become eligible, so the SCC pass is restricted to them.
    pub fn execute_eligible(&mut self, start: VertexId) -> Vec<Execution> {
        if !self.pending.contains(&start) {
            return Vec::new();
        }
        let mut nodes = vec![start];
        let mut idx: HashMap<VertexId, usize> = HashMap::from([(start, 0)]);
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            for d in self.dependents.get(&x).into_iter().flatten() {
                if self.pending.contains(d) && !idx.contains_key(d) {
                    idx.insert(*d, nodes.len());
                    nodes.push(*d);
                    queue.push_back(*d);
                }
            }
        }

        let mut adj = vec![Vec::new(); nodes.len()];
        let mut blocked = vec![false; nodes.len()];
        for (i, v) in nodes.iter().enumerate() {
            for u in self.unexecuted_deps(*v) {
                match idx.get(&u) {
                    Some(j) => adj[i].push(*j),
                    None => blocked[i] = true,
                }
            }
        }

        let comps = strongly_connected_components(&adj);
        let mut comp_of = vec![0; nodes.len()];
        for (c, members) in comps.iter().enumerate() {
            for &i in members {
                comp_of[i] = c;
            }
        }
        let mut done = vec![false; nodes.len()];
        let mut out = Vec::new();
        for (c, members) in comps.iter().enumerate() {
            let ready = members
                .iter()
                .all(|&i| !blocked[i] && adj[i].iter().all(|&j| done[j] || comp_of[j] == c));
            if !ready {
                continue;
            }
            let mut batch: Vec<VertexId> = members.iter().map(|&i| nodes[i]).collect();
            batch.sort_by(VertexId::exec_cmp);
            for v in batch {
                out.extend(self.execute_vertex(v));
            }
            for &i in members {
                done[i] = true;
            }
        }
        out
    }

    fn execute_vertex(&mut self, v: VertexId) -> Vec<Execution> {
        if self.graph.is_executed(v) {
            return Vec::new();
        }
        let cmd = self.graph.get(v).expect("committed").cmd.clone();
        self.graph.mark_executed(v);
        self.pending.remove(&v);
        self.dependents.remove(&v);
        self.order.push(v);
        let l = v.leader as usize;
        if l >= self.next_unexecuted.len() {
            self.next_unexecuted.resize(l + 1, 0);
        }
        while self.graph.is_executed(VertexId::new(v.leader, self.next_unexecuted[l])) {
            self.next_unexecuted[l] += 1;
        }
        match cmd {
            CmdOrNoop::Noop => vec![Execution { v, cmd: None, outcome: ExecOutcome::Noop, reply: None }],
            other => other
                .commands()
                .iter()
                .map(|c| {
                    let (outcome, reply) = self.apply_command(c);
                    Execution { v, cmd: Some(c.clone()), outcome, reply: Some(reply) }
                })
                .collect(),
        }
    }

    /// Runs `cmd` unless its id already executed. Returns the outcome and
    /// the output the client should see.
    pub fn apply_command(&mut self, cmd: &Command) -> (ExecOutcome, Output) {
        if self.clients.executed(cmd.client, cmd.client_seq) {
            return (ExecOutcome::Duplicate, self.clients.replay(cmd.client, cmd.client_seq));
        }
        let output = self.state.apply(&cmd.op);
        self.clients.record(cmd.client, cmd.client_seq, output.clone());
        (ExecOutcome::Applied(output.clone()), output)
    }

    fn report(&self, execs: Vec<Execution>, ctx: &mut Ctx<'_>) {
        for e in execs {
            if let (Some(cmd), Some(output)) = (&e.cmd, &e.reply) {
                if self.is_owner(e.v) {
                    ctx.send(
                        Addr::client(cmd.client.0 as u32),
                        Message::ClientResponse { client: cmd.client, client_seq: cmd.client_seq, output: output.clone() },
                    );
                }
            }
            ctx.note(Note::Executed { v: e.v, cmd: e.cmd, outcome: e.outcome });
        }
    }

    fn commit_and_report(&mut self, v: VertexId, p: Proposal, ctx: &mut Ctx<'_>) {
        match self.commit(v, p, ctx) {
            Ok(execs) => self.report(execs, ctx),
            Err(e) => ctx.note(Note::Alarm { v, detail: e.to_string() }),
        }
    }

    /// Handles an expired recovery timer for `v`.
    pub fn recovery_tick(&mut self, v: VertexId, ctx: &mut Ctx<'_>) {
        if self.graph.is_committed(v) {
            return;
        }
        let Some(attempt) = self.recovery_attempts.get_mut(&v) else { return };
        *attempt += 1;
        let next = *attempt + 1;
        if self.recovery.instance(v).is_some() {
            self.recovery.restart(v, ctx);
        } else {
            self.recovery.propose(v, Proposal::noop(), ctx);
        }
        let delay = backoff(self.config.protocol.recovery_timeout, next, ctx);
        ctx.set_timer(delay, Timer::Recovery(v));
    }
}

impl<S: StateMachine> Actor for Replica<S> {
    fn on_message(&mut self, from: Addr, msg: Message, ctx: &mut Ctx<'_>) {
        match msg {
            Message::Commit { v, proposal } => self.commit_and_report(v, proposal, ctx),
            msg @ (Message::Phase1b { .. } | Message::Phase2b { .. } | Message::Nack { .. })
                if from.role == Role::Acceptor =>
            {
                let v = match &msg {
                    Message::Phase1b { v, .. } | Message::Phase2b { v, .. } | Message::Nack { v, .. } => *v,
                    _ => unreachable!(),
                };
                if let Some(p) = self.recovery.on_acceptor_message(from, msg, ctx) {
                    self.commit_and_report(v, p, ctx);
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>) {
        match timer {
            Timer::Recovery(v) => self.recovery_tick(v, ctx),
            other => self.recovery.on_timer(&other, ctx),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::Round;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::net::Ipv4Addr;

    /// Values starting with `$` copy the named key, so `Set a $b` is `a <- b`.
    #[derive(Default)]
    struct Registers(BTreeMap<Vec<u8>, Vec<u8>>);

    impl StateMachine for Registers {
        fn apply(&mut self, op: &KvOp) -> Output {
            match op {
                KvOp::Get { key } => Output::Value(self.0.get(key).cloned()),
                KvOp::Set { key, value } => {
                    let v = match value.strip_prefix(b"$") {
                        Some(src) => self.0.get(src).cloned().unwrap_or_default(),
                        None => value.clone(),
                    };
                    self.0.insert(key.clone(), v);
                    Output::Ack
                }
            }
        }
    }

    fn v(l: u32, s: u32) -> VertexId {
        VertexId::new(l, s)
    }

    fn cmd(seq: u64, op: KvOp) -> CmdOrNoop {
        CmdOrNoop::Command(Command::new(ClientId(1), seq, op))
    }

    fn prop(c: CmdOrNoop, deps: &[VertexId]) -> Proposal {
        Proposal::new(c, Deps::exact(deps.iter().copied()))
    }

    fn config(replicas: usize) -> ClusterConfig {
        let mut c = ClusterConfig::minimal(1);
        c.replicas = replicas;
        c
    }

    fn ids(execs: &[Execution]) -> Vec<VertexId> {
        let mut out: Vec<VertexId> = Vec::new();
        for e in execs {
            if out.last() != Some(&e.v) {
                out.push(e.v);
            }
        }
        out
    }

    #[test]
    fn figure_execution_waits_for_missing_dependency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut r = Replica::with_state_machine(0, config(2), Registers::default());
        let (v0, v1, v2) = (v(0, 0), v(1, 0), v(0, 1));

        let e = r.commit(v0, prop(cmd(1, KvOp::set("a", "0")), &[]), &mut ctx).unwrap();
        assert_eq!(ids(&e), vec![v0]);

        let e = r.commit(v2, prop(cmd(2, KvOp::set("a", "$b")), &[v0, v1]), &mut ctx).unwrap();
        assert!(e.is_empty());
        assert_eq!(ctx.timers, vec![(100 * crate::config::MILLIS, Timer::Recovery(v1))]);

        let e = r.commit(v1, prop(cmd(3, KvOp::set("b", "0")), &[]), &mut ctx).unwrap();
        assert_eq!(ids(&e), vec![v1, v2]);
        let kv = &r.state_machine().0;
        assert_eq!(kv.len(), 2);
        assert_eq!(kv[&b"a".to_vec()], b"0");
        assert_eq!(kv[&b"b".to_vec()], b"0");
        assert_eq!(r.executed_order().last(), Some(&v2));
    }

    #[test]
    fn cycle_executes_as_one_component_in_id_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut r = Replica::new(0, config(2));
        let (vx, vy, vz) = (v(0, 0), v(1, 1), v(0, 1));
        r.commit(vx, prop(cmd(1, KvOp::set("k", "x")), &[]), &mut ctx).unwrap();
        assert!(r.commit(vy, prop(cmd(2, KvOp::set("k", "y")), &[vx, vz]), &mut ctx).unwrap().is_empty());
        let e = r.commit(vz, prop(cmd(3, KvOp::set("k", "z")), &[vy]), &mut ctx).unwrap();
        // (0,1) precedes (1,1): sequence first, then leader
        assert_eq!(ids(&e), vec![vz, vy]);
        assert_eq!(r.state_machine().get(b"k"), Some(&b"y"[..]));
    }

    #[test]
    fn single_vertex_and_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut r = Replica::new(0, config(2));
        let (a, b, c) = (v(0, 0), v(0, 1), v(1, 0));
        assert!(r.commit(c, prop(cmd(3, KvOp::get("k")), &[b]), &mut ctx).unwrap().is_empty());
        assert!(r.commit(b, prop(cmd(2, KvOp::get("k")), &[a]), &mut ctx).unwrap().is_empty());
        let e = r.commit(a, prop(cmd(1, KvOp::get("k")), &[]), &mut ctx).unwrap();
        assert_eq!(ids(&e), vec![a, b, c]);

        let lone = v(1, 1);
        let e = r.commit(lone, prop(cmd(4, KvOp::get("z")), &[]), &mut ctx).unwrap();
        assert_eq!(ids(&e), vec![lone]);
    }

    #[test]
    fn duplicate_commit_is_noop_and_conflicting_commit_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut r = Replica::new(0, config(2));
        let p = prop(cmd(1, KvOp::set("a", "1")), &[]);
        assert_eq!(r.commit(v(0, 0), p.clone(), &mut ctx).unwrap().len(), 1);
        assert!(r.commit(v(0, 0), p, &mut ctx).unwrap().is_empty());
        let err = r.commit(v(0, 0), Proposal::noop(), &mut ctx).unwrap_err();
        assert_eq!(err.vertex, v(0, 0));
    }

    #[test]
    fn compact_deps_ignore_own_id_and_executed_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut r = Replica::new(0, config(2));
        r.commit(v(0, 0), Proposal::new(cmd(1, KvOp::get("a")), Deps::empty_compact(2)), &mut ctx).unwrap();
        // watermark covers (0,1) itself
        let e = r
            .commit(v(0, 1), Proposal::new(cmd(2, KvOp::get("a")), Deps::compact(2, [(0, 1)])), &mut ctx)
            .unwrap();
        assert_eq!(ids(&e), vec![v(0, 1)]);
    }

    #[test]
    fn noop_leaves_state_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut r = Replica::new(0, config(2));
        let e = r.commit(v(0, 0), Proposal::noop(), &mut ctx).unwrap();
        assert_eq!(e, vec![Execution { v: v(0, 0), cmd: None, outcome: ExecOutcome::Noop, reply: None }]);
        assert!(r.state_machine().is_empty());
    }

    #[test]
    fn client_table_replays_cached_output() {
        let client = ClientId::from(Ipv4Addr::new(10, 31, 14, 41));
        let mut r = Replica::new(0, config(2));
        r.apply_command(&Command::new(ClientId(7), 1, KvOp::set("x", "foo")));
        let get = Command::new(client, 2, KvOp::get("x"));
        let foo = Output::Value(Some(b"foo".to_vec()));
        assert_eq!(r.apply_command(&get), (ExecOutcome::Applied(foo.clone()), foo.clone()));
        let row = r.client_table().row(client).unwrap();
        assert_eq!((row.highest_seq, row.cached_output.clone()), (2, Some(foo.clone())));

        // overwrite x; the re-delivered id 2 must not re-read it
        r.apply_command(&Command::new(ClientId(7), 2, KvOp::set("x", "bar")));
        assert_eq!(r.apply_command(&get), (ExecOutcome::Duplicate, foo));
    }

    #[test]
    fn older_id_still_executes_after_newer_one() {
        let client = ClientId(3);
        let x = Command::new(client, 1, KvOp::set("a", "x"));
        let y = Command::new(client, 2, KvOp::set("b", "y"));
        let mut r = Replica::new(0, config(2));
        r.apply_command(&y);
        assert_eq!(r.apply_command(&x), (ExecOutcome::Applied(Output::Ack), Output::Ack));
        assert_eq!(r.state_machine().get(b"a"), Some(&b"x"[..]));
        assert_eq!(r.apply_command(&x).0, ExecOutcome::Duplicate);
        assert_eq!(r.apply_command(&x).1, Output::DuplicateUnavailable);

        let mut c = config(2);
        c.protocol.mutation = Some(Mutation::ClientTableLargestIdOnly);
        let mut broken = Replica::new(0, c);
        broken.apply_command(&y);
        assert_eq!(broken.apply_command(&x).0, ExecOutcome::Duplicate);
    }

    #[test]
    fn client_row_watermark_absorbs_sparse_ids() {
        let mut row = ClientRow::default();
        for s in [3, 1, 2, 5] {
            row.insert(s);
        }
        assert_eq!(row.prefix, 3);
        assert_eq!(row.sparse, BTreeSet::from([5]));
        assert!(row.contains(5) && !row.contains(4) && !row.contains(0));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn exactly_one_owner() {
        for l in 0..4 {
            for s in 0..50 {
                assert_eq!(owner_replica(v(l, s), 1), 0);
                let owners = (0..2).filter(|i| owner_replica(v(l, s), 2) == *i).count();
                assert_eq!(owners, 1);
            }
        }
    }

    #[test]
    fn batch_responses_come_from_owner_only() {
        let batch = CmdOrNoop::Batch(vec![
            Command::new(ClientId(1), 1, KvOp::get("a")),
            Command::new(ClientId(2), 1, KvOp::get("b")),
            Command::new(ClientId(3), 1, KvOp::get("c")),
        ]);
        let id = v(0, 0);
        let mut sent = Vec::new();
        for i in 0..2 {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut ctx = Ctx::new(0, &mut rng);
            let mut r = Replica::new(i, config(2));
            r.on_message(Addr::proposer(0), Message::Commit { v: id, proposal: prop(batch.clone(), &[]) }, &mut ctx);
            sent.push(ctx.sends.len());
        }
        let owner = owner_replica(id, 2) as usize;
        assert_eq!(sent[owner], 3);
        assert_eq!(sent[1 - owner], 0);
    }

    #[test]
    fn recovery_proposes_noop_and_cancels_on_commit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let cfg = config(2);
        let mut r = Replica::new(0, cfg.clone());
        let missing = v(1, 0);
        r.commit(v(0, 0), prop(cmd(1, KvOp::get("a")), &[missing]), &mut ctx).unwrap();
        ctx.timers.clear();

        r.on_timer(Timer::Recovery(missing), &mut ctx);
        let phase1: Vec<_> = ctx.sends.iter().filter(|(_, m)| matches!(m, Message::Phase1a { .. })).collect();
        assert_eq!(phase1.len(), 3);
        let Message::Phase1a { round, .. } = &phase1[0].1 else { unreachable!() };
        assert!(*round >= Round(1));
        assert_eq!(cfg.round_scheme().owner(cfg.designated_proposer(missing), *round), cfg.recovery_proposer_id(0));
        assert!(ctx.timers.iter().any(|(_, t)| *t == Timer::Recovery(missing)));

        // Commit arrives before the next expiry: nothing more is proposed.
        r.commit(missing, Proposal::noop(), &mut ctx).unwrap();
        ctx.sends.clear();
        r.on_timer(Timer::Recovery(missing), &mut ctx);
        assert!(ctx.sends.is_empty());
        assert_eq!(r.pending_len(), 0);
    }

    #[test]
    fn skip_ordering_mutation_executes_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut c = config(2);
        c.protocol.mutation = Some(Mutation::ReplicaSkipsSccOrdering);
        let mut r = Replica::new(0, c);
        let e = r.commit(v(0, 1), prop(cmd(1, KvOp::get("a")), &[v(0, 0)]), &mut ctx).unwrap();
        assert_eq!(ids(&e), vec![v(0, 1)]);
    }
}
