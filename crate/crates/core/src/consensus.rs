//! One single-decree Paxos instance per vertex.
//!
//! Proposers and acceptors keep independent per-vertex state. The proposer
//! designated for a vertex owns round 0 and may skip phase 1 there, so the
//! common case costs one round trip to the acceptors. Every other round runs
//! both phases. Replicas embed a [`ProposerCore`] to drive noop recovery.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::actor::{Actor, Ctx, Note, Timer};
use crate::config::{ClusterConfig, Mutation, Time};
use crate::message::{Addr, Message, Round};
use crate::types::{Proposal, VertexId};

pub type Vote = Option<(Round, Proposal)>;

/// Per-vertex acceptor state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct AcceptorState {
    pub promised: Option<Round>,
    pub voted: Vote,
}

impl AcceptorState {
    /// Phase 1: promise `round` and report the last vote, or refuse with the
    /// round already promised. A repeated request for the promised round is
    /// answered again.
    pub fn handle_phase1a(&mut self, round: Round) -> Result<Vote, Round> {
        match self.promised {
            Some(p) if round < p => Err(p),
            _ => {
                self.promised = Some(round);
                Ok(self.voted.clone())
            }
        }
    }

    /// Phase 2: vote for `value` in `round` unless a higher round was
    /// promised.
    pub fn handle_phase2a(&mut self, round: Round, value: Proposal) -> Result<Round, Round> {
        match self.promised {
            Some(p) if round < p => Err(p),
            _ => {
                self.promised = Some(round);
                self.voted = Some((round, value));
                Ok(round)
            }
        }
    }

    fn accept_unconditionally(&mut self, round: Round, value: Proposal) -> Round {
        self.promised = Some(self.promised.map_or(round, |p| p.max(round)));
        self.voted = Some((round, value));
        round
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Acceptor {
    pub index: u32,
    ignore_promises: bool,
    states: BTreeMap<VertexId, AcceptorState>,
}

impl Acceptor {
    pub fn new(index: u32, config: &ClusterConfig) -> Self {
        Acceptor {
            index,
            ignore_promises: config.mutation(Mutation::AcceptorIgnoresPromises),
            states: BTreeMap::new(),
        }
    }

    pub fn state(&self, v: VertexId) -> Option<&AcceptorState> {
        self.states.get(&v)
    }

    /// Handles a phase message and returns the reply, if any.
    pub fn handle(&mut self, msg: Message) -> Option<Message> {
        match msg {
            Message::Phase1a { v, round } => {
                let st = self.states.entry(v).or_default();
                Some(match st.handle_phase1a(round) {
                    Ok(vote) => Message::Phase1b { v, round, vote },
                    Err(promised) => Message::Nack { v, round, promised },
                })
            }
            Message::Phase2a { v, round, proposal } => {
                let st = self.states.entry(v).or_default();
                let res = if self.ignore_promises {
                    Ok(st.accept_unconditionally(round, proposal))
                } else {
                    st.handle_phase2a(round, proposal)
                };
                Some(match res {
                    Ok(round) => Message::Phase2b { v, round },
                    Err(promised) => Message::Nack { v, round, promised },
                })
            }
            _ => None,
        }
    }
}

impl Actor for Acceptor {
    fn on_message(&mut self, from: Addr, msg: Message, ctx: &mut Ctx<'_>) {
        if let Some(reply) = self.handle(msg) {
            ctx.send(from, reply);
        }
    }

    fn on_timer(&mut self, _timer: Timer, _ctx: &mut Ctx<'_>) {}
}

/// Safe value for phase 2: the value voted in the highest round among the
/// phase-1 replies, or `own` when nobody has voted.
pub fn select_phase2_value<'a, I>(replies: I, own: &Proposal) -> Proposal
where
    I: IntoIterator<Item = &'a Vote>,
{
    replies
        .into_iter()
        .flatten()
        .max_by_key(|(round, _)| *round)
        .map(|(_, p)| p.clone())
        .unwrap_or_else(|| own.clone())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    One { replies: BTreeMap<u32, Vote> },
    Two { value: Proposal, acks: BTreeSet<u32>, contacted: BTreeSet<u32> },
    /// Nacked; waiting for the backoff timer before a higher round.
    Backoff,
    Chosen(Proposal),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProposerState {
    pub designated: u32,
    pub round: Round,
    pub own_value: Proposal,
    pub phase: Phase,
    pub attempt: u32,
    pub highest_seen: Option<Round>,
}

impl ProposerState {
    pub fn chosen(&self) -> Option<&Proposal> {
        match &self.phase {
            Phase::Chosen(p) => Some(p),
            _ => None,
        }
    }
}

/// Proposer logic shared by the proposer role and the replicas' recovery
/// role. `me` is the identity in the cluster's round scheme.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProposerCore {
    pub me: u32,
    config: ClusterConfig,
    instances: BTreeMap<VertexId, ProposerState>,
}

impl ProposerCore {
    pub fn new(me: u32, config: ClusterConfig) -> Self {
        ProposerCore { me, config, instances: BTreeMap::new() }
    }

    pub fn instance(&self, v: VertexId) -> Option<&ProposerState> {
        self.instances.get(&v)
    }

    pub fn is_active(&self, v: VertexId) -> bool {
        self.instances.get(&v).is_some_and(|s| s.chosen().is_none())
    }

    pub fn forget(&mut self, v: VertexId) {
        self.instances.remove(&v);
    }

    fn acceptors(&self) -> Vec<u32> {
        (0..self.config.acceptors as u32).collect()
    }

    /// Starts consensus on `v` with `value`. The designated proposer skips
    /// phase 1 in round 0; anyone else starts phase 1 in its lowest owned
    /// round. Ignored if an instance for `v` already exists.
    pub fn propose(&mut self, v: VertexId, value: Proposal, ctx: &mut Ctx<'_>) {
        if self.instances.contains_key(&v) {
            return;
        }
        let designated = self.config.designated_proposer(v);
        let scheme = self.config.round_scheme();
        let fast = scheme.owner(designated, Round(0)) == self.me;
        let round = if fast { Round(0) } else { scheme.next_owned(self.me, designated, None, 1) };
        let st = ProposerState {
            designated,
            round,
            own_value: value.clone(),
            phase: Phase::Backoff,
            attempt: 0,
            highest_seen: None,
        };
        self.instances.insert(v, st);
        if fast {
            self.start_phase2(v, value, ctx);
        } else {
            self.start_phase1(v, round, ctx);
        }
    }

    fn start_phase1(&mut self, v: VertexId, round: Round, ctx: &mut Ctx<'_>) {
        let resend = self.config.protocol.proposer_resend;
        let targets = self.acceptors();
        let st = self.instances.get_mut(&v).expect("instance exists");
        st.round = round;
        st.phase = Phase::One { replies: BTreeMap::new() };
        ctx.broadcast(targets.into_iter().map(Addr::acceptor), &Message::Phase1a { v, round });
        ctx.set_timer(resend, Timer::ProposerResend { v, round });
    }

    fn start_phase2(&mut self, v: VertexId, value: Proposal, ctx: &mut Ctx<'_>) {
        let resend = self.config.protocol.proposer_resend;
        let n = self.config.acceptors as u32;
        let contacted: BTreeSet<u32> = if self.config.protocol.thrifty {
            let start = v.seq % n;
            (0..self.config.quorum() as u32).map(|k| (start + k) % n).collect()
        } else {
            (0..n).collect()
        };
        let st = self.instances.get_mut(&v).expect("instance exists");
        let round = st.round;
        let msg = Message::Phase2a { v, round, proposal: value.clone() };
        ctx.broadcast(contacted.iter().map(|i| Addr::acceptor(*i)), &msg);
        st.phase = Phase::Two { value, acks: BTreeSet::new(), contacted };
        ctx.set_timer(resend, Timer::ProposerResend { v, round });
    }

    pub fn on_phase1b(&mut self, acceptor: u32, v: VertexId, round: Round, vote: Vote, ctx: &mut Ctx<'_>) {
        let quorum = self.config.quorum();
        let Some(st) = self.instances.get_mut(&v) else { return };
        if st.round != round {
            return;
        }
        let Phase::One { replies } = &mut st.phase else { return };
        replies.entry(acceptor).or_insert(vote);
        if replies.len() < quorum {
            return;
        }
        let value = select_phase2_value(replies.values(), &st.own_value);
        self.start_phase2(v, value, ctx);
    }

    /// Counts a phase-2 acknowledgement; on a quorum, marks the value chosen,
    /// broadcasts `Commit` to every replica and returns the value.
    pub fn on_phase2b(&mut self, acceptor: u32, v: VertexId, round: Round, ctx: &mut Ctx<'_>) -> Option<Proposal> {
        let quorum = self.config.quorum();
        let replicas: Vec<Addr> = self.config.replica_addrs().collect();
        let st = self.instances.get_mut(&v)?;
        if st.round != round {
            return None;
        }
        let Phase::Two { value, acks, .. } = &mut st.phase else { return None };
        acks.insert(acceptor);
        if acks.len() < quorum {
            return None;
        }
        let value = value.clone();
        st.phase = Phase::Chosen(value.clone());
        ctx.broadcast(replicas, &Message::Commit { v, proposal: value.clone() });
        ctx.note(Note::Chosen { v, proposal: value.clone() });
        Some(value)
    }

    pub fn on_nack(&mut self, v: VertexId, round: Round, promised: Round, ctx: &mut Ctx<'_>) {
        let base = self.config.protocol.backoff_base;
        let Some(st) = self.instances.get_mut(&v) else { return };
        st.highest_seen = Some(st.highest_seen.map_or(promised, |h| h.max(promised)));
        if st.round != round || !matches!(st.phase, Phase::One { .. } | Phase::Two { .. }) {
            return;
        }
        st.phase = Phase::Backoff;
        st.attempt += 1;
        let delay = backoff(base, st.attempt, ctx);
        ctx.set_timer(delay, Timer::ProposerBackoff { v, attempt: st.attempt });
    }

    /// Abandons the current round of `v` (if still undecided) and retries in
    /// a higher owned round immediately.
    pub fn restart(&mut self, v: VertexId, ctx: &mut Ctx<'_>) {
        let scheme = self.config.round_scheme();
        let Some(st) = self.instances.get_mut(&v) else { return };
        if st.chosen().is_some() {
            return;
        }
        let above = Some(st.highest_seen.map_or(st.round, |h| h.max(st.round)));
        let round = scheme.next_owned(self.me, st.designated, above, 1);
        self.start_phase1(v, round, ctx);
    }

    pub fn on_timer(&mut self, timer: &Timer, ctx: &mut Ctx<'_>) {
        match *timer {
            Timer::ProposerBackoff { v, attempt } => {
                let Some(st) = self.instances.get(&v) else { return };
                if st.phase == Phase::Backoff && st.attempt == attempt {
                    self.restart(v, ctx);
                }
            }
            Timer::ProposerResend { v, round } => {
                let resend = self.config.protocol.proposer_resend;
                let all = self.acceptors();
                let Some(st) = self.instances.get_mut(&v) else { return };
                if st.round != round {
                    return;
                }
                match &mut st.phase {
                    Phase::One { replies } => {
                        let missing = all.iter().filter(|a| !replies.contains_key(a));
                        ctx.broadcast(missing.map(|a| Addr::acceptor(*a)), &Message::Phase1a { v, round });
                    }
                    Phase::Two { value, acks, contacted } => {
                        contacted.extend(all.iter().copied());
                        let msg = Message::Phase2a { v, round, proposal: value.clone() };
                        let missing = contacted.iter().filter(|a| !acks.contains(a));
                        ctx.broadcast(missing.map(|a| Addr::acceptor(*a)), &msg);
                    }
                    _ => return,
                }
                ctx.set_timer(resend, Timer::ProposerResend { v, round });
            }
            _ => {}
        }
    }

    /// Routes an acceptor reply. Returns the chosen value when this message
    /// completed a phase-2 quorum.
    pub fn on_acceptor_message(&mut self, from: Addr, msg: Message, ctx: &mut Ctx<'_>) -> Option<Proposal> {
        match msg {
            Message::Phase1b { v, round, vote } => {
                self.on_phase1b(from.index, v, round, vote, ctx);
                None
            }
            Message::Phase2b { v, round } => self.on_phase2b(from.index, v, round, ctx),
            Message::Nack { v, round, promised } => {
                self.on_nack(v, round, promised, ctx);
                None
            }
            _ => None,
        }
    }
}

/// `base * 2^(attempt-1)` plus uniform jitter in `[0, base)`.
pub(crate) fn backoff(base: Time, attempt: u32, ctx: &mut Ctx<'_>) -> Time {
    let exp = base.saturating_mul(1 << attempt.saturating_sub(1).min(16));
    let jitter = if base > 0 { ctx.rng.gen_range(0..base) } else { 0 };
    exp + jitter
}

/// The proposer role: receives `ProposeRequest`s from leaders.
#[derive(Clone, Debug)]
pub struct Proposer {
    pub index: u32,
    pub core: ProposerCore,
}

impl Proposer {
    pub fn new(index: u32, config: ClusterConfig) -> Self {
        Proposer { index, core: ProposerCore::new(index, config) }
    }
}

impl Actor for Proposer {
    fn on_message(&mut self, from: Addr, msg: Message, ctx: &mut Ctx<'_>) {
        match msg {
            Message::ProposeRequest { v, proposal } => self.core.propose(v, proposal, ctx),
            other => {
                self.core.on_acceptor_message(from, other, ctx);
            }
        }
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>) {
        self.core.on_timer(&timer, ctx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ClientId, CmdOrNoop, Command, Deps, KvOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn value(tag: u64) -> Proposal {
        Proposal::new(CmdOrNoop::Command(Command::new(ClientId(tag), 1, KvOp::get("k"))), Deps::empty_exact())
    }

    fn v0() -> VertexId {
        VertexId::new(0, 0)
    }

    #[test]
    fn acceptor_phase1_examples() {
        let mut a = AcceptorState::default();
        assert_eq!(a.handle_phase1a(Round(1)), Ok(None));

        let mut a = AcceptorState { promised: Some(Round(3)), voted: None };
        assert_eq!(a.handle_phase1a(Round(2)), Err(Round(3)));

        let mut a = AcceptorState::default();
        a.handle_phase2a(Round(0), value(1)).unwrap();
        assert_eq!(a.handle_phase1a(Round(1)), Ok(Some((Round(0), value(1)))));
        assert_eq!(a.promised, Some(Round(1)));
    }

    #[test]
    fn acceptor_phase2_examples() {
        let mut a = AcceptorState::default();
        assert_eq!(a.handle_phase2a(Round(0), value(1)), Ok(Round(0)));

        let mut a = AcceptorState { promised: Some(Round(2)), voted: None };
        assert_eq!(a.handle_phase2a(Round(1), value(1)), Err(Round(2)));
        assert_eq!(a.voted, None);

        let mut a = AcceptorState { promised: Some(Round(1)), voted: None };
        assert_eq!(a.handle_phase2a(Round(1), value(1)), Ok(Round(1)));
        assert!(a.voted.as_ref().is_some_and(|(r, _)| *r <= a.promised.unwrap()));
    }

    #[test]
    fn mutated_acceptor_votes_below_promise() {
        let mut cfg = ClusterConfig::minimal(1);
        cfg.protocol.mutation = Some(Mutation::AcceptorIgnoresPromises);
        let mut a = Acceptor::new(0, &cfg);
        a.handle(Message::Phase1a { v: v0(), round: Round(2) });
        let reply = a.handle(Message::Phase2a { v: v0(), round: Round(0), proposal: value(1) });
        assert_eq!(reply, Some(Message::Phase2b { v: v0(), round: Round(0) }));
    }

    #[test]
    fn safe_value_selection() {
        let own = value(0);
        assert_eq!(select_phase2_value(&[None, None], &own), own);
        assert_eq!(select_phase2_value(&[Some((Round(0), value(1))), None], &own), value(1));
        let votes = [Some((Round(0), value(1))), Some((Round(2), value(2)))];
        assert_eq!(select_phase2_value(&votes, &own), value(2));
    }

    #[test]
    fn designated_proposer_skips_phase1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut p = ProposerCore::new(0, ClusterConfig::minimal(1));
        p.propose(v0(), value(1), &mut ctx);
        assert_eq!(ctx.sends.len(), 3);
        assert!(ctx.sends.iter().all(|(_, m)| matches!(m, Message::Phase2a { round: Round(0), .. })));
    }

    #[test]
    fn recovery_proposer_runs_phase1_in_owned_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let cfg = ClusterConfig::minimal(1);
        // identity 2 is replica 0's recovery proposer (2 proposers + 2 replicas)
        let me = cfg.recovery_proposer_id(0);
        let mut p = ProposerCore::new(me, cfg.clone());
        p.propose(v0(), Proposal::noop(), &mut ctx);
        let round = p.instance(v0()).unwrap().round;
        assert!(round.0 >= 1);
        assert_eq!(cfg.round_scheme().owner(0, round), me);
        assert!(ctx.sends.iter().all(|(_, m)| matches!(m, Message::Phase1a { .. })));
    }

    #[test]
    fn nack_moves_to_next_owned_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ClusterConfig::minimal(1);
        let scheme = cfg.round_scheme();
        let mut p = ProposerCore::new(0, cfg);
        let mut ctx = Ctx::new(0, &mut rng);
        p.propose(v0(), value(1), &mut ctx);
        p.on_nack(v0(), Round(0), Round(5), &mut ctx);
        let (_, timer) = ctx.timers.last().cloned().unwrap();
        assert!(matches!(timer, Timer::ProposerBackoff { .. }));
        p.on_timer(&timer, &mut ctx);
        let round = p.instance(v0()).unwrap().round;
        let want = (6..).find(|r| scheme.owner(0, Round(*r)) == 0).unwrap();
        assert_eq!(round, Round(want));
    }

    #[test]
    fn commit_after_quorum_of_acks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut p = ProposerCore::new(0, ClusterConfig::minimal(1));
        p.propose(v0(), value(1), &mut ctx);
        ctx.sends.clear();
        assert_eq!(p.on_phase2b(0, v0(), Round(0), &mut ctx), None);
        assert_eq!(p.on_phase2b(0, v0(), Round(0), &mut ctx), None);
        assert_eq!(p.on_phase2b(2, v0(), Round(0), &mut ctx), Some(value(1)));
        let commits = ctx.sends.iter().filter(|(_, m)| matches!(m, Message::Commit { .. })).count();
        assert_eq!(commits, 2);
        // acks after the decision change nothing
        assert_eq!(p.on_phase2b(1, v0(), Round(0), &mut ctx), None);
        assert_eq!(p.instance(v0()).unwrap().chosen(), Some(&value(1)));
    }

    #[test]
    fn two_of_five_is_not_a_quorum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = Ctx::new(0, &mut rng);
        let mut p = ProposerCore::new(0, ClusterConfig::minimal(2));
        p.propose(v0(), value(1), &mut ctx);
        p.on_phase2b(0, v0(), Round(0), &mut ctx);
        assert_eq!(p.on_phase2b(1, v0(), Round(0), &mut ctx), None);
        assert_eq!(p.on_phase2b(4, v0(), Round(0), &mut ctx), Some(value(1)));
    }
}
