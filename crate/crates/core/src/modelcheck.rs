//! Explicit-state exploration of the abstract protocol model.
//!
//! The model leaves out messages, leaders, proposers and replicas. Commands
//! are proposed into numbered vertices, dependency nodes compute conflicts
//! against what they have already seen, and an abstract consensus service
//! chooses one proposal (a dependency-service quorum reply or a noop) per
//! vertex. [`explore`] visits every reachable state breadth first, checks
//! the safety invariants on each state and transition, and checks on
//! terminal states that when no noop was chosen every command was chosen.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::fmt;

use thiserror::Error;

/// Command index; `a`, `b`, ... when printed.
pub type Cmd = u8;
pub type Vertex = u8;

const MAX_COMMANDS: usize = 16;
const MAX_VERTICES: usize = 32;

/// A command (`None` is noop) with its dependencies.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbsProposal {
    pub cmd: Option<Cmd>,
    pub deps: BTreeSet<Vertex>,
}

impl AbsProposal {
    pub fn noop() -> Self {
        AbsProposal { cmd: None, deps: BTreeSet::new() }
    }

    pub fn is_noop(&self) -> bool {
        self.cmd.is_none()
    }
}

fn cmd_name(c: Option<Cmd>) -> String {
    match c {
        None => "noop".to_string(),
        Some(c) if c < 26 => char::from(b'a' + c).to_string(),
        Some(c) => format!("c{c}"),
    }
}

impl fmt::Display for AbsProposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let deps: Vec<String> = self.deps.iter().map(|v| format!("v{v}")).collect();
        write!(f, "{} deps {{{}}}", cmd_name(self.cmd), deps.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbstractState {
    /// `dependency_graphs[d][v]`: what dependency node `d` recorded for `v`.
    pub dependency_graphs: Vec<Vec<Option<AbsProposal>>>,
    pub next_vertex_id: Vertex,
    pub proposed_commands: Vec<Option<Cmd>>,
    pub proposals: Vec<BTreeSet<AbsProposal>>,
    pub chosen: Vec<Option<AbsProposal>>,
}

impl AbstractState {
    pub fn initial(cfg: &ModelConfig) -> Self {
        let n = cfg.vertex_bound;
        AbstractState {
            dependency_graphs: vec![vec![None; n]; cfg.dep_nodes],
            next_vertex_id: 0,
            proposed_commands: vec![None; n],
            proposals: vec![BTreeSet::new(); n],
            chosen: vec![None; n],
        }
    }

    fn vertices(&self) -> impl Iterator<Item = Vertex> {
        0..self.chosen.len() as Vertex
    }

    fn has_quorum_reply(&self, quorum: &[u8], v: Vertex) -> bool {
        quorum.iter().all(|&d| self.dependency_graphs[d as usize][v as usize].is_some())
    }

    /// Union of the quorum's replies for `v`. Callers check
    /// [`Self::has_quorum_reply`] first.
    fn quorum_reply(&self, quorum: &[u8], v: Vertex) -> AbsProposal {
        let mut cmd = None;
        let mut deps = BTreeSet::new();
        for &d in quorum {
            let r = self.dependency_graphs[d as usize][v as usize].as_ref().expect("quorum replied");
            cmd = r.cmd;
            deps.extend(r.deps.iter().copied());
        }
        AbsProposal { cmd, deps }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    ProposeCommand(Cmd),
    DepServiceProcess { node: u8, v: Vertex },
    ConsensusProposeNoop(Vertex),
    ConsensusPropose { v: Vertex, quorum: Vec<u8> },
    ConsensusChoose { v: Vertex, value: AbsProposal },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ProposeCommand(c) => write!(f, "ProposeCommand({})", cmd_name(Some(*c))),
            Action::DepServiceProcess { node, v } => write!(f, "DepServiceProcess(d{node}, v{v})"),
            Action::ConsensusProposeNoop(v) => write!(f, "ConsensusProposeNoop(v{v})"),
            Action::ConsensusPropose { v, quorum } => {
                let q: Vec<String> = quorum.iter().map(|d| format!("d{d}")).collect();
                write!(f, "ConsensusPropose(v{v}, {{{}}})", q.join(","))
            }
            Action::ConsensusChoose { v, value } => write!(f, "ConsensusChoose(v{v}, {value})"),
        }
    }
}

/// Which command pairs conflict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConflictRelation {
    /// Every pair of distinct commands.
    Full,
    None,
    /// Symmetric closure of the listed pairs.
    Pairs(Vec<(Cmd, Cmd)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("at most {MAX_COMMANDS} commands are supported, got {0}")]
    TooManyCommands(usize),
    #[error("vertex bound must be between 1 and {MAX_VERTICES}, got {0}")]
    VertexBound(usize),
    #[error("quorum size {quorum} is not between 1 and the {nodes} dependency nodes")]
    QuorumSize { quorum: usize, nodes: usize },
    #[error("conflict pair ({0}, {1}) names an unknown command")]
    UnknownCommand(Cmd, Cmd),
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub commands: usize,
    pub conflicts: ConflictRelation,
    pub dep_nodes: usize,
    /// Dependency-service quorums are all subsets of this size.
    pub quorum_size: usize,
    /// Number of vertex ids, `0..vertex_bound`.
    pub vertex_bound: usize,
    /// Exploration stops, flagged incomplete, after this many states.
    pub max_states: usize,
    /// Mutation: let the consensus service overwrite a chosen value.
    pub rechoose: bool,
}

impl ModelConfig {
    pub fn new(commands: usize, dep_nodes: usize, quorum_size: usize, vertex_bound: usize) -> Self {
        ModelConfig {
            commands,
            conflicts: ConflictRelation::Full,
            dep_nodes,
            quorum_size,
            vertex_bound,
            max_states: 2_000_000,
            rechoose: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.commands > MAX_COMMANDS {
            return Err(ModelError::TooManyCommands(self.commands));
        }
        if self.vertex_bound == 0 || self.vertex_bound > MAX_VERTICES {
            return Err(ModelError::VertexBound(self.vertex_bound));
        }
        if self.quorum_size == 0 || self.quorum_size > self.dep_nodes {
            return Err(ModelError::QuorumSize { quorum: self.quorum_size, nodes: self.dep_nodes });
        }
        if let ConflictRelation::Pairs(pairs) = &self.conflicts {
            for &(a, b) in pairs {
                if a as usize >= self.commands || b as usize >= self.commands {
                    return Err(ModelError::UnknownCommand(a, b));
                }
            }
        }
        Ok(())
    }

    pub fn conflict(&self, a: Option<Cmd>, b: Option<Cmd>) -> bool {
        let (Some(a), Some(b)) = (a, b) else { return false };
        match &self.conflicts {
            ConflictRelation::Full => a != b,
            ConflictRelation::None => false,
            ConflictRelation::Pairs(p) => p.contains(&(a, b)) || p.contains(&(b, a)),
        }
    }

    /// All `quorum_size`-subsets of the dependency nodes.
    pub fn quorums(&self) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        subsets(self.dep_nodes as u8, self.quorum_size, 0, &mut cur, &mut out);
        out
    }
}

fn subsets(n: u8, k: usize, from: u8, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for d in from..n {
        cur.push(d);
        subsets(n, k, d + 1, cur, out);
        cur.pop();
    }
}

/// Every enabled action and the state it leads to. Actions that leave the
/// state unchanged (re-proposing a proposal already in the set) are omitted.
pub fn successors(s: &AbstractState, cfg: &ModelConfig) -> Vec<(Action, AbstractState)> {
    successors_with(s, cfg, &cfg.quorums())
}

fn successors_with(s: &AbstractState, cfg: &ModelConfig, quorums: &[Vec<u8>]) -> Vec<(Action, AbstractState)> {
    let mut out = Vec::new();

    if (s.next_vertex_id as usize) < cfg.vertex_bound {
        for c in 0..cfg.commands as Cmd {
            if s.proposed_commands.contains(&Some(c)) {
                continue;
            }
            let mut t = s.clone();
            t.proposed_commands[s.next_vertex_id as usize] = Some(c);
            t.next_vertex_id += 1;
            out.push((Action::ProposeCommand(c), t));
        }
    }

    for d in 0..cfg.dep_nodes {
        for v in s.vertices() {
            let Some(cmd) = s.proposed_commands[v as usize] else { continue };
            let g = &s.dependency_graphs[d];
            if g[v as usize].is_some() {
                continue;
            }
            let deps = (0..g.len() as Vertex)
                .filter(|&u| g[u as usize].as_ref().is_some_and(|p| cfg.conflict(Some(cmd), p.cmd)))
                .collect();
            let mut t = s.clone();
            t.dependency_graphs[d][v as usize] = Some(AbsProposal { cmd: Some(cmd), deps });
            out.push((Action::DepServiceProcess { node: d as u8, v }, t));
        }
    }

    for v in s.vertices() {
        let noop = AbsProposal::noop();
        if !s.proposals[v as usize].contains(&noop) {
            let mut t = s.clone();
            t.proposals[v as usize].insert(noop);
            out.push((Action::ConsensusProposeNoop(v), t));
        }
    }

    for v in s.vertices() {
        for q in quorums {
            if !s.has_quorum_reply(q, v) {
                continue;
            }
            let reply = s.quorum_reply(q, v);
            if s.proposals[v as usize].contains(&reply) {
                continue;
            }
            let mut t = s.clone();
            t.proposals[v as usize].insert(reply);
            out.push((Action::ConsensusPropose { v, quorum: q.clone() }, t));
        }
    }

    for v in s.vertices() {
        let current = &s.chosen[v as usize];
        if current.is_some() && !cfg.rechoose {
            continue;
        }
        for p in &s.proposals[v as usize] {
            if current.as_ref() == Some(p) {
                continue;
            }
            let mut t = s.clone();
            t.chosen[v as usize] = Some(p.clone());
            out.push((Action::ConsensusChoose { v, value: p.clone() }, t));
        }
    }

    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Invariant {
    ConsensusConsistency,
    DepServiceConflicts,
    Nontriviality,
    ChosenConflicts,
    /// Terminal states with no chosen noop have every command chosen.
    NoNoopEverythingChosen,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Step invariant: a chosen value never changes.
pub fn consensus_consistency(s: &AbstractState, t: &AbstractState) -> bool {
    s.chosen.iter().zip(&t.chosen).all(|(a, b)| a.is_none() || a == b)
}

pub fn dep_service_conflicts(s: &AbstractState, cfg: &ModelConfig) -> bool {
    dep_service_conflicts_with(s, cfg, &cfg.quorums())
}

fn dep_service_conflicts_with(s: &AbstractState, cfg: &ModelConfig, quorums: &[Vec<u8>]) -> bool {
    let mut replies: Vec<(Vertex, AbsProposal)> = Vec::new();
    for v in s.vertices() {
        for q in quorums {
            if s.has_quorum_reply(q, v) {
                replies.push((v, s.quorum_reply(q, v)));
            }
        }
    }
    pairwise_ordered(&replies, cfg)
}

fn pairwise_ordered(props: &[(Vertex, AbsProposal)], cfg: &ModelConfig) -> bool {
    props.iter().all(|(v1, p1)| {
        props.iter().all(|(v2, p2)| {
            v1 == v2 || !cfg.conflict(p1.cmd, p2.cmd) || p2.deps.contains(v1) || p1.deps.contains(v2)
        })
    })
}

pub fn nontriviality(s: &AbstractState) -> bool {
    s.chosen.iter().flatten().all(|p| p.cmd.is_none() || s.proposed_commands.contains(&p.cmd))
}

pub fn chosen_conflicts(s: &AbstractState, cfg: &ModelConfig) -> bool {
    let chosen: Vec<(Vertex, AbsProposal)> =
        s.chosen.iter().enumerate().filter_map(|(v, p)| Some((v as Vertex, p.clone()?))).collect();
    pairwise_ordered(&chosen, cfg)
}

/// Every proposed command is chosen at some vertex. With at least as many
/// vertex ids as commands, a terminal state has proposed all of them.
pub fn everything_chosen(s: &AbstractState) -> bool {
    s.proposed_commands.iter().flatten().all(|c| s.chosen.iter().flatten().any(|p| p.cmd == Some(*c)))
}

pub fn no_noop(s: &AbstractState) -> bool {
    !s.chosen.iter().flatten().any(AbsProposal::is_noop)
}

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub invariant: Invariant,
    /// From the initial state; the first entry has no action.
    pub trace: Vec<(Option<Action>, AbstractState)>,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "counterexample: {} ({} steps)", self.invariant, self.trace.len() - 1)?;
        for (i, (action, state)) in self.trace.iter().enumerate() {
            match action {
                None => writeln!(f, "  {i}: init")?,
                Some(a) => writeln!(f, "  {i}: {a}")?,
            }
            let chosen: Vec<String> = state
                .chosen
                .iter()
                .enumerate()
                .filter_map(|(v, p)| p.as_ref().map(|p| format!("v{v}={p}")))
                .collect();
            if !chosen.is_empty() {
                writeln!(f, "     chosen: {}", chosen.join("; "))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub states: usize,
    pub transitions: usize,
    pub terminal_states: usize,
    /// False when `max_states` cut the exploration short.
    pub complete: bool,
    pub violation: Option<Counterexample>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.complete && self.violation.is_none()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "states: {}", self.states)?;
        writeln!(f, "transitions: {}", self.transitions)?;
        writeln!(f, "terminal_states: {}", self.terminal_states)?;
        writeln!(f, "complete: {}", self.complete)?;
        match &self.violation {
            None if self.complete => writeln!(f, "verdict: ok"),
            None => writeln!(f, "verdict: incomplete (no violation within the state limit)"),
            Some(cx) => {
                writeln!(f, "verdict: violation")?;
                write!(f, "{cx}")
            }
        }
    }
}

/// Breadth-first exploration; stops at the first violation, so any
/// counterexample is a shortest one.
pub fn explore(cfg: &ModelConfig) -> Result<Report, ModelError> {
    explore_states(cfg).map(|(report, _)| report)
}

fn fingerprint(s: &AbstractState) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

/// Visited states by hash, pointing into the state list so each state is
/// stored once.
#[derive(Default)]
struct StateIndex {
    first: HashMap<u64, usize>,
    collisions: HashMap<u64, Vec<usize>>,
}

impl StateIndex {
    fn contains(&self, s: &AbstractState, states: &[AbstractState]) -> bool {
        let h = fingerprint(s);
        match self.first.get(&h) {
            None => false,
            Some(&i) if states[i] == *s => true,
            Some(_) => self.collisions.get(&h).is_some_and(|c| c.iter().any(|&i| states[i] == *s)),
        }
    }

    fn insert(&mut self, s: &AbstractState, i: usize) {
        let h = fingerprint(s);
        if self.first.contains_key(&h) {
            self.collisions.entry(h).or_default().push(i);
        } else {
            self.first.insert(h, i);
        }
    }
}

/// Like [`explore`], also returning every visited state.
pub fn explore_states(cfg: &ModelConfig) -> Result<(Report, Vec<AbstractState>), ModelError> {
    cfg.validate()?;
    let quorums = cfg.quorums();
    let check = |s: &AbstractState| -> Option<Invariant> {
        if !dep_service_conflicts_with(s, cfg, &quorums) {
            Some(Invariant::DepServiceConflicts)
        } else if !nontriviality(s) {
            Some(Invariant::Nontriviality)
        } else if !chosen_conflicts(s, cfg) {
            Some(Invariant::ChosenConflicts)
        } else {
            None
        }
    };

    let init = AbstractState::initial(cfg);
    let mut states = vec![init.clone()];
    let mut parent: Vec<Option<(usize, Action)>> = vec![None];
    let mut index = StateIndex::default();
    index.insert(&init, 0);
    let mut report =
        Report { states: 1, transitions: 0, terminal_states: 0, complete: true, violation: None };

    let trace = |states: &[AbstractState], parent: &[Option<(usize, Action)>], mut i: usize| {
        let mut out = vec![(None, states[i].clone())];
        while let Some((p, a)) = &parent[i] {
            out.last_mut().expect("nonempty").0 = Some(a.clone());
            out.push((None, states[*p].clone()));
            i = *p;
        }
        out.reverse();
        out
    };

    if let Some(inv) = check(&states[0]) {
        report.violation = Some(Counterexample { invariant: inv, trace: trace(&states, &parent, 0) });
        return Ok((report, states));
    }

    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let succ = successors_with(&states[i], cfg, &quorums);
        if succ.is_empty() {
            report.terminal_states += 1;
            let s = &states[i];
            if no_noop(s) && !everything_chosen(s) {
                let cx = Counterexample {
                    invariant: Invariant::NoNoopEverythingChosen,
                    trace: trace(&states, &parent, i),
                };
                report.violation = Some(cx);
                return Ok((report, states));
            }
        }
        for (action, t) in succ {
            report.transitions += 1;
            if !consensus_consistency(&states[i], &t) {
                let mut tr = trace(&states, &parent, i);
                tr.push((Some(action), t));
                report.violation = Some(Counterexample { invariant: Invariant::ConsensusConsistency, trace: tr });
                return Ok((report, states));
            }
            if index.contains(&t, &states) {
                continue;
            }
            if states.len() >= cfg.max_states {
                report.complete = false;
                continue;
            }
            let j = states.len();
            index.insert(&t, j);
            states.push(t);
            parent.push(Some((i, action)));
            report.states += 1;
            if let Some(inv) = check(&states[j]) {
                report.violation = Some(Counterexample { invariant: inv, trace: trace(&states, &parent, j) });
                return Ok((report, states));
            }
            queue.push_back(j);
        }
    }
    Ok((report, states))
}
