//! Post-hoc safety checks over a recorded history.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::actor::{ExecOutcome, Note};
use crate::harness::history::{Event, History};
use crate::message::{Addr, Output};
use crate::types::{conflicts, ClientId, CmdOrNoop, Command, Proposal, VertexId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// Two different values for one vertex.
    VertexAgreement,
    /// Two replicas ordered conflicting vertices differently.
    ConflictOrder,
    /// Two conflicting chosen vertices with no edge between them.
    DependencyInvariant,
    /// A command applied twice, or skipped as a duplicate before it ran, at
    /// one replica.
    ExactlyOnce,
    /// A client saw an output no replica produced.
    ResponseMismatch,
}

#[derive(Clone, Debug)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
    /// The smallest set of events that shows the problem, in history order.
    pub events: Vec<Event>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:?}: {}", self.kind, self.detail)?;
        for e in &self.events {
            writeln!(f, "  #{} t={} {} {:?}", e.index, e.time, e.node, e.note)?;
        }
        Ok(())
    }
}

fn violation(kind: ViolationKind, detail: String, events: &[&Event]) -> Violation {
    let mut events: Vec<Event> = events.iter().map(|e| (*e).clone()).collect();
    events.sort_by_key(|e| e.index);
    events.dedup_by_key(|e| e.index);
    Violation { kind, detail, events }
}

/// Checks per-vertex agreement, conflicting-order agreement across
/// replicas, the dependency invariant, exactly-once execution and that
/// every response matches an execution.
pub fn check_history(h: &History) -> Result<(), Violation> {
    let chosen = check_agreement(h)?;
    check_dependencies(&chosen)?;
    check_order(h)?;
    check_exactly_once(h)?;
    check_responses(h)
}

/// Per-vertex agreement; returns the first chosen value of each vertex.
fn check_agreement(h: &History) -> Result<BTreeMap<VertexId, (&Proposal, &Event)>, Violation> {
    let mut chosen: BTreeMap<VertexId, (&Proposal, &Event)> = BTreeMap::new();
    for e in h.iter() {
        match &e.note {
            Note::Chosen { v, proposal } => match chosen.get(v) {
                Some((p, first)) if *p != proposal => {
                    return Err(violation(
                        ViolationKind::VertexAgreement,
                        format!("vertex {v} chosen with two different values"),
                        &[first, e],
                    ));
                }
                Some(_) => {}
                None => {
                    chosen.insert(*v, (proposal, e));
                }
            },
            Note::Alarm { v, detail } => {
                let mut evs = vec![e];
                if let Some((_, first)) = chosen.get(v) {
                    evs.push(first);
                }
                return Err(violation(ViolationKind::VertexAgreement, format!("{v}: {detail}"), &evs));
            }
            _ => {}
        }
    }

    // executions must replay the chosen value, identically at every replica
    let mut executed: BTreeMap<(VertexId, Addr), Vec<(Option<&Command>, &Event)>> = BTreeMap::new();
    for e in h.iter() {
        if let Note::Executed { v, cmd, .. } = &e.note {
            executed.entry((*v, e.node)).or_default().push((cmd.as_ref(), e));
        }
    }
    for ((v, replica), runs) in &executed {
        let Some((p, chosen_ev)) = chosen.get(v) else {
            return Err(violation(
                ViolationKind::VertexAgreement,
                format!("{replica} executed {v}, which was never chosen"),
                &[runs[0].1],
            ));
        };
        let want: Vec<Option<&Command>> = match &p.cmd {
            CmdOrNoop::Noop => vec![None],
            other => other.commands().iter().map(Some).collect(),
        };
        let got: Vec<Option<&Command>> = runs.iter().map(|(c, _)| *c).collect();
        if got != want {
            let mut evs: Vec<&Event> = runs.iter().map(|(_, e)| *e).collect();
            evs.push(chosen_ev);
            return Err(violation(
                ViolationKind::VertexAgreement,
                format!("{replica} executed {v} with a value other than the chosen one"),
                &evs,
            ));
        }
    }
    Ok(chosen)
}

fn footprint(cmd: &CmdOrNoop) -> BTreeMap<&[u8], bool> {
    let mut out: BTreeMap<&[u8], bool> = BTreeMap::new();
    for (key, write) in cmd.footprint() {
        *out.entry(key).or_default() |= write;
    }
    out
}

fn check_dependencies(chosen: &BTreeMap<VertexId, (&Proposal, &Event)>) -> Result<(), Violation> {
    let mut by_key: BTreeMap<&[u8], Vec<(VertexId, bool)>> = BTreeMap::new();
    for (v, (p, _)) in chosen {
        for (key, write) in footprint(&p.cmd) {
            by_key.entry(key).or_default().push((*v, write));
        }
    }
    let mut checked = BTreeSet::new();
    for touching in by_key.values() {
        for (i, (a, wa)) in touching.iter().enumerate() {
            for (b, wb) in &touching[i + 1..] {
                if !(wa | wb) || !checked.insert((*a, *b)) {
                    continue;
                }
                let (pa, ea) = chosen[a];
                let (pb, eb) = chosen[b];
                debug_assert!(conflicts(&pa.cmd, &pb.cmd));
                if !pa.deps.contains(*b) && !pb.deps.contains(*a) {
                    return Err(violation(
                        ViolationKind::DependencyInvariant,
                        format!("conflicting vertices {a} and {b} have no edge between them"),
                        &[ea, eb],
                    ));
                }
            }
        }
    }
    Ok(())
}

struct ReplicaRun<'a> {
    /// vertex -> (position, first execution event, footprint)
    vertices: HashMap<VertexId, (usize, &'a Event)>,
    /// key -> vertices touching it, in execution order, with write flag
    keys: BTreeMap<Vec<u8>, Vec<(VertexId, bool)>>,
}

fn replica_runs(h: &History) -> BTreeMap<Addr, ReplicaRun<'_>> {
    let mut cmds: BTreeMap<Addr, Vec<(VertexId, &Event, Vec<&Command>)>> = BTreeMap::new();
    for e in h.iter() {
        if let Note::Executed { v, cmd, .. } = &e.note {
            let list = cmds.entry(e.node).or_default();
            match list.last_mut() {
                Some((last, _, cs)) if last == v => cs.extend(cmd.as_ref()),
                _ => list.push((*v, e, cmd.iter().collect())),
            }
        }
    }
    cmds.into_iter()
        .map(|(addr, list)| {
            let mut run = ReplicaRun { vertices: HashMap::new(), keys: BTreeMap::new() };
            for (pos, (v, e, cs)) in list.into_iter().enumerate() {
                run.vertices.entry(v).or_insert((pos, e));
                let mut fp: BTreeMap<&[u8], bool> = BTreeMap::new();
                for c in cs {
                    *fp.entry(c.op.key()).or_default() |= c.op.is_write();
                }
                for (key, write) in fp {
                    run.keys.entry(key.to_vec()).or_default().push((v, write));
                }
            }
            (addr, run)
        })
        .collect()
}

/// Conflicting vertices executed by two replicas run in the same relative
/// order at both. Compared over the vertices both have executed.
fn check_order(h: &History) -> Result<(), Violation> {
    let runs = replica_runs(h);
    let addrs: Vec<&Addr> = runs.keys().collect();
    for (i, a) in addrs.iter().enumerate() {
        for b in &addrs[i + 1..] {
            let (ra, rb) = (&runs[*a], &runs[*b]);
            for (key, seq_a) in &ra.keys {
                let Some(seq_b) = rb.keys.get(key) else { continue };
                let common = |seq: &Vec<(VertexId, bool)>, other: &ReplicaRun| -> Vec<(VertexId, bool)> {
                    seq.iter().copied().filter(|(v, _)| other.vertices.contains_key(v)).collect()
                };
                let sa = common(seq_a, rb);
                let sb = common(seq_b, ra);
                if let Some((x, y)) = first_disagreement(&sa, &sb) {
                    let evs = [ra.vertices[&x].1, ra.vertices[&y].1, rb.vertices[&x].1, rb.vertices[&y].1];
                    return Err(violation(
                        ViolationKind::ConflictOrder,
                        format!("{a} and {b} order conflicting vertices {x} and {y} differently"),
                        &evs,
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Finds two conflicting vertices (at least one a write) whose relative
/// order differs between the two sequences. Both sequences hold the same
/// vertex set.
fn first_disagreement(a: &[(VertexId, bool)], b: &[(VertexId, bool)]) -> Option<(VertexId, VertexId)> {
    // writes must appear in the same order, and every read must sit between
    // the same two writes
    let epochs = |s: &[(VertexId, bool)]| -> (Vec<VertexId>, HashMap<VertexId, usize>) {
        let mut writes = Vec::new();
        let mut reads = HashMap::new();
        for (v, w) in s {
            if *w {
                writes.push(*v);
            } else {
                reads.insert(*v, writes.len());
            }
        }
        (writes, reads)
    };
    let (wa, ra) = epochs(a);
    let (wb, rb) = epochs(b);
    if let Some(i) = (0..wa.len().min(wb.len())).find(|i| wa[*i] != wb[*i]) {
        return Some((wa[i], wb[i]));
    }
    for (v, _) in a.iter().filter(|(_, w)| !w) {
        let (ea, eb) = (ra[v], rb[v]);
        if ea != eb {
            let w = wa[ea.min(eb)];
            return Some((*v, w));
        }
    }
    None
}

fn check_exactly_once(h: &History) -> Result<(), Violation> {
    let mut applied: HashMap<(Addr, ClientId, u64), &Event> = HashMap::new();
    for e in h.iter() {
        let Note::Executed { cmd: Some(cmd), outcome, .. } = &e.note else { continue };
        let key = (e.node, cmd.client, cmd.client_seq);
        match outcome {
            ExecOutcome::Applied(_) => {
                if let Some(first) = applied.insert(key, e) {
                    return Err(violation(
                        ViolationKind::ExactlyOnce,
                        format!("{} applied ({}, {}) twice", e.node, cmd.client, cmd.client_seq),
                        &[first, e],
                    ));
                }
            }
            ExecOutcome::Duplicate => {
                if !applied.contains_key(&key) {
                    return Err(violation(
                        ViolationKind::ExactlyOnce,
                        format!("{} skipped ({}, {}) as a duplicate before ever applying it", e.node, cmd.client, cmd.client_seq),
                        &[e],
                    ));
                }
            }
            ExecOutcome::Noop => {}
        }
    }
    Ok(())
}

fn check_responses(h: &History) -> Result<(), Violation> {
    let mut outputs: HashMap<(ClientId, u64), Vec<&Output>> = HashMap::new();
    let mut duplicates: HashMap<(ClientId, u64), &Event> = HashMap::new();
    for e in h.iter() {
        if let Note::Executed { cmd: Some(cmd), outcome, .. } = &e.note {
            let key = (cmd.client, cmd.client_seq);
            match outcome {
                ExecOutcome::Applied(o) => outputs.entry(key).or_default().push(o),
                ExecOutcome::Duplicate => {
                    duplicates.entry(key).or_insert(e);
                }
                ExecOutcome::Noop => {}
            }
        }
    }
    for e in h.iter() {
        let Note::Respond { client, seq, output, .. } = &e.note else { continue };
        let key = (*client, *seq);
        let ok = match output {
            Output::DuplicateUnavailable => duplicates.contains_key(&key),
            o => outputs.get(&key).is_some_and(|os| os.contains(&o)),
        };
        if !ok {
            return Err(violation(
                ViolationKind::ResponseMismatch,
                format!("client {client} got {output:?} for {seq}, which no replica produced"),
                &[e],
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Deps, KvOp};

    fn set(client: u64, seq: u64) -> Command {
        Command::new(ClientId(client), seq, KvOp::set("k", "v"))
    }

    fn chosen(h: &mut History, v: VertexId, cmd: Command, deps: &[VertexId]) {
        let proposal = Proposal::new(CmdOrNoop::Command(cmd), Deps::exact(deps.iter().copied()));
        h.push(0, Addr::proposer(0), Note::Chosen { v, proposal });
    }

    fn exec(h: &mut History, r: u32, v: VertexId, cmd: Command, outcome: ExecOutcome) {
        h.push(1, Addr::replica(r), Note::Executed { v, cmd: Some(cmd), outcome });
    }

    #[test]
    fn empty_history_is_fine() {
        assert!(check_history(&History::default()).is_ok());
    }

    #[test]
    fn missing_edge_is_reported_with_both_vertices() {
        let mut h = History::default();
        let (a, b) = (VertexId::new(0, 0), VertexId::new(1, 0));
        chosen(&mut h, a, set(1, 1), &[]);
        chosen(&mut h, b, set(2, 1), &[]);
        let err = check_history(&h).unwrap_err();
        assert_eq!(err.kind, ViolationKind::DependencyInvariant);
        assert_eq!(err.events.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn opposite_orders_are_reported() {
        let mut h = History::default();
        let (a, b) = (VertexId::new(0, 0), VertexId::new(1, 0));
        chosen(&mut h, a, set(1, 1), &[b]);
        chosen(&mut h, b, set(2, 1), &[a]);
        let ack = || ExecOutcome::Applied(Output::Ack);
        exec(&mut h, 0, a, set(1, 1), ack());
        exec(&mut h, 0, b, set(2, 1), ack());
        exec(&mut h, 1, b, set(2, 1), ack());
        exec(&mut h, 1, a, set(1, 1), ack());
        let err = check_history(&h).unwrap_err();
        assert_eq!(err.kind, ViolationKind::ConflictOrder);
        assert_eq!(err.events.len(), 4);
    }

    #[test]
    fn read_between_different_writes_is_reported() {
        let reads = [(VertexId::new(0, 0), true), (VertexId::new(0, 1), false), (VertexId::new(0, 2), true)];
        let moved = [reads[0], reads[2], reads[1]];
        assert_eq!(first_disagreement(&reads, &moved), Some((reads[1].0, reads[2].0)));
        assert_eq!(first_disagreement(&reads, &reads), None);
    }

    #[test]
    fn duplicate_before_apply_is_reported() {
        let mut h = History::default();
        let a = VertexId::new(0, 0);
        chosen(&mut h, a, set(1, 1), &[]);
        exec(&mut h, 0, a, set(1, 1), ExecOutcome::Duplicate);
        assert_eq!(check_history(&h).unwrap_err().kind, ViolationKind::ExactlyOnce);
    }

    #[test]
    fn unexplained_response_is_reported() {
        let mut h = History::default();
        h.push(5, Addr::client(1), Note::Respond { client: ClientId(1), seq: 1, output: Output::Ack, latency: 5 });
        assert_eq!(check_history(&h).unwrap_err().kind, ViolationKind::ResponseMismatch);
    }
}
