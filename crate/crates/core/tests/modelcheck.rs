use std::collections::{BTreeMap, BTreeSet, HashSet};

use bpaxos::actor::Note;
use bpaxos::client::OpStream;
use bpaxos::harness::{check_history, run_simulation, SimConfig};
use bpaxos::modelcheck::{explore, explore_states, AbsProposal, Invariant, ModelConfig};
use bpaxos::{ClientId, ClusterConfig, KvOp, Proposal, VertexId, MILLIS};

#[test]
fn two_conflicting_commands_reach_fixpoint() {
    let report = explore(&ModelConfig::new(2, 3, 2, 2)).unwrap();
    assert!(report.complete);
    assert!(report.violation.is_none(), "{report}");
}

#[test]
fn matches_unbounded_vertex_range() {
    // one spare vertex beyond the commands, as in the abstract model's
    // natural id range
    let report = explore(&ModelConfig::new(2, 3, 2, 3)).unwrap();
    assert!(report.ok(), "{report}");
}

#[test]
fn single_node_quorums_give_shortest_counterexample() {
    let report = explore(&ModelConfig::new(2, 3, 1, 2)).unwrap();
    let cx = report.violation.unwrap();
    assert_eq!(cx.invariant, Invariant::DepServiceConflicts);
    let last = &cx.trace.last().unwrap().1;
    // both vertices processed, by different nodes, each seeing nothing
    let seen: Vec<(usize, usize)> = last
        .dependency_graphs
        .iter()
        .enumerate()
        .flat_map(|(d, g)| g.iter().enumerate().filter(|(_, p)| p.is_some()).map(move |(v, _)| (d, v)))
        .collect();
    assert_eq!(seen.len(), 2);
    assert_ne!(seen[0].0, seen[1].0);
}

fn abstract_value(p: &Proposal, cmd_index: &BTreeMap<ClientId, u8>, vertex_index: &BTreeMap<VertexId, u8>) -> AbsProposal {
    let cmd = p.cmd.commands().first().map(|c| cmd_index[&c.client]);
    let deps = p.deps.iter().map(|v| vertex_index[&v]).collect();
    AbsProposal { cmd, deps }
}

// Every chosen assignment the protocol produces for two racing conflicting
// writes is one the abstract model can reach.
#[test]
fn simulated_outcomes_are_reachable() {
    let cfg = ModelConfig::new(2, 3, 2, 2);
    let (report, states) = explore_states(&cfg).unwrap();
    assert!(report.ok());
    let reachable: HashSet<Vec<Option<AbsProposal>>> = states.into_iter().map(|s| s.chosen).collect();

    let mut outcomes = HashSet::new();
    for seed in 0..100 {
        let mut cluster = ClusterConfig::minimal(1);
        // recovery sometimes races the first proposal and fills a noop
        cluster.protocol.recovery_timeout = (1 + seed % 4) * MILLIS;
        cluster.protocol.client_retry = 100_000 * MILLIS;
        let mut sim = SimConfig::new(cluster, seed);
        sim.delay = (100, 3_000);
        sim.time_limit = 2_000 * MILLIS;
        let workload = (0..2u64)
            .map(|c| OpStream::fixed([KvOp::set("k", c.to_be_bytes().to_vec())]))
            .collect();
        let res = run_simulation(sim, workload, &[]).unwrap();
        check_history(&res.history).unwrap();

        let mut chosen: BTreeMap<VertexId, Proposal> = BTreeMap::new();
        for e in res.history.iter() {
            if let Note::Chosen { v, proposal } = &e.note {
                chosen.insert(*v, proposal.clone());
            }
        }
        assert!(chosen.len() <= 2, "seed {seed}: {chosen:?}");
        let cmd_index: BTreeMap<ClientId, u8> = [(ClientId(0), 0), (ClientId(1), 1)].into();
        let ids: Vec<VertexId> = chosen.keys().copied().collect();
        let orders: Vec<Vec<VertexId>> =
            if ids.len() == 2 { vec![ids.clone(), vec![ids[1], ids[0]]] } else { vec![ids.clone()] };
        let found = orders.iter().any(|order| {
            let vertex_index: BTreeMap<VertexId, u8> =
                order.iter().enumerate().map(|(i, v)| (*v, i as u8)).collect();
            let mut assignment = vec![None; 2];
            for (v, p) in &chosen {
                assignment[vertex_index[v] as usize] = Some(abstract_value(p, &cmd_index, &vertex_index));
            }
            let hit = reachable.contains(&assignment);
            if hit {
                outcomes.insert(assignment);
            }
            hit
        });
        assert!(found, "seed {seed}: chosen {chosen:?} is not reachable in the model");
    }
    let shapes: BTreeSet<usize> = outcomes
        .iter()
        .map(|a| a.iter().flatten().map(|p| p.deps.len()).sum::<usize>())
        .collect();
    assert!(shapes.len() >= 2, "only one outcome shape observed: {outcomes:?}");
}
