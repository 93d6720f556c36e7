use bpaxos::actor::Note;
use bpaxos::client::OpStream;
use bpaxos::harness::{check_history, run_simulation, Fault, SimConfig};
use bpaxos::{Addr, ClusterConfig, Role, MILLIS};

fn streams(clients: u32, each: u64, rate: f64, seed: u64) -> Vec<OpStream> {
    (0..clients).map(|c| OpStream::conflict(rate, Some(each), c, seed)).collect()
}

#[test]
fn failure_free_run_answers_everything() {
    for f in 1..=2 {
        for rate in [0.0, 0.02, 0.1, 1.0] {
            let cfg = SimConfig::new(ClusterConfig::minimal(f), 7);
            let res = run_simulation(cfg, streams(5, 20, rate, 7), &[]).unwrap();
            assert!(!res.timed_out);
            assert_eq!(res.history.responses(), 100, "f={f} r={rate}");
            check_history(&res.history).unwrap();
            let r0 = res.replica(0).unwrap();
            for i in 1..=f as u32 {
                assert_eq!(res.replica(i).unwrap().state_machine(), r0.state_machine());
            }
        }
    }
}

#[test]
fn same_seed_same_history() {
    let run = |seed| {
        let mut cfg = SimConfig::new(ClusterConfig::minimal(1), seed);
        cfg.drop_prob = 0.1;
        cfg.dup_prob = 0.05;
        cfg.trace = true;
        let res = run_simulation(cfg, streams(4, 10, 0.5, seed), &[]).unwrap();
        (res.history.to_json_lines(), res.trace)
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3).0, run(4).0);
}

#[test]
fn eight_message_delays() {
    let mut cfg = SimConfig::new(ClusterConfig::minimal(1), 1);
    cfg.delay = (250, 250);
    let res = run_simulation(cfg, streams(1, 5, 0.0, 1), &[]).unwrap();
    assert_eq!(res.history.latencies(), vec![2_000; 5]);
}

#[test]
fn message_counts_match_the_model() {
    for (f, replicas) in [(1, 2), (1, 3), (2, 3), (2, 5)] {
        let mut cluster = ClusterConfig::minimal(f);
        cluster.replicas = replicas;
        let cfg = SimConfig::new(cluster.clone(), 9);
        let res = run_simulation(cfg, streams(6, 10, 0.1, 9), &[]).unwrap();
        let n = (2 * f + 1) as f64;
        let r = replicas as f64;
        let c = &res.counts;
        assert_eq!(c.commands, 60);
        assert_eq!(c.per_command(Role::Leader, &cluster), 2.0 * n + 2.0);
        assert_eq!(c.per_command(Role::Proposer, &cluster), 2.0 * n + r + 1.0);
        assert_eq!(c.per_command(Role::DepNode, &cluster), 2.0);
        assert_eq!(c.per_command(Role::Acceptor, &cluster), 2.0);
        assert!((c.per_command(Role::Replica, &cluster) - (1.0 + 1.0 / r)).abs() < 1e-12);
    }
}

#[test]
fn leader_crash_is_survived_by_retries() {
    let mut cluster = ClusterConfig::minimal(1);
    cluster.protocol.client_retry = 50 * MILLIS;
    let cfg = SimConfig::new(cluster, 11);
    let faults = [Fault::Crash { node: Addr::leader(0), at: 3 * MILLIS }];
    let res = run_simulation(cfg, streams(4, 30, 0.3, 11), &faults).unwrap();
    assert!(!res.timed_out);
    assert_eq!(res.history.responses(), 120);
    check_history(&res.history).unwrap();
}

#[test]
fn stuck_vertex_is_filled_with_noop() {
    // proposer 1 dies at once, so leader 1's vertices are never proposed
    let cluster = ClusterConfig::minimal(1);
    let cfg = SimConfig::new(cluster, 5);
    let faults = [Fault::Crash { node: Addr::proposer(1), at: 0 }];
    let res = run_simulation(cfg, streams(4, 10, 1.0, 5), &faults).unwrap();
    assert_eq!(res.history.responses(), 40);
    let noops = res
        .history
        .iter()
        .filter(|e| matches!(&e.note, Note::Chosen { proposal, .. } if proposal.cmd.is_noop()))
        .count();
    assert!(noops > 0);
    check_history(&res.history).unwrap();
}
