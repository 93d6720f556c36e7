use std::fs;
use std::process::{Command, Output};

fn bpaxos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpaxos")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bench_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = bpaxos(&[
        "bench",
        "--clients",
        "4,8",
        "--conflict-rate",
        "0,0.5",
        "--duration-ms",
        "50",
        "--warmup-ms",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "config_id,f,leaders,clients,conflict_rate,batch,throughput,p50_ms,p99_ms");
    assert_eq!(lines.len(), 5);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.conf");
    fs::write(&cfg, "# small run\nclients = 3\nduration_ms = 40\nwarmup_ms = 5\nleaders = 3\n").unwrap();
    let o = bpaxos(&["bench", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[1..4], ["1", "3", "3"]);

    fs::write(&cfg, "clients = many\n").unwrap();
    let o = bpaxos(&["bench", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn sim_with_fault_file_is_ok() {
    let dir = tempfile::tempdir().unwrap();
    let faults = dir.path().join("faults");
    let history = dir.path().join("history.jsonl");
    fs::write(&faults, "crash acceptor0 5\ndrop leader0-dep1 0.2  # lossy link\n").unwrap();
    let o = bpaxos(&[
        "sim",
        "--clients",
        "4",
        "--commands-per-client",
        "10",
        "--conflict-rate",
        "0.5",
        "--faults",
        faults.to_str().unwrap(),
        "--history",
        history.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("answered: 40"));
    assert!(stdout(&o).contains("verdict: ok"));
    assert!(fs::read_to_string(&history).unwrap().lines().count() > 80);
}

#[test]
fn bad_fault_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let faults = dir.path().join("faults");
    fs::write(&faults, "crash acceptor0 5\nexplode leader0 1\n").unwrap();
    let o = bpaxos(&["sim", "--faults", faults.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn check_exit_codes() {
    let ok = bpaxos(&["check"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("verdict: ok"));

    let bad = bpaxos(&["check", "--quorum-size", "1"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("DepServiceConflicts"));

    let cut = bpaxos(&["check", "--max-states", "100"]);
    assert_eq!(cut.status.code(), Some(1));

    let invalid = bpaxos(&["check", "--conflicts", "a+b"]);
    assert_eq!(invalid.status.code(), Some(2));
}

#[test]
fn run_over_loopback() {
    let o = bpaxos(&["run", "--clients", "3", "--commands-per-client", "5", "--duration-ms", "5000"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("answered: 15"));
    assert!(stdout(&o).contains("history: ok"));
}

#[test]
fn usage_errors() {
    assert_eq!(bpaxos(&["bench", "--clients", "0"]).status.code(), Some(2));
    assert_eq!(bpaxos(&["run", "--clients", "1,2"]).status.code(), Some(2));
    assert_eq!(bpaxos(&["frobnicate"]).status.code(), Some(2));
}
