use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use bpaxos::harness::{check_history, parse_schedule, run_simulation, SimConfig};
use bpaxos::modelcheck::{explore, ConflictRelation, ModelConfig};
use bpaxos::net::{run_cluster, NetConfig};
use bpaxos::MILLIS;
use bpaxos_cli::bench::{run_bench, write_csv, BenchConfig, BenchError, BenchReport, Transport};
use bpaxos_cli::workload::generate_workload;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Multileader generalized state machine replication: clusters,
/// benchmarks, simulations and model checks.
#[derive(Parser)]
#[command(name = "bpaxos", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a cluster over loopback sockets and report what it did.
    Run(BenchArgs),
    /// Closed-loop benchmark; prints one CSV row per configuration.
    Bench {
        #[command(flatten)]
        args: BenchArgs,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a workload under a fault schedule and check the history.
    Sim {
        #[command(flatten)]
        args: BenchArgs,
        /// Fault schedule, one fault per line.
        #[arg(long)]
        faults: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        drop_prob: f64,
        #[arg(long, default_value_t = 0.0)]
        dup_prob: f64,
        /// Export the history as JSON lines.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Exhaustively explore the abstract protocol model.
    Check(CheckArgs),
}

/// Benchmark flags. List-valued flags sweep every combination.
#[derive(Args, Clone)]
struct BenchArgs {
    /// `key = value` file supplying defaults; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    clients: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    conflict_rate: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    batch_size: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    leaders: Vec<usize>,
    #[arg(long)]
    duration_ms: Option<u64>,
    #[arg(long)]
    warmup_ms: Option<u64>,
    #[arg(long)]
    commands_per_client: Option<u64>,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    proposers: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    thrifty: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    transport: Option<Transport>,
    #[arg(long)]
    coupled: Option<bool>,
    #[arg(long)]
    service_cost_us: Option<u64>,
    #[arg(long)]
    delay_min_us: Option<u64>,
    #[arg(long)]
    delay_max_us: Option<u64>,
}

impl BenchArgs {
    fn base(&self) -> Result<BenchConfig> {
        let mut c = BenchConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            c.apply_settings(&text).with_context(|| format!("in {}", path.display()))?;
        }
        macro_rules! over {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        over!(duration_ms, warmup_ms, f, thrifty, seed, transport, coupled, service_cost_us, delay_min_us, delay_max_us);
        if self.commands_per_client.is_some() {
            c.commands_per_client = self.commands_per_client;
        }
        if self.proposers.is_some() {
            c.proposers = self.proposers;
        }
        if self.replicas.is_some() {
            c.replicas = self.replicas;
        }
        Ok(c)
    }

    /// Every combination of the list-valued flags over the base config.
    fn sweep(&self) -> Result<Vec<BenchConfig>> {
        let base = self.base()?;
        let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
        let rates = if self.conflict_rate.is_empty() { vec![base.conflict_rate] } else { self.conflict_rate.clone() };
        let mut out = Vec::new();
        for &clients in &or(&self.clients, base.clients) {
            for &leaders in &or(&self.leaders, base.leaders) {
                for &batch_size in &or(&self.batch_size, base.batch_size) {
                    for &conflict_rate in &rates {
                        out.push(BenchConfig { clients, leaders, batch_size, conflict_rate, ..base.clone() });
                    }
                }
            }
        }
        Ok(out)
    }

    fn single(&self) -> Result<BenchConfig> {
        let mut all = self.sweep()?;
        if all.len() != 1 {
            bail!("this subcommand takes a single value per flag");
        }
        Ok(all.remove(0))
    }
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 2)]
    commands: usize,
    /// `full`, `none`, or pairs such as `a-b,b-c`.
    #[arg(long, default_value = "full")]
    conflicts: String,
    #[arg(long, default_value_t = 3)]
    dep_nodes: usize,
    #[arg(long, default_value_t = 2)]
    quorum_size: usize,
    #[arg(long, default_value_t = 2)]
    vertex_bound: usize,
    #[arg(long, default_value_t = 2_000_000)]
    max_states: usize,
    /// Let a chosen value be overwritten (a deliberate bug).
    #[arg(long)]
    rechoose: bool,
}

fn parse_conflicts(s: &str) -> Result<ConflictRelation> {
    match s {
        "full" => return Ok(ConflictRelation::Full),
        "none" => return Ok(ConflictRelation::None),
        _ => {}
    }
    let cmd = |name: &str| -> Result<u8> {
        match name.as_bytes() {
            [c @ b'a'..=b'z'] => Ok(c - b'a'),
            _ => Err(anyhow!("bad command name `{name}` (use a, b, c, ...)")),
        }
    };
    let mut pairs = Vec::new();
    for pair in s.split(',') {
        let (a, b) = pair.split_once('-').ok_or_else(|| anyhow!("bad conflict pair `{pair}`"))?;
        pairs.push((cmd(a.trim())?, cmd(b.trim())?));
    }
    Ok(ConflictRelation::Pairs(pairs))
}

enum Outcome {
    Ok,
    Violation,
}

fn bench(args: &BenchArgs, out: Option<&PathBuf>) -> Result<Outcome> {
    let mut rows: Vec<(String, BenchReport)> = Vec::new();
    for (i, cfg) in args.sweep()?.into_iter().enumerate() {
        match run_bench(&cfg) {
            Ok(r) => rows.push((i.to_string(), r)),
            Err(BenchError::Violation(v)) => {
                eprintln!("config {i}: {v}");
                return Ok(Outcome::Violation);
            }
            Err(e) => return Err(e.into()),
        }
    }
    match out {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(f, &rows)?;
        }
        None => write_csv(io::stdout().lock(), &rows)?,
    }
    Ok(Outcome::Ok)
}

fn run(args: &BenchArgs) -> Result<Outcome> {
    let cfg = args.single()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let workload = generate_workload(&cfg, &mut rng);
    let net = NetConfig { cluster: cfg.cluster(), seed: cfg.seed, time_limit: Duration::from_millis(cfg.duration_ms) };
    let res = run_cluster(net, workload)?;
    let answered = res.history.responses();
    let secs = res.elapsed.as_secs_f64();
    println!("answered: {answered}");
    println!("elapsed_s: {secs:.3}");
    println!("throughput: {:.1}", answered as f64 / secs.max(1e-9));
    println!("all_clients_finished: {}", res.completed);
    match check_history(&res.history) {
        Ok(()) => {
            println!("history: ok");
            Ok(Outcome::Ok)
        }
        Err(v) => {
            println!("history: {v}");
            Ok(Outcome::Violation)
        }
    }
}

fn sim(args: &BenchArgs, faults: Option<&PathBuf>, drop_prob: f64, dup_prob: f64, history: Option<&PathBuf>) -> Result<Outcome> {
    let cfg = args.single()?;
    cfg.validate()?;
    let schedule = match faults {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_schedule(&text).map_err(|(line, e)| anyhow!("{}:{line}: {e}", path.display()))?
        }
        None => Vec::new(),
    };
    let mut cluster = cfg.cluster();
    // faults call for the usual failure-detection timeouts
    cluster.protocol = bpaxos::ProtocolConfig { thrifty: cfg.thrifty, batch_size: cfg.batch_size, ..Default::default() };
    let mut sc = SimConfig::new(cluster, cfg.seed);
    sc.coupled = cfg.coupled;
    sc.service_cost = cfg.service_cost_us;
    sc.delay = (cfg.delay_min_us, cfg.delay_max_us);
    sc.drop_prob = drop_prob;
    sc.dup_prob = dup_prob;
    sc.time_limit = cfg.duration_ms * MILLIS;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let workload = generate_workload(&cfg, &mut rng);
    let res = run_simulation(sc, workload, &schedule)?;
    if let Some(path) = history {
        fs::write(path, res.history.to_json_lines()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("events: {}", res.history.len());
    println!("answered: {}", res.history.responses());
    println!("end_time_ms: {:.3}", res.end_time as f64 / MILLIS as f64);
    println!("timed_out: {}", res.timed_out);
    match check_history(&res.history) {
        Ok(()) => {
            println!("verdict: ok");
            Ok(Outcome::Ok)
        }
        Err(v) => {
            println!("verdict: {v}");
            Ok(Outcome::Violation)
        }
    }
}

fn check(args: &CheckArgs) -> Result<Outcome> {
    let cfg = ModelConfig {
        commands: args.commands,
        conflicts: parse_conflicts(&args.conflicts)?,
        dep_nodes: args.dep_nodes,
        quorum_size: args.quorum_size,
        vertex_bound: args.vertex_bound,
        max_states: args.max_states,
        rechoose: args.rechoose,
    };
    let report = explore(&cfg)?;
    print!("{report}");
    Ok(if report.ok() { Outcome::Ok } else { Outcome::Violation })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(args) => run(args),
        Cmd::Bench { args, out } => bench(args, out.as_ref()),
        Cmd::Sim { args, faults, drop_prob, dup_prob, history } => {
            sim(args, faults.as_ref(), *drop_prob, *dup_prob, history.as_ref())
        }
        Cmd::Check(args) => check(args),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
