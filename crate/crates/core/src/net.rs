//! Runs a cluster over TCP on the loopback interface.
//!
//! Every node gets its own listener and a thread that processes its inbox
//! serially, driving the same role state machines the simulator uses. Each
//! accepted connection has a reader thread that decodes frames into the
//! inbox; outgoing connections are opened on first use. Nothing here is
//! deterministic.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::actor::{Actor, Ctx, Node, Note, Timer};
use crate::client::{Client, OpStream};
use crate::config::{ClusterConfig, Time};
use crate::error::{ConfigError, WireError};
use crate::harness::History;
use crate::message::{Addr, Message};
use crate::wire;

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("could not start {node}: {source}")]
    Spawn { node: Addr, source: io::Error },
}

#[derive(Clone, Debug)]
pub struct NetConfig {
    pub cluster: ClusterConfig,
    pub seed: u64,
    /// Wall-clock bound on the whole run.
    pub time_limit: Duration,
}

pub struct NetResult {
    /// Notes from every node, stamped with microseconds since start.
    pub history: History,
    pub elapsed: Duration,
    /// Every client finished its stream before the time limit.
    pub completed: bool,
}

type Shared = (Arc<HashMap<Addr, SocketAddr>>, Arc<AtomicBool>, Instant);

/// Starts every node, runs until all clients finish or the time limit
/// passes, then shuts everything down.
pub fn run_cluster(cfg: NetConfig, workload: Vec<OpStream>) -> Result<NetResult, NetError> {
    cfg.cluster.validate()?;
    let cluster = cfg.cluster.clone();
    let mut addrs = cluster.all_addrs();
    addrs.extend((0..workload.len() as u32).map(Addr::client));

    let mut listeners = Vec::new();
    let mut directory = HashMap::new();
    for &addr in &addrs {
        let bind = || -> io::Result<TcpListener> {
            let l = TcpListener::bind("127.0.0.1:0")?;
            l.set_nonblocking(true)?;
            Ok(l)
        };
        let listener = bind().map_err(|source| NetError::Spawn { node: addr, source })?;
        let local = listener.local_addr().map_err(|source| NetError::Spawn { node: addr, source })?;
        directory.insert(addr, local);
        listeners.push((addr, listener));
    }

    let stop = Arc::new(AtomicBool::new(false));
    let start = Instant::now();
    let shared: Shared = (Arc::new(directory), stop.clone(), start);
    let (note_tx, note_rx) = mpsc::channel();
    let (done_tx, done_rx) = mpsc::channel();

    let mut nodes: Vec<(Addr, Node)> = addrs
        .iter()
        .filter_map(|&a| Node::for_addr(a, &cluster).map(|n| (a, n)))
        .collect();
    let retry = cluster.protocol.client_retry;
    let clients = workload.len();
    for (i, ops) in workload.into_iter().enumerate() {
        nodes.push((Addr::client(i as u32), Node::Client(Client::new(i as u32, cluster.leaders, retry, ops))));
    }

    let mut handles = Vec::new();
    let mut by_addr: HashMap<Addr, Node> = nodes.into_iter().collect();
    for (addr, listener) in listeners {
        let node = by_addr.remove(&addr).expect("node for every listener");
        let shared = shared.clone();
        let notes = note_tx.clone();
        let done = done_tx.clone();
        let seed = cfg.seed ^ ((addr.role as u64) << 40) ^ u64::from(addr.index);
        let spawned = thread::Builder::new()
            .name(addr.to_string())
            .spawn(move || run_node(addr, node, listener, shared, notes, done, seed));
        match spawned {
            Ok(h) => handles.push(h),
            Err(source) => {
                stop.store(true, Ordering::SeqCst);
                for h in handles {
                    let _ = h.join();
                }
                return Err(NetError::Spawn { node: addr, source });
            }
        }
    }
    drop(note_tx);
    drop(done_tx);

    let deadline = start + cfg.time_limit;
    let mut finished = 0;
    while finished < clients {
        let left = deadline.saturating_duration_since(Instant::now());
        match done_rx.recv_timeout(left) {
            Ok(()) => finished += 1,
            Err(_) => break,
        }
    }
    let elapsed = start.elapsed();
    stop.store(true, Ordering::SeqCst);
    for h in handles {
        let _ = h.join();
    }

    let mut events: Vec<(Time, Addr, Note)> = note_rx.try_iter().collect();
    events.sort_by_key(|(t, _, _)| *t);
    let mut history = History::default();
    for (t, addr, note) in events {
        history.push(t, addr, note);
    }
    Ok(NetResult { history, elapsed, completed: finished == clients })
}

fn micros_since(start: Instant) -> Time {
    start.elapsed().as_micros() as Time
}

fn run_node(
    me: Addr,
    mut node: Node,
    listener: TcpListener,
    (directory, stop, start): Shared,
    notes: Sender<(Time, Addr, Note)>,
    done: Sender<()>,
    seed: u64,
) {
    let (inbox_tx, inbox) = mpsc::channel();
    let accept_stop = stop.clone();
    let acceptor = thread::spawn(move || accept_loop(listener, inbox_tx, accept_stop));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Outbox { me, directory, conns: HashMap::new() };
    let mut timers: BinaryHeap<Reverse<(Time, u64)>> = BinaryHeap::new();
    let mut pending: HashMap<u64, Timer> = HashMap::new();
    let mut timer_seq = 0;
    let mut reported_done = false;

    if matches!(node, Node::Client(_)) {
        timers.push(Reverse((0, 0)));
        pending.insert(0, Timer::ClientStart);
        timer_seq = 1;
    }

    while !stop.load(Ordering::SeqCst) {
        let now = micros_since(start);
        let mut step: Option<Result<(Addr, Message), Timer>> = None;
        if let Some(&Reverse((at, id))) = timers.peek() {
            if at <= now {
                timers.pop();
                step = pending.remove(&id).map(Err);
            }
        }
        if step.is_none() {
            let wait = timers
                .peek()
                .map(|Reverse((at, _))| Duration::from_micros(at.saturating_sub(now)))
                .unwrap_or(POLL)
                .min(POLL);
            match inbox.recv_timeout(wait) {
                Ok(m) => step = Some(Ok(m)),
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        let Some(step) = step else { continue };

        let now = micros_since(start);
        let mut ctx = Ctx::new(now, &mut rng);
        match step {
            Ok((from, msg)) => node.on_message(from, msg, &mut ctx),
            Err(timer) => node.on_timer(timer, &mut ctx),
        }
        let Ctx { sends, timers: new_timers, notes: new_notes, .. } = ctx;
        for note in new_notes {
            let _ = notes.send((now, me, note));
        }
        for (delay, timer) in new_timers {
            pending.insert(timer_seq, timer);
            timers.push(Reverse((now + delay, timer_seq)));
            timer_seq += 1;
        }
        for (to, msg) in sends {
            out.send(to, &msg);
        }
        if let Node::Client(c) = &node {
            if !reported_done && c.finished() {
                reported_done = true;
                let _ = done.send(());
            }
        }
    }
    // closing our outgoing connections lets peers' readers exit
    drop(out);
    let _ = acceptor.join();
}

struct Outbox {
    me: Addr,
    directory: Arc<HashMap<Addr, SocketAddr>>,
    conns: HashMap<Addr, TcpStream>,
}

impl Outbox {
    /// Best effort: a message that cannot be written is dropped, like a
    /// lossy link.
    fn send(&mut self, to: Addr, msg: &Message) {
        let frame = wire::encode_frame(self.me, msg);
        if !self.conns.contains_key(&to) {
            let Some(sock) = self.directory.get(&to) else { return };
            let Ok(stream) = TcpStream::connect(sock) else { return };
            let _ = stream.set_nodelay(true);
            self.conns.insert(to, stream);
        }
        let stream = self.conns.get_mut(&to).expect("connected");
        if stream.write_all(&frame).is_err() {
            self.conns.remove(&to);
        }
    }
}

fn accept_loop(listener: TcpListener, inbox: Sender<(Addr, Message)>, stop: Arc<AtomicBool>) {
    let mut readers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let inbox = inbox.clone();
                let stop = stop.clone();
                readers.push(thread::spawn(move || read_loop(stream, inbox, stop)));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => break,
        }
    }
    for r in readers {
        let _ = r.join();
    }
}

fn read_loop(mut stream: TcpStream, inbox: Sender<(Addr, Message)>, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(POLL * 4)).is_err() {
        return;
    }
    let mut buf = Vec::new();
    let mut chunk = vec![0u8; 64 * 1024];
    while !stop.load(Ordering::SeqCst) {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                continue
            }
            Err(_) => return,
        }
        let mut used = 0;
        loop {
            match wire::decode_frame(&buf[used..]) {
                Ok((from, msg, n)) => {
                    used += n;
                    if inbox.send((from, msg)).is_err() {
                        return;
                    }
                }
                Err(WireError::Truncated { .. }) => break,
                // a corrupt stream cannot be resynchronised
                Err(_) => return,
            }
        }
        buf.drain(..used);
    }
}
