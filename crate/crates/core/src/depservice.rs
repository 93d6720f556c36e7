//! Dependency service node.
//!
//! Each node remembers every `(vertex, command)` it has been sent and answers
//! a new request with the vertices of all remembered commands that conflict
//! with it. Leaders union the replies of `f+1` nodes; because any two such
//! quorums intersect, of two conflicting commands at least one ends up in the
//! other's dependencies.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::actor::{Actor, Ctx, Timer};
use crate::config::ClusterConfig;
use crate::message::{Addr, Message};
use crate::types::{CmdOrNoop, Deps, VertexId};

#[derive(Default, Debug, Clone)]
struct KeyIndex {
    writes: Vec<VertexId>,
    reads: Vec<VertexId>,
    // per-leader maxima of the lists above, for compact replies
    write_max: Vec<Option<u32>>,
    read_max: Vec<Option<u32>>,
}

fn bump(marks: &mut Vec<Option<u32>>, v: VertexId) {
    let i = v.leader as usize;
    if marks.len() <= i {
        marks.resize(i + 1, None);
    }
    marks[i] = Some(marks[i].map_or(v.seq, |m| m.max(v.seq)));
}

fn merge_marks(into: &mut [Option<u32>], from: &[Option<u32>]) {
    for (slot, m) in into.iter_mut().zip(from) {
        if let Some(m) = m {
            *slot = Some(slot.map_or(*m, |s| s.max(*m)));
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepNode {
    pub index: u32,
    num_leaders: usize,
    compaction: bool,
    keys: HashMap<Vec<u8>, KeyIndex>,
    seen: HashSet<VertexId>,
    reply_cache: HashMap<VertexId, Deps>,
}

impl DepNode {
    pub fn new(index: u32, config: &ClusterConfig) -> Self {
        DepNode::with_mode(index, config.leaders, config.protocol.compaction)
    }

    pub fn with_mode(index: u32, num_leaders: usize, compaction: bool) -> Self {
        DepNode {
            index,
            num_leaders,
            compaction,
            keys: HashMap::new(),
            seen: HashSet::new(),
            reply_cache: HashMap::new(),
        }
    }

    pub fn seen_count(&self) -> usize {
        self.seen.len()
    }

    /// Computes (or replays) the dependencies of `v`.
    ///
    /// Re-delivered requests get the first reply back unchanged. Otherwise
    /// the reply lists every stored vertex whose command conflicts with
    /// `cmd`, and `(v, cmd)` is stored afterwards.
    pub fn handle_dep_request(&mut self, v: VertexId, cmd: &CmdOrNoop) -> Deps {
        if let Some(d) = self.reply_cache.get(&v) {
            return d.clone();
        }
        let deps = if self.compaction { self.compact_deps(cmd) } else { self.exact_deps(cmd) };
        self.store(v, cmd);
        self.reply_cache.insert(v, deps.clone());
        deps
    }

    fn exact_deps(&self, cmd: &CmdOrNoop) -> Deps {
        let mut out = BTreeSet::new();
        for (key, write) in cmd.footprint() {
            if let Some(k) = self.keys.get(key) {
                out.extend(k.writes.iter().copied());
                if write {
                    out.extend(k.reads.iter().copied());
                }
            }
        }
        Deps::Exact(out)
    }

    fn compact_deps(&self, cmd: &CmdOrNoop) -> Deps {
        let mut marks = vec![None; self.num_leaders];
        for (key, write) in cmd.footprint() {
            if let Some(k) = self.keys.get(key) {
                merge_marks(&mut marks, &k.write_max);
                if write {
                    merge_marks(&mut marks, &k.read_max);
                }
            }
        }
        Deps::Compact(marks)
    }

    fn store(&mut self, v: VertexId, cmd: &CmdOrNoop) {
        self.seen.insert(v);
        for (key, write) in cmd.footprint() {
            let k = self.keys.entry(key.to_vec()).or_default();
            let (list, marks) =
                if write { (&mut k.writes, &mut k.write_max) } else { (&mut k.reads, &mut k.read_max) };
            if list.last() != Some(&v) {
                list.push(v);
            }
            bump(marks, v);
        }
    }
}

impl Actor for DepNode {
    fn on_message(&mut self, from: Addr, msg: Message, ctx: &mut Ctx<'_>) {
        if let Message::DepRequest { v, cmd } = msg {
            let deps = self.handle_dep_request(v, &cmd);
            ctx.send(from, Message::DepReply { v, cmd, deps });
        }
    }

    fn on_timer(&mut self, _timer: Timer, _ctx: &mut Ctx<'_>) {}
}
