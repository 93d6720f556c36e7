//! The replicas' graph of chosen vertices and strongly connected components.

use std::collections::{HashMap, HashSet};

use crate::error::SafetyViolation;
use crate::types::{Proposal, VertexId};

/// Chosen vertices and which of them have executed.
#[derive(Debug, Clone, Default)]
pub struct BPaxosGraph {
    committed: HashMap<VertexId, Proposal>,
    executed: HashSet<VertexId>,
}

/// Result of adding a chosen vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insert {
    New,
    Duplicate,
}

impl BPaxosGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `v -> p`. Re-adding the same proposal is a no-op; a different
    /// proposal for a chosen vertex is a consensus safety violation.
    pub fn insert(&mut self, v: VertexId, p: Proposal) -> Result<Insert, SafetyViolation> {
        match self.committed.get(&v) {
            Some(existing) if *existing == p => Ok(Insert::Duplicate),
            Some(_) => Err(SafetyViolation { vertex: v }),
            None => {
                self.committed.insert(v, p);
                Ok(Insert::New)
            }
        }
    }

    pub fn get(&self, v: VertexId) -> Option<&Proposal> {
        self.committed.get(&v)
    }

    pub fn is_committed(&self, v: VertexId) -> bool {
        self.committed.contains_key(&v)
    }

    pub fn is_executed(&self, v: VertexId) -> bool {
        self.executed.contains(&v)
    }

    pub(crate) fn mark_executed(&mut self, v: VertexId) {
        debug_assert!(self.committed.contains_key(&v));
        self.executed.insert(v);
    }

    pub fn committed_len(&self) -> usize {
        self.committed.len()
    }

    pub fn executed_len(&self) -> usize {
        self.executed.len()
    }

    pub fn committed(&self) -> impl Iterator<Item = (&VertexId, &Proposal)> {
        self.committed.iter()
    }
}

/// Tarjan's algorithm over nodes `0..adj.len()`, iterative so long
/// dependency chains cannot overflow the stack.
///
/// Components come out in reverse topological order: every component is
/// emitted after all components reachable from it.
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut next = 0;
    // (node, next edge position)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (node, ref mut edge)) = call.last_mut() {
            if let Some(&succ) = adj[node].get(*edge) {
                *edge += 1;
                if index[succ] == UNVISITED {
                    index[succ] = next;
                    low[succ] = next;
                    next += 1;
                    stack.push(succ);
                    on_stack[succ] = true;
                    call.push((succ, 0));
                } else if on_stack[succ] {
                    low[node] = low[node].min(index[succ]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[node]);
            }
            if low[node] == index[node] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == node {
                        break;
                    }
                }
                out.push(comp);
            }
        }
    }
    out
}
