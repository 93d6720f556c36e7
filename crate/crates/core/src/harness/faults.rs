//! Fault schedules for the simulator.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ClusterConfig, Time, MILLIS};
use crate::message::{Addr, Role};

/// An undirected link between two nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link(Addr, Addr);

impl Link {
    pub fn new(a: Addr, b: Addr) -> Self {
        if a <= b {
            Link(a, b)
        } else {
            Link(b, a)
        }
    }

    pub fn ends(&self) -> (Addr, Addr) {
        (self.0, self.1)
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Fault {
    /// The node stops at `at` and never recovers.
    Crash { node: Addr, at: Time },
    /// Messages between `nodes` and everyone else are lost during
    /// `[start, end)`.
    Partition { nodes: Vec<Addr>, start: Time, end: Time },
    Drop { link: Link, prob: f64 },
    Duplicate { link: Link, prob: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultParseError {
    #[error("empty fault line")]
    Empty,
    #[error("unknown fault kind `{0}`")]
    Kind(String),
    #[error("`{kind}` expects {expected} arguments, got {got}")]
    Arity { kind: String, expected: usize, got: usize },
    #[error("bad node name `{0}`")]
    Node(String),
    #[error("bad number `{0}`")]
    Number(String),
    #[error("probability {0} outside [0, 1]")]
    Probability(String),
}

fn node(s: &str) -> Result<Addr, FaultParseError> {
    s.parse().map_err(|_| FaultParseError::Node(s.to_string()))
}

fn millis(s: &str) -> Result<Time, FaultParseError> {
    s.parse::<u64>().map(|ms| ms * MILLIS).map_err(|_| FaultParseError::Number(s.to_string()))
}

fn prob(s: &str) -> Result<f64, FaultParseError> {
    let p: f64 = s.parse().map_err(|_| FaultParseError::Number(s.to_string()))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(FaultParseError::Probability(s.to_string()));
    }
    Ok(p)
}

fn link(s: &str) -> Result<Link, FaultParseError> {
    let (a, b) = s.split_once('-').ok_or_else(|| FaultParseError::Node(s.to_string()))?;
    Ok(Link::new(node(a)?, node(b)?))
}

/// One line of a fault file:
///
/// ```text
/// crash <node> <time_ms>
/// partition <node,node,...> <start_ms> <end_ms>
/// drop <node>-<node> <prob>
/// duplicate <node>-<node> <prob>
/// ```
impl FromStr for Fault {
    type Err = FaultParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = line.split_whitespace().collect();
        let (&kind, args) = words.split_first().ok_or(FaultParseError::Empty)?;
        let arity = |expected: usize| {
            if args.len() == expected {
                Ok(())
            } else {
                Err(FaultParseError::Arity { kind: kind.to_string(), expected, got: args.len() })
            }
        };
        match kind {
            "crash" => {
                arity(2)?;
                Ok(Fault::Crash { node: node(args[0])?, at: millis(args[1])? })
            }
            "partition" => {
                arity(3)?;
                let nodes = args[0].split(',').map(node).collect::<Result<_, _>>()?;
                Ok(Fault::Partition { nodes, start: millis(args[1])?, end: millis(args[2])? })
            }
            "drop" => {
                arity(2)?;
                Ok(Fault::Drop { link: link(args[0])?, prob: prob(args[1])? })
            }
            "duplicate" => {
                arity(2)?;
                Ok(Fault::Duplicate { link: link(args[0])?, prob: prob(args[1])? })
            }
            other => Err(FaultParseError::Kind(other.to_string())),
        }
    }
}

/// Parses a fault file, skipping blank lines and `#` comments. Errors carry
/// the 1-based line number.
pub fn parse_schedule(text: &str) -> Result<Vec<Fault>, (usize, FaultParseError)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| l.parse().map_err(|e| (n, e)))
        .collect()
}

/// Random crashes of at most `f` nodes per role within `[0, horizon)`, and
/// possibly one short partition of a single node.
pub fn random_schedule<R: Rng>(cluster: &ClusterConfig, horizon: Time, rng: &mut R) -> Vec<Fault> {
    let mut out = Vec::new();
    let roles = [
        (Role::Leader, cluster.leaders),
        (Role::DepNode, cluster.dep_nodes),
        (Role::Proposer, cluster.proposers),
        (Role::Acceptor, cluster.acceptors),
        (Role::Replica, cluster.replicas),
    ];
    for (role, n) in roles {
        let crashes = rng.gen_range(0..=cluster.f.min(n - 1));
        let mut idx: Vec<u32> = (0..n as u32).collect();
        idx.shuffle(rng);
        for &i in idx.iter().take(crashes) {
            out.push(Fault::Crash { node: Addr::new(role, i), at: rng.gen_range(0..horizon.max(1)) });
        }
    }
    if rng.gen_bool(0.3) {
        let all = cluster.all_addrs();
        let victim = *all.choose(rng).expect("cluster is non-empty");
        let start = rng.gen_range(0..horizon.max(1));
        let end = start + rng.gen_range(1..=horizon.max(1) / 2 + 1);
        out.push(Fault::Partition { nodes: vec![victim], start, end });
    }
    out
}
