use thiserror::Error;

use crate::types::VertexId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DepsError {
    #[error("cannot union exact and compact dependency sets")]
    MixedVariants,
    #[error("compact watermark arrays differ in width ({left} vs {right})")]
    WidthMismatch { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("dependency service needs 2f+1 = {expected} nodes, got {got}")]
    DepNodes { expected: usize, got: usize },
    #[error("consensus service needs 2f+1 = {expected} acceptors, got {got}")]
    Acceptors { expected: usize, got: usize },
    #[error("need at least f+1 = {min} {role}, got {got}")]
    TooFew { role: &'static str, min: usize, got: usize },
    #[error("coupled mode needs leaders = proposers = replicas = 2f+1 = {expected}")]
    Coupled { expected: usize },
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("invalid probability {0}")]
    Probability(f64),
    #[error("delay range min {min} exceeds max {max}")]
    Delay { min: u64, max: u64 },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("unknown {what} tag {tag}")]
    BadEnum { what: &'static str, tag: u8 },
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("frame length {0} exceeds limit")]
    TooLarge(usize),
}

/// Raised by a replica when a second Commit for a vertex carries a
/// different proposal than the first.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("vertex {vertex} committed twice with different proposals")]
pub struct SafetyViolation {
    pub vertex: VertexId,
}
