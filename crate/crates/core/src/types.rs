//! Shared domain types: vertex ids, commands, the conflict relation and
//! dependency sets.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::DepsError;

/// Globally unique identifier of a graph vertex: the issuing leader and that
/// leader's per-leader sequence number.
///
/// The derived `Ord` is *not* the execution order; use [`vertex_id_order`]
/// (or [`VertexId::exec_cmp`]) when ordering vertices inside a strongly
/// connected component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId {
    pub leader: u32,
    pub seq: u32,
}

impl VertexId {
    pub const fn new(leader: u32, seq: u32) -> Self {
        VertexId { leader, seq }
    }

    /// Canonical encoding: leader index then sequence, both big-endian u32.
    pub fn to_bytes(self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[..4].copy_from_slice(&self.leader.to_be_bytes());
        out[4..].copy_from_slice(&self.seq.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: [u8; 8]) -> Self {
        let leader = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let seq = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
        VertexId { leader, seq }
    }

    pub fn exec_cmp(&self, other: &VertexId) -> Ordering {
        vertex_id_order(*self, *other)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.leader, self.seq)
    }
}

/// Deterministic total order used to execute the members of a strongly
/// connected component: lexicographic on `(seq, leader)`.
pub fn vertex_id_order(a: VertexId, b: VertexId) -> Ordering {
    (a.seq, a.leader).cmp(&(b.seq, b.leader))
}

/// Opaque client identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClientId(pub u64);

impl From<Ipv4Addr> for ClientId {
    fn from(addr: Ipv4Addr) -> Self {
        ClientId(u32::from(addr) as u64)
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Single-key operation against the replicated key-value store.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KvOp {
    Get { key: Vec<u8> },
    Set { key: Vec<u8>, value: Vec<u8> },
}

impl KvOp {
    pub fn get(key: impl Into<Vec<u8>>) -> Self {
        KvOp::Get { key: key.into() }
    }

    pub fn set(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        KvOp::Set { key: key.into(), value: value.into() }
    }

    pub fn key(&self) -> &[u8] {
        match self {
            KvOp::Get { key } | KvOp::Set { key, .. } => key,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self, KvOp::Set { .. })
    }
}

/// A client-issued command. `client_seq` starts at 1 and increases with
/// every distinct command the client issues; retries reuse it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Command {
    pub client: ClientId,
    pub client_seq: u64,
    pub op: KvOp,
}

impl Command {
    pub fn new(client: ClientId, client_seq: u64, op: KvOp) -> Self {
        Command { client, client_seq, op }
    }
}

/// The value stored in a vertex: one command, a leader-formed batch of
/// commands, or the distinguished noop used by recovery.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmdOrNoop {
    Noop,
    Command(Command),
    Batch(Vec<Command>),
}

impl CmdOrNoop {
    pub fn is_noop(&self) -> bool {
        matches!(self, CmdOrNoop::Noop)
    }

    /// The commands carried by this value, in batch order.
    pub fn commands(&self) -> &[Command] {
        match self {
            CmdOrNoop::Noop => &[],
            CmdOrNoop::Command(c) => std::slice::from_ref(c),
            CmdOrNoop::Batch(cs) => cs,
        }
    }

    /// `(key, is_write)` pairs touched by this value.
    pub fn footprint(&self) -> impl Iterator<Item = (&[u8], bool)> + '_ {
        self.commands().iter().map(|c| (c.op.key(), c.op.is_write()))
    }
}

impl From<Command> for CmdOrNoop {
    fn from(c: Command) -> Self {
        CmdOrNoop::Command(c)
    }
}

/// Pluggable conflict relation between commands. Must be symmetric.
pub trait ConflictModel {
    fn conflicts(&self, a: &Command, b: &Command) -> bool;
}

/// Single-key KV conflicts: same key and at least one write.
#[derive(Clone, Copy, Debug, Default)]
pub struct KvConflicts;

impl ConflictModel for KvConflicts {
    fn conflicts(&self, a: &Command, b: &Command) -> bool {
        a.op.key() == b.op.key() && (a.op.is_write() || b.op.is_write())
    }
}

/// Conflict test between vertex values under the KV model. Batches conflict
/// when any pair of members conflicts; noop conflicts with nothing.
pub fn conflicts(x: &CmdOrNoop, y: &CmdOrNoop) -> bool {
    conflicts_with(&KvConflicts, x, y)
}

pub fn conflicts_with<M: ConflictModel + ?Sized>(model: &M, x: &CmdOrNoop, y: &CmdOrNoop) -> bool {
    x.commands()
        .iter()
        .any(|a| y.commands().iter().any(|b| model.conflicts(a, b)))
}

/// A dependency set, either as explicit ids or as one watermark per leader.
///
/// `Compact(w)` stands for `{ (i, k) : w[i] = Some(m), k <= m }`. The
/// watermark vector is sized to the number of leaders.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Deps {
    Exact(BTreeSet<VertexId>),
    Compact(Vec<Option<u32>>),
}

impl Default for Deps {
    fn default() -> Self {
        Deps::Exact(BTreeSet::new())
    }
}

impl Deps {
    pub fn empty_exact() -> Self {
        Deps::Exact(BTreeSet::new())
    }

    pub fn empty_compact(num_leaders: usize) -> Self {
        Deps::Compact(vec![None; num_leaders])
    }

    pub fn exact<I: IntoIterator<Item = VertexId>>(ids: I) -> Self {
        Deps::Exact(ids.into_iter().collect())
    }

    /// Builds a compact watermark array of `num_leaders` entries from
    /// `(leader, watermark)` pairs.
    pub fn compact<I: IntoIterator<Item = (u32, u32)>>(num_leaders: usize, marks: I) -> Self {
        let mut w = vec![None; num_leaders];
        for (leader, mark) in marks {
            let slot: &mut Option<u32> = &mut w[leader as usize];
            *slot = Some(slot.map_or(mark, |m| m.max(mark)));
        }
        Deps::Compact(w)
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Deps::Exact(s) => s.is_empty(),
            Deps::Compact(w) => w.iter().all(Option::is_none),
        }
    }

    pub fn contains(&self, v: VertexId) -> bool {
        match self {
            Deps::Exact(s) => s.contains(&v),
            Deps::Compact(w) => w
                .get(v.leader as usize)
                .copied()
                .flatten()
                .is_some_and(|m| v.seq <= m),
        }
    }

    /// Number of ids in the expansion.
    pub fn len(&self) -> usize {
        match self {
            Deps::Exact(s) => s.len(),
            Deps::Compact(w) => w.iter().flatten().map(|m| *m as usize + 1).sum(),
        }
    }

    /// Iterates the expansion without materialising it.
    pub fn iter(&self) -> Box<dyn Iterator<Item = VertexId> + '_> {
        match self {
            Deps::Exact(s) => Box::new(s.iter().copied()),
            Deps::Compact(w) => Box::new(w.iter().enumerate().flat_map(|(i, m)| {
                m.iter().flat_map(move |m| (0..=*m).map(move |k| VertexId::new(i as u32, k)))
            })),
        }
    }

    /// The dependencies of vertex `owner`: the expansion with `owner`
    /// removed. A compact watermark can cover the owner's own id when a
    /// node saw a later id of the same leader first.
    pub fn effective_for(&self, owner: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        self.iter().filter(move |d| *d != owner)
    }
}

pub fn expand_deps(d: &Deps) -> BTreeSet<VertexId> {
    d.iter().collect()
}

/// Union of two same-variant dependency sets. Compact sets take the
/// pointwise maximum of their watermarks.
pub fn union_deps(a: &Deps, b: &Deps) -> Result<Deps, DepsError> {
    match (a, b) {
        (Deps::Exact(x), Deps::Exact(y)) => Ok(Deps::Exact(x.union(y).copied().collect())),
        (Deps::Compact(x), Deps::Compact(y)) => {
            if x.len() != y.len() {
                return Err(DepsError::WidthMismatch { left: x.len(), right: y.len() });
            }
            Ok(Deps::Compact(
                x.iter()
                    .zip(y)
                    .map(|(l, r)| match (l, r) {
                        (Some(l), Some(r)) => Some((*l).max(*r)),
                        (l, r) => l.or(*r),
                    })
                    .collect(),
            ))
        }
        _ => Err(DepsError::MixedVariants),
    }
}

/// The unit of consensus for one vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Proposal {
    pub cmd: CmdOrNoop,
    pub deps: Deps,
}

impl Proposal {
    pub fn new(cmd: CmdOrNoop, deps: Deps) -> Self {
        Proposal { cmd, deps }
    }

    /// Recovery value: noop with no dependencies.
    pub fn noop() -> Self {
        Proposal { cmd: CmdOrNoop::Noop, deps: Deps::empty_exact() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cmd(op: KvOp) -> CmdOrNoop {
        CmdOrNoop::Command(Command::new(ClientId(1), 1, op))
    }

    fn v(l: u32, s: u32) -> VertexId {
        VertexId::new(l, s)
    }

    #[test]
    fn conflict_examples() {
        assert!(conflicts(&cmd(KvOp::set("a", "0")), &cmd(KvOp::get("a"))));
        assert!(!conflicts(&cmd(KvOp::get("a")), &cmd(KvOp::get("a"))));
        assert!(!conflicts(&CmdOrNoop::Noop, &cmd(KvOp::set("a", "0"))));
        assert!(!conflicts(&CmdOrNoop::Noop, &CmdOrNoop::Noop));
        assert!(!conflicts(&cmd(KvOp::set("a", "0")), &cmd(KvOp::set("b", "0"))));
    }

    #[test]
    fn batch_conflicts_through_any_member() {
        let batch = CmdOrNoop::Batch(vec![
            Command::new(ClientId(1), 1, KvOp::get("x")),
            Command::new(ClientId(2), 1, KvOp::set("a", "1")),
        ]);
        assert!(conflicts(&batch, &cmd(KvOp::get("a"))));
        assert!(!conflicts(&batch, &cmd(KvOp::get("x"))));
    }

    #[test]
    fn vertex_order_examples() {
        assert_eq!(vertex_id_order(v(0, 1), v(1, 0)), Ordering::Greater);
        assert_eq!(vertex_id_order(v(0, 1), v(0, 1)), Ordering::Equal);
        let mut ids = vec![v(1, 2), v(0, 0), v(2, 1)];
        ids.sort_by(|a, b| vertex_id_order(*a, *b));
        assert_eq!(ids, vec![v(0, 0), v(2, 1), v(1, 2)]);
    }

    #[test]
    fn canonical_bytes_are_big_endian() {
        assert_eq!(v(1, 2).to_bytes(), [0, 0, 0, 1, 0, 0, 0, 2]);
        assert_eq!(VertexId::from_bytes(v(7, 300).to_bytes()), v(7, 300));
    }

    #[test]
    fn client_id_from_ipv4() {
        let id = ClientId::from(Ipv4Addr::new(10, 31, 14, 41));
        assert_eq!(id.0, 0x0a1f_0e29);
    }

    #[test]
    fn expand_examples() {
        assert_eq!(expand_deps(&Deps::exact([v(0, 0)])), BTreeSet::from([v(0, 0)]));
        let c = Deps::compact(3, [(0, 1), (1, 2), (2, 1)]);
        let expected: BTreeSet<_> =
            [v(0, 0), v(0, 1), v(1, 0), v(1, 1), v(1, 2), v(2, 0), v(2, 1)].into();
        assert_eq!(expand_deps(&c), expected);
        assert_eq!(c.len(), 7);
        assert!(expand_deps(&Deps::empty_compact(3)).is_empty());
    }

    #[test]
    fn union_examples() {
        let u = union_deps(&Deps::exact([v(0, 0)]), &Deps::exact([v(1, 0)])).unwrap();
        assert_eq!(u, Deps::exact([v(0, 0), v(1, 0)]));

        let a = Deps::compact(2, [(0, 1)]);
        let b = Deps::compact(2, [(0, 0), (1, 2)]);
        assert_eq!(union_deps(&a, &b).unwrap(), Deps::compact(2, [(0, 1), (1, 2)]));

        let d = Deps::compact(2, [(1, 4)]);
        assert_eq!(union_deps(&d, &d).unwrap(), d);
    }

    #[test]
    fn union_rejects_mixed_variants() {
        let err = union_deps(&Deps::empty_exact(), &Deps::empty_compact(2)).unwrap_err();
        assert_eq!(err, DepsError::MixedVariants);
        assert!(union_deps(&Deps::empty_compact(2), &Deps::empty_compact(3)).is_err());
    }

    #[test]
    fn effective_deps_drop_the_owner() {
        let d = Deps::compact(2, [(0, 6)]);
        assert!(d.contains(v(0, 5)));
        assert!(!d.effective_for(v(0, 5)).any(|x| x == v(0, 5)));
        assert_eq!(d.effective_for(v(0, 5)).count(), 6);
    }

    fn arb_op() -> impl Strategy<Value = CmdOrNoop> {
        prop_oneof![
            Just(CmdOrNoop::Noop),
            (0u8..3, any::<bool>()).prop_map(|(k, w)| {
                let op = if w { KvOp::set(vec![k], vec![0]) } else { KvOp::get(vec![k]) };
                CmdOrNoop::Command(Command::new(ClientId(0), 1, op))
            }),
        ]
    }

    fn arb_id() -> impl Strategy<Value = VertexId> {
        (0u32..4, 0u32..6).prop_map(|(l, s)| VertexId::new(l, s))
    }

    fn arb_same_variant_pair() -> impl Strategy<Value = (Deps, Deps)> {
        let exact = || prop::collection::btree_set(arb_id(), 0..8);
        let marks = || prop::collection::vec(prop::option::of(0u32..6), 4);
        prop_oneof![
            (exact(), exact()).prop_map(|(a, b)| (Deps::Exact(a), Deps::Exact(b))),
            (marks(), marks()).prop_map(|(a, b)| (Deps::Compact(a), Deps::Compact(b))),
        ]
    }

    proptest! {
        #[test]
        fn conflicts_is_symmetric(x in arb_op(), y in arb_op()) {
            prop_assert_eq!(conflicts(&x, &y), conflicts(&y, &x));
        }

        #[test]
        fn union_expands_to_union_of_expansions((a, b) in arb_same_variant_pair()) {
            let u = union_deps(&a, &b).unwrap();
            let mut expected = expand_deps(&a);
            expected.extend(expand_deps(&b));
            prop_assert_eq!(expand_deps(&u), expected);
            prop_assert_eq!(u.len(), expand_deps(&u).len());
        }

        #[test]
        fn vertex_order_is_a_strict_total_order(ids in prop::collection::vec(arb_id(), 1..12)) {
            for a in &ids {
                prop_assert_eq!(vertex_id_order(*a, *a), Ordering::Equal);
                for b in &ids {
                    let ab = vertex_id_order(*a, *b);
                    prop_assert_eq!(ab, vertex_id_order(*b, *a).reverse());
                    prop_assert_eq!(ab == Ordering::Equal, a == b);
                    for c in &ids {
                        if ab == Ordering::Less && vertex_id_order(*b, *c) == Ordering::Less {
                            prop_assert_eq!(vertex_id_order(*a, *c), Ordering::Less);
                        }
                    }
                }
            }
        }
    }
}
