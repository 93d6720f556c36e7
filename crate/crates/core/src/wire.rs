//! Binary wire format.
//!
//! A frame is a big-endian `u32` body length followed by the body: one tag
//! byte for the message type, the sender address (role byte, `u32` index)
//! and the message fields. Integers are big-endian, byte strings and lists
//! carry a `u32` length prefix, optional values a presence byte.

use crate::error::WireError;
use crate::message::{Addr, Message, Output, Role, Round};
use crate::types::{ClientId, CmdOrNoop, Command, Deps, KvOp, Proposal, VertexId};

/// Upper bound on a frame body.
pub const MAX_FRAME: usize = 64 << 20;

const CLIENT_REQUEST: u8 = 1;
const DEP_REQUEST: u8 = 2;
const DEP_REPLY: u8 = 3;
const PROPOSE_REQUEST: u8 = 4;
const PHASE1A: u8 = 5;
const PHASE1B: u8 = 6;
const PHASE2A: u8 = 7;
const PHASE2B: u8 = 8;
const NACK: u8 = 9;
const COMMIT: u8 = 10;
const CLIENT_RESPONSE: u8 = 11;

pub fn tag(msg: &Message) -> u8 {
    match msg {
        Message::ClientRequest { .. } => CLIENT_REQUEST,
        Message::DepRequest { .. } => DEP_REQUEST,
        Message::DepReply { .. } => DEP_REPLY,
        Message::ProposeRequest { .. } => PROPOSE_REQUEST,
        Message::Phase1a { .. } => PHASE1A,
        Message::Phase1b { .. } => PHASE1B,
        Message::Phase2a { .. } => PHASE2A,
        Message::Phase2b { .. } => PHASE2B,
        Message::Nack { .. } => NACK,
        Message::Commit { .. } => COMMIT,
        Message::ClientResponse { .. } => CLIENT_RESPONSE,
    }
}

/// Encodes a complete frame, length prefix included.
pub fn encode_frame(from: Addr, msg: &Message) -> Vec<u8> {
    let mut w = Writer(vec![0; 4]);
    w.u8(tag(msg));
    w.addr(from);
    match msg {
        Message::ClientRequest { cmd } => w.command(cmd),
        Message::DepRequest { v, cmd } => {
            w.vertex(*v);
            w.cmd_or_noop(cmd);
        }
        Message::DepReply { v, cmd, deps } => {
            w.vertex(*v);
            w.cmd_or_noop(cmd);
            w.deps(deps);
        }
        Message::ProposeRequest { v, proposal } | Message::Commit { v, proposal } => {
            w.vertex(*v);
            w.proposal(proposal);
        }
        Message::Phase1a { v, round } | Message::Phase2b { v, round } => {
            w.vertex(*v);
            w.u64(round.0);
        }
        Message::Phase1b { v, round, vote } => {
            w.vertex(*v);
            w.u64(round.0);
            match vote {
                None => w.u8(0),
                Some((r, p)) => {
                    w.u8(1);
                    w.u64(r.0);
                    w.proposal(p);
                }
            }
        }
        Message::Phase2a { v, round, proposal } => {
            w.vertex(*v);
            w.u64(round.0);
            w.proposal(proposal);
        }
        Message::Nack { v, round, promised } => {
            w.vertex(*v);
            w.u64(round.0);
            w.u64(promised.0);
        }
        Message::ClientResponse { client, client_seq, output } => {
            w.u64(client.0);
            w.u64(*client_seq);
            w.output(output);
        }
    }
    let body = (w.0.len() - 4) as u32;
    w.0[..4].copy_from_slice(&body.to_be_bytes());
    w.0
}

/// Decodes a frame body (without its length prefix).
pub fn decode_body(body: &[u8]) -> Result<(Addr, Message), WireError> {
    if body.len() > MAX_FRAME {
        return Err(WireError::TooLarge(body.len()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    let tag = r.u8()?;
    let from = r.addr()?;
    let msg = match tag {
        CLIENT_REQUEST => Message::ClientRequest { cmd: r.command()? },
        DEP_REQUEST => Message::DepRequest { v: r.vertex()?, cmd: r.cmd_or_noop()? },
        DEP_REPLY => Message::DepReply { v: r.vertex()?, cmd: r.cmd_or_noop()?, deps: r.deps()? },
        PROPOSE_REQUEST => Message::ProposeRequest { v: r.vertex()?, proposal: r.proposal()? },
        PHASE1A => Message::Phase1a { v: r.vertex()?, round: Round(r.u64()?) },
        PHASE1B => {
            let v = r.vertex()?;
            let round = Round(r.u64()?);
            let vote = match r.u8()? {
                0 => None,
                1 => Some((Round(r.u64()?), r.proposal()?)),
                t => return Err(WireError::BadEnum { what: "vote", tag: t }),
            };
            Message::Phase1b { v, round, vote }
        }
        PHASE2A => Message::Phase2a { v: r.vertex()?, round: Round(r.u64()?), proposal: r.proposal()? },
        PHASE2B => Message::Phase2b { v: r.vertex()?, round: Round(r.u64()?) },
        NACK => Message::Nack { v: r.vertex()?, round: Round(r.u64()?), promised: Round(r.u64()?) },
        COMMIT => Message::Commit { v: r.vertex()?, proposal: r.proposal()? },
        CLIENT_RESPONSE => Message::ClientResponse {
            client: ClientId(r.u64()?),
            client_seq: r.u64()?,
            output: r.output()?,
        },
        t => return Err(WireError::UnknownTag(t)),
    };
    if r.pos != body.len() {
        return Err(WireError::Trailing(body.len() - r.pos));
    }
    Ok((from, msg))
}

/// Decodes one frame from the front of `buf`, returning the bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(Addr, Message, usize), WireError> {
    if buf.len() < 4 {
        return Err(WireError::Truncated { needed: 4 - buf.len() });
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let end = 4 + len;
    if buf.len() < end {
        return Err(WireError::Truncated { needed: end - buf.len() });
    }
    let (from, msg) = decode_body(&buf[4..end])?;
    Ok((from, msg, end))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn addr(&mut self, a: Addr) {
        self.u8(a.role.tag());
        self.u32(a.index);
    }
    fn vertex(&mut self, v: VertexId) {
        self.0.extend_from_slice(&v.to_bytes());
    }
    fn command(&mut self, c: &Command) {
        self.u64(c.client.0);
        self.u64(c.client_seq);
        match &c.op {
            KvOp::Get { key } => {
                self.u8(0);
                self.bytes(key);
            }
            KvOp::Set { key, value } => {
                self.u8(1);
                self.bytes(key);
                self.bytes(value);
            }
        }
    }
    fn cmd_or_noop(&mut self, c: &CmdOrNoop) {
        match c {
            CmdOrNoop::Noop => self.u8(0),
            CmdOrNoop::Command(c) => {
                self.u8(1);
                self.command(c);
            }
            CmdOrNoop::Batch(cs) => {
                self.u8(2);
                self.u32(cs.len() as u32);
                for c in cs {
                    self.command(c);
                }
            }
        }
    }
    fn deps(&mut self, d: &Deps) {
        match d {
            Deps::Exact(s) => {
                self.u8(0);
                self.u32(s.len() as u32);
                for v in s {
                    self.vertex(*v);
                }
            }
            Deps::Compact(w) => {
                self.u8(1);
                self.u32(w.len() as u32);
                for m in w {
                    match m {
                        None => self.u8(0),
                        Some(m) => {
                            self.u8(1);
                            self.u32(*m);
                        }
                    }
                }
            }
        }
    }
    fn proposal(&mut self, p: &Proposal) {
        self.cmd_or_noop(&p.cmd);
        self.deps(&p.deps);
    }
    fn output(&mut self, o: &Output) {
        match o {
            Output::Value(None) => self.u8(0),
            Output::Value(Some(v)) => {
                self.u8(1);
                self.bytes(v);
            }
            Output::Ack => self.u8(2),
            Output::DuplicateUnavailable => self.u8(3),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::TooLarge(n))?;
        if end > self.buf.len() {
            return Err(WireError::Truncated { needed: end - self.buf.len() });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n > self.buf.len() - self.pos {
            return Err(WireError::Truncated { needed: n - (self.buf.len() - self.pos) });
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.len()?;
        Ok(self.take(n)?.to_vec())
    }
    fn addr(&mut self) -> Result<Addr, WireError> {
        let t = self.u8()?;
        let role = Role::from_tag(t).ok_or(WireError::BadEnum { what: "role", tag: t })?;
        Ok(Addr::new(role, self.u32()?))
    }
    fn vertex(&mut self) -> Result<VertexId, WireError> {
        Ok(VertexId::from_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn command(&mut self) -> Result<Command, WireError> {
        let client = ClientId(self.u64()?);
        let seq = self.u64()?;
        let op = match self.u8()? {
            0 => KvOp::Get { key: self.bytes()? },
            1 => KvOp::Set { key: self.bytes()?, value: self.bytes()? },
            t => return Err(WireError::BadEnum { what: "op", tag: t }),
        };
        Ok(Command::new(client, seq, op))
    }
    fn cmd_or_noop(&mut self) -> Result<CmdOrNoop, WireError> {
        Ok(match self.u8()? {
            0 => CmdOrNoop::Noop,
            1 => CmdOrNoop::Command(self.command()?),
            2 => {
                let n = self.u32()? as usize;
                let mut cs = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    cs.push(self.command()?);
                }
                CmdOrNoop::Batch(cs)
            }
            t => return Err(WireError::BadEnum { what: "command", tag: t }),
        })
    }
    fn deps(&mut self) -> Result<Deps, WireError> {
        Ok(match self.u8()? {
            0 => {
                let n = self.u32()? as usize;
                let mut ids = std::collections::BTreeSet::new();
                for _ in 0..n {
                    ids.insert(self.vertex()?);
                }
                Deps::Exact(ids)
            }
            1 => {
                let n = self.u32()? as usize;
                let mut w = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    w.push(match self.u8()? {
                        0 => None,
                        1 => Some(self.u32()?),
                        t => return Err(WireError::BadEnum { what: "watermark", tag: t }),
                    });
                }
                Deps::Compact(w)
            }
            t => return Err(WireError::BadEnum { what: "deps", tag: t }),
        })
    }
    fn proposal(&mut self) -> Result<Proposal, WireError> {
        Ok(Proposal::new(self.cmd_or_noop()?, self.deps()?))
    }
    fn output(&mut self) -> Result<Output, WireError> {
        Ok(match self.u8()? {
            0 => Output::Value(None),
            1 => Output::Value(Some(self.bytes()?)),
            2 => Output::Ack,
            3 => Output::DuplicateUnavailable,
            t => return Err(WireError::BadEnum { what: "output", tag: t }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_bytes() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(any::<u8>(), 0..12)
    }

    fn arb_command() -> impl Strategy<Value = Command> {
        let op = prop_oneof![
            arb_bytes().prop_map(|key| KvOp::Get { key }),
            (arb_bytes(), arb_bytes()).prop_map(|(key, value)| KvOp::Set { key, value }),
        ];
        (any::<u64>(), any::<u64>(), op).prop_map(|(c, s, op)| Command::new(ClientId(c), s, op))
    }

    fn arb_vertex() -> impl Strategy<Value = VertexId> {
        (any::<u32>(), any::<u32>()).prop_map(|(l, s)| VertexId::new(l, s))
    }

    fn arb_cmd() -> impl Strategy<Value = CmdOrNoop> {
        prop_oneof![
            Just(CmdOrNoop::Noop),
            arb_command().prop_map(CmdOrNoop::Command),
            prop::collection::vec(arb_command(), 0..4).prop_map(CmdOrNoop::Batch),
        ]
    }

    fn arb_deps() -> impl Strategy<Value = Deps> {
        prop_oneof![
            prop::collection::btree_set(arb_vertex(), 0..5).prop_map(Deps::Exact),
            prop::collection::vec(prop::option::of(any::<u32>()), 0..5).prop_map(Deps::Compact),
        ]
    }

    fn arb_proposal() -> impl Strategy<Value = Proposal> {
        (arb_cmd(), arb_deps()).prop_map(|(c, d)| Proposal::new(c, d))
    }

    fn arb_round() -> impl Strategy<Value = Round> {
        any::<u64>().prop_map(Round)
    }

    fn arb_output() -> impl Strategy<Value = Output> {
        prop_oneof![
            prop::option::of(arb_bytes()).prop_map(Output::Value),
            Just(Output::Ack),
            Just(Output::DuplicateUnavailable),
        ]
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        prop_oneof![
            arb_command().prop_map(|cmd| Message::ClientRequest { cmd }),
            (arb_vertex(), arb_cmd()).prop_map(|(v, cmd)| Message::DepRequest { v, cmd }),
            (arb_vertex(), arb_cmd(), arb_deps()).prop_map(|(v, cmd, deps)| Message::DepReply { v, cmd, deps }),
            (arb_vertex(), arb_proposal()).prop_map(|(v, proposal)| Message::ProposeRequest { v, proposal }),
            (arb_vertex(), arb_round()).prop_map(|(v, round)| Message::Phase1a { v, round }),
            (arb_vertex(), arb_round(), prop::option::of((arb_round(), arb_proposal())))
                .prop_map(|(v, round, vote)| Message::Phase1b { v, round, vote }),
            (arb_vertex(), arb_round(), arb_proposal())
                .prop_map(|(v, round, proposal)| Message::Phase2a { v, round, proposal }),
            (arb_vertex(), arb_round()).prop_map(|(v, round)| Message::Phase2b { v, round }),
            (arb_vertex(), arb_round(), arb_round())
                .prop_map(|(v, round, promised)| Message::Nack { v, round, promised }),
            (arb_vertex(), arb_proposal()).prop_map(|(v, proposal)| Message::Commit { v, proposal }),
            (any::<u64>(), any::<u64>(), arb_output()).prop_map(|(c, s, output)| Message::ClientResponse {
                client: ClientId(c),
                client_seq: s,
                output
            }),
        ]
    }

    fn arb_addr() -> impl Strategy<Value = Addr> {
        (0..6usize, any::<u32>()).prop_map(|(r, i)| Addr::new(Role::ALL[r], i))
    }

    proptest! {
        #[test]
        fn round_trip(from in arb_addr(), msg in arb_message()) {
            let frame = encode_frame(from, &msg);
            let (f, m, used) = decode_frame(&frame).unwrap();
            prop_assert_eq!(used, frame.len());
            prop_assert_eq!(f, from);
            prop_assert_eq!(m, msg);
        }

        #[test]
        fn truncation_is_an_error(from in arb_addr(), msg in arb_message(), cut in 0usize..1000) {
            let frame = encode_frame(from, &msg);
            let cut = cut % frame.len();
            prop_assert!(decode_frame(&frame[..cut]).is_err());
        }
    }

    #[test]
    fn phase2b_layout() {
        let frame = encode_frame(Addr::acceptor(2), &Message::Phase2b { v: VertexId::new(1, 7), round: Round(3) });
        let want: Vec<u8> = [
            &[0, 0, 0, 22][..],
            &[8],
            &[4, 0, 0, 0, 2],
            &[0, 0, 0, 1, 0, 0, 0, 7],
            &[0, 0, 0, 0, 0, 0, 0, 3],
        ]
        .concat();
        assert_eq!(frame, want);
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(decode_body(&[99, 0, 0, 0, 0, 0]), Err(WireError::UnknownTag(99)));
        assert!(matches!(decode_body(&[1, 9, 0, 0, 0, 0]), Err(WireError::BadEnum { what: "role", .. })));
        let mut frame = encode_frame(Addr::leader(0), &Message::Phase1a { v: VertexId::new(0, 0), round: Round(0) });
        frame.push(0);
        assert_eq!(decode_body(&frame[4..]), Err(WireError::Trailing(1)));
    }
}
