//! Closed-loop clients: one outstanding command at a time, retried against
//! the next leader when no response arrives in time.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actor::{Actor, Ctx, Note, Timer};
use crate::config::Time;
use crate::message::{Addr, Message};
use crate::types::{ClientId, Command, KvOp};

/// The single hot key every conflicting write targets.
pub const HOT_KEY: [u8; 8] = [0x80, 0, 0, 0, 0, 0, 0, 0];

/// Source of a client's operations.
#[derive(Clone, Debug)]
pub enum OpStream {
    Fixed(VecDeque<KvOp>),
    /// With probability `rate` a `Set` on [`HOT_KEY`], otherwise a `Get` on
    /// a key no other draw uses. `remaining = None` never runs out.
    Conflict { rate: f64, remaining: Option<u64>, client: u32, draws: u64, rng: ChaCha8Rng },
}

impl OpStream {
    pub fn fixed<I: IntoIterator<Item = KvOp>>(ops: I) -> Self {
        OpStream::Fixed(ops.into_iter().collect())
    }

    pub fn conflict(rate: f64, count: Option<u64>, client: u32, seed: u64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(client) << 32) ^ 0x5eed);
        OpStream::Conflict { rate, remaining: count, client, draws: 0, rng }
    }

    pub fn next_op(&mut self) -> Option<KvOp> {
        match self {
            OpStream::Fixed(ops) => ops.pop_front(),
            OpStream::Conflict { rate, remaining, client, draws, rng } => {
                if let Some(r) = remaining {
                    if *r == 0 {
                        return None;
                    }
                    *r -= 1;
                }
                *draws += 1;
                if rng.gen_bool(*rate) {
                    Some(KvOp::set(HOT_KEY.to_vec(), draws.to_be_bytes().to_vec()))
                } else {
                    Some(KvOp::get(unique_key(*client, *draws).to_vec()))
                }
            }
        }
    }
}

/// 8-byte key private to one draw of one client; the top bit is clear so it
/// never equals [`HOT_KEY`].
pub fn unique_key(client: u32, draw: u64) -> [u8; 8] {
    let k = (u64::from(client & 0x7f_ffff) << 40) | (draw & 0xff_ffff_ffff);
    k.to_be_bytes()
}

#[derive(Clone, Debug)]
struct Outstanding {
    cmd: Command,
    started: Time,
    attempt: u32,
}

#[derive(Clone, Debug)]
pub struct Client {
    pub index: u32,
    pub id: ClientId,
    leaders: u32,
    retry: Time,
    ops: OpStream,
    next_seq: u64,
    outstanding: Option<Outstanding>,
    completed: u64,
    // leader offset that last got an answer
    sticky: u32,
}

impl Client {
    pub fn new(index: u32, leaders: usize, retry: Time, ops: OpStream) -> Self {
        Client {
            index,
            id: ClientId(u64::from(index)),
            leaders: leaders as u32,
            retry,
            ops,
            next_seq: 1,
            outstanding: None,
            completed: 0,
            sticky: 0,
        }
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    /// True once the stream is exhausted and the last command answered.
    pub fn finished(&self) -> bool {
        let drained = match &self.ops {
            OpStream::Fixed(q) => q.is_empty(),
            OpStream::Conflict { remaining, .. } => *remaining == Some(0),
        };
        drained && self.outstanding.is_none()
    }

    fn leader_for(&self, attempt: u32) -> Addr {
        Addr::leader((self.index + self.sticky + attempt) % self.leaders)
    }

    fn issue_next(&mut self, ctx: &mut Ctx<'_>) {
        let Some(op) = self.ops.next_op() else { return };
        let seq = self.next_seq;
        self.next_seq += 1;
        let cmd = Command::new(self.id, seq, op);
        ctx.note(Note::Invoke { client: self.id, seq, cmd: cmd.clone() });
        ctx.send(self.leader_for(0), Message::ClientRequest { cmd: cmd.clone() });
        ctx.set_timer(self.retry, Timer::ClientRetry { seq, attempt: 0 });
        self.outstanding = Some(Outstanding { cmd, started: ctx.now, attempt: 0 });
    }
}

impl Actor for Client {
    fn on_message(&mut self, _from: Addr, msg: Message, ctx: &mut Ctx<'_>) {
        let Message::ClientResponse { client_seq, output, .. } = msg else { return };
        let Some(out) = &self.outstanding else { return };
        if out.cmd.client_seq != client_seq {
            return;
        }
        let latency = ctx.now - out.started;
        ctx.note(Note::Respond { client: self.id, seq: client_seq, output, latency });
        self.sticky = (self.sticky + out.attempt) % self.leaders;
        self.outstanding = None;
        self.completed += 1;
        self.issue_next(ctx);
    }

    fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx<'_>) {
        match timer {
            Timer::ClientStart => {
                if self.outstanding.is_none() {
                    self.issue_next(ctx);
                }
            }
            Timer::ClientRetry { seq, attempt } => {
                let Some(out) = &mut self.outstanding else { return };
                if out.cmd.client_seq != seq || out.attempt != attempt {
                    return;
                }
                out.attempt += 1;
                let next = out.attempt;
                let msg = Message::ClientRequest { cmd: out.cmd.clone() };
                ctx.send(self.leader_for(next), msg);
                ctx.set_timer(self.retry, Timer::ClientRetry { seq, attempt: next });
            }
            _ => {}
        }
    }
}
