//! Shared last-level cache controller.

use std::collections::{BTreeMap, VecDeque};

use super::{llc_equivalent, word_addr, BlockAddr, Event, Grant, Msg, MsgKind, Node, Outbox, ProtocolEnv};
use crate::selector::RequestType;
use crate::{CoreId, Value, WordMask};

/// LLC view of one word: its last written-back value and, if a private
/// cache holds it Owned, which one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LlcWord {
    pub value: Value,
    pub owner: Option<CoreId>,
}

/// A request waiting for invalidation or revocation acknowledgements.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transient {
    pub req: Msg,
    pub pending_acks: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LlcLine {
    pub words: Vec<LlcWord>,
    /// Bitset of cores holding the line Shared.
    pub sharers: u64,
    pub transient: Option<Transient>,
    /// Requests that arrived while the line was transient.
    pub queue: VecDeque<Msg>,
}

impl LlcLine {
    fn new(wpb: u32) -> Self {
        LlcLine { words: vec![LlcWord::default(); wpb as usize], sharers: 0, transient: None, queue: VecDeque::new() }
    }

    fn owned_by_others(&self, mask: WordMask, me: CoreId) -> BTreeMap<CoreId, WordMask> {
        let mut by_owner: BTreeMap<CoreId, WordMask> = BTreeMap::new();
        for w in mask.iter() {
            if let Some(o) = self.words[w as usize].owner {
                if o != me {
                    by_owner.entry(o).or_default().insert(w);
                }
            }
        }
        by_owner
    }

    pub fn is_sharer(&self, c: CoreId) -> bool {
        self.sharers & (1u64 << c) != 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LlcState {
    pub words_per_block: u32,
    pub lines: BTreeMap<BlockAddr, LlcLine>,
}

impl LlcState {
    pub fn new(words_per_block: u32) -> Self {
        LlcState { words_per_block, lines: BTreeMap::new() }
    }

    pub fn line(&self, b: BlockAddr) -> Option<&LlcLine> {
        self.lines.get(&b)
    }

    fn line_mut(&mut self, b: BlockAddr) -> &mut LlcLine {
        let wpb = self.words_per_block;
        self.lines.entry(b).or_insert_with(|| LlcLine::new(wpb))
    }

    pub fn word(&self, b: BlockAddr, w: u32) -> LlcWord {
        self.lines.get(&b).map(|l| l.words[w as usize]).unwrap_or_default()
    }

    /// No line is waiting for acknowledgements or holding queued requests.
    pub fn is_idle(&self) -> bool {
        self.lines.values().all(|l| l.transient.is_none() && l.queue.is_empty())
    }

    pub fn handle(&mut self, msg: Msg, env: &ProtocolEnv, out: &mut Outbox) {
        match msg.kind {
            MsgKind::Req { .. } => {
                let line = self.line_mut(msg.block);
                if line.transient.is_some() {
                    line.queue.push_back(msg);
                } else {
                    self.process(msg, env, out);
                }
            }
            MsgKind::InvAck | MsgKind::RevokeAck => {
                let b = msg.block;
                let line = self.line_mut(b);
                if msg.kind == MsgKind::RevokeAck {
                    for (i, w) in msg.mask.iter().enumerate() {
                        let word = &mut line.words[w as usize];
                        if let Some(&v) = msg.data.get(i) {
                            word.value = v;
                        }
                        if word.owner == Some(core_of(msg.src)) {
                            word.owner = None;
                        }
                    }
                }
                let Some(t) = line.transient.as_mut() else {
                    out.event(Event::Violation(format!("unexpected {} at LLC for block {b:#x}", msg.kind.label())));
                    return;
                };
                t.pending_acks -= 1;
                if t.pending_acks == 0 {
                    let req = line.transient.take().expect("transient present").req;
                    self.process(req, env, out);
                    self.drain_queue(b, env, out);
                }
            }
            other => out.event(Event::Violation(format!("LLC cannot handle {}", other.label()))),
        }
    }

    fn drain_queue(&mut self, b: BlockAddr, env: &ProtocolEnv, out: &mut Outbox) {
        loop {
            let line = self.line_mut(b);
            if line.transient.is_some() {
                return;
            }
            let Some(next) = line.queue.pop_front() else { return };
            self.process(next, env, out);
        }
    }

    /// Serves a request, or starts invalidations/revocations and parks it.
    fn process(&mut self, msg: Msg, env: &ProtocolEnv, out: &mut Outbox) {
        use RequestType::*;
        let wpb = self.words_per_block;
        let full = WordMask::full(wpb);
        let r = msg.txn.core;
        let ty = llc_equivalent(msg.req);
        let recall = msg.kind == (MsgKind::Req { recall: true });
        let mu = env.mutations;
        let line = self.line_mut(msg.block);

        let invalidate = matches!(ty, ReqO | ReqOData | ReqWT | ReqWTData | ReqWTfwd | ReqWTfwdData) && !mu.skip_sharer_invalidate;
        let revoke_mask = match ty {
            ReqS if !mu.skip_revoke => full,
            ReqWT | ReqWTData if !mu.skip_revoke => msg.mask,
            ReqV if recall => msg.mask,
            _ => WordMask::EMPTY,
        };
        let revokes = line.owned_by_others(revoke_mask, r);
        let inv_targets: Vec<CoreId> = if invalidate {
            (0..64u16).filter(|&c| c != r && line.is_sharer(c)).collect()
        } else {
            Vec::new()
        };
        if !revokes.is_empty() || !inv_targets.is_empty() {
            let pending = (revokes.len() + inv_targets.len()) as u32;
            for &s in &inv_targets {
                line.sharers &= !(1u64 << s);
                out.send(ctl(&msg, Node::Core(s), super::MsgKind::Inv, full));
            }
            for (&o, &m) in &revokes {
                out.send(ctl(&msg, Node::Core(o), MsgKind::Revoke, m));
            }
            line.transient = Some(Transient { req: msg, pending_acks: pending });
            return;
        }

        let mut served = WordMask::EMPTY;
        let mut data = Vec::new();
        let mut fwd: BTreeMap<CoreId, (WordMask, Vec<Value>)> = BTreeMap::new();
        match ty {
            ReqV => {
                // Loads are answered with every word the LLC holds valid.
                for w in full.iter() {
                    let word = line.words[w as usize];
                    match word.owner {
                        Some(o) if o != r => {
                            if msg.mask.contains(w) {
                                fwd.entry(o).or_default().0.insert(w);
                            }
                        }
                        Some(_) => {}
                        None => {
                            served.insert(w);
                            data.push(word.value);
                        }
                    }
                }
                // Extra words ride along only on a response the requester
                // waits for anyway.
                if !served.intersect(msg.mask).is_empty() || fwd.is_empty() {
                    respond(&msg, served, data, Grant::Valid, out);
                }
            }
            ReqS => {
                line.sharers |= 1u64 << r;
                for w in full.iter() {
                    let word = line.words[w as usize];
                    if word.owner != Some(r) {
                        served.insert(w);
                        data.push(word.value);
                    }
                }
                respond(&msg, served, data, Grant::Shared, out);
            }
            ReqO | ReqOData => {
                for w in msg.mask.iter() {
                    let word = &mut line.words[w as usize];
                    match word.owner {
                        Some(o) if o != r && !mu.skip_revoke => fwd.entry(o).or_default().0.insert(w),
                        _ => {
                            served.insert(w);
                            if ty == ReqOData {
                                data.push(word.value);
                            }
                        }
                    }
                    word.owner = Some(r);
                }
                respond(&msg, served, data, Grant::Owned, out);
            }
            ReqWT | ReqWTData | ReqWTfwd | ReqWTfwdData => {
                let forwards = matches!(ty, ReqWTfwd | ReqWTfwdData);
                let rmw = matches!(ty, ReqWTData | ReqWTfwdData);
                for (i, w) in msg.mask.iter().enumerate() {
                    let v = msg.data.get(i).copied().unwrap_or(0);
                    let word = &mut line.words[w as usize];
                    match word.owner {
                        Some(o) if o != r && forwards => {
                            let e = fwd.entry(o).or_default();
                            e.0.insert(w);
                            e.1.push(v);
                        }
                        Some(o) if o == r => {
                            // The owner's copy already holds its own write.
                            served.insert(w);
                            if rmw {
                                data.push(word.value);
                            }
                        }
                        _ => {
                            served.insert(w);
                            if rmw {
                                data.push(word.value);
                                word.value = word.value.wrapping_add(v);
                            } else {
                                word.value = v;
                            }
                            out.event(Event::WriteApplied { word: word_addr(msg.block, w, wpb), value: word.value, by: r });
                        }
                    }
                }
                respond(&msg, served, data, Grant::Ack, out);
            }
            _ => unreachable!("llc_equivalent maps away predicted types"),
        }
        for (o, (m, d)) in fwd {
            let mut f = ctl(&msg, Node::Core(o), MsgKind::Fwd, m);
            f.data = d;
            out.send(f);
        }
    }
}

fn core_of(n: Node) -> CoreId {
    match n {
        Node::Core(c) => c,
        Node::Llc => CoreId::MAX,
    }
}

/// Control message from the LLC on behalf of `req`'s transaction.
fn ctl(req: &Msg, dst: Node, kind: MsgKind, mask: WordMask) -> Msg {
    Msg { src: Node::Llc, dst, kind, block: req.block, mask, data: Vec::new(), txn: req.txn, req: req.req }
}

fn respond(req: &Msg, mask: WordMask, data: Vec<Value>, grant: Grant, out: &mut Outbox) {
    if mask.is_empty() {
        return;
    }
    let mut m = ctl(req, Node::Core(req.txn.core), MsgKind::Resp { grant }, mask);
    m.data = data;
    out.send(m);
}
