//! Private cache controller with write buffer and owner predictor.

use std::collections::{BTreeMap, VecDeque};

use super::{
    llc_equivalent, word_addr, BlockAddr, CoherenceError, Event, Flavor, Grant, Msg, MsgKind, Node, Outbox,
    ProtocolEnv, TxnId, TxnTag, WordState,
};
use crate::selector::RequestType;
use crate::trace::AccessKind;
use crate::{CoreId, Pc, Value, WordMask};

/// One access as the cache sees it: a single block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreOp {
    pub kind: AccessKind,
    pub block: BlockAddr,
    /// Words the access reads or writes.
    pub mask: WordMask,
    /// Store data or RMW addends, one per word of `mask`.
    pub values: Vec<Value>,
    pub req: RequestType,
    /// Words to request on a miss; a superset of `mask`.
    pub req_mask: WordMask,
    pub pc: Pc,
    /// Opaque caller tag carried into the transaction (e.g. the trace seq id).
    pub tag: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Issue {
    /// Done without waiting: loaded values, RMW results, or nothing for stores.
    Hit(Vec<Value>),
    /// Waiting on a transaction; an [`Event::Completed`] follows.
    Pending(TxnId),
    /// Cannot issue now; retry after progress.
    Stall,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TxnKind {
    Load,
    Write,
    Rmw,
}

/// Coalesced stores to one block waiting to be written.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WbEntry {
    pub block: BlockAddr,
    pub written: WordMask,
    /// Indexed by word offset; meaningful where `written` is set.
    pub values: Vec<Value>,
    pub req: RequestType,
    pub req_mask: WordMask,
    pub pc: Pc,
    /// Tag of the first store merged into the entry.
    pub tag: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Txn {
    pub id: TxnId,
    pub kind: TxnKind,
    pub block: BlockAddr,
    /// Type chosen for the access.
    pub orig: RequestType,
    /// Type most recently sent.
    pub sent: RequestType,
    /// Words whose values the access returns.
    pub wanted: WordMask,
    /// Every word requested so far.
    pub mask: WordMask,
    pub waiting: WordMask,
    /// Received values by word offset.
    pub data: Vec<Option<Value>>,
    /// RMW addends by word offset.
    pub addends: Vec<Value>,
    pub owned_granted: WordMask,
    pub retries: u32,
    pub fill_invalid: bool,
    /// Words this core wrote while the load was in flight; the response
    /// carries older values for them.
    pub overtaken: WordMask,
    pub direct: Option<CoreId>,
    pub pc: Pc,
    pub tag: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct L1State {
    pub core: CoreId,
    pub flavor: Flavor,
    pub words_per_block: u32,
    pub lines: BTreeMap<BlockAddr, Vec<WordState>>,
    pub wb: VecDeque<WbEntry>,
    pub wb_capacity: usize,
    pub inflight_write: Option<(TxnId, WbEntry)>,
    pub txns: BTreeMap<TxnId, Txn>,
    /// Forwarded requests that must wait for an ownership grant.
    pub deferred: Vec<Msg>,
    /// Last core seen answering a predicted request, by (pc, root type).
    pub predictor: BTreeMap<(Pc, RequestType), CoreId>,
    pub max_outstanding_loads: usize,
}

/// Write-buffer merge priority: lower wins.
fn wb_rank(r: RequestType) -> u8 {
    use RequestType::*;
    match r {
        ReqWT => 0,
        ReqO | ReqOData => 1,
        ReqWTfwd => 2,
        _ => 3,
    }
}

fn merge_req(a: RequestType, b: RequestType) -> RequestType {
    use RequestType::*;
    if matches!((a, b), (ReqO, ReqOData) | (ReqOData, ReqO)) {
        return ReqOData;
    }
    if wb_rank(b) < wb_rank(a) {
        b
    } else {
        a
    }
}

impl L1State {
    pub fn new(core: CoreId, flavor: Flavor, words_per_block: u32, wb_capacity: usize, max_outstanding_loads: usize) -> Self {
        L1State {
            core,
            flavor,
            words_per_block,
            lines: BTreeMap::new(),
            wb: VecDeque::new(),
            wb_capacity,
            inflight_write: None,
            txns: BTreeMap::new(),
            deferred: Vec::new(),
            predictor: BTreeMap::new(),
            max_outstanding_loads,
        }
    }

    pub fn word(&self, b: BlockAddr, w: u32) -> WordState {
        self.lines.get(&b).map_or(WordState::Invalid, |l| l[w as usize])
    }

    fn set(&mut self, b: BlockAddr, w: u32, s: WordState) {
        let wpb = self.words_per_block as usize;
        self.lines.entry(b).or_insert_with(|| vec![WordState::Invalid; wpb])[w as usize] = s;
    }

    fn owned_mask(&self, b: BlockAddr) -> WordMask {
        self.lines.get(&b).map_or(WordMask::EMPTY, |l| {
            l.iter().enumerate().filter(|(_, s)| s.is_owned()).map(|(i, _)| i as u32).collect()
        })
    }

    fn present_mask(&self, b: BlockAddr) -> WordMask {
        self.lines.get(&b).map_or(WordMask::EMPTY, |l| {
            l.iter().enumerate().filter(|(_, s)| s.value().is_some()).map(|(i, _)| i as u32).collect()
        })
    }

    /// Pending value of a buffered or in-flight store, newest first.
    pub fn wb_value(&self, b: BlockAddr, w: u32) -> Option<Value> {
        let covers = |e: &WbEntry| e.block == b && e.written.contains(w);
        self.wb
            .iter()
            .rev()
            .find(|e| covers(e))
            .or(self.inflight_write.as_ref().map(|(_, e)| e).filter(|e| covers(e)))
            .map(|e| e.values[w as usize])
    }

    fn wb_covers(&self, b: BlockAddr, w: u32) -> bool {
        self.wb_value(b, w).is_some()
    }

    /// Words of a block with a load or RMW transaction in progress.
    fn busy_reads(&self, b: BlockAddr) -> WordMask {
        self.txns.values().filter(|t| t.block == b && t.kind != TxnKind::Write).fold(WordMask::EMPTY, |m, t| m.union(t.mask))
    }

    /// Words with any transaction in progress, writes included.
    fn busy(&self, b: BlockAddr) -> WordMask {
        self.txns.values().filter(|t| t.block == b).fold(WordMask::EMPTY, |m, t| m.union(t.mask))
    }

    fn pending_ownership(&self, b: BlockAddr) -> WordMask {
        self.txns.values().filter(|t| t.block == b && t.sent.is_ownership()).fold(WordMask::EMPTY, |m, t| m.union(t.mask))
    }

    pub fn outstanding_loads(&self) -> usize {
        self.txns.values().filter(|t| t.kind == TxnKind::Load).count()
    }

    /// Nothing buffered, in flight or deferred.
    pub fn is_idle(&self) -> bool {
        self.txns.is_empty() && self.wb.is_empty() && self.inflight_write.is_none() && self.deferred.is_empty()
    }

    pub fn write_buffer_empty(&self) -> bool {
        self.wb.is_empty() && self.inflight_write.is_none()
    }

    fn free_txn_id(&self) -> TxnId {
        (0..).find(|i| !self.txns.contains_key(i)).expect("txn id space")
    }

    /// Drops every Valid word; Shared and Owned words stay.
    pub fn acquire_invalidate(&mut self) {
        for line in self.lines.values_mut() {
            for s in line.iter_mut() {
                if matches!(s, WordState::Valid(_)) {
                    *s = WordState::Invalid;
                }
            }
        }
        self.lines.retain(|_, l| l.iter().any(|s| *s != WordState::Invalid));
    }

    pub fn issue(&mut self, op: &CoreOp, env: &ProtocolEnv, out: &mut Outbox) -> Result<Issue, CoherenceError> {
        if !op.req.fits(op.kind) {
            return Err(CoherenceError::KindMismatch { req: op.req, kind: op.kind });
        }
        if !self.flavor.permits(op.req, op.req_mask, self.words_per_block) {
            return Err(CoherenceError::IllegalType { core: self.core, flavor: self.flavor, req: op.req, mask: op.req_mask });
        }
        Ok(match op.kind {
            AccessKind::Load => self.issue_load(op, env, out),
            AccessKind::Store => self.issue_store(op, out),
            AccessKind::Rmw => self.issue_rmw(op, env, out),
        })
    }

    fn issue_load(&mut self, op: &CoreOp, env: &ProtocolEnv, out: &mut Outbox) -> Issue {
        let b = op.block;
        let mut data = vec![None; self.words_per_block as usize];
        let mut missing = WordMask::EMPTY;
        for w in op.mask.iter() {
            match self.wb_value(b, w).or(self.word(b, w).value()) {
                Some(v) => data[w as usize] = Some(v),
                None => missing.insert(w),
            }
        }
        if missing.is_empty() {
            return Issue::Hit(op.mask.iter().map(|w| data[w as usize].unwrap()).collect());
        }
        let busy = self.busy(b);
        // A secondary miss to a line being fetched waits for that fill.
        let fetching = self.txns.values().any(|t| t.block == b && t.kind == TxnKind::Load);
        if fetching || missing.overlaps(busy) || self.outstanding_loads() >= self.max_outstanding_loads {
            return Issue::Stall;
        }
        let full = WordMask::full(self.words_per_block);
        let (request, waiting) = match op.req {
            RequestType::ReqS => (full.minus(self.owned_mask(b)).minus(busy).union(missing), missing),
            RequestType::ReqOData => {
                let m = op.req_mask.union(missing).minus(self.owned_mask(b)).minus(busy).union(missing);
                (m, m)
            }
            _ => {
                let m = op.req_mask.union(missing).minus(self.present_mask(b)).minus(busy).union(missing);
                (m, m)
            }
        };
        let id = self.free_txn_id();
        let txn = Txn {
            id,
            kind: TxnKind::Load,
            block: b,
            orig: op.req,
            sent: op.req,
            wanted: op.mask,
            mask: request.union(op.mask),
            waiting,
            data,
            addends: vec![0; self.words_per_block as usize],
            owned_granted: WordMask::EMPTY,
            retries: 0,
            fill_invalid: false,
            overtaken: WordMask::EMPTY,
            direct: None,
            pc: op.pc,
            tag: op.tag,
        };
        self.txns.insert(id, txn);
        self.send_request(id, request, env, out);
        Issue::Pending(id)
    }

    fn issue_store(&mut self, op: &CoreOp, out: &mut Outbox) -> Issue {
        let b = op.block;
        if op.mask.overlaps(self.busy_reads(b)) {
            return Issue::Stall;
        }
        let owned = self.owned_mask(b);
        let local: WordMask = op.mask.iter().filter(|&w| owned.contains(w) && !self.wb_covers(b, w)).collect();
        let buffered = op.mask.minus(local);
        let entry_ix = self.wb.iter().position(|e| e.block == b);
        if !buffered.is_empty() && entry_ix.is_none() && self.wb.len() >= self.wb_capacity {
            return Issue::Stall;
        }
        let wpb = self.words_per_block;
        for (i, w) in op.mask.iter().enumerate() {
            let v = op.values[i];
            if owned.contains(w) {
                self.set(b, w, WordState::Owned(v));
            }
            if local.contains(w) {
                out.event(Event::WriteApplied { word: word_addr(b, w, wpb), value: v, by: self.core });
            }
        }
        if !buffered.is_empty() {
            let e = match entry_ix {
                Some(ix) => &mut self.wb[ix],
                None => {
                    self.wb.push_back(WbEntry {
                        block: b,
                        written: WordMask::EMPTY,
                        values: vec![0; wpb as usize],
                        req: op.req,
                        req_mask: WordMask::EMPTY,
                        pc: op.pc,
                        tag: op.tag,
                    });
                    self.wb.back_mut().unwrap()
                }
            };
            for (i, w) in op.mask.iter().enumerate() {
                if buffered.contains(w) {
                    e.written.insert(w);
                    e.values[w as usize] = op.values[i];
                }
            }
            e.req = merge_req(e.req, op.req);
            e.req_mask = e.req_mask.union(op.req_mask).union(buffered);
            if e.req == RequestType::ReqO && e.req_mask != e.written {
                e.req = RequestType::ReqOData;
            }
        }
        Issue::Hit(Vec::new())
    }

    fn issue_rmw(&mut self, op: &CoreOp, env: &ProtocolEnv, out: &mut Outbox) -> Issue {
        let b = op.block;
        if !self.write_buffer_empty() || !self.txns.is_empty() {
            return Issue::Stall;
        }
        let owned = self.owned_mask(b);
        let wpb = self.words_per_block;
        if op.mask.is_subset_of(owned) {
            let mut old = Vec::new();
            for (i, w) in op.mask.iter().enumerate() {
                let v = self.word(b, w).value().unwrap();
                old.push(v);
                let nv = v.wrapping_add(op.values[i]);
                self.set(b, w, WordState::Owned(nv));
                out.event(Event::WriteApplied { word: word_addr(b, w, wpb), value: nv, by: self.core });
            }
            return Issue::Hit(old);
        }
        let request = if op.req == RequestType::ReqOData { op.req_mask.union(op.mask).minus(owned) } else { op.mask };
        let mut addends = vec![0; wpb as usize];
        for (i, w) in op.mask.iter().enumerate() {
            addends[w as usize] = op.values[i];
        }
        let id = self.free_txn_id();
        self.txns.insert(
            id,
            Txn {
                id,
                kind: TxnKind::Rmw,
                block: b,
                orig: op.req,
                sent: op.req,
                wanted: op.mask,
                mask: request.union(op.mask),
                waiting: request,
                data: vec![None; wpb as usize],
                addends,
                owned_granted: WordMask::EMPTY,
                retries: 0,
                fill_invalid: false,
                overtaken: WordMask::EMPTY,
                direct: None,
                pc: op.pc,
                tag: op.tag,
            },
        );
        self.send_request(id, request, env, out);
        Issue::Pending(id)
    }

    /// Sends the oldest buffered write if nothing else is in flight.
    /// Returns whether the buffer made progress.
    pub fn drain(&mut self, env: &ProtocolEnv, out: &mut Outbox) -> bool {
        if self.inflight_write.is_some() {
            return false;
        }
        let Some(head) = self.wb.front() else { return false };
        let b = head.block;
        if head.written.overlaps(self.busy_reads(b)) {
            return false;
        }
        let e = self.wb.pop_front().unwrap();
        let wpb = self.words_per_block;
        let owned = self.owned_mask(b);
        let request = if e.req.is_ownership() { e.req_mask.minus(owned) } else { e.written };
        if request.is_empty() {
            for w in e.written.iter() {
                let v = e.values[w as usize];
                self.set(b, w, WordState::Owned(v));
                out.event(Event::WriteApplied { word: word_addr(b, w, wpb), value: v, by: self.core });
            }
            return true;
        }
        let id = self.free_txn_id();
        self.txns.insert(
            id,
            Txn {
                id,
                kind: TxnKind::Write,
                block: b,
                orig: e.req,
                sent: e.req,
                wanted: e.written,
                mask: request.union(e.written),
                waiting: request,
                data: vec![None; wpb as usize],
                addends: e.values.clone(),
                owned_granted: WordMask::EMPTY,
                retries: 0,
                fill_invalid: false,
                overtaken: WordMask::EMPTY,
                direct: None,
                pc: e.pc,
                tag: e.tag,
            },
        );
        self.inflight_write = Some((id, e));
        self.send_request(id, request, env, out);
        true
    }

    /// Issues `txn.sent` for `mask`, straight to a predicted owner if known.
    fn send_request(&mut self, id: TxnId, mask: WordMask, _env: &ProtocolEnv, out: &mut Outbox) {
        self.send_as(id, mask, None, out);
    }

    fn send_as(&mut self, id: TxnId, mask: WordMask, kind: Option<MsgKind>, out: &mut Outbox) {
        let core = self.core;
        let txn = self.txns.get_mut(&id).expect("txn exists");
        let (dst, kind) = match kind {
            Some(k) => (Node::Llc, k),
            None => {
                let target = if txn.sent.is_predicted() { self.predictor.get(&(txn.pc, txn.sent.root())).copied() } else { None };
                match target {
                    Some(p) if p != core => {
                        txn.direct = Some(p);
                        (Node::Core(p), MsgKind::Direct)
                    }
                    _ => (Node::Llc, MsgKind::Req { recall: false }),
                }
            }
        };
        let data = if txn.sent.is_write_through() { mask.iter().map(|w| txn.addends[w as usize]).collect() } else { Vec::new() };
        out.send(Msg {
            src: Node::Core(core),
            dst,
            kind,
            block: txn.block,
            mask,
            data,
            txn: TxnTag { core, id },
            req: txn.sent,
        });
    }

    pub fn handle(&mut self, msg: Msg, env: &ProtocolEnv, out: &mut Outbox) {
        match msg.kind {
            MsgKind::Resp { grant } => self.on_response(msg, grant, env, out),
            MsgKind::Nack => self.on_nack(msg, env, out),
            MsgKind::Fwd | MsgKind::Direct | MsgKind::Revoke => {
                if !self.serve_remote(&msg, out) {
                    self.deferred.push(msg);
                }
            }
            MsgKind::Inv => {
                if let Some(line) = self.lines.get_mut(&msg.block) {
                    for s in line.iter_mut() {
                        if matches!(s, WordState::Shared(_)) {
                            *s = WordState::Invalid;
                        }
                    }
                }
                for t in self.txns.values_mut() {
                    if t.block == msg.block && t.sent == RequestType::ReqS {
                        t.fill_invalid = true;
                    }
                }
                out.send(reply(&msg, self.core, Node::Llc, MsgKind::InvAck, WordMask::EMPTY, Vec::new()));
            }
            other => out.event(Event::Violation(format!("core {} cannot handle {}", self.core, other.label()))),
        }
    }

    /// Serves a request for data this core owns. Returns false when the
    /// request must wait for a pending ownership grant.
    fn serve_remote(&mut self, msg: &Msg, out: &mut Outbox) -> bool {
        let b = msg.block;
        let wpb = self.words_per_block;
        let owned = self.owned_mask(b);
        let requester = Node::Core(msg.txn.core);
        let takes_ownership = msg.kind == MsgKind::Revoke || msg.req.is_ownership();
        // Words this core is still acquiring belong to its own access first,
        // even the ones already granted.
        if !msg.mask.intersect(self.pending_ownership(b)).is_empty() {
            return false;
        }
        if !msg.mask.is_subset_of(owned) {
            if takes_ownership {
                out.event(Event::Violation(format!("core {} asked to give up words it never owned", self.core)));
            }
            let dst = if msg.kind == MsgKind::Revoke { Node::Llc } else { requester };
            let kind = if msg.kind == MsgKind::Revoke { MsgKind::RevokeAck } else { MsgKind::Nack };
            out.send(reply(msg, self.core, dst, kind, msg.mask, Vec::new()));
            return true;
        }
        let values: Vec<Value> = msg.mask.iter().map(|w| self.word(b, w).value().unwrap()).collect();
        if msg.kind == MsgKind::Revoke {
            for w in msg.mask.iter() {
                self.set(b, w, WordState::Invalid);
            }
            out.send(reply(msg, self.core, Node::Llc, MsgKind::RevokeAck, msg.mask, values));
            return true;
        }
        let root = llc_equivalent(msg.req).root();
        match root {
            RequestType::ReqO | RequestType::ReqOData => {
                for w in msg.mask.iter() {
                    self.set(b, w, WordState::Invalid);
                }
                let data = if root == RequestType::ReqOData { values } else { Vec::new() };
                out.send(reply(msg, self.core, requester, MsgKind::Resp { grant: Grant::Owned }, msg.mask, data));
            }
            RequestType::ReqV => {
                // Answer with every owned word of the line, not just the asked ones.
                let all: Vec<Value> = owned.iter().map(|w| self.word(b, w).value().unwrap()).collect();
                out.send(reply(msg, self.core, requester, MsgKind::Resp { grant: Grant::Valid }, owned, all));
            }
            RequestType::ReqWT | RequestType::ReqWTData => {
                let rmw = root == RequestType::ReqWTData;
                let mut old = Vec::new();
                for (i, w) in msg.mask.iter().enumerate() {
                    let v = msg.data.get(i).copied().unwrap_or(0);
                    let nv = if rmw { values[i].wrapping_add(v) } else { v };
                    if rmw {
                        old.push(values[i]);
                    }
                    self.set(b, w, WordState::Owned(nv));
                    out.event(Event::WriteApplied { word: word_addr(b, w, wpb), value: nv, by: msg.txn.core });
                }
                out.send(reply(msg, self.core, requester, MsgKind::Resp { grant: Grant::Ack }, msg.mask, old));
            }
            other => {
                out.event(Event::Violation(format!("core {} received a forwarded {other}", self.core)));
                out.send(reply(msg, self.core, requester, MsgKind::Nack, msg.mask, Vec::new()));
            }
        }
        true
    }

    fn on_response(&mut self, msg: Msg, grant: Grant, env: &ProtocolEnv, out: &mut Outbox) {
        let core = self.core;
        let b = msg.block;
        let Some(txn) = self.txns.get(&msg.txn.id).cloned() else {
            out.event(Event::Violation(format!("core {core} got a response for unknown txn {}", msg.txn.id)));
            return;
        };
        let mut txn = txn;
        for w in msg.mask.iter() {
            let v = msg.value_of(w);
            if let Some(v) = v {
                txn.data[w as usize] = Some(v);
            }
            let cur = self.word(b, w);
            let fill = self.wb_value(b, w).or(v);
            // A local write of the word, pending or completed since the request
            // left, is not ordered against this response, so the copy is not
            // kept.
            let pending_write = self.wb_covers(b, w);
            if (txn.overtaken.contains(w) || pending_write) && matches!(grant, Grant::Valid | Grant::Shared) {
                continue;
            }
            match grant {
                Grant::Valid => {
                    if let (WordState::Invalid, Some(f)) = (cur, fill) {
                        self.set(b, w, WordState::Valid(f));
                    }
                }
                Grant::Shared => {
                    if !txn.fill_invalid && !cur.is_owned() && !txn.mask.minus(msg.mask).contains(w) {
                        if let Some(f) = fill {
                            self.set(b, w, WordState::Shared(f));
                        }
                    }
                }
                Grant::Owned => {
                    txn.owned_granted.insert(w);
                    let val = fill.or(cur.value()).unwrap_or(txn.addends[w as usize]);
                    self.set(b, w, WordState::Owned(val));
                }
                Grant::Ack => {}
            }
        }
        if let (Node::Core(p), true) = (msg.src, txn.orig.is_predicted()) {
            self.predictor.insert((txn.pc, txn.orig.root()), p);
            if txn.direct == Some(p) {
                out.event(Event::PredictionHit { core, txn: txn.id });
                txn.direct = None;
            }
        }
        txn.waiting = txn.waiting.minus(msg.mask);
        if txn.waiting.is_empty() {
            self.txns.remove(&txn.id);
            self.complete(txn, env, out);
        } else {
            self.txns.insert(txn.id, txn);
        }
    }

    fn complete(&mut self, txn: Txn, env: &ProtocolEnv, out: &mut Outbox) {
        let b = txn.block;
        let wpb = self.words_per_block;
        let core = self.core;
        let written = match txn.kind {
            TxnKind::Load => WordMask::EMPTY,
            TxnKind::Write => self.inflight_write.as_ref().map_or(WordMask::EMPTY, |(_, e)| e.written),
            TxnKind::Rmw => txn.wanted,
        };
        for t in self.txns.values_mut().filter(|t| t.block == b && t.kind == TxnKind::Load) {
            t.overtaken = t.overtaken.union(written);
        }
        let values = match txn.kind {
            TxnKind::Load => txn.wanted.iter().map(|w| txn.data[w as usize].unwrap_or(0)).collect(),
            TxnKind::Write => {
                let (_, e) = self.inflight_write.take().expect("write in flight");
                for w in e.written.iter() {
                    let v = e.values[w as usize];
                    match self.word(b, w) {
                        WordState::Owned(_) if txn.owned_granted.contains(w) => {
                            self.set(b, w, WordState::Owned(v));
                            out.event(Event::WriteApplied { word: word_addr(b, w, wpb), value: v, by: core });
                        }
                        WordState::Valid(_) => self.set(b, w, WordState::Valid(v)),
                        WordState::Shared(_) => self.set(b, w, WordState::Shared(v)),
                        _ => {}
                    }
                }
                Vec::new()
            }
            TxnKind::Rmw => {
                let mut old = Vec::new();
                for w in txn.wanted.iter() {
                    if txn.owned_granted.contains(w) {
                        let v = self.word(b, w).value().unwrap_or(0);
                        let nv = v.wrapping_add(txn.addends[w as usize]);
                        old.push(v);
                        self.set(b, w, WordState::Owned(nv));
                        out.event(Event::WriteApplied { word: word_addr(b, w, wpb), value: nv, by: core });
                    } else {
                        old.push(txn.data[w as usize].unwrap_or(0));
                        if !self.word(b, w).is_owned() {
                            self.set(b, w, WordState::Invalid);
                        }
                    }
                }
                old
            }
        };
        out.event(Event::Completed { core, txn: txn.id, values });
        self.retry_deferred(env, out);
    }

    fn retry_deferred(&mut self, _env: &ProtocolEnv, out: &mut Outbox) {
        let pending = std::mem::take(&mut self.deferred);
        for m in pending {
            if !self.serve_remote(&m, out) {
                self.deferred.push(m);
            }
        }
    }

    fn on_nack(&mut self, msg: Msg, env: &ProtocolEnv, out: &mut Outbox) {
        let core = self.core;
        let Some(txn) = self.txns.get_mut(&msg.txn.id) else {
            out.event(Event::Violation(format!("core {core} got a Nack for unknown txn {}", msg.txn.id)));
            return;
        };
        out.event(Event::Nacked { core, txn: txn.id });
        let from_direct = msg.kind == MsgKind::Nack && txn.direct.is_some() && msg.src == Node::Core(txn.direct.unwrap());
        if !(txn.sent.is_forwarded() || txn.sent.is_predicted() || txn.sent.root() == RequestType::ReqV) {
            out.event(Event::Violation(format!("core {core}: Nack for non-forwarded {}", txn.sent)));
        }
        if from_direct {
            out.event(Event::PredictionMiss { core, txn: txn.id });
            let key = (txn.pc, txn.orig.root());
            if self.predictor.get(&key) == txn.direct.as_ref() {
                self.predictor.remove(&key);
            }
            txn.direct = None;
        }
        if env.mutations.drop_nack_retry {
            return;
        }
        txn.retries += 1;
        let mut kind = MsgKind::Req { recall: false };
        if from_direct {
            txn.sent = llc_equivalent(txn.orig);
        } else if txn.retries > env.max_forward_retries {
            match llc_equivalent(txn.orig).root() {
                RequestType::ReqV => kind = MsgKind::Req { recall: true },
                r => txn.sent = r,
            }
        }
        let id = txn.id;
        out.event(Event::Retried { core, txn: id });
        self.send_as(id, msg.mask, Some(kind), out);
    }
}

fn reply(to: &Msg, me: CoreId, dst: Node, kind: MsgKind, mask: WordMask, data: Vec<Value>) -> Msg {
    Msg { src: Node::Core(me), dst, kind, block: to.block, mask, data, txn: to.txn, req: to.req }
}
