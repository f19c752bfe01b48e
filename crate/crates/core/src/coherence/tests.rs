use std::collections::VecDeque;

use super::*;
use crate::trace::AccessKind;
use RequestType::*;

const WPB: u32 = 4;

fn env() -> ProtocolEnv {
    ProtocolEnv { words_per_block: WPB, ..Default::default() }
}

/// Tiny in-order system: every message is delivered in send order.
struct Sys {
    l1: Vec<L1State>,
    llc: LlcState,
    net: VecDeque<Msg>,
    log: Vec<Msg>,
    events: Vec<Event>,
    env: ProtocolEnv,
}

impl Sys {
    fn new(flavors: &[Flavor]) -> Self {
        Sys {
            l1: flavors.iter().enumerate().map(|(i, &f)| L1State::new(i as CoreId, f, WPB, 32, 16)).collect(),
            llc: LlcState::new(WPB),
            net: VecDeque::new(),
            log: Vec::new(),
            events: Vec::new(),
            env: env(),
        }
    }

    fn absorb(&mut self, out: Outbox) {
        self.net.extend(out.msgs);
        self.events.extend(out.events);
    }

    fn issue(&mut self, c: usize, op: CoreOp) -> Issue {
        let mut out = Outbox::default();
        let r = self.l1[c].issue(&op, &self.env, &mut out).expect("legal op");
        self.absorb(out);
        r
    }

    fn drain(&mut self, c: usize) {
        let mut out = Outbox::default();
        while self.l1[c].drain(&self.env, &mut out) && self.l1[c].inflight_write.is_none() {}
        self.absorb(out);
    }

    /// Delivers messages until the network is empty; returns them.
    fn run(&mut self) -> Vec<Msg> {
        let start = self.log.len();
        while let Some(m) = self.net.pop_front() {
            self.log.push(m.clone());
            let mut out = Outbox::default();
            match m.dst {
                Node::Llc => self.llc.handle(m, &self.env, &mut out),
                Node::Core(c) => self.l1[c as usize].handle(m, &self.env, &mut out),
            }
            self.absorb(out);
        }
        self.log[start..].to_vec()
    }

    fn flush(&mut self, c: usize) -> Vec<Msg> {
        let start = self.log.len();
        while !self.l1[c].write_buffer_empty() {
            self.drain(c);
            self.run();
        }
        self.log[start..].to_vec()
    }

    fn violations(&self) -> Vec<&Event> {
        self.events.iter().filter(|e| matches!(e, Event::Violation(_))).collect()
    }
}

fn op(kind: AccessKind, w: u32, req: RequestType, v: Value) -> CoreOp {
    CoreOp {
        kind,
        block: 0,
        mask: WordMask::single(w),
        values: if kind == AccessKind::Load { vec![] } else { vec![v] },
        req,
        req_mask: WordMask::single(w),
        pc: 7,
        tag: 0,
    }
}

fn ld(w: u32, req: RequestType) -> CoreOp {
    op(AccessKind::Load, w, req, 0)
}

fn st(w: u32, req: RequestType, v: Value) -> CoreOp {
    op(AccessKind::Store, w, req, v)
}

/// Makes core `c` own word `w` with value `v` through the protocol.
fn own(s: &mut Sys, c: usize, w: u32, v: Value) {
    s.issue(c, st(w, ReqO, v));
    s.flush(c);
    assert_eq!(s.l1[c].word(0, w), WordState::Owned(v));
    assert_eq!(s.llc.word(0, w).owner, Some(c as CoreId));
}

#[test]
fn load_hits_on_owned_word() {
    let mut s = Sys::new(&[Flavor::DeNovo]);
    own(&mut s, 0, 1, 5);
    assert_eq!(s.issue(0, ld(1, ReqV)), Issue::Hit(vec![5]));
    assert!(s.net.is_empty());
}

#[test]
fn write_through_store_waits_in_buffer() {
    let mut s = Sys::new(&[Flavor::Gpu]);
    assert_eq!(s.issue(0, st(2, ReqWT, 9)), Issue::Hit(vec![]));
    assert!(s.net.is_empty());
    assert_eq!(s.l1[0].wb.len(), 1);
    assert_eq!(s.l1[0].wb_value(0, 2), Some(9));
    // A release drains the buffer as messages.
    let msgs = s.flush(0);
    assert_eq!(msgs[0].kind, MsgKind::Req { recall: false });
    assert_eq!(s.llc.word(0, 2).value, 9);
}

#[test]
fn predicted_load_goes_to_owner() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex, Flavor::Flex, Flavor::Flex]);
    own(&mut s, 3, 0, 11);
    s.l1[0].predictor.insert((7, ReqV), 3);
    let Issue::Pending(_) = s.issue(0, ld(0, ReqVo)) else { panic!("expected miss") };
    assert_eq!(s.net[0].dst, Node::Core(3));
    assert_eq!(s.net[0].kind, MsgKind::Direct);
    let msgs = s.run();
    assert_eq!(msgs.len(), 2, "request and data, no LLC");
    assert!(s.events.contains(&Event::Completed { core: 0, txn: 0, values: vec![11] }));
    assert!(s.events.iter().any(|e| matches!(e, Event::PredictionHit { core: 0, .. })));
}

#[test]
fn forwarded_write_to_unowned_word_updates_llc() {
    let mut s = Sys::new(&[Flavor::Flex]);
    s.issue(0, st(1, ReqWTfwd, 4));
    let msgs = s.flush(0);
    assert_eq!(msgs.len(), 2);
    assert_eq!(msgs[1].kind, MsgKind::Resp { grant: Grant::Ack });
    assert_eq!(s.llc.word(0, 1), LlcWord { value: 4, owner: None });
}

#[test]
fn forwarded_write_to_owned_word_leaves_llc_untouched() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex]);
    own(&mut s, 1, 1, 3);
    let before = s.llc.clone();
    s.issue(0, st(1, ReqWTfwd, 8));
    let msgs = s.flush(0);
    let kinds: Vec<_> = msgs.iter().map(|m| m.kind.label()).collect();
    assert_eq!(kinds, ["Req", "Fwd", "Ack"]);
    assert_eq!(s.llc, before);
    assert_eq!(s.l1[1].word(0, 1), WordState::Owned(8));
}

#[test]
fn ownership_transfer_takes_three_hops() {
    let mut s = Sys::new(&[Flavor::DeNovo, Flavor::DeNovo, Flavor::DeNovo]);
    own(&mut s, 2, 0, 6);
    s.issue(0, st(0, ReqOData, 7));
    let msgs = s.flush(0);
    assert_eq!(msgs.len(), 3);
    assert_eq!(msgs[1].dst, Node::Core(2));
    assert_eq!(s.l1[2].word(0, 0), WordState::Invalid);
    assert_eq!(s.l1[0].word(0, 0), WordState::Owned(7));
    assert_eq!(s.llc.word(0, 0).owner, Some(0));
}

#[test]
fn stale_prediction_is_nacked_and_retried() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex, Flavor::Flex]);
    own(&mut s, 2, 0, 1);
    s.l1[0].predictor.insert((7, ReqWT), 1);
    s.issue(0, st(0, ReqWTo, 5));
    let msgs = s.flush(0);
    let kinds: Vec<_> = msgs.iter().map(|m| m.kind.label()).collect();
    assert_eq!(kinds, ["Direct", "Nack", "Req", "Fwd", "Ack"]);
    assert_eq!(msgs[2].req, ReqWTfwd);
    assert!(s.events.iter().any(|e| matches!(e, Event::PredictionMiss { .. })));
    assert_eq!(s.l1[0].predictor.get(&(7, ReqWT)), Some(&2));
    assert_eq!(s.l1[2].word(0, 0), WordState::Owned(5));
    assert!(s.violations().is_empty());
}

#[test]
fn revoke_surrenders_data() {
    let mut s = Sys::new(&[Flavor::DeNovo, Flavor::Gpu]);
    own(&mut s, 0, 3, 42);
    s.issue(1, st(3, ReqWT, 43));
    let msgs = s.flush(1);
    let revoke_ack = msgs.iter().find(|m| m.kind == MsgKind::RevokeAck).unwrap();
    assert_eq!(revoke_ack.data, vec![42]);
    assert_eq!(s.l1[0].word(0, 3), WordState::Invalid);
    assert_eq!(s.llc.word(0, 3), LlcWord { value: 43, owner: None });
}

#[test]
fn nack_retries_then_falls_back() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex]);
    s.issue(0, st(0, ReqWTfwd, 1));
    s.drain(0);
    let req = s.net.pop_front().unwrap();
    let mut nack = req.clone();
    nack.src = Node::Core(1);
    nack.dst = Node::Core(0);
    nack.kind = MsgKind::Nack;
    let mut reissued = Vec::new();
    for _ in 0..3 {
        let mut out = Outbox::default();
        s.l1[0].handle(nack.clone(), &s.env, &mut out);
        reissued.push(out.msgs[0].req);
    }
    assert_eq!(reissued, [ReqWTfwd, ReqWTfwd, ReqWT]);
}

#[test]
fn nack_of_llc_served_request_is_flagged() {
    let mut s = Sys::new(&[Flavor::DeNovo]);
    s.issue(0, st(0, ReqO, 1));
    s.drain(0);
    let mut nack = s.net.pop_front().unwrap();
    nack.dst = Node::Core(0);
    nack.kind = MsgKind::Nack;
    let mut out = Outbox::default();
    s.l1[0].handle(nack, &s.env, &mut out);
    assert!(out.events.iter().any(|e| matches!(e, Event::Violation(_))));
}

#[test]
fn write_buffer_merge_priority() {
    let mut s = Sys::new(&[Flavor::Flex]);
    s.issue(0, st(0, ReqWTo, 1));
    s.issue(0, st(0, ReqWTfwd, 2));
    assert_eq!(s.l1[0].wb[0].req, ReqWTfwd);
    s.issue(0, st(1, ReqO, 3));
    assert_eq!(s.l1[0].wb[0].req, ReqO);
    s.issue(0, st(2, ReqWT, 4));
    assert_eq!(s.l1[0].wb[0].req, ReqWT);
    assert_eq!(s.l1[0].wb.len(), 1);
    let mut other = st(0, ReqWT, 5);
    other.block = 1;
    s.issue(0, other);
    assert_eq!(s.l1[0].wb.len(), 2);
}

#[test]
fn acquire_drops_only_valid_words() {
    let mut l1 = L1State::new(0, Flavor::Gpu, WPB, 32, 16);
    l1.lines.insert(0, vec![WordState::Valid(1), WordState::Valid(2), WordState::Valid(3), WordState::Owned(4)]);
    l1.acquire_invalidate();
    assert_eq!(l1.lines[&0], vec![WordState::Invalid, WordState::Invalid, WordState::Invalid, WordState::Owned(4)]);

    let mut mesi = L1State::new(0, Flavor::Mesi, WPB, 32, 1);
    mesi.lines.insert(0, vec![WordState::Shared(1), WordState::Shared(2), WordState::Owned(3), WordState::Shared(4)]);
    let before = mesi.clone();
    mesi.acquire_invalidate();
    assert_eq!(mesi, before);
}

#[test]
fn predictor_entries_are_per_pc() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex, Flavor::Flex]);
    own(&mut s, 2, 0, 1);
    assert!(s.l1[0].predictor.is_empty());
    s.issue(0, st(0, ReqWTo, 5));
    let msgs = s.flush(0);
    assert_eq!(msgs[0].dst, Node::Llc, "no prediction yet");
    assert_eq!(s.l1[0].predictor.get(&(7, ReqWT)), Some(&2));
    let mut other = st(0, ReqWTo, 6);
    other.pc = 8;
    s.issue(0, other);
    assert_eq!(s.flush(0)[0].dst, Node::Llc);
    s.issue(0, st(0, ReqWTo, 7));
    assert_eq!(s.flush(0)[0].dst, Node::Core(2));
}

#[test]
fn shared_copies_are_invalidated_by_writers() {
    let mut s = Sys::new(&[Flavor::Mesi, Flavor::DeNovo]);
    let mut load = ld(0, ReqS);
    load.req_mask = WordMask::full(WPB);
    s.issue(0, load);
    s.run();
    assert_eq!(s.l1[0].word(0, 3), WordState::Shared(0));
    s.issue(1, st(3, ReqO, 9));
    s.flush(1);
    assert_eq!(s.l1[0].word(0, 3), WordState::Invalid);
    assert_eq!(s.llc.line(0).unwrap().sharers, 0);
}

#[test]
fn shared_request_recalls_owned_words() {
    let mut s = Sys::new(&[Flavor::Mesi, Flavor::DeNovo]);
    own(&mut s, 1, 2, 5);
    let mut load = ld(2, ReqS);
    load.req_mask = WordMask::full(WPB);
    s.issue(0, load);
    s.run();
    assert!(s.events.contains(&Event::Completed { core: 0, txn: 0, values: vec![5] }));
    assert_eq!(s.l1[1].word(0, 2), WordState::Invalid);
    assert_eq!(s.l1[0].word(0, 2), WordState::Shared(5));
}

#[test]
fn rmw_on_owned_word_is_local() {
    let mut s = Sys::new(&[Flavor::Flex]);
    own(&mut s, 0, 0, 10);
    assert_eq!(s.issue(0, op(AccessKind::Rmw, 0, ReqOData, 2)), Issue::Hit(vec![10]));
    assert_eq!(s.l1[0].word(0, 0), WordState::Owned(12));
}

#[test]
fn forwarded_rmw_applies_at_owner() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex]);
    own(&mut s, 1, 0, 10);
    let Issue::Pending(_) = s.issue(0, op(AccessKind::Rmw, 0, ReqWTfwdData, 3)) else { panic!() };
    s.run();
    assert!(s.events.contains(&Event::Completed { core: 0, txn: 0, values: vec![10] }));
    assert_eq!(s.l1[1].word(0, 0), WordState::Owned(13));
}

#[test]
fn illegal_types_are_rejected() {
    let mut out = Outbox::default();
    let mut mesi = L1State::new(0, Flavor::Mesi, WPB, 32, 1);
    let mut o = st(0, ReqOData, 1);
    assert!(matches!(mesi.issue(&o, &env(), &mut out), Err(CoherenceError::IllegalType { .. })));
    o.req_mask = WordMask::full(WPB);
    assert!(mesi.issue(&o, &env(), &mut out).is_ok());
    o.req = ReqO;
    assert!(mesi.issue(&o, &env(), &mut out).is_err());
    let mut dn = L1State::new(0, Flavor::DeNovo, WPB, 32, 1);
    assert!(dn.issue(&st(0, ReqWTfwd, 1), &env(), &mut out).is_err());
    assert!(matches!(dn.issue(&ld(0, ReqWT), &env(), &mut out), Err(CoherenceError::KindMismatch { .. })));
}

impl Sys {
    /// Delivers the oldest message only.
    fn step(&mut self) -> Msg {
        let m = self.net.pop_front().expect("message in flight");
        self.log.push(m.clone());
        let mut out = Outbox::default();
        match m.dst {
            Node::Llc => self.llc.handle(m.clone(), &self.env, &mut out),
            Node::Core(c) => self.l1[c as usize].handle(m.clone(), &self.env, &mut out),
        }
        self.absorb(out);
        m
    }
}

#[test]
fn granted_words_of_a_pending_write_are_not_forwarded_away() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex, Flavor::Flex]);
    own(&mut s, 1, 0, 5);
    let both = WordMask::single(0).union(WordMask::single(1));
    let wide = CoreOp { mask: both, req_mask: both, values: vec![8, 9], ..st(0, ReqO, 0) };
    s.issue(0, wide);
    s.drain(0);
    s.step(); // request reaches the LLC: word 1 granted, word 0 forwarded to core 1
    s.step(); // core 0 holds word 1 but still waits for word 0
    let held = s.net.pop_front().unwrap();
    assert_eq!(held.dst, Node::Core(1));
    s.issue(2, st(1, ReqO, 3));
    s.drain(2);
    s.run(); // core 2's forward reaches core 0 first
    s.net.push_back(held);
    s.run();
    s.flush(2);
    assert!(s.violations().is_empty(), "{:?}", s.violations());
    assert_eq!(s.l1[0].word(0, 0), WordState::Owned(8));
    assert_eq!(s.l1[2].word(0, 1), WordState::Owned(3));
    assert_eq!(s.llc.word(0, 1).owner, Some(2));
    let word1: Vec<(Value, CoreId)> = s
        .events
        .iter()
        .filter_map(|e| match e {
            Event::WriteApplied { word: 1, value, by } => Some((*value, *by)),
            _ => None,
        })
        .collect();
    assert_eq!(word1, vec![(9, 0), (3, 2)]);
}

#[test]
fn valid_fill_does_not_roll_back_a_newer_local_write() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex]);
    own(&mut s, 1, 0, 5);
    own(&mut s, 1, 1, 7);
    s.issue(0, ld(0, ReqV));
    s.step();
    s.step(); // core 1 answers with both of its words
    let late = s.net.pop_front().unwrap();
    assert_eq!(late.mask, WordMask::single(0).union(WordMask::single(1)));
    assert!(matches!(s.issue(0, st(1, ReqWT, 6)), Issue::Hit(_)));
    s.flush(0);
    assert_ne!(s.l1[0].word(0, 1).value(), Some(7));
    s.net.push_back(late);
    s.run();
    assert!(s.violations().is_empty(), "{:?}", s.violations());
    assert_eq!(s.l1[0].word(0, 0), WordState::Valid(5));
    // The response predates this core's own write to word 1.
    assert_ne!(s.l1[0].word(0, 1).value(), Some(7));
}

#[test]
fn forwarded_load_gets_no_extra_llc_response() {
    let mut s = Sys::new(&[Flavor::Flex, Flavor::Flex]);
    own(&mut s, 1, 0, 5);
    s.issue(0, ld(0, ReqV));
    s.step();
    assert!(s.net.iter().all(|m| m.src != Node::Llc || m.dst != Node::Core(0)), "{:?}", s.net);
    s.run();
    assert!(s.violations().is_empty(), "{:?}", s.violations());
    assert_eq!(s.l1[0].word(0, 0), WordState::Valid(5));
}
