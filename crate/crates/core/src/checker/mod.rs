//! Exhaustive exploration of tiny systems built from the coherence
//! controllers.
//!
//! Every core may nondeterministically issue any access from its alphabet
//! (up to a per-core budget), drain its write buffer, and any message in
//! flight may be delivered next. States are deduplicated by a 64-bit
//! fingerprint and invariants are checked on every reachable state.

mod report;

pub use report::{compare_state_counts, format_csv, format_text, StateCountRow};

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};

use crate::coherence::{
    llc_equivalent, CoreOp, Event, Flavor, Issue, L1State, LlcState, Msg, MsgKind, Mutations, Node, Outbox,
    ProtocolEnv, WordState,
};
use crate::selector::RequestType;
use crate::trace::AccessKind;
use crate::{CoreId, Value, WordMask};

/// Request types the system may use beyond the baseline set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Features {
    pub forwarding: bool,
    pub prediction: bool,
}

impl Features {
    pub const BASELINE: Features = Features { forwarding: false, prediction: false };
    pub const FWD: Features = Features { forwarding: true, prediction: false };
    pub const PRED: Features = Features { forwarding: true, prediction: true };

    pub fn label(self) -> &'static str {
        match (self.forwarding, self.prediction) {
            (false, false) => "baseline",
            (true, false) => "+fwd",
            (false, true) => "+pred-only",
            (true, true) => "+fwd+pred",
        }
    }

    pub fn enables(self, r: RequestType) -> bool {
        (!r.is_forwarded() || self.forwarding) && (!r.is_predicted() || self.prediction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Load,
    Store,
    Rmw,
    /// Self-invalidation of Valid words.
    Acquire,
}

/// One entry of a core's script alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScriptOp {
    pub kind: OpKind,
    pub addr: u8,
    pub req: RequestType,
}

impl fmt::Display for ScriptOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            OpKind::Acquire => write!(f, "Acq"),
            k => write!(f, "{k:?}({})/{}", self.addr, self.req),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckConfig {
    pub n_cores: usize,
    pub n_addresses: usize,
    pub words_per_line: u32,
    pub features: Features,
    /// Accesses each core may issue.
    pub ops_per_core: u8,
    /// Per-core alphabet; `None` derives one from `features`.
    pub alphabet: Option<Vec<Vec<ScriptOp>>>,
    pub max_in_flight: usize,
    pub state_budget: usize,
    pub mutations: Mutations,
    pub max_forward_retries: u32,
    /// Explore depth-first instead of breadth-first.
    pub depth_first: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            n_cores: 2,
            n_addresses: 2,
            words_per_line: 1,
            features: Features::BASELINE,
            ops_per_core: 2,
            alphabet: None,
            max_in_flight: 8,
            state_budget: 10_000_000,
            mutations: Mutations::default(),
            max_forward_retries: 2,
            depth_first: false,
        }
    }
}

impl CheckConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(1..=3).contains(&self.n_cores) {
            return Err("n_cores must be 1..=3".into());
        }
        if !(1..=2).contains(&self.n_addresses) {
            return Err("n_addresses must be 1 or 2".into());
        }
        if !(1..=2).contains(&self.words_per_line) {
            return Err("words_per_line must be 1 or 2".into());
        }
        if let Some(a) = &self.alphabet {
            if a.len() != self.n_cores {
                return Err("alphabet needs one entry per core".into());
            }
            for op in a.iter().flatten() {
                if op.addr as usize >= self.n_addresses {
                    return Err(format!("{op} names an address out of range"));
                }
                if op.kind != OpKind::Acquire && !self.features.enables(op.req) {
                    return Err(format!("{op} uses a type not enabled by {}", self.features.label()));
                }
            }
        }
        Ok(())
    }

    /// The access kinds every core may issue on every address. Loads,
    /// write-through stores and RMWs use the most specialized enabled type;
    /// shared loads and ownership accesses are the same in every variant.
    pub fn default_alphabet(&self) -> Vec<ScriptOp> {
        use RequestType::*;
        let f = self.features;
        let (load, wt, rmw) = match (f.forwarding, f.prediction) {
            (_, true) => (ReqVo, ReqWTo, ReqWToData),
            (true, false) => (ReqV, ReqWTfwd, ReqWTfwdData),
            _ => (ReqV, ReqWT, ReqWTData),
        };
        let mut ops = Vec::new();
        for addr in 0..self.n_addresses as u8 {
            ops.push(ScriptOp { kind: OpKind::Load, addr, req: load });
            ops.push(ScriptOp { kind: OpKind::Load, addr, req: ReqS });
            ops.push(ScriptOp { kind: OpKind::Store, addr, req: wt });
            ops.push(ScriptOp { kind: OpKind::Store, addr, req: ReqO });
            ops.push(ScriptOp { kind: OpKind::Load, addr, req: ReqOData });
            ops.push(ScriptOp { kind: OpKind::Rmw, addr, req: rmw });
            ops.push(ScriptOp { kind: OpKind::Rmw, addr, req: ReqOData });
        }
        ops.push(ScriptOp { kind: OpKind::Acquire, addr: 0, req: ReqV });
        ops
    }

    fn alphabets(&self) -> Vec<Vec<ScriptOp>> {
        self.alphabet.clone().unwrap_or_else(|| vec![self.default_alphabet(); self.n_cores])
    }

    fn env(&self) -> ProtocolEnv {
        ProtocolEnv { words_per_block: self.words_per_line, max_forward_retries: self.max_forward_retries, mutations: self.mutations }
    }
}

/// One transition of the product system.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    /// Core issues entry `op` of its alphabet.
    Issue { core: CoreId, op: usize },
    /// Core sends its oldest buffered write.
    Drain { core: CoreId },
    Deliver(Msg),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Issue { core, op } => write!(f, "c{core} issues op {op}"),
            Action::Drain { core } => write!(f, "c{core} drains"),
            Action::Deliver(m) => write!(f, "deliver {} {} {:?}->{:?} block {} mask {}", m.kind.label(), m.req, m.src, m.dst, m.block, m.mask),
        }
    }
}

/// Which invariant a state breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Invariant {
    SingleOwner,
    OwnerPointer,
    SharedOwnedExclusion,
    NackOnlyForwarded,
    DataValue,
    Controller,
    Deadlock,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckViolation {
    pub invariant: Invariant,
    pub message: String,
    /// Actions from the initial state to the violating state.
    pub trace: Vec<Action>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExploreResult {
    /// Distinct protocol state vectors reached.
    pub states: usize,
    /// Search nodes, which also distinguish remaining script budgets.
    pub search_states: usize,
    pub transitions: usize,
    pub max_frontier: usize,
    /// First violation found for each invariant.
    pub violations: Vec<CheckViolation>,
    pub deadlocks: usize,
    /// Set when the state budget ran out; holds the frontier size then.
    pub budget_exceeded: Option<usize>,
}

impl ExploreResult {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.deadlocks == 0 && self.budget_exceeded.is_none()
    }

    pub fn violation(&self, inv: Invariant) -> Option<&CheckViolation> {
        self.violations.iter().find(|v| v.invariant == inv)
    }
}

/// Full system state. Messages in flight are kept sorted so that the
/// multiset has one representation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SysState {
    pub l1: Vec<L1State>,
    pub llc: LlcState,
    pub net: Vec<Msg>,
    /// Last value applied to each word.
    pub ghost: Vec<Value>,
    pub budget: Vec<u8>,
}

struct Model {
    cfg: CheckConfig,
    env: ProtocolEnv,
    alphabets: Vec<Vec<ScriptOp>>,
}

impl Model {
    fn new(cfg: &CheckConfig) -> Self {
        Model { cfg: cfg.clone(), env: cfg.env(), alphabets: cfg.alphabets() }
    }

    fn initial(&self) -> SysState {
        let wpl = self.cfg.words_per_line;
        SysState {
            l1: (0..self.cfg.n_cores).map(|c| L1State::new(c as CoreId, Flavor::Flex, wpl, 2, 1)).collect(),
            llc: LlcState::new(wpl),
            net: Vec::new(),
            ghost: vec![0; self.cfg.n_addresses],
            budget: vec![self.cfg.ops_per_core; self.cfg.n_cores],
        }
    }

    fn actions(&self, s: &SysState) -> Vec<Action> {
        let mut acts = Vec::new();
        let mut last: Option<&Msg> = None;
        for m in &s.net {
            if last != Some(m) {
                acts.push(Action::Deliver(m.clone()));
            }
            last = Some(m);
        }
        for c in 0..s.l1.len() {
            if !s.l1[c].wb.is_empty() && s.l1[c].inflight_write.is_none() {
                acts.push(Action::Drain { core: c as CoreId });
            }
            if s.budget[c] > 0 && s.net.len() < self.cfg.max_in_flight {
                for op in 0..self.alphabets[c].len() {
                    acts.push(Action::Issue { core: c as CoreId, op });
                }
            }
        }
        acts
    }

    /// Applies `a`; `None` when it is not enabled in `s`.
    fn apply(&self, s: &SysState, a: &Action) -> Option<(SysState, Vec<Event>)> {
        let mut n = s.clone();
        let mut out = Outbox::default();
        match a {
            Action::Deliver(m) => {
                let i = n.net.iter().position(|x| x == m)?;
                let m = n.net.remove(i);
                match m.dst {
                    Node::Llc => n.llc.handle(m, &self.env, &mut out),
                    Node::Core(c) => n.l1[c as usize].handle(m, &self.env, &mut out),
                }
            }
            Action::Drain { core } => {
                let l1 = &mut n.l1[*core as usize];
                if l1.wb.is_empty() || l1.inflight_write.is_some() {
                    return None;
                }
                l1.drain(&self.env, &mut out);
            }
            Action::Issue { core, op } => {
                let c = *core as usize;
                if n.budget[c] == 0 {
                    return None;
                }
                let sop = *self.alphabets[c].get(*op)?;
                n.budget[c] -= 1;
                if sop.kind == OpKind::Acquire {
                    n.l1[c].acquire_invalidate();
                } else {
                    let wpl = self.cfg.words_per_line as u64;
                    let w = (sop.addr as u64 % wpl) as u32;
                    let kind = match sop.kind {
                        OpKind::Load => AccessKind::Load,
                        OpKind::Store => AccessKind::Store,
                        _ => AccessKind::Rmw,
                    };
                    let cop = CoreOp {
                        kind,
                        block: sop.addr as u64 / wpl,
                        mask: WordMask::single(w),
                        values: if kind == AccessKind::Load { vec![] } else { vec![1] },
                        req: sop.req,
                        req_mask: WordMask::single(w),
                        pc: sop.addr as u32 + 1,
                        tag: 0,
                    };
                    match n.l1[c].issue(&cop, &self.env, &mut out) {
                        Ok(Issue::Stall) | Err(_) => return None,
                        Ok(_) => {}
                    }
                }
            }
        }
        for e in &out.events {
            if let Event::WriteApplied { word, value, .. } = e {
                if let Some(g) = n.ghost.get_mut(*word as usize) {
                    *g = *value;
                }
            }
        }
        n.net.extend(out.msgs);
        n.net.sort();
        Some((n, out.events))
    }

    /// Invariants of one state, given the events of the transition into it.
    fn check(&self, s: &SysState, events: &[Event], has_successor: bool) -> Vec<(Invariant, String)> {
        let mut bad = Vec::new();
        for e in events {
            if let Event::Violation(v) = e {
                bad.push((Invariant::Controller, v.clone()));
            }
        }
        let wpl = self.cfg.words_per_line;
        let word_state = |c: usize, addr: usize| s.l1[c].word(addr as u64 / wpl as u64, addr as u32 % wpl);
        for addr in 0..self.cfg.n_addresses {
            let owners: Vec<usize> = (0..s.l1.len()).filter(|&c| word_state(c, addr).is_owned()).collect();
            if owners.len() > 1 {
                bad.push((Invariant::SingleOwner, format!("address {addr} owned by cores {owners:?}")));
            }
        }
        for m in &s.net {
            if m.kind == MsgKind::Nack {
                let r = llc_equivalent(m.req);
                if !(r == RequestType::ReqV || r.is_forwarded()) {
                    bad.push((Invariant::NackOnlyForwarded, format!("Nack answers {}", m.req)));
                }
            }
        }
        let quiet = s.net.is_empty();
        if quiet {
            for addr in 0..self.cfg.n_addresses {
                let (b, w) = (addr as u64 / wpl as u64, addr as u32 % wpl);
                let owners: Vec<usize> = (0..s.l1.len()).filter(|&c| word_state(c, addr).is_owned()).collect();
                let ptr = s.llc.word(b, w).owner.map(|o| o as usize);
                if ptr != owners.first().copied() {
                    bad.push((Invariant::OwnerPointer, format!("address {addr}: LLC names {ptr:?}, caches own {owners:?}")));
                }
                let truth = match owners.first() {
                    Some(&o) => word_state(o, addr).value().unwrap(),
                    None => s.llc.word(b, w).value,
                };
                if truth != s.ghost[addr] {
                    bad.push((Invariant::DataValue, format!("address {addr} holds {truth}, last write was {}", s.ghost[addr])));
                }
                // A core may see its own buffered write before the LLC does.
                for c in 0..s.l1.len() {
                    if let WordState::Shared(v) = word_state(c, addr) {
                        if !owners.is_empty() {
                            bad.push((Invariant::SharedOwnedExclusion, format!("address {addr} Shared at c{c} and Owned at c{}", owners[0])));
                        } else if v != truth && s.l1[c].wb_value(b, w) != Some(v) {
                            bad.push((Invariant::DataValue, format!("address {addr} Shared at c{c} with stale {v}")));
                        }
                    }
                }
            }
            let stuck = s.l1.iter().any(|l| !l.txns.is_empty() || !l.deferred.is_empty()) || !s.llc.is_idle();
            if stuck && !has_successor {
                bad.push((Invariant::Deadlock, "requests outstanding with nothing in flight".into()));
            }
        }
        bad
    }
}

fn fingerprint(s: &SysState) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

/// Fingerprint of the protocol state vector alone: caches, LLC and the
/// network, without the checker's script budgets and ghost values.
fn vector_fingerprint(s: &SysState) -> u64 {
    let mut h = DefaultHasher::new();
    (&s.l1, &s.llc, &s.net).hash(&mut h);
    h.finish()
}

/// Explores every reachable state of `cfg`.
pub fn explore(cfg: &CheckConfig) -> Result<ExploreResult, String> {
    cfg.check()?;
    let model = Model::new(cfg);
    let init = model.initial();
    let mut result = ExploreResult::default();
    // Parent links for counterexample reconstruction.
    let mut parents: Vec<(usize, Option<Action>)> = vec![(0, None)];
    let mut seen: HashMap<u64, usize> = HashMap::new();
    seen.insert(fingerprint(&init), 0);
    let mut vectors: HashSet<u64> = HashSet::from([vector_fingerprint(&init)]);
    let mut frontier: VecDeque<(usize, SysState)> = VecDeque::from([(0, init)]);
    let path = |parents: &Vec<(usize, Option<Action>)>, mut i: usize| {
        let mut p = Vec::new();
        while let (up, Some(a)) = &parents[i] {
            p.push(a.clone());
            i = *up;
        }
        p.reverse();
        p
    };
    let mut pending_checks: Vec<(usize, Vec<(Invariant, String)>)> = Vec::new();
    while let Some((id, s)) = if cfg.depth_first { frontier.pop_back() } else { frontier.pop_front() } {
        let acts = model.actions(&s);
        let mut has_successor = false;
        for a in acts {
            let Some((n, events)) = model.apply(&s, &a) else { continue };
            has_successor = true;
            result.transitions += 1;
            let fp = fingerprint(&n);
            let nid = match seen.get(&fp) {
                Some(&nid) => nid,
                None => {
                    if seen.len() >= cfg.state_budget {
                        result.budget_exceeded = Some(frontier.len());
                        result.search_states = seen.len();
                        result.states = vectors.len();
                        return Ok(result);
                    }
                    let nid = parents.len();
                    parents.push((id, Some(a.clone())));
                    seen.insert(fp, nid);
                    vectors.insert(vector_fingerprint(&n));
                    frontier.push_back((nid, n.clone()));
                    nid
                }
            };
            // Transition-level checks (controller violations) plus state checks
            // except deadlock, which needs the successor set.
            let bad: Vec<_> = model.check(&n, &events, true).into_iter().filter(|(i, _)| *i != Invariant::Deadlock).collect();
            if !bad.is_empty() {
                pending_checks.push((nid, bad));
            }
        }
        if !has_successor {
            let bad = model.check(&s, &[], false);
            if bad.iter().any(|(i, _)| *i == Invariant::Deadlock) {
                result.deadlocks += 1;
            }
            if !bad.is_empty() {
                pending_checks.push((id, bad));
            }
        }
        for (nid, bad) in pending_checks.drain(..) {
            for (inv, message) in bad {
                if result.violation(inv).is_none() {
                    result.violations.push(CheckViolation { invariant: inv, message, trace: path(&parents, nid) });
                }
            }
        }
        result.max_frontier = result.max_frontier.max(frontier.len());
    }
    result.search_states = seen.len();
    result.states = vectors.len();
    result.violations.sort_by_key(|v| v.invariant);
    Ok(result)
}

/// Replays `actions` from the initial state, skipping any that are not
/// enabled, until a state violates `inv`. Returns the actions actually
/// applied up to that state.
pub fn replay_violates(cfg: &CheckConfig, actions: &[Action], inv: Invariant) -> Option<Vec<Action>> {
    let model = Model::new(cfg);
    let mut s = model.initial();
    let mut applied = Vec::new();
    for a in actions {
        let Some((n, events)) = model.apply(&s, a) else { continue };
        applied.push(a.clone());
        let has_successor = model.actions(&n).iter().any(|a| model.apply(&n, a).is_some());
        if model.check(&n, &events, has_successor).iter().any(|(v, _)| *v == inv) {
            return Some(applied);
        }
        s = n;
    }
    None
}

/// Greedily deletes actions while the sequence still reaches a state that
/// violates the same invariant. The result is never longer than the input
/// and always re-validates.
pub fn minimize_counterexample(cfg: &CheckConfig, v: &CheckViolation) -> CheckViolation {
    let Some(mut best) = replay_violates(cfg, &v.trace, v.invariant) else {
        return v.clone();
    };
    let mut i = 0;
    while i < best.len() {
        let mut cand = best.clone();
        cand.remove(i);
        match replay_violates(cfg, &cand, v.invariant) {
            Some(shorter) => best = shorter,
            None => i += 1,
        }
    }
    CheckViolation { invariant: v.invariant, message: v.message.clone(), trace: best }
}

#[cfg(test)]
mod tests;
