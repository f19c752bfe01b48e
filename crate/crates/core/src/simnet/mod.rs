//! Discrete-event replay of a trace through the coherence controllers.
//!
//! Cores run their accesses in program order, concurrently. Messages travel
//! a mesh with a fixed per-hop cost; the LLC adds its service latency. The
//! trace's synchronization is honored by gating every acquire on the
//! releases that precede it on the same flag, so a data-race-free trace
//! produces the same final memory as its sequential execution.

mod config;
mod metrics;

pub use config::{static_request, static_selection, NamedConfig, SimConfig};
pub use metrics::{emit_metrics, normalized_table, parse_metrics_csv, Metrics, MetricsFormat};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write as _;

use crate::coherence::{
    word_addr, CoherenceError, CoreOp, Event, Issue, L1State, LlcState, Msg, MsgKind, Node, Outbox, ProtocolEnv, TxnId,
    TxnKind, TxnTag, WordState,
};
use crate::selector::{select_all, RequestType, SelectionMap};
use crate::trace::{sc_execute, AccessKind, AccessTrace, DeviceClass, WordAddr};
use crate::{CoreId, Pc, ScoringParamsF64, Value};

/// Life of one coherence transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnRecord {
    pub core: CoreId,
    /// Trace seq id of the access (for writes, the first buffered store).
    pub seq_id: u64,
    pub pc: Pc,
    pub kind: TxnKind,
    pub req: RequestType,
    /// First message went straight to a predicted owner.
    pub direct: bool,
    pub hops: u32,
    pub llc_lookups: u32,
    pub nacks: u32,
    pub retries: u32,
    pub issued_at: u64,
    pub completed_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoggedMsg {
    /// Cycle the message was sent.
    pub cycle: u64,
    pub msg: Msg,
}

impl LoggedMsg {
    /// `cycle class type src dst addr mask`
    pub fn line(&self) -> String {
        let node = |n: Node| match n {
            Node::Core(c) => format!("c{c}"),
            Node::Llc => "llc".into(),
        };
        let m = &self.msg;
        format!("{} {} {} {} {} {:#x} {}", self.cycle, m.kind.label(), m.req, node(m.src), node(m.dst), m.block, m.mask)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimResult {
    pub metrics: Metrics,
    /// Final value of every non-zero word.
    pub image: BTreeMap<WordAddr, Value>,
    /// Values each access read (empty for stores), by seq id.
    pub read_values: Vec<Vec<Value>>,
    pub txn_log: Vec<TxnRecord>,
    pub msg_log: Vec<LoggedMsg>,
    /// Protocol violations reported by the controllers.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("selection covers {have} accesses, trace has {need}")]
    SelectionGap { have: usize, need: usize },
    #[error("access {seq_id} uses {req}, which configuration {config} cannot issue")]
    Capability { seq_id: u64, req: RequestType, config: String },
    #[error("access {seq_id}: {source}")]
    Coherence { seq_id: u64, source: CoherenceError },
    #[error("no progress at cycle {cycle}: {detail}")]
    Deadlock { cycle: u64, detail: String },
}

/// Final memory of the trace's sequential execution, non-zero words only.
pub fn sc_reference_execute(t: &AccessTrace) -> BTreeMap<WordAddr, Value> {
    sc_execute(t).1.into_iter().filter(|&(_, v)| v != 0).collect()
}

/// Selection map a named configuration runs with: the fixed per-flavor table
/// for static configurations, otherwise per-access selection under the
/// configuration's hardware profile.
pub fn selection_for(config: NamedConfig, t: &AccessTrace) -> Result<SelectionMap, String> {
    match config.profile() {
        None => Ok(static_selection(t, &config.sim_config(t).flavors)),
        Some(mut p) => {
            p.block_size_bytes = t.block_size_bytes;
            p.word_size_bytes = t.word_size_bytes;
            select_all(t, &p, &ScoringParamsF64::default())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Block {
    /// Sync access or RMW in flight.
    Txn(TxnId),
    /// Release store waiting for the write buffer to empty.
    Flush(usize),
}

struct CoreRun {
    program: Vec<usize>,
    pos: usize,
    clock: u64,
    step_at: Option<u64>,
    block: Option<Block>,
    /// Access index of each outstanding load or RMW.
    outstanding: HashMap<TxnId, usize>,
    done_at: Option<u64>,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Step(CoreId),
    Deliver(u64),
}

struct Engine<'a> {
    t: &'a AccessTrace,
    sel: &'a SelectionMap,
    cfg: &'a SimConfig,
    env: ProtocolEnv,
    l1: Vec<L1State>,
    llc: LlcState,
    cores: Vec<CoreRun>,
    queue: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    in_flight: HashMap<u64, Msg>,
    next_seq: u64,
    tiles: Vec<u32>,
    /// Releases each acquire must wait for, by access index.
    gates: HashMap<usize, Vec<usize>>,
    released: Vec<bool>,
    open: HashMap<TxnTag, TxnRecord>,
    result: SimResult,
}

/// Replays `t` with request types from `sel` on the system `cfg`.
pub fn run_simulation(t: &AccessTrace, sel: &SelectionMap, cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.check(t).map_err(SimError::Config)?;
    if sel.len() != t.len() {
        return Err(SimError::SelectionGap { have: sel.len(), need: t.len() });
    }
    for (a, s) in t.accesses.iter().zip(&sel.entries) {
        if !cfg.capable_of(s.req) {
            return Err(SimError::Capability { seq_id: a.seq_id, req: s.req, config: cfg.name.clone() });
        }
    }
    let mut e = Engine::new(t, sel, cfg);
    e.run()?;
    Ok(e.finish())
}

impl<'a> Engine<'a> {
    fn new(t: &'a AccessTrace, sel: &'a SelectionMap, cfg: &'a SimConfig) -> Self {
        let wpb = t.words_per_block();
        let env = ProtocolEnv { words_per_block: wpb, max_forward_retries: cfg.max_forward_retries, ..Default::default() };
        let l1 = t
            .core_table
            .iter()
            .enumerate()
            .map(|(c, d)| {
                let window = match d {
                    DeviceClass::Cpu => cfg.cpu_load_window,
                    DeviceClass::Gpu => cfg.gpu_load_window,
                };
                L1State::new(c as CoreId, cfg.flavors[c], wpb, cfg.write_buffer_entries, window)
            })
            .collect();
        let mut cores: Vec<CoreRun> = (0..t.n_cores())
            .map(|_| CoreRun {
                program: Vec::new(),
                pos: 0,
                clock: 0,
                step_at: None,
                block: None,
                outstanding: HashMap::new(),
                done_at: None,
            })
            .collect();
        let mut releases: HashMap<WordAddr, Vec<usize>> = HashMap::new();
        let mut gates = HashMap::new();
        for (i, a) in t.accesses.iter().enumerate() {
            cores[a.core as usize].program.push(i);
            let w = t.words_of(a).next().unwrap_or(0);
            if a.sync.has_acquire() {
                gates.insert(i, releases.get(&w).cloned().unwrap_or_default());
            }
            if a.sync.has_release() {
                releases.entry(w).or_default().push(i);
            }
        }
        let tiles = (0..cfg.mesh_dim * cfg.mesh_dim).filter(|&x| x != cfg.llc_tile).collect();
        Engine {
            t,
            sel,
            cfg,
            env,
            l1,
            llc: LlcState::new(wpb),
            cores,
            queue: BinaryHeap::new(),
            in_flight: HashMap::new(),
            next_seq: 0,
            tiles,
            gates,
            released: vec![false; t.len()],
            open: HashMap::new(),
            result: SimResult {
                metrics: Metrics {
                    config: cfg.name.clone(),
                    core_cycles: vec![0; t.n_cores()],
                    accesses: t.len() as u64,
                    ..Default::default()
                },
                image: BTreeMap::new(),
                read_values: vec![Vec::new(); t.len()],
                txn_log: Vec::new(),
                msg_log: Vec::new(),
                violations: Vec::new(),
            },
        }
    }

    fn push(&mut self, time: u64, ev: Ev) {
        self.next_seq += 1;
        self.queue.push(Reverse((time, self.next_seq, ev)));
    }

    fn schedule_step(&mut self, c: CoreId, time: u64) {
        let time = time.max(self.cores[c as usize].clock);
        match self.cores[c as usize].step_at {
            Some(s) if s <= time => {}
            _ => {
                self.cores[c as usize].step_at = Some(time);
                self.push(time, Ev::Step(c));
            }
        }
    }

    fn tile(&self, n: Node) -> u32 {
        match n {
            Node::Llc => self.cfg.llc_tile,
            Node::Core(c) => self.tiles[c as usize % self.tiles.len()],
        }
    }

    fn latency(&self, a: Node, b: Node) -> u64 {
        let (ta, tb) = (self.tile(a), self.tile(b));
        let d = self.cfg.mesh_dim;
        let hops = (ta % d).abs_diff(tb % d) + (ta / d).abs_diff(tb / d);
        hops.max(1) as u64 * self.cfg.hop_cycles
    }

    /// Sends the outbox's messages at `time` and applies its events.
    fn dispatch(&mut self, out: Outbox, time: u64) -> Result<(), SimError> {
        for m in out.msgs {
            let m_ref = &mut self.result.metrics;
            m_ref.messages += 1;
            m_ref.bytes += m.bytes(self.cfg.header_bytes, self.cfg.word_bytes);
            *m_ref.messages_by_class.entry(m.kind.label().to_string()).or_insert(0) += 1;
            if matches!(m.kind, MsgKind::Req { .. } | MsgKind::Direct | MsgKind::Fwd) {
                *m_ref.requests_by_type.entry(m.req).or_insert(0) += 1;
            }
            if let Some(r) = self.open.get_mut(&m.txn) {
                r.hops += 1;
                if m.kind == MsgKind::Direct && r.hops == 1 {
                    r.direct = true;
                }
            }
            if self.cfg.record_messages {
                self.result.msg_log.push(LoggedMsg { cycle: time, msg: m.clone() });
            }
            let arrive = time + self.latency(m.src, m.dst);
            self.next_seq += 1;
            let id = self.next_seq;
            self.in_flight.insert(id, m);
            self.push(arrive, Ev::Deliver(id));
        }
        for ev in out.events {
            self.on_event(ev, time)?;
        }
        Ok(())
    }

    fn on_event(&mut self, ev: Event, time: u64) -> Result<(), SimError> {
        let m = &mut self.result.metrics;
        match ev {
            Event::Completed { core, txn, values } => {
                let tag = TxnTag { core, id: txn };
                if let Some(mut r) = self.open.remove(&tag) {
                    r.completed_at = time;
                    self.result.txn_log.push(r);
                }
                let cr = &mut self.cores[core as usize];
                cr.clock = cr.clock.max(time);
                if let Some(i) = cr.outstanding.remove(&txn) {
                    self.record_read(i, values);
                    if self.cores[core as usize].block == Some(Block::Txn(txn)) {
                        self.cores[core as usize].block = None;
                        self.after_sync(i, time);
                    }
                }
                self.schedule_step(core, time);
            }
            Event::Nacked { core, txn } => {
                m.nacks += 1;
                if let Some(r) = self.open.get_mut(&TxnTag { core, id: txn }) {
                    r.nacks += 1;
                }
            }
            Event::Retried { core, txn } => {
                if let Some(r) = self.open.get_mut(&TxnTag { core, id: txn }) {
                    r.retries += 1;
                }
            }
            Event::PredictionHit { .. } => m.pred_hits += 1,
            Event::PredictionMiss { .. } => m.pred_misses += 1,
            Event::WriteApplied { .. } => {}
            Event::Violation(v) => self.result.violations.push(v),
        }
        Ok(())
    }

    fn record_read(&mut self, i: usize, values: Vec<Value>) {
        let a = &self.t.accesses[i];
        if a.kind == AccessKind::Load && values != a.values {
            self.result.metrics.stale_loads += 1;
        }
        if a.kind != AccessKind::Store {
            self.result.read_values[i] = values;
        }
    }

    /// Acquire and release effects once a sync access has completed.
    fn after_sync(&mut self, i: usize, time: u64) {
        let a = &self.t.accesses[i];
        if a.sync.has_acquire() {
            self.l1[a.core as usize].acquire_invalidate();
        }
        if a.sync.has_release() {
            self.released[i] = true;
            // Wake everyone: some acquire may be gated on this release.
            for c in 0..self.cores.len() {
                if self.cores[c].done_at.is_none() {
                    self.schedule_step(c as CoreId, time);
                }
            }
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        for c in 0..self.cores.len() {
            self.schedule_step(c as CoreId, 0);
        }
        let mut now = 0;
        while let Some(Reverse((time, _, ev))) = self.queue.pop() {
            now = time;
            match ev {
                Ev::Step(c) => {
                    if self.cores[c as usize].step_at != Some(time) {
                        continue;
                    }
                    self.cores[c as usize].step_at = None;
                    self.step(c, time)?;
                }
                Ev::Deliver(id) => {
                    let m = self.in_flight.remove(&id).expect("message in flight");
                    self.deliver(m, time)?;
                }
            }
        }
        let stuck: Vec<String> = self
            .cores
            .iter()
            .enumerate()
            .filter(|(_, c)| c.done_at.is_none())
            .map(|(i, c)| format!("core {i} at access {}/{} ({:?})", c.pos, c.program.len(), c.block))
            .collect();
        if !stuck.is_empty() || !self.llc.is_idle() {
            return Err(SimError::Deadlock { cycle: now, detail: stuck.join("; ") });
        }
        Ok(())
    }

    fn deliver(&mut self, m: Msg, time: u64) -> Result<(), SimError> {
        let mut out = Outbox::default();
        match m.dst {
            Node::Llc => {
                if let MsgKind::Req { .. } = m.kind {
                    self.result.metrics.llc_lookups += 1;
                    if let Some(r) = self.open.get_mut(&m.txn) {
                        r.llc_lookups += 1;
                        *self.result.metrics.llc_lookups_by_pc.entry(r.pc).or_insert(0) += 1;
                    }
                }
                self.llc.handle(m, &self.env, &mut out);
                self.dispatch(out, time + self.cfg.llc_cycles)
            }
            Node::Core(c) => {
                let serves = matches!(m.kind, MsgKind::Fwd | MsgKind::Direct | MsgKind::Revoke | MsgKind::Inv);
                self.l1[c as usize].handle(m, &self.env, &mut out);
                let depart = if serves { time + self.cfg.l1_hit_cycles } else { time };
                self.dispatch(out, depart)?;
                if self.cores[c as usize].done_at.is_none() {
                    self.schedule_step(c, time);
                }
                Ok(())
            }
        }
    }

    /// Starts the oldest buffered write, recording a transaction for it.
    fn drain(&mut self, c: CoreId, time: u64) -> Result<bool, SimError> {
        let l1 = &mut self.l1[c as usize];
        let mut out = Outbox::default();
        let progressed = l1.drain(&self.env, &mut out);
        if let Some((id, e)) = &l1.inflight_write {
            let tag = TxnTag { core: c, id: *id };
            self.open.entry(tag).or_insert_with(|| TxnRecord {
                core: c,
                seq_id: e.tag,
                pc: e.pc,
                kind: TxnKind::Write,
                req: e.req,
                direct: false,
                hops: 0,
                llc_lookups: 0,
                nacks: 0,
                retries: 0,
                issued_at: time,
                completed_at: 0,
            });
        }
        self.dispatch(out, time)?;
        Ok(progressed)
    }

    /// Advances core `c` by at most one access.
    fn step(&mut self, c: CoreId, time: u64) -> Result<(), SimError> {
        let ci = c as usize;
        let time = time.max(self.cores[ci].clock);
        let l1 = &self.l1[ci];
        if let Some(Block::Flush(i)) = self.cores[ci].block {
            if l1.write_buffer_empty() {
                self.cores[ci].block = None;
                self.after_sync(i, time);
            } else {
                self.drain(c, time)?;
                return Ok(());
            }
        }
        if self.cores[ci].block.is_some() {
            return Ok(());
        }
        let cr = &self.cores[ci];
        if cr.pos == cr.program.len() {
            if self.l1[ci].is_idle() {
                if cr.done_at.is_none() {
                    self.cores[ci].done_at = Some(time);
                    self.result.metrics.core_cycles[ci] = time;
                }
            } else {
                self.drain(c, time)?;
            }
            return Ok(());
        }
        let i = cr.program[cr.pos];
        let a = &self.t.accesses[i];
        let blocking = a.sync.is_sync() || a.kind == AccessKind::Rmw;
        if blocking {
            let l1 = &self.l1[ci];
            if !l1.txns.is_empty() || !l1.write_buffer_empty() {
                self.drain(c, time)?;
                return Ok(());
            }
            if a.sync.has_acquire() && !self.gates[&i].iter().all(|&r| self.released[r]) {
                return Ok(());
            }
        }
        let s = self.sel.entries[i];
        let block = self.t.block_of(a);
        let op = CoreOp {
            kind: a.kind,
            block,
            mask: a.word_mask,
            values: if a.kind == AccessKind::Load { Vec::new() } else { a.values.clone() },
            req: s.req,
            req_mask: s.mask.union(a.word_mask),
            pc: a.pc,
            tag: a.seq_id,
        };
        let mut out = Outbox::default();
        let issued =
            self.l1[ci].issue(&op, &self.env, &mut out).map_err(|source| SimError::Coherence { seq_id: a.seq_id, source })?;
        let next = time + self.cfg.l1_hit_cycles;
        match issued {
            Issue::Hit(values) => {
                self.result.metrics.l1_hits += 1;
                self.record_read(i, values);
                self.cores[ci].pos += 1;
                self.cores[ci].clock = next;
                if a.sync.has_release() && a.kind == AccessKind::Store {
                    self.cores[ci].block = Some(Block::Flush(i));
                } else if a.sync.is_sync() {
                    self.after_sync(i, time);
                }
            }
            Issue::Pending(id) => {
                self.open.insert(
                    TxnTag { core: c, id },
                    TxnRecord {
                        core: c,
                        seq_id: a.seq_id,
                        pc: a.pc,
                        kind: if a.kind == AccessKind::Load { TxnKind::Load } else { TxnKind::Rmw },
                        req: s.req,
                        direct: false,
                        hops: 0,
                        llc_lookups: 0,
                        nacks: 0,
                        retries: 0,
                        issued_at: time,
                        completed_at: 0,
                    },
                );
                let cr = &mut self.cores[ci];
                cr.outstanding.insert(id, i);
                cr.pos += 1;
                cr.clock = next;
                if blocking {
                    cr.block = Some(Block::Txn(id));
                }
            }
            Issue::Stall => {
                self.dispatch(out, time)?;
                if self.l1[ci].wb.len() >= self.cfg.write_buffer_entries || a.kind == AccessKind::Store {
                    self.drain(c, time)?;
                }
                return Ok(());
            }
        }
        self.dispatch(out, time)?;
        if self.l1[ci].wb.len() >= self.cfg.write_buffer_entries {
            self.drain(c, next)?;
        }
        self.schedule_step(c, next);
        Ok(())
    }

    fn finish(mut self) -> SimResult {
        let wpb = self.t.words_per_block();
        let mut image = BTreeMap::new();
        for (&b, line) in &self.llc.lines {
            for (w, word) in line.words.iter().enumerate() {
                image.insert(word_addr(b, w as u32, wpb), word.value);
            }
        }
        for l1 in &self.l1 {
            for (&b, line) in &l1.lines {
                for (w, s) in line.iter().enumerate() {
                    if let WordState::Owned(v) = s {
                        image.insert(word_addr(b, w as u32, wpb), *v);
                    }
                }
            }
        }
        image.retain(|_, v| *v != 0);
        self.result.image = image;
        let m = &mut self.result.metrics;
        m.cycles = m.core_cycles.iter().copied().max().unwrap_or(0);
        m.hops = self.result.txn_log.iter().map(|r| r.hops as u64).sum();
        self.result.txn_log.sort_by_key(|r| (r.issued_at, r.core, r.seq_id));
        self.result
    }
}

/// Message log, one line per message.
pub fn format_msg_log(log: &[LoggedMsg]) -> String {
    let mut s = String::from("# cycle class type src dst block mask\n");
    for m in log {
        let _ = writeln!(s, "{}", m.line());
    }
    s
}
