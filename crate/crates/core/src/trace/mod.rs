//! Sequentially consistent memory-access traces.

mod generate;
mod io;

pub use generate::{generate, pcs, Benchmark, MicrobenchParams, ParamError, ADDRESS_SPACE_WORDS};
pub use io::{parse_trace, read_trace, write_trace, TraceError};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::{CoreId, Pc, Value, WordMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceClass {
    Cpu,
    Gpu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessKind {
    Load,
    Store,
    Rmw,
}

impl AccessKind {
    pub fn reads(self) -> bool {
        matches!(self, AccessKind::Load | AccessKind::Rmw)
    }

    pub fn writes(self) -> bool {
        matches!(self, AccessKind::Store | AccessKind::Rmw)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SyncKind {
    #[default]
    None,
    Acquire,
    Release,
    AcqRel,
}

impl SyncKind {
    pub fn is_sync(self) -> bool {
        self != SyncKind::None
    }

    pub fn has_acquire(self) -> bool {
        matches!(self, SyncKind::Acquire | SyncKind::AcqRel)
    }

    pub fn has_release(self) -> bool {
        matches!(self, SyncKind::Release | SyncKind::AcqRel)
    }
}

macro_rules! token_enum {
    ($ty:ident { $($var:ident => $tok:literal),* $(,)? }) => {
        impl $ty {
            pub fn token(self) -> &'static str {
                match self { $($ty::$var => $tok),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($tok => Ok($ty::$var),)*
                    _ => Err(s.to_string()),
                }
            }
        }
    };
}

token_enum!(DeviceClass { Cpu => "CPU", Gpu => "GPU" });
token_enum!(AccessKind { Load => "Ld", Store => "St", Rmw => "RMW" });
token_enum!(SyncKind { None => "none", Acquire => "acq", Release => "rel", AcqRel => "acqrel" });

/// One dynamic memory access.
///
/// `address` is the byte address of the containing block's first word plus
/// the offset of the lowest touched word; `word_mask` names the touched words
/// relative to the block. `values` holds one entry per touched word in
/// ascending word order: the stored data for stores, the addend for RMWs
/// (fetch-add) and the sequentially consistent result for loads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryAccess {
    pub seq_id: u64,
    pub core: CoreId,
    pub device: DeviceClass,
    pub kind: AccessKind,
    pub address: u64,
    pub word_mask: WordMask,
    pub pc: Pc,
    pub sync: SyncKind,
    pub values: Vec<Value>,
}

/// A global trace in sequentially consistent order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessTrace {
    pub accesses: Vec<MemoryAccess>,
    pub block_size_bytes: u32,
    pub word_size_bytes: u32,
    /// Device class of each core, indexed by core id.
    pub core_table: Vec<DeviceClass>,
}

/// Global word address: block index times words per block plus offset.
pub type WordAddr = u64;

impl AccessTrace {
    pub fn new(block_size_bytes: u32, word_size_bytes: u32, core_table: Vec<DeviceClass>) -> Self {
        AccessTrace { accesses: Vec::new(), block_size_bytes, word_size_bytes, core_table }
    }

    pub fn words_per_block(&self) -> u32 {
        self.block_size_bytes / self.word_size_bytes
    }

    pub fn n_cores(&self) -> usize {
        self.core_table.len()
    }

    pub fn block_of(&self, a: &MemoryAccess) -> u64 {
        a.address / self.block_size_bytes as u64
    }

    /// Word addresses an access touches, ascending.
    pub fn words_of<'a>(&self, a: &'a MemoryAccess) -> impl Iterator<Item = WordAddr> + 'a {
        let base = self.block_of(a) * self.words_per_block() as u64;
        a.word_mask.iter().map(move |w| base + w as u64)
    }

    pub fn len(&self) -> usize {
        self.accesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accesses.is_empty()
    }

    /// Appends an access, assigning the next sequence id.
    pub fn push(&mut self, mut a: MemoryAccess) {
        a.seq_id = self.accesses.len() as u64;
        self.accesses.push(a);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub seq_ids: Vec<u64>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    fn add(&mut self, seq_ids: Vec<u64>, message: impl Into<String>) {
        self.violations.push(Violation { seq_ids, message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return writeln!(f, "PASS");
        }
        writeln!(f, "FAIL ({} violations)", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  seq {:?}: {}", v.seq_ids, v.message)?;
        }
        Ok(())
    }
}

/// Checks structural well-formedness, data-race freedom and that load values
/// match a sequentially consistent replay.
///
/// Races are conflicting accesses from different cores with no
/// release/acquire chain between them. RMW pairs never race.
pub fn validate_trace(t: &AccessTrace) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let wpb = t.words_per_block();
    if t.word_size_bytes == 0 || t.block_size_bytes % t.word_size_bytes.max(1) != 0 {
        rep.add(vec![], "block size is not a multiple of word size");
        return rep;
    }
    if wpb == 0 || wpb > 64 {
        rep.add(vec![], format!("{wpb} words per block is outside 1..=64"));
        return rep;
    }
    for (i, a) in t.accesses.iter().enumerate() {
        let id = vec![a.seq_id];
        if a.seq_id != i as u64 {
            rep.add(id.clone(), format!("sequence id out of order at position {i}"));
        }
        match t.core_table.get(a.core as usize) {
            None => rep.add(id.clone(), format!("core {} not in core table", a.core)),
            Some(&d) if d != a.device => rep.add(id.clone(), format!("core {} is {d}, access says {}", a.core, a.device)),
            _ => {}
        }
        if a.word_mask.is_empty() {
            rep.add(id.clone(), "empty word mask");
        }
        if a.word_mask.bits() & !WordMask::full(wpb).bits() != 0 {
            rep.add(id.clone(), "word mask exceeds block");
        }
        if a.address % t.word_size_bytes as u64 != 0 {
            rep.add(id.clone(), "address not word aligned");
        } else {
            let off = ((a.address % t.block_size_bytes as u64) / t.word_size_bytes as u64) as u32;
            if a.word_mask.first() != Some(off) {
                rep.add(id.clone(), "address does not name the lowest masked word");
            }
        }
        if a.values.len() != a.word_mask.count() as usize {
            rep.add(id.clone(), format!("{} values for {} words", a.values.len(), a.word_mask.count()));
        }
        if a.sync.is_sync() && a.kind != AccessKind::Rmw {
            rep.add(id.clone(), "synchronization on a non-RMW access");
        }
    }
    if !rep.is_pass() {
        return rep;
    }
    check_races(t, &mut rep);
    check_sc_values(t, &mut rep);
    rep
}

/// Vector-clock happens-before race detection.
fn check_races(t: &AccessTrace, rep: &mut ValidationReport) {
    let n = t.n_cores();
    let mut clocks: Vec<Vec<u64>> = (0..n).map(|c| {
        let mut v = vec![0; n];
        v[c] = 1;
        v
    }).collect();
    // Release clocks published on each sync word.
    let mut released: HashMap<WordAddr, Vec<u64>> = HashMap::new();
    // Last write and reads since it, per word: (core, clock value at core, seq).
    struct WordHist {
        write: Option<(usize, u64, u64, bool)>,
        reads: Vec<(usize, u64, u64, bool)>,
    }
    let mut hist: HashMap<WordAddr, WordHist> = HashMap::new();
    let mut reported: HashSet<(u64, u64)> = HashSet::new();
    for a in &t.accesses {
        let c = a.core as usize;
        let words: Vec<WordAddr> = t.words_of(a).collect();
        if a.sync.has_acquire() {
            for w in &words {
                if let Some(r) = released.get(w) {
                    for k in 0..n {
                        clocks[c][k] = clocks[c][k].max(r[k]);
                    }
                }
            }
        }
        let rmw = a.kind == AccessKind::Rmw;
        for w in &words {
            let h = hist.entry(*w).or_insert(WordHist { write: None, reads: Vec::new() });
            let ordered = |(oc, ot, _, _): (usize, u64, u64, bool)| oc == c || clocks[c][oc] >= ot;
            let both_rmw = |o_rmw: bool| rmw && o_rmw;
            if let Some(wr) = h.write {
                if !ordered(wr) && !both_rmw(wr.3) && reported.insert((wr.2, a.seq_id)) {
                    rep.add(vec![wr.2, a.seq_id], format!("data race on word {w:#x}"));
                }
            }
            if a.kind.writes() {
                for &rd in &h.reads {
                    if !ordered(rd) && !both_rmw(rd.3) && reported.insert((rd.2, a.seq_id)) {
                        rep.add(vec![rd.2, a.seq_id], format!("data race on word {w:#x}"));
                    }
                }
                h.reads.clear();
                h.write = Some((c, clocks[c][c], a.seq_id, rmw));
            } else {
                h.reads.retain(|r| r.0 != c);
                h.reads.push((c, clocks[c][c], a.seq_id, rmw));
            }
        }
        if a.sync.has_release() {
            for w in &words {
                let e = released.entry(*w).or_insert_with(|| vec![0; n]);
                for k in 0..n {
                    e[k] = e[k].max(clocks[c][k]);
                }
            }
        }
        if a.sync.is_sync() {
            clocks[c][c] += 1;
        }
    }
}

fn check_sc_values(t: &AccessTrace, rep: &mut ValidationReport) {
    let expected = sc_load_values(t);
    for (a, exp) in t.accesses.iter().zip(&expected) {
        if a.kind == AccessKind::Load && a.values != *exp {
            rep.add(vec![a.seq_id], format!("load values {:?} differ from sequential replay {:?}", a.values, exp));
        }
    }
}

/// Replays the trace in order against a flat memory (initially zero).
///
/// Returns, per access, the values read (loads and RMWs, pre-update) or an
/// empty vector for stores, plus the final memory image.
pub fn sc_execute(t: &AccessTrace) -> (Vec<Vec<Value>>, HashMap<WordAddr, Value>) {
    let mut mem: HashMap<WordAddr, Value> = HashMap::new();
    let mut out = Vec::with_capacity(t.len());
    for a in &t.accesses {
        let mut read = Vec::new();
        for (w, v) in t.words_of(a).zip(&a.values) {
            let cur = mem.get(&w).copied().unwrap_or(0);
            match a.kind {
                AccessKind::Load => read.push(cur),
                AccessKind::Store => {
                    mem.insert(w, *v);
                }
                AccessKind::Rmw => {
                    read.push(cur);
                    mem.insert(w, cur.wrapping_add(*v));
                }
            }
        }
        out.push(read);
    }
    (out, mem)
}

fn sc_load_values(t: &AccessTrace) -> Vec<Vec<Value>> {
    sc_execute(t).0
}

/// Fills load values with the sequentially consistent result.
pub fn annotate_load_values(t: &mut AccessTrace) {
    let reads = sc_load_values(t);
    for (a, r) in t.accesses.iter_mut().zip(reads) {
        if a.kind == AccessKind::Load {
            a.values = r;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn acc(core: CoreId, device: DeviceClass, kind: AccessKind, addr: u64, sync: SyncKind, v: Value) -> MemoryAccess {
        MemoryAccess {
            seq_id: 0,
            core,
            device,
            kind,
            address: addr,
            word_mask: WordMask::single(((addr % 64) / 4) as u32),
            pc: 1,
            sync,
            values: vec![v],
        }
    }

    fn two_core() -> AccessTrace {
        AccessTrace::new(64, 4, vec![DeviceClass::Cpu, DeviceClass::Gpu])
    }

    #[test]
    fn synchronized_handoff_passes() {
        let mut t = two_core();
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Store, 0x100, SyncKind::None, 7));
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Rmw, 0x0, SyncKind::Release, 1));
        t.push(acc(1, DeviceClass::Gpu, AccessKind::Rmw, 0x0, SyncKind::Acquire, 0));
        t.push(acc(1, DeviceClass::Gpu, AccessKind::Load, 0x100, SyncKind::None, 7));
        let rep = validate_trace(&t);
        assert!(rep.is_pass(), "{rep}");
    }

    #[test]
    fn unsynchronized_conflict_is_a_race() {
        let mut t = two_core();
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Store, 0x100, SyncKind::None, 7));
        t.push(acc(1, DeviceClass::Gpu, AccessKind::Load, 0x100, SyncKind::None, 7));
        let rep = validate_trace(&t);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].seq_ids, vec![0, 1]);
    }

    #[test]
    fn concurrent_rmws_do_not_race() {
        let mut t = two_core();
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Rmw, 0x100, SyncKind::None, 1));
        t.push(acc(1, DeviceClass::Gpu, AccessKind::Rmw, 0x100, SyncKind::None, 1));
        assert!(validate_trace(&t).is_pass());
    }

    #[test]
    fn wrong_load_value_is_reported() {
        let mut t = two_core();
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Store, 0x100, SyncKind::None, 7));
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Load, 0x100, SyncKind::None, 3));
        let rep = validate_trace(&t);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].seq_ids, vec![1]);
    }

    #[test]
    fn sync_on_plain_load_is_rejected() {
        let mut t = two_core();
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Load, 0x100, SyncKind::Acquire, 0));
        assert!(!validate_trace(&t).is_pass());
    }

    #[test]
    fn rmw_is_fetch_add() {
        let mut t = two_core();
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Rmw, 0x40, SyncKind::None, 2));
        t.push(acc(0, DeviceClass::Cpu, AccessKind::Rmw, 0x40, SyncKind::None, 3));
        let (reads, mem) = sc_execute(&t);
        assert_eq!(reads, vec![vec![0], vec![2]]);
        assert_eq!(mem[&16], 5);
    }
}
