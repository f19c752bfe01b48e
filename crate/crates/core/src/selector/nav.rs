//! Precomputed trace navigation for the selection heuristics.

use std::collections::HashMap;

use super::{HardwareProfile, ScoringParams};
use crate::trace::{AccessKind, AccessTrace, WordAddr};
use crate::{CoreId, Score};

const NONE: u32 = u32::MAX;

fn opt(i: u32) -> Option<usize> {
    (i != NONE).then_some(i as usize)
}

/// Constant-time answers to the trace queries the heuristics ask.
///
/// Accesses are addressed by their position in the trace.
#[derive(Clone, Debug)]
pub struct NavIndex {
    next_conflict: Vec<u32>,
    prev_conf: Vec<u32>,
    next_block_conflict: Vec<u32>,
    prev_same_kind: Vec<u32>,
    core: Vec<CoreId>,
    core_pos: Vec<u32>,
    /// Per core: number of acquire-semantics syncs among its first k accesses.
    acq_prefix: Vec<Vec<u32>>,
    rel_prefix: Vec<Vec<u32>>,
    sync_prefix: Vec<Vec<u32>>,
    /// Per core: trace positions of its accesses.
    core_seq: Vec<Vec<u32>>,
}

impl NavIndex {
    pub fn build(t: &AccessTrace) -> Self {
        let n = t.len();
        let cores = t.n_cores();
        let mut ix = NavIndex {
            next_conflict: vec![NONE; n],
            prev_conf: vec![NONE; n],
            next_block_conflict: vec![NONE; n],
            prev_same_kind: vec![NONE; n],
            core: Vec::with_capacity(n),
            core_pos: Vec::with_capacity(n),
            acq_prefix: vec![vec![0]; cores],
            rel_prefix: vec![vec![0]; cores],
            sync_prefix: vec![vec![0]; cores],
            core_seq: vec![Vec::new(); cores],
        };
        let mut last_word: HashMap<WordAddr, u32> = HashMap::new();
        let mut last_block: HashMap<u64, u32> = HashMap::new();
        let mut last_kind: HashMap<(CoreId, AccessKind), u32> = HashMap::new();
        for (i, a) in t.accesses.iter().enumerate() {
            let i32_ = i as u32;
            let c = a.core as usize;
            ix.core.push(a.core);
            ix.core_pos.push(ix.core_seq[c].len() as u32);
            ix.core_seq[c].push(i32_);
            let bump = |v: &mut Vec<u32>, yes: bool| {
                let last = *v.last().unwrap();
                v.push(last + yes as u32);
            };
            bump(&mut ix.acq_prefix[c], a.sync.has_acquire());
            bump(&mut ix.rel_prefix[c], a.sync.has_release());
            bump(&mut ix.sync_prefix[c], a.sync.is_sync());

            let mut prev = NONE;
            for w in t.words_of(a) {
                if let Some(&p) = last_word.get(&w) {
                    if prev == NONE || p > prev {
                        prev = p;
                    }
                    let nc = &mut ix.next_conflict[p as usize];
                    if *nc == NONE {
                        *nc = i32_;
                    }
                }
                last_word.insert(w, i32_);
            }
            ix.prev_conf[i] = prev;
            let b = t.block_of(a);
            if let Some(&p) = last_block.get(&b) {
                ix.next_block_conflict[p as usize] = i32_;
            }
            last_block.insert(b, i32_);
            if let Some(p) = last_kind.insert((a.core, a.kind), i32_) {
                ix.prev_same_kind[i] = p;
            }
        }
        ix
    }

    pub fn len(&self) -> usize {
        self.core.len()
    }

    pub fn is_empty(&self) -> bool {
        self.core.is_empty()
    }

    /// Next access (any core) touching a word of `x`.
    pub fn next_conflict(&self, x: usize) -> Option<usize> {
        opt(self.next_conflict[x])
    }

    /// Most recent earlier access touching a word of `x`.
    pub fn prev_conf(&self, x: usize) -> Option<usize> {
        opt(self.prev_conf[x])
    }

    /// Next access (any core) to the block of `x`.
    pub fn next_block_conflict(&self, x: usize) -> Option<usize> {
        opt(self.next_block_conflict[x])
    }

    /// The access immediately before `x` in trace order.
    pub fn prev_acc(&self, x: usize) -> Option<usize> {
        x.checked_sub(1)
    }

    /// Previous access by the same core with the same kind.
    pub fn prev_same_kind(&self, x: usize) -> Option<usize> {
        opt(self.prev_same_kind[x])
    }

    pub fn core(&self, x: usize) -> CoreId {
        self.core[x]
    }

    pub fn core_pos(&self, x: usize) -> usize {
        self.core_pos[x] as usize
    }

    pub fn core_seq(&self, core: CoreId) -> &[u32] {
        &self.core_seq[core as usize]
    }

    /// Whether a synchronization of the same core strictly between `x` and
    /// `y` orders them for coherence purposes. The earlier access plays the
    /// role of the first argument regardless of argument order. Accesses of
    /// different cores are never sync-separated.
    pub fn sync_sep(&self, t: &AccessTrace, x: usize, y: usize) -> bool {
        if self.core[x] != self.core[y] || x == y {
            return false;
        }
        let (x, y) = if x < y { (x, y) } else { (y, x) };
        let c = self.core[x] as usize;
        let (lo, hi) = (self.core_pos[x] as usize + 1, self.core_pos[y] as usize);
        let between = |p: &Vec<u32>| p[hi] - p[lo];
        let (ax, ay) = (&t.accesses[x], &t.accesses[y]);
        if (ax.kind == AccessKind::Rmw || ay.kind == AccessKind::Rmw) && between(&self.sync_prefix[c]) > 0 {
            return true;
        }
        match ax.kind {
            AccessKind::Load => between(&self.acq_prefix[c]) > 0,
            AccessKind::Store => between(&self.rel_prefix[c]) > 0,
            AccessKind::Rmw => false,
        }
    }
}

/// Everything a heuristic needs: trace, profile, tunables and indexes.
pub struct SelectCtx<'a, S> {
    pub trace: &'a AccessTrace,
    pub profile: &'a HardwareProfile,
    pub params: &'a ScoringParams<S>,
    pub nav: NavIndex,
    /// Per access: the last core position at which reuse is still possible.
    horizon: Vec<u32>,
}

impl<'a, S: Score> SelectCtx<'a, S> {
    pub fn new(trace: &'a AccessTrace, profile: &'a HardwareProfile, params: &'a ScoringParams<S>) -> Self {
        let nav = NavIndex::build(trace);
        let horizon = reuse_horizons(trace, profile, params, &nav);
        SelectCtx { trace, profile, params, nav, horizon }
    }

    pub fn sync_sep(&self, x: usize, y: usize) -> bool {
        self.nav.sync_sep(self.trace, x, y)
    }

    pub fn same_core(&self, x: usize, y: usize) -> bool {
        self.nav.core(x) == self.nav.core(y)
    }

    /// Whether the unique bytes the core touches strictly between `x` and a
    /// later same-core access `y` fit in the reuse fraction of its cache.
    pub fn reuse_possible(&self, x: usize, y: usize) -> bool {
        self.same_core(x, y) && y > x && self.nav.core_pos(y) as u32 <= self.horizon[x]
    }

    /// Trace position after which no same-core access can reuse `x`.
    pub fn horizon_index(&self, x: usize) -> usize {
        let seq = self.nav.core_seq(self.nav.core(x));
        seq.get(self.horizon[x] as usize).map_or(self.trace.len(), |&i| i as usize)
    }
}

/// Two-pointer sweep per core: for position i, the largest j such that the
/// window of accesses strictly between i and j stays below the threshold.
fn reuse_horizons<S: Score>(t: &AccessTrace, profile: &HardwareProfile, params: &ScoringParams<S>, nav: &NavIndex) -> Vec<u32> {
    let mut horizon = vec![0u32; t.len()];
    let word = t.word_size_bytes as u64;
    for (c, dev) in t.core_table.iter().enumerate() {
        let seq = nav.core_seq(c as CoreId);
        let cap = S::from_u64(profile.cache_capacity_bytes.get(*dev)).expect("capacity fits scalar");
        let limit = params.reuse_capacity_fraction * cap;
        let fits = |unique_words: usize| S::from_u64(unique_words as u64 * word).expect("bytes fit scalar") < limit;
        let words = |k: usize| t.words_of(&t.accesses[seq[k] as usize]);
        let mut counts: HashMap<WordAddr, u32> = HashMap::new();
        // Window holds core positions [i + 1, r).
        let mut r = 1usize;
        for i in 0..seq.len() {
            if r < i + 1 {
                r = i + 1;
            }
            loop {
                if r >= seq.len() {
                    break;
                }
                let fresh = words(r).filter(|w| !counts.contains_key(w)).collect::<std::collections::HashSet<_>>().len();
                if !fits(counts.len() + fresh) {
                    break;
                }
                for w in words(r) {
                    *counts.entry(w).or_insert(0) += 1;
                }
                r += 1;
            }
            horizon[seq[i] as usize] = r.min(seq.len()) as u32;
            // Slide: drop position i + 1 from the window.
            if i + 1 < r {
                for w in words(i + 1) {
                    if let Some(n) = counts.get_mut(&w) {
                        *n -= 1;
                        if *n == 0 {
                            counts.remove(&w);
                        }
                    }
                }
            } else {
                r = i + 2;
            }
        }
    }
    horizon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{DeviceClass, MemoryAccess, SyncKind};
    use crate::WordMask;
    use proptest::prelude::*;

    fn access(core: CoreId, kind: AccessKind, word: u64, sync: SyncKind) -> MemoryAccess {
        MemoryAccess {
            seq_id: 0,
            core,
            device: DeviceClass::Cpu,
            kind,
            address: word * 4,
            word_mask: WordMask::single((word % 16) as u32),
            pc: 1,
            sync,
            values: vec![0],
        }
    }

    fn trace(acc: Vec<MemoryAccess>) -> AccessTrace {
        let mut t = AccessTrace::new(64, 4, vec![DeviceClass::Cpu; 2]);
        for a in acc {
            t.push(a);
        }
        t
    }

    #[test]
    fn conflicts_and_boundaries() {
        let t = trace(vec![
            access(0, AccessKind::Store, 100, SyncKind::None),
            access(1, AccessKind::Load, 101, SyncKind::None),
            access(1, AccessKind::Load, 100, SyncKind::None),
        ]);
        let nav = NavIndex::build(&t);
        assert_eq!(nav.next_conflict(0), Some(2));
        assert_eq!(nav.next_block_conflict(0), Some(1));
        assert_eq!(nav.prev_conf(2), Some(0));
        assert_eq!(nav.next_conflict(2), None);
        assert_eq!(nav.prev_acc(0), None);
    }

    #[test]
    fn sync_sep_clauses() {
        use AccessKind::*;
        let t = trace(vec![
            access(0, Load, 1, SyncKind::None),
            access(0, Rmw, 500, SyncKind::Acquire),
            access(0, Load, 2, SyncKind::None),
            access(0, Store, 3, SyncKind::None),
            access(0, Rmw, 501, SyncKind::Acquire),
            access(0, Load, 4, SyncKind::None),
            access(0, Rmw, 5, SyncKind::None),
            access(0, Rmw, 502, SyncKind::Release),
            access(0, Load, 6, SyncKind::None),
        ]);
        let nav = NavIndex::build(&t);
        assert!(nav.sync_sep(&t, 0, 2), "load, acquire, load");
        assert!(!nav.sync_sep(&t, 3, 5), "store, acquire only, load");
        assert!(nav.sync_sep(&t, 6, 8), "rmw, any sync, load");
        assert!(nav.sync_sep(&t, 3, 8), "store, release, load");
        assert!(!nav.sync_sep(&t, 2, 3), "nothing between");
        assert!(nav.sync_sep(&t, 2, 0), "argument order is normalized");
    }

    fn ctx_horizon(t: &AccessTrace, cap: u64) -> Vec<Vec<bool>> {
        let profile = HardwareProfile { cache_capacity_bytes: super::super::PerDevice::both(cap), ..Default::default() };
        let params = ScoringParams::<f64>::default();
        let ctx = SelectCtx::new(t, &profile, &params);
        (0..t.len()).map(|x| (0..t.len()).map(|y| ctx.reuse_possible(x, y)).collect()).collect()
    }

    /// Direct count of unique bytes strictly between x and y.
    fn brute(t: &AccessTrace, cap: u64, x: usize, y: usize) -> bool {
        let (a, b) = (&t.accesses[x], &t.accesses[y]);
        if a.core != b.core || y <= x {
            return false;
        }
        let uniq: std::collections::HashSet<u64> =
            t.accesses[x + 1..y].iter().filter(|m| m.core == a.core).flat_map(|m| t.words_of(m).collect::<Vec<_>>()).collect();
        ((uniq.len() as u64 * 4) as f64) < 0.75 * cap as f64
    }

    #[test]
    fn reuse_examples() {
        use AccessKind::*;
        // Capacity 16 bytes: the limit is 12 bytes, three unique words fail.
        let t = trace(vec![
            access(0, Load, 1, SyncKind::None),
            access(0, Load, 2, SyncKind::None),
            access(0, Load, 2, SyncKind::None),
            access(0, Load, 3, SyncKind::None),
            access(0, Load, 4, SyncKind::None),
            access(0, Load, 1, SyncKind::None),
        ]);
        let h = ctx_horizon(&t, 16);
        assert!(h[0][1], "adjacent accesses always reuse");
        assert!(h[0][3], "repeated word counts once");
        assert!(h[0][4], "two unique words between");
        assert!(!h[0][5], "three unique words reach the limit");
    }

    proptest! {
        #[test]
        fn horizon_matches_brute_force(ops in proptest::collection::vec((0u16..2, 0u64..12), 1..40), cap in 4u64..64) {
            let t = trace(ops.into_iter().map(|(c, w)| access(c, AccessKind::Load, w, SyncKind::None)).collect());
            let h = ctx_horizon(&t, cap);
            for x in 0..t.len() {
                for y in 0..t.len() {
                    prop_assert_eq!(h[x][y], brute(&t, cap, x, y), "x={} y={}", x, y);
                }
            }
        }
    }
}
