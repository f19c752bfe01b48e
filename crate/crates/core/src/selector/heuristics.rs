//! Benefit heuristics and the per-kind request type chains.

use super::{RequestType, SelectCtx};
use crate::trace::AccessKind;
use crate::{CoreId, Score};

/// Weight of an access in the ownership score.
///
/// Loads and acquire-like RMWs stall the issuing core, so they weigh more on
/// latency-sensitive devices. When the hardware cannot forward write-through
/// data, loads are weighted like stores.
pub fn criticality<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> S {
    let a = &ctx.trace.accesses[x];
    let p = ctx.params;
    let blocking = match a.kind {
        AccessKind::Load => !ctx.profile.equalizes_criticality(),
        AccessKind::Rmw => !a.sync.has_release(),
        AccessKind::Store => false,
    };
    if !blocking {
        p.criticality_default
    } else if ctx.profile.latency_sensitive.get(a.device) {
        p.criticality_cpu_load
    } else {
        p.criticality_gpu_load
    }
}

/// Outcome of the ownership scoring walk, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct OwnershipTrace<S> {
    pub score: S,
    /// Number of conflicting accesses that contributed to the score.
    pub scored: u32,
}

impl<S: Score> SelectCtx<'_, S> {
    /// Walks the chain of conflicting accesses after `x` and weighs reuse by
    /// `x`'s core against accesses from other cores.
    pub fn ownership_score(&self, x: usize) -> OwnershipTrace<S> {
        let p = self.params;
        let nav = &self.nav;
        let mut phase = p.ownership_phase_window as i64;
        let mut score = S::zero();
        let mut scored = 0;
        let mut prev_list: Vec<CoreId> = vec![nav.core(x)];
        let mut yprev = x;
        let mut y = nav.next_conflict(x);
        while let Some(yi) = y {
            if !self.same_core(yprev, yi) || self.sync_sep(yprev, yi) {
                phase -= 1;
                if phase < 0 {
                    break;
                }
                let local = self.same_core(x, yi);
                if local && !self.reuse_possible(x, yi) {
                    break;
                }
                let crit = criticality(self, yi);
                let mult = if prev_list.contains(&nav.core(yi)) { p.same_core_weight_mult } else { p.diff_core_weight_mult };
                let val = mult * crit;
                scored += 1;
                if local {
                    score = score + val;
                } else {
                    score = score - val;
                    prev_list.push(nav.core(yi));
                }
            }
            yprev = yi;
            y = nav.next_conflict(yi);
        }
        OwnershipTrace { score, scored }
    }
}

pub fn ownership_beneficial<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> bool {
    ctx.ownership_score(x).score > S::zero()
}

/// Whether a Shared copy of the block would be re-read before another core
/// writes it. GPU caches do not track sharers, so GPU loads never qualify.
pub fn shared_state_beneficial<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> bool {
    let t = ctx.trace;
    let ax = &t.accesses[x];
    assert_eq!(ax.kind, AccessKind::Load, "shared-state check on a non-load");
    if ax.device == crate::trace::DeviceClass::Gpu {
        return false;
    }
    let mut yprev = x;
    let mut y = ctx.nav.next_block_conflict(x);
    while let Some(yi) = y {
        if !ctx.same_core(yi, yprev) || ctx.sync_sep(yi, yprev) {
            let ay = &t.accesses[yi];
            let local = ctx.same_core(x, yi);
            if local && ay.kind == AccessKind::Load {
                return true;
            }
            if !local && ay.kind.writes() {
                return false;
            }
            yprev = yi;
        }
        y = ctx.nav.next_block_conflict(yi);
    }
    false
}

/// Whether the last writer or reader of `x`'s data has been the same remote
/// core for recent accesses of the same kind by `x`'s core.
pub fn owner_pred_beneficial<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> bool {
    if !ctx.profile.supports_owner_prediction {
        return false;
    }
    let nav = &ctx.nav;
    let me = nav.core(x);
    let target = nav.prev_conf(x).map(|p| nav.core(p)).filter(|&c| c != me);
    let mut phase = ctx.params.ownerpred_phase_window as i64;
    let mut score = 0i64;
    let mut y = nav.prev_same_kind(x);
    while let Some(yi) = y {
        phase -= 1;
        if phase < 0 {
            break;
        }
        let yc = nav.prev_conf(yi).map(|p| nav.core(p));
        score += if target.is_some() && yc == target { 1 } else { -1 };
        y = nav.prev_same_kind(yi);
    }
    score > 0
}

pub fn select_load<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> RequestType {
    if ownership_beneficial(ctx, x) {
        RequestType::ReqOData
    } else if shared_state_beneficial(ctx, x) {
        RequestType::ReqS
    } else if owner_pred_beneficial(ctx, x) {
        RequestType::ReqVo
    } else {
        RequestType::ReqV
    }
}

pub fn select_store<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> RequestType {
    if ownership_beneficial(ctx, x) {
        RequestType::ReqO
    } else if owner_pred_beneficial(ctx, x) {
        RequestType::ReqWTo
    } else {
        RequestType::ReqWTfwd
    }
}

pub fn select_rmw<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> RequestType {
    if ownership_beneficial(ctx, x) {
        RequestType::ReqOData
    } else if owner_pred_beneficial(ctx, x) {
        RequestType::ReqWToData
    } else {
        RequestType::ReqWTfwdData
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::{HardwareProfile, ScoringParams};
    use crate::trace::{AccessTrace, DeviceClass, MemoryAccess, SyncKind};
    use crate::WordMask;
    use num_rational::Rational64;

    fn acc(core: u16, dev: DeviceClass, kind: AccessKind, word: u64, sync: SyncKind) -> MemoryAccess {
        MemoryAccess {
            seq_id: 0,
            core,
            device: dev,
            kind,
            address: word * 4,
            word_mask: WordMask::single((word % 16) as u32),
            pc: 1,
            sync,
            values: vec![0],
        }
    }

    fn build(v: Vec<MemoryAccess>) -> AccessTrace {
        let mut t = AccessTrace::new(64, 4, vec![DeviceClass::Cpu, DeviceClass::Gpu, DeviceClass::Cpu]);
        for a in v {
            t.push(a);
        }
        t
    }

    use AccessKind::*;
    use DeviceClass::*;

    #[test]
    fn criticality_weights() {
        let t = build(vec![
            acc(0, Cpu, Load, 1, SyncKind::None),
            acc(1, Gpu, Load, 2, SyncKind::None),
            acc(0, Cpu, Store, 3, SyncKind::None),
            acc(1, Gpu, Rmw, 4, SyncKind::Release),
            acc(0, Cpu, Rmw, 5, SyncKind::Acquire),
        ]);
        let profile = HardwareProfile::default();
        let params = ScoringParams::<f64>::default();
        let ctx = SelectCtx::new(&t, &profile, &params);
        let w: Vec<f64> = (0..5).map(|x| criticality(&ctx, x)).collect();
        assert_eq!(w, vec![6.0, 2.0, 1.0, 1.0, 6.0]);
        let no_fwd = HardwareProfile::with_features(false, true);
        let ctx = SelectCtx::new(&t, &no_fwd, &params);
        assert_eq!(criticality(&ctx, 0), criticality(&ctx, 2));
    }

    #[test]
    fn no_conflicts_means_no_ownership() {
        let t = build(vec![acc(0, Cpu, Store, 1, SyncKind::None)]);
        let profile = HardwareProfile::default();
        let params = ScoringParams::<f64>::default();
        let ctx = SelectCtx::new(&t, &profile, &params);
        assert_eq!(ctx.ownership_score(0), OwnershipTrace { score: 0.0, scored: 0 });
        assert!(!ownership_beneficial(&ctx, 0));
    }

    /// Hand-scored walk: X = core 0 store; then core 1 load (newcomer,
    /// -0.5*2), core 0 load after an acquire (+2*6), core 2 store (newcomer,
    /// -0.5*1). Score 10.5, three scored steps.
    #[test]
    fn hand_scored_walk_in_exact_arithmetic() {
        let t = build(vec![
            acc(0, Cpu, Store, 1, SyncKind::None),
            acc(1, Gpu, Load, 1, SyncKind::None),
            acc(0, Cpu, Rmw, 100, SyncKind::Acquire),
            acc(0, Cpu, Load, 1, SyncKind::None),
            acc(2, Cpu, Store, 1, SyncKind::None),
        ]);
        let profile = HardwareProfile::default();
        let params = ScoringParams::<Rational64>::default();
        let ctx = SelectCtx::new(&t, &profile, &params);
        let r = ctx.ownership_score(0);
        assert_eq!(r.score, Rational64::new(21, 2));
        assert_eq!(r.scored, 3);
        let paramsf = ScoringParams::<f32>::default();
        let ctx = SelectCtx::new(&t, &profile, &paramsf);
        assert_eq!(ctx.ownership_score(0).score, 10.5);
    }

    #[test]
    fn same_core_without_sync_is_not_scored() {
        let t = build(vec![
            acc(0, Cpu, Store, 1, SyncKind::None),
            acc(0, Cpu, Load, 1, SyncKind::None),
            acc(0, Cpu, Load, 1, SyncKind::None),
        ]);
        let profile = HardwareProfile::default();
        let params = ScoringParams::<f64>::default();
        let ctx = SelectCtx::new(&t, &profile, &params);
        assert_eq!(ctx.ownership_score(0).scored, 0);
    }

    #[test]
    fn window_caps_scored_steps() {
        let mut v = vec![acc(0, Cpu, Store, 1, SyncKind::None)];
        for i in 0..20 {
            v.push(acc(1 + (i % 2) * 1, if i % 2 == 0 { Gpu } else { Cpu }, Load, 1, SyncKind::None));
        }
        let t = build(v);
        let profile = HardwareProfile::default();
        let params = ScoringParams::<f64>::default();
        let ctx = SelectCtx::new(&t, &profile, &params);
        assert_eq!(ctx.ownership_score(0).scored, 5);
    }

    #[test]
    fn shared_state_rules() {
        let profile = HardwareProfile::default();
        let params = ScoringParams::<f64>::default();
        // Re-read after an acquire with only a remote read in between.
        let t = build(vec![
            acc(0, Cpu, Load, 1, SyncKind::None),
            acc(2, Cpu, Load, 2, SyncKind::None),
            acc(0, Cpu, Rmw, 100, SyncKind::Acquire),
            acc(0, Cpu, Load, 3, SyncKind::None),
        ]);
        let ctx = SelectCtx::new(&t, &profile, &params);
        assert!(shared_state_beneficial(&ctx, 0));
        // A remote store to the block comes first.
        let t = build(vec![
            acc(0, Cpu, Load, 1, SyncKind::None),
            acc(2, Cpu, Store, 2, SyncKind::None),
            acc(0, Cpu, Rmw, 100, SyncKind::Acquire),
            acc(0, Cpu, Load, 3, SyncKind::None),
        ]);
        let ctx = SelectCtx::new(&t, &profile, &params);
        assert!(!shared_state_beneficial(&ctx, 0));
        // GPU loads never ask for Shared.
        let t = build(vec![acc(1, Gpu, Load, 1, SyncKind::None), acc(1, Gpu, Rmw, 100, SyncKind::Acquire), acc(1, Gpu, Load, 1, SyncKind::None)]);
        let ctx = SelectCtx::new(&t, &profile, &params);
        assert!(!shared_state_beneficial(&ctx, 0));
    }

    #[test]
    fn owner_prediction_needs_a_stable_remote_source() {
        let params = ScoringParams::<f64>::default();
        // Core 2 writes words 1..=5; core 0 then stores to each of them.
        let mut v: Vec<MemoryAccess> = (1..=5).map(|w| acc(2, Cpu, Store, w * 16, SyncKind::None)).collect();
        v.push(acc(2, Cpu, Rmw, 200, SyncKind::Release));
        v.push(acc(0, Cpu, Rmw, 200, SyncKind::Acquire));
        v.extend((1..=5).map(|w| acc(0, Cpu, Store, w * 16, SyncKind::None)));
        let t = build(v);
        let on = HardwareProfile::default();
        let ctx = SelectCtx::new(&t, &on, &params);
        let first = 7;
        assert!(!owner_pred_beneficial(&ctx, first), "first store has no history");
        assert!(owner_pred_beneficial(&ctx, first + 1));
        assert!(owner_pred_beneficial(&ctx, first + 4));
        let off = HardwareProfile::with_features(true, false);
        let ctx = SelectCtx::new(&t, &off, &params);
        assert!(!owner_pred_beneficial(&ctx, first + 4));
    }
}
