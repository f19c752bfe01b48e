//! Rewrites a selection to what a hardware profile can issue.

use super::{RequestType, SelectCtx, Selection, SelectionMap};
use crate::{Score, WordMask};

/// Lowers every entry of `sel` to the capabilities of `ctx.profile`.
///
/// Without forwarding, forwarded stores become plain write-throughs and
/// forwarded RMWs take ownership only when both the previous and the next
/// conflicting access also use ownership. A predicted store without
/// forwarding means a stable remote owner that cannot accept a forwarded
/// update, so it takes ownership instead. Without prediction, predicted types
/// fall back to their root. Devices without word-granularity state request
/// full blocks and ownership always carries data.
pub fn lower_to_profile<S: Score>(sel: &SelectionMap, ctx: &SelectCtx<'_, S>) -> Result<SelectionMap, String> {
    use RequestType::*;
    let profile = ctx.profile;
    let t = ctx.trace;
    if sel.len() != t.len() {
        return Err(format!("selection covers {} of {} accesses", sel.len(), t.len()));
    }
    if !profile.supports_wt_forwarding && !sel.equalized_criticality {
        return Err("selection for a profile without forwarding must weigh loads like stores".into());
    }
    let fwd = profile.supports_wt_forwarding;
    let pred = profile.supports_owner_prediction;
    let owned = |i: Option<usize>| i.is_some_and(|i| sel.entries[i].req.is_ownership());
    let rmw_without_forwarding = |x: usize| {
        if owned(ctx.nav.prev_conf(x)) && owned(ctx.nav.next_conflict(x)) {
            ReqOData
        } else {
            ReqWTData
        }
    };
    let full = WordMask::full(t.words_per_block());
    let mut out = sel.clone();
    for (x, e) in out.entries.iter_mut().enumerate() {
        let mut req = e.req;
        req = match req {
            ReqVo if !pred => ReqV,
            ReqWTo if !pred => if fwd { ReqWTfwd } else { ReqWT },
            ReqWTo if !fwd => ReqO,
            ReqWToData if !pred && fwd => ReqWTfwdData,
            ReqWToData if !fwd => rmw_without_forwarding(x),
            ReqWTfwd if !fwd => ReqWT,
            ReqWTfwdData if !fwd => rmw_without_forwarding(x),
            r => r,
        };
        let mut mask = e.mask;
        let device = t.accesses[x].device;
        if !profile.word_granularity_state.get(device) {
            mask = full;
            if req == ReqO {
                req = ReqOData;
            }
        }
        *e = Selection { req, mask };
    }
    Ok(out)
}
