//! How many words of a block each request should cover.

use super::{RequestType, SelectCtx};
use crate::trace::AccessKind;
use crate::{Score, WordMask};

/// Words of `x`'s block the same core will load again before its next
/// synchronization while the data is still likely cached.
pub fn intra_synch_load_reuse<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> WordMask {
    reuse_mask(ctx, x, |ctx, y| ctx.trace.accesses[y].kind == AccessKind::Load && !ctx.sync_sep(x, y))
}

/// Words of `x`'s block the same core will store to after a synchronization
/// while the data is still likely cached.
pub fn inter_synch_store_reuse<S: Score>(ctx: &SelectCtx<'_, S>, x: usize) -> WordMask {
    reuse_mask(ctx, x, |ctx, y| ctx.trace.accesses[y].kind.writes() && ctx.sync_sep(x, y))
}

fn reuse_mask<S: Score>(ctx: &SelectCtx<'_, S>, x: usize, wanted: impl Fn(&SelectCtx<'_, S>, usize) -> bool) -> WordMask {
    let own = ctx.trace.accesses[x].word_mask;
    let mut mask = own;
    let full = WordMask::full(ctx.trace.words_per_block());
    let limit = ctx.horizon_index(x);
    let mut y = ctx.nav.next_block_conflict(x);
    while let Some(yi) = y {
        if yi > limit || mask == full {
            break;
        }
        if ctx.same_core(x, yi) && ctx.reuse_possible(x, yi) && wanted(ctx, yi) {
            mask = mask.union(ctx.trace.accesses[yi].word_mask);
        }
        y = ctx.nav.next_block_conflict(yi);
    }
    mask
}

/// Picks the word mask for an already chosen type. Ownership requests that
/// cover more than the requested words must fetch data.
pub fn select_granularity<S: Score>(ctx: &SelectCtx<'_, S>, x: usize, req: RequestType) -> (RequestType, WordMask) {
    use RequestType::*;
    let a = &ctx.trace.accesses[x];
    match req {
        ReqV | ReqVo => (req, intra_synch_load_reuse(ctx, x)),
        ReqS => (req, WordMask::full(ctx.trace.words_per_block())),
        ReqO | ReqOData => {
            let mask = inter_synch_store_reuse(ctx, x);
            let req = if mask != a.word_mask { ReqOData } else { req };
            (req, mask)
        }
        _ => (req, a.word_mask),
    }
}
