//! Trace-driven request type selection.
//!
//! For every dynamic access the selector asks three questions by walking the
//! trace forwards and backwards: would the issuing core profit from owning the
//! data, from a Shared copy, or can it predict the remote owner? The answers
//! pick a request type, a second pass picks how many words of the block to
//! request, and a final pass lowers the result to what the hardware supports.

mod granularity;
mod heuristics;
mod io;
mod lower;
mod nav;

pub use granularity::{inter_synch_store_reuse, intra_synch_load_reuse, select_granularity};
pub use heuristics::{
    criticality, owner_pred_beneficial, ownership_beneficial, select_load, select_rmw, select_store,
    shared_state_beneficial, OwnershipTrace,
};
pub use io::{parse_selection, write_selection, SelectionError};
pub use lower::lower_to_profile;
pub use nav::{NavIndex, SelectCtx};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::trace::{AccessKind, AccessTrace, DeviceClass};
use crate::{Pc, Score, WordMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RequestType {
    ReqV,
    ReqVo,
    ReqS,
    ReqWT,
    ReqWTo,
    ReqWTfwd,
    ReqO,
    ReqOData,
    ReqWTData,
    ReqWToData,
    ReqWTfwdData,
}

impl RequestType {
    pub const ALL: [RequestType; 11] = [
        RequestType::ReqV,
        RequestType::ReqVo,
        RequestType::ReqS,
        RequestType::ReqWT,
        RequestType::ReqWTo,
        RequestType::ReqWTfwd,
        RequestType::ReqO,
        RequestType::ReqOData,
        RequestType::ReqWTData,
        RequestType::ReqWToData,
        RequestType::ReqWTfwdData,
    ];

    pub fn token(self) -> &'static str {
        match self {
            RequestType::ReqV => "ReqV",
            RequestType::ReqVo => "ReqVo",
            RequestType::ReqS => "ReqS",
            RequestType::ReqWT => "ReqWT",
            RequestType::ReqWTo => "ReqWTo",
            RequestType::ReqWTfwd => "ReqWTfwd",
            RequestType::ReqO => "ReqO",
            RequestType::ReqOData => "ReqO+data",
            RequestType::ReqWTData => "ReqWT+data",
            RequestType::ReqWToData => "ReqWTo+data",
            RequestType::ReqWTfwdData => "ReqWTfwd+data",
        }
    }

    /// The type a predicted or forwarded request falls back to when it is
    /// handled by the LLC.
    pub fn root(self) -> RequestType {
        match self {
            RequestType::ReqVo => RequestType::ReqV,
            RequestType::ReqWTo | RequestType::ReqWTfwd => RequestType::ReqWT,
            RequestType::ReqWToData | RequestType::ReqWTfwdData => RequestType::ReqWTData,
            t => t,
        }
    }

    pub fn is_ownership(self) -> bool {
        matches!(self, RequestType::ReqO | RequestType::ReqOData)
    }

    pub fn is_forwarded(self) -> bool {
        matches!(self, RequestType::ReqWTfwd | RequestType::ReqWTfwdData)
    }

    pub fn is_predicted(self) -> bool {
        matches!(self, RequestType::ReqVo | RequestType::ReqWTo | RequestType::ReqWToData)
    }

    /// Write-through family (plain, predicted or forwarded; with or without data).
    pub fn is_write_through(self) -> bool {
        matches!(self.root(), RequestType::ReqWT | RequestType::ReqWTData)
    }

    /// Requests that read data back to the requester.
    pub fn returns_data(self) -> bool {
        !matches!(self, RequestType::ReqO | RequestType::ReqWT | RequestType::ReqWTo | RequestType::ReqWTfwd)
    }

    /// Which access kinds may legally carry this type.
    pub fn fits(self, kind: AccessKind) -> bool {
        use RequestType::*;
        match kind {
            AccessKind::Load => matches!(self, ReqV | ReqVo | ReqS | ReqOData),
            AccessKind::Store => matches!(self, ReqO | ReqWT | ReqWTo | ReqWTfwd | ReqOData),
            AccessKind::Rmw => matches!(self, ReqOData | ReqWTData | ReqWToData | ReqWTfwdData),
        }
    }

    /// Tie-break rank for plurality votes; lower wins.
    fn vote_rank(self) -> u8 {
        use RequestType::*;
        match self {
            ReqOData => 0,
            ReqO => 1,
            ReqS => 2,
            ReqWTfwd | ReqWTfwdData => 3,
            ReqWTo | ReqWToData => 4,
            ReqVo => 5,
            ReqWT | ReqWTData => 6,
            ReqV => 7,
        }
    }
}

impl fmt::Display for RequestType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for RequestType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        RequestType::ALL.into_iter().find(|t| t.token() == s).ok_or_else(|| s.to_string())
    }
}

/// What the target hardware offers, per device class where it differs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardwareProfile {
    pub cache_capacity_bytes: PerDevice<u64>,
    pub block_size_bytes: u32,
    pub word_size_bytes: u32,
    pub supports_wt_forwarding: bool,
    pub supports_owner_prediction: bool,
    pub word_granularity_state: PerDevice<bool>,
    pub latency_sensitive: PerDevice<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PerDevice<T> {
    pub cpu: T,
    pub gpu: T,
}

impl<T: Copy> PerDevice<T> {
    pub fn both(v: T) -> Self {
        PerDevice { cpu: v, gpu: v }
    }

    pub fn get(&self, d: DeviceClass) -> T {
        match d {
            DeviceClass::Cpu => self.cpu,
            DeviceClass::Gpu => self.gpu,
        }
    }
}

impl Default for HardwareProfile {
    fn default() -> Self {
        HardwareProfile {
            cache_capacity_bytes: PerDevice::both(32 * 1024),
            block_size_bytes: 64,
            word_size_bytes: 4,
            supports_wt_forwarding: true,
            supports_owner_prediction: true,
            word_granularity_state: PerDevice::both(true),
            latency_sensitive: PerDevice { cpu: true, gpu: false },
        }
    }
}

impl HardwareProfile {
    pub fn with_features(forwarding: bool, prediction: bool) -> Self {
        HardwareProfile { supports_wt_forwarding: forwarding, supports_owner_prediction: prediction, ..Default::default() }
    }

    /// Loads are weighted like stores when forwarding is unavailable, so that
    /// ownership is only chosen where it wins regardless of access latency.
    pub fn equalizes_criticality(&self) -> bool {
        !self.supports_wt_forwarding
    }

    pub fn check(&self, t: &AccessTrace) -> Result<(), String> {
        if self.cache_capacity_bytes.cpu == 0 || self.cache_capacity_bytes.gpu == 0 {
            return Err("cache capacity must be positive".into());
        }
        if self.block_size_bytes != t.block_size_bytes || self.word_size_bytes != t.word_size_bytes {
            return Err(format!(
                "profile block/word {}/{} does not match trace {}/{}",
                self.block_size_bytes, self.word_size_bytes, t.block_size_bytes, t.word_size_bytes
            ));
        }
        Ok(())
    }
}

/// Tunables of the scoring heuristics.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoringParams<S> {
    pub ownership_phase_window: u32,
    pub ownerpred_phase_window: u32,
    pub reuse_capacity_fraction: S,
    pub criticality_cpu_load: S,
    pub criticality_gpu_load: S,
    pub criticality_default: S,
    pub same_core_weight_mult: S,
    pub diff_core_weight_mult: S,
}

impl<S: Score> Default for ScoringParams<S> {
    fn default() -> Self {
        ScoringParams {
            ownership_phase_window: 5,
            ownerpred_phase_window: 4,
            reuse_capacity_fraction: S::ratio(3, 4),
            criticality_cpu_load: S::ratio(6, 1),
            criticality_gpu_load: S::ratio(2, 1),
            criticality_default: S::one(),
            same_core_weight_mult: S::ratio(2, 1),
            diff_core_weight_mult: S::ratio(1, 2),
        }
    }
}

impl<S: Score> ScoringParams<S> {
    pub fn check(&self) -> Result<(), String> {
        if self.ownership_phase_window == 0 || self.ownerpred_phase_window == 0 {
            return Err("phase windows must be at least 1".into());
        }
        if !(self.reuse_capacity_fraction > S::zero() && self.reuse_capacity_fraction <= S::one()) {
            return Err("reuse capacity fraction must lie in (0, 1]".into());
        }
        let weights = [
            self.criticality_cpu_load,
            self.criticality_gpu_load,
            self.criticality_default,
            self.same_core_weight_mult,
            self.diff_core_weight_mult,
        ];
        if weights.iter().any(|w| *w <= S::zero()) {
            return Err("weights must be positive".into());
        }
        Ok(())
    }
}

/// Request type and mask of one dynamic access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub req: RequestType,
    pub mask: WordMask,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SelectionMap {
    /// Indexed by seq_id.
    pub entries: Vec<Selection>,
    /// Plurality vote of all dynamic accesses of each static instruction.
    pub instruction_types: BTreeMap<Pc, RequestType>,
    /// Whether selection weighed loads like stores.
    pub equalized_criticality: bool,
}

impl SelectionMap {
    pub fn get(&self, seq_id: u64) -> Option<&Selection> {
        self.entries.get(seq_id as usize)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Recomputes the per-instruction votes from the per-access entries.
    pub fn revote(&mut self, t: &AccessTrace) {
        let mut votes: BTreeMap<Pc, Vec<RequestType>> = BTreeMap::new();
        for (a, s) in t.accesses.iter().zip(&self.entries) {
            votes.entry(a.pc).or_default().push(s.req);
        }
        self.instruction_types = votes.into_iter().map(|(pc, v)| (pc, select_for_instruction(&v))).collect();
    }

    /// Counts of request types among accesses of one static instruction.
    pub fn histogram(&self, t: &AccessTrace, pc: Pc) -> BTreeMap<RequestType, usize> {
        let mut h = BTreeMap::new();
        for (a, s) in t.accesses.iter().zip(&self.entries) {
            if a.pc == pc {
                *h.entry(s.req).or_insert(0) += 1;
            }
        }
        h
    }
}

/// Plurality vote with a fixed, ownership-first tie-break.
///
/// # Panics
/// Panics on an empty vote.
pub fn select_for_instruction(votes: &[RequestType]) -> RequestType {
    let mut counts: BTreeMap<RequestType, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(*v).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|(a, na), (b, nb)| na.cmp(nb).then(b.vote_rank().cmp(&a.vote_rank())))
        .map(|(t, _)| t)
        .expect("vote over no accesses")
}

/// Selects, sizes and lowers a request for every access of the trace.
pub fn select_all<S: Score>(t: &AccessTrace, profile: &HardwareProfile, params: &ScoringParams<S>) -> Result<SelectionMap, String> {
    profile.check(t)?;
    params.check()?;
    let ctx = SelectCtx::new(t, profile, params);
    let entries = (0..t.len()).map(|x| ctx.select_one(x)).collect();
    let raw = SelectionMap { entries, instruction_types: BTreeMap::new(), equalized_criticality: profile.equalizes_criticality() };
    let mut out = lower_to_profile(&raw, &ctx)?;
    out.revote(t);
    Ok(out)
}

impl<S: Score> SelectCtx<'_, S> {
    /// Algorithm chain plus granularity for one access, before lowering.
    pub fn select_one(&self, x: usize) -> Selection {
        let req = match self.trace.accesses[x].kind {
            AccessKind::Load => select_load(self, x),
            AccessKind::Store => select_store(self, x),
            AccessKind::Rmw => select_rmw(self, x),
        };
        let (req, mask) = select_granularity(self, x, req);
        Selection { req, mask }
    }
}
