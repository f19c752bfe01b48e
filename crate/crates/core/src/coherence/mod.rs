//! Coherence controllers as transition functions.
//!
//! The L1 and LLC controllers take a message (or an access) and the current
//! state, mutate the state and push outgoing messages and observable events
//! into an [`Outbox`]. They know nothing about time or networks, so the
//! simulator and the state-space checker drive the same code.
//!
//! The LLC keeps one entry per word: either the data or the id of the core
//! that owns it. Sharers are tracked per line. Ownership transfers are
//! forwarded without blocking; write-throughs to a remotely owned word,
//! Shared-state recalls and sharer invalidations block the line until all
//! acknowledgements arrive.

mod l1;
mod llc;

pub use l1::{CoreOp, Issue, L1State, Txn, TxnKind, WbEntry};
pub use llc::{LlcLine, LlcState, LlcWord, Transient};

use std::fmt;
use std::str::FromStr;

use crate::selector::RequestType;
use crate::trace::WordAddr;
use crate::{CoreId, Value, WordMask};

pub type TxnId = u32;
pub type BlockAddr = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Core(CoreId),
    Llc,
}

/// Private cache protocol family of a core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flavor {
    /// Line-granularity, writer-invalidated.
    Mesi,
    /// Word-granularity ownership with self-invalidated reads.
    DeNovo,
    /// Self-invalidated reads and write-through stores.
    Gpu,
    /// Any request type, chosen per access.
    Flex,
}

impl Flavor {
    pub fn token(self) -> &'static str {
        match self {
            Flavor::Mesi => "MESI",
            Flavor::DeNovo => "DeNovo",
            Flavor::Gpu => "GPU",
            Flavor::Flex => "Flex",
        }
    }

    /// Whether a core of this flavor can issue `req` with `mask`.
    ///
    /// Only the flexible flavor issues forwarded or predicted requests; line
    /// granularity caches must request whole lines.
    pub fn permits(self, req: RequestType, mask: WordMask, words_per_block: u32) -> bool {
        if self != Flavor::Flex && (req.is_forwarded() || req.is_predicted()) {
            return false;
        }
        if self == Flavor::Mesi && mask != WordMask::full(words_per_block) {
            return false;
        }
        !(self == Flavor::Mesi && req == RequestType::ReqO)
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mesi" => Ok(Flavor::Mesi),
            "denovo" => Ok(Flavor::DeNovo),
            "gpu" => Ok(Flavor::Gpu),
            "flex" => Ok(Flavor::Flex),
            _ => Err(format!("unknown flavor `{s}`")),
        }
    }
}

/// State of one word in a private cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WordState {
    Invalid,
    /// Readable until the next acquire.
    Valid(Value),
    /// Readable until invalidated by the LLC.
    Shared(Value),
    /// Exclusively held; reads and writes hit.
    Owned(Value),
}

impl WordState {
    pub fn value(self) -> Option<Value> {
        match self {
            WordState::Invalid => None,
            WordState::Valid(v) | WordState::Shared(v) | WordState::Owned(v) => Some(v),
        }
    }

    pub fn is_owned(self) -> bool {
        matches!(self, WordState::Owned(_))
    }
}

/// What a response hands to the requester for the words it covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Grant {
    /// Completion of a write; data, if any, are RMW results.
    Ack,
    Valid,
    Shared,
    Owned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgKind {
    /// Request to the LLC. `recall` asks the LLC to pull data back from an
    /// owner instead of forwarding.
    Req { recall: bool },
    /// Predicted request sent straight to the presumed owner.
    Direct,
    /// Request forwarded by the LLC to the owner.
    Fwd,
    Resp { grant: Grant },
    Nack,
    Inv,
    InvAck,
    Revoke,
    RevokeAck,
}

impl MsgKind {
    pub fn label(self) -> &'static str {
        match self {
            MsgKind::Req { recall: false } => "Req",
            MsgKind::Req { recall: true } => "ReqRecall",
            MsgKind::Direct => "Direct",
            MsgKind::Fwd => "Fwd",
            MsgKind::Resp { grant: Grant::Ack } => "Ack",
            MsgKind::Resp { .. } => "Data",
            MsgKind::Nack => "Nack",
            MsgKind::Inv => "Inv",
            MsgKind::InvAck => "InvAck",
            MsgKind::Revoke => "Revoke",
            MsgKind::RevokeAck => "RevokeAck",
        }
    }
}

/// Transaction a message belongs to: the requesting core and its txn id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxnTag {
    pub core: CoreId,
    pub id: TxnId,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Msg {
    pub src: Node,
    pub dst: Node,
    pub kind: MsgKind,
    pub block: BlockAddr,
    pub mask: WordMask,
    /// One value per word of `mask` that carries data, ascending.
    pub data: Vec<Value>,
    pub txn: TxnTag,
    /// Request type the message acts for.
    pub req: RequestType,
}

impl Msg {
    pub fn data_words(&self) -> u32 {
        self.data.len() as u32
    }

    /// Header plus data payload.
    pub fn bytes(&self, header_bytes: u32, word_bytes: u32) -> u64 {
        header_bytes as u64 + self.data_words() as u64 * word_bytes as u64
    }

    /// Value for word `w` if the message carries data for it.
    pub fn value_of(&self, w: u32) -> Option<Value> {
        if self.data.len() != self.mask.count() as usize {
            return None;
        }
        self.mask.rank(w).map(|i| self.data[i])
    }
}

/// Deliberate protocol bugs used to check that the checker catches them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Mutations {
    /// Write-throughs and Shared grants ignore a remote owner.
    pub skip_revoke: bool,
    /// Ownership and writes do not invalidate sharers.
    pub skip_sharer_invalidate: bool,
    /// A Nacked request is dropped instead of retried.
    pub drop_nack_retry: bool,
}

/// Static knobs of the controllers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProtocolEnv {
    pub words_per_block: u32,
    pub max_forward_retries: u32,
    pub mutations: Mutations,
}

impl Default for ProtocolEnv {
    fn default() -> Self {
        ProtocolEnv { words_per_block: 16, max_forward_retries: 2, mutations: Mutations::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    /// An access left the core's pipeline with these read values.
    Completed { core: CoreId, txn: TxnId, values: Vec<Value> },
    /// A write became visible at its serialization point.
    WriteApplied { word: WordAddr, value: Value, by: CoreId },
    Nacked { core: CoreId, txn: TxnId },
    Retried { core: CoreId, txn: TxnId },
    /// A predicted request reached an owner that served it.
    PredictionHit { core: CoreId, txn: TxnId },
    PredictionMiss { core: CoreId, txn: TxnId },
    /// A controller saw something the protocol forbids.
    Violation(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Outbox {
    pub msgs: Vec<Msg>,
    pub events: Vec<Event>,
}

impl Outbox {
    pub fn send(&mut self, m: Msg) {
        self.msgs.push(m);
    }

    pub fn event(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn clear(&mut self) {
        self.msgs.clear();
        self.events.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoherenceError {
    #[error("core {core} ({flavor}) cannot issue {req} with mask {mask}")]
    IllegalType { core: CoreId, flavor: Flavor, req: RequestType, mask: WordMask },
    #[error("{req} does not fit a {kind:?} access")]
    KindMismatch { req: RequestType, kind: crate::trace::AccessKind },
}

/// Type the LLC treats a request as: predicted requests act like their
/// unpredicted counterparts, with write-throughs forwarded to owners.
pub fn llc_equivalent(req: RequestType) -> RequestType {
    match req {
        RequestType::ReqVo => RequestType::ReqV,
        RequestType::ReqWTo => RequestType::ReqWTfwd,
        RequestType::ReqWToData => RequestType::ReqWTfwdData,
        r => r,
    }
}

/// Word address of word `w` in `block`.
pub fn word_addr(block: BlockAddr, w: u32, words_per_block: u32) -> WordAddr {
    block * words_per_block as u64 + w as u64
}

#[cfg(test)]
mod tests;
