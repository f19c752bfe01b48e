//! Fine-grain coherence specialization toolkit.
//!
//! The crate is organized around the pipeline a study runs through:
//!
//! * [`trace`] holds the sequentially consistent access trace, its file format
//!   and the four microbenchmark generators.
//! * [`selector`] assigns a coherence request type and word mask to every
//!   dynamic access by walking the trace, then lowers the result to what a
//!   hardware profile can issue.
//! * [`coherence`] contains the L1 and LLC controllers as transition functions.
//! * [`simnet`] replays a trace against those controllers on a mesh and
//!   accounts traffic and latency.
//! * [`checker`] explores every interleaving of a tiny system to check the
//!   protocol invariants and count reachable states.
//!
//! Scoring arithmetic in the selector is generic over the [`Score`] scalar so
//! that the heuristics can run on `f32`, `f64` or exact rationals.

pub mod checker;
pub mod coherence;
pub mod mask;
pub mod score;
pub mod selector;
pub mod simnet;
pub mod trace;

pub use mask::WordMask;
pub use score::Score;

/// Core (private cache) identifier.
pub type CoreId = u16;
/// Static instruction identifier ("PC").
pub type Pc = u32;
/// Data value of one word.
pub type Value = u64;

/// Selector tunables scored in double precision (the default).
pub type ScoringParamsF64 = selector::ScoringParams<f64>;
/// Selector tunables scored in single precision.
pub type ScoringParamsF32 = selector::ScoringParams<f32>;
/// Selector tunables scored with exact rationals.
pub type ScoringParamsExact = selector::ScoringParams<num_rational::Rational64>;
