//! Speculative-decoding laboratory.
//!
//! Builds draft token trees three ways (a sampled or greedy chain, the static
//! fixed-width/fixed-depth grid, and budget-driven confidence-gated expansion),
//! verifies them losslessly against a target model, and accounts for the
//! resulting mean accepted tokens, draft efficiency and analytical speedup.
//! Draft and target "LLMs" are synthetic [`SequenceModel`]s so that every
//! result can be checked against an enumerable oracle.

pub mod bench;
pub mod builders;
pub mod dist;
pub mod error;
pub mod metrics;
pub mod models;
pub mod tree;
pub mod verify;

pub use builders::{build_chain, build_static, build_talon, ExpansionPolicy};
pub use error::{Error, Result};
pub use metrics::{RunMetrics, SpeedupModel};
pub use models::{Context, Distribution, SequenceModel, Token, Vocab};
pub use tree::{DraftTree, NodeId, TreeMask};
pub use verify::{decode, DecodeConfig, Mode, VerificationOutcome};
