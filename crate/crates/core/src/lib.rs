//! Speculative decoding with anisotropic draft trees.
//!
//! Two training-free draft sources feed one verification tree per model call:
//! a context match over the prompt and generated text (the *spine*, a deep
//! chain of copied tokens) and a table of observed successor tokens (the
//! *branches*, short and wide). A greedy walk over the scored tree accepts
//! the longest path the model agrees with, so output is always identical to
//! plain greedy decoding.
//!
//! ```
//! use spinetree::{ar_decode, build_synthetic, spine_decode, tokens, EngineConfig, SyntheticModelSpec};
//!
//! let model = build_synthetic(&SyntheticModelSpec::template(7, 512, 0.9)).unwrap();
//! let prompt = tokens(&[3, 14, 15, 92, 65]);
//! let out = spine_decode(&model, &prompt, 200, &EngineConfig::default()).unwrap();
//! assert_eq!(out.tokens, ar_decode(&model, &prompt, 200).unwrap());
//! assert!(out.stats.tau() >= 1.0);
//! ```

pub mod adjacency;
pub mod context;
pub mod engine;
pub mod error;
pub mod model;
pub mod theory;
pub mod tree;
pub mod verify;

pub use adjacency::AdjacencyTable;
pub use context::{ContextIndex, MatchResult};
pub use engine::{
    decode, spine_decode, update_ema, Ablation, DecodeStats, Decoded, EmaState, EngineConfig, EngineKind,
};
pub use error::{Error, Result};
pub use model::{
    ar_decode, build_synthetic, sample_prompt, tokens, Candidate, Context, Counted, ModelQuery, ModelResponse, SyntheticModel,
    SyntheticModelSpec, TargetModel, TokenId, TokenSequence,
};
pub use theory::{AcceptanceModel, TreeShape};
pub use tree::{build_iso_tree, build_spine_tree, linear_allocation, Source, SpineTree, TreeBudget, TreeOptions};
pub use verify::{linear_verify, unified_greedy_walk, PathCategory, WalkResult};
