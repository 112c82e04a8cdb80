//! Runs the guide's code listings as doctests, one module per chapter so a
//! failure points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/sources.md")]
pub mod sources {}
#[doc = include_str!("../../../book/src/trees.md")]
pub mod trees {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
#[doc = include_str!("../../../book/src/engine.md")]
pub mod engine {}
#[doc = include_str!("../../../book/src/theory.md")]
pub mod theory {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
