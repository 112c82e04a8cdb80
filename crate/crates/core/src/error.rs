use thiserror::Error;

use crate::model::TokenId;

/// Errors produced by the spinetree library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabTooSmall(usize),

    #[error("token {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfVocab { token: TokenId, vocab: usize },

    #[error("query node {node} refers to parent {parent}, which does not precede it")]
    InvalidParent { node: usize, parent: usize },

    #[error("the model needs a non-empty context")]
    EmptyContext,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tree shape uses {used} nodes but the budget is {budget}")]
    BudgetExceeded { used: usize, budget: usize },

    #[error("no decode cycles were recorded")]
    NoCycles,

    #[error("missing field: {0}")]
    MissingField(&'static str),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
