//! Single-pass greedy verification of a draft tree.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ModelResponse, TargetModel, TokenId};
use crate::tree::{Source, SpineTree};

/// Shape of the accepted path.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathCategory {
    Empty,
    PurePld,
    /// Spine tokens followed by at least one branch token.
    SpineContinuation,
    PureTr,
}

impl PathCategory {
    pub const ALL: [PathCategory; 4] = [
        PathCategory::Empty,
        PathCategory::PurePld,
        PathCategory::SpineContinuation,
        PathCategory::PureTr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PathCategory::Empty => "empty",
            PathCategory::PurePld => "pure-pld",
            PathCategory::SpineContinuation => "spine-continuation",
            PathCategory::PureTr => "pure-tr",
        }
    }

    /// Classifies a root path from its source tags.
    pub fn classify(sources: &[Source]) -> Self {
        match (sources.first(), sources.last()) {
            (None, _) => PathCategory::Empty,
            (Some(Source::Tr), _) => PathCategory::PureTr,
            (Some(Source::Pld), Some(Source::Pld)) => PathCategory::PurePld,
            (Some(Source::Pld), _) => PathCategory::SpineContinuation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkResult {
    /// Accepted tree node indices, a root path (root excluded).
    pub accepted: Vec<usize>,
    pub tokens: Vec<TokenId>,
    pub sources: Vec<Source>,
    /// Greedy prediction at the last accepted position.
    pub bonus: TokenId,
    pub category: PathCategory,
}

impl WalkResult {
    pub fn accepted_from(&self, source: Source) -> usize {
        self.sources.iter().filter(|&&s| s == source).count()
    }

    /// Accepted tokens followed by the bonus token.
    pub fn emitted(&self) -> Vec<TokenId> {
        let mut out = self.tokens.clone();
        out.push(self.bonus);
        out
    }
}

/// Greedy prediction after tree node `i` (0 is the root / anchor).
fn prediction(resp: &ModelResponse, i: usize) -> TokenId {
    if i == 0 {
        resp.anchor().greedy
    } else {
        resp.node(i - 1).greedy
    }
}

/// Walks a scored tree from the root. At each node the child matching the
/// model's greedy prediction is taken, spine children before branch children
/// and lower indices first; the walk stops when no child matches.
pub fn walk_scored(tree: &SpineTree, resp: &ModelResponse) -> WalkResult {
    let mut v = 0;
    let mut accepted = Vec::new();
    loop {
        let x = prediction(resp, v);
        let pick = |src: Source| {
            tree.children(v)
                .iter()
                .copied()
                .filter(|&c| tree.node(c).source == src && tree.node(c).token == x)
                .min()
        };
        match pick(Source::Pld).or_else(|| pick(Source::Tr)) {
            Some(c) => {
                accepted.push(c);
                v = c;
            }
            None => break,
        }
    }
    let tokens = accepted.iter().map(|&i| tree.node(i).token).collect();
    let sources: Vec<Source> = accepted.iter().map(|&i| tree.node(i).source).collect();
    WalkResult {
        bonus: prediction(resp, v),
        category: PathCategory::classify(&sources),
        accepted,
        tokens,
        sources,
    }
}

/// Scores `tree` in one model call and walks it. `base` is the full history
/// and must end with the tree's anchor. The response is returned so every
/// scored position can be harvested.
pub fn unified_greedy_walk<M: TargetModel + ?Sized>(
    model: &M,
    base: &[TokenId],
    tree: &SpineTree,
    top_k: usize,
) -> Result<(WalkResult, ModelResponse)> {
    debug_assert_eq!(base.last(), Some(&tree.anchor()));
    let resp = model.score_tree(&tree.to_query(base, top_k))?;
    Ok((walk_scored(tree, &resp), resp))
}

/// Verifies a draft chain as one linear sequence: the longest prefix that
/// matches the greedy predictions is accepted. Also returns the chain tree
/// that was scored.
pub fn linear_verify<M: TargetModel + ?Sized>(
    model: &M,
    base: &[TokenId],
    chain: &[TokenId],
    top_k: usize,
) -> Result<(WalkResult, ModelResponse, SpineTree)> {
    let anchor = *base.last().ok_or(crate::error::Error::EmptyContext)?;
    let tree = SpineTree::chain(anchor, chain, Source::Pld);
    let (walk, resp) = unified_greedy_walk(model, base, &tree, top_k)?;
    Ok((walk, resp, tree))
}
