//! Target-model abstraction and the reference autoregressive decoder.
//!
//! A [`TargetModel`] is a deterministic greedy next-token function. The only
//! thing a decoder ever asks of it is [`TargetModel::score_tree`]: score the
//! last position of a base sequence plus any number of extra draft nodes, where
//! each node sees exactly its root-to-node ancestor path (tree-mask semantics).
//! Everything the speculative engines do is checked against [`ar_decode`], the
//! one-token-per-call greedy rollout.

mod synthetic;

pub(crate) use synthetic::hash_words;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{
    build_synthetic, MarkovOrder2, SyntheticKind, SyntheticModel, SyntheticModelSpec,
    TemplateRepeater,
};

/// A token of the target vocabulary.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// Convenience for building token vectors in tests and examples.
pub fn tokens(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().copied().map(TokenId).collect()
}

/// A scored next-token candidate. Scores are normalized to `[0, 1]`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: TokenId,
    pub score: f64,
}

impl Candidate {
    pub fn new(token: TokenId, score: f64) -> Self {
        Candidate { token, score }
    }
}

/// Sorts candidates by descending score, breaking ties by the smaller token id.
pub fn rank_candidates(cands: &mut [Candidate]) {
    cands.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.token.cmp(&b.token))
    });
}

/// Prompt plus generated tokens of one decode run. Append-only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    prompt_len: usize,
}

impl TokenSequence {
    pub fn new(prompt: Vec<TokenId>) -> Result<Self> {
        if prompt.is_empty() {
            return Err(Error::EmptyContext);
        }
        let prompt_len = prompt.len();
        Ok(TokenSequence { tokens: prompt, prompt_len })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.tokens[..self.prompt_len]
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn last(&self) -> TokenId {
        // non-empty by construction
        self.tokens[self.tokens.len() - 1]
    }

    /// The token before the last one, if any.
    pub fn prev(&self) -> Option<TokenId> {
        self.tokens.len().checked_sub(2).map(|i| self.tokens[i])
    }

    pub fn push(&mut self, t: TokenId) {
        self.tokens.push(t);
    }

    pub fn extend_from_slice(&mut self, ts: &[TokenId]) {
        self.tokens.extend_from_slice(ts);
    }
}

/// A read-only view of a token path made of a shared base and a short tail.
///
/// Tree scoring hands every node `base ++ ancestors ++ node` without copying
/// the base.
#[derive(Clone, Copy, Debug)]
pub struct Context<'a> {
    head: &'a [TokenId],
    tail: &'a [TokenId],
}

impl<'a> Context<'a> {
    pub fn new(head: &'a [TokenId], tail: &'a [TokenId]) -> Self {
        Context { head, tail }
    }

    pub fn from_slice(s: &'a [TokenId]) -> Self {
        Context { head: s, tail: &[] }
    }

    pub fn len(&self) -> usize {
        self.head.len() + self.tail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Option<TokenId> {
        if i < self.head.len() {
            Some(self.head[i])
        } else {
            self.tail.get(i - self.head.len()).copied()
        }
    }

    /// `nth_last(0)` is the last token.
    pub fn nth_last(&self, k: usize) -> Option<TokenId> {
        let n = self.len();
        if k >= n {
            None
        } else {
            self.get(n - 1 - k)
        }
    }

    pub fn last(&self) -> Option<TokenId> {
        self.nth_last(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + 'a {
        self.head.iter().chain(self.tail.iter()).copied()
    }

    pub fn to_vec(&self) -> Vec<TokenId> {
        self.iter().collect()
    }
}

/// Greedy prediction and top-K candidates at one scored position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionScores {
    pub greedy: TokenId,
    pub top_k: Vec<Candidate>,
}

/// One extra draft node in a [`ModelQuery`]. `parent == None` attaches the
/// node to the end of the base sequence.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct QueryNode {
    pub token: TokenId,
    pub parent: Option<usize>,
}

/// A batch of positions to score in one call.
#[derive(Clone, Debug)]
pub struct ModelQuery<'a> {
    pub base: &'a [TokenId],
    pub nodes: Vec<QueryNode>,
    /// Score every prefix of `base` (prefill), not just the full base.
    pub score_prefix: bool,
    pub top_k: usize,
}

impl<'a> ModelQuery<'a> {
    pub fn new(base: &'a [TokenId]) -> Self {
        ModelQuery { base, nodes: Vec::new(), score_prefix: false, top_k: 10 }
    }

    pub fn with_nodes(mut self, nodes: Vec<QueryNode>) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = k;
        self
    }

    pub fn prefill(mut self) -> Self {
        self.score_prefix = true;
        self
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.base.is_empty() {
            return Err(Error::EmptyContext);
        }
        let check = |t: TokenId| {
            if t.index() >= vocab {
                Err(Error::TokenOutOfVocab { token: t, vocab })
            } else {
                Ok(())
            }
        };
        for &t in self.base {
            check(t)?;
        }
        for (i, n) in self.nodes.iter().enumerate() {
            check(n.token)?;
            if let Some(p) = n.parent {
                if p >= i {
                    return Err(Error::InvalidParent { node: i, parent: p });
                }
            }
        }
        Ok(())
    }
}

/// Scores returned by [`TargetModel::score_tree`].
///
/// `prefix` holds one entry per scored base position (all of them for a
/// prefill query, otherwise only the position after the full base); `nodes`
/// is parallel to the query's nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelResponse {
    pub prefix: Vec<PositionScores>,
    pub nodes: Vec<PositionScores>,
}

impl ModelResponse {
    /// Scores after the full base sequence.
    pub fn anchor(&self) -> &PositionScores {
        self.prefix.last().expect("response always scores the base end")
    }

    pub fn node(&self, i: usize) -> &PositionScores {
        &self.nodes[i]
    }
}

/// A deterministic greedy language model.
pub trait TargetModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// End-of-sequence token. Synthetic models reserve `V - 1`.
    fn eos(&self) -> TokenId {
        TokenId((self.vocab_size() - 1) as u32)
    }

    /// Scored candidates for the token following `context`, in any order.
    /// Must be non-empty and a pure function of the token path.
    fn next_scores(&self, context: Context<'_>) -> Vec<Candidate>;

    /// Scores every position of a tree query in one call.
    fn score_tree(&self, query: &ModelQuery<'_>) -> Result<ModelResponse> {
        tree_scores(self, query)
    }
}

impl<M: TargetModel + ?Sized> TargetModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> TokenId {
        (**self).eos()
    }
    fn next_scores(&self, context: Context<'_>) -> Vec<Candidate> {
        (**self).next_scores(context)
    }
    fn score_tree(&self, query: &ModelQuery<'_>) -> Result<ModelResponse> {
        (**self).score_tree(query)
    }
}

impl<M: TargetModel + ?Sized> TargetModel for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> TokenId {
        (**self).eos()
    }
    fn next_scores(&self, context: Context<'_>) -> Vec<Candidate> {
        (**self).next_scores(context)
    }
    fn score_tree(&self, query: &ModelQuery<'_>) -> Result<ModelResponse> {
        (**self).score_tree(query)
    }
}

/// Ranks a model's candidates at one position and keeps the top `k`
/// (at least one, so the greedy token is always `top_k[0]`).
pub fn score_position<M: TargetModel + ?Sized>(
    model: &M,
    context: Context<'_>,
    k: usize,
) -> PositionScores {
    let mut cands = model.next_scores(context);
    assert!(!cands.is_empty(), "model returned no candidates");
    rank_candidates(&mut cands);
    cands.truncate(k.max(1));
    PositionScores { greedy: cands[0].token, top_k: cands }
}

/// Reference implementation of tree scoring: each node is scored on its own
/// root-to-node path, so siblings never influence each other.
pub fn tree_scores<M: TargetModel + ?Sized>(
    model: &M,
    query: &ModelQuery<'_>,
) -> Result<ModelResponse> {
    query.validate(model.vocab_size())?;
    let base = query.base;
    let k = query.top_k;

    let prefix = if query.score_prefix {
        (1..=base.len())
            .map(|l| score_position(model, Context::from_slice(&base[..l]), k))
            .collect()
    } else {
        vec![score_position(model, Context::from_slice(base), k)]
    };

    let mut nodes = Vec::with_capacity(query.nodes.len());
    let mut path = Vec::new();
    for i in 0..query.nodes.len() {
        path.clear();
        let mut cur = Some(i);
        while let Some(j) = cur {
            path.push(query.nodes[j].token);
            cur = query.nodes[j].parent;
        }
        path.reverse();
        nodes.push(score_position(model, Context::new(base, &path), k));
    }
    Ok(ModelResponse { prefix, nodes })
}

/// Greedy autoregressive rollout, one model call per token. Stops after
/// `max_tokens` tokens or right after emitting EOS. This is the equality
/// oracle for every speculative engine.
pub fn ar_decode<M: TargetModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    max_tokens: usize,
) -> Result<Vec<TokenId>> {
    let mut history = TokenSequence::new(prompt.to_vec())?;
    let eos = model.eos();
    while history.generated().len() < max_tokens {
        let resp = model.score_tree(&ModelQuery::new(history.tokens()).with_top_k(1))?;
        let t = resp.anchor().greedy;
        history.push(t);
        if t == eos {
            break;
        }
    }
    Ok(history.generated().to_vec())
}

/// Samples `len` tokens from the model's own score distribution, starting
/// from two seeded tokens. EOS is never drawn. Used to build prompts that
/// look like the model's text.
pub fn sample_prompt<M: TargetModel + ?Sized>(model: &M, seed: u64, len: usize) -> Vec<TokenId> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let eos = model.eos();
    let pool = (model.vocab_size() as u32).saturating_sub(1).max(1);
    let mut out: Vec<TokenId> = (0..len.min(2)).map(|_| TokenId(rng.gen_range(0..pool))).collect();
    while out.len() < len {
        let cands: Vec<Candidate> = model
            .next_scores(Context::from_slice(&out))
            .into_iter()
            .filter(|c| c.token != eos && c.score > 0.0)
            .collect();
        let total: f64 = cands.iter().map(|c| c.score).sum();
        let next = if cands.is_empty() {
            TokenId(rng.gen_range(0..pool))
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = cands[cands.len() - 1].token;
            for c in &cands {
                if u < c.score {
                    pick = c.token;
                    break;
                }
                u -= c.score;
            }
            pick
        };
        out.push(next);
    }
    out
}

/// Wraps a model and counts `score_tree` calls.
#[derive(Debug)]
pub struct Counted<M> {
    inner: M,
    calls: AtomicUsize,
}

impl<M> Counted<M> {
    pub fn new(inner: M) -> Self {
        Counted { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> M {
        self.inner
    }
}

impl<M: TargetModel> TargetModel for Counted<M> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn eos(&self) -> TokenId {
        self.inner.eos()
    }
    fn next_scores(&self, context: Context<'_>) -> Vec<Candidate> {
        self.inner.next_scores(context)
    }
    fn score_tree(&self, query: &ModelQuery<'_>) -> Result<ModelResponse> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score_tree(query)
    }
}
