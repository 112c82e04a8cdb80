//! Two-tier token-transition table.
//!
//! Tier 1 is a dense per-token list of top-K successors; tier 2 maps the last
//! two tokens to their own top-K list. Every scored position of every model
//! call (including rejected draft branches) is harvested into both tiers.

use std::collections::HashMap;

use serde::Serialize;

use crate::model::{rank_candidates, Candidate, TokenId};

pub const DEFAULT_TOP_K: usize = 10;
pub const MIN_SCORE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct AdjacencyTable {
    top_k: usize,
    min_score: f64,
    unigram: Vec<Vec<Candidate>>,
    bigram: HashMap<(TokenId, TokenId), Vec<Candidate>>,
}

impl AdjacencyTable {
    pub fn new(vocab: usize) -> Self {
        Self::with_params(vocab, DEFAULT_TOP_K, MIN_SCORE)
    }

    pub fn with_params(vocab: usize, top_k: usize, min_score: f64) -> Self {
        AdjacencyTable {
            top_k,
            min_score,
            unigram: vec![Vec::new(); vocab],
            bigram: HashMap::new(),
        }
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn min_score(&self) -> f64 {
        self.min_score
    }

    pub fn is_empty(&self) -> bool {
        self.bigram.is_empty() && self.unigram.iter().all(Vec::is_empty)
    }

    pub fn bigram_keys(&self) -> usize {
        self.bigram.len()
    }

    pub fn unigram_entry(&self, cur: TokenId) -> &[Candidate] {
        self.unigram.get(cur.index()).map_or(&[], Vec::as_slice)
    }

    pub fn bigram_entry(&self, prev: TokenId, cur: TokenId) -> Option<&[Candidate]> {
        self.bigram.get(&(prev, cur)).map(Vec::as_slice)
    }

    /// Merges the scored candidates observed after `(prev, cur)` into both
    /// tiers. `prev` is `None` at the very start of a sequence, in which case
    /// only the unigram tier is updated.
    pub fn harvest(&mut self, prev: Option<TokenId>, cur: TokenId, observed: &[Candidate]) {
        let (k, thr) = (self.top_k, self.min_score);
        if let Some(list) = self.unigram.get_mut(cur.index()) {
            merge(list, observed, k, thr);
        }
        if let Some(p) = prev {
            let list = self.bigram.entry((p, cur)).or_default();
            merge(list, observed, k, thr);
            if list.is_empty() {
                self.bigram.remove(&(p, cur));
            }
        }
    }

    /// Successors of `cur`, preferring the bigram list for `(prev, cur)` when
    /// it exists. At most `width` entries, all above the score threshold.
    pub fn successors(&self, prev: Option<TokenId>, cur: TokenId, width: usize) -> Vec<Candidate> {
        let list = prev
            .and_then(|p| self.bigram.get(&(p, cur)))
            .filter(|l| !l.is_empty())
            .map(Vec::as_slice)
            .unwrap_or_else(|| self.unigram_entry(cur));
        list.iter()
            .filter(|c| c.score >= self.min_score)
            .take(width)
            .copied()
            .collect()
    }

    pub fn has_successors(&self, prev: Option<TokenId>, cur: TokenId) -> bool {
        !self.successors(prev, cur, 1).is_empty()
    }

    /// Debug dump: `{"a,b" | "a" -> [[token, score], ...]}` with sorted keys.
    pub fn dump(&self) -> serde_json::Value {
        let mut map = std::collections::BTreeMap::new();
        let row = |l: &[Candidate]| l.iter().map(|c| (c.token.0, c.score)).collect::<Vec<_>>();
        for (t, l) in self.unigram.iter().enumerate() {
            if !l.is_empty() {
                map.insert(format!("{t}"), row(l));
            }
        }
        for ((a, b), l) in &self.bigram {
            map.insert(format!("{a},{b}"), row(l));
        }
        serde_json::to_value(DumpMap(map)).expect("serializable")
    }
}

#[derive(Serialize)]
#[serde(transparent)]
struct DumpMap(std::collections::BTreeMap<String, Vec<(u32, f64)>>);

/// Latest-wins per successor, then re-sort, truncate to `k`, drop entries
/// below `min_score`.
fn merge(list: &mut Vec<Candidate>, observed: &[Candidate], k: usize, min_score: f64) {
    for c in observed {
        match list.iter_mut().find(|e| e.token == c.token) {
            Some(e) => e.score = c.score.max(0.0),
            None => list.push(Candidate::new(c.token, c.score.max(0.0))),
        }
    }
    rank_candidates(list);
    list.truncate(k);
    list.retain(|c| c.score >= min_score);
}

/// Number of children a successor receives out of a base allocation `a`,
/// scaled by its score relative to the best sibling. Successors under the
/// threshold get nothing.
pub fn confidence_width(score: f64, max_sibling: f64, a: usize, min_score: f64) -> usize {
    if score < min_score || max_sibling <= 0.0 {
        return 0;
    }
    let ratio = (score / max_sibling).min(1.0);
    (a as f64 * ratio).round() as usize
}
