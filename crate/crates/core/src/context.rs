//! Incremental n-gram context matching over prompt plus generated text.
//!
//! For each query length `n`, the last `n` tokens of the history are looked
//! up; the continuation after their most recent earlier occurrence is a
//! candidate draft chain. The chain from the longest matching `n` is
//! returned, and the match is flagged as a consensus when at least two query
//! lengths propose the same first continuation token.

use std::collections::HashMap;

use crate::model::TokenId;

/// Default query lengths.
pub const DEFAULT_NGRAM_LENGTHS: [usize; 3] = [3, 4, 5];
/// Longest draft chain returned by a match.
pub const MAX_SPINE_CONTINUATION: usize = 20;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    /// Draft chain, a verbatim slice of the history. Possibly empty.
    pub chain: Vec<TokenId>,
    pub consensus: bool,
    /// Query length that produced `chain`, 0 when there is no match.
    pub ngram: usize,
}

impl MatchResult {
    pub fn is_empty(&self) -> bool {
        self.chain.is_empty()
    }
}

/// Incremental index; equivalent to rescanning the full history on every
/// query.
#[derive(Clone, Debug)]
pub struct ContextIndex {
    lengths: Vec<usize>,
    max_chain: usize,
    history: Vec<TokenId>,
    /// Per query length: n-gram -> start of its most recent occurrence that
    /// is not the current suffix.
    tables: Vec<HashMap<Vec<TokenId>, usize>>,
}

impl ContextIndex {
    pub fn new(lengths: &[usize], max_chain: usize) -> Self {
        let mut lengths: Vec<usize> = lengths.iter().copied().filter(|&n| n > 0).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let tables = vec![HashMap::new(); lengths.len()];
        ContextIndex { lengths, max_chain, history: Vec::new(), tables }
    }

    pub fn with_defaults() -> Self {
        Self::new(&DEFAULT_NGRAM_LENGTHS, MAX_SPINE_CONTINUATION)
    }

    pub fn history(&self) -> &[TokenId] {
        &self.history
    }

    /// Appends `delta` to the indexed history.
    pub fn extend(&mut self, delta: &[TokenId]) {
        for &t in delta {
            self.push(t);
        }
    }

    pub fn push(&mut self, t: TokenId) {
        // The n-gram that was the suffix before this token now has a
        // successor, so it becomes visible to lookups.
        let len = self.history.len();
        for (table, &n) in self.tables.iter_mut().zip(&self.lengths) {
            if len >= n {
                table.insert(self.history[len - n..].to_vec(), len - n);
            }
        }
        self.history.push(t);
    }

    pub fn context_match(&self) -> MatchResult {
        let len = self.history.len();
        let mut best: Option<(usize, usize)> = None; // (n, start)
        let mut firsts: Vec<TokenId> = Vec::with_capacity(self.lengths.len());
        for (table, &n) in self.tables.iter().zip(&self.lengths) {
            if len < n {
                continue;
            }
            if let Some(&start) = table.get(&self.history[len - n..]) {
                firsts.push(self.history[start + n]);
                // lengths are ascending, so the last hit is the longest n
                best = Some((n, start));
            }
        }
        let Some((n, start)) = best else {
            return MatchResult::default();
        };
        let from = start + n;
        let to = (from + self.max_chain).min(len);
        MatchResult {
            chain: self.history[from..to].to_vec(),
            consensus: has_repeat(&firsts),
            ngram: n,
        }
    }
}

fn has_repeat(xs: &[TokenId]) -> bool {
    xs.iter().enumerate().any(|(i, a)| xs[i + 1..].contains(a))
}

/// Brute-force reference: scans the whole history for every query length.
pub fn context_match_scan(history: &[TokenId], lengths: &[usize], max_chain: usize) -> MatchResult {
    let len = history.len();
    let mut lengths: Vec<usize> = lengths.iter().copied().filter(|&n| n > 0).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut best = None;
    let mut firsts = Vec::new();
    for &n in &lengths {
        if len <= n {
            continue;
        }
        let query = &history[len - n..];
        if let Some(start) = (0..len - n).rev().find(|&s| &history[s..s + n] == query) {
            firsts.push(history[start + n]);
            best = Some((n, start));
        }
    }
    match best {
        None => MatchResult::default(),
        Some((n, start)) => MatchResult {
            chain: history[start + n..(start + n + max_chain).min(len)].to_vec(),
            consensus: has_repeat(&firsts),
            ngram: n,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tokens;
    use proptest::prelude::*;

    fn indexed(h: &[u32]) -> ContextIndex {
        let mut ix = ContextIndex::with_defaults();
        ix.extend(&tokens(h));
        ix
    }

    #[test]
    fn single_length_match_copies_continuation() {
        let mut ix = ContextIndex::new(&[3], 20);
        ix.extend(&tokens(&[1, 2, 3, 4, 5, 1, 2, 3]));
        let m = ix.context_match();
        assert_eq!(m.chain, tokens(&[4, 5, 1, 2, 3]));
        assert_eq!(m.ngram, 3);
        // the brute-force scan agrees
        assert_eq!(m, context_match_scan(&tokens(&[1, 2, 3, 4, 5, 1, 2, 3]), &[3], 20));
    }

    #[test]
    fn no_earlier_occurrence_gives_empty_match() {
        let m = indexed(&[7, 8, 9]).context_match();
        assert!(m.is_empty());
        assert!(!m.consensus);
        assert!(indexed(&[]).context_match().is_empty());
        assert!(indexed(&[1, 2]).context_match().is_empty());
    }

    #[test]
    fn consensus_when_two_lengths_agree() {
        // 4-gram [9,1,2,3] occurs once earlier followed by 4; the most recent
        // 3-gram [1,2,3] is also followed by 4; no 5-gram match.
        let h = [8, 9, 1, 2, 3, 4, 6, 1, 2, 3, 4, 7, 9, 1, 2, 3];
        let m = indexed(&h).context_match();
        assert_eq!(m.ngram, 4);
        assert_eq!(m.chain[0], TokenId(4));
        assert!(m.consensus);
        assert_eq!(m, context_match_scan(&tokens(&h), &DEFAULT_NGRAM_LENGTHS, 20));
    }

    #[test]
    fn disagreeing_lengths_are_not_consensus() {
        // most recent [2,3] occurrence is followed by 9, longest [1,2,3] by 4
        let mut ix = ContextIndex::new(&[2, 3], 20);
        ix.extend(&tokens(&[1, 2, 3, 4, 2, 3, 9, 1, 2, 3]));
        let m = ix.context_match();
        assert_eq!(m.ngram, 3);
        assert_eq!(m.chain[0], TokenId(4));
        assert!(!m.consensus);
    }

    #[test]
    fn chain_is_capped() {
        let mut h: Vec<u32> = (0..40).collect();
        h.extend([0, 1, 2, 3, 4]);
        let m = indexed(&h).context_match();
        assert_eq!(m.chain.len(), MAX_SPINE_CONTINUATION);
        assert_eq!(m.chain[0], TokenId(5));
    }

    #[test]
    fn empty_delta_changes_nothing() {
        let mut ix = indexed(&[1, 2, 3, 1, 2]);
        let before = ix.context_match();
        ix.extend(&[]);
        assert_eq!(ix.context_match(), before);
    }

    #[test]
    fn long_incremental_run_matches_scan() {
        // 10k tokens over a small alphabet, checked at 100 pseudo-random cut
        // points against the scan.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let h: Vec<TokenId> = (0..10_000).map(|_| TokenId(rng.gen_range(0..6))).collect();
        let mut cuts: Vec<usize> = (0..100).map(|_| rng.gen_range(1..=h.len())).collect();
        cuts.sort_unstable();
        let mut ix = ContextIndex::with_defaults();
        let mut done = 0;
        for cut in cuts {
            ix.extend(&h[done..cut]);
            done = cut;
            assert_eq!(
                ix.context_match(),
                context_match_scan(&h[..cut], &DEFAULT_NGRAM_LENGTHS, MAX_SPINE_CONTINUATION),
                "cut {cut}"
            );
        }
    }

    proptest! {
        #[test]
        fn incremental_equals_batch(
            a in proptest::collection::vec(0u32..4, 0..60),
            b in proptest::collection::vec(0u32..4, 0..60),
        ) {
            let mut inc = ContextIndex::with_defaults();
            inc.extend(&tokens(&a));
            inc.extend(&tokens(&b));
            let mut all = a.clone();
            all.extend(&b);
            let batch = indexed(&all);
            let m = inc.context_match();
            prop_assert_eq!(&m, &batch.context_match());
            prop_assert_eq!(&m, &context_match_scan(&tokens(&all), &DEFAULT_NGRAM_LENGTHS, 20));
            prop_assert!(m.chain.len() <= MAX_SPINE_CONTINUATION);
            prop_assert!(!m.consensus || !m.chain.is_empty());
            // verbatim slice of the history
            if !m.chain.is_empty() {
                let h = tokens(&all);
                prop_assert!(h.windows(m.chain.len()).any(|w| w == m.chain.as_slice()));
            }
        }
    }
}
