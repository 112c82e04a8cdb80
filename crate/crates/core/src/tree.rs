//! Draft trees: the anisotropic spine tree, the isotropic k-ary baseline,
//! ancestor masks, and the linear branch-allocation rule.
//!
//! Node 0 is always the root and holds the anchor token (the last accepted
//! token). A tree with budget `B` holds at most `B` nodes including the root.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adjacency::{confidence_width, AdjacencyTable};
use crate::error::{invalid, Error, Result};
use crate::model::{Candidate, ModelQuery, QueryNode, TokenId};

/// Where a draft token came from.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    /// Context match (the spine).
    Pld,
    /// Transition table (branches).
    Tr,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Pld => "PLD",
            Source::Tr => "TR",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DraftNode {
    pub token: TokenId,
    pub source: Source,
    /// `None` only for the root.
    pub parent: Option<usize>,
    pub depth: usize,
    /// Transition score the node was attached with; 1.0 for spine nodes.
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct SpineTree {
    nodes: Vec<DraftNode>,
    children: Vec<Vec<usize>>,
    spine: Vec<usize>,
    budget: usize,
}

impl SpineTree {
    /// A tree holding only the root.
    pub fn new(anchor: TokenId, budget: usize) -> Self {
        SpineTree {
            nodes: vec![DraftNode { token: anchor, source: Source::Pld, parent: None, depth: 0, score: 1.0 }],
            children: vec![Vec::new()],
            spine: Vec::new(),
            budget: budget.max(1),
        }
    }

    /// A root followed by a plain chain of `tokens`, all tagged `source`.
    pub fn chain(anchor: TokenId, tokens: &[TokenId], source: Source) -> Self {
        let mut t = SpineTree::new(anchor, tokens.len() + 1);
        let mut last = 0;
        for &tok in tokens {
            last = t.add_child(last, tok, source, 1.0).expect("budget sized to fit");
        }
        t
    }

    pub fn anchor(&self) -> TokenId {
        self.nodes[0].token
    }

    pub fn nodes(&self) -> &[DraftNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &DraftNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn is_full(&self) -> bool {
        self.nodes.len() >= self.budget
    }

    /// Indices of the spine nodes in root-to-leaf order (root excluded).
    pub fn spine(&self) -> &[usize] {
        &self.spine
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn count_source(&self, source: Source) -> usize {
        self.nodes[1..].iter().filter(|n| n.source == source).count()
    }

    fn has_child_token(&self, parent: usize, token: TokenId) -> bool {
        self.children[parent].iter().any(|&c| self.nodes[c].token == token)
    }

    /// Adds a node unless the budget is exhausted or `parent` already has a
    /// child with the same token. A PLD node hung under the spine tip extends
    /// the spine.
    pub fn add_child(&mut self, parent: usize, token: TokenId, source: Source, score: f64) -> Option<usize> {
        if self.is_full() || parent >= self.nodes.len() || self.has_child_token(parent, token) {
            return None;
        }
        let idx = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(DraftNode { token, source, parent: Some(parent), depth, score });
        self.children.push(Vec::new());
        self.children[parent].push(idx);
        if source == Source::Pld && parent == self.spine.last().copied().unwrap_or(0) {
            self.spine.push(idx);
        }
        Some(idx)
    }

    /// Adds a node without the duplicate check, for adversarial tests.
    #[cfg(test)]
    pub(crate) fn force_child(&mut self, parent: usize, token: TokenId, source: Source) -> usize {
        let idx = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(DraftNode { token, source, parent: Some(parent), depth, score: 1.0 });
        self.children.push(Vec::new());
        self.children[parent].push(idx);
        idx
    }

    /// Two most recent context tokens at node `i`: `(token of parent, token)`.
    /// For the root the caller supplies the token before the anchor.
    pub fn key(&self, i: usize, before_anchor: Option<TokenId>) -> (Option<TokenId>, TokenId) {
        let n = &self.nodes[i];
        match n.parent {
            Some(p) => (Some(self.nodes[p].token), n.token),
            None => (before_anchor, n.token),
        }
    }

    /// Packs the non-root nodes into a model query over `base`, which must end
    /// with the anchor token.
    pub fn to_query<'a>(&self, base: &'a [TokenId], top_k: usize) -> ModelQuery<'a> {
        let nodes = self.nodes[1..]
            .iter()
            .map(|n| QueryNode {
                token: n.token,
                parent: n.parent.and_then(|p| p.checked_sub(1)),
            })
            .collect();
        ModelQuery::new(base).with_nodes(nodes).with_top_k(top_k)
    }

    /// Exact ancestor set of every node, root first.
    pub fn ancestor_mask(&self) -> Vec<Vec<usize>> {
        let parents: Vec<Option<usize>> = self.nodes.iter().map(|n| n.parent).collect();
        ancestor_sets(&parents).expect("parents precede children by construction")
    }

    /// One node per line, depth-first: `depth token source parent`, indented
    /// two spaces per level.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            let parent = n.parent.map_or("ROOT".to_string(), |p| p.to_string());
            let _ = writeln!(
                out,
                "{:indent$}{} {} {} {}",
                "",
                n.depth,
                n.token,
                n.source.as_str(),
                parent,
                indent = 2 * n.depth
            );
            stack.extend(self.children[i].iter().rev());
        }
        out
    }
}

/// Ancestor sets from a parent array. A parent that does not precede its
/// child is the only way to form a cycle and is rejected.
pub fn ancestor_sets(parents: &[Option<usize>]) -> Result<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(parents.len());
    for (i, p) in parents.iter().enumerate() {
        match *p {
            None => out.push(Vec::new()),
            Some(p) if p < i => {
                let mut set = out[p].clone();
                set.push(p);
                out.push(set);
            }
            Some(p) => return Err(Error::InvalidParent { node: i, parent: p }),
        }
    }
    Ok(out)
}

/// Budget parameters of one spine tree.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeBudget {
    /// Total nodes including the root.
    pub nodes: usize,
    /// Fraction of the budget the spine may take.
    pub spine_ratio: f64,
    /// Share of the non-spine budget that goes to spine branches rather than
    /// root branches.
    pub branch_ratio: f64,
    /// Maximum branch depth measured from the branching point.
    pub max_depth: usize,
}

impl Default for TreeBudget {
    fn default() -> Self {
        TreeBudget { nodes: 60, spine_ratio: 0.3, branch_ratio: 0.5, max_depth: 6 }
    }
}

/// How a budget is divided for a draft chain of a given length.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct BudgetSplit {
    pub spine: usize,
    pub root_branches: usize,
    pub spine_branches: usize,
}

// Guards products like 60 * 0.15 against landing a hair under an integer.
const FLOOR_EPS: f64 = 1e-9;

fn floor_eps(x: f64) -> usize {
    (x + FLOOR_EPS).floor().max(0.0) as usize
}

impl TreeBudget {
    pub fn split(&self, chain_len: usize) -> BudgetSplit {
        let free = self.nodes.saturating_sub(1);
        let spine = chain_len.min(floor_eps(self.nodes as f64 * self.spine_ratio)).min(free);
        let root_branches = floor_eps((free - spine) as f64 * (1.0 - self.branch_ratio));
        let spine_branches = free - spine - root_branches;
        BudgetSplit { spine, root_branches, spine_branches }
    }
}

/// Per-spine-node branch allocation with `1/i` weights:
/// `a_i = floor(total * (1/i) / H(n))` for `i = 1..=n`.
pub fn harmonic_allocation(total: usize, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let norm: f64 = (1..=n).map(|j| 1.0 / j as f64).sum();
    (1..=n)
        .map(|i| floor_eps(total as f64 * (1.0 / i as f64) / norm))
        .collect()
}

/// Feature switches used by ablations.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TreeOptions {
    pub spine_branches: bool,
    pub bigram: bool,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { spine_branches: true, bigram: true }
    }
}

struct Builder<'a> {
    tree: SpineTree,
    table: &'a AdjacencyTable,
    opts: TreeOptions,
    /// Branch-relative depth per node (1 for a branch root, 0 off-branch).
    branch_depth: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn successors(&self, key: (Option<TokenId>, TokenId)) -> Vec<Candidate> {
        let prev = if self.opts.bigram { key.0 } else { None };
        self.table.successors(prev, key.1, self.table.top_k())
    }

    fn add(&mut self, parent: usize, c: Candidate, branch_depth: usize) -> Option<usize> {
        let idx = self.tree.add_child(parent, c.token, Source::Tr, c.score)?;
        self.branch_depth.push(branch_depth);
        Some(idx)
    }

    /// Attaches up to `alloc` transition successors under `parent`, widths
    /// modulated by score relative to the best sibling. Returns the branch
    /// roots added.
    fn attach(&mut self, parent: usize, key: (Option<TokenId>, TokenId), alloc: usize) -> Vec<usize> {
        let mut added = Vec::new();
        if alloc == 0 {
            return added;
        }
        // Siblings are the candidates that can still be attached; a token
        // already under `parent` (the spine continuation) does not compete.
        let cands: Vec<Candidate> = self
            .successors(key)
            .into_iter()
            .filter(|c| !self.tree.has_child_token(parent, c.token))
            .collect();
        let Some(best) = cands.first().map(|c| c.score) else {
            return added;
        };
        for c in cands {
            if added.len() == alloc || self.tree.is_full() {
                break;
            }
            if confidence_width(c.score, best, alloc, self.table.min_score()) == 0 {
                continue;
            }
            if let Some(i) = self.add(parent, c, 1) {
                added.push(i);
            }
        }
        added
    }
}

/// Builds the spine tree for one cycle.
///
/// 1. Lay up to `floor(B * r)` draft tokens as a chain under the root.
/// 2. Attach root branches from the transition table.
/// 3. Attach branches to spine nodes with harmonically decaying widths.
/// 4. Extend every branch breadth-first with top-scoring successors, up to
///    `max_depth` per branch, until the budget is used.
///
/// `before_anchor` is the token preceding the anchor in the history (bigram
/// key for the root).
pub fn build_spine_tree(
    anchor: TokenId,
    before_anchor: Option<TokenId>,
    chain: &[TokenId],
    table: &AdjacencyTable,
    budget: &TreeBudget,
    opts: TreeOptions,
) -> SpineTree {
    let split = budget.split(chain.len());
    let mut b = Builder {
        tree: SpineTree::new(anchor, budget.nodes),
        table,
        opts,
        branch_depth: vec![0],
    };

    let mut last = 0;
    for &tok in &chain[..split.spine] {
        match b.tree.add_child(last, tok, Source::Pld, 1.0) {
            Some(i) => {
                b.branch_depth.push(0);
                last = i;
            }
            None => break,
        }
    }

    let mut branch_roots = b.attach(0, (before_anchor, anchor), split.root_branches);

    if opts.spine_branches {
        let spine = b.tree.spine.clone();
        let alloc = harmonic_allocation(split.spine_branches, spine.len());
        for (&node, a) in spine.iter().zip(alloc) {
            let key = b.tree.key(node, before_anchor);
            branch_roots.extend(b.attach(node, key, a));
        }
    }

    // Step 4: whatever is left of the budget (including allocations that found
    // no usable successors) goes to breadth-first chain extension.
    branch_roots.sort_by(|&x, &y| {
        b.tree.nodes[y]
            .score
            .total_cmp(&b.tree.nodes[x].score)
            .then(x.cmp(&y))
    });
    let mut queue: VecDeque<usize> = branch_roots.into();
    while let Some(v) = queue.pop_front() {
        if b.tree.is_full() {
            break;
        }
        let depth = b.branch_depth[v];
        if depth >= budget.max_depth {
            continue;
        }
        let key = b.tree.key(v, before_anchor);
        let next = b
            .successors(key)
            .into_iter()
            .find(|c| !b.tree.has_child_token(v, c.token));
        if let Some(c) = next {
            if let Some(i) = b.add(v, c, depth + 1) {
                queue.push_back(i);
            }
        }
    }
    b.tree
}

/// Depth of the complete balanced `k`-ary tree that fits in `budget` drafted
/// nodes: the largest `d` with `k + k^2 + ... + k^d <= budget`.
pub fn complete_levels(k: usize, budget: usize) -> usize {
    if k == 0 {
        return 0;
    }
    let (mut total, mut level, mut d) = (0usize, 1usize, 0usize);
    loop {
        level = level.saturating_mul(k);
        total = total.saturating_add(level);
        if total > budget {
            return d;
        }
        d += 1;
        if k == 1 && d >= budget {
            return d;
        }
    }
}

/// Balanced `k`-ary baseline over the same candidate pool. Every node ranks
/// the draft-chain continuation (when it lies on the matched path) ahead of
/// its transition successors and keeps the top `k`; only complete levels that
/// fit in the budget are built.
pub fn build_iso_tree(
    anchor: TokenId,
    before_anchor: Option<TokenId>,
    chain: &[TokenId],
    table: &AdjacencyTable,
    k: usize,
    nodes: usize,
    bigram: bool,
) -> SpineTree {
    let mut tree = SpineTree::new(anchor, nodes);
    let levels = complete_levels(k, nodes.saturating_sub(1));
    // spine position of nodes on the matched path
    let mut on_chain: Vec<Option<usize>> = vec![Some(0)];
    let mut frontier = vec![0usize];
    for _ in 0..levels {
        let mut next = Vec::new();
        for &v in &frontier {
            let mut ranked: Vec<(Candidate, Source)> = Vec::new();
            if let Some(pos) = on_chain[v] {
                if let Some(&t) = chain.get(pos) {
                    ranked.push((Candidate::new(t, 1.0), Source::Pld));
                }
            }
            let (prev, cur) = tree.key(v, before_anchor);
            let prev = if bigram { prev } else { None };
            for c in table.successors(prev, cur, table.top_k()) {
                if !ranked.iter().any(|(r, _)| r.token == c.token) {
                    ranked.push((c, Source::Tr));
                }
            }
            for (c, src) in ranked.into_iter().take(k) {
                if let Some(i) = tree.add_child(v, c.token, src, c.score) {
                    on_chain.push(match (src, on_chain[v]) {
                        (Source::Pld, Some(p)) => Some(p + 1),
                        _ => None,
                    });
                    next.push(i);
                }
            }
        }
        frontier = next;
    }
    tree
}

/// Slope of the optimal linear branch allocation, `|ln p_s| / |ln(1 - p_t)|`.
pub fn allocation_slope(p_s: f64, p_t: f64) -> f64 {
    p_s.ln().abs() / (1.0 - p_t).ln().abs()
}

fn check_rates(p_s: f64, p_t: f64) -> Result<()> {
    if !(p_s > 0.0 && p_s < 1.0 && p_t > 0.0 && p_t < 1.0) {
        return Err(invalid(format!("rates must lie in (0, 1): p_s={p_s}, p_t={p_t}")));
    }
    if p_s < p_t {
        return Err(invalid(format!("spine rate {p_s} below transition rate {p_t}")));
    }
    Ok(())
}

/// Continuous optimum of the branch allocation over `m` spine positions:
/// `w_i = w_0 - slope * i`, clipped at zero, with `sum w_i = total`.
pub fn continuous_allocation(p_s: f64, p_t: f64, m: usize, total: usize) -> Result<Vec<f64>> {
    check_rates(p_s, p_t)?;
    if m == 0 {
        return if total == 0 { Ok(Vec::new()) } else { Err(invalid("no spine positions to allocate to")) };
    }
    let slope = allocation_slope(p_s, p_t);
    let b = total as f64;
    // Shrink the active prefix until its last width is non-negative; the
    // clipped tail then carries nothing and the marginals on the prefix stay
    // equal.
    let mut active = m;
    let w0 = loop {
        let w0 = (b + slope * (active * (active - 1)) as f64 / 2.0) / active as f64;
        if active == 1 || w0 - slope * (active - 1) as f64 >= 0.0 {
            break w0;
        }
        active -= 1;
    };
    Ok((0..m)
        .map(|i| if i < active { (w0 - slope * i as f64).max(0.0) } else { 0.0 })
        .collect())
}

/// Integer branch widths: the continuous optimum rounded with the
/// largest-remainder method so the widths still sum to `total`.
pub fn linear_allocation(p_s: f64, p_t: f64, m: usize, total: usize) -> Result<Vec<usize>> {
    let w = continuous_allocation(p_s, p_t, m, total)?;
    Ok(largest_remainder(&w, total))
}

pub(crate) fn largest_remainder(w: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = w.iter().map(|x| floor_eps(*x)).collect();
    let assigned: usize = out.iter().sum();
    let mut rest = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = w[a] - out[a] as f64;
        let fb = w[b] - out[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tokens;
    use crate::theory::synergy;
    use proptest::prelude::*;

    fn c(t: u32, s: f64) -> Candidate {
        Candidate::new(TokenId(t), s)
    }

    fn table_with(rows: &[(Option<u32>, u32, &[(u32, f64)])]) -> AdjacencyTable {
        let mut a = AdjacencyTable::new(128);
        for (p, cur, obs) in rows {
            let cands: Vec<Candidate> = obs.iter().map(|&(t, s)| c(t, s)).collect();
            a.harvest(p.map(TokenId), TokenId(*cur), &cands);
        }
        a
    }

    #[test]
    fn harmonic_allocation_floors() {
        // weights 1, 1/2, 1/3 over H(3) = 11/6
        assert_eq!(harmonic_allocation(6, 3), vec![3, 1, 1]);
        assert_eq!(harmonic_allocation(3, 2), vec![2, 1]);
        assert!(harmonic_allocation(5, 0).is_empty());
        assert_eq!(harmonic_allocation(0, 4), vec![0, 0, 0, 0]);
    }

    #[test]
    fn budget_split_matches_hand_trace() {
        let b = TreeBudget { nodes: 8, spine_ratio: 0.5, branch_ratio: 0.5, max_depth: 6 };
        assert_eq!(b.split(2), BudgetSplit { spine: 2, root_branches: 2, spine_branches: 3 });
        let b = TreeBudget { nodes: 60, spine_ratio: 0.15, branch_ratio: 0.5, max_depth: 6 };
        assert_eq!(b.split(20).spine, 9);
        assert_eq!(b.split(0), BudgetSplit { spine: 0, root_branches: 29, spine_branches: 30 });
    }

    #[test]
    fn small_tree_hand_trace() {
        // anchor 1 with successors x=10, y=11, z=12; spine [4, 5]
        let table = table_with(&[
            (Some(0), 1, &[(10, 0.4), (11, 0.3), (12, 0.2), (4, 0.05)]),
            (Some(1), 4, &[(20, 0.5), (21, 0.4), (5, 0.1)]),
            (Some(4), 5, &[(30, 0.6), (31, 0.3)]),
        ]);
        let budget = TreeBudget { nodes: 8, spine_ratio: 0.5, branch_ratio: 0.5, max_depth: 6 };
        let t = build_spine_tree(TokenId(1), Some(TokenId(0)), &tokens(&[4, 5]), &table, &budget, TreeOptions::default());
        assert_eq!(t.len(), 8);
        assert_eq!(t.spine().len(), 2);
        let toks = |i: usize| -> Vec<u32> { t.children(i).iter().map(|&c| t.node(c).token.0).collect() };
        // root: spine token 4 then two root branches
        assert_eq!(toks(0), vec![4, 10, 11]);
        // spine node 4: a_1 = 2 branches, 5 is the spine child
        assert_eq!(toks(t.spine()[0]), vec![5, 20, 21]);
        // spine node 5: a_2 = 1 branch
        assert_eq!(toks(t.spine()[1]), vec![30]);
        assert_eq!(t.count_source(Source::Pld), 2);
        assert_eq!(t.count_source(Source::Tr), 5);
    }

    #[test]
    fn no_chain_gives_transition_only_tree() {
        let table = table_with(&[(Some(0), 1, &[(10, 0.5), (11, 0.3)]), (Some(1), 10, &[(12, 0.9)])]);
        let t = build_spine_tree(TokenId(1), Some(TokenId(0)), &[], &table, &TreeBudget::default(), TreeOptions::default());
        assert!(t.spine().is_empty());
        assert_eq!(t.count_source(Source::Pld), 0);
        // root branches 10, 11; 10 extends to 12
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn empty_table_gives_pure_chain() {
        let table = AdjacencyTable::new(64);
        let budget = TreeBudget { spine_ratio: 0.5, ..TreeBudget::default() };
        let t = build_spine_tree(TokenId(1), None, &tokens(&[2, 3, 4]), &table, &budget, TreeOptions::default());
        assert_eq!(t.len(), 4);
        assert_eq!(t.spine(), &[1, 2, 3]);
    }

    #[test]
    fn spine_continuation_token_is_not_duplicated_as_branch() {
        let table = table_with(&[(Some(0), 1, &[(4, 0.9), (7, 0.5)])]);
        let budget = TreeBudget { nodes: 10, spine_ratio: 0.5, branch_ratio: 0.5, max_depth: 6 };
        let t = build_spine_tree(TokenId(1), Some(TokenId(0)), &tokens(&[4]), &table, &budget, TreeOptions::default());
        let root_tokens: Vec<u32> = t.children(0).iter().map(|&c| t.node(c).token.0).collect();
        assert_eq!(root_tokens, vec![4, 7]);
        assert_eq!(t.node(t.children(0)[0]).source, Source::Pld);
    }

    #[test]
    fn weak_successors_are_pruned() {
        let table = table_with(&[(Some(0), 1, &[(10, 0.9), (11, 0.011), (12, 0.02)])]);
        let budget = TreeBudget { nodes: 10, spine_ratio: 0.5, branch_ratio: 0.5, max_depth: 1 };
        let t = build_spine_tree(TokenId(1), Some(TokenId(0)), &[], &table, &budget, TreeOptions::default());
        // 0.011 / 0.9 * 4 rounds to 0, 0.02 / 0.9 * 4 rounds to 0
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn ancestor_mask_examples() {
        let t = SpineTree::chain(TokenId(0), &tokens(&[1, 2]), Source::Pld);
        assert_eq!(t.ancestor_mask(), vec![vec![], vec![0], vec![0, 1]]);
        let mut t = SpineTree::new(TokenId(0), 5);
        t.add_child(0, TokenId(1), Source::Tr, 0.5);
        t.add_child(0, TokenId(2), Source::Tr, 0.4);
        assert_eq!(t.ancestor_mask(), vec![vec![], vec![0], vec![0]]);
        assert!(ancestor_sets(&[None, Some(2), Some(0)]).is_err());
    }

    #[test]
    fn ancestor_mask_matches_transitive_closure_on_random_tree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut t = SpineTree::new(TokenId(0), 60);
        while !t.is_full() {
            let p = rng.gen_range(0..t.len());
            t.add_child(p, TokenId(rng.gen_range(0..1000)), Source::Tr, 0.5);
        }
        let mask = t.ancestor_mask();
        for i in 0..t.len() {
            // independent walk: collect parents until the root
            let mut walk = Vec::new();
            let mut cur = t.node(i).parent;
            while let Some(p) = cur {
                walk.push(p);
                cur = t.node(p).parent;
            }
            walk.sort_unstable();
            assert_eq!(mask[i], walk);
            assert_eq!(mask[i].len(), t.node(i).depth);
        }
    }

    #[test]
    fn to_query_maps_root_children_to_base() {
        let t = SpineTree::chain(TokenId(9), &tokens(&[1, 2]), Source::Pld);
        let base = tokens(&[5, 9]);
        let q = t.to_query(&base, 3);
        assert_eq!(q.nodes, vec![
            QueryNode { token: TokenId(1), parent: None },
            QueryNode { token: TokenId(2), parent: Some(0) },
        ]);
    }

    #[test]
    fn dump_golden() {
        let mut t = SpineTree::chain(TokenId(9), &tokens(&[1, 2]), Source::Pld);
        t.budget = 5;
        t.add_child(0, TokenId(7), Source::Tr, 0.5);
        t.add_child(1, TokenId(8), Source::Tr, 0.5);
        let want = "\
0 9 PLD ROOT
  1 1 PLD 0
    2 2 PLD 1
    2 8 TR 1
  1 7 TR 0
";
        assert_eq!(t.dump(), want);
    }

    #[test]
    fn iso_levels() {
        assert_eq!(complete_levels(3, 59), 3); // 3 + 9 + 27 = 39
        assert_eq!(complete_levels(3, 12), 2);
        assert_eq!(complete_levels(5, 59), 2); // 5 + 25 = 30
        assert_eq!(complete_levels(1, 59), 59);
        assert_eq!(complete_levels(60, 59), 0);
    }

    #[test]
    fn iso_tree_fills_complete_levels_only() {
        // every token has 10 distinct successors
        let mut table = AdjacencyTable::new(4096);
        for p in 0..64u32 {
            for cur in 0..64u32 {
                let obs: Vec<Candidate> = (0..10).map(|i| c((cur * 7 + i * 13 + p) % 64, 0.5 - i as f64 * 0.04)).collect();
                table.harvest(Some(TokenId(p)), TokenId(cur), &obs);
            }
        }
        let t = build_iso_tree(TokenId(1), Some(TokenId(0)), &[], &table, 3, 60, true);
        assert_eq!(t.len(), 40);
        let per_depth = |d: usize| t.nodes().iter().filter(|n| n.depth == d).count();
        assert_eq!((per_depth(1), per_depth(2), per_depth(3)), (3, 9, 27));
        // chain tokens take the first slot on the matched path
        let t = build_iso_tree(TokenId(1), Some(TokenId(0)), &tokens(&[50, 51]), &table, 3, 60, true);
        assert_eq!(t.spine().len(), 2);
        assert_eq!(t.node(t.children(0)[0]).token, TokenId(50));
        assert_eq!(t.node(t.children(0)[0]).source, Source::Pld);
    }

    #[test]
    fn allocation_slope_values() {
        assert!((allocation_slope(0.5, 0.5) - 1.0).abs() < 1e-12);
        let s = allocation_slope(0.21, 0.033);
        assert!((s - 46.51).abs() < 0.01, "{s}");
        // steep slope puts everything on the first position
        assert_eq!(linear_allocation(0.21, 0.033, 4, 7).unwrap(), vec![7, 0, 0, 0]);
    }

    #[test]
    fn linear_allocation_equal_rates() {
        let w = continuous_allocation(0.5, 0.5, 3, 6).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-12 && (w[1] - 2.0).abs() < 1e-12 && (w[2] - 1.0).abs() < 1e-12);
        assert_eq!(linear_allocation(0.5, 0.5, 3, 6).unwrap(), vec![3, 2, 1]);
    }

    #[test]
    fn linear_allocation_rejects_inverted_rates() {
        assert!(linear_allocation(0.2, 0.3, 3, 6).is_err());
        assert!(linear_allocation(1.0, 0.3, 3, 6).is_err());
        assert!(linear_allocation(0.5, 0.3, 0, 6).is_err());
        assert_eq!(linear_allocation(0.5, 0.3, 0, 0).unwrap(), Vec::<usize>::new());
    }

    /// Exhaustive search over all compositions of `total` into `m` parts.
    fn best_synergy(p_s: f64, p_t: f64, m: usize, total: usize, depth: usize) -> (Vec<usize>, f64) {
        fn rec(m: usize, left: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
            if cur.len() == m - 1 {
                cur.push(left);
                f(cur);
                cur.pop();
                return;
            }
            for x in 0..=left {
                cur.push(x);
                rec(m, left - x, cur, f);
                cur.pop();
            }
        }
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        rec(m, total, &mut Vec::new(), &mut |w| {
            let s = synergy(p_s, p_t, w, depth);
            if s > best.1 + 1e-15 {
                best = (w.to_vec(), s);
            }
        });
        best
    }

    #[test]
    fn linear_allocation_matches_exhaustive_search() {
        let w = linear_allocation(0.5, 0.3, 3, 6).unwrap();
        let (opt, val) = best_synergy(0.5, 0.3, 3, 6, 6);
        assert_eq!(w, opt);
        assert!((synergy(0.5, 0.3, &w, 6) - val).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn tree_respects_budget_and_structure(
            chain in proptest::collection::vec(0u32..40, 0..25),
            rows in proptest::collection::vec((0u32..40, 0u32..40, proptest::collection::vec((0u32..40, 0.0f64..1.0), 1..10)), 0..80),
            nodes in 1usize..80,
            tier in 0usize..3,
            depth in 1usize..8,
            spine_branches in any::<bool>(),
            bigram in any::<bool>(),
        ) {
            let mut table = AdjacencyTable::new(40);
            for (p, cur, obs) in &rows {
                let cands: Vec<Candidate> = obs.iter().map(|&(t, s)| c(t, s)).collect();
                table.harvest(Some(TokenId(*p)), TokenId(*cur), &cands);
            }
            let budget = TreeBudget { nodes, spine_ratio: [0.15, 0.3, 0.5][tier], branch_ratio: 0.5, max_depth: depth };
            let chain = tokens(&chain);
            let t = build_spine_tree(TokenId(1), Some(TokenId(2)), &chain, &table, &budget, TreeOptions { spine_branches, bigram });
            prop_assert!(t.len() <= nodes.max(1));
            let split = budget.split(chain.len());
            prop_assert_eq!(t.spine().len(), split.spine);
            // PLD nodes are exactly the spine, a single root path
            let pld: Vec<usize> = (1..t.len()).filter(|&i| t.node(i).source == Source::Pld).collect();
            prop_assert_eq!(&pld, &t.spine().to_vec());
            for (k, &i) in t.spine().iter().enumerate() {
                prop_assert_eq!(t.node(i).depth, k + 1);
                prop_assert_eq!(t.node(i).token, chain[k]);
            }
            for i in 1..t.len() {
                let n = t.node(i);
                let p = n.parent.unwrap();
                prop_assert!(p < i);
                prop_assert_eq!(n.depth, t.node(p).depth + 1);
                prop_assert!(n.depth <= split.spine + depth);
                let dup = t.children(p).iter().filter(|&&s| t.node(s).token == n.token).count();
                prop_assert_eq!(dup, 1);
            }
            let alloc = harmonic_allocation(split.spine_branches, split.spine);
            prop_assert!(alloc.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(alloc.iter().sum::<usize>() <= split.spine_branches);
        }

        #[test]
        fn linear_allocation_preserves_total(ps in 0.05f64..0.95, ratio in 0.05f64..1.0, m in 1usize..8, total in 0usize..40) {
            let pt = (ps * ratio).max(0.001);
            let w = linear_allocation(ps, pt, m, total).unwrap();
            prop_assert_eq!(w.iter().sum::<usize>(), total);
            prop_assert!(w.windows(2).all(|x| x[0] + 1 >= x[1]));
        }
    }
}
