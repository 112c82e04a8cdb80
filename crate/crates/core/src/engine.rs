//! Decoding loops: the spine-tree engine and its baselines.
//!
//! Every engine emits exactly the tokens of [`ar_decode`](crate::model::ar_decode);
//! they differ only in how many model calls that takes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adjacency::AdjacencyTable;
use crate::context::{ContextIndex, MatchResult};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelQuery, ModelResponse, TargetModel, TokenId, TokenSequence};
use crate::tree::{build_iso_tree, build_spine_tree, Source, SpineTree, TreeBudget, TreeOptions};
use crate::verify::{linear_verify, unified_greedy_walk, PathCategory, WalkResult};

/// Spine-ratio tiers keyed on the smoothed spine acceptance estimate.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpineRatioTiers {
    /// Ascending upper bounds of the first two tiers.
    pub thresholds: [f64; 2],
    pub ratios: [f64; 3],
}

impl Default for SpineRatioTiers {
    fn default() -> Self {
        SpineRatioTiers { thresholds: [0.2, 0.4], ratios: [0.15, 0.30, 0.50] }
    }
}

impl SpineRatioTiers {
    pub fn ratio(&self, p_s: f64) -> f64 {
        if p_s < self.thresholds[0] {
            self.ratios[0]
        } else if p_s < self.thresholds[1] {
            self.ratios[1]
        } else {
            self.ratios[2]
        }
    }
}

/// Feature switches for ablation runs. All off by default.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub disable_spine_branches: bool,
    pub disable_bigram: bool,
    pub disable_bypass: bool,
    pub disable_spine: bool,
    /// Keep the spine shape but fill it from the transition table's top-1
    /// chain instead of the context match.
    pub control_swap_sources: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 5] = [
        "disable_spine_branches",
        "disable_bigram",
        "disable_bypass",
        "disable_spine",
        "control_swap_sources",
    ];

    /// Only the named flag set.
    pub fn single(flag: &str) -> Result<Self> {
        let mut a = Ablation::default();
        match flag {
            "disable_spine_branches" => a.disable_spine_branches = true,
            "disable_bigram" => a.disable_bigram = true,
            "disable_bypass" => a.disable_bypass = true,
            "disable_spine" => a.disable_spine = true,
            "control_swap_sources" => a.control_swap_sources = true,
            other => return Err(Error::Config(format!("unknown ablation flag {other:?}"))),
        }
        Ok(a)
    }
}

/// Engine hyperparameters. JSON keys follow the parameter names one to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub context_match_ngram_lengths: Vec<usize>,
    pub max_spine_continuation: usize,
    pub transition_top_k: usize,
    pub tree_node_budget: usize,
    pub max_tree_depth: usize,
    pub min_score_threshold: f64,
    pub spine_branch_ratio: f64,
    pub ema_smoothing: f64,
    pub initial_spine_acceptance: f64,
    pub spine_ratio_tiers: SpineRatioTiers,
    pub linear_bypass_threshold: usize,
    pub ablation: Ablation,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            context_match_ngram_lengths: crate::context::DEFAULT_NGRAM_LENGTHS.to_vec(),
            max_spine_continuation: crate::context::MAX_SPINE_CONTINUATION,
            transition_top_k: crate::adjacency::DEFAULT_TOP_K,
            tree_node_budget: 60,
            max_tree_depth: 6,
            min_score_threshold: crate::adjacency::MIN_SCORE,
            spine_branch_ratio: 0.5,
            ema_smoothing: 0.3,
            initial_spine_acceptance: 0.3,
            spine_ratio_tiers: SpineRatioTiers::default(),
            linear_bypass_threshold: 8,
            ablation: Ablation::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: EngineConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit_open = |x: f64| x > 0.0 && x < 1.0;
        if self.context_match_ngram_lengths.iter().all(|&n| n == 0) {
            return Err(invalid("context_match_ngram_lengths needs a positive length"));
        }
        if self.tree_node_budget == 0 || self.max_tree_depth == 0 || self.transition_top_k == 0 {
            return Err(invalid("tree_node_budget, max_tree_depth and transition_top_k must be positive"));
        }
        if !unit_open(self.spine_branch_ratio) {
            return Err(invalid("spine_branch_ratio must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.ema_smoothing) || !(0.0..=1.0).contains(&self.initial_spine_acceptance) {
            return Err(invalid("ema_smoothing and initial_spine_acceptance must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.min_score_threshold) {
            return Err(invalid("min_score_threshold must lie in [0, 1)"));
        }
        let t = &self.spine_ratio_tiers;
        if !(t.thresholds[0] <= t.thresholds[1]) || !t.ratios.iter().all(|&r| unit_open(r)) {
            return Err(invalid("spine_ratio_tiers needs ascending thresholds and ratios in (0, 1)"));
        }
        Ok(())
    }

    pub fn tier(&self, p_s: f64) -> f64 {
        self.spine_ratio_tiers.ratio(p_s)
    }

    fn budget(&self, spine_ratio: f64) -> TreeBudget {
        TreeBudget {
            nodes: self.tree_node_budget,
            spine_ratio,
            branch_ratio: self.spine_branch_ratio,
            max_depth: self.max_tree_depth,
        }
    }
}

/// Smoothed spine acceptance estimate.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub p_s: f64,
    pub alpha: f64,
}

impl Default for EmaState {
    fn default() -> Self {
        EmaState { p_s: 0.3, alpha: 0.3 }
    }
}

impl EmaState {
    pub fn new(p_s: f64, alpha: f64) -> Self {
        EmaState { p_s, alpha }
    }
}

/// `p_s <- (1 - alpha) p_s + alpha * observation`, observation clamped to [0, 1].
pub fn update_ema(state: EmaState, observation: f64) -> EmaState {
    let obs = observation.clamp(0.0, 1.0);
    let p_s = ((1.0 - state.alpha) * state.p_s + state.alpha * obs).clamp(0.0, 1.0);
    EmaState { p_s, ..state }
}

/// Which decoding loop to run.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum EngineKind {
    /// One token per call.
    Ar,
    /// Spine tree with bypass, EMA tiers and AR fallback.
    Spine,
    /// Context match verified linearly.
    Pld,
    /// Transition-table tree only.
    Tr,
    /// Balanced `k`-ary tree over the same candidate pool.
    Iso(usize),
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineKind::Ar => f.write_str("ar"),
            EngineKind::Spine => f.write_str("spine"),
            EngineKind::Pld => f.write_str("pld"),
            EngineKind::Tr => f.write_str("tr"),
            EngineKind::Iso(k) => write!(f, "iso{k}"),
        }
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "ar" => EngineKind::Ar,
            "spine" => EngineKind::Spine,
            "pld" => EngineKind::Pld,
            "tr" => EngineKind::Tr,
            other => {
                let k = other
                    .strip_prefix("iso")
                    .map(|r| r.trim_start_matches([':', '-', '(']).trim_end_matches(')'))
                    .and_then(|r| r.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::Config(format!("unknown engine {s:?}")))?;
                EngineKind::Iso(k)
            }
        })
    }
}

impl Serialize for EngineKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EngineKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Accepted tokens and cycles per path category.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub empty: usize,
    pub pure_pld: usize,
    pub spine_continuation: usize,
    pub pure_tr: usize,
}

impl CategoryCounts {
    pub fn get(&self, c: PathCategory) -> usize {
        match c {
            PathCategory::Empty => self.empty,
            PathCategory::PurePld => self.pure_pld,
            PathCategory::SpineContinuation => self.spine_continuation,
            PathCategory::PureTr => self.pure_tr,
        }
    }

    fn add(&mut self, c: PathCategory, n: usize) {
        match c {
            PathCategory::Empty => self.empty += n,
            PathCategory::PurePld => self.pure_pld += n,
            PathCategory::SpineContinuation => self.spine_continuation += n,
            PathCategory::PureTr => self.pure_tr += n,
        }
    }

    pub fn total(&self) -> usize {
        self.empty + self.pure_pld + self.spine_continuation + self.pure_tr
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub tokens: usize,
    /// Model calls, prefill included.
    pub calls: usize,
    pub accepted_pld: usize,
    pub accepted_tr: usize,
    /// Bonus tokens, one per call (the prefill prediction counts as one).
    pub bonus: usize,
    pub offered_pld: usize,
    pub offered_tr: usize,
    /// Accepted draft tokens per path category (bonus tokens excluded).
    pub category_tokens: CategoryCounts,
    /// Verification cycles per path category.
    pub category_cycles: CategoryCounts,
    /// Tokens emitted per call, prefill first.
    pub cycle_lengths: Vec<usize>,
    pub bypass_cycles: usize,
    pub tree_cycles: usize,
    pub fallback_cycles: usize,
    /// Spine acceptance estimate after the last cycle.
    pub final_p_s: f64,
}

impl DecodeStats {
    /// Tokens per model call. 1.0 when no call was made.
    pub fn tau(&self) -> f64 {
        if self.calls == 0 {
            1.0
        } else {
            self.tokens as f64 / self.calls as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<TokenId>,
    pub stats: DecodeStats,
}

/// Mutable state of one decode run.
struct Run<'m, M: ?Sized> {
    model: &'m M,
    cfg: &'m EngineConfig,
    kind: EngineKind,
    max_tokens: usize,
    eos: TokenId,
    history: TokenSequence,
    index: ContextIndex,
    table: AdjacencyTable,
    ema: EmaState,
    stats: DecodeStats,
    done: bool,
}

#[derive(Copy, Clone, PartialEq, Eq)]
enum Cycle {
    Bypass,
    Tree,
    Fallback,
}

impl<'m, M: TargetModel + ?Sized> Run<'m, M> {
    fn new(model: &'m M, prompt: &[TokenId], max_tokens: usize, kind: EngineKind, cfg: &'m EngineConfig) -> Result<Self> {
        let history = TokenSequence::new(prompt.to_vec())?;
        let table = AdjacencyTable::with_params(model.vocab_size(), cfg.transition_top_k, cfg.min_score_threshold);
        Ok(Run {
            model,
            cfg,
            kind,
            max_tokens,
            eos: model.eos(),
            history,
            index: ContextIndex::new(&cfg.context_match_ngram_lengths, cfg.max_spine_continuation),
            table,
            ema: EmaState::new(cfg.initial_spine_acceptance, cfg.ema_smoothing),
            stats: DecodeStats::default(),
            done: max_tokens == 0,
        })
    }

    fn top_k(&self) -> usize {
        if self.kind == EngineKind::Ar {
            1
        } else {
            self.cfg.transition_top_k
        }
    }

    fn harvest_tree(&mut self, tree: &SpineTree, resp: &ModelResponse) {
        if self.kind == EngineKind::Ar {
            return;
        }
        let before = self.history.prev();
        let key = tree.key(0, before);
        self.table.harvest(key.0, key.1, &resp.anchor().top_k);
        for i in 1..tree.len() {
            let key = tree.key(i, before);
            self.table.harvest(key.0, key.1, &resp.node(i - 1).top_k);
        }
    }

    /// Appends accepted tokens plus the bonus, cut at the token limit or
    /// right after EOS.
    fn emit(&mut self, walk: &WalkResult) {
        let room = self.max_tokens - self.history.generated().len();
        let mut emitted = walk.emitted();
        if let Some(pos) = emitted.iter().position(|&t| t == self.eos) {
            emitted.truncate(pos + 1);
            self.done = true;
        }
        if emitted.len() >= room {
            emitted.truncate(room);
            self.done = true;
        }
        let drafted = emitted.len().min(walk.tokens.len());
        let pld = walk.sources[..drafted].iter().filter(|&&s| s == Source::Pld).count();
        self.stats.accepted_pld += pld;
        self.stats.accepted_tr += drafted - pld;
        self.stats.bonus += emitted.len() - drafted;
        let category = PathCategory::classify(&walk.sources[..drafted]);
        self.stats.category_tokens.add(category, drafted);
        self.stats.category_cycles.add(category, 1);
        self.stats.tokens += emitted.len();
        self.stats.cycle_lengths.push(emitted.len());
        self.history.extend_from_slice(&emitted);
        self.index.extend(&emitted);
    }

    fn prefill(&mut self) -> Result<()> {
        let resp = self.model.score_tree(&ModelQuery::new(self.history.tokens()).prefill().with_top_k(self.top_k()))?;
        self.stats.calls += 1;
        self.index.extend(self.history.tokens());
        if self.kind != EngineKind::Ar {
            let base = self.history.tokens();
            for (l, scores) in resp.prefix.iter().enumerate() {
                let prev = l.checked_sub(1).map(|p| base[p]);
                self.table.harvest(prev, base[l], &scores.top_k);
            }
        }
        let first = resp.anchor().greedy;
        let walk = WalkResult {
            accepted: Vec::new(),
            tokens: Vec::new(),
            sources: Vec::new(),
            bonus: first,
            category: PathCategory::Empty,
        };
        self.emit(&walk);
        Ok(())
    }

    /// Draft chain for this cycle after ablations.
    fn draft_chain(&self) -> MatchResult {
        if self.cfg.ablation.disable_spine && self.kind == EngineKind::Spine {
            return MatchResult::default();
        }
        let mut m = self.index.context_match();
        if self.cfg.ablation.control_swap_sources && self.kind == EngineKind::Spine && !m.chain.is_empty() {
            m.chain = self.top1_chain(m.chain.len());
        }
        m
    }

    /// Follows the transition table's best successor from the anchor.
    fn top1_chain(&self, len: usize) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(len);
        let (mut prev, mut cur) = (self.history.prev(), self.history.last());
        let bigram = !self.cfg.ablation.disable_bigram;
        while out.len() < len {
            let Some(next) = self.table.successors(prev.filter(|_| bigram), cur, 1).first().map(|c| c.token) else {
                break;
            };
            out.push(next);
            prev = Some(cur);
            cur = next;
        }
        out
    }

    fn run_cycle(&mut self) -> Result<()> {
        let anchor = self.history.last();
        let before = self.history.prev();
        let bigram = !self.cfg.ablation.disable_bigram;
        let table_has = self.table.has_successors(before.filter(|_| bigram), anchor);
        let k = self.cfg.transition_top_k;

        let d = match self.kind {
            EngineKind::Ar | EngineKind::Tr => MatchResult::default(),
            _ => self.draft_chain(),
        };
        let (cycle, tree) = match self.kind {
            EngineKind::Ar => (Cycle::Fallback, None),
            EngineKind::Pld => {
                if d.is_empty() {
                    (Cycle::Fallback, None)
                } else {
                    (Cycle::Bypass, Some(SpineTree::chain(anchor, &d.chain, Source::Pld)))
                }
            }
            EngineKind::Spine | EngineKind::Tr => {
                let bypass = !self.cfg.ablation.disable_bypass
                    && !d.is_empty()
                    && (d.chain.len() >= self.cfg.linear_bypass_threshold || d.consensus);
                if bypass {
                    (Cycle::Bypass, Some(SpineTree::chain(anchor, &d.chain, Source::Pld)))
                } else if !d.is_empty() || table_has {
                    let opts = TreeOptions {
                        spine_branches: !self.cfg.ablation.disable_spine_branches,
                        bigram,
                    };
                    let budget = self.cfg.budget(self.cfg.tier(self.ema.p_s));
                    let t = build_spine_tree(anchor, before, &d.chain, &self.table, &budget, opts);
                    (Cycle::Tree, Some(t))
                } else {
                    (Cycle::Fallback, None)
                }
            }
            EngineKind::Iso(width) => {
                if !d.is_empty() || table_has {
                    let t = build_iso_tree(anchor, before, &d.chain, &self.table, width, self.cfg.tree_node_budget, bigram);
                    (Cycle::Tree, Some(t))
                } else {
                    (Cycle::Fallback, None)
                }
            }
        };
        // A tree that found nothing to draft is just an AR step.
        let tree = tree.unwrap_or_else(|| SpineTree::new(anchor, 1));

        let (walk, resp) = match cycle {
            Cycle::Bypass => {
                let (w, r, _) = linear_verify(self.model, self.history.tokens(), &d.chain, k)?;
                (w, r)
            }
            _ => unified_greedy_walk(self.model, self.history.tokens(), &tree, k)?,
        };
        self.stats.calls += 1;
        self.harvest_tree(&tree, &resp);

        let offered_pld = tree.count_source(Source::Pld);
        self.stats.offered_pld += offered_pld;
        self.stats.offered_tr += tree.count_source(Source::Tr);
        let observation = match cycle {
            Cycle::Fallback => 0.0,
            _ if offered_pld == 0 => 0.0,
            _ => walk.accepted_from(Source::Pld) as f64 / offered_pld as f64,
        };
        match cycle {
            Cycle::Bypass => self.stats.bypass_cycles += 1,
            Cycle::Tree => self.stats.tree_cycles += 1,
            Cycle::Fallback => self.stats.fallback_cycles += 1,
        }
        self.ema = update_ema(self.ema, observation);
        self.emit(&walk);
        Ok(())
    }

    fn finish(mut self) -> Decoded {
        self.stats.final_p_s = self.ema.p_s;
        Decoded { tokens: self.history.generated().to_vec(), stats: self.stats }
    }
}

/// Decodes up to `max_tokens` tokens after `prompt` with the chosen engine.
/// Stops early right after EOS.
pub fn decode<M: TargetModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    max_tokens: usize,
    kind: EngineKind,
    cfg: &EngineConfig,
) -> Result<Decoded> {
    cfg.validate()?;
    let mut run = Run::new(model, prompt, max_tokens, kind, cfg)?;
    if !run.done {
        run.prefill()?;
    }
    while !run.done {
        run.run_cycle()?;
    }
    Ok(run.finish())
}

/// The spine-tree engine.
pub fn spine_decode<M: TargetModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    max_tokens: usize,
    cfg: &EngineConfig,
) -> Result<Decoded> {
    decode(model, prompt, max_tokens, EngineKind::Spine, cfg)
}
