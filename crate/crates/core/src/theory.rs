//! Expected-yield analysis of draft-tree topologies under the independent
//! acceptance model: every spine token is accepted with probability `p_s`,
//! every branch token with `p_t`, all independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::DecodeStats;
use crate::error::{invalid, Error, Result};
use crate::model::{hash_words, TokenId};
use crate::tree::{complete_levels, linear_allocation, Source, SpineTree};

/// Probability that at least one of `w` independent branches is accepted.
pub fn phi(w: usize, p_t: f64) -> f64 {
    1.0 - (1.0 - p_t).powi(w as i32)
}

/// Expected extension behind an accepted branch token with branch depth
/// `depth`: `sum_{k=1}^{depth-1} p_t^k`.
pub fn ell_bar(p_t: f64, depth: usize) -> f64 {
    (1..depth).map(|k| p_t.powi(k as i32)).sum()
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceModel {
    pub p_s: f64,
    pub p_t: f64,
}

impl AcceptanceModel {
    pub fn new(p_s: f64, p_t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_s) || !(0.0..=1.0).contains(&p_t) {
            return Err(invalid(format!("acceptance rates must lie in [0, 1]: p_s={p_s}, p_t={p_t}")));
        }
        Ok(AcceptanceModel { p_s, p_t })
    }
}

/// Spine of length `widths.len()` with `widths[i]` branches at the node
/// reached after `i` spine tokens (the root for `i = 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeShape {
    pub widths: Vec<usize>,
    pub depth: usize,
    pub budget: usize,
}

impl TreeShape {
    pub fn new(widths: Vec<usize>, depth: usize, budget: usize) -> Result<Self> {
        let s = TreeShape { widths, depth, budget };
        s.validate()?;
        Ok(s)
    }

    /// A shape whose budget is exactly what it uses.
    pub fn tight(widths: Vec<usize>, depth: usize) -> Self {
        let budget = widths.len() + widths.iter().sum::<usize>();
        TreeShape { widths, depth, budget }
    }

    pub fn spine_len(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(invalid("branch depth must be at least 1"));
        }
        let used = self.spine_len() + self.widths.iter().sum::<usize>();
        if used > self.budget {
            return Err(Error::BudgetExceeded { used, budget: self.budget });
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YieldComponents {
    /// `sum_{i=1}^m p_s^i`
    pub spine: f64,
    /// Expected tokens recovered through branches after a spine mismatch.
    pub synergy: f64,
    pub bonus: f64,
    pub total: f64,
}

/// Branch term of the yield: `sum_i p_s^i (1 - p_s) phi(w_i) (1 + ell_bar)`.
pub fn synergy(p_s: f64, p_t: f64, widths: &[usize], depth: usize) -> f64 {
    let ext = 1.0 + ell_bar(p_t, depth);
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| p_s.powi(i as i32) * (1.0 - p_s) * phi(w, p_t) * ext)
        .sum()
}

/// Analytic lower bound on the expected tokens per call of a spine tree.
pub fn spine_yield(model: AcceptanceModel, shape: &TreeShape) -> Result<YieldComponents> {
    shape.validate()?;
    let spine: f64 = (1..=shape.spine_len()).map(|i| model.p_s.powi(i as i32)).sum();
    let synergy = synergy(model.p_s, model.p_t, &shape.widths, shape.depth);
    Ok(YieldComponents { spine, synergy, bonus: 1.0, total: spine + synergy + 1.0 })
}

/// The tree the analytic bound describes exactly: a spine plus, at every
/// spine position, `w_i` independent branch chains of `depth` nodes each.
pub fn independent_chain_tree(shape: &TreeShape) -> SpineTree {
    let m = shape.spine_len();
    let size = 1 + m + shape.widths.iter().sum::<usize>() * shape.depth;
    let mut tree = SpineTree::new(TokenId(0), size);
    let mut next_token = 1u32;
    let mut fresh = || {
        next_token += 1;
        TokenId(next_token)
    };
    let mut spine = vec![0usize];
    for _ in 0..m {
        let last = *spine.last().unwrap();
        spine.push(tree.add_child(last, fresh(), Source::Pld, 1.0).expect("sized"));
    }
    for (i, &w) in shape.widths.iter().enumerate() {
        for _ in 0..w {
            let mut at = spine[i];
            for _ in 0..shape.depth {
                at = tree.add_child(at, fresh(), Source::Tr, 1.0).expect("sized");
            }
        }
    }
    tree
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

const MC_CHUNK: u64 = 1 << 14;
const TAG_MC: u64 = 0x4d43_5949_454c_4400;

/// One trial: sample acceptance lazily along the walk, spine children first,
/// then branch children in index order. Returns accepted length + 1.
fn mc_trial(tree: &SpineTree, model: AcceptanceModel, order: &[Vec<usize>], rng: &mut ChaCha8Rng) -> u64 {
    let mut v = 0;
    let mut len = 1;
    'walk: loop {
        for &c in &order[v] {
            let p = match tree.node(c).source {
                Source::Pld => model.p_s,
                Source::Tr => model.p_t,
            };
            if rng.gen::<f64>() < p {
                v = c;
                len += 1;
                continue 'walk;
            }
        }
        return len;
    }
}

/// Monte-Carlo mean of the accepted path length plus one (the bonus token).
///
/// Trials run in fixed-size chunks, each with its own RNG stream derived
/// from `seed`; sums are integers, so the result does not depend on how the
/// chunks are scheduled across threads.
pub fn monte_carlo_yield(model: AcceptanceModel, tree: &SpineTree, trials: u64, seed: u64) -> Result<MonteCarloEstimate> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let order: Vec<Vec<usize>> = (0..tree.len())
        .map(|v| {
            let mut cs = tree.children(v).to_vec();
            cs.sort_by_key(|&c| (tree.node(c).source == Source::Tr, c));
            cs
        })
        .collect();
    let chunks = trials.div_ceil(MC_CHUNK);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[seed, TAG_MC, c]));
            let n = MC_CHUNK.min(trials - c * MC_CHUNK);
            let (mut s, mut sq) = (0u64, 0u64);
            for _ in 0..n {
                let y = mc_trial(tree, model, &order, &mut rng);
                s += y;
                sq += y * y;
            }
            (s, sq)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = sum as f64 / n;
    let var = if trials > 1 { ((sum_sq as f64) - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
    Ok(MonteCarloEstimate { mean, stderr: (var / n).sqrt(), trials })
}

/// Yield of the balanced `k`-ary tree using complete levels within `budget`
/// drafted nodes: `q = 1 - (1 - p_t)^k`, `tau = sum_{d=1}^{D} q^d + 1`.
pub fn iso_yield(k: usize, budget: usize, p_t: f64) -> Result<f64> {
    if k == 0 {
        return Err(invalid("fan-out must be at least 1"));
    }
    let q = phi(k, p_t);
    let levels = complete_levels(k, budget);
    Ok(1.0 + (1..=levels).map(|d| q.powi(d as i32)).sum::<f64>())
}

/// Best balanced tree over every fan-out `1..=budget`. Returns `(k, tau)`.
pub fn best_iso(budget: usize, p_t: f64) -> (usize, f64) {
    (1..=budget.max(1))
        .map(|k| (k, iso_yield(k, budget, p_t).expect("k >= 1")))
        .fold((1, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best })
}

/// Best spine over every spine length `1..=budget`, with branches allocated
/// by [`linear_allocation`]. Returns `(widths, tau)`.
pub fn best_spine(model: AcceptanceModel, budget: usize, depth: usize) -> Result<(Vec<usize>, f64)> {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for m in 1..=budget {
        let widths = linear_allocation(model.p_s, model.p_t, m, budget - m)?;
        let tau = spine_yield(model, &TreeShape::new(widths.clone(), depth, budget)?)?.total;
        if tau > best.1 {
            best = (widths, tau);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub p_s: f64,
    pub p_t: f64,
    pub budget: usize,
    pub best_k: usize,
    pub tau_iso: f64,
    pub best_m: usize,
    pub tau_spine: f64,
    pub gap: f64,
    /// Heterogeneous point where the spine does not strictly win.
    pub violation: bool,
}

/// Grid points `(p_s, p_t, budget)`.
pub fn dominance_scan(points: &[(f64, f64, usize)], depth: usize) -> Result<Vec<DominanceRow>> {
    points
        .par_iter()
        .map(|&(p_s, p_t, budget)| {
            let model = AcceptanceModel::new(p_s, p_t)?;
            let (best_k, tau_iso) = best_iso(budget, p_t);
            let (widths, tau_spine) = best_spine(model, budget, depth)?;
            let gap = tau_spine - tau_iso;
            Ok(DominanceRow {
                p_s,
                p_t,
                budget,
                best_k,
                tau_iso,
                best_m: widths.len(),
                tau_spine,
                gap,
                violation: p_s > p_t && gap <= 0.0,
            })
        })
        .collect()
}

/// Default scan: `p_t` in {0.02, 0.033, 0.05}, `p_s / p_t` in {2, 4, 8, 18},
/// budgets {10, 30, 60}.
pub fn default_dominance_grid() -> Vec<(f64, f64, usize)> {
    let mut out = Vec::new();
    for p_t in [0.02, 0.033, 0.05] {
        for ratio in [2.0, 4.0, 8.0, 18.0] {
            for b in [10, 30, 60] {
                out.push((p_t * ratio, p_t, b));
            }
        }
    }
    out
}

/// Measured acceptance rates and their ratio.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    /// `None` when no spine token was offered.
    pub p_s: Option<f64>,
    pub p_t: Option<f64>,
    /// `p_s / p_t`; infinite when `p_t` is zero, `None` when either rate is
    /// undefined.
    pub ratio: Option<f64>,
}

/// Sentinel rendering used in reports: `inf` for an infinite ratio, `na`
/// when undefined.
pub fn format_ratio(r: Option<f64>) -> String {
    match r {
        None => "na".to_string(),
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => format!("{x}"),
    }
}

pub fn measure_heterogeneity(logs: &[DecodeStats]) -> Result<Heterogeneity> {
    let calls: usize = logs.iter().map(|s| s.calls).sum();
    if calls == 0 {
        return Err(Error::NoCycles);
    }
    let sum = |f: fn(&DecodeStats) -> usize| logs.iter().map(f).sum::<usize>();
    let rate = |acc: usize, off: usize| (off > 0).then(|| acc as f64 / off as f64);
    let p_s = rate(sum(|s| s.accepted_pld), sum(|s| s.offered_pld));
    let p_t = rate(sum(|s| s.accepted_tr), sum(|s| s.offered_tr));
    let ratio = match (p_s, p_t) {
        (Some(s), Some(t)) if t > 0.0 => Some(s / t),
        (Some(s), Some(_)) if s > 0.0 => Some(f64::INFINITY),
        _ => None,
    };
    Ok(Heterogeneity { p_s, p_t, ratio })
}

/// Input of one bound check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSetting {
    pub id: String,
    pub p_s: f64,
    pub p_t: f64,
    pub m: usize,
    pub budget: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn default_depth() -> usize {
    6
}

/// One output row; field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub setting: String,
    pub p_s: f64,
    pub p_t: f64,
    pub m: usize,
    pub budget: usize,
    pub tau_bound: f64,
    pub tau_meas: f64,
    pub stderr: f64,
    pub tau_iso: f64,
    pub ratio: f64,
}

impl BoundRow {
    pub const HEADER: [&'static str; 10] =
        ["setting", "p_s", "p_t", "m", "B", "tau_bound", "tau_meas", "stderr", "tau_iso", "ratio"];

    pub fn valid(&self) -> bool {
        self.tau_bound <= self.tau_meas + 3.0 * self.stderr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub violations: usize,
    /// Pearson correlation of `tau_bound / tau_iso` against `p_s / p_t`.
    pub correlation: Option<f64>,
}

// Keeps the logarithms in the allocation slope finite.
fn clamp_rate(p: f64) -> f64 {
    p.clamp(1e-6, 1.0 - 1e-6)
}

/// For every setting: analytic bound with the linear allocation, its
/// Monte-Carlo estimate on the matching independent-chain tree, and the
/// fan-out-3 balanced tree for reference.
pub fn verify_bound(settings: &[BoundSetting], trials: u64, seed: u64) -> Result<BoundReport> {
    let rows = settings
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.m == 0 || s.m > s.budget {
                return Err(invalid(format!("setting {}: spine length {} outside 1..={}", s.id, s.m, s.budget)));
            }
            let model = AcceptanceModel::new(s.p_s, s.p_t)?;
            // measured rates can invert on degenerate runs; allocate as if equal
            let (ps, pt) = (clamp_rate(s.p_s.max(s.p_t)), clamp_rate(s.p_t));
            let widths = linear_allocation(ps, pt, s.m, s.budget - s.m)?;
            let shape = TreeShape::new(widths, s.depth, s.budget)?;
            let tau_bound = spine_yield(model, &shape)?.total;
            let mc = monte_carlo_yield(model, &independent_chain_tree(&shape), trials, hash_words(&[seed, i as u64]))?;
            let tau_iso = iso_yield(3, s.budget, s.p_t)?;
            Ok(BoundRow {
                setting: s.id.clone(),
                p_s: s.p_s,
                p_t: s.p_t,
                m: s.m,
                budget: s.budget,
                tau_bound,
                tau_meas: mc.mean,
                stderr: mc.stderr,
                tau_iso,
                ratio: tau_bound / tau_iso,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = rows.iter().filter(|r| !r.valid()).count();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.p_t > 0.0)
        .map(|r| (r.p_s / r.p_t, r.ratio))
        .unzip();
    Ok(BoundReport { correlation: pearson(&xs, &ys), rows, violations })
}

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(0, 0.7), 0.0);
        assert_eq!(phi(2, 0.5), 0.75);
        // 1 - 0.967^10, evaluated by repeated multiplication
        let mut r = 1.0;
        for _ in 0..10 {
            r *= 0.967;
        }
        assert!(close(phi(10, 0.033), 1.0 - r, 1e-15));
        assert!(close(phi(10, 0.033), 0.2851, 5e-5));
    }

    #[test]
    fn ell_bar_values() {
        assert_eq!(ell_bar(0.0, 6), 0.0);
        assert_eq!(ell_bar(1.0, 6), 5.0);
        assert!(close(ell_bar(0.1, 6), 0.11111, 1e-12));
        // closed form p (1 - p^(D-1)) / (1 - p)
        for &p in &[0.05, 0.3, 0.9] {
            assert!(close(ell_bar(p, 6), p * (1.0 - p.powi(5)) / (1.0 - p), 1e-12));
        }
        assert_eq!(ell_bar(0.5, 1), 0.0);
    }

    #[test]
    fn spine_yield_edge_cases() {
        let m = AcceptanceModel::new(0.4, 0.1).unwrap();
        let y = spine_yield(m, &TreeShape::tight(vec![0], 6)).unwrap();
        assert!(close(y.total, 1.4, 1e-15));
        assert_eq!(y.synergy, 0.0);
        let z = AcceptanceModel::new(0.0, 0.0).unwrap();
        assert_eq!(spine_yield(z, &TreeShape::tight(vec![3, 2], 6)).unwrap().total, 1.0);
        assert!(TreeShape::new(vec![3, 3], 6, 7).is_err());
    }

    #[test]
    fn spine_yield_hand_value() {
        // p_s = 0.21, p_t = 0.033, w = [3, 3, 2, 2, 1], D = 6, summed term by
        // term with independent arithmetic
        let (ps, pt): (f64, f64) = (0.21, 0.033);
        let spine = ps + ps * ps + ps.powi(3) + ps.powi(4) + ps.powi(5);
        let ext = 1.0 + pt + pt * pt + pt.powi(3) + pt.powi(4) + pt.powi(5);
        let f = |w: i32| 1.0 - (1.0 - pt).powi(w);
        let syn = (1.0 - ps) * ext * (f(3) + ps * f(3) + ps * ps * f(2) + ps.powi(3) * f(2) + ps.powi(4) * f(1));
        let y = spine_yield(AcceptanceModel::new(ps, pt).unwrap(), &TreeShape::tight(vec![3, 3, 2, 2, 1], 6)).unwrap();
        assert!(close(y.total, spine + syn + 1.0, 1e-14));
        assert!(close(y.total, 1.363266, 5e-7), "{}", y.total);
    }

    #[test]
    fn iso_yield_values() {
        assert!(close(iso_yield(3, 12, 0.5).unwrap(), 2.640625, 1e-15));
        let chain: f64 = 1.0 + (1..=5).map(|d| 0.3f64.powi(d)).sum::<f64>();
        assert!(close(iso_yield(1, 5, 0.3).unwrap(), chain, 1e-15));
        assert_eq!(iso_yield(4, 60, 0.0).unwrap(), 1.0);
        assert!(iso_yield(0, 60, 0.1).is_err());
    }

    #[test]
    fn monte_carlo_single_node_and_chain() {
        let one = TreeShape::tight(vec![0], 1);
        let t = independent_chain_tree(&one);
        let e = monte_carlo_yield(AcceptanceModel::new(1.0, 0.0).unwrap(), &t, 1000, 1).unwrap();
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.stderr, 0.0);

        let chain = TreeShape::tight(vec![0; 5], 1);
        let m = AcceptanceModel::new(0.6, 0.0).unwrap();
        let e = monte_carlo_yield(m, &independent_chain_tree(&chain), 200_000, 2).unwrap();
        let want: f64 = 1.0 + (1..=5).map(|i| 0.6f64.powi(i)).sum::<f64>();
        assert!((e.mean - want).abs() <= 3.0 * e.stderr, "{} vs {want}", e.mean);
    }

    #[test]
    fn monte_carlo_is_tight_on_independent_chains() {
        let shape = TreeShape::tight(vec![3, 3, 2, 2, 1], 6);
        let m = AcceptanceModel::new(0.5, 0.3).unwrap();
        let e = monte_carlo_yield(m, &independent_chain_tree(&shape), 300_000, 7).unwrap();
        let tau = spine_yield(m, &shape).unwrap().total;
        assert!((e.mean - tau).abs() <= 3.0 * e.stderr, "{} vs {tau} ± {}", e.mean, e.stderr);
    }

    #[test]
    fn monte_carlo_independent_of_thread_count() {
        let shape = TreeShape::tight(vec![4, 2, 1], 6);
        let m = AcceptanceModel::new(0.7, 0.2).unwrap();
        let tree = independent_chain_tree(&shape);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo_yield(m, &tree, 100_000, 3).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn independent_chain_tree_layout() {
        let t = independent_chain_tree(&TreeShape::tight(vec![2, 1], 3));
        assert_eq!(t.len(), 1 + 2 + 3 * 3);
        assert_eq!(t.spine().len(), 2);
        assert_eq!(t.children(0).len(), 3); // spine child + 2 branches
        assert_eq!(t.nodes().iter().map(|n| n.depth).max(), Some(4));
    }

    #[test]
    fn dominance_on_default_grid() {
        let rows = dominance_scan(&default_dominance_grid(), 6).unwrap();
        assert_eq!(rows.len(), 36);
        assert!(rows.iter().all(|r| !r.violation && r.gap > 0.0));
        let rows = dominance_scan(&[(0.21, 0.033, 60)], 6).unwrap();
        assert!(rows[0].gap > 0.0);
    }

    #[test]
    fn heterogeneity_sentinels() {
        let s = DecodeStats { calls: 3, accepted_pld: 4, offered_pld: 4, accepted_tr: 0, offered_tr: 10, ..Default::default() };
        let h = measure_heterogeneity(&[s]).unwrap();
        assert_eq!(h.p_s, Some(1.0));
        assert_eq!(h.p_t, Some(0.0));
        assert_eq!(format_ratio(h.ratio), "inf");
        assert!(measure_heterogeneity(&[]).is_err());
        let s = DecodeStats { calls: 3, ..Default::default() };
        assert_eq!(format_ratio(measure_heterogeneity(&[s]).unwrap().ratio), "na");
    }

    #[test]
    fn verify_bound_small_sweep() {
        let settings: Vec<BoundSetting> = [(0.5, 0.1), (0.3, 0.1), (0.2, 0.2), (0.8, 0.05)]
            .iter()
            .enumerate()
            .map(|(i, &(p_s, p_t))| BoundSetting { id: format!("s{i}"), p_s, p_t, m: 4, budget: 30, depth: 6 })
            .collect();
        let r = verify_bound(&settings, 50_000, 11).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.correlation.unwrap() > 0.0);
        // the equal-rate setting gains least over the balanced tree
        let min = r.rows.iter().map(|x| x.ratio).fold(f64::INFINITY, f64::min);
        assert_eq!(r.rows[2].ratio, min);
    }

    #[test]
    fn pearson_basics() {
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0, 1e-12));
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, 1e-12));
        assert_eq!(pearson(&[1.0], &[1.0]), None);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    proptest! {
        #[test]
        fn components_sum_to_total(ps in 0.0f64..1.0, pt in 0.0f64..1.0, w in proptest::collection::vec(0usize..6, 1..6), d in 1usize..8) {
            let y = spine_yield(AcceptanceModel::new(ps, pt).unwrap(), &TreeShape::tight(w, d)).unwrap();
            prop_assert!((y.spine + y.synergy + y.bonus - y.total).abs() <= 1e-12);
        }

        #[test]
        fn yield_is_monotone(ps in 0.0f64..0.95, pt in 0.0f64..0.95, w in proptest::collection::vec(0usize..6, 1..6), d in 1usize..8, which in 0usize..4) {
            let m = AcceptanceModel::new(ps, pt).unwrap();
            let base = spine_yield(m, &TreeShape::tight(w.clone(), d)).unwrap().total;
            // Raising p_s trades branch recoveries for spine tokens; that only
            // pays off when no branch set is worth more than one token plus
            // the next position's branch value, which c_i <= 1 guarantees.
            let c_max = w.iter().map(|&x| phi(x, pt)).fold(0.0, f64::max) * (1.0 + ell_bar(pt, d));
            let bumped = match which {
                0 if c_max > 1.0 => return Ok(()),
                0 => spine_yield(AcceptanceModel::new(ps + 0.05, pt).unwrap(), &TreeShape::tight(w, d)),
                1 => spine_yield(AcceptanceModel::new(ps, pt + 0.05).unwrap(), &TreeShape::tight(w, d)),
                2 => {
                    let mut w2 = w;
                    w2.push(0);
                    let last = w2.len() - 1;
                    w2[last / 2] += 1;
                    spine_yield(m, &TreeShape::tight(w2, d))
                }
                _ => spine_yield(m, &TreeShape::tight(w, d + 1)),
            }.unwrap().total;
            prop_assert!(bumped >= base - 1e-12);
        }
    }
}
