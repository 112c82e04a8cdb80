//! CSV front ends for the topology analysis.

use anyhow::{bail, Result};
use spinetree::theory::{
    default_dominance_grid, dominance_scan, independent_chain_tree, monte_carlo_yield, spine_yield, verify_bound,
    BoundReport, BoundRow, BoundSetting, DominanceRow,
};
use spinetree::tree::{allocation_slope, continuous_allocation};
use spinetree::{linear_allocation, AcceptanceModel, TreeShape};

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub struct YieldArgs {
    pub p_s: f64,
    pub p_t: f64,
    pub widths: Vec<usize>,
    pub depth: usize,
    /// Spine length; must match `widths` when given.
    pub m: Option<usize>,
    /// Monte-Carlo check on the independent-chain tree: `(trials, seed)`.
    pub monte_carlo: Option<(u64, u64)>,
}

/// One row: analytic components, optionally with a Monte-Carlo estimate.
pub fn yield_csv(a: &YieldArgs) -> Result<String> {
    if let Some(m) = a.m {
        if m != a.widths.len() {
            bail!("--m {m} does not match {} widths", a.widths.len());
        }
    }
    if a.widths.is_empty() {
        bail!("need at least one spine position");
    }
    let model = AcceptanceModel::new(a.p_s, a.p_t)?;
    let shape = TreeShape::new(a.widths.clone(), a.depth, usize::MAX)?;
    let y = spine_yield(model, &shape)?;
    let mut header = vec!["p_s", "p_t", "m", "widths", "D", "spine", "synergy", "bonus", "tau_bound"];
    let mut row = vec![
        a.p_s.to_string(),
        a.p_t.to_string(),
        a.widths.len().to_string(),
        join(&a.widths, ";"),
        a.depth.to_string(),
        format!("{:.6}", y.spine),
        format!("{:.6}", y.synergy),
        format!("{:.6}", y.bonus),
        format!("{:.6}", y.total),
    ];
    if let Some((trials, seed)) = a.monte_carlo {
        let tight = TreeShape::tight(a.widths.clone(), a.depth);
        let mc = monte_carlo_yield(model, &independent_chain_tree(&tight), trials, seed)?;
        header.extend(["tau_meas", "stderr", "trials"]);
        row.extend([format!("{:.6}", mc.mean), format!("{:.6}", mc.stderr), trials.to_string()]);
    }
    csv_string(&header, &[row])
}

/// One row per spine position: continuous optimum, rounded allocation, and
/// the slope.
pub fn allocate_csv(p_s: f64, p_t: f64, total: usize, m: usize) -> Result<String> {
    let cont = continuous_allocation(p_s, p_t, m, total)?;
    let rounded = linear_allocation(p_s, p_t, m, total)?;
    let slope = allocation_slope(p_s, p_t);
    let rows: Vec<Vec<String>> = (0..m)
        .map(|i| vec![i.to_string(), format!("{:.6}", cont[i]), rounded[i].to_string(), format!("{slope:.6}")])
        .collect();
    csv_string(&["i", "continuous", "rounded", "slope"], &rows)
}

pub const DOMINANCE_HEADER: [&str; 9] =
    ["p_s", "p_t", "B", "best_k", "tau_iso", "best_m", "tau_spine", "gap", "violation"];

pub fn dominance_rows(points: Option<&[(f64, f64, usize)]>, depth: usize) -> Result<Vec<DominanceRow>> {
    let grid = match points {
        Some(p) => p.to_vec(),
        None => default_dominance_grid(),
    };
    Ok(dominance_scan(&grid, depth)?)
}

pub fn dominance_csv(rows: &[DominanceRow]) -> Result<String> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.p_s.to_string(),
                r.p_t.to_string(),
                r.budget.to_string(),
                r.best_k.to_string(),
                format!("{:.6}", r.tau_iso),
                r.best_m.to_string(),
                format!("{:.6}", r.tau_spine),
                format!("{:.6}", r.gap),
                r.violation.to_string(),
            ]
        })
        .collect();
    csv_string(&DOMINANCE_HEADER, &rows)
}

/// Grid of bound checks: `p_s` in {0.3, 0.6, 0.9}, `p_t` in {0.05, 0.15,
/// 0.3}, spine length in {2, 4, 8}, and `(B, D)` in {(20, 3), (40, 6)}.
pub fn default_bound_grid() -> Vec<BoundSetting> {
    let mut out = Vec::new();
    for p_s in [0.3, 0.6, 0.9] {
        for p_t in [0.05, 0.15, 0.3] {
            for m in [2, 4, 8] {
                for (budget, depth) in [(20, 3), (40, 6)] {
                    out.push(BoundSetting { id: format!("s{:02}", out.len()), p_s, p_t, m, budget, depth });
                }
            }
        }
    }
    out
}

pub fn bound_report(settings: &[BoundSetting], trials: u64, seed: u64) -> Result<BoundReport> {
    Ok(verify_bound(settings, trials, seed)?)
}

pub fn bound_csv(rows: &[BoundRow]) -> Result<String> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.setting.clone(),
                r.p_s.to_string(),
                r.p_t.to_string(),
                r.m.to_string(),
                r.budget.to_string(),
                format!("{:.6}", r.tau_bound),
                format!("{:.6}", r.tau_meas),
                format!("{:.6}", r.stderr),
                format!("{:.6}", r.tau_iso),
                format!("{:.6}", r.ratio),
            ]
        })
        .collect();
    csv_string(&BoundRow::HEADER, &rows)
}
