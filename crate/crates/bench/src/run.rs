//! Running engines over corpora, checking losslessness, and assembling
//! reports.

use std::fmt;
use std::path::Path;

use anyhow::{Context as _, Result};
use rayon::prelude::*;
use serde::Serialize;
use spinetree::theory::{format_ratio, measure_heterogeneity};
use spinetree::{ar_decode, decode, Ablation, DecodeStats, EngineConfig, EngineKind, SyntheticModelSpec, TokenId};

use crate::corpus::Corpus;
use crate::stats::{self, Summary};

/// An engine produced a token stream that differs from greedy decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub corpus: String,
    pub prompt: usize,
    pub engine: String,
    pub position: usize,
    pub expected: Option<u32>,
    pub got: Option<u32>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |t: Option<u32>| t.map_or("end of output".to_string(), |t| format!("token {t}"));
        write!(
            f,
            "losslessness violation: engine {} on {} prompt {} diverges at position {} (expected {}, got {})",
            self.engine,
            self.corpus,
            self.prompt,
            self.position,
            show(self.expected),
            show(self.got)
        )
    }
}

impl std::error::Error for Divergence {}

/// First index where the streams differ, including a length mismatch.
pub fn first_divergence(reference: &[TokenId], got: &[TokenId]) -> Option<usize> {
    let common = reference.iter().zip(got).take_while(|(a, b)| a == b).count();
    (common < reference.len().max(got.len())).then_some(common)
}

pub fn check_lossless(corpus: &str, prompt: usize, engine: EngineKind, reference: &[TokenId], got: &[TokenId]) -> Result<(), Divergence> {
    match first_divergence(reference, got) {
        None => Ok(()),
        Some(position) => Err(Divergence {
            corpus: corpus.to_string(),
            prompt,
            engine: engine.to_string(),
            position,
            expected: reference.get(position).map(|t| t.0),
            got: got.get(position).map(|t| t.0),
        }),
    }
}

/// Greedy reference output for every prompt.
pub fn references(corpus: &Corpus) -> Result<Vec<Vec<TokenId>>> {
    corpus
        .prompts
        .par_iter()
        .map(|p| Ok(ar_decode(&corpus.model, p, corpus.spec.max_tokens)?))
        .collect()
}

#[derive(Clone, Debug)]
pub struct PromptRun {
    pub id: usize,
    pub tokens: Vec<TokenId>,
    pub stats: DecodeStats,
}

/// Runs one engine over every prompt, failing on the first divergence from
/// `reference`. Results come back in prompt order whatever the thread count.
pub fn run_engine(
    corpus: &Corpus,
    reference: &[Vec<TokenId>],
    kind: EngineKind,
    cfg: &EngineConfig,
) -> Result<Vec<PromptRun>> {
    corpus
        .prompts
        .par_iter()
        .enumerate()
        .map(|(id, p)| {
            let d = decode(&corpus.model, p, corpus.spec.max_tokens, kind, cfg)?;
            check_lossless(&corpus.spec.name, id, kind, &reference[id], &d.tokens)?;
            Ok(PromptRun { id, tokens: d.tokens, stats: d.stats })
        })
        .collect::<Vec<Result<PromptRun>>>()
        .into_iter()
        .collect()
}

pub fn mean_tau(runs: &[PromptRun]) -> f64 {
    stats::mean(&taus(runs))
}

fn taus(runs: &[PromptRun]) -> Vec<f64> {
    runs.iter().map(|r| r.stats.tau()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Baselines {
    pub pld: f64,
    pub tr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Heterogeneity {
    pub p_s: Option<f64>,
    pub p_t: Option<f64>,
    /// `inf` when no branch token was accepted, `na` when undefined.
    pub ratio: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PromptRow {
    pub prompt: usize,
    pub tau: f64,
    pub stats: DecodeStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SettingReport {
    pub corpus: String,
    pub model: SyntheticModelSpec,
    pub tau: Summary,
    pub tau_ar: f64,
    /// Mean τ over mean AR τ: model calls saved, not wall-clock.
    pub speedup_proxy: f64,
    pub baselines: Option<Baselines>,
    /// Mean τ over the better of the two single-source baselines.
    pub synergy_ratio: Option<f64>,
    pub heterogeneity: Heterogeneity,
    pub prompts: Vec<PromptRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub engine: EngineKind,
    pub config: EngineConfig,
    pub quartile_method: &'static str,
    pub cv_method: &'static str,
    pub settings: Vec<SettingReport>,
    /// CV of the per-setting mean τ; absent for a single setting.
    pub cross_setting_cv: Option<f64>,
}

/// Everything `decode` produced for one corpus, kept for the output files.
pub struct SettingRun {
    pub report: SettingReport,
    pub runs: Vec<PromptRun>,
}

/// Runs `kind` on the corpus together with AR (and PLD/TR when
/// `with_baselines`), checking each stream against greedy decoding.
pub fn run_setting(corpus: &Corpus, kind: EngineKind, cfg: &EngineConfig, with_baselines: bool) -> Result<SettingRun> {
    let reference = references(corpus)?;
    let runs = run_engine(corpus, &reference, kind, cfg)?;
    let tau_ar = mean_tau(&run_engine(corpus, &reference, EngineKind::Ar, cfg)?);
    let baselines = if with_baselines {
        Some(Baselines {
            pld: mean_tau(&run_engine(corpus, &reference, EngineKind::Pld, cfg)?),
            tr: mean_tau(&run_engine(corpus, &reference, EngineKind::Tr, cfg)?),
        })
    } else {
        None
    };
    let tau = Summary::of(&taus(&runs));
    let all: Vec<DecodeStats> = runs.iter().map(|r| r.stats.clone()).collect();
    let h = measure_heterogeneity(&all)?;
    let report = SettingReport {
        corpus: corpus.spec.name.clone(),
        model: corpus.spec.model.clone(),
        speedup_proxy: tau.mean / tau_ar,
        synergy_ratio: baselines.as_ref().map(|b| tau.mean / b.pld.max(b.tr)),
        tau,
        tau_ar,
        baselines,
        heterogeneity: Heterogeneity { p_s: h.p_s, p_t: h.p_t, ratio: format_ratio(h.ratio) },
        prompts: runs.iter().map(|r| PromptRow { prompt: r.id, tau: r.stats.tau(), stats: r.stats.clone() }).collect(),
    };
    Ok(SettingRun { report, runs })
}

pub fn run_report(corpora: &[Corpus], kind: EngineKind, cfg: &EngineConfig, with_baselines: bool) -> Result<(RunReport, Vec<SettingRun>)> {
    let settings = corpora
        .iter()
        .map(|c| run_setting(c, kind, cfg, with_baselines))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = settings.iter().map(|s| s.report.tau.mean).collect();
    let report = RunReport {
        engine: kind,
        config: cfg.clone(),
        quartile_method: stats::QUARTILE_METHOD,
        cv_method: stats::CV_METHOD,
        settings: settings.iter().map(|s| s.report.clone()).collect(),
        cross_setting_cv: (means.len() > 1).then(|| stats::cv(&means)),
    };
    Ok((report, settings))
}

pub const PER_PROMPT_HEADER: [&str; 19] = [
    "corpus",
    "prompt",
    "engine",
    "tokens",
    "calls",
    "tau",
    "accepted_pld",
    "accepted_tr",
    "bonus",
    "offered_pld",
    "offered_tr",
    "pure_pld_tokens",
    "spine_continuation_tokens",
    "pure_tr_tokens",
    "spine_continuation_cycles",
    "bypass_cycles",
    "tree_cycles",
    "fallback_cycles",
    "final_p_s",
];

/// Writes `report.json`, `per_prompt.csv` and `generated.txt` into `dir`.
pub fn write_decode_outputs(dir: &Path, report: &RunReport, settings: &[SettingRun]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("report.json"), json + "\n")?;

    let mut w = csv::Writer::from_path(dir.join("per_prompt.csv"))?;
    w.write_record(PER_PROMPT_HEADER)?;
    let engine = report.engine.to_string();
    for s in settings {
        for r in &s.runs {
            let st = &r.stats;
            w.write_record([
                s.report.corpus.clone(),
                r.id.to_string(),
                engine.clone(),
                st.tokens.to_string(),
                st.calls.to_string(),
                st.tau().to_string(),
                st.accepted_pld.to_string(),
                st.accepted_tr.to_string(),
                st.bonus.to_string(),
                st.offered_pld.to_string(),
                st.offered_tr.to_string(),
                st.category_tokens.pure_pld.to_string(),
                st.category_tokens.spine_continuation.to_string(),
                st.category_tokens.pure_tr.to_string(),
                st.category_cycles.spine_continuation.to_string(),
                st.bypass_cycles.to_string(),
                st.tree_cycles.to_string(),
                st.fallback_cycles.to_string(),
                st.final_p_s.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut text = String::new();
    for s in settings {
        for r in &s.runs {
            let toks: Vec<String> = r.tokens.iter().map(|t| t.0.to_string()).collect();
            text.push_str(&format!("{}\t{}\t{}\n", s.report.corpus, r.id, toks.join(" ")));
        }
    }
    std::fs::write(dir.join("generated.txt"), text)?;
    Ok(())
}

/// Row label for an ablation flag.
pub fn ablation_label(flag: &str) -> &'static str {
    match flag {
        "disable_spine_branches" => "no spine branches",
        "disable_bigram" => "unigram adjacency only",
        "disable_bypass" => "no bypass",
        "disable_spine" => "no context-match spine",
        "control_swap_sources" => "control: spine from transitions",
        _ => "full",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub config: String,
    pub label: String,
    /// Mean τ per corpus, in corpus order.
    pub tau: Vec<f64>,
    /// Relative change against the full engine, percent.
    pub delta_pct: Vec<f64>,
    pub mean_delta_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub corpora: Vec<String>,
    pub config: EngineConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, config: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config)
    }
}

/// Full spine engine plus one row per single ablation flag.
pub fn run_ablation(corpora: &[Corpus], cfg: &EngineConfig) -> Result<AblationReport> {
    let refs = corpora.iter().map(references).collect::<Result<Vec<_>>>()?;
    let mut configs = vec![("full".to_string(), cfg.clone().with_ablation(Ablation::default()))];
    for flag in Ablation::FLAGS {
        configs.push((flag.to_string(), cfg.clone().with_ablation(Ablation::single(flag)?)));
    }
    let mut rows: Vec<AblationRow> = Vec::new();
    for (name, c) in configs {
        let tau = corpora
            .iter()
            .zip(&refs)
            .map(|(corpus, r)| Ok(mean_tau(&run_engine(corpus, r, EngineKind::Spine, &c)?)))
            .collect::<Result<Vec<f64>>>()?;
        let full = rows.first().map_or(tau.clone(), |r| r.tau.clone());
        let delta_pct: Vec<f64> = tau.iter().zip(&full).map(|(t, f)| 100.0 * (t - f) / f).collect();
        rows.push(AblationRow {
            label: ablation_label(&name).to_string(),
            config: name,
            mean_delta_pct: stats::mean(&delta_pct),
            tau,
            delta_pct,
        });
    }
    Ok(AblationReport {
        corpora: corpora.iter().map(|c| c.spec.name.clone()).collect(),
        config: cfg.clone(),
        rows,
    })
}

/// Writes `ablation.json` and `ablation.csv` (one τ column per corpus, then
/// the mean relative change).
pub fn write_ablation_outputs(dir: &Path, report: &AblationReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(report)? + "\n")?;
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    let mut header = vec!["config".to_string(), "label".to_string()];
    header.extend(report.corpora.iter().map(|c| format!("tau_{c}")));
    header.push("mean_delta_pct".to_string());
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.config.clone(), r.label.clone()];
        rec.extend(r.tau.iter().map(|t| format!("{t:.4}")));
        rec.push(format!("{:.2}", r.mean_delta_pct));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use spinetree::tokens;

    #[test]
    fn divergence_positions() {
        let r = tokens(&[1, 2, 3]);
        assert_eq!(first_divergence(&r, &r), None);
        assert_eq!(first_divergence(&r, &tokens(&[1, 9, 3])), Some(1));
        assert_eq!(first_divergence(&r, &tokens(&[1, 2])), Some(2));
        assert_eq!(first_divergence(&r, &tokens(&[1, 2, 3, 4])), Some(3));
        let e = check_lossless("c", 4, EngineKind::Spine, &r, &tokens(&[1, 2])).unwrap_err();
        assert_eq!((e.position, e.expected, e.got), (2, Some(3), None));
        assert!(e.to_string().contains("position 2"));
    }

    #[test]
    fn every_flag_has_a_label() {
        for f in Ablation::FLAGS {
            assert_ne!(ablation_label(f), "full");
        }
    }
}
