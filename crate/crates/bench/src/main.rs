use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use spinetree::theory::BoundSetting;
use spinetree::{EngineConfig, EngineKind, SyntheticModelSpec};
use spinetree_bench::corpus::{Corpus, CorpusSpec};
use spinetree_bench::{run, theory_cmd, Divergence, UsageError};

#[derive(Parser)]
#[command(name = "spinetree", version, about = "Spine-tree speculative decoding experiments")]
struct Cli {
    /// Worker threads for prompt-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one engine over corpora, check losslessness, write reports.
    Decode(DecodeArgs),
    /// Full engine plus every single-flag ablation.
    Ablate(AblateArgs),
    /// Analytic yield, allocation, dominance and bound checks as CSV.
    #[command(subcommand)]
    Theory(TheoryCmd),
    /// Write a corpus file (spec plus sampled prompts).
    CorpusGen(CorpusGenArgs),
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Engine config JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    ngram_lengths: Option<Vec<usize>>,
    #[arg(long)]
    max_spine_continuation: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_score: Option<f64>,
    #[arg(long)]
    spine_branch_ratio: Option<f64>,
    #[arg(long)]
    ema_smoothing: Option<f64>,
    #[arg(long)]
    initial_spine_acceptance: Option<f64>,
    #[arg(long)]
    bypass_threshold: Option<usize>,
    #[arg(long)]
    disable_spine_branches: bool,
    #[arg(long)]
    disable_bigram: bool,
    #[arg(long)]
    disable_bypass: bool,
    #[arg(long)]
    disable_spine: bool,
    #[arg(long)]
    control_swap_sources: bool,
}

impl ConfigArgs {
    fn build(&self) -> Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                EngineConfig::from_json(&text).map_err(|e| UsageError(e.to_string()))?
            }
            None => EngineConfig::default(),
        };
        if let Some(v) = &self.ngram_lengths {
            cfg.context_match_ngram_lengths = v.clone();
        }
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$target = v; })*
            };
        }
        set!(
            max_spine_continuation => max_spine_continuation,
            top_k => transition_top_k,
            budget => tree_node_budget,
            max_depth => max_tree_depth,
            min_score => min_score_threshold,
            spine_branch_ratio => spine_branch_ratio,
            ema_smoothing => ema_smoothing,
            initial_spine_acceptance => initial_spine_acceptance,
            bypass_threshold => linear_bypass_threshold
        );
        let a = &mut cfg.ablation;
        a.disable_spine_branches |= self.disable_spine_branches;
        a.disable_bigram |= self.disable_bigram;
        a.disable_bypass |= self.disable_bypass;
        a.disable_spine |= self.disable_spine;
        a.control_swap_sources |= self.control_swap_sources;
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// Preset name or corpus JSON; repeat for several settings.
    #[arg(long, required = true)]
    corpus: Vec<String>,
    /// ar, spine, pld, tr or iso<k>.
    #[arg(long, default_value = "spine")]
    engine: String,
    /// Also run the PLD and TR baselines and report the synergy ratio.
    #[arg(long)]
    baselines: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, required = true)]
    corpus: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Subcommand)]
enum TheoryCmd {
    /// Expected yield of one spine shape.
    Yield {
        #[arg(long)]
        ps: f64,
        #[arg(long)]
        pt: f64,
        #[arg(long)]
        m: Option<usize>,
        /// Branch widths per spine position, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        w: Vec<usize>,
        #[arg(long = "D", default_value_t = 6)]
        depth: usize,
        /// Add a Monte-Carlo estimate with this many trials.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear branch allocation against its continuous optimum.
    Allocate {
        #[arg(long)]
        ps: f64,
        #[arg(long)]
        pt: f64,
        /// Branch nodes to distribute.
        #[arg(long)]
        bt: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Best spine against best balanced tree over a grid.
    Dominance {
        /// Only `default` is built in; pass the lists below for a custom grid.
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        pt: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        #[arg(long = "D", default_value_t = 6)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic bound against Monte-Carlo yield.
    VerifyBound {
        /// JSON list of settings; the built-in grid when absent.
        #[arg(long)]
        settings: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CorpusGenArgs {
    /// Start from a preset; the flags below override its fields.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    name: Option<String>,
    /// markov-order-2 or template-repeater.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    repetition: Option<f64>,
    #[arg(long)]
    prompts: Option<usize>,
    #[arg(long)]
    prompt_len: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn load_corpora(names: &[String]) -> Result<Vec<Corpus>> {
    names
        .iter()
        .map(|n| CorpusSpec::resolve(n).map_err(|e| UsageError(e.to_string()))?.materialize())
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let cfg = a.config.build()?;
    let kind: EngineKind = a.engine.parse().map_err(usage)?;
    let corpora = load_corpora(&a.corpus)?;
    let (report, settings) = run::run_report(&corpora, kind, &cfg, a.baselines)?;
    run::write_decode_outputs(&a.out, &report, &settings)?;
    for s in &report.settings {
        let synergy = s.synergy_ratio.map_or(String::new(), |r| format!(" synergy {r:.3}"));
        eprintln!(
            "{} {}: tau mean {:.3} median {:.3} iqr {:.3}{}",
            s.corpus, kind, s.tau.mean, s.tau.median, s.tau.iqr, synergy
        );
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.config.build()?;
    let corpora = load_corpora(&a.corpus)?;
    let report = run::run_ablation(&corpora, &cfg)?;
    run::write_ablation_outputs(&a.out, &report)?;
    for r in &report.rows {
        eprintln!("{:32} {:+.2}%", r.label, r.mean_delta_pct);
    }
    Ok(())
}

fn cmd_theory(t: TheoryCmd) -> Result<()> {
    match t {
        TheoryCmd::Yield { ps, pt, m, w, depth, trials, seed, out } => {
            let args = theory_cmd::YieldArgs {
                p_s: ps,
                p_t: pt,
                widths: w,
                depth,
                m,
                monte_carlo: trials.map(|n| (n, seed)),
            };
            emit(out.as_deref(), &theory_cmd::yield_csv(&args).map_err(usage)?)
        }
        TheoryCmd::Allocate { ps, pt, bt, m, out } => {
            emit(out.as_deref(), &theory_cmd::allocate_csv(ps, pt, bt, m).map_err(usage)?)
        }
        TheoryCmd::Dominance { grid, ratios, pt, budgets, depth, out } => {
            let custom = match (ratios, pt, budgets) {
                (None, None, None) if grid == "default" => None,
                (Some(r), Some(p), Some(b)) => {
                    let mut pts = Vec::new();
                    for &p_t in &p {
                        for &ratio in &r {
                            for &budget in &b {
                                pts.push((p_t * ratio, p_t, budget));
                            }
                        }
                    }
                    Some(pts)
                }
                _ => return Err(usage("a custom grid needs --ratios, --pt and --budgets")),
            };
            let rows = theory_cmd::dominance_rows(custom.as_deref(), depth).map_err(usage)?;
            let violations = rows.iter().filter(|r| r.violation).count();
            emit(out.as_deref(), &theory_cmd::dominance_csv(&rows)?)?;
            eprintln!("{} points, {violations} violations", rows.len());
            Ok(())
        }
        TheoryCmd::VerifyBound { settings, trials, seed, out } => {
            let settings: Vec<BoundSetting> = match settings {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).map_err(usage)?
                }
                None => theory_cmd::default_bound_grid(),
            };
            let report = theory_cmd::bound_report(&settings, trials, seed).map_err(usage)?;
            emit(out.as_deref(), &theory_cmd::bound_csv(&report.rows)?)?;
            let corr = report.correlation.map_or("na".to_string(), |c| format!("{c:.3}"));
            eprintln!("{} settings, {} violations, correlation {corr}", report.rows.len(), report.violations);
            Ok(())
        }
    }
}

fn cmd_corpus_gen(a: CorpusGenArgs) -> Result<()> {
    let mut spec = match &a.preset {
        Some(p) => CorpusSpec::preset(p).ok_or_else(|| usage(format!("unknown preset {p:?}")))?,
        None => CorpusSpec::repetition("custom", 0.5),
    };
    if let Some(kind) = &a.kind {
        let model: SyntheticModelSpec = serde_json::from_value(serde_json::json!({
            "kind": kind,
            "seed": spec.model.seed,
            "vocab": spec.model.vocab,
            "repetition": spec.model.repetition,
        }))
        .map_err(usage)?;
        spec.model = model;
    }
    if let Some(v) = a.name {
        spec.name = v;
    }
    if let Some(v) = a.model_seed {
        spec.model.seed = v;
    }
    if let Some(v) = a.vocab {
        spec.model.vocab = v;
    }
    if let Some(v) = a.repetition {
        spec.model.repetition = v;
    }
    if let Some(v) = a.prompts {
        spec.prompts = v;
    }
    if let Some(v) = a.prompt_len {
        spec.prompt_len = v;
    }
    if let Some(v) = a.max_tokens {
        spec.max_tokens = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.validate().map_err(usage)?;
    let corpus = spec.materialize()?;
    let text = serde_json::to_string_pretty(&corpus.to_file())? + "\n";
    std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.cmd {
        Cmd::Decode(a) => cmd_decode(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::Theory(t) => cmd_theory(t),
        Cmd::CorpusGen(a) => cmd_corpus_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Divergence>().is_some() {
                ExitCode::from(3)
            } else if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
