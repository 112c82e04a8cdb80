//! Seeded synthetic corpora: a model spec plus a set of sampled prompts.

use std::path::Path;

use anyhow::{bail, Context as _, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spinetree::{build_synthetic, sample_prompt, SyntheticModel, SyntheticModelSpec, TokenId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub name: String,
    pub model: SyntheticModelSpec,
    pub prompts: usize,
    pub prompt_len: usize,
    pub max_tokens: usize,
    /// Seed for prompt sampling; the model has its own.
    #[serde(default)]
    pub seed: u64,
}

/// Names accepted by [`CorpusSpec::preset`].
pub const PRESETS: [&str; 4] = ["rep00", "rep05", "rep09", "markov"];

impl CorpusSpec {
    /// Template-repeater corpus at the given repetition strength.
    pub fn repetition(name: &str, repetition: f64) -> Self {
        CorpusSpec {
            name: name.to_string(),
            model: SyntheticModelSpec::template(4, 512, repetition),
            prompts: 20,
            prompt_len: 64,
            max_tokens: 256,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "rep00" => Self::repetition(name, 0.0),
            "rep05" => Self::repetition(name, 0.5),
            "rep09" => Self::repetition(name, 0.9),
            "markov" => CorpusSpec {
                name: name.to_string(),
                model: SyntheticModelSpec::markov(7, 256),
                prompts: 20,
                prompt_len: 64,
                max_tokens: 256,
                seed: 0,
            },
            _ => return None,
        })
    }

    /// The three repetition levels used for the non-degradation check.
    pub fn repetition_sweep() -> Vec<Self> {
        ["rep00", "rep05", "rep09"].iter().map(|n| Self::preset(n).unwrap()).collect()
    }

    /// A preset name or a path to a corpus JSON file (either a bare spec or
    /// the output of `corpus-gen`).
    pub fn resolve(arg: &str) -> Result<Self> {
        if let Some(c) = Self::preset(arg) {
            return Ok(c);
        }
        let path = Path::new(arg);
        if !path.exists() {
            bail!("unknown corpus {arg:?}: not a preset ({}) and no such file", PRESETS.join(", "));
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))?;
        let spec = match value.get("spec") {
            Some(s) => serde_json::from_value(s.clone()),
            None => serde_json::from_value(value),
        }
        .with_context(|| format!("{arg} is not a corpus spec"))?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompts == 0 || self.prompt_len == 0 || self.max_tokens == 0 {
            bail!("corpus {}: prompt count, prompt length and max tokens must be positive", self.name);
        }
        self.model.validate()?;
        Ok(())
    }

    /// Builds the model and samples every prompt.
    pub fn materialize(&self) -> Result<Corpus> {
        self.validate()?;
        let model = build_synthetic(&self.model)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let prompts = (0..self.prompts)
            .map(|_| sample_prompt(&model, rng.gen(), self.prompt_len))
            .collect();
        Ok(Corpus { spec: self.clone(), model, prompts })
    }
}

pub struct Corpus {
    pub spec: CorpusSpec,
    pub model: SyntheticModel,
    pub prompts: Vec<Vec<TokenId>>,
}

/// On-disk form written by `corpus-gen`.
#[derive(Serialize)]
pub struct CorpusFile<'a> {
    pub spec: &'a CorpusSpec,
    pub prompts: Vec<Vec<u32>>,
}

impl Corpus {
    pub fn to_file(&self) -> CorpusFile<'_> {
        CorpusFile {
            spec: &self.spec,
            prompts: self.prompts.iter().map(|p| p.iter().map(|t| t.0).collect()).collect(),
        }
    }
}
