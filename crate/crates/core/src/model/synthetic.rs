//! Seeded synthetic target models for desk-scale experiments.
//!
//! Two families:
//!
//! * [`MarkovOrder2`]: a fixed successor table keyed by the last two tokens.
//!   The greedy token is the table's argmax, so the bigram tier of the
//!   adjacency table can learn the model exactly.
//! * [`TemplateRepeater`]: text made of recurring templates (with a few
//!   variable "slots") separated by noise. Higher `repetition` means more
//!   template entries and fewer breaks, which is what makes context-matched
//!   drafts reliable; slot alternatives and noise are what transition drafts
//!   can recover.
//!
//! All randomness is derived from the seed with stateless hashing or per-key
//! ChaCha streams over fixed-width integers, so behavior is identical on every
//! platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Candidate, Context, TargetModel, TokenId};
use crate::error::{invalid, Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyntheticKind {
    #[serde(rename = "markov-order-2")]
    MarkovOrder2,
    #[serde(rename = "template-repeater")]
    TemplateRepeater,
}

/// Serialized as `{"kind","seed","vocab","repetition"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub kind: SyntheticKind,
    pub seed: u64,
    pub vocab: usize,
    /// Template continuation probability; ignored by `markov-order-2`.
    #[serde(default)]
    pub repetition: f64,
}

impl SyntheticModelSpec {
    pub fn markov(seed: u64, vocab: usize) -> Self {
        SyntheticModelSpec { kind: SyntheticKind::MarkovOrder2, seed, vocab, repetition: 0.0 }
    }

    pub fn template(seed: u64, vocab: usize, repetition: f64) -> Self {
        SyntheticModelSpec { kind: SyntheticKind::TemplateRepeater, seed, vocab, repetition }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::VocabTooSmall(self.vocab));
        }
        if self.vocab > u32::MAX as usize {
            return Err(invalid("vocabulary does not fit 32-bit token ids"));
        }
        if !(0.0..=1.0).contains(&self.repetition) {
            return Err(invalid(format!("repetition {} outside [0, 1]", self.repetition)));
        }
        Ok(())
    }
}

/// Either synthetic family behind one type.
#[derive(Clone, Debug)]
pub enum SyntheticModel {
    Markov(MarkovOrder2),
    Template(TemplateRepeater),
}

pub fn build_synthetic(spec: &SyntheticModelSpec) -> Result<SyntheticModel> {
    spec.validate()?;
    Ok(match spec.kind {
        SyntheticKind::MarkovOrder2 => SyntheticModel::Markov(MarkovOrder2::new(spec.seed, spec.vocab)?),
        SyntheticKind::TemplateRepeater => SyntheticModel::Template(TemplateRepeater::new(
            spec.seed,
            spec.vocab,
            spec.repetition,
        )?),
    })
}

impl TargetModel for SyntheticModel {
    fn vocab_size(&self) -> usize {
        match self {
            SyntheticModel::Markov(m) => m.vocab_size(),
            SyntheticModel::Template(m) => m.vocab_size(),
        }
    }

    fn next_scores(&self, context: Context<'_>) -> Vec<Candidate> {
        match self {
            SyntheticModel::Markov(m) => m.next_scores(context),
            SyntheticModel::Template(m) => m.next_scores(context),
        }
    }
}

// splitmix64 finalizer
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3, |h, &w| mix64(h ^ w))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const TAG_MARKOV: u64 = 0x4d41_524b;
const TAG_CHOICE: u64 = 0x4348_4f49;
const TAG_NOISE: u64 = 0x4e4f_4953;
const TAG_FILL: u64 = 0x4649_4c4c;
const TAG_ENTRY: u64 = 0x454e_5452;

/// Last two tokens of a context; the previous token of a length-1 context is
/// taken to be EOS.
fn key_of(ctx: &Context<'_>, eos: TokenId) -> (TokenId, TokenId) {
    let cur = ctx.last().expect("non-empty context");
    (ctx.nth_last(1).unwrap_or(eos), cur)
}

/// Order-2 Markov model with a seeded successor table.
#[derive(Clone, Debug)]
pub struct MarkovOrder2 {
    vocab: usize,
    seed: u64,
    fanout: usize,
}

impl MarkovOrder2 {
    pub const FANOUT: usize = 4;

    pub fn new(seed: u64, vocab: usize) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::VocabTooSmall(vocab));
        }
        Ok(MarkovOrder2 { vocab, seed, fanout: Self::FANOUT })
    }

    /// The table row for `(prev, cur)`: distinct non-EOS successors with
    /// normalized weights, in draw order.
    pub fn row(&self, prev: TokenId, cur: TokenId) -> Vec<Candidate> {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[
            self.seed,
            TAG_MARKOV,
            prev.0 as u64,
            cur.0 as u64,
        ]));
        let pool = (self.vocab - 1) as u32;
        let n = self.fanout.min(pool as usize);
        let mut picked: Vec<TokenId> = Vec::with_capacity(n);
        while picked.len() < n {
            let t = TokenId(rng.gen_range(0..pool));
            if !picked.contains(&t) {
                picked.push(t);
            }
        }
        let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
        let total: f64 = weights.iter().sum();
        picked
            .into_iter()
            .zip(weights)
            .map(|(t, w)| Candidate::new(t, w / total))
            .collect()
    }
}

impl TargetModel for MarkovOrder2 {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_scores(&self, context: Context<'_>) -> Vec<Candidate> {
        let (p, c) = key_of(&context, self.eos());
        self.row(p, c)
    }
}

/// Recurring templates over a small shared alphabet, separated by noise.
///
/// Template interiors are identified by their last three tokens (every
/// trigram is unique across templates) while many bigrams recur in several
/// templates, so a long context pins the continuation down and a two-token
/// lookup often does not. Every `SLOT_PERIOD`-th position is a slot with
/// three alternatives; the model picks one per occurrence and then rejoins
/// the template.
#[derive(Clone, Debug)]
pub struct TemplateRepeater {
    vocab: usize,
    seed: u64,
    repetition: f64,
    /// `templates[g][pos]` lists the alternatives at that position, primary
    /// first: one token for fixed positions, three for slots.
    templates: Vec<Vec<Vec<TokenId>>>,
    starts: HashMap<TokenId, usize>,
    heads: HashMap<(TokenId, TokenId), usize>,
    trigrams: HashMap<[TokenId; 3], (u16, u16)>,
    alphabet: Vec<TokenId>,
    noise: Vec<TokenId>,
}

impl TemplateRepeater {
    /// Positions `pos % SLOT_PERIOD == SLOT_PERIOD - 1` are slots.
    pub const SLOT_PERIOD: usize = 5;
    pub const TEMPLATE_LEN: usize = 24;
    const ALPHABET: usize = 16;
    const MAX_TEMPLATES: usize = 3;
    const SLOT_WEIGHTS: [f64; 3] = [0.7, 0.2, 0.1];
    const NOISE_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];
    /// Chance of breaking out of a template at zero repetition; scaled by
    /// `1 - repetition`.
    const BREAK: f64 = 0.25;
    const REENTRY: f64 = 0.5;
    const FILLERS: usize = 4;
    const FILLER_MASS: f64 = 0.08;

    pub fn new(seed: u64, vocab: usize, repetition: f64) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::VocabTooSmall(vocab));
        }
        if !(0.0..=1.0).contains(&repetition) {
            return Err(invalid(format!("repetition {repetition} outside [0, 1]")));
        }
        let n_tok = vocab - 1;
        let mut perm: Vec<TokenId> = (0..n_tok as u32).map(TokenId).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[seed, 0x5045_524d]));
        for i in (1..perm.len()).rev() {
            let j = rng.gen_range(0..=i as u32) as usize;
            perm.swap(i, j);
        }

        let mut m = TemplateRepeater {
            vocab,
            seed,
            repetition,
            templates: Vec::new(),
            starts: HashMap::new(),
            heads: HashMap::new(),
            trigrams: HashMap::new(),
            alphabet: Vec::new(),
            noise: Vec::new(),
        };
        // keep at least as many noise tokens as the alphabet
        let count = n_tok.saturating_sub(2 * Self::ALPHABET) / 64;
        let count = count.min(Self::MAX_TEMPLATES);
        if count == 0 {
            m.noise = perm;
            return Ok(m);
        }
        let (starts, rest) = perm.split_at(count);
        let (alphabet, noise) = rest.split_at(Self::ALPHABET);
        m.alphabet = alphabet.to_vec();
        m.noise = noise.to_vec();
        for (g, &t0) in starts.iter().enumerate() {
            let tpl = m.generate(g, t0, &mut rng);
            m.starts.insert(t0, g);
            m.heads.insert((t0, tpl[1][0]), g);
            m.templates.push(tpl);
        }
        Ok(m)
    }

    /// Draws one template position by position, rejecting tokens that would
    /// repeat a trigram already in use.
    fn generate(&mut self, g: usize, t0: TokenId, rng: &mut ChaCha8Rng) -> Vec<Vec<TokenId>> {
        let a = self.alphabet.len() as u32;
        let mut tpl: Vec<Vec<TokenId>> = vec![vec![t0]];
        let pick = |rng: &mut ChaCha8Rng| self.alphabet[rng.gen_range(0..a) as usize];
        tpl.push(vec![pick(rng)]);
        for pos in 2..Self::TEMPLATE_LEN {
            let width = if pos % Self::SLOT_PERIOD == Self::SLOT_PERIOD - 1 { 3 } else { 1 };
            let mut tries = 0;
            let alts = loop {
                let mut alts: Vec<TokenId> = Vec::with_capacity(width);
                while alts.len() < width {
                    let t = pick(rng);
                    if !alts.contains(&t) {
                        alts.push(t);
                    }
                }
                let keys = Self::keys_ending_at(&tpl, &alts);
                let fresh = keys.iter().all(|k| !self.trigrams.contains_key(k))
                    && keys.iter().enumerate().all(|(i, k)| !keys[..i].contains(k));
                tries += 1;
                if fresh || tries > 10_000 {
                    break alts;
                }
            };
            for k in Self::keys_ending_at(&tpl, &alts) {
                self.trigrams.entry(k).or_insert((g as u16, pos as u16));
            }
            tpl.push(alts);
        }
        tpl
    }

    fn keys_ending_at(tpl: &[Vec<TokenId>], alts: &[TokenId]) -> Vec<[TokenId; 3]> {
        let n = tpl.len();
        let mut out = Vec::new();
        for &x in &tpl[n - 2] {
            for &y in &tpl[n - 1] {
                for &z in alts {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    pub fn repetition(&self) -> f64 {
        self.repetition
    }

    pub fn template_count(&self) -> usize {
        self.templates.len()
    }

    /// Template `g` with only the first alternative at each slot.
    pub fn template_primary(&self, g: usize) -> Vec<TokenId> {
        self.templates[g].iter().map(|alts| alts[0]).collect()
    }

    pub fn is_template_token(&self, t: TokenId) -> bool {
        self.starts.contains_key(&t) || self.alphabet.contains(&t)
    }

    /// Template and position of the last token, if the context sits inside
    /// a template.
    fn state(&self, ctx: &Context<'_>) -> Option<(usize, usize)> {
        let c = ctx.last()?;
        let b = ctx.nth_last(1);
        if let (Some(a), Some(b)) = (ctx.nth_last(2), b) {
            if let Some(&(g, pos)) = self.trigrams.get(&[a, b, c]) {
                return Some((g as usize, pos as usize));
            }
        }
        if let Some(b) = b {
            if let Some(&g) = self.heads.get(&(b, c)) {
                return Some((g, 1));
            }
        }
        self.starts.get(&c).map(|&g| (g, 0))
    }

    fn noise_options(&self, p: TokenId, c: TokenId) -> Vec<TokenId> {
        let n = self.noise.len();
        let want = 3.min(n);
        let mut out = Vec::with_capacity(want);
        let mut i = 0u64;
        while out.len() < want {
            let h = hash_words(&[self.seed, TAG_NOISE, p.0 as u64, c.0 as u64, i]);
            let t = self.noise[(h % n as u64) as usize];
            if !out.contains(&t) {
                out.push(t);
            }
            i += 1;
        }
        out
    }

    /// Weighted options the greedy token is drawn from.
    fn options(&self, ctx: &Context<'_>) -> Vec<(TokenId, f64)> {
        let (p, c) = key_of(ctx, self.eos());
        let rep = self.repetition;
        let mut opts: Vec<(TokenId, f64)> = Vec::new();
        let noise_mass = match self.state(ctx) {
            Some((g, pos)) if pos + 1 < self.templates[g].len() => {
                let cont = 1.0 - Self::BREAK * (1.0 - rep);
                let alts = &self.templates[g][pos + 1];
                if alts.len() == 1 {
                    opts.push((alts[0], cont));
                } else {
                    for (t, w) in alts.iter().zip(Self::SLOT_WEIGHTS) {
                        opts.push((*t, cont * w));
                    }
                }
                1.0 - cont
            }
            _ => {
                let entry = if self.templates.is_empty() { 0.0 } else { Self::REENTRY * rep };
                if entry > 0.0 {
                    let h = hash_words(&[self.seed, TAG_ENTRY, p.0 as u64, c.0 as u64]);
                    let g = (h % self.templates.len() as u64) as usize;
                    opts.push((self.templates[g][0][0], entry));
                }
                1.0 - entry
            }
        };
        if noise_mass > 0.0 {
            let noise = self.noise_options(p, c);
            let w = &Self::NOISE_WEIGHTS[..noise.len()];
            let total: f64 = w.iter().sum();
            for (t, wi) in noise.into_iter().zip(w) {
                opts.push((t, noise_mass * wi / total));
            }
        }
        merge_options(opts)
    }

    /// Low-mass tokens that fill out the candidate list but are never
    /// chosen.
    fn fillers(&self, p: TokenId, c: TokenId) -> Vec<TokenId> {
        let n_tok = (self.vocab - 1) as u64;
        (0..Self::FILLERS as u64)
            .map(|i| TokenId((hash_words(&[self.seed, TAG_FILL, p.0 as u64, c.0 as u64, i]) % n_tok) as u32))
            .collect()
    }
}

fn merge_options(opts: Vec<(TokenId, f64)>) -> Vec<(TokenId, f64)> {
    let mut merged: Vec<(TokenId, f64)> = Vec::with_capacity(opts.len());
    for (t, w) in opts {
        if w <= 0.0 {
            continue;
        }
        match merged.iter_mut().find(|(u, _)| *u == t) {
            Some(e) => e.1 += w,
            None => merged.push((t, w)),
        }
    }
    merged
}

impl TargetModel for TemplateRepeater {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_scores(&self, context: Context<'_>) -> Vec<Candidate> {
        let (p, c) = key_of(&context, self.eos());
        let opts = self.options(&context);
        let total: f64 = opts.iter().map(|o| o.1).sum();
        let a = context.nth_last(2).map_or(u64::MAX, |t| t.0 as u64);
        let u = unit(hash_words(&[self.seed, TAG_CHOICE, context.len() as u64, a, p.0 as u64, c.0 as u64])) * total;
        let mut acc = 0.0;
        let mut chosen = opts.len() - 1;
        for (i, o) in opts.iter().enumerate() {
            acc += o.1;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let mut all: Vec<(TokenId, f64)> =
            opts.iter().map(|&(t, w)| (t, w / total * (1.0 - Self::FILLER_MASS))).collect();
        for t in self.fillers(p, c) {
            all.push((t, Self::FILLER_MASS / Self::FILLERS as f64));
        }
        let chosen_token = opts[chosen].0;
        // Boosting the chosen option to at least one half keeps it the argmax
        // while the others retain their relative weights.
        merge_options(all)
            .into_iter()
            .map(|(t, w)| Candidate::new(t, if t == chosen_token { (w + 1.0) / 2.0 } else { w / 2.0 }))
            .collect()
    }
}
