//! Seeded synthetic draft/target pair.
//!
//! The target's greedy token is a hash of the recent context. The draft
//! agrees with it (its argmax equals the target token) with probability
//!
//! ```text
//! a_t = clamp(base_agreement + position_gain * t + noise_scale * z_t, 0.01, 0.99)
//! ```
//!
//! where `t` is the number of tokens generated so far for the prompt and
//! `z_t` is a unit-variance AR(1) process seeded per prompt, so easy and hard
//! stretches persist for a while. The draft distribution puts
//! `top_floor + top_span * a_t` on its argmax, spreads most of the rest
//! geometrically over the following `spread_len` ids and leaves a uniform
//! tail. Entropy is therefore a decreasing function of `a_t`, which is what
//! gives confidence and entropy stopping rules something to work with.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelPair, Prompt};
use crate::dist::{ProbDist, TokenId, TokenProb};
use crate::error::{Error, Result};
use crate::rng::{hash_words, mix64, unit_from_hash, SimRng};

pub const MIN_AGREEMENT: f64 = 0.01;
pub const MAX_AGREEMENT: f64 = 0.99;

// domain separators for the context hashes
const TARGET: u64 = 0x7461_7267;
const DRAFT: u64 = 0x6472_6166;
const MISS: u64 = 0x6d69_7373;
const NOISE: u64 = 0x6e6f_6973;
const PROMPT: u64 = 0x7072_6f6d;

/// How many trailing context tokens feed the target hash.
const CONTEXT_WINDOW: usize = 4;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Concentrated draft distributions (low entropy at a given agreement).
    CodeLike,
    /// Flatter draft distributions.
    ProseLike,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::CodeLike => "code-like",
            Regime::ProseLike => "prose-like",
        }
    }
}

/// Shape of the draft distribution as a function of agreement.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistShape {
    #[serde(default = "DistShape::default_top_floor")]
    pub top_floor: f64,
    #[serde(default = "DistShape::default_top_span")]
    pub top_span: f64,
    #[serde(default = "DistShape::default_spread_len")]
    pub spread_len: usize,
    /// Ratio between consecutive spread entries.
    pub decay_ratio: f64,
    /// Fraction of the non-argmax mass that goes to the uniform tail.
    pub tail_share: f64,
}

impl DistShape {
    fn default_top_floor() -> f64 {
        0.3
    }
    fn default_top_span() -> f64 {
        0.69
    }
    fn default_spread_len() -> usize {
        15
    }

    pub fn for_regime(regime: Regime) -> Self {
        let (decay_ratio, tail_share) = match regime {
            Regime::CodeLike => (0.6, 0.05),
            Regime::ProseLike => (0.85, 0.3),
        };
        DistShape {
            top_floor: Self::default_top_floor(),
            top_span: Self::default_top_span(),
            spread_len: Self::default_spread_len(),
            decay_ratio,
            tail_share,
        }
    }

    fn validate(&self, vocab_size: usize) -> Result<()> {
        let ok = |c: bool, msg: &str| if c { Ok(()) } else { Err(Error::config(msg)) };
        ok(self.top_floor > 0.0, "shape.top_floor must be positive")?;
        ok(self.top_span >= 0.0, "shape.top_span must be non-negative")?;
        ok(
            self.top_floor + self.top_span * MAX_AGREEMENT <= 1.0,
            "shape.top_floor + shape.top_span exceeds 1",
        )?;
        ok(self.spread_len >= 1, "shape.spread_len must be at least 1")?;
        ok(
            self.decay_ratio > 0.0 && self.decay_ratio <= 1.0,
            "shape.decay_ratio must be in (0, 1]",
        )?;
        ok(
            (0.0..=1.0).contains(&self.tail_share),
            "shape.tail_share must be in [0, 1]",
        )?;
        // the argmax must stay on top even at the lowest agreement
        let outranked = self.with_layout(vocab_size, MIN_AGREEMENT, |l| {
            l.weights.w.first().is_some_and(|&w| l.spread_mass * w >= l.top) || l.tail_each >= l.top
        });
        ok(!outranked, "shape lets a non-argmax token outrank the argmax")
    }

    /// Normalized spread weights for a vocabulary of `vocab_size`.
    fn weights(&self, vocab_size: usize) -> Weights {
        let n_spread = self.spread_len.min(vocab_size - 1);
        let raw: Vec<f64> = (0..n_spread).map(|k| self.decay_ratio.powi(k as i32)).collect();
        let norm: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.into_iter().map(|w| w / norm).collect();
        Weights {
            sum: w.iter().sum(),
            w_ln_w: w.iter().map(|&w| w * w.ln()).sum(),
            w,
        }
    }

    fn with_layout<T>(&self, vocab_size: usize, agreement: f64, f: impl FnOnce(&Layout) -> T) -> T {
        let weights = self.weights(vocab_size);
        f(&Layout::new(self, &weights, vocab_size, agreement))
    }

    /// Draft distribution with argmax `top_token` at agreement `agreement`.
    pub fn dist(&self, vocab_size: usize, top_token: TokenId, agreement: f64) -> Result<ProbDist> {
        self.validate(vocab_size)?;
        if top_token.index() >= vocab_size {
            return Err(Error::config(format!(
                "token {top_token} outside vocabulary of {vocab_size}"
            )));
        }
        if !(MIN_AGREEMENT..=MAX_AGREEMENT).contains(&agreement) {
            return Err(Error::config(format!(
                "agreement {agreement} outside [{MIN_AGREEMENT}, {MAX_AGREEMENT}]"
            )));
        }
        Ok(self.with_layout(vocab_size, agreement, |l| l.dist(vocab_size, top_token, l.entropy())))
    }

    /// Entropy (nats) of [`DistShape::dist`] at `agreement`; independent of
    /// which token is on top.
    pub fn entropy_at(&self, vocab_size: usize, agreement: f64) -> f64 {
        self.with_layout(vocab_size, agreement, |l| l.entropy())
    }
}

struct Weights {
    w: Vec<f64>,
    sum: f64,
    w_ln_w: f64,
}

struct Layout<'a> {
    top: f64,
    spread_mass: f64,
    weights: &'a Weights,
    tail: f64,
    tail_each: f64,
}

impl<'a> Layout<'a> {
    fn new(shape: &DistShape, weights: &'a Weights, vocab_size: usize, agreement: f64) -> Self {
        let top = shape.top_floor + shape.top_span * agreement;
        let rest = 1.0 - top;
        let n_tail = vocab_size - 1 - weights.w.len();
        let tail = if n_tail == 0 { 0.0 } else { rest * shape.tail_share };
        Layout {
            top,
            spread_mass: rest - tail,
            weights,
            tail,
            tail_each: if n_tail == 0 { 0.0 } else { tail / n_tail as f64 },
        }
    }

    fn dist(&self, vocab_size: usize, top_token: TokenId, entropy: f64) -> ProbDist {
        let mut entries = Vec::with_capacity(self.weights.w.len() + 1);
        entries.push(TokenProb {
            token: top_token,
            prob: self.top,
        });
        let mut id = top_token.0;
        for &w in &self.weights.w {
            id = if id as usize + 1 == vocab_size { 0 } else { id + 1 };
            entries.push(TokenProb {
                token: TokenId(id),
                prob: self.spread_mass * w,
            });
        }
        ProbDist::sparse_trusted(vocab_size, entries, self.tail, entropy)
    }

    /// Closed form: the spread entries are `spread_mass * w_k`.
    fn entropy(&self) -> f64 {
        let plogp = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
        let m = self.spread_mass;
        let spread = if m > 0.0 {
            m * m.ln() * self.weights.sum + m * self.weights.w_ln_w
        } else {
            0.0
        };
        let tail = if self.tail > 0.0 {
            self.tail * self.tail_each.ln()
        } else {
            0.0
        };
        (-(plogp(self.top) + spread + tail)).max(0.0)
    }
}

/// When the draft's argmax equals the target token.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum AgreementRule {
    /// Agree with probability `a_t`.
    #[default]
    Sampled,
    /// Agree exactly when the draft's sqrt-entropy is at most the cutoff, so
    /// entropy alone decides acceptance.
    EntropyCutoff { sqrt_entropy: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPairConfig {
    #[serde(default = "SyntheticPairConfig::default_vocab")]
    pub vocab_size: usize,
    pub base_agreement: f64,
    #[serde(default)]
    pub position_gain: f64,
    #[serde(default = "SyntheticPairConfig::default_regime")]
    pub regime: Regime,
    #[serde(default)]
    pub noise_scale: f64,
    /// AR(1) coefficient of the agreement noise.
    #[serde(default = "SyntheticPairConfig::default_correlation")]
    pub noise_correlation: f64,
    #[serde(default)]
    pub seed: u64,
    pub prompt_count: usize,
    pub tokens_per_prompt: usize,
    #[serde(default = "SyntheticPairConfig::default_prompt_len")]
    pub prompt_len: usize,
    #[serde(default)]
    pub eos_token: Option<u32>,
    /// Overrides the regime's distribution shape.
    #[serde(default)]
    pub shape: Option<DistShape>,
    #[serde(default)]
    pub agreement: AgreementRule,
}

impl SyntheticPairConfig {
    fn default_vocab() -> usize {
        512
    }
    fn default_regime() -> Regime {
        Regime::ProseLike
    }
    fn default_correlation() -> f64 {
        0.9
    }
    fn default_prompt_len() -> usize {
        8
    }

    pub fn new(base_agreement: f64, regime: Regime, seed: u64) -> Self {
        SyntheticPairConfig {
            vocab_size: Self::default_vocab(),
            base_agreement,
            position_gain: 0.0,
            regime,
            noise_scale: 0.0,
            noise_correlation: Self::default_correlation(),
            seed,
            prompt_count: 10,
            tokens_per_prompt: 100,
            prompt_len: Self::default_prompt_len(),
            eos_token: None,
            shape: None,
            agreement: AgreementRule::Sampled,
        }
    }

    pub fn effective_shape(&self) -> DistShape {
        self.shape.unwrap_or_else(|| DistShape::for_regime(self.regime))
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if !(self.base_agreement > 0.0 && self.base_agreement < 1.0) {
            return Err(Error::config("base_agreement must be in (0, 1)"));
        }
        if !self.position_gain.is_finite() {
            return Err(Error::config("position_gain must be finite"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::config("noise_scale must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.noise_correlation) {
            return Err(Error::config("noise_correlation must be in [0, 1)"));
        }
        if self.prompt_count == 0 || self.tokens_per_prompt == 0 || self.prompt_len == 0 {
            return Err(Error::config(
                "prompt_count, tokens_per_prompt and prompt_len must be positive",
            ));
        }
        if let Some(eos) = self.eos_token {
            if eos as usize >= self.vocab_size {
                return Err(Error::config("eos_token outside vocabulary"));
            }
        }
        if let AgreementRule::EntropyCutoff { sqrt_entropy } = self.agreement {
            if !(sqrt_entropy.is_finite() && sqrt_entropy >= 0.0) {
                return Err(Error::config("agreement cutoff must be non-negative"));
            }
        }
        self.effective_shape().validate(self.vocab_size)
    }
}

struct NoiseTrack {
    rng: SimRng,
    z: Vec<f64>,
}

/// Prompt keys are already well mixed, so the map uses them as-is.
#[derive(Default)]
struct KeyHasher(u64);

impl Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 << 8) ^ b as u64;
        }
    }

    fn write_u64(&mut self, n: u64) {
        self.0 = n;
    }
}

/// The key of the prompt seen last, which is nearly always the next one asked.
struct LastPrompt {
    id: String,
    tokens: Vec<TokenId>,
    key: u64,
}

/// Synthetic [`ModelPair`]; build with [`synth_pair`].
pub struct SyntheticPair {
    config: SyntheticPairConfig,
    shape: DistShape,
    weights: Weights,
    prompts: Vec<Prompt>,
    noise: HashMap<u64, NoiseTrack, BuildHasherDefault<KeyHasher>>,
    last: Option<LastPrompt>,
}

/// Build a seeded synthetic pair and its prompt suite.
pub fn synth_pair(config: SyntheticPairConfig) -> Result<SyntheticPair> {
    config.validate()?;
    let vocab = config.vocab_size as u64;
    let prompts = (0..config.prompt_count)
        .map(|i| Prompt {
            id: format!("p{i}"),
            tag: config.regime.tag().to_string(),
            tokens: (0..config.prompt_len)
                .map(|j| TokenId((hash_words([config.seed, PROMPT, i as u64, j as u64]) % vocab) as u32))
                .collect(),
            max_new_tokens: config.tokens_per_prompt,
        })
        .collect();
    let shape = config.effective_shape();
    Ok(SyntheticPair {
        weights: shape.weights(config.vocab_size),
        shape,
        config,
        prompts,
        noise: HashMap::default(),
        last: None,
    })
}

impl SyntheticPair {
    pub fn config(&self) -> &SyntheticPairConfig {
        &self.config
    }

    /// Relabel every prompt with `tag`.
    pub fn with_tag(mut self, tag: &str) -> Self {
        for p in &mut self.prompts {
            p.tag = tag.to_string();
        }
        self
    }

    fn prompt_key(&mut self, prompt: &Prompt) -> u64 {
        if let Some(last) = &self.last {
            if last.id == prompt.id && last.tokens == prompt.tokens {
                return last.key;
            }
        }
        let key = hash_words(
            std::iter::once(hash_words(prompt.id.bytes().map(u64::from)))
                .chain(prompt.tokens.iter().map(|t| t.0 as u64)),
        );
        self.last = Some(LastPrompt {
            id: prompt.id.clone(),
            tokens: prompt.tokens.clone(),
            key,
        });
        key
    }

    fn noise_at(&mut self, key: u64, t: usize) -> f64 {
        let rho = self.config.noise_correlation;
        let seed = self.config.seed;
        let track = self.noise.entry(key).or_insert_with(|| NoiseTrack {
            rng: SimRng::seed_from_u64(hash_words([seed, NOISE, key])),
            z: Vec::new(),
        });
        while track.z.len() <= t {
            let eps: f64 = StandardNormal.sample(&mut track.rng);
            let next = match track.z.last() {
                None => eps,
                Some(&prev) => rho * prev + (1.0 - rho * rho).sqrt() * eps,
            };
            track.z.push(next);
        }
        track.z[t]
    }

    /// Agreement probability `a_t` for the `t`-th generated token of `prompt`.
    pub fn agreement(&mut self, prompt: &Prompt, t: usize) -> f64 {
        let key = self.prompt_key(prompt);
        self.agreement_for(key, t)
    }

    fn agreement_for(&mut self, key: u64, t: usize) -> f64 {
        let c = &self.config;
        let (base, gain, scale) = (c.base_agreement, c.position_gain, c.noise_scale);
        let noise = if scale > 0.0 {
            scale * self.noise_at(key, t)
        } else {
            0.0
        };
        (base + gain * t as f64 + noise).clamp(MIN_AGREEMENT, MAX_AGREEMENT)
    }

    fn context_hash(&self, domain: u64, key: u64, prompt: &Prompt, generated: &[TokenId]) -> u64 {
        let total = prompt.tokens.len() + generated.len();
        let start = total.saturating_sub(CONTEXT_WINDOW);
        let window = (start..total).map(|i| {
            if i < prompt.tokens.len() {
                prompt.tokens[i].0 as u64
            } else {
                generated[i - prompt.tokens.len()].0 as u64
            }
        });
        hash_words(
            [self.config.seed, domain, key, generated.len() as u64]
                .into_iter()
                .chain(window),
        )
    }

    fn target_token(&self, key: u64, prompt: &Prompt, generated: &[TokenId]) -> TokenId {
        let h = self.context_hash(TARGET, key, prompt, generated);
        TokenId((h % self.config.vocab_size as u64) as u32)
    }
}

impl ModelPair for SyntheticPair {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn eos(&self) -> Option<TokenId> {
        self.config.eos_token.map(TokenId)
    }

    fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    fn draft_next(&mut self, prompt: &Prompt, generated: &[TokenId]) -> Result<ProbDist> {
        if prompt.tokens.is_empty() {
            return Err(Error::EmptyContext);
        }
        let key = self.prompt_key(prompt);
        let a = self.agreement_for(key, generated.len());
        let target = self.target_token(key, prompt, generated);
        let vocab_size = self.config.vocab_size;
        let layout = Layout::new(&self.shape, &self.weights, vocab_size, a);
        let entropy = layout.entropy();
        let agrees = match self.config.agreement {
            AgreementRule::Sampled => unit_from_hash(self.context_hash(DRAFT, key, prompt, generated)) < a,
            AgreementRule::EntropyCutoff { sqrt_entropy } => entropy.sqrt() <= sqrt_entropy,
        };
        let vocab = vocab_size as u64;
        let top = if agrees {
            target
        } else {
            let offset = 1 + mix64(self.context_hash(MISS, key, prompt, generated)) % (vocab - 1);
            TokenId(((target.0 as u64 + offset) % vocab) as u32)
        };
        Ok(layout.dist(vocab_size, top, entropy))
    }

    fn target_greedy(&mut self, prompt: &Prompt, generated: &[TokenId]) -> Result<TokenId> {
        if prompt.tokens.is_empty() {
            return Err(Error::EmptyContext);
        }
        let key = self.prompt_key(prompt);
        Ok(self.target_token(key, prompt, generated))
    }
}
