//! Simulated draft/target model pairs.
//!
//! A [`ModelPair`] stands in for a small draft model and a large target
//! model. Both are queried greedily: the draft returns its full next-token
//! distribution (the stopping rules need it) and the target returns only its
//! greedy token, which is all prefix-matching verification needs.
//!
//! Two implementations ship: [`SyntheticPair`], a seeded generative process
//! whose draft confidence carries real signal about agreement, and
//! [`ReplayPair`], which replays draft distributions and target tokens
//! captured offline from real models.

mod replay;
mod synthetic;

pub use replay::{
    read_trace, replay_pair, validate_records, ReplayConfig, ReplayPair, TraceRecord, TRACE_MASS_TOLERANCE,
};
pub use synthetic::{synth_pair, AgreementRule, DistShape, Regime, SyntheticPair, SyntheticPairConfig};

use serde::{Deserialize, Serialize};

use crate::dist::{ProbDist, TokenId};
use crate::error::Result;

/// A prompt to continue. Synthetic prompts carry tokens; replayed prompts are
/// identified by id alone.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    /// Category label (e.g. `code-like`), used to group entropy profiles.
    pub tag: String,
    pub tokens: Vec<TokenId>,
    /// Generation budget for this prompt.
    pub max_new_tokens: usize,
}

impl Prompt {
    pub fn is_empty(&self) -> bool {
        self.id.is_empty() && self.tokens.is_empty()
    }
}

/// Draft and target model behind one interface.
///
/// The context of every query is `prompt` followed by `generated`. Both
/// methods must be deterministic functions of that context.
pub trait ModelPair {
    fn vocab_size(&self) -> usize;

    /// End-of-sequence token, if the pair has one.
    fn eos(&self) -> Option<TokenId>;

    /// Prompts this pair was built to serve.
    fn prompts(&self) -> &[Prompt];

    /// Draft distribution for the next token.
    fn draft_next(&mut self, prompt: &Prompt, generated: &[TokenId]) -> Result<ProbDist>;

    /// Target model's greedy next token.
    fn target_greedy(&mut self, prompt: &Prompt, generated: &[TokenId]) -> Result<TokenId>;
}

impl<M: ModelPair + ?Sized> ModelPair for Box<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> Option<TokenId> {
        (**self).eos()
    }
    fn prompts(&self) -> &[Prompt] {
        (**self).prompts()
    }
    fn draft_next(&mut self, prompt: &Prompt, generated: &[TokenId]) -> Result<ProbDist> {
        (**self).draft_next(prompt, generated)
    }
    fn target_greedy(&mut self, prompt: &Prompt, generated: &[TokenId]) -> Result<TokenId> {
        (**self).target_greedy(prompt, generated)
    }
}

/// Target-only greedy rollout: the output speculative decoding must
/// reproduce exactly.
pub fn target_rollout<M: ModelPair + ?Sized>(
    models: &mut M,
    prompt: &Prompt,
    max_new_tokens: usize,
) -> Result<Vec<TokenId>> {
    let eos = models.eos();
    let mut out = Vec::with_capacity(max_new_tokens);
    while out.len() < max_new_tokens {
        let next = models.target_greedy(prompt, &out)?;
        out.push(next);
        if Some(next) == eos {
            break;
        }
    }
    Ok(out)
}
