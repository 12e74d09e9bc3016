//! The draft/verify loop and the controllers that decide when drafting stops.
//!
//! One session drafts greedily from the draft model, asking the stop signal
//! after every drafted token, until the signal says stop, the draft emits
//! EOS, or `gamma_max` tokens are drafted. The target then accepts the
//! longest prefix matching its own greedy tokens and contributes one bonus
//! token. Because verification is exact prefix matching under greedy
//! decoding, the generated text is identical to the target's own greedy
//! output whatever the stopping policy does.
//!
//! Stop signals by [`ControlMode`]:
//!
//! * `bandit-seq`: one bandit picks an arm at the start of each session; that
//!   arm decides every position. The bandit receives one reward per session.
//! * `bandit-token`: an independent bandit per draft position picks the arm
//!   that decides that position. Each drafted position's bandit gets reward
//!   1 if its token was accepted, 0 otherwise.
//! * `static`: never stop early; every session drafts `gamma_max` tokens.
//! * `single-arm`: one fixed arm, no learning.
//!
//! Bandit state persists across sessions and prompts unless
//! `reset_per_prompt` is set.

use serde::{Deserialize, Serialize};

use crate::arms::{Arm, ArmConfig};
use crate::bandits::{ArmValue, Bandit, BanditKind};
use crate::dist::{DraftStep, TokenId};
use crate::error::{Error, Result};
use crate::metrics::{reward, RewardConfig, SessionRecord, StopCause};
use crate::models::{ModelPair, Prompt};
use crate::rng::SimRng;

/// Draft length of the fixed-length baseline.
pub const STATIC_GAMMA: usize = 6;
/// Draft cap for dynamic controllers, standing in for "unbounded".
pub const DYNAMIC_GAMMA: usize = 128;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    BanditSeq,
    BanditToken,
    Static,
    SingleArm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub name: String,
    pub mode: ControlMode,
    /// Defaults to 6 for `static`, 128 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_max: Option<usize>,
    #[serde(default = "ControllerConfig::default_bandit")]
    pub bandit: BanditKind,
    /// Arm pool; defaults to the five standard rules.
    #[serde(default = "crate::arms::default_pool")]
    pub arms: Vec<ArmConfig>,
    /// Falls back to the experiment-wide reward.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardConfig>,
    #[serde(default)]
    pub reset_per_prompt: bool,
}

impl ControllerConfig {
    fn default_bandit() -> BanditKind {
        BanditKind::Ucb1
    }

    fn with_mode(name: &str, mode: ControlMode) -> Self {
        ControllerConfig {
            name: name.to_string(),
            mode,
            gamma_max: None,
            bandit: Self::default_bandit(),
            arms: crate::arms::default_pool(),
            reward: None,
            reset_per_prompt: false,
        }
    }

    /// Fixed-length drafting of `gamma` tokens per session.
    pub fn static_baseline(gamma: usize) -> Self {
        ControllerConfig {
            gamma_max: Some(gamma),
            arms: Vec::new(),
            ..Self::with_mode(&format!("static-{gamma}"), ControlMode::Static)
        }
    }

    pub fn bandit_seq(name: &str, bandit: BanditKind) -> Self {
        ControllerConfig {
            bandit,
            ..Self::with_mode(name, ControlMode::BanditSeq)
        }
    }

    pub fn bandit_token(name: &str, bandit: BanditKind) -> Self {
        ControllerConfig {
            bandit,
            ..Self::with_mode(name, ControlMode::BanditToken)
        }
    }

    pub fn single_arm(name: &str, arm: ArmConfig) -> Self {
        ControllerConfig {
            arms: vec![arm],
            ..Self::with_mode(name, ControlMode::SingleArm)
        }
    }

    pub fn gamma_max(&self) -> usize {
        self.gamma_max.unwrap_or(match self.mode {
            ControlMode::Static => STATIC_GAMMA,
            _ => DYNAMIC_GAMMA,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::config(format!("controller `{}`: {msg}", self.name)));
        if self.name.is_empty() {
            return Err(Error::config("controller name is empty"));
        }
        if self.gamma_max() == 0 {
            return err("gamma_max must be at least 1".into());
        }
        match self.mode {
            ControlMode::BanditSeq | ControlMode::BanditToken if self.arms.is_empty() => {
                return err("bandit modes need at least one arm".into());
            }
            ControlMode::SingleArm if self.arms.len() != 1 => {
                return err(format!(
                    "single-arm mode needs exactly one arm, got {}",
                    self.arms.len()
                ));
            }
            ControlMode::BanditSeq if self.bandit.needs_binary_rewards() => {
                return err("beta-ts needs binary rewards; use it with bandit-token".into());
            }
            _ => {}
        }
        self.bandit.validate()?;
        if let Some(r) = &self.reward {
            r.validate()?;
        }
        self.arms.iter().try_for_each(ArmConfig::validate)
    }
}

/// Learning state for one controller run.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub arms: Vec<Arm>,
    /// Session-level bandit (`bandit-seq`).
    pub sequence: Option<Bandit>,
    /// One bandit per draft position, index 0 = position 1 (`bandit-token`).
    pub positions: Vec<Bandit>,
}

impl PolicyState {
    pub fn new(config: &ControllerConfig) -> Self {
        let arms: Vec<Arm> = config.arms.iter().cloned().map(Arm::new).collect();
        let n = arms.len();
        let (sequence, positions) = match config.mode {
            ControlMode::BanditSeq => (Some(Bandit::new(&config.bandit, n)), Vec::new()),
            ControlMode::BanditToken => (None, vec![Bandit::new(&config.bandit, n); config.gamma_max()]),
            ControlMode::Static | ControlMode::SingleArm => (None, Vec::new()),
        };
        PolicyState {
            arms,
            sequence,
            positions,
        }
    }
}

/// One drafting episode.
#[derive(Clone, Debug, PartialEq)]
pub struct DraftSession {
    /// Tokens generated for the prompt before this session.
    pub context_len: usize,
    pub steps: Vec<DraftStep>,
    pub stop_cause: StopCause,
    /// Session arm (`bandit-seq`) or per-position arms (`bandit-token`).
    pub arms: Vec<usize>,
}

impl DraftSession {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.steps.iter().map(|s| s.token).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub accepted_len: usize,
    pub accept_flags: Vec<bool>,
    /// Target token after the accepted prefix; `None` only when the accepted
    /// prefix already ends in EOS.
    pub bonus_token: Option<TokenId>,
}

/// One bandit update, with the updated bandit's values afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmValueRecord {
    /// Running update counter within the controller run.
    pub update: u64,
    pub prompt_id: String,
    /// Draft position of the updated bandit (`bandit-token` only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub arm: usize,
    pub reward: f64,
    pub values: Vec<ArmValue>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionOutcome {
    pub session: DraftSession,
    pub verification: VerificationResult,
    pub reward: Option<f64>,
    pub updates: Vec<ArmValueRecord>,
}

/// Output of [`Controller::generate`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub sessions: Vec<SessionRecord>,
    pub arm_log: Vec<ArmValueRecord>,
}

/// Pick the arm for a new session.
pub fn choose_session_arm(bandit: &Bandit, rng: &mut SimRng) -> Result<usize> {
    bandit.select(rng)
}

/// Accept the longest prefix of `drafted` matching the target's greedy
/// tokens, then take the target's next token as the bonus. Acceptance stops
/// at an accepted EOS, which gets no bonus.
pub fn verify<M: ModelPair + ?Sized>(
    models: &mut M,
    prompt: &Prompt,
    generated: &[TokenId],
    drafted: &[TokenId],
) -> Result<VerificationResult> {
    let mut context = generated.to_vec();
    verify_in(models, prompt, &mut context, drafted)
}

/// [`verify`] on a reusable buffer; `context` is restored before returning.
fn verify_in<M: ModelPair + ?Sized>(
    models: &mut M,
    prompt: &Prompt,
    context: &mut Vec<TokenId>,
    drafted: &[TokenId],
) -> Result<VerificationResult> {
    let base = context.len();
    let result = (|| {
        let mut flags = vec![false; drafted.len()];
        for (i, &token) in drafted.iter().enumerate() {
            let expected = models.target_greedy(prompt, context)?;
            if expected != token {
                return Ok(VerificationResult {
                    accepted_len: i,
                    accept_flags: flags,
                    bonus_token: Some(expected),
                });
            }
            flags[i] = true;
            if Some(token) == models.eos() {
                // Generation ends at an accepted EOS; later drafts are moot.
                return Ok(VerificationResult {
                    accepted_len: i + 1,
                    accept_flags: flags,
                    bonus_token: None,
                });
            }
            context.push(token);
        }
        Ok(VerificationResult {
            accepted_len: drafted.len(),
            accept_flags: flags,
            bonus_token: Some(models.target_greedy(prompt, context)?),
        })
    })();
    context.truncate(base);
    result
}

/// A controller run: configuration, learning state and its RNG.
pub struct Controller {
    config: ControllerConfig,
    reward: RewardConfig,
    state: PolicyState,
    rng: SimRng,
    updates: u64,
}

impl Controller {
    /// `default_reward` applies when the config has no reward of its own.
    pub fn new(config: ControllerConfig, default_reward: RewardConfig, rng: SimRng) -> Result<Self> {
        config.validate()?;
        let reward = config.reward.unwrap_or(default_reward);
        reward.validate()?;
        Ok(Controller {
            state: PolicyState::new(&config),
            config,
            reward,
            rng,
            updates: 0,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut PolicyState {
        &mut self.state
    }

    pub fn reset(&mut self) {
        self.state = PolicyState::new(&self.config);
    }

    #[allow(clippy::too_many_arguments)]
    fn draft<M: ModelPair + ?Sized>(
        &mut self,
        models: &mut M,
        prompt: &Prompt,
        context: &mut Vec<TokenId>,
        steps: &mut Vec<DraftStep>,
        arms_used: &mut Vec<usize>,
        gamma: usize,
        eos: Option<TokenId>,
    ) -> Result<StopCause> {
        loop {
            let position = steps.len() + 1;
            let dist = models.draft_next(prompt, context)?;
            let step = DraftStep::greedy(position, dist);
            let stop = match self.config.mode {
                ControlMode::Static => false,
                ControlMode::SingleArm => self.state.arms[0].decide(&step, steps.last()).is_stop(),
                ControlMode::BanditSeq => self.state.arms[arms_used[0]].decide(&step, steps.last()).is_stop(),
                ControlMode::BanditToken => {
                    let arm = self.state.positions[position - 1].select(&mut self.rng)?;
                    arms_used.push(arm);
                    self.state.arms[arm].decide(&step, steps.last()).is_stop()
                }
            };
            context.push(step.token);
            let is_eos = Some(step.token) == eos;
            steps.push(step);
            if is_eos {
                return Ok(StopCause::Eos);
            }
            if stop {
                return Ok(StopCause::ArmStop);
            }
            if position == gamma {
                return Ok(StopCause::MaxLength);
            }
        }
    }

    /// Draft, verify and learn from one session continuing `prompt` +
    /// `generated`.
    pub fn run_session<M: ModelPair + ?Sized>(
        &mut self,
        models: &mut M,
        prompt: &Prompt,
        generated: &[TokenId],
    ) -> Result<SessionOutcome> {
        self.run_session_in(models, prompt, &mut generated.to_vec())
    }

    /// [`Controller::run_session`] on a reusable buffer holding the tokens
    /// generated so far; the buffer is restored before returning.
    fn run_session_in<M: ModelPair + ?Sized>(
        &mut self,
        models: &mut M,
        prompt: &Prompt,
        context: &mut Vec<TokenId>,
    ) -> Result<SessionOutcome> {
        if prompt.is_empty() {
            return Err(Error::EmptyContext);
        }
        let gamma = self.config.gamma_max();
        let eos = models.eos();
        let mut arms_used = Vec::new();
        if let Some(bandit) = &self.state.sequence {
            arms_used.push(choose_session_arm(bandit, &mut self.rng)?);
        }

        let base = context.len();
        let mut steps: Vec<DraftStep> = Vec::new();
        let drafting = self.draft(models, prompt, context, &mut steps, &mut arms_used, gamma, eos);
        context.truncate(base);
        let stop_cause = drafting?;

        let drafted: Vec<TokenId> = steps.iter().map(|s| s.token).collect();
        let verification = verify_in(models, prompt, context, &drafted)?;
        let (n_acc, n_drafted) = (verification.accepted_len, drafted.len());

        let mut updates = Vec::new();
        let mut session_reward = None;
        match self.config.mode {
            ControlMode::BanditSeq => {
                let r = reward(&self.reward, n_acc, n_drafted, gamma)?;
                let arm = arms_used[0];
                let bandit = self.state.sequence.as_mut().expect("sequence bandit");
                bandit.update(arm, r)?;
                self.updates += 1;
                updates.push(ArmValueRecord {
                    update: self.updates,
                    prompt_id: prompt.id.clone(),
                    position: None,
                    arm,
                    reward: r,
                    values: bandit.snapshot(),
                });
                session_reward = Some(r);
            }
            ControlMode::BanditToken => {
                for (i, &arm) in arms_used.iter().enumerate() {
                    let r = if verification.accept_flags[i] { 1.0 } else { 0.0 };
                    let bandit = &mut self.state.positions[i];
                    bandit.update(arm, r)?;
                    self.updates += 1;
                    updates.push(ArmValueRecord {
                        update: self.updates,
                        prompt_id: prompt.id.clone(),
                        position: Some(i + 1),
                        arm,
                        reward: r,
                        values: bandit.snapshot(),
                    });
                }
            }
            ControlMode::Static | ControlMode::SingleArm => {}
        }
        for arm in &mut self.state.arms {
            arm.observe_draft(n_acc, n_drafted)?;
        }

        Ok(SessionOutcome {
            session: DraftSession {
                context_len: base,
                steps,
                stop_cause,
                arms: arms_used,
            },
            verification,
            reward: session_reward,
            updates,
        })
    }

    /// Continue `prompt` until `max_new_tokens` tokens or EOS.
    pub fn generate<M: ModelPair + ?Sized>(
        &mut self,
        models: &mut M,
        prompt: &Prompt,
        max_new_tokens: usize,
    ) -> Result<Generation> {
        if max_new_tokens == 0 {
            return Err(Error::config("max_new_tokens must be at least 1"));
        }
        if self.config.reset_per_prompt {
            self.reset();
        }
        let eos = models.eos();
        let mut out = Generation::default();
        loop {
            let outcome = self.run_session_in(models, prompt, &mut out.tokens)?;
            let v = &outcome.verification;
            let s = &outcome.session;
            let mut appended: Vec<TokenId> = s.steps[..v.accepted_len].iter().map(|st| st.token).collect();
            appended.extend(v.bonus_token);
            if let Some(end) = appended.iter().position(|&t| Some(t) == eos) {
                appended.truncate(end + 1);
            }
            appended.truncate(max_new_tokens - out.tokens.len());
            out.tokens.extend_from_slice(&appended);
            out.sessions.push(SessionRecord {
                prompt_id: prompt.id.clone(),
                tag: prompt.tag.clone(),
                drafted: s.steps.len(),
                accepted: v.accepted_len,
                emitted: appended.len(),
                stop_cause: s.stop_cause,
                arms: s.arms.clone(),
                tokens: s.tokens(),
                bonus: v.bonus_token,
                sqrt_entropy: s.steps.iter().map(DraftStep::sqrt_entropy).collect(),
                reward: outcome.reward,
            });
            out.arm_log.extend(outcome.updates);
            let finished = out.tokens.last().is_some_and(|&t| Some(t) == eos);
            if finished || out.tokens.len() >= max_new_tokens {
                return Ok(out);
            }
        }
    }
}
