//! Training-free stopping rules.
//!
//! Each arm looks at the step just drafted (and, for the difference rule,
//! the one before it) and says whether to stop drafting. Comparisons are
//! strict, exactly as the rules are stated:
//!
//! | arm              | stop when                          | default `h` |
//! |------------------|------------------------------------|-------------|
//! | max-confidence   | `p(top1) < h`                      | 0.8         |
//! | svip             | `sqrt(H) > h`                      | 0.6         |
//! | ada-edl          | `1 - sqrt(gamma_scale * H) < lambda` | -         |
//! | svip-difference  | `sqrt(H_t) - sqrt(H_{t-1}) > h`    | 0.2         |
//! | logit-margin     | `p(top1) - p(top2) < h`            | 0.2         |
//!
//! `always-continue` and `always-stop` are degenerate arms used for
//! baselines and tests.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::DraftStep;
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmDecision {
    Stop,
    Continue,
}

impl ArmDecision {
    fn stop_if(cond: bool) -> Self {
        if cond {
            ArmDecision::Stop
        } else {
            ArmDecision::Continue
        }
    }

    pub fn is_stop(self) -> bool {
        self == ArmDecision::Stop
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmKind {
    MaxConfidence,
    Svip,
    AdaEdl,
    SvipDifference,
    LogitMargin,
    AlwaysContinue,
    AlwaysStop,
}

impl ArmKind {
    pub fn default_threshold(self) -> Option<f64> {
        match self {
            ArmKind::MaxConfidence => Some(0.8),
            ArmKind::Svip => Some(0.6),
            ArmKind::SvipDifference => Some(0.2),
            ArmKind::LogitMargin => Some(0.2),
            ArmKind::AdaEdl | ArmKind::AlwaysContinue | ArmKind::AlwaysStop => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArmKind::MaxConfidence => "max-confidence",
            ArmKind::Svip => "svip",
            ArmKind::AdaEdl => "ada-edl",
            ArmKind::SvipDifference => "svip-difference",
            ArmKind::LogitMargin => "logit-margin",
            ArmKind::AlwaysContinue => "always-continue",
            ArmKind::AlwaysStop => "always-stop",
        }
    }
}

impl fmt::Display for ArmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How AdaEDL moves its threshold after each draft.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// `lambda' = b2*lambda + (1-b2)*(lambda + eps*sign(alpha - r))`, with
    /// `r` the last draft's acceptance rate. The smoothed acceptance rate is
    /// tracked but not read.
    #[default]
    LastDraft,
    /// Same recursion driven by the smoothed acceptance rate instead.
    SmoothedRate,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaEdlParams {
    /// Target acceptance rate.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Scale inside `1 - sqrt(gamma_scale * H)`.
    pub gamma_scale: f64,
    pub epsilon: f64,
    pub initial_lambda: f64,
    pub lambda_rule: LambdaRule,
}

impl Default for AdaEdlParams {
    fn default() -> Self {
        AdaEdlParams {
            alpha: 0.85,
            beta1: 0.9,
            beta2: 0.9,
            gamma_scale: 0.2,
            epsilon: 0.01,
            initial_lambda: 0.5,
            lambda_rule: LambdaRule::LastDraft,
        }
    }
}

/// AdaEDL's online state: the moving threshold and the smoothed
/// acceptance rate.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaEdlState {
    pub lambda: f64,
    pub accept_rate: f64,
    pub params: AdaEdlParams,
}

impl AdaEdlState {
    pub fn new(params: AdaEdlParams) -> Self {
        AdaEdlState {
            lambda: params.initial_lambda,
            accept_rate: params.alpha,
            params,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fold one finished draft into the AdaEDL state.
pub fn adaedl_update(state: &AdaEdlState, n_acc: usize, n_drafted: usize) -> Result<AdaEdlState> {
    if n_drafted == 0 || n_acc > n_drafted {
        return Err(Error::InvalidCounts {
            accepted: n_acc,
            drafted: n_drafted,
        });
    }
    let p = &state.params;
    let r = n_acc as f64 / n_drafted as f64;
    let accept_rate = p.beta1 * state.accept_rate + (1.0 - p.beta1) * r;
    let driver = match p.lambda_rule {
        LambdaRule::LastDraft => r,
        LambdaRule::SmoothedRate => accept_rate,
    };
    let lambda = p.beta2 * state.lambda + (1.0 - p.beta2) * (state.lambda + p.epsilon * sign(p.alpha - driver));
    Ok(AdaEdlState {
        lambda,
        accept_rate,
        params: state.params,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub kind: ArmKind,
    /// Overrides the kind's default threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaedl: Option<AdaEdlParams>,
}

impl ArmConfig {
    pub fn new(kind: ArmKind) -> Self {
        ArmConfig {
            kind,
            threshold: None,
            adaedl: None,
        }
    }

    pub fn with_threshold(kind: ArmKind, h: f64) -> Self {
        ArmConfig {
            threshold: Some(h),
            ..Self::new(kind)
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.or(self.kind.default_threshold()).unwrap_or(f64::NAN)
    }

    pub fn adaedl_params(&self) -> AdaEdlParams {
        self.adaedl.unwrap_or_default()
    }

    /// Display name; a non-default threshold is appended (`svip@0.4`).
    pub fn name(&self) -> String {
        match self.threshold {
            Some(h) if Some(h) != self.kind.default_threshold() => format!("{}@{h}", self.kind),
            _ => self.kind.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.threshold {
            if !h.is_finite() {
                return Err(Error::config(format!("arm {}: threshold must be finite", self.kind)));
            }
        }
        if let Some(p) = &self.adaedl {
            let unit = |x: f64| (0.0..=1.0).contains(&x);
            if !(unit(p.alpha) && unit(p.beta1) && unit(p.beta2)) {
                return Err(Error::config("ada-edl: alpha, beta1, beta2 must be in [0, 1]"));
            }
            if !(p.gamma_scale >= 0.0 && p.epsilon >= 0.0 && p.initial_lambda.is_finite()) {
                return Err(Error::config("ada-edl: gamma_scale and epsilon must be non-negative"));
            }
        }
        Ok(())
    }
}

/// The five stopping rules with their default thresholds.
pub fn default_pool() -> Vec<ArmConfig> {
    [
        ArmKind::MaxConfidence,
        ArmKind::Svip,
        ArmKind::AdaEdl,
        ArmKind::SvipDifference,
        ArmKind::LogitMargin,
    ]
    .into_iter()
    .map(ArmConfig::new)
    .collect()
}

/// Apply `arm`'s stopping rule to the step just drafted.
///
/// `adaedl` is only read by the AdaEDL arm; when absent a fresh state from
/// the arm's parameters is used. `previous` is only read by the difference
/// rule, which continues when there is no previous step.
pub fn decide(
    arm: &ArmConfig,
    adaedl: Option<&AdaEdlState>,
    current: &DraftStep,
    previous: Option<&DraftStep>,
) -> ArmDecision {
    let h = arm.threshold();
    match arm.kind {
        ArmKind::MaxConfidence => ArmDecision::stop_if(current.top().prob < h),
        ArmKind::Svip => ArmDecision::stop_if(current.sqrt_entropy() > h),
        ArmKind::AdaEdl => {
            let fresh;
            let state = match adaedl {
                Some(s) => s,
                None => {
                    fresh = AdaEdlState::new(arm.adaedl_params());
                    &fresh
                }
            };
            let score = 1.0 - (state.params.gamma_scale * current.entropy).sqrt();
            ArmDecision::stop_if(score < state.lambda)
        }
        ArmKind::SvipDifference => match previous {
            None => ArmDecision::Continue,
            Some(prev) => ArmDecision::stop_if(current.sqrt_entropy() - prev.sqrt_entropy() > h),
        },
        ArmKind::LogitMargin => {
            let second = current.runner_up().map_or(0.0, |t| t.prob);
            ArmDecision::stop_if(current.top().prob - second < h)
        }
        ArmKind::AlwaysContinue => ArmDecision::Continue,
        ArmKind::AlwaysStop => ArmDecision::Stop,
    }
}

/// An arm with its own online state.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub config: ArmConfig,
    pub adaedl: Option<AdaEdlState>,
}

impl Arm {
    pub fn new(config: ArmConfig) -> Self {
        let adaedl = (config.kind == ArmKind::AdaEdl).then(|| AdaEdlState::new(config.adaedl_params()));
        Arm { config, adaedl }
    }

    pub fn decide(&self, current: &DraftStep, previous: Option<&DraftStep>) -> ArmDecision {
        decide(&self.config, self.adaedl.as_ref(), current, previous)
    }

    /// Called after every verified draft; only AdaEDL keeps state.
    pub fn observe_draft(&mut self, n_acc: usize, n_drafted: usize) -> Result<()> {
        if let Some(s) = &self.adaedl {
            self.adaedl = Some(adaedl_update(s, n_acc, n_drafted)?);
        }
        Ok(())
    }
}
