//! Rewards, acceptance statistics and the cost model behind the speedup
//! figure.
//!
//! Speedup is a ratio of modeled costs, not wall-clock time. A session that
//! drafts `|X|` tokens costs `|X| * c_draft + c_target`: one draft forward
//! pass per drafted token and one target pass that verifies the whole block
//! and yields the bonus token.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::TokenId;
use crate::error::{Error, Result};
use crate::stats::Welford;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// `|Y| / gamma`
    Simple,
    /// `alpha |Y| / gamma + (1 - alpha) |Y| / |X|`
    Blend,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub kind: RewardKind,
    #[serde(default = "RewardConfig::default_alpha")]
    pub alpha: f64,
}

impl RewardConfig {
    fn default_alpha() -> f64 {
        0.5
    }

    pub fn simple() -> Self {
        RewardConfig {
            kind: RewardKind::Simple,
            alpha: Self::default_alpha(),
        }
    }

    pub fn blend() -> Self {
        RewardConfig {
            kind: RewardKind::Blend,
            alpha: Self::default_alpha(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("reward alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::blend()
    }
}

/// Sequence-level reward for one session.
pub fn reward(config: &RewardConfig, accepted: usize, drafted: usize, gamma_max: usize) -> Result<f64> {
    if drafted == 0 || accepted > drafted || accepted > gamma_max {
        return Err(Error::InvalidCounts { accepted, drafted });
    }
    let length = accepted as f64 / gamma_max as f64;
    Ok(match config.kind {
        RewardKind::Simple => length,
        RewardKind::Blend => {
            let rate = accepted as f64 / drafted as f64;
            config.alpha * length + (1.0 - config.alpha) * rate
        }
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    /// Cost of one draft forward pass.
    pub draft: f64,
    /// Cost of one target verification pass.
    pub target: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            draft: 1.0,
            target: 8.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.draft > 0.0 && self.target > self.draft && self.target.is_finite()) {
            return Err(Error::config("cost model needs target > draft > 0"));
        }
        Ok(())
    }

    pub fn session_cost(&self, drafted: usize) -> f64 {
        drafted as f64 * self.draft + self.target
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCause {
    ArmStop,
    MaxLength,
    Eos,
}

/// Serializable log of one drafting session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub prompt_id: String,
    pub tag: String,
    /// `|X|`
    pub drafted: usize,
    /// `|Y|`
    pub accepted: usize,
    /// Tokens appended to the output (accepted + bonus, clipped at the
    /// generation budget or EOS).
    pub emitted: usize,
    pub stop_cause: StopCause,
    /// Arm chosen for the session (sequence level) or per position (token
    /// level); empty when no bandit is involved.
    pub arms: Vec<usize>,
    pub tokens: Vec<TokenId>,
    pub bonus: Option<TokenId>,
    /// `sqrt(H)` of each drafted position.
    pub sqrt_entropy: Vec<f64>,
    /// Sequence-level reward, when one was computed.
    pub reward: Option<f64>,
}

pub fn output_tokens(sessions: &[SessionRecord]) -> usize {
    sessions.iter().map(|s| s.emitted).sum()
}

pub fn total_cost(sessions: &[SessionRecord], cost: &CostModel) -> f64 {
    sessions.iter().map(|s| cost.session_cost(s.drafted)).sum()
}

/// Baseline cost over method cost for the same output.
pub fn speedup(method: &[SessionRecord], baseline: &[SessionRecord], cost: &CostModel) -> Result<f64> {
    let (m, b) = (output_tokens(method), output_tokens(baseline));
    if m != b {
        return Err(Error::MismatchedOutputLength { method: m, baseline: b });
    }
    Ok(total_cost(baseline, cost) / total_cost(method, cost))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sessions: usize,
    /// Mean accepted length `m`.
    pub mean_accepted: f64,
    /// Mean drafted length.
    pub mean_drafted: f64,
    /// `sum |Y| / sum |X|`
    pub accept_rate: f64,
    pub speedup: f64,
    pub output_tokens: usize,
}

impl RunMetrics {
    pub fn compute(method: &[SessionRecord], baseline: &[SessionRecord], cost: &CostModel) -> Result<Self> {
        let drafted: usize = method.iter().map(|s| s.drafted).sum();
        let accepted: usize = method.iter().map(|s| s.accepted).sum();
        let n = method.len().max(1) as f64;
        Ok(RunMetrics {
            sessions: method.len(),
            mean_accepted: accepted as f64 / n,
            mean_drafted: drafted as f64 / n,
            accept_rate: if drafted == 0 {
                0.0
            } else {
                accepted as f64 / drafted as f64
            },
            speedup: speedup(method, baseline, cost)?,
            output_tokens: output_tokens(method),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    /// 1-based position within the session.
    pub position: usize,
    pub count: u64,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of `sqrt(H)` at accepted positions, per tag and
/// position.
pub fn entropy_profile(sessions: &[SessionRecord]) -> BTreeMap<String, Vec<ProfilePoint>> {
    let mut acc: BTreeMap<&str, Vec<Welford>> = BTreeMap::new();
    for s in sessions.iter().filter(|s| s.accepted > 0) {
        let per_pos = acc.entry(&s.tag).or_default();
        if per_pos.len() < s.accepted {
            per_pos.resize(s.accepted, Welford::new());
        }
        for (w, &h) in per_pos.iter_mut().zip(&s.sqrt_entropy[..s.accepted]) {
            w.push(h);
        }
    }
    acc.into_iter()
        .map(|(tag, per_pos)| {
            let points = per_pos
                .iter()
                .enumerate()
                .map(|(i, w)| ProfilePoint {
                    position: i + 1,
                    count: w.count(),
                    mean: w.mean(),
                    std: w.std_dev(),
                })
                .collect();
            (tag.to_string(), points)
        })
        .collect()
}
