//! Bandit meta-policies over a finite set of arms.
//!
//! * UCB1: `mean_a + sqrt(2 ln t / N_a)`.
//! * UCB-Tuned: `mean_a + sqrt((ln t / N_a) * min(1/4, V_a))` with
//!   `V_a = var_a + sqrt(2 ln t / N_a)` and `var_a` the population variance.
//! * Gaussian Thompson sampling with a known noise variance (continuous
//!   rewards).
//! * Beta-Bernoulli Thompson sampling (binary rewards).
//!
//! The UCB variants pull every arm once, lowest index first, before the
//! index formula applies, and evaluate `ln t` with `t` = completed updates
//! + 1. All argmax ties go to the lowest index.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Welford;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BanditKind {
    Ucb1,
    UcbTuned,
    GaussianTs {
        #[serde(default = "default_prior_mean")]
        prior_mean: f64,
        #[serde(default = "default_prior_var")]
        prior_var: f64,
        #[serde(default = "default_noise_var")]
        noise_var: f64,
    },
    BetaTs,
}

fn default_prior_mean() -> f64 {
    0.5
}
fn default_prior_var() -> f64 {
    1.0
}
fn default_noise_var() -> f64 {
    0.1
}

impl BanditKind {
    pub fn gaussian_ts() -> Self {
        BanditKind::GaussianTs {
            prior_mean: default_prior_mean(),
            prior_var: default_prior_var(),
            noise_var: default_noise_var(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BanditKind::Ucb1 => "ucb1",
            BanditKind::UcbTuned => "ucb-tuned",
            BanditKind::GaussianTs { .. } => "gaussian-ts",
            BanditKind::BetaTs => "beta-ts",
        }
    }

    /// Whether the policy only accepts rewards in {0, 1}.
    pub fn needs_binary_rewards(&self) -> bool {
        matches!(self, BanditKind::BetaTs)
    }

    pub fn validate(&self) -> Result<()> {
        if let BanditKind::GaussianTs {
            prior_mean,
            prior_var,
            noise_var,
        } = *self
        {
            if !(prior_mean.is_finite() && prior_var > 0.0 && noise_var > 0.0) {
                return Err(Error::config(
                    "gaussian-ts needs a finite prior mean and positive variances",
                ));
            }
        }
        Ok(())
    }
}

/// Per-arm readout for logs.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmValue {
    /// Empirical mean (UCB) or posterior mean (TS).
    pub value: f64,
    /// Pulls (UCB, Gaussian TS) or pseudo-count `alpha + beta - 2` (Beta TS).
    pub count: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UcbState {
    pub tuned: bool,
    pub arms: Vec<Welford>,
}

impl UcbState {
    /// `t` in `ln t`: completed updates + 1.
    pub fn timestep(&self) -> u64 {
        self.arms.iter().map(Welford::count).sum::<u64>() + 1
    }

    /// Exploration bonus of `arm`; infinite before its first pull.
    pub fn bonus(&self, arm: usize) -> f64 {
        let stats = &self.arms[arm];
        let n = stats.count() as f64;
        if n == 0.0 {
            return f64::INFINITY;
        }
        let ln_t = (self.timestep() as f64).ln();
        let ucb1 = (2.0 * ln_t / n).sqrt();
        if self.tuned {
            let v = stats.variance() + ucb1;
            (ln_t / n * v.min(0.25)).sqrt()
        } else {
            ucb1
        }
    }

    pub fn index(&self, arm: usize) -> f64 {
        self.arms[arm].mean() + self.bonus(arm)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianArm {
    pub mean: f64,
    pub var: f64,
    pub pulls: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTsState {
    pub noise_var: f64,
    pub arms: Vec<GaussianArm>,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaArm {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaTsState {
    pub arms: Vec<BetaArm>,
}

/// Learning state of one bandit policy.
#[derive(Clone, Debug, PartialEq)]
pub enum Bandit {
    Ucb(UcbState),
    GaussianTs(GaussianTsState),
    BetaTs(BetaTsState),
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

impl Bandit {
    pub fn new(kind: &BanditKind, n_arms: usize) -> Self {
        match *kind {
            BanditKind::Ucb1 | BanditKind::UcbTuned => Bandit::Ucb(UcbState {
                tuned: matches!(kind, BanditKind::UcbTuned),
                arms: vec![Welford::new(); n_arms],
            }),
            BanditKind::GaussianTs {
                prior_mean,
                prior_var,
                noise_var,
            } => Bandit::GaussianTs(GaussianTsState {
                noise_var,
                arms: vec![
                    GaussianArm {
                        mean: prior_mean,
                        var: prior_var,
                        pulls: 0,
                    };
                    n_arms
                ],
            }),
            BanditKind::BetaTs => Bandit::BetaTs(BetaTsState {
                arms: vec![BetaArm { alpha: 1.0, beta: 1.0 }; n_arms],
            }),
        }
    }

    pub fn arm_count(&self) -> usize {
        match self {
            Bandit::Ucb(s) => s.arms.len(),
            Bandit::GaussianTs(s) => s.arms.len(),
            Bandit::BetaTs(s) => s.arms.len(),
        }
    }

    /// Pick the next arm. Only the Thompson variants draw from `rng`.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.arm_count() == 0 {
            return Err(Error::EmptyArmSet);
        }
        let chosen = match self {
            Bandit::Ucb(s) => match s.arms.iter().position(|a| a.count() == 0) {
                Some(unpulled) => Some(unpulled),
                None => argmax((0..s.arms.len()).map(|a| s.index(a))),
            },
            Bandit::GaussianTs(s) => argmax(s.arms.iter().map(|a| {
                Normal::new(a.mean, a.var.sqrt())
                    .expect("posterior variance is positive")
                    .sample(rng)
            })),
            Bandit::BetaTs(s) => argmax(s.arms.iter().map(|a| {
                Beta::new(a.alpha, a.beta)
                    .expect("posterior parameters are positive")
                    .sample(rng)
            })),
        };
        Ok(chosen.expect("non-empty arm set"))
    }

    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        let count = self.arm_count();
        if arm >= count {
            return Err(Error::UnknownArm { index: arm, count });
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::RewardOutOfRange(reward));
        }
        match self {
            Bandit::Ucb(s) => s.arms[arm].push(reward),
            Bandit::GaussianTs(s) => {
                let a = &mut s.arms[arm];
                let precision = 1.0 / a.var + 1.0 / s.noise_var;
                let var = 1.0 / precision;
                a.mean = var * (a.mean / a.var + reward / s.noise_var);
                a.var = var;
                a.pulls += 1;
            }
            Bandit::BetaTs(s) => {
                if reward != 0.0 && reward != 1.0 {
                    return Err(Error::NonBinaryReward(reward));
                }
                let a = &mut s.arms[arm];
                a.alpha += reward;
                a.beta += 1.0 - reward;
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<ArmValue> {
        match self {
            Bandit::Ucb(s) => s
                .arms
                .iter()
                .map(|a| ArmValue {
                    value: a.mean(),
                    count: a.count() as f64,
                })
                .collect(),
            Bandit::GaussianTs(s) => s
                .arms
                .iter()
                .map(|a| ArmValue {
                    value: a.mean,
                    count: a.pulls as f64,
                })
                .collect(),
            Bandit::BetaTs(s) => s
                .arms
                .iter()
                .map(|a| ArmValue {
                    value: a.alpha / (a.alpha + a.beta),
                    count: a.alpha + a.beta - 2.0,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn ucb_with(tuned: bool, arms: &[&[f64]]) -> Bandit {
        let kind = if tuned { BanditKind::UcbTuned } else { BanditKind::Ucb1 };
        let mut b = Bandit::new(&kind, arms.len());
        for (i, rewards) in arms.iter().enumerate() {
            for &r in *rewards {
                b.update(i, r).unwrap();
            }
        }
        b
    }

    #[test]
    fn unpulled_arm_first() {
        let b = ucb_with(false, &[&[0.9], &[]]);
        let mut rng = SimRng::seed_from_u64(0);
        assert_eq!(b.select(&mut rng).unwrap(), 1);
        let fresh = Bandit::new(&BanditKind::Ucb1, 5);
        assert_eq!(fresh.select(&mut rng).unwrap(), 0);
    }

    #[test]
    fn ucb1_index_example() {
        let b = ucb_with(false, &[&[0.6; 10], &[0.5; 2]]);
        let Bandit::Ucb(s) = &b else { unreachable!() };
        assert_eq!(s.timestep(), 13);
        let ln13 = 13f64.ln();
        assert!((s.bonus(0) - (2.0 * ln13 / 10.0).sqrt()).abs() < 1e-12);
        assert!((s.bonus(0) - 0.716).abs() < 1e-3);
        assert!((s.bonus(1) - 1.601).abs() < 1e-3);
        assert_eq!(b.select(&mut SimRng::seed_from_u64(0)).unwrap(), 1);
    }

    #[test]
    fn ucb_ties_go_low() {
        let b = ucb_with(false, &[&[0.5], &[0.5], &[0.5]]);
        assert_eq!(b.select(&mut SimRng::seed_from_u64(0)).unwrap(), 0);
    }

    #[test]
    fn welford_through_update() {
        let b = ucb_with(false, &[&[0.2, 0.4]]);
        let Bandit::Ucb(s) = &b else { unreachable!() };
        assert!((s.arms[0].mean() - 0.3).abs() < 1e-15);
        assert!((s.arms[0].variance() - 0.01).abs() < 1e-15);
        assert!((s.arms[0].sum_sq_dev() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn beta_counts() {
        let mut b = Bandit::new(&BanditKind::BetaTs, 1);
        for r in [1.0, 1.0, 0.0] {
            b.update(0, r).unwrap();
        }
        let Bandit::BetaTs(s) = &b else { unreachable!() };
        assert_eq!(s.arms[0], BetaArm { alpha: 3.0, beta: 2.0 });
        assert!((b.snapshot()[0].value - 0.6).abs() < 1e-15);
        assert!(matches!(b.update(0, 0.5), Err(Error::NonBinaryReward(_))));
    }

    #[test]
    fn gaussian_conjugate_example() {
        let mut b = Bandit::new(&BanditKind::gaussian_ts(), 1);
        b.update(0, 0.9).unwrap();
        let Bandit::GaussianTs(s) = &b else { unreachable!() };
        let expected = (0.5 / 1.0 + 0.9 / 0.1) / (1.0 / 1.0 + 1.0 / 0.1);
        assert!((s.arms[0].mean - expected).abs() < 1e-15);
        assert!((s.arms[0].mean - 0.86364).abs() < 1e-5);
        assert!((s.arms[0].var - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn beta_ts_prefers_strong_arm() {
        let mut b = Bandit::new(&BanditKind::BetaTs, 2);
        if let Bandit::BetaTs(s) = &mut b {
            s.arms[0] = BetaArm {
                alpha: 100.0,
                beta: 1.0,
            };
            s.arms[1] = BetaArm {
                alpha: 1.0,
                beta: 100.0,
            };
        }
        let mut rng = SimRng::seed_from_u64(42);
        let wins = (0..1000).filter(|_| b.select(&mut rng).unwrap() == 0).count();
        assert!(wins >= 990, "wins = {wins}");
    }

    #[test]
    fn errors() {
        let mut b = Bandit::new(&BanditKind::Ucb1, 2);
        assert!(matches!(b.update(2, 0.5), Err(Error::UnknownArm { .. })));
        assert!(matches!(b.update(0, 1.5), Err(Error::RewardOutOfRange(_))));
        assert!(matches!(b.update(0, f64::NAN), Err(Error::RewardOutOfRange(_))));
        let empty = Bandit::new(&BanditKind::Ucb1, 0);
        assert!(matches!(
            empty.select(&mut SimRng::seed_from_u64(0)),
            Err(Error::EmptyArmSet)
        ));
    }

    #[test]
    fn snapshot_is_pure() {
        let b = Bandit::new(&BanditKind::Ucb1, 3);
        let first = b.snapshot();
        assert_eq!(first, b.snapshot());
        assert!(first.iter().all(|v| v.value == 0.0 && v.count == 0.0));
    }

    #[test]
    fn ts_select_is_seeded() {
        let b = Bandit::new(&BanditKind::gaussian_ts(), 4);
        let draw = |seed| {
            let mut rng = SimRng::seed_from_u64(seed);
            (0..20).map(|_| b.select(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    proptest! {
        #[test]
        fn tuned_bonus_never_exceeds_ucb1(rewards in prop::collection::vec(0.0f64..=1.0, 1..50), extra in 0usize..50) {
            let mut plain = Bandit::new(&BanditKind::Ucb1, 2);
            let mut tuned = Bandit::new(&BanditKind::UcbTuned, 2);
            for &r in &rewards {
                plain.update(0, r).unwrap();
                tuned.update(0, r).unwrap();
            }
            for _ in 0..extra {
                plain.update(1, 0.5).unwrap();
                tuned.update(1, 0.5).unwrap();
            }
            let (Bandit::Ucb(p), Bandit::Ucb(t)) = (&plain, &tuned) else { unreachable!() };
            prop_assert!(t.bonus(0) <= p.bonus(0));
        }

        #[test]
        fn gaussian_variance_closed_form(rewards in prop::collection::vec(0.0f64..=1.0, 1..100)) {
            let mut b = Bandit::new(&BanditKind::gaussian_ts(), 1);
            let mut prev = f64::INFINITY;
            for &r in &rewards {
                b.update(0, r).unwrap();
                let Bandit::GaussianTs(s) = &b else { unreachable!() };
                prop_assert!(s.arms[0].var > 0.0 && s.arms[0].var <= prev);
                prev = s.arms[0].var;
            }
            let n = rewards.len() as f64;
            prop_assert!((prev - 1.0 / (1.0 / 1.0 + n / 0.1)).abs() < 1e-12);
        }

        #[test]
        fn ucb_timestep_counts_updates(pulls in prop::collection::vec(0usize..4, 0..60)) {
            let mut b = Bandit::new(&BanditKind::Ucb1, 4);
            for &a in &pulls { b.update(a, 0.5).unwrap(); }
            let Bandit::Ucb(s) = &b else { unreachable!() };
            prop_assert_eq!(s.timestep(), pulls.len() as u64 + 1);
        }
    }
}
