//! Token ids, next-token distributions and the entropy utilities every
//! stopping rule reads from.
//!
//! A [`ProbDist`] is either dense (one probability per vocabulary entry) or
//! sparse: an explicit top-k list plus a `tail_mass` that is spread uniformly
//! over every token not listed. The sparse form is what trace files carry and
//! what the synthetic model pairs emit; treating the tail as uniform is an
//! approximation that only matters for entropy.
//!
//! All entropies are in nats.

use std::cell::OnceCell;
use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of total probability mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A token together with its probability.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TokenProb {
    pub token: TokenId,
    pub prob: f64,
}

impl TokenProb {
    /// Higher probability first, smaller id on ties.
    fn ranks_before(&self, other: &TokenProb) -> bool {
        match self.prob.partial_cmp(&other.prob) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Less) => false,
            _ => self.token < other.token,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Repr {
    Dense(Vec<f64>),
    Sparse {
        vocab_size: usize,
        entries: Vec<TokenProb>,
        tail_mass: f64,
    },
}

/// Probability vector over a vocabulary. Always valid once constructed.
#[derive(Clone, Debug)]
pub struct ProbDist {
    repr: Repr,
    entropy: OnceCell<f64>,
}

impl PartialEq for ProbDist {
    fn eq(&self, other: &Self) -> bool {
        self.repr == other.repr
    }
}

fn check_prob(p: f64, what: impl FnOnce() -> String) -> Result<()> {
    if !p.is_finite() || p < 0.0 {
        return Err(Error::InvalidDistribution(format!("{} has probability {p}", what())));
    }
    Ok(())
}

fn check_mass(total: f64) -> Result<()> {
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("total mass {total} is not 1")));
    }
    Ok(())
}

fn first_duplicate(entries: &[(TokenId, f64)]) -> Option<TokenId> {
    if entries.len() <= 32 {
        return entries
            .iter()
            .enumerate()
            .find(|(i, e)| entries[..*i].iter().any(|f| f.0 == e.0))
            .map(|(_, e)| e.0);
    }
    let mut ids: Vec<TokenId> = entries.iter().map(|e| e.0).collect();
    ids.sort_unstable();
    ids.windows(2).find(|w| w[0] == w[1]).map(|w| w[0])
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

impl ProbDist {
    fn from_repr(repr: Repr) -> Self {
        ProbDist {
            repr,
            entropy: OnceCell::new(),
        }
    }

    /// Sparse form built by code that guarantees validity itself, with an
    /// entropy it computed in closed form.
    pub(crate) fn sparse_trusted(vocab_size: usize, entries: Vec<TokenProb>, tail_mass: f64, entropy: f64) -> Self {
        debug_assert!(entries.len() < vocab_size || tail_mass == 0.0);
        let dist = ProbDist::from_repr(Repr::Sparse {
            vocab_size,
            entries,
            tail_mass,
        });
        debug_assert!((dist.compute_entropy() - entropy).abs() < 1e-12);
        let _ = dist.entropy.set(entropy);
        dist
    }

    pub fn dense(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        for (i, &p) in probs.iter().enumerate() {
            check_prob(p, || format!("token {i}"))?;
        }
        check_mass(probs.iter().sum())?;
        Ok(ProbDist::from_repr(Repr::Dense(probs)))
    }

    /// Top-k entries plus a uniform tail over the `vocab_size - k` unlisted
    /// tokens.
    pub fn sparse(vocab_size: usize, entries: Vec<(TokenId, f64)>, tail_mass: f64) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidDistribution("empty vocabulary".into()));
        }
        if entries.len() > vocab_size {
            return Err(Error::InvalidDistribution(format!(
                "{} entries exceed vocabulary of {vocab_size}",
                entries.len()
            )));
        }
        if let Some(token) = first_duplicate(&entries) {
            return Err(Error::InvalidDistribution(format!("token {token} listed twice")));
        }
        for &(token, p) in &entries {
            if token.index() >= vocab_size {
                return Err(Error::InvalidDistribution(format!(
                    "token {token} outside vocabulary of {vocab_size}"
                )));
            }
            check_prob(p, || format!("token {token}"))?;
        }
        check_prob(tail_mass, || "tail".into())?;
        let n_tail = vocab_size - entries.len();
        if n_tail == 0 && tail_mass > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "tail mass {tail_mass} but no tail tokens"
            )));
        }
        check_mass(entries.iter().map(|e| e.1).sum::<f64>() + tail_mass)?;
        let entries = entries
            .into_iter()
            .map(|(token, prob)| TokenProb { token, prob })
            .collect();
        Ok(ProbDist::from_repr(Repr::Sparse {
            vocab_size,
            entries,
            tail_mass: if n_tail == 0 { 0.0 } else { tail_mass },
        }))
    }

    pub fn one_hot(vocab_size: usize, token: TokenId) -> Result<Self> {
        Self::sparse(vocab_size, vec![(token, 1.0)], 0.0)
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        Self::sparse(vocab_size, Vec::new(), 1.0)
    }

    pub fn vocab_size(&self) -> usize {
        match &self.repr {
            Repr::Dense(p) => p.len(),
            Repr::Sparse { vocab_size, .. } => *vocab_size,
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.repr, Repr::Sparse { .. })
    }

    /// Probability of a single token (zero outside the vocabulary).
    pub fn prob(&self, token: TokenId) -> f64 {
        match &self.repr {
            Repr::Dense(p) => p.get(token.index()).copied().unwrap_or(0.0),
            Repr::Sparse {
                vocab_size,
                entries,
                tail_mass,
            } => {
                if token.index() >= *vocab_size {
                    return 0.0;
                }
                match entries.iter().find(|e| e.token == token) {
                    Some(e) => e.prob,
                    None => tail_mass / (vocab_size - entries.len()) as f64,
                }
            }
        }
    }

    /// Shannon entropy in nats, `0 ln 0 = 0`. The sparse tail contributes
    /// `-tail ln(tail / n_tail)` in closed form.
    pub fn entropy(&self) -> f64 {
        *self.entropy.get_or_init(|| self.compute_entropy())
    }

    fn compute_entropy(&self) -> f64 {
        let h = match &self.repr {
            Repr::Dense(p) => -p.iter().map(|&p| plogp(p)).sum::<f64>(),
            Repr::Sparse {
                vocab_size,
                entries,
                tail_mass,
            } => {
                let head: f64 = entries.iter().map(|e| plogp(e.prob)).sum();
                let n_tail = vocab_size - entries.len();
                let tail = if *tail_mass > 0.0 {
                    tail_mass * (tail_mass / n_tail as f64).ln()
                } else {
                    0.0
                };
                -(head + tail)
            }
        };
        // rounding can leave -0.0 or -1e-17 on one-hot inputs
        h.max(0.0)
    }

    /// Most likely token, smallest id on ties.
    pub fn argmax(&self) -> TokenProb {
        let (top, _) = self.top_two();
        top
    }

    /// The two most likely tokens, ties broken by smaller id.
    pub fn top2(&self) -> Result<(TokenProb, TokenProb)> {
        match self.top_two() {
            (top, Some(second)) => Ok((top, second)),
            (_, None) => Err(Error::VocabTooSmall {
                needed: 2,
                actual: self.vocab_size(),
            }),
        }
    }

    fn top_two(&self) -> (TokenProb, Option<TokenProb>) {
        fn offer(top: &mut (Option<TokenProb>, Option<TokenProb>), c: TokenProb) {
            match top.0 {
                Some(b) if !c.ranks_before(&b) => {
                    if top.1.is_none_or(|s| c.ranks_before(&s)) {
                        top.1 = Some(c);
                    }
                }
                _ => {
                    top.1 = top.0;
                    top.0 = Some(c);
                }
            }
        }
        let mut top = (None, None);
        match &self.repr {
            Repr::Dense(p) => {
                for (i, &prob) in p.iter().enumerate() {
                    offer(
                        &mut top,
                        TokenProb {
                            token: TokenId(i as u32),
                            prob,
                        },
                    );
                }
            }
            Repr::Sparse {
                vocab_size,
                entries,
                tail_mass,
            } => {
                for &e in entries {
                    offer(&mut top, e);
                }
                let n_tail = vocab_size - entries.len();
                let per_token = tail_mass / n_tail.max(1) as f64;
                if n_tail > 0 && top.1.is_none_or(|s| per_token >= s.prob) {
                    // only the two smallest unlisted ids can make the top two
                    let listed = |id: u32| entries.iter().any(|e| e.token.0 == id);
                    for id in (0..*vocab_size as u32).filter(|&id| !listed(id)).take(2) {
                        offer(
                            &mut top,
                            TokenProb {
                                token: TokenId(id),
                                prob: per_token,
                            },
                        );
                    }
                }
            }
        }
        (top.0.expect("vocabulary is non-empty"), top.1)
    }

    /// Materialize as a dense vector.
    pub fn to_dense(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Dense(p) => p.clone(),
            Repr::Sparse {
                vocab_size,
                entries,
                tail_mass,
            } => {
                let n_tail = vocab_size - entries.len();
                let fill = if n_tail > 0 { tail_mass / n_tail as f64 } else { 0.0 };
                let mut out = vec![fill; *vocab_size];
                for e in entries {
                    out[e.token.index()] = e.prob;
                }
                out
            }
        }
    }
}

/// Shannon entropy of `dist` in nats.
pub fn entropy(dist: &ProbDist) -> f64 {
    dist.entropy()
}

/// One drafted position: the draft distribution, the greedy token taken from
/// it and the cached entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct DraftStep {
    /// 1-based index within the drafting session.
    pub position: usize,
    pub dist: ProbDist,
    pub token: TokenId,
    pub entropy: f64,
    top: TokenProb,
    runner_up: Option<TokenProb>,
}

impl DraftStep {
    /// Greedy step: the drafted token is the argmax of `dist`.
    pub fn greedy(position: usize, dist: ProbDist) -> Self {
        let (top, runner_up) = dist.top_two();
        let entropy = dist.entropy();
        DraftStep {
            position,
            token: top.token,
            entropy,
            dist,
            top,
            runner_up,
        }
    }

    pub fn sqrt_entropy(&self) -> f64 {
        self.entropy.sqrt()
    }

    pub fn top(&self) -> TokenProb {
        self.top
    }

    /// Second most likely token; `None` only for a single-token vocabulary.
    pub fn runner_up(&self) -> Option<TokenProb> {
        self.runner_up
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(i: u32) -> TokenId {
        TokenId(i)
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(ProbDist::one_hot(10, t(4)).unwrap().entropy(), 0.0);
        assert_eq!(ProbDist::dense(vec![0.0, 1.0, 0.0]).unwrap().entropy(), 0.0);
        let two = ProbDist::dense(vec![0.5, 0.5]).unwrap();
        assert!((two.entropy() - std::f64::consts::LN_2).abs() < 1e-12);
        let three = ProbDist::dense(vec![0.5, 0.25, 0.25]).unwrap();
        assert!((three.entropy() - 1.039721).abs() < 1e-6);
    }

    #[test]
    fn invalid_mass_is_rejected() {
        assert!(matches!(
            ProbDist::dense(vec![0.5, 0.4]),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(ProbDist::dense(vec![1.5, -0.5]).is_err());
        assert!(ProbDist::sparse(4, vec![(t(0), 0.5), (t(0), 0.5)], 0.0).is_err());
        assert!(ProbDist::sparse(2, vec![(t(0), 0.5), (t(1), 0.4)], 0.1).is_err());
        assert!(ProbDist::sparse(2, vec![(t(2), 1.0)], 0.0).is_err());
        assert!(ProbDist::dense(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn top2_examples() {
        let d = ProbDist::dense(vec![0.1, 0.7, 0.2]).unwrap();
        let (a, b) = d.top2().unwrap();
        assert_eq!((a.token, a.prob, b.token, b.prob), (t(1), 0.7, t(2), 0.2));

        let tie = ProbDist::dense(vec![0.5, 0.5]).unwrap();
        let (a, b) = tie.top2().unwrap();
        assert_eq!((a.token, b.token), (t(0), t(1)));

        let s = ProbDist::sparse(100, vec![(t(3), 0.6), (t(7), 0.3)], 0.1).unwrap();
        let (a, b) = s.top2().unwrap();
        assert_eq!((a.token, a.prob, b.token, b.prob), (t(3), 0.6, t(7), 0.3));
    }

    #[test]
    fn top2_needs_two_tokens() {
        let d = ProbDist::dense(vec![1.0]).unwrap();
        assert!(matches!(d.top2(), Err(Error::VocabTooSmall { .. })));
        assert_eq!(d.argmax().token, t(0));
    }

    #[test]
    fn heavy_tail_can_win_top2() {
        // tail tokens 0 and 2 each carry 0.45
        let d = ProbDist::sparse(3, vec![(t(1), 0.1)], 0.9).unwrap();
        let (a, b) = d.top2().unwrap();
        assert_eq!((a.token, b.token), (t(0), t(2)));
        assert!((a.prob - 0.45).abs() < 1e-15);
    }

    #[test]
    fn draft_step_caches() {
        let d = ProbDist::dense(vec![0.25, 0.5, 0.25]).unwrap();
        let step = DraftStep::greedy(1, d.clone());
        assert_eq!(step.token, t(1));
        assert!((step.entropy - d.entropy()).abs() < 1e-12);
        assert_eq!(step.runner_up().unwrap().token, t(0));
    }

    #[test]
    fn uniform_entropy_is_ln_k() {
        for k in 2..=1024usize {
            let dense = ProbDist::dense(vec![1.0 / k as f64; k]).unwrap();
            assert!((dense.entropy() - (k as f64).ln()).abs() < 1e-9, "k={k}");
            let sparse = ProbDist::uniform(k).unwrap();
            assert!((sparse.entropy() - (k as f64).ln()).abs() < 1e-9, "k={k}");
        }
    }

    fn arb_dense() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..40).prop_filter_map("zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn entropy_nonnegative_zero_iff_one_hot(p in arb_dense()) {
            let d = ProbDist::dense(p.clone()).unwrap();
            let h = d.entropy();
            prop_assert!(h >= 0.0);
            let one_hot = p.iter().filter(|&&x| x > 0.0).count() == 1;
            prop_assert_eq!(h == 0.0, one_hot);
        }

        #[test]
        fn dense_and_sparse_agree(p in arb_dense(), k in 1usize..40) {
            // top-k explicit, the rest pooled into a uniform tail of equal
            // per-token mass so both forms describe the same distribution
            let n = p.len();
            let k = k.min(n);
            let tail_each = p[k..].iter().sum::<f64>() / (n - k).max(1) as f64;
            let mut dense = p.clone();
            for x in dense[k..].iter_mut() { *x = tail_each; }
            let total: f64 = dense.iter().sum();
            let dense: Vec<f64> = dense.iter().map(|x| x / total).collect();
            let entries: Vec<(TokenId, f64)> =
                dense[..k].iter().enumerate().map(|(i, &x)| (TokenId(i as u32), x)).collect();
            let tail: f64 = dense[k..].iter().sum();
            let a = ProbDist::dense(dense.clone()).unwrap();
            let b = ProbDist::sparse(n, entries, tail).unwrap();
            prop_assert!((a.entropy() - b.entropy()).abs() < 1e-9);
            let (a1, a2) = a.top2().unwrap();
            let (b1, b2) = b.top2().unwrap();
            prop_assert_eq!(a1.token, b1.token);
            prop_assert_eq!(a2.token, b2.token);
        }

        #[test]
        fn top2_matches_sort(p in arb_dense()) {
            let d = ProbDist::dense(p.clone()).unwrap();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&i, &j| p[j].partial_cmp(&p[i]).unwrap().then(i.cmp(&j)));
            let (a, b) = d.top2().unwrap();
            prop_assert_eq!(a.token.index(), idx[0]);
            prop_assert_eq!(b.token.index(), idx[1]);
        }
    }
}
