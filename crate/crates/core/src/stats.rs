//! Streaming mean and variance (Welford).

/// Running mean and sum of squared deviations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sum of squared deviations from the mean.
    pub fn sum_sq_dev(&self) -> f64 {
        self.m2
    }

    /// Population variance; zero before the first observation.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::new();
        iter.into_iter().for_each(|x| w.push(x));
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_rewards() {
        let w: Welford = [0.2, 0.4].into_iter().collect();
        assert!((w.mean() - 0.3).abs() < 1e-15);
        assert!((w.variance() - 0.01).abs() < 1e-15);
        assert!((w.sum_sq_dev() - 0.02).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn matches_two_pass(xs in prop::collection::vec(0.0f64..1.0, 1..200)) {
            let w: Welford = xs.iter().copied().collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            prop_assert!((w.mean() - mean).abs() < 1e-12);
            prop_assert!((w.variance() - var).abs() < 1e-12);
        }
    }
}
