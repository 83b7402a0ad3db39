//! Uniform model of available renewable capacity and its discrete surrogates.
//!
//! The probability space is the interval `[mu - sqrt(3) sigma, mu + sqrt(3) sigma]`
//! with the uniform measure. Every other module evaluates expectations over a
//! [`ScenarioSet`], either a midpoint-rule grid ([`discretize`]) or a seeded
//! Monte Carlo draw ([`sample`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{pairwise_sum, Scalar};

/// Identifier of the pseudo-random generator used by [`sample`]. Recorded in
/// output metadata so that artifacts can be regenerated bit-for-bit.
pub const RNG_ALGORITHM: &str = "chacha8 (rand_chacha 0.3, seed_from_u64)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("sigma must be positive and finite, got {0}")]
    NonPositiveSigma(f64),
    #[error("support lower end mu - sqrt(3) sigma = {0} is negative")]
    NegativeSupport(f64),
    #[error("mean must be finite, got {0}")]
    NonFiniteMean(f64),
    #[error("scenario count must be at least 1")]
    EmptySet,
    #[error("scenario weight {weight} at index {index} is not positive")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("scenario weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("scenario {omega} at index {index} lies outside the support [{lo}, {hi}]")]
    OutOfSupport { index: usize, omega: f64, lo: f64, hi: f64 },
}

/// Uniform distribution over available capacity with mean `mu` and standard
/// deviation `sigma` (both in MW).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformScenarioModel<T> {
    mu: T,
    sigma: T,
}

impl<T: Scalar> UniformScenarioModel<T> {
    pub fn new(mu: T, sigma: T) -> Result<Self, ScenarioError> {
        if !mu.is_finite() {
            return Err(ScenarioError::NonFiniteMean(mu.to_f64().unwrap_or(f64::NAN)));
        }
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(ScenarioError::NonPositiveSigma(
                sigma.to_f64().unwrap_or(f64::NAN),
            ));
        }
        let lo = mu - T::sqrt3() * sigma;
        if lo < T::zero() {
            return Err(ScenarioError::NegativeSupport(lo.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    /// `sqrt(3) sigma`: half the support width, and the option volume cap of
    /// the bilateral example.
    pub fn half_width(&self) -> T {
        T::sqrt3() * self.sigma
    }

    /// Support `(mu - sqrt(3) sigma, mu + sqrt(3) sigma)`.
    pub fn support(&self) -> (T, T) {
        let a = self.half_width();
        (self.mu - a, self.mu + a)
    }

    pub fn variance(&self) -> T {
        self.sigma * self.sigma
    }

    pub fn in_support(&self, omega: T) -> bool {
        let (lo, hi) = self.support();
        // Endpoints are computed, so allow a few ulps of slack.
        let slack = T::lit(8.0) * T::eps() * (hi.abs() + T::one());
        omega >= lo - slack && omega <= hi + slack
    }

    /// Uniform CDF evaluated at `x`.
    pub fn cdf(&self, x: T) -> T {
        let (lo, hi) = self.support();
        if x <= lo {
            T::zero()
        } else if x >= hi {
            T::one()
        } else {
            (x - lo) / (hi - lo)
        }
    }
}

/// One atom of a discrete scenario measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioPoint<T> {
    pub omega: T,
    pub weight: T,
}

/// Weighted scenarios in ascending generation order. Weights are stored
/// explicitly so non-uniform measures fit the same interface.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet<T> {
    points: Vec<ScenarioPoint<T>>,
}

impl<T: Scalar> ScenarioSet<T> {
    /// Validates weights and support membership.
    pub fn from_points(
        model: &UniformScenarioModel<T>,
        points: Vec<ScenarioPoint<T>>,
    ) -> Result<Self, ScenarioError> {
        if points.is_empty() {
            return Err(ScenarioError::EmptySet);
        }
        let (lo, hi) = model.support();
        for (index, p) in points.iter().enumerate() {
            if !(p.weight > T::zero()) {
                return Err(ScenarioError::NonPositiveWeight {
                    index,
                    weight: p.weight.to_f64().unwrap_or(f64::NAN),
                });
            }
            if !model.in_support(p.omega) {
                return Err(ScenarioError::OutOfSupport {
                    index,
                    omega: p.omega.to_f64().unwrap_or(f64::NAN),
                    lo: lo.to_f64().unwrap_or(f64::NAN),
                    hi: hi.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        let weights: Vec<T> = points.iter().map(|p| p.weight).collect();
        let total = pairwise_sum(&weights);
        // 1e-12 absolute for f64; f32 cannot resolve that, so scale with epsilon.
        let tol = T::lit(1e-12).max(T::lit(64.0) * T::eps());
        if (total - T::one()).abs() > tol {
            return Err(ScenarioError::WeightsNotNormalized(
                total.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[ScenarioPoint<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn omegas(&self) -> impl Iterator<Item = T> + '_ {
        self.points.iter().map(|p| p.omega)
    }

    pub fn weights(&self) -> impl Iterator<Item = T> + '_ {
        self.points.iter().map(|p| p.weight)
    }

    /// `sum weight * valuation(omega)` with a pairwise reduction.
    pub fn expect<F: Fn(T) -> T>(&self, valuation: F) -> T {
        let terms: Vec<T> = self
            .points
            .iter()
            .map(|p| p.weight * valuation(p.omega))
            .collect();
        pairwise_sum(&terms)
    }

    /// Expectation of values already aligned with the scenario order.
    pub fn expect_values(&self, values: &[T]) -> T {
        assert_eq!(values.len(), self.points.len(), "values not aligned with scenarios");
        let terms: Vec<T> = self
            .points
            .iter()
            .zip(values)
            .map(|(p, &v)| p.weight * v)
            .collect();
        pairwise_sum(&terms)
    }
}

/// Midpoints of `n` equal subintervals of the support, each with weight `1/n`.
///
/// Points are placed symmetrically about `mu`, so the empirical mean is `mu`
/// up to rounding.
pub fn discretize<T: Scalar>(
    model: &UniformScenarioModel<T>,
    n: usize,
) -> Result<ScenarioSet<T>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::EmptySet);
    }
    let a = model.half_width();
    let nn = T::from_count(n);
    let weight = T::one() / nn;
    let points = (0..n)
        .map(|i| {
            // offset in (-1, 1): (2i + 1 - n) / n
            let num = T::from_count(2 * i + 1) - nn;
            ScenarioPoint {
                omega: model.mu() + a * num / nn,
                weight,
            }
        })
        .collect();
    ScenarioSet::from_points(model, points)
}

/// `n` i.i.d. uniform draws with weight `1/n`, fully determined by `seed`.
pub fn sample<T: Scalar>(
    model: &UniformScenarioModel<T>,
    n: usize,
    seed: u64,
) -> Result<ScenarioSet<T>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::EmptySet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = model.support();
    let width = hi - lo;
    let weight = T::one() / T::from_count(n);
    let points = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            ScenarioPoint {
                omega: lo + width * T::lit(u),
                weight,
            }
        })
        .collect();
    ScenarioSet::from_points(model, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mu: f64, sigma: f64) -> UniformScenarioModel<f64> {
        UniformScenarioModel::new(mu, sigma).unwrap()
    }

    #[test]
    fn support_matches_closed_form() {
        let (lo, hi) = model(1.0, 0.2).support();
        assert!((lo - 0.653590).abs() < 1e-6);
        assert!((hi - 1.346410).abs() < 1e-6);
        let (lo, hi) = model(1.0, 0.4).support();
        assert!((lo - 0.307180).abs() < 1e-6);
        assert!((hi - 1.692820).abs() < 1e-6);
    }

    #[test]
    fn rejects_degenerate_or_negative_support() {
        assert!(matches!(
            UniformScenarioModel::new(1.0, 0.0),
            Err(ScenarioError::NonPositiveSigma(_))
        ));
        assert!(matches!(
            UniformScenarioModel::new(0.1, 0.2),
            Err(ScenarioError::NegativeSupport(_))
        ));
        // tiny sigma collapses the support onto mu
        let (lo, hi) = model(1.0, 1e-12).support();
        assert!((lo - 1.0).abs() < 1e-11 && (hi - 1.0).abs() < 1e-11);
    }

    #[test]
    fn discretize_small_cases() {
        let m = model(1.0, 0.2);
        let one = discretize(&m, 1).unwrap();
        assert_eq!(one.points(), &[ScenarioPoint { omega: 1.0, weight: 1.0 }]);
        let two = discretize(&m, 2).unwrap();
        assert!((two.points()[0].omega - 0.826795).abs() < 1e-6);
        assert!((two.points()[1].omega - 1.173205).abs() < 1e-6);
        assert_eq!(two.points()[0].weight, 0.5);
        assert_eq!(discretize(&m, 0), Err(ScenarioError::EmptySet));
    }

    #[test]
    fn discretized_variance_converges() {
        let m = model(1.0, 0.2);
        let set = discretize(&m, 1_000_000).unwrap();
        let mean = set.expect(|w| w);
        let var = set.expect(|w| (w - mean) * (w - mean));
        assert!(((var - m.variance()) / m.variance()).abs() < 1e-6);
    }

    #[test]
    fn midpoint_mean_exact() {
        let m = model(1.0, 0.2);
        for n in [1, 2, 3, 7, 100, 1001] {
            let set = discretize(&m, n).unwrap();
            assert!((set.expect(|w| w) - 1.0).abs() < 1e-14, "n={n}");
            assert!((set.weights().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_examples() {
        let m = model(1.0, 0.2);
        let set = discretize(&m, 100).unwrap();
        assert!((set.expect(|_| 3.5) - 3.5).abs() < 1e-13);
        let fine = discretize(&m, 100_000).unwrap();
        let put = fine.expect(|w| (1.0 - w).max(0.0));
        assert!((put - 3f64.sqrt() * 0.2 / 4.0).abs() < 1e-4);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = model(1.0, 0.2);
        let a = sample(&m, 1000, 42).unwrap();
        let b = sample(&m, 1000, 42).unwrap();
        assert_eq!(a, b);
        let c = sample(&m, 1000, 43).unwrap();
        assert_ne!(a, c);
        let single = sample(&m, 1, 9).unwrap();
        assert!(m.in_support(single.points()[0].omega));
        assert_eq!(sample(&m, 0, 1), Err(ScenarioError::EmptySet));
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let m = model(1.0, 0.2);
        let n = 1_000_000;
        let set = sample(&m, n, 7).unwrap();
        let mean = set.expect(|w| w);
        assert!((mean - 1.0).abs() < 4.0 * 0.2 / (n as f64).sqrt());
    }

    #[test]
    fn kolmogorov_smirnov_against_uniform() {
        let m = model(1.0, 0.2);
        let n = 100_000;
        for seed in [1, 2, 3] {
            let mut xs: Vec<f64> = sample(&m, n, seed).unwrap().omegas().collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let nf = n as f64;
            let d = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = m.cdf(x);
                    (f - i as f64 / nf).abs().max(((i + 1) as f64 / nf - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(d < 1.63 / nf.sqrt(), "seed {seed}: D = {d}");
        }
    }

    #[test]
    fn from_points_validation() {
        let m = model(1.0, 0.2);
        let bad_weight = vec![ScenarioPoint { omega: 1.0, weight: 0.7 }];
        assert!(matches!(
            ScenarioSet::from_points(&m, bad_weight),
            Err(ScenarioError::WeightsNotNormalized(_))
        ));
        let outside = vec![ScenarioPoint { omega: 2.0, weight: 1.0 }];
        assert!(matches!(
            ScenarioSet::from_points(&m, outside),
            Err(ScenarioError::OutOfSupport { .. })
        ));
    }

    #[test]
    fn generic_over_f32() {
        let m = UniformScenarioModel::<f32>::new(1.0, 0.2).unwrap();
        let set = discretize(&m, 64).unwrap();
        assert!((set.expect(|w| w) - 1.0).abs() < 1e-6);
    }
}
