//! Payment distributions over a scenario set: per-participant payment
//! series, weighted moments, the variance change caused by an option and
//! loss probabilities.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bilateral::{option_cashflows, Side, TradeTriple};
use crate::clearing::ClearingSolution;
use crate::dispatch::{day_ahead, payments, real_time, DispatchError, MarketInstance};
use crate::scalar::{pairwise_sum, pos, Scalar};
use crate::scenario::ScenarioSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("sample is empty")]
    Empty,
    #[error("series of length {got} does not match {expected} scenarios")]
    Misaligned { got: usize, expected: usize },
    #[error("sample weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("participant {0} is not part of the market")]
    UnknownParticipant(String),
    #[error("clearing spot differs from dispatch spot in scenario {0}")]
    SpotMismatch(usize),
}

/// Payments of one participant, aligned with a scenario set.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentSample<T> {
    id: String,
    weights: Vec<T>,
    payments: Vec<T>,
}

impl<T: Scalar> PaymentSample<T> {
    pub fn new(id: impl Into<String>, weights: Vec<T>, payments: Vec<T>) -> Result<Self, AnalyticsError> {
        if weights.is_empty() {
            return Err(AnalyticsError::Empty);
        }
        if payments.len() != weights.len() {
            return Err(AnalyticsError::Misaligned {
                got: payments.len(),
                expected: weights.len(),
            });
        }
        let total = pairwise_sum(&weights);
        let tol = T::lit(1e-12).max(T::lit(64.0) * T::eps());
        if (total - T::one()).abs() > tol {
            return Err(AnalyticsError::WeightsNotNormalized(total.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self {
            id: id.into(),
            weights,
            payments,
        })
    }

    pub fn from_scenarios(
        id: impl Into<String>,
        scenarios: &ScenarioSet<T>,
        payments: Vec<T>,
    ) -> Result<Self, AnalyticsError> {
        Self::new(id, scenarios.weights().collect(), payments)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn payments(&self) -> &[T] {
        &self.payments
    }

    pub fn len(&self) -> usize {
        self.payments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payments.is_empty()
    }

    pub fn mean(&self) -> T {
        weighted_mean(&self.weights, &self.payments)
    }

    /// Population variance under the sample weights.
    pub fn variance(&self) -> T {
        covariance(&self.weights, &self.payments, &self.payments)
    }

    /// `self - other` scenario by scenario, keeping this sample's id.
    pub fn difference(&self, other: &PaymentSample<T>) -> Result<PaymentSample<T>, AnalyticsError> {
        aligned(self, other)?;
        let values = self.payments.iter().zip(&other.payments).map(|(&a, &b)| a - b).collect();
        Ok(Self {
            id: self.id.clone(),
            weights: self.weights.clone(),
            payments: values,
        })
    }
}

fn aligned<T: Scalar>(a: &PaymentSample<T>, b: &PaymentSample<T>) -> Result<(), AnalyticsError> {
    if a.len() != b.len() {
        return Err(AnalyticsError::Misaligned {
            got: b.len(),
            expected: a.len(),
        });
    }
    Ok(())
}

fn weighted_mean<T: Scalar>(w: &[T], x: &[T]) -> T {
    let terms: Vec<T> = w.iter().zip(x).map(|(&w, &x)| w * x).collect();
    pairwise_sum(&terms)
}

fn covariance<T: Scalar>(w: &[T], x: &[T], y: &[T]) -> T {
    let (mx, my) = (weighted_mean(w, x), weighted_mean(w, y));
    let terms: Vec<T> = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(&w, (&a, &b))| w * (a - mx) * (b - my))
        .collect();
    pairwise_sum(&terms)
}

/// Option position layered on the energy market.
#[derive(Debug, Clone, Copy)]
pub enum OptionOverlay<'a, T> {
    None,
    /// Buyer and seller ids with the traded contract; exercise is the full
    /// volume whenever the option is in the money.
    Bilateral {
        buyer: &'a str,
        seller: &'a str,
        trade: TradeTriple<T>,
    },
    Centralized(&'a ClearingSolution<T>),
}

/// Total payment of every participant in every scenario, computed by running
/// the day-ahead and real-time dispatch and adding option cash flows.
pub fn simulate_payments<T: Scalar>(
    instance: &MarketInstance<T>,
    overlay: OptionOverlay<'_, T>,
    scenarios: &ScenarioSet<T>,
) -> Result<BTreeMap<String, PaymentSample<T>>, AnalyticsError> {
    let ids = instance.ids();
    let check = |id: &str| {
        if ids.iter().any(|i| i == id) {
            Ok(())
        } else {
            Err(AnalyticsError::UnknownParticipant(id.to_string()))
        }
    };
    match overlay {
        OptionOverlay::None => {}
        OptionOverlay::Bilateral { buyer, seller, .. } => {
            check(buyer)?;
            check(seller)?;
        }
        OptionOverlay::Centralized(sol) => {
            if sol.spot().len() != scenarios.len() {
                return Err(AnalyticsError::Misaligned {
                    got: sol.spot().len(),
                    expected: scenarios.len(),
                });
            }
            for id in sol.trades().keys() {
                check(id)?;
            }
        }
    }

    let forward = day_ahead(instance)?;
    let mut series: BTreeMap<String, Vec<T>> = ids
        .iter()
        .map(|id| (id.clone(), Vec::with_capacity(scenarios.len())))
        .collect();
    for (k, omega) in scenarios.omegas().enumerate() {
        let rt = real_time(instance, &forward, omega)?;
        let settlement = payments(instance, &forward, &rt)?;
        let p = rt.price;
        for rec in settlement.records {
            let option = match overlay {
                OptionOverlay::None => T::zero(),
                OptionOverlay::Bilateral { buyer, seller, trade } => {
                    let (b, s) = option_cashflows(p, &trade);
                    if rec.id == buyer {
                        b
                    } else if rec.id == seller {
                        s
                    } else {
                        T::zero()
                    }
                }
                OptionOverlay::Centralized(sol) => {
                    let cleared = sol.spot()[k];
                    let tol = T::lit(1e-9) * T::one().max(p.abs());
                    if (cleared - p).abs() > tol {
                        return Err(AnalyticsError::SpotMismatch(k));
                    }
                    match sol.trades().get(&rec.id) {
                        None => T::zero(),
                        Some(c) => {
                            let t = &c.trade;
                            match c.side {
                                Side::Buyer => (pos(p - t.strike) - t.price) * t.volume,
                                Side::Seller => {
                                    t.price * t.volume - pos(p - t.strike) * sol.exercise()[&rec.id][k]
                                }
                            }
                        }
                    }
                }
            };
            series.get_mut(&rec.id).expect("settled id").push(rec.total + option);
        }
    }
    series
        .into_iter()
        .map(|(id, values)| {
            let s = PaymentSample::from_scenarios(id.clone(), scenarios, values)?;
            Ok((id, s))
        })
        .collect()
}

/// Means and population covariance matrix of aligned samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub ids: Vec<String>,
    pub means: Vec<T>,
    pub covariance: Vec<Vec<T>>,
}

impl<T: Scalar> Moments<T> {
    pub fn variance(&self, i: usize) -> T {
        self.covariance[i][i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }
}

pub fn moments<T: Scalar>(samples: &[&PaymentSample<T>]) -> Result<Moments<T>, AnalyticsError> {
    let first = samples.first().ok_or(AnalyticsError::Empty)?;
    for s in samples {
        aligned(first, s)?;
    }
    let w = first.weights();
    let covariance = samples
        .iter()
        .map(|a| samples.iter().map(|b| covariance(w, a.payments(), b.payments())).collect())
        .collect();
    Ok(Moments {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        means: samples.iter().map(|s| s.mean()).collect(),
        covariance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition<T> {
    /// `2 cov(pi, V)`
    pub covariance_term: T,
    /// `var(V)`
    pub variance_term: T,
    /// `var(pi + V) - var(pi)`
    pub total: T,
}

/// Splits `var(pi + V) - var(pi)` into `2 cov(pi, V) + var(V)`.
pub fn variance_decomposition<T: Scalar>(
    pi: &PaymentSample<T>,
    v: &PaymentSample<T>,
) -> Result<VarianceDecomposition<T>, AnalyticsError> {
    aligned(pi, v)?;
    let w = pi.weights();
    let covariance_term = T::lit(2.0) * covariance(w, pi.payments(), v.payments());
    let variance_term = covariance(w, v.payments(), v.payments());
    Ok(VarianceDecomposition {
        covariance_term,
        variance_term,
        total: covariance_term + variance_term,
    })
}

/// Probability of a strictly negative payment.
pub fn loss_probability<T: Scalar>(sample: &PaymentSample<T>) -> T {
    let terms: Vec<T> = sample
        .weights
        .iter()
        .zip(&sample.payments)
        .map(|(&w, &p)| if p < T::zero() { w } else { T::zero() })
        .collect();
    pairwise_sum(&terms)
}

/// Standard error of the mean for an equally weighted i.i.d. sample.
pub fn mean_standard_error<T: Scalar>(sample: &PaymentSample<T>) -> T {
    (sample.variance() / T::from_count(sample.len())).sqrt()
}

/// Standard error of the variance estimate for an equally weighted i.i.d.
/// sample, `sqrt((m4 - var^2) / n)`.
pub fn variance_standard_error<T: Scalar>(sample: &PaymentSample<T>) -> T {
    let m = sample.mean();
    let var = sample.variance();
    let terms: Vec<T> = sample
        .weights
        .iter()
        .zip(&sample.payments)
        .map(|(&w, &p)| w * (p - m).powi(4))
        .collect();
    let m4 = pairwise_sum(&terms);
    (pos(m4 - var * var) / T::from_count(sample.len())).sqrt()
}
