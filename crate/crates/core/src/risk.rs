//! Conditional value-at-risk and risk-averse acceptability of option trades.
//!
//! A participant with risk level `alpha` accepts a trade when
//! `CVaR_alpha[-Pi] <= CVaR_alpha[-pi]`, where `pi` is its energy-market
//! payment and `Pi` the payment including the option. `alpha = 0` is the
//! risk-neutral test.

use std::cmp::Ordering;

use thiserror::Error;

use crate::bilateral::{Side, TradeTriple};
use crate::scalar::{pairwise_sum, pos, Scalar};
use crate::scenario::ScenarioSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("risk level must lie in [0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("loss sample is empty")]
    EmptySample,
    #[error("loss sample entry {0} has a non-positive weight or non-finite value")]
    InvalidEntry(usize),
    #[error("loss sample weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("acceptance is not monotone in the option price at strike {strike}")]
    NonMonotone { strike: f64 },
    #[error("invalid price bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },
    #[error("series length {got} does not match {expected} scenarios")]
    Misaligned { got: usize, expected: usize },
}

/// Degree of risk aversion `alpha` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RiskLevel<T>(T);

impl<T: Scalar> RiskLevel<T> {
    pub fn new(alpha: T) -> Result<Self, RiskError> {
        if alpha >= T::zero() && alpha < T::one() {
            Ok(Self(alpha))
        } else {
            Err(RiskError::InvalidLevel(alpha.to_f64().unwrap_or(f64::NAN)))
        }
    }

    pub fn neutral() -> Self {
        Self(T::zero())
    }

    pub fn alpha(&self) -> T {
        self.0
    }
}

/// Losses with probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLossSample<T> {
    entries: Vec<(T, T)>,
}

impl<T: Scalar> WeightedLossSample<T> {
    /// Entries are `(loss, weight)`; weights must be positive and sum to one.
    pub fn new(entries: Vec<(T, T)>) -> Result<Self, RiskError> {
        if entries.is_empty() {
            return Err(RiskError::EmptySample);
        }
        for (i, &(loss, w)) in entries.iter().enumerate() {
            if !loss.is_finite() || !(w > T::zero()) {
                return Err(RiskError::InvalidEntry(i));
            }
        }
        let weights: Vec<T> = entries.iter().map(|e| e.1).collect();
        let total = pairwise_sum(&weights);
        let tol = T::lit(1e-12).max(T::lit(64.0) * T::eps());
        if (total - T::one()).abs() > tol {
            return Err(RiskError::WeightsNotNormalized(total.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { entries })
    }

    /// Pairs `losses` with the scenario weights.
    pub fn from_scenarios(scenarios: &ScenarioSet<T>, losses: &[T]) -> Result<Self, RiskError> {
        if losses.len() != scenarios.len() {
            return Err(RiskError::Misaligned {
                got: losses.len(),
                expected: scenarios.len(),
            });
        }
        Self::new(losses.iter().copied().zip(scenarios.weights()).collect())
    }

    pub fn entries(&self) -> &[(T, T)] {
        &self.entries
    }

    fn total_weight(&self) -> T {
        let w: Vec<T> = self.entries.iter().map(|e| e.1).collect();
        pairwise_sum(&w)
    }

    pub fn mean(&self) -> T {
        let terms: Vec<T> = self.entries.iter().map(|&(l, w)| l * w).collect();
        pairwise_sum(&terms) / self.total_weight()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cvar<T> {
    /// Weighted mean of the worst `1 - alpha` probability mass.
    pub value: T,
    /// The `alpha`-quantile of the loss, i.e. the minimizing `t`.
    pub value_at_risk: T,
    /// Rockafellar–Uryasev objective evaluated at `value_at_risk`.
    pub ru_value: T,
}

/// `t + E[(z - t)+] / (1 - alpha)`.
pub fn rockafellar_uryasev_objective<T: Scalar>(
    sample: &WeightedLossSample<T>,
    level: RiskLevel<T>,
    t: T,
) -> T {
    let terms: Vec<T> = sample.entries.iter().map(|&(l, w)| w * pos(l - t)).collect();
    t + pairwise_sum(&terms) / (sample.total_weight() * (T::one() - level.alpha()))
}

/// Exact discrete CVaR. Losses are sorted in descending order and the top
/// `1 - alpha` mass is averaged; the atom straddling the quantile contributes
/// only the fraction of its weight that fits.
pub fn cvar<T: Scalar>(sample: &WeightedLossSample<T>, level: RiskLevel<T>) -> Cvar<T> {
    let mut sorted = sample.entries.clone();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let tail = (T::one() - level.alpha()) * sample.total_weight();
    let mut acc = T::zero();
    let mut terms = Vec::with_capacity(sorted.len());
    let mut var = sorted[0].0;
    for &(loss, w) in &sorted {
        let take = w.min(tail - acc);
        if take <= T::zero() {
            break;
        }
        terms.push(take * loss);
        acc = acc + take;
        var = loss;
        if acc >= tail {
            break;
        }
    }
    let value = pairwise_sum(&terms) / tail;
    Cvar {
        value,
        value_at_risk: var,
        ru_value: rockafellar_uryasev_objective(sample, level, var),
    }
}

/// Payments including the option, `pi + flow(side, spot, trade)`.
pub fn payments_with_option<T: Scalar>(
    side: Side,
    trade: &TradeTriple<T>,
    pi: &[T],
    spot: &[T],
) -> Vec<T> {
    pi.iter()
        .zip(spot)
        .map(|(&p, &s)| p + side.option_flow(s, trade))
        .collect()
}

/// Absolute slack on the CVaR comparison.
pub const ACCEPT_TOL: f64 = 1e-9;

/// Risk-averse acceptability test for a trade.
pub fn cvar_accepts<T: Scalar>(
    trade: &TradeTriple<T>,
    side: Side,
    level: RiskLevel<T>,
    pi: &[T],
    spot: &[T],
    scenarios: &ScenarioSet<T>,
) -> Result<bool, RiskError> {
    Ok(CvarCriterion::new(side, level, pi.to_vec(), spot.to_vec(), scenarios.clone())?.accepts(trade))
}

/// CVaR acceptability of one participant with its baseline risk precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct CvarCriterion<T> {
    side: Side,
    level: RiskLevel<T>,
    pi: Vec<T>,
    spot: Vec<T>,
    scenarios: ScenarioSet<T>,
    baseline: T,
}

impl<T: Scalar> CvarCriterion<T> {
    pub fn new(
        side: Side,
        level: RiskLevel<T>,
        pi: Vec<T>,
        spot: Vec<T>,
        scenarios: ScenarioSet<T>,
    ) -> Result<Self, RiskError> {
        for len in [pi.len(), spot.len()] {
            if len != scenarios.len() {
                return Err(RiskError::Misaligned {
                    got: len,
                    expected: scenarios.len(),
                });
            }
        }
        let losses: Vec<T> = pi.iter().map(|&p| -p).collect();
        let baseline = cvar(&WeightedLossSample::from_scenarios(&scenarios, &losses)?, level).value;
        Ok(Self {
            side,
            level,
            pi,
            spot,
            scenarios,
            baseline,
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn level(&self) -> RiskLevel<T> {
        self.level
    }

    /// `CVaR_alpha[-pi]`.
    pub fn baseline(&self) -> T {
        self.baseline
    }

    /// `CVaR_alpha[-Pi(trade)]`.
    pub fn risk_with(&self, trade: &TradeTriple<T>) -> T {
        let entries = payments_with_option(self.side, trade, &self.pi, &self.spot)
            .into_iter()
            .zip(self.scenarios.weights())
            .map(|(p, w)| (-p, w))
            .collect();
        cvar(&WeightedLossSample { entries }, self.level).value
    }

    pub fn accepts(&self, trade: &TradeTriple<T>) -> bool {
        self.risk_with(trade) <= self.baseline + T::lit(ACCEPT_TOL)
    }
}

/// Location of the acceptance frontier along one strike line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary<T> {
    /// Acceptance flips at this option price.
    At(T),
    /// No flip inside the bracket; `accepted` tells which way it went.
    Unbounded { accepted: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint<T> {
    pub strike: T,
    pub boundary: Boundary<T>,
}

/// Number of probes used to check monotonicity and bracket the flip.
const PROBES: usize = 33;
const MAX_BISECTIONS: usize = 60;

/// Default bisection resolution on the option price.
pub const TRACE_TOL: f64 = 1e-6;

/// For each strike, bisects on the option price for the point where the
/// criterion flips, to within `tol`. Buyers accept low prices and sellers
/// high ones; acceptance that is not monotone in that direction is an error.
pub fn boundary_trace<T: Scalar>(
    criterion: &CvarCriterion<T>,
    volume: T,
    strikes: &[T],
    q_bracket: (T, T),
    tol: T,
) -> Result<Vec<FrontierPoint<T>>, RiskError> {
    let (lo, hi) = q_bracket;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(RiskError::InvalidBracket {
            lo: lo.to_f64().unwrap_or(f64::NAN),
            hi: hi.to_f64().unwrap_or(f64::NAN),
        });
    }
    strikes
        .iter()
        .map(|&strike| {
            let accepts = |q: T| {
                criterion.accepts(&TradeTriple {
                    price: q,
                    strike,
                    volume,
                })
            };
            let boundary = trace_one(criterion.side(), strike, lo, hi, tol, accepts)?;
            Ok(FrontierPoint { strike, boundary })
        })
        .collect()
}

fn trace_one<T: Scalar>(
    side: Side,
    strike: T,
    lo: T,
    hi: T,
    tol: T,
    accepts: impl Fn(T) -> bool,
) -> Result<Boundary<T>, RiskError> {
    let step = (hi - lo) / T::from_count(PROBES - 1);
    let probes: Vec<T> = (0..PROBES)
        .map(|i| if i + 1 == PROBES { hi } else { lo + step * T::from_count(i) })
        .collect();
    let verdicts: Vec<bool> = probes.iter().map(|&q| accepts(q)).collect();
    // Normalize so that "inside" is the low-price end for both sides.
    let inside: Vec<bool> = match side {
        Side::Buyer => verdicts.clone(),
        Side::Seller => verdicts.iter().rev().copied().collect(),
    };
    let flips = inside.windows(2).filter(|w| w[0] != w[1]).count();
    if flips == 0 {
        return Ok(Boundary::Unbounded {
            accepted: verdicts[0],
        });
    }
    if flips > 1 || !inside[0] {
        return Err(RiskError::NonMonotone {
            strike: strike.to_f64().unwrap_or(f64::NAN),
        });
    }
    let k = verdicts.windows(2).position(|w| w[0] != w[1]).expect("one flip");
    let (mut a, mut b) = (probes[k], probes[k + 1]);
    let a_verdict = verdicts[k];
    for _ in 0..MAX_BISECTIONS {
        if b - a <= tol {
            break;
        }
        let mid = a + (b - a) / T::lit(2.0);
        if accepts(mid) == a_verdict {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Boundary::At(a + (b - a) / T::lit(2.0)))
}
