//! Conventional two-settlement dispatch and pricing.
//!
//! Day-ahead: renewables are capped at their certainty surrogate (expected
//! available capacity) and demand is met at least cost. Real-time: for a
//! realized scenario the operator re-dispatches with generators held within
//! their ramp bands around the day-ahead set-points.
//!
//! Costs are piecewise-linear convex block offers, so both programs reduce to
//! merit-order stacking. The reported price is the cost of serving the next
//! increment of demand (the right derivative of the optimal cost).

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::scalar::{pos, Interval, Scalar};
use crate::scenario::UniformScenarioModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("cost curve has no blocks")]
    EmptyCostCurve,
    #[error("cost block {index}: {reason}")]
    InvalidBlock { index: usize, reason: String },
    #[error("participant {id}: {reason}")]
    InvalidParticipant { id: String, reason: String },
    #[error("duplicate participant id {0}")]
    DuplicateId(String),
    #[error("demand must be finite and nonnegative, got {0}")]
    InvalidDemand(f64),
    #[error("infeasible: demand {demand} MW exceeds available capacity {available} MW")]
    Shortfall { demand: f64, available: f64 },
    #[error("infeasible: must-run output {must_run} MW exceeds demand {demand} MW")]
    Overgeneration { demand: f64, must_run: f64 },
    #[error("scenario {0} lies outside the support of the uncertainty model")]
    ScenarioOutOfSupport(f64),
    #[error("forward result does not cover participant {0}")]
    ForwardMismatch(String),
}

fn f(x: impl Scalar) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// A capacity-like bound that may be unbounded. Arithmetic never multiplies
/// the unbounded sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit<T> {
    Finite(T),
    Unbounded,
}

impl<T: Scalar> Limit<T> {
    pub fn finite(&self) -> Option<T> {
        match *self {
            Limit::Finite(x) => Some(x),
            Limit::Unbounded => None,
        }
    }

    pub fn min(self, other: Limit<T>) -> Limit<T> {
        match (self, other) {
            (Limit::Finite(a), Limit::Finite(b)) => Limit::Finite(a.min(b)),
            (Limit::Finite(a), Limit::Unbounded) | (Limit::Unbounded, Limit::Finite(a)) => {
                Limit::Finite(a)
            }
            (Limit::Unbounded, Limit::Unbounded) => Limit::Unbounded,
        }
    }

    pub fn add(self, other: Limit<T>) -> Limit<T> {
        match (self, other) {
            (Limit::Finite(a), Limit::Finite(b)) => Limit::Finite(a + b),
            _ => Limit::Unbounded,
        }
    }

    /// `x <= self`.
    pub fn admits(&self, x: T) -> bool {
        match *self {
            Limit::Finite(a) => x <= a,
            Limit::Unbounded => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBlock<T> {
    pub capacity: Limit<T>,
    /// $/MWh
    pub marginal_cost: T,
}

/// Convex piecewise-linear production cost given as ordered blocks with
/// nondecreasing marginal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve<T> {
    blocks: Vec<CostBlock<T>>,
}

impl<T: Scalar> CostCurve<T> {
    pub fn new(blocks: Vec<CostBlock<T>>) -> Result<Self, DispatchError> {
        if blocks.is_empty() {
            return Err(DispatchError::EmptyCostCurve);
        }
        let last = blocks.len() - 1;
        for (index, b) in blocks.iter().enumerate() {
            let invalid = |reason: &str| DispatchError::InvalidBlock {
                index,
                reason: reason.to_string(),
            };
            if !b.marginal_cost.is_finite() {
                return Err(invalid("marginal cost must be finite"));
            }
            match b.capacity {
                Limit::Finite(c) if !(c > T::zero()) || !c.is_finite() => {
                    return Err(invalid("capacity must be positive and finite"))
                }
                Limit::Unbounded if index != last => {
                    return Err(invalid("only the final block may be unbounded"))
                }
                _ => {}
            }
            if index > 0 && b.marginal_cost < blocks[index - 1].marginal_cost {
                return Err(invalid("marginal costs must be nondecreasing"));
            }
        }
        Ok(Self { blocks })
    }

    /// Single unbounded block at constant marginal cost.
    pub fn linear(marginal_cost: T) -> Self {
        Self {
            blocks: vec![CostBlock {
                capacity: Limit::Unbounded,
                marginal_cost,
            }],
        }
    }

    pub fn blocks(&self) -> &[CostBlock<T>] {
        &self.blocks
    }

    /// Total MW the curve prices.
    pub fn extent(&self) -> Limit<T> {
        self.blocks
            .iter()
            .fold(Limit::Finite(T::zero()), |acc, b| acc.add(b.capacity))
    }

    /// Cost of producing `x` MW (`x` within the curve extent).
    pub fn cost(&self, x: T) -> T {
        let mut remaining = pos(x);
        let mut total = T::zero();
        for b in &self.blocks {
            if remaining <= T::zero() {
                break;
            }
            let take = match b.capacity {
                Limit::Finite(c) => remaining.min(c),
                Limit::Unbounded => remaining,
            };
            total = total + take * b.marginal_cost;
            remaining = remaining - take;
        }
        total
    }

    /// Marginal cost of the last MW produced at output `x` (left derivative).
    pub fn left_marginal(&self, x: T) -> T {
        let mut start = T::zero();
        for b in &self.blocks {
            match b.capacity {
                Limit::Finite(c) => {
                    if x <= start + c {
                        return b.marginal_cost;
                    }
                    start = start + c;
                }
                Limit::Unbounded => return b.marginal_cost,
            }
        }
        self.blocks[self.blocks.len() - 1].marginal_cost
    }

    /// Portions of each block lying inside `[lo, hi]`.
    fn segments(&self, lo: T, hi: Limit<T>) -> Vec<(usize, Limit<T>, T)> {
        let mut out = Vec::new();
        let mut start = T::zero();
        for (k, b) in self.blocks.iter().enumerate() {
            let end = match b.capacity {
                Limit::Finite(c) => Limit::Finite(start + c),
                Limit::Unbounded => Limit::Unbounded,
            };
            let seg_lo = start.max(lo);
            let seg_hi = end.min(hi);
            let len = match seg_hi {
                Limit::Finite(h) => Limit::Finite(pos(h - seg_lo)),
                Limit::Unbounded => Limit::Unbounded,
            };
            if len != Limit::Finite(T::zero()) {
                out.push((k, len, b.marginal_cost));
            }
            match end {
                Limit::Finite(e) => start = e,
                Limit::Unbounded => break,
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchableGen<T> {
    pub id: String,
    pub cap: Limit<T>,
    /// Ramp limit around the day-ahead set-point.
    pub ramp: Limit<T>,
    pub cost: CostCurve<T>,
}

impl<T: Scalar> DispatchableGen<T> {
    /// Upper production bound: installed capacity clipped to the priced extent.
    pub fn upper(&self) -> Limit<T> {
        self.cap.min(self.cost.extent())
    }
}

/// Affine map from the scenario to available capacity, `scale * omega + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Availability<T> {
    pub scale: T,
    pub offset: T,
}

impl<T: Scalar> Availability<T> {
    pub fn identity() -> Self {
        Self {
            scale: T::one(),
            offset: T::zero(),
        }
    }

    pub fn at(&self, omega: T) -> T {
        self.scale * omega + self.offset
    }
}

impl<T: Scalar> Default for Availability<T> {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenewableGen<T> {
    pub id: String,
    /// Installed capacity.
    pub cap: T,
    pub cost: CostCurve<T>,
    pub availability: Availability<T>,
}

impl<T: Scalar> RenewableGen<T> {
    /// Available capacity in scenario `omega`, clipped to the priced extent.
    pub fn available(&self, omega: T) -> T {
        let raw = self.availability.at(omega);
        match self.cost.extent() {
            Limit::Finite(e) => raw.min(e),
            Limit::Unbounded => raw,
        }
    }
}

/// Inflexible demand served by dispatchable and renewable producers under a
/// single scalar uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance<T> {
    demand: T,
    dispatchables: Vec<DispatchableGen<T>>,
    renewables: Vec<RenewableGen<T>>,
    model: UniformScenarioModel<T>,
}

impl<T: Scalar> MarketInstance<T> {
    pub fn new(
        demand: T,
        mut dispatchables: Vec<DispatchableGen<T>>,
        mut renewables: Vec<RenewableGen<T>>,
        model: UniformScenarioModel<T>,
    ) -> Result<Self, DispatchError> {
        if !demand.is_finite() || demand < T::zero() {
            return Err(DispatchError::InvalidDemand(f(demand)));
        }
        let mut seen = BTreeSet::new();
        for id in dispatchables
            .iter()
            .map(|g| &g.id)
            .chain(renewables.iter().map(|r| &r.id))
        {
            if !seen.insert(id.clone()) {
                return Err(DispatchError::DuplicateId(id.clone()));
            }
        }
        for g in &dispatchables {
            let bad = |reason: &str| DispatchError::InvalidParticipant {
                id: g.id.clone(),
                reason: reason.to_string(),
            };
            if let Limit::Finite(c) = g.cap {
                if !(c >= T::zero()) || !c.is_finite() {
                    return Err(bad("capacity must be nonnegative"));
                }
            }
            if let Limit::Finite(r) = g.ramp {
                if !(r >= T::zero()) || !r.is_finite() {
                    return Err(bad("ramp limit must be nonnegative"));
                }
            }
        }
        let (lo, hi) = model.support();
        for r in &renewables {
            let bad = |reason: String| DispatchError::InvalidParticipant {
                id: r.id.clone(),
                reason,
            };
            if !(r.cap >= T::zero()) || !r.cap.is_finite() {
                return Err(bad("installed capacity must be nonnegative".into()));
            }
            // affine availability: checking the support endpoints suffices
            for omega in [lo, hi] {
                let a = r.availability.at(omega);
                if a < T::zero() || a > r.cap {
                    return Err(bad(format!(
                        "availability {} at scenario {} outside [0, {}]",
                        a, omega, r.cap
                    )));
                }
            }
        }
        dispatchables.sort_by(|a, b| a.id.cmp(&b.id));
        renewables.sort_by(|a, b| a.id.cmp(&b.id));
        let instance = Self {
            demand,
            dispatchables,
            renewables,
            model,
        };
        instance.check_static_feasibility()?;
        Ok(instance)
    }

    fn check_static_feasibility(&self) -> Result<(), DispatchError> {
        let (lo, hi) = self.model.support();
        let mut total = Limit::Finite(T::zero());
        for g in &self.dispatchables {
            total = total.add(g.upper());
        }
        for r in &self.renewables {
            total = total.add(Limit::Finite(r.available(lo).min(r.available(hi))));
        }
        match total {
            Limit::Finite(t) if self.demand > t => Err(DispatchError::Shortfall {
                demand: f(self.demand),
                available: f(t),
            }),
            _ => Ok(()),
        }
    }

    /// Same market with a different demand level.
    pub fn with_demand(&self, demand: T) -> Result<Self, DispatchError> {
        Self::new(
            demand,
            self.dispatchables.clone(),
            self.renewables.clone(),
            self.model,
        )
    }

    pub fn demand(&self) -> T {
        self.demand
    }

    pub fn dispatchables(&self) -> &[DispatchableGen<T>] {
        &self.dispatchables
    }

    pub fn renewables(&self) -> &[RenewableGen<T>] {
        &self.renewables
    }

    pub fn model(&self) -> &UniformScenarioModel<T> {
        &self.model
    }

    /// Participant ids in ascending order.
    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .dispatchables
            .iter()
            .map(|g| g.id.clone())
            .chain(self.renewables.iter().map(|r| r.id.clone()))
            .collect();
        ids.sort();
        ids
    }

    /// Certainty surrogate for renewable `r`: expected available capacity.
    pub fn surrogate_for(&self, r: &RenewableGen<T>) -> T {
        // exact for affine availability under any measure with mean mu
        let s = r.availability.at(self.model.mu());
        match r.cost.extent() {
            Limit::Finite(e) => s.min(e),
            Limit::Unbounded => s,
        }
    }
}

/// `E[omega] = mu`, the certainty surrogate of identity availability.
pub fn certainty_surrogate<T: Scalar>(model: &UniformScenarioModel<T>) -> T {
    model.mu()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult<T> {
    pub quantities: BTreeMap<String, T>,
    /// Forward price `P*`.
    pub price: T,
    pub cost: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealTimeResult<T> {
    pub omega: T,
    pub quantities: BTreeMap<String, T>,
    /// Spot price.
    pub price: T,
    pub cost: T,
}

struct UnitBounds<'a, T> {
    id: &'a str,
    lo: T,
    hi: Limit<T>,
    cost: &'a CostCurve<T>,
}

struct Stack<T> {
    quantities: Vec<T>,
    price: T,
    cost: T,
}

/// Least-cost dispatch of `demand` over units with bounds `[lo, hi]`.
/// `units` must already be in ascending id order (the tie-break).
fn merit_order<T: Scalar>(units: &[UnitBounds<'_, T>], demand: T) -> Result<Stack<T>, DispatchError> {
    let tol = T::lit(1e-9) * demand.abs().max(T::one());
    let must_run = units.iter().fold(T::zero(), |acc, u| acc + u.lo);
    let mut remaining = demand - must_run;
    if remaining < -tol {
        return Err(DispatchError::Overgeneration {
            demand: f(demand),
            must_run: f(must_run),
        });
    }
    remaining = pos(remaining);

    let mut segments: Vec<(usize, usize, Limit<T>, T)> = Vec::new();
    for (i, u) in units.iter().enumerate() {
        for (k, len, mc) in u.cost.segments(u.lo, u.hi) {
            segments.push((i, k, len, mc));
        }
    }
    segments.sort_by(|a, b| {
        a.3.partial_cmp(&b.3)
            .expect("finite marginal costs")
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut quantities: Vec<T> = units.iter().map(|u| u.lo).collect();
    let mut taken = vec![T::zero(); segments.len()];
    for (s, &(i, _, len, _)) in segments.iter().enumerate() {
        if remaining <= T::zero() {
            break;
        }
        let take = match len {
            Limit::Finite(l) => remaining.min(l),
            Limit::Unbounded => remaining,
        };
        quantities[i] = quantities[i] + take;
        taken[s] = take;
        remaining = remaining - take;
    }
    if remaining > tol {
        let available = units.iter().fold(Limit::Finite(T::zero()), |acc, u| acc.add(u.hi));
        return Err(DispatchError::Shortfall {
            demand: f(demand),
            available: available.finite().map(f).unwrap_or(f64::INFINITY),
        });
    }

    // Spare below `sliver` is rounding noise from a demand on a block edge.
    let sliver = T::lit(1e-12) * demand.abs().max(T::one());
    let spare = segments.iter().zip(&taken).find(|((_, _, len, _), &t)| match *len {
        Limit::Finite(l) => l - t > sliver,
        Limit::Unbounded => true,
    });
    let price = match spare {
        Some((&(_, _, _, mc), _)) => mc,
        // Every unit at its upper bound: no right derivative exists, fall back
        // to the marginal cost of the last MW served.
        None => units
            .iter()
            .zip(&quantities)
            .filter(|(_, &x)| x > T::zero())
            .map(|(u, &x)| u.cost.left_marginal(x))
            .fold(T::zero(), |a, b| a.max(b)),
    };
    let cost = units
        .iter()
        .zip(&quantities)
        .fold(T::zero(), |acc, (u, &x)| acc + u.cost.cost(x));
    Ok(Stack {
        quantities,
        price,
        cost,
    })
}

/// Merges units by id so the merit-order tie-break follows ascending id
/// across both producer classes.
fn sorted_units<'a, T: Scalar>(mut units: Vec<UnitBounds<'a, T>>) -> Vec<UnitBounds<'a, T>> {
    units.sort_by(|a, b| a.id.cmp(b.id));
    units
}

/// Forward dispatch against the certainty surrogate.
pub fn day_ahead<T: Scalar>(instance: &MarketInstance<T>) -> Result<ForwardResult<T>, DispatchError> {
    let mut units = Vec::new();
    for g in &instance.dispatchables {
        units.push(UnitBounds {
            id: &g.id,
            lo: T::zero(),
            hi: g.upper(),
            cost: &g.cost,
        });
    }
    for r in &instance.renewables {
        units.push(UnitBounds {
            id: &r.id,
            lo: T::zero(),
            hi: Limit::Finite(instance.surrogate_for(r).min(r.cap)),
            cost: &r.cost,
        });
    }
    let units = sorted_units(units);
    let stack = merit_order(&units, instance.demand)?;
    Ok(ForwardResult {
        quantities: units
            .iter()
            .zip(stack.quantities)
            .map(|(u, x)| (u.id.to_string(), x))
            .collect(),
        price: stack.price,
        cost: stack.cost,
    })
}

/// Real-time re-dispatch in scenario `omega` with ramp bands around the
/// forward set-points.
pub fn real_time<T: Scalar>(
    instance: &MarketInstance<T>,
    forward: &ForwardResult<T>,
    omega: T,
) -> Result<RealTimeResult<T>, DispatchError> {
    if !instance.model.in_support(omega) {
        return Err(DispatchError::ScenarioOutOfSupport(f(omega)));
    }
    let set_point = |id: &str| {
        forward
            .quantities
            .get(id)
            .copied()
            .ok_or_else(|| DispatchError::ForwardMismatch(id.to_string()))
    };
    let mut units = Vec::new();
    for g in &instance.dispatchables {
        let x0 = set_point(&g.id)?;
        let (lo, hi) = match g.ramp {
            Limit::Finite(l) => (pos(x0 - l), Limit::Finite(x0 + l)),
            Limit::Unbounded => (T::zero(), Limit::Unbounded),
        };
        units.push(UnitBounds {
            id: &g.id,
            lo,
            hi: hi.min(g.upper()),
            cost: &g.cost,
        });
    }
    for r in &instance.renewables {
        set_point(&r.id)?;
        units.push(UnitBounds {
            id: &r.id,
            lo: T::zero(),
            hi: Limit::Finite(pos(r.available(omega))),
            cost: &r.cost,
        });
    }
    let units = sorted_units(units);
    let stack = merit_order(&units, instance.demand)?;
    Ok(RealTimeResult {
        omega,
        quantities: units
            .iter()
            .zip(stack.quantities)
            .map(|(u, x)| (u.id.to_string(), x))
            .collect(),
        price: stack.price,
        cost: stack.cost,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaymentRecord<T> {
    pub id: String,
    pub forward_pay: T,
    pub realtime_pay: T,
    pub total: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergySettlement<T> {
    /// Producers in ascending id order.
    pub records: Vec<PaymentRecord<T>>,
    /// Paid by the aggregate consumer at the forward price; no real-time leg.
    pub consumer_payment: T,
}

impl<T: Scalar> EnergySettlement<T> {
    pub fn total_for(&self, id: &str) -> Option<T> {
        self.records.iter().find(|r| r.id == id).map(|r| r.total)
    }
}

/// Forward payment `P* X` plus real-time deviation payment `p (x - X)`.
pub fn payments<T: Scalar>(
    instance: &MarketInstance<T>,
    forward: &ForwardResult<T>,
    rt: &RealTimeResult<T>,
) -> Result<EnergySettlement<T>, DispatchError> {
    let mut records = Vec::new();
    for (id, &big_x) in &forward.quantities {
        let x = *rt
            .quantities
            .get(id)
            .ok_or_else(|| DispatchError::ForwardMismatch(id.clone()))?;
        let forward_pay = forward.price * big_x;
        let realtime_pay = rt.price * (x - big_x);
        records.push(PaymentRecord {
            id: id.clone(),
            forward_pay,
            realtime_pay,
            total: forward_pay + realtime_pay,
        });
    }
    Ok(EnergySettlement {
        records,
        consumer_payment: forward.price * instance.demand,
    })
}

/// Ids used by [`stylized_instance`].
pub const BASE_ID: &str = "B";
pub const PEAKER_ID: &str = "P";
pub const WIND_ID: &str = "W";

/// The base-load / peaker / wind example: `B` has unit marginal cost and no
/// ramping, `P` costs `1/rho` and ramps freely, `W` is free with availability
/// equal to the scenario. `extra_peakers` adds further unlimited, freely
/// ramping units given as `(id, marginal cost)`.
pub fn stylized_instance<T: Scalar>(
    demand: T,
    model: UniformScenarioModel<T>,
    rho: T,
    extra_peakers: &[(String, T)],
) -> Result<MarketInstance<T>, DispatchError> {
    if !(rho > T::zero() && rho <= T::one()) {
        return Err(DispatchError::InvalidParticipant {
            id: PEAKER_ID.into(),
            reason: format!("rho must lie in (0, 1], got {rho}"),
        });
    }
    let mut gens = vec![
        DispatchableGen {
            id: BASE_ID.into(),
            cap: Limit::Unbounded,
            ramp: Limit::Finite(T::zero()),
            cost: CostCurve::linear(T::one()),
        },
        DispatchableGen {
            id: PEAKER_ID.into(),
            cap: Limit::Unbounded,
            ramp: Limit::Unbounded,
            cost: CostCurve::linear(T::one() / rho),
        },
    ];
    for (id, mc) in extra_peakers {
        gens.push(DispatchableGen {
            id: id.clone(),
            cap: Limit::Unbounded,
            ramp: Limit::Unbounded,
            cost: CostCurve::linear(*mc),
        });
    }
    let wind = RenewableGen {
        id: WIND_ID.into(),
        cap: model.support().1,
        cost: CostCurve::linear(T::zero()),
        availability: Availability::identity(),
    };
    MarketInstance::new(demand, gens, vec![wind], model)
}

/// Two-level spot price of the stylized example: `1/rho` when wind falls
/// short of its forward position (`omega <= mu`), zero otherwise.
pub fn spot_price_example<T: Scalar>(omega: T, mu: T, rho: T) -> T {
    if omega <= mu {
        T::one() / rho
    } else {
        T::zero()
    }
}

/// Scenarios in which the wind producer is paid a negative amount without any
/// option: `[mu - sqrt(3) sigma, mu (1 - rho))`, empty unless
/// `rho < sqrt(3) sigma / mu`.
pub fn loss_region<T: Scalar>(mu: T, sigma: T, rho: T) -> Option<Interval<T>> {
    let lo = mu - T::sqrt3() * sigma;
    let hi = mu * (T::one() - rho);
    (hi > lo).then(|| Interval::new(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(sigma: f64) -> MarketInstance<f64> {
        let model = UniformScenarioModel::new(1.0, sigma).unwrap();
        stylized_instance(2.0, model, 0.5, &[]).unwrap()
    }

    #[test]
    fn demand_on_block_edge_prices_next_block() {
        let model = UniformScenarioModel::new(1.0, 0.1).unwrap();
        let blocks = (0..4)
            .map(|i| CostBlock { capacity: Limit::Finite(0.05), marginal_cost: 1.0 + i as f64 })
            .collect();
        let g = DispatchableGen {
            id: "g".into(),
            cap: Limit::Unbounded,
            ramp: Limit::Unbounded,
            cost: CostCurve::new(blocks).unwrap(),
        };
        // Filling 0.01 * 15 leaves about 1e-17 of the third block unused.
        let inst = MarketInstance::new(0.01 * 15.0, vec![g], vec![], model).unwrap();
        assert_eq!(day_ahead(&inst).unwrap().price, 4.0);
    }

    #[test]
    fn stylized_forward_dispatch() {
        let fwd = day_ahead(&example(0.2)).unwrap();
        assert_eq!(fwd.quantities[BASE_ID], 1.0);
        assert_eq!(fwd.quantities[PEAKER_ID], 0.0);
        assert_eq!(fwd.quantities[WIND_ID], 1.0);
        assert_eq!(fwd.price, 1.0);
    }

    #[test]
    fn stylized_real_time() {
        let inst = example(0.2);
        let fwd = day_ahead(&inst).unwrap();
        let short = real_time(&inst, &fwd, 0.8).unwrap();
        assert!((short.quantities[PEAKER_ID] - 0.2).abs() < 1e-12);
        assert_eq!(short.quantities[WIND_ID], 0.8);
        assert_eq!(short.quantities[BASE_ID], 1.0);
        assert_eq!(short.price, 2.0);

        let long = real_time(&inst, &fwd, 1.2).unwrap();
        assert_eq!(long.quantities[WIND_ID], 1.0);
        assert_eq!(long.quantities[PEAKER_ID], 0.0);
        assert_eq!(long.price, 0.0);

        // at omega = mu the next increment is served by the peaker
        let edge = real_time(&inst, &fwd, 1.0).unwrap();
        assert_eq!(edge.quantities[PEAKER_ID], 0.0);
        assert_eq!(edge.price, 2.0);
    }

    #[test]
    fn spot_formula() {
        assert_eq!(spot_price_example(0.9, 1.0, 0.5), 2.0);
        assert_eq!(spot_price_example(1.0, 1.0, 0.5), 2.0);
        assert_eq!(spot_price_example(1.3, 1.0, 0.5), 0.0);
    }

    #[test]
    fn stylized_payments() {
        let inst = example(0.2);
        let fwd = day_ahead(&inst).unwrap();
        let rt = real_time(&inst, &fwd, 0.8).unwrap();
        let pay = payments(&inst, &fwd, &rt).unwrap();
        assert!((pay.total_for(BASE_ID).unwrap() - 1.0).abs() < 1e-12);
        assert!((pay.total_for(PEAKER_ID).unwrap() - 0.4).abs() < 1e-12);
        assert!((pay.total_for(WIND_ID).unwrap() - 0.6).abs() < 1e-12);
        let produced: f64 = pay.records.iter().map(|r| r.total).sum();
        assert!((produced - pay.consumer_payment).abs() < 1e-12);
        for r in &pay.records {
            assert_eq!(r.total, r.forward_pay + r.realtime_pay);
        }

        let rt = real_time(&inst, &fwd, 1.25).unwrap();
        let pay = payments(&inst, &fwd, &rt).unwrap();
        assert_eq!(pay.total_for(WIND_ID), Some(1.0));
        assert_eq!(pay.total_for(PEAKER_ID), Some(0.0));
    }

    #[test]
    fn two_block_merit_order() {
        let model = UniformScenarioModel::new(1.0, 0.1).unwrap();
        let gens = vec![
            DispatchableGen {
                id: "a".into(),
                cap: Limit::Finite(0.5),
                ramp: Limit::Unbounded,
                cost: CostCurve::linear(1.0),
            },
            DispatchableGen {
                id: "b".into(),
                cap: Limit::Unbounded,
                ramp: Limit::Unbounded,
                cost: CostCurve::linear(2.0),
            },
        ];
        let inst = MarketInstance::new(1.0, gens, vec![], model).unwrap();
        let fwd = day_ahead(&inst).unwrap();
        assert_eq!(fwd.quantities["a"], 0.5);
        assert_eq!(fwd.quantities["b"], 0.5);
        assert_eq!(fwd.price, 2.0);
    }

    #[test]
    fn zero_demand() {
        let model = UniformScenarioModel::new(1.0, 0.1).unwrap();
        let gens = vec![DispatchableGen {
            id: "free".into(),
            cap: Limit::Unbounded,
            ramp: Limit::Unbounded,
            cost: CostCurve::linear(0.0),
        }];
        let inst = MarketInstance::new(0.0, gens, vec![], model).unwrap();
        let fwd = day_ahead(&inst).unwrap();
        assert_eq!(fwd.quantities["free"], 0.0);
        assert_eq!(fwd.price, 0.0);
    }

    #[test]
    fn shortfall_is_reported() {
        let model = UniformScenarioModel::new(1.0, 0.1).unwrap();
        let gens = vec![DispatchableGen {
            id: "a".into(),
            cap: Limit::Finite(0.5),
            ramp: Limit::Unbounded,
            cost: CostCurve::linear(1.0),
        }];
        assert!(matches!(
            MarketInstance::new(1.0, gens, vec![], model),
            Err(DispatchError::Shortfall { .. })
        ));
    }

    #[test]
    fn ramp_limited_real_time_shortfall() {
        // wind falls short and the only other unit cannot ramp
        let model = UniformScenarioModel::new(1.0, 0.2).unwrap();
        let gens = vec![DispatchableGen {
            id: "base".into(),
            cap: Limit::Unbounded,
            ramp: Limit::Finite(0.0),
            cost: CostCurve::linear(1.0),
        }];
        let wind = RenewableGen {
            id: "wind".into(),
            cap: 2.0,
            cost: CostCurve::linear(0.0),
            availability: Availability::identity(),
        };
        let inst = MarketInstance::new(2.0, gens, vec![wind], model).unwrap();
        let fwd = day_ahead(&inst).unwrap();
        assert!(matches!(
            real_time(&inst, &fwd, 0.8),
            Err(DispatchError::Shortfall { .. })
        ));
        assert!(matches!(
            real_time(&inst, &fwd, 5.0),
            Err(DispatchError::ScenarioOutOfSupport(_))
        ));
    }

    #[test]
    fn cost_curve_validation() {
        let bad = CostCurve::new(vec![
            CostBlock { capacity: Limit::Finite(1.0), marginal_cost: 2.0 },
            CostBlock { capacity: Limit::Finite(1.0), marginal_cost: 1.0 },
        ]);
        assert!(matches!(bad, Err(DispatchError::InvalidBlock { index: 1, .. })));
        let bad = CostCurve::new(vec![
            CostBlock { capacity: Limit::Unbounded, marginal_cost: 1.0 },
            CostBlock { capacity: Limit::Finite(1.0), marginal_cost: 2.0 },
        ]);
        assert!(bad.is_err());
        let ok = CostCurve::new(vec![
            CostBlock { capacity: Limit::Finite(1.0), marginal_cost: 1.0 },
            CostBlock { capacity: Limit::Finite(2.0), marginal_cost: 3.0 },
        ])
        .unwrap();
        assert_eq!(ok.cost(2.0), 4.0);
        assert_eq!(ok.extent(), Limit::Finite(3.0));
        assert_eq!(ok.left_marginal(1.0), 1.0);
        assert_eq!(ok.left_marginal(1.5), 3.0);
    }

    #[test]
    fn loss_regions() {
        let r = loss_region(1.0_f64, 0.4, 0.5).unwrap();
        assert!((r.lo - 0.307180).abs() < 1e-6);
        assert_eq!(r.hi, 0.5);
        assert!(loss_region(1.0, 0.2, 0.5).is_none());
    }

    #[test]
    fn surrogate_is_mean() {
        let m = UniformScenarioModel::new(5.0, 0.1).unwrap();
        assert_eq!(certainty_surrogate(&m), 5.0);
    }

    #[test]
    fn generic_over_f32() {
        let model = UniformScenarioModel::<f32>::new(1.0, 0.2).unwrap();
        let inst = stylized_instance(2.0f32, model, 0.5, &[]).unwrap();
        let fwd = day_ahead(&inst).unwrap();
        let rt = real_time(&inst, &fwd, 0.8).unwrap();
        assert_eq!(rt.price, 2.0);
    }
}
