//! Energy-market outcomes evaluated over a scenario set: spot prices and
//! per-producer payments, aligned with the scenario order.

use std::collections::BTreeMap;

use crate::dispatch::{day_ahead, payments, real_time, DispatchError, ForwardResult, MarketInstance};
use crate::scalar::Scalar;
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketView<T> {
    scenarios: ScenarioSet<T>,
    spot: Vec<T>,
    payments: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> MarketView<T> {
    /// Runs the day-ahead program once and the real-time program for every
    /// scenario.
    pub fn from_instance(
        instance: &MarketInstance<T>,
        scenarios: ScenarioSet<T>,
    ) -> Result<Self, DispatchError> {
        let forward = day_ahead(instance)?;
        Self::from_forward(instance, &forward, scenarios)
    }

    pub fn from_forward(
        instance: &MarketInstance<T>,
        forward: &ForwardResult<T>,
        scenarios: ScenarioSet<T>,
    ) -> Result<Self, DispatchError> {
        let mut spot = Vec::with_capacity(scenarios.len());
        let mut pays: BTreeMap<String, Vec<T>> = instance
            .ids()
            .into_iter()
            .map(|id| (id, Vec::with_capacity(scenarios.len())))
            .collect();
        for omega in scenarios.omegas() {
            let rt = real_time(instance, forward, omega)?;
            let settlement = payments(instance, forward, &rt)?;
            spot.push(rt.price);
            for rec in settlement.records {
                pays.get_mut(&rec.id)
                    .expect("settlement covers instance ids")
                    .push(rec.total);
            }
        }
        Ok(Self {
            scenarios,
            spot,
            payments: pays,
        })
    }

    /// Assembles a view from precomputed series. Panics if any series is not
    /// aligned with the scenarios.
    pub fn from_parts(
        scenarios: ScenarioSet<T>,
        spot: Vec<T>,
        payments: BTreeMap<String, Vec<T>>,
    ) -> Self {
        assert_eq!(spot.len(), scenarios.len(), "spot series not aligned");
        for (id, p) in &payments {
            assert_eq!(p.len(), scenarios.len(), "payments of {id} not aligned");
        }
        Self {
            scenarios,
            spot,
            payments,
        }
    }

    pub fn scenarios(&self) -> &ScenarioSet<T> {
        &self.scenarios
    }

    pub fn spot(&self) -> &[T] {
        &self.spot
    }

    pub fn payments(&self) -> &BTreeMap<String, Vec<T>> {
        &self.payments
    }

    pub fn payments_of(&self, id: &str) -> Option<&[T]> {
        self.payments.get(id).map(Vec::as_slice)
    }

    pub fn weights(&self) -> Vec<T> {
        self.scenarios.weights().collect()
    }

    /// Distinct spot prices in ascending order.
    pub fn spot_levels(&self) -> Vec<T> {
        let mut levels = self.spot.clone();
        levels.sort_by(|a, b| a.partial_cmp(b).expect("finite spot prices"));
        levels.dedup();
        levels
    }

    /// Probability mass at each distinct spot level, ascending by level.
    pub fn spot_distribution(&self) -> Vec<(T, T)> {
        self.spot_levels()
            .into_iter()
            .map(|level| {
                let mass = self
                    .scenarios
                    .points()
                    .iter()
                    .zip(&self.spot)
                    .filter(|(_, &p)| p == level)
                    .fold(T::zero(), |acc, (pt, _)| acc + pt.weight);
                (level, mass)
            })
            .collect()
    }
}
