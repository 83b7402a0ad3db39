//! Two-settlement electricity market with a centralized market for
//! cash-settled call options.
//!
//! Every numerical type is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases at the crate root fix the scalar to `f64`.

pub mod analytics;
pub mod bilateral;
pub mod clearing;
pub mod dispatch;
pub mod market;
pub mod risk;
pub mod scalar;
pub mod scenario;

pub use bilateral::{BestResponse, EquilibriumClass, Side};
pub use clearing::{ClearingObjective, MARKET_MAKER_ID};
pub use dispatch::{Limit, BASE_ID, PEAKER_ID, WIND_ID};
pub use scalar::Scalar;
pub use scenario::RNG_ALGORITHM;

pub type UniformScenarioModel = scenario::UniformScenarioModel<f64>;
pub type ScenarioPoint = scenario::ScenarioPoint<f64>;
pub type ScenarioSet = scenario::ScenarioSet<f64>;
pub type Interval = scalar::Interval<f64>;

pub type CostBlock = dispatch::CostBlock<f64>;
pub type CostCurve = dispatch::CostCurve<f64>;
pub type DispatchableGen = dispatch::DispatchableGen<f64>;
pub type RenewableGen = dispatch::RenewableGen<f64>;
pub type Availability = dispatch::Availability<f64>;
pub type MarketInstance = dispatch::MarketInstance<f64>;
pub type ForwardResult = dispatch::ForwardResult<f64>;
pub type RealTimeResult = dispatch::RealTimeResult<f64>;
pub type EnergySettlement = dispatch::EnergySettlement<f64>;
pub type MarketView = market::MarketView<f64>;

pub type TradeTriple = bilateral::TradeTriple<f64>;
pub type BilateralGame = bilateral::BilateralGame<f64>;

pub type AllowableBox = clearing::AllowableBox<f64>;
pub type LinearConstraint = clearing::LinearConstraint<f64>;
pub type AcceptabilitySet = clearing::AcceptabilitySet<f64>;
pub type ParticipantBid = clearing::ParticipantBid<f64>;
pub type ClearingProblem = clearing::ClearingProblem<f64>;
pub type ClearingSolution = clearing::ClearingSolution<f64>;
pub type ExerciseAllocation = clearing::ExerciseAllocation<f64>;
pub type Ledger = clearing::Ledger<f64>;
pub type NewtonOutcome = clearing::NewtonOutcome<f64>;

pub type RiskLevel = risk::RiskLevel<f64>;
pub type WeightedLossSample = risk::WeightedLossSample<f64>;
pub type Cvar = risk::Cvar<f64>;
pub type CvarCriterion = risk::CvarCriterion<f64>;
pub type FrontierPoint = risk::FrontierPoint<f64>;

pub type PaymentSample = analytics::PaymentSample<f64>;
pub type Moments = analytics::Moments<f64>;
pub type VarianceDecomposition = analytics::VarianceDecomposition<f64>;
