//! Centralized option market. Buyers and sellers submit acceptability sets
//! over option trades; the market maker `M` picks one trade per participant,
//! allocates exercised volume among sellers in every scenario and keeps the
//! merchandising surplus
//!
//! ```text
//! MS = sum_r q_r D_r - sum_g q_g D_g - sum_r (p - K_r)+ D_r + sum_g (p - K_g)+ d_g
//! ```
//!
//! where `D` are traded volumes and `d_g` the volume exercised against seller
//! `g`. Cleared solutions satisfy `sum_g D_g = sum_r D_r`, `0 <= d_g <= D_g`
//! and `sum_g d_g = sum_r D_r 1{p >= K_r}` in every scenario.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix4, RealField, Vector4};
use num_traits::Float;
use thiserror::Error;

use crate::bilateral::{Side, TradeError, TradeTriple};
use crate::dispatch::spot_price_example;
use crate::market::MarketView;
use crate::risk::{CvarCriterion, RiskError, RiskLevel};
use crate::scalar::{pairwise_sum, pos, Scalar};
use crate::scenario::{ScenarioSet, UniformScenarioModel};

/// Ledger id of the market maker.
pub const MARKET_MAKER_ID: &str = "M";
/// Lower bound replacing the open end of every box interval.
pub const EPSILON: f64 = 1e-9;
/// Slack on constraint checks.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Objective values closer than this are ties.
pub const TIE_TOL: f64 = 1e-9;
/// Participation subsets are enumerated exhaustively up to this many bids.
pub const MAX_EXACT_PARTICIPANTS: usize = 6;

const STRIKE_GRID: usize = 32;
const FRONTIER_BISECTIONS: usize = 100;
const PROBE_GRID: usize = 9;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClearingError {
    #[error("invalid allowable box: {0}")]
    InvalidBox(String),
    #[error("acceptability set does not intersect its box")]
    EmptyAcceptability,
    #[error("clearing needs at least one buyer and one seller")]
    MissingSide,
    #[error("duplicate bid id {0}")]
    DuplicateBid(String),
    #[error("invalid exercise split: {0}")]
    InvalidSplit(String),
    #[error("spot series has {got} entries for {expected} scenarios")]
    Misaligned { got: usize, expected: usize },
    #[error("exercise allocation infeasible in scenario {scenario}")]
    ExerciseInfeasible { scenario: usize },
    #[error("volume balance violated: buyers {buyers}, sellers {sellers}")]
    VolumeImbalance { buyers: f64, sellers: f64 },
    #[error("invalid option price choice: {0}")]
    InvalidChoice(String),
    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Trade(#[from] TradeError),
}

/// Allowable trades `[eps, q_max] x [eps, K_max] x [eps, delta_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllowableBox<T> {
    pub q_max: T,
    pub k_max: T,
    pub delta_max: T,
    pub epsilon: T,
}

impl<T: Scalar> AllowableBox<T> {
    pub fn new(q_max: T, k_max: T, delta_max: T) -> Result<Self, ClearingError> {
        Self::with_epsilon(q_max, k_max, delta_max, T::lit(EPSILON))
    }

    pub fn with_epsilon(q_max: T, k_max: T, delta_max: T, epsilon: T) -> Result<Self, ClearingError> {
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(ClearingError::InvalidBox(format!("epsilon must be positive, got {epsilon}")));
        }
        for (name, v) in [("q_max", q_max), ("K_max", k_max), ("delta_max", delta_max)] {
            if !v.is_finite() || !(v > epsilon) {
                return Err(ClearingError::InvalidBox(format!(
                    "{name} must be finite and exceed epsilon, got {v}"
                )));
            }
        }
        Ok(Self {
            q_max,
            k_max,
            delta_max,
            epsilon,
        })
    }

    /// Box of the stylized example: `q, K <= 1/rho`, `delta <= sqrt(3) sigma`.
    pub fn stylized(model: &UniformScenarioModel<T>, rho: T) -> Result<Self, ClearingError> {
        Self::new(T::one() / rho, T::one() / rho, model.half_width())
    }

    pub fn contains(&self, trade: &TradeTriple<T>, tol: T) -> bool {
        let inside = |x: T, hi: T| x >= self.epsilon - tol && x <= hi + tol;
        inside(trade.price, self.q_max) && inside(trade.strike, self.k_max) && inside(trade.volume, self.delta_max)
    }

    /// Center of the `(q, K)` face.
    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.epsilon + self.q_max) / two, (self.epsilon + self.k_max) / two)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
}

/// `price * q + strike * K + volume * delta (<= | >=) rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConstraint<T> {
    pub price: T,
    pub strike: T,
    pub volume: T,
    pub relation: Relation,
    pub rhs: T,
}

impl<T: Scalar> LinearConstraint<T> {
    pub fn value(&self, trade: &TradeTriple<T>) -> T {
        self.price * trade.price + self.strike * trade.strike + self.volume * trade.volume
    }

    pub fn holds(&self, trade: &TradeTriple<T>, tol: T) -> bool {
        let v = self.value(trade);
        match self.relation {
            Relation::Le => v <= self.rhs + tol,
            Relation::Ge => v >= self.rhs - tol,
        }
    }
}

pub type MembershipOracle<T> = Arc<dyn Fn(&TradeTriple<T>) -> bool + Send + Sync>;

#[derive(Clone)]
pub enum Acceptance<T> {
    HalfSpaces(Vec<LinearConstraint<T>>),
    Oracle(MembershipOracle<T>),
}

impl<T: fmt::Debug> fmt::Debug for Acceptance<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Acceptance::HalfSpaces(c) => f.debug_tuple("HalfSpaces").field(c).finish(),
            Acceptance::Oracle(_) => f.write_str("Oracle(..)"),
        }
    }
}

/// Trades a participant weakly prefers to not trading, restricted to a box.
#[derive(Debug, Clone)]
pub struct AcceptabilitySet<T> {
    bbox: AllowableBox<T>,
    rule: Acceptance<T>,
}

impl<T: Scalar> AcceptabilitySet<T> {
    /// Fails when a grid probe of the box finds no accepted trade.
    pub fn new(bbox: AllowableBox<T>, rule: Acceptance<T>) -> Result<Self, ClearingError> {
        let set = Self { bbox, rule };
        if set.probe_nonempty() {
            Ok(set)
        } else {
            Err(ClearingError::EmptyAcceptability)
        }
    }

    fn probe_nonempty(&self) -> bool {
        let b = &self.bbox;
        let at = |lo: T, hi: T, i: usize| lo + (hi - lo) * T::from_count(i) / T::from_count(PROBE_GRID - 1);
        for i in 0..PROBE_GRID {
            for j in 0..PROBE_GRID {
                for k in [0, PROBE_GRID / 2, PROBE_GRID - 1] {
                    let t = TradeTriple {
                        price: at(b.epsilon, b.q_max, i),
                        strike: at(b.epsilon, b.k_max, j),
                        volume: at(b.epsilon, b.delta_max, k),
                    };
                    if self.accepts(&t) {
                        return true;
                    }
                }
            }
        }
        // Thin sets can slip between grid points; the frontier catches lines.
        (0..PROBE_GRID).any(|j| {
            let strike = at(b.epsilon, b.k_max, j);
            self.price_frontier(Side::Buyer, strike, b.delta_max).is_some()
                || self.price_frontier(Side::Seller, strike, b.delta_max).is_some()
        })
    }

    pub fn bbox(&self) -> &AllowableBox<T> {
        &self.bbox
    }

    pub fn rule(&self) -> &Acceptance<T> {
        &self.rule
    }

    pub fn half_spaces(&self) -> Option<&[LinearConstraint<T>]> {
        match &self.rule {
            Acceptance::HalfSpaces(c) => Some(c),
            Acceptance::Oracle(_) => None,
        }
    }

    pub fn accepts(&self, trade: &TradeTriple<T>) -> bool {
        let tol = T::lit(FEASIBILITY_TOL);
        if !self.bbox.contains(trade, tol) {
            return false;
        }
        match &self.rule {
            Acceptance::HalfSpaces(c) => c.iter().all(|h| h.holds(trade, tol)),
            Acceptance::Oracle(f) => f(trade),
        }
    }

    /// Most favourable accepted price for `M` at fixed strike and volume: the
    /// largest `q` a buyer accepts, or the smallest a seller accepts.
    pub fn price_frontier(&self, side: Side, strike: T, volume: T) -> Option<T> {
        let b = &self.bbox;
        let q = match &self.rule {
            Acceptance::HalfSpaces(cs) => {
                let (mut lo, mut hi) = (b.epsilon, b.q_max);
                for c in cs {
                    let rest = c.rhs - c.strike * strike - c.volume * volume;
                    if c.price == T::zero() {
                        continue;
                    }
                    let bound = rest / c.price;
                    match (c.relation, c.price > T::zero()) {
                        (Relation::Le, true) | (Relation::Ge, false) => hi = hi.min(bound),
                        (Relation::Ge, true) | (Relation::Le, false) => lo = lo.max(bound),
                    }
                }
                let q = match side {
                    Side::Buyer => hi,
                    Side::Seller => lo,
                };
                q.max(b.epsilon).min(b.q_max)
            }
            Acceptance::Oracle(f) => {
                let trade = |price| TradeTriple { price, strike, volume };
                let (inner, outer) = match side {
                    Side::Buyer => (b.epsilon, b.q_max),
                    Side::Seller => (b.q_max, b.epsilon),
                };
                if f(&trade(outer)) {
                    outer
                } else if !f(&trade(inner)) {
                    return None;
                } else {
                    let (mut a, mut z) = (inner, outer);
                    for _ in 0..FRONTIER_BISECTIONS {
                        let mid = a + (z - a) / T::lit(2.0);
                        if mid == a || mid == z {
                            break;
                        }
                        if f(&trade(mid)) {
                            a = mid;
                        } else {
                            z = mid;
                        }
                    }
                    a
                }
            }
        };
        let t = TradeTriple {
            price: q,
            strike,
            volume,
        };
        self.accepts(&t).then_some(q)
    }
}

/// Risk-neutral acceptability, `E[option flow to side] >= 0`; the energy
/// payment cancels from both sides of the comparison. When the spot takes
/// only the values `0` and `hi > 0` the set is emitted as the half-space
/// `q / m + K (<= | >=) hi`, with `m` the probability of `hi`.
pub fn risk_neutral_acceptability<T: Scalar>(
    side: Side,
    spot: &[T],
    scenarios: &ScenarioSet<T>,
    bbox: AllowableBox<T>,
) -> Result<AcceptabilitySet<T>, ClearingError> {
    if spot.len() != scenarios.len() {
        return Err(ClearingError::Misaligned {
            got: spot.len(),
            expected: scenarios.len(),
        });
    }
    let view = MarketView::from_parts(scenarios.clone(), spot.to_vec(), BTreeMap::new());
    let dist = view.spot_distribution();
    if let [(lo, _), (hi, m)] = dist[..] {
        if lo == T::zero() && hi > T::zero() {
            let c = LinearConstraint {
                price: T::one() / m,
                strike: T::one(),
                volume: T::zero(),
                relation: match side {
                    Side::Buyer => Relation::Le,
                    Side::Seller => Relation::Ge,
                },
                rhs: hi,
            };
            return AcceptabilitySet::new(bbox, Acceptance::HalfSpaces(vec![c]));
        }
    }
    let weights = view.weights();
    let spot = spot.to_vec();
    let oracle: MembershipOracle<T> = Arc::new(move |t: &TradeTriple<T>| {
        let terms: Vec<T> = spot.iter().zip(&weights).map(|(&p, &w)| w * side.option_flow(p, t)).collect();
        pairwise_sum(&terms) >= -T::lit(FEASIBILITY_TOL)
    });
    AcceptabilitySet::new(bbox, Acceptance::Oracle(oracle))
}

/// CVaR acceptability at level `alpha` as a membership oracle.
pub fn cvar_acceptability<T: Scalar>(
    side: Side,
    level: RiskLevel<T>,
    pi: &[T],
    spot: &[T],
    scenarios: &ScenarioSet<T>,
    bbox: AllowableBox<T>,
) -> Result<AcceptabilitySet<T>, ClearingError> {
    let criterion = CvarCriterion::new(side, level, pi.to_vec(), spot.to_vec(), scenarios.clone())?;
    let oracle: MembershipOracle<T> = Arc::new(move |t: &TradeTriple<T>| criterion.accepts(t));
    AcceptabilitySet::new(bbox, Acceptance::Oracle(oracle))
}

#[derive(Debug, Clone)]
pub struct ParticipantBid<T> {
    pub id: String,
    pub side: Side,
    pub acceptability: AcceptabilitySet<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClearingObjective {
    /// Maximize expected merchandising surplus.
    MaxMs,
    /// Minimize the largest absolute surplus over scenarios.
    ZeroMs,
}

impl ClearingObjective {
    pub fn label(&self) -> &'static str {
        match self {
            ClearingObjective::MaxMs => "max-ms",
            ClearingObjective::ZeroMs => "zero-ms",
        }
    }
}

/// How exercised volume is split among sellers.
#[derive(Debug, Clone, PartialEq)]
pub enum ExerciseAllocation<T> {
    /// Fill sellers in descending `(p - K_g)+`, ties by ascending id.
    Greedy,
    /// Seller `g` takes the fraction `alpha_g` of traded and exercised volume.
    Split(BTreeMap<String, T>),
}

#[derive(Debug, Clone)]
pub struct ClearingProblem<T> {
    bids: Vec<ParticipantBid<T>>,
    scenarios: ScenarioSet<T>,
    spot: Vec<T>,
    objective: ClearingObjective,
    allocation: ExerciseAllocation<T>,
}

impl<T: Scalar> ClearingProblem<T> {
    pub fn new(
        mut bids: Vec<ParticipantBid<T>>,
        scenarios: ScenarioSet<T>,
        spot: Vec<T>,
        objective: ClearingObjective,
        allocation: ExerciseAllocation<T>,
    ) -> Result<Self, ClearingError> {
        if spot.len() != scenarios.len() {
            return Err(ClearingError::Misaligned {
                got: spot.len(),
                expected: scenarios.len(),
            });
        }
        bids.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = bids.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(ClearingError::DuplicateBid(w[0].id.clone()));
        }
        if !bids.iter().any(|b| b.side == Side::Buyer) || !bids.iter().any(|b| b.side == Side::Seller) {
            return Err(ClearingError::MissingSide);
        }
        if let ExerciseAllocation::Split(fractions) = &allocation {
            for (id, &a) in fractions {
                match bids.iter().find(|b| &b.id == id) {
                    Some(b) if b.side == Side::Seller => {}
                    _ => return Err(ClearingError::InvalidSplit(format!("{id} is not a seller"))),
                }
                if !(a >= T::zero()) || a > T::one() {
                    return Err(ClearingError::InvalidSplit(format!("fraction of {id} is {a}")));
                }
            }
            let total = fractions.values().fold(T::zero(), |acc, &a| acc + a);
            if (total - T::one()).abs() > T::lit(FEASIBILITY_TOL) {
                return Err(ClearingError::InvalidSplit(format!("fractions sum to {total}")));
            }
        }
        Ok(Self {
            bids,
            scenarios,
            spot,
            objective,
            allocation,
        })
    }

    /// Bids in ascending id order.
    pub fn bids(&self) -> &[ParticipantBid<T>] {
        &self.bids
    }

    pub fn bid(&self, id: &str) -> Option<&ParticipantBid<T>> {
        self.bids.iter().find(|b| b.id == id)
    }

    pub fn scenarios(&self) -> &ScenarioSet<T> {
        &self.scenarios
    }

    pub fn spot(&self) -> &[T] {
        &self.spot
    }

    pub fn objective(&self) -> ClearingObjective {
        self.objective
    }

    pub fn allocation(&self) -> &ExerciseAllocation<T> {
        &self.allocation
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearedTrade<T> {
    pub side: Side,
    pub trade: TradeTriple<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingSolution<T> {
    trades: BTreeMap<String, ClearedTrade<T>>,
    exercise: BTreeMap<String, Vec<T>>,
    ms: Vec<T>,
    spot: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> ClearingSolution<T> {
    /// No trades; surplus is zero everywhere.
    pub fn empty(spot: &[T], scenarios: &ScenarioSet<T>) -> Self {
        Self {
            trades: BTreeMap::new(),
            exercise: BTreeMap::new(),
            ms: vec![T::zero(); spot.len()],
            spot: spot.to_vec(),
            weights: scenarios.weights().collect(),
        }
    }

    /// Allocates exercise and evaluates the surplus for the given trades.
    pub fn assemble(
        trades: BTreeMap<String, ClearedTrade<T>>,
        spot: &[T],
        scenarios: &ScenarioSet<T>,
        allocation: &ExerciseAllocation<T>,
    ) -> Result<Self, ClearingError> {
        if spot.len() != scenarios.len() {
            return Err(ClearingError::Misaligned {
                got: spot.len(),
                expected: scenarios.len(),
            });
        }
        let (buy, sell) = side_volumes(&trades);
        let tol = T::lit(FEASIBILITY_TOL) * T::one().max(buy);
        if (buy - sell).abs() > tol {
            return Err(ClearingError::VolumeImbalance {
                buyers: buy.to_f64().unwrap_or(f64::NAN),
                sellers: sell.to_f64().unwrap_or(f64::NAN),
            });
        }
        let exercise = allocate_exercise(&trades, spot, allocation)?;
        let mut sol = Self {
            trades,
            exercise,
            ms: Vec::new(),
            spot: spot.to_vec(),
            weights: scenarios.weights().collect(),
        };
        let da = sol.ms_day_ahead();
        sol.ms = (0..spot.len()).map(|k| da + sol.ms_real_time(k)).collect();
        Ok(sol)
    }

    pub fn trades(&self) -> &BTreeMap<String, ClearedTrade<T>> {
        &self.trades
    }

    pub fn trade(&self, id: &str) -> Option<&TradeTriple<T>> {
        self.trades.get(id).map(|c| &c.trade)
    }

    /// Exercised volume per seller, aligned with the scenarios.
    pub fn exercise(&self) -> &BTreeMap<String, Vec<T>> {
        &self.exercise
    }

    /// Merchandising surplus per scenario.
    pub fn ms(&self) -> &[T] {
        &self.ms
    }

    pub fn spot(&self) -> &[T] {
        &self.spot
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn is_empty(&self) -> bool {
        self.trades.is_empty()
    }

    pub fn expected_ms(&self) -> T {
        let terms: Vec<T> = self.ms.iter().zip(&self.weights).map(|(&m, &w)| m * w).collect();
        pairwise_sum(&terms)
    }

    pub fn max_abs_ms(&self) -> T {
        self.ms.iter().fold(T::zero(), |acc, &m| acc.max(m.abs()))
    }

    /// Total traded volume on the buy side.
    pub fn volume(&self) -> T {
        side_volumes(&self.trades).0
    }

    /// `sum_r q_r D_r - sum_g q_g D_g`.
    pub fn ms_day_ahead(&self) -> T {
        self.trades.values().fold(T::zero(), |acc, c| {
            let fee = c.trade.price * c.trade.volume;
            match c.side {
                Side::Buyer => acc + fee,
                Side::Seller => acc - fee,
            }
        })
    }

    /// `-sum_r (p - K_r)+ D_r + sum_g (p - K_g)+ d_g` in scenario `k`.
    pub fn ms_real_time(&self, k: usize) -> T {
        let p = self.spot[k];
        self.trades.iter().fold(T::zero(), |acc, (id, c)| match c.side {
            Side::Buyer => acc - c.trade.payoff_per_unit(p) * c.trade.volume,
            Side::Seller => acc + c.trade.payoff_per_unit(p) * self.exercise[id][k],
        })
    }

    /// Checks balance, exercise bounds and acceptability against `problem`.
    pub fn verify(&self, problem: &ClearingProblem<T>) -> Result<(), String> {
        let tol = T::lit(FEASIBILITY_TOL);
        let (buy, sell) = side_volumes(&self.trades);
        if (buy - sell).abs() > tol * T::one().max(buy) {
            return Err(format!("volume balance: buyers {buy}, sellers {sell}"));
        }
        for (id, c) in &self.trades {
            let bid = problem.bid(id).ok_or_else(|| format!("{id} has no bid"))?;
            if bid.side != c.side {
                return Err(format!("{id} cleared on the wrong side"));
            }
            if !bid.acceptability.accepts(&c.trade) {
                return Err(format!("{id} does not accept {:?}", c.trade));
            }
        }
        for k in 0..self.spot.len() {
            let p = self.spot[k];
            let demand = exercised_demand(&self.trades, p);
            let mut total = T::zero();
            for (id, d) in &self.exercise {
                let cap = self.trades[id].trade.volume;
                if d[k] < -tol || d[k] > cap + tol {
                    return Err(format!("exercise of {id} out of bounds in scenario {k}"));
                }
                total = total + d[k];
            }
            if (total - demand).abs() > tol * T::one().max(demand) {
                return Err(format!("exercise balance in scenario {k}: {total} vs {demand}"));
            }
        }
        Ok(())
    }
}

fn side_volumes<T: Scalar>(trades: &BTreeMap<String, ClearedTrade<T>>) -> (T, T) {
    trades.values().fold((T::zero(), T::zero()), |(b, s), c| match c.side {
        Side::Buyer => (b + c.trade.volume, s),
        Side::Seller => (b, s + c.trade.volume),
    })
}

/// `sum_r D_r 1{p >= K_r}`.
fn exercised_demand<T: Scalar>(trades: &BTreeMap<String, ClearedTrade<T>>, p: T) -> T {
    trades
        .values()
        .filter(|c| c.side == Side::Buyer && p >= c.trade.strike)
        .fold(T::zero(), |acc, c| acc + c.trade.volume)
}

fn allocate_exercise<T: Scalar>(
    trades: &BTreeMap<String, ClearedTrade<T>>,
    spot: &[T],
    allocation: &ExerciseAllocation<T>,
) -> Result<BTreeMap<String, Vec<T>>, ClearingError> {
    let sellers: Vec<(&String, &TradeTriple<T>)> = trades
        .iter()
        .filter(|(_, c)| c.side == Side::Seller)
        .map(|(id, c)| (id, &c.trade))
        .collect();
    let mut out: BTreeMap<String, Vec<T>> = sellers
        .iter()
        .map(|(id, _)| ((*id).clone(), Vec::with_capacity(spot.len())))
        .collect();
    let tol = T::lit(FEASIBILITY_TOL);
    for (k, &p) in spot.iter().enumerate() {
        let demand = exercised_demand(trades, p);
        match allocation {
            ExerciseAllocation::Greedy => {
                let mut order: Vec<usize> = (0..sellers.len()).collect();
                order.sort_by(|&a, &b| {
                    let (pa, pb) = (sellers[a].1.payoff_per_unit(p), sellers[b].1.payoff_per_unit(p));
                    pb.partial_cmp(&pa)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| sellers[a].0.cmp(sellers[b].0))
                });
                let mut share = vec![T::zero(); sellers.len()];
                let mut left = demand;
                for i in order {
                    let take = left.min(sellers[i].1.volume);
                    share[i] = take;
                    left = left - take;
                }
                if left > tol * T::one().max(demand) {
                    return Err(ClearingError::ExerciseInfeasible { scenario: k });
                }
                for (i, (id, _)) in sellers.iter().enumerate() {
                    out.get_mut(*id).expect("seller").push(share[i]);
                }
            }
            ExerciseAllocation::Split(fractions) => {
                let mut assigned = T::zero();
                for (id, t) in &sellers {
                    let alpha = fractions.get(*id).copied().unwrap_or(T::zero());
                    let d = alpha * demand;
                    if d > t.volume + tol {
                        return Err(ClearingError::ExerciseInfeasible { scenario: k });
                    }
                    assigned = assigned + d;
                    out.get_mut(*id).expect("seller").push(d.min(t.volume));
                }
                if (assigned - demand).abs() > tol * T::one().max(demand) {
                    return Err(ClearingError::ExerciseInfeasible { scenario: k });
                }
            }
        }
    }
    Ok(out)
}

/// Strike interval `[lo, hi]`, or `(lo, hi]` when `lo_open`.
#[derive(Debug, Clone, Copy)]
struct Cell<T> {
    lo: T,
    lo_open: bool,
    hi: T,
}

impl<T: Scalar> Cell<T> {
    fn contains(&self, k: T) -> bool {
        k <= self.hi && (k > self.lo || (!self.lo_open && k == self.lo))
    }
}

/// Strike intervals between consecutive spot levels, clipped to the box.
/// Exercise decisions are constant on each cell.
fn strike_cells<T: Scalar>(levels: &[T], bbox: &AllowableBox<T>) -> Vec<Cell<T>> {
    let mut bounds: Vec<(T, bool)> = vec![(T::neg_infinity(), false)];
    bounds.extend(levels.iter().map(|&l| (l, true)));
    let mut uppers: Vec<T> = levels.to_vec();
    uppers.push(T::infinity());
    bounds
        .into_iter()
        .zip(uppers)
        .filter_map(|((lo, open), hi)| {
            let (lo, lo_open) = if bbox.epsilon > lo { (bbox.epsilon, false) } else { (lo, open) };
            let hi = hi.min(bbox.k_max);
            let nonempty = lo < hi || (lo == hi && !lo_open);
            nonempty.then_some(Cell { lo, lo_open, hi })
        })
        .collect()
}

/// Candidate strikes: a uniform grid over every cell plus the projection of
/// the box center onto each half-space boundary.
fn strike_candidates<T: Scalar>(
    set: &AcceptabilitySet<T>,
    cells: &[Cell<T>],
    volume: T,
) -> Vec<T> {
    let mut ks = Vec::new();
    for c in cells {
        for i in 0..=STRIKE_GRID {
            if i == 0 && c.lo_open {
                continue;
            }
            ks.push(c.lo + (c.hi - c.lo) * T::from_count(i) / T::from_count(STRIKE_GRID));
        }
    }
    if let Some(hs) = set.half_spaces() {
        let (q0, k0) = set.bbox().center();
        for h in hs {
            let norm = h.price * h.price + h.strike * h.strike;
            if norm == T::zero() {
                continue;
            }
            let r = h.rhs - h.volume * volume;
            let t = (h.price * q0 + h.strike * k0 - r) / norm;
            let k = k0 - t * h.strike;
            if cells.iter().any(|c| c.contains(k)) {
                ks.push(k);
            }
        }
    }
    ks
}

struct Term<T> {
    score: T,
    dist: T,
    trade: TradeTriple<T>,
}

fn better<T: Scalar>(cand: &Term<T>, best: &Option<Term<T>>) -> bool {
    match best {
        None => true,
        Some(b) => {
            let tie = T::lit(TIE_TOL) * T::one().max(b.score.abs());
            cand.score > b.score + tie || ((cand.score - b.score).abs() <= tie && cand.dist < b.dist)
        }
    }
}

fn center_distance<T: Scalar>(set: &AcceptabilitySet<T>, q: T, k: T) -> T {
    let (q0, k0) = set.bbox().center();
    (q - q0) * (q - q0) + (k - k0) * (k - k0)
}

/// Market-maker objective; larger is better.
fn objective_value<T: Scalar>(sol: &ClearingSolution<T>, objective: ClearingObjective) -> T {
    match objective {
        ClearingObjective::MaxMs => sol.expected_ms(),
        ClearingObjective::ZeroMs => -sol.max_abs_ms(),
    }
}

/// Fills `volume` across `caps` in order.
fn fill<T: Scalar>(caps: &[T], volume: T) -> Vec<T> {
    let mut left = volume;
    caps.iter()
        .map(|&c| {
            let v = left.min(c);
            left = left - v;
            v
        })
        .collect()
}

/// Clears the option market by enumerating participation subsets. Within a
/// subset buyers push their price to the acceptability frontier at the best
/// strike, then sellers are chosen one at a time against the full objective.
/// Ties go to the trade nearest the box center; among equally good
/// solutions the larger volume wins, and no trade is chosen only when every
/// trade scores worse.
pub fn clear<T: Scalar>(problem: &ClearingProblem<T>) -> Result<ClearingSolution<T>, ClearingError> {
    let scenarios = problem.scenarios();
    let spot = problem.spot();
    let view = MarketView::from_parts(scenarios.clone(), spot.to_vec(), BTreeMap::new());
    let levels = view.spot_levels();
    let weights = view.weights();
    let expected_payoff = |k: T| {
        let terms: Vec<T> = spot.iter().zip(&weights).map(|(&p, &w)| w * pos(p - k)).collect();
        pairwise_sum(&terms)
    };

    let buyers: Vec<&ParticipantBid<T>> = problem.bids().iter().filter(|b| b.side == Side::Buyer).collect();
    let sellers: Vec<&ParticipantBid<T>> = problem.bids().iter().filter(|b| b.side == Side::Seller).collect();
    let split = match problem.allocation() {
        ExerciseAllocation::Split(f) => Some(f),
        ExerciseAllocation::Greedy => None,
    };

    let subsets = |n: usize, exhaustive: bool| -> Vec<Vec<usize>> {
        if exhaustive {
            (1..(1usize << n))
                .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
                .collect()
        } else {
            vec![(0..n).collect()]
        }
    };
    let exhaustive = problem.bids().len() <= MAX_EXACT_PARTICIPANTS;
    let buyer_sets = subsets(buyers.len(), exhaustive);
    let seller_sets: Vec<Vec<usize>> = match split {
        Some(f) => vec![(0..sellers.len())
            .filter(|&i| f.get(&sellers[i].id).is_some_and(|&a| a > T::zero()))
            .collect()],
        None => subsets(sellers.len(), exhaustive),
    };

    let empty = ClearingSolution::empty(spot, scenarios);
    let mut best_score = objective_value(&empty, problem.objective());
    let mut best = empty;
    let tol = T::lit(FEASIBILITY_TOL);
    let eps_of = |b: &ParticipantBid<T>| b.acceptability.bbox().epsilon;

    for bset in &buyer_sets {
        for sset in &seller_sets {
            if sset.is_empty() {
                continue;
            }
            let bcap: T = bset
                .iter()
                .fold(T::zero(), |acc, &i| acc + buyers[i].acceptability.bbox().delta_max);
            let scap = match split {
                Some(f) => sset
                    .iter()
                    .map(|&i| sellers[i].acceptability.bbox().delta_max / f[&sellers[i].id])
                    .fold(T::infinity(), |a, b| a.min(b)),
                None => sset
                    .iter()
                    .fold(T::zero(), |acc, &i| acc + sellers[i].acceptability.bbox().delta_max),
            };
            let volume = bcap.min(scap);
            let bvol = fill(
                &bset.iter().map(|&i| buyers[i].acceptability.bbox().delta_max).collect::<Vec<_>>(),
                volume,
            );
            let svol = match split {
                Some(f) => sset.iter().map(|&i| f[&sellers[i].id] * volume).collect::<Vec<_>>(),
                None => fill(
                    &sset.iter().map(|&i| sellers[i].acceptability.bbox().delta_max).collect::<Vec<_>>(),
                    volume,
                ),
            };
            let too_small = bset.iter().zip(&bvol).any(|(&i, &v)| v < eps_of(buyers[i]) - tol)
                || sset.iter().zip(&svol).any(|(&i, &v)| v < eps_of(sellers[i]) - tol);
            if too_small {
                continue;
            }

            let mut trades = BTreeMap::new();
            let mut feasible = true;
            for (&i, &v) in bset.iter().zip(&bvol) {
                let set = &buyers[i].acceptability;
                let cells = strike_cells(&levels, set.bbox());
                let mut chosen: Option<Term<T>> = None;
                for k in strike_candidates(set, &cells, v) {
                    let Some(q) = set.price_frontier(Side::Buyer, k, v) else { continue };
                    let term = Term {
                        score: (q - expected_payoff(k)) * v,
                        dist: center_distance(set, q, k),
                        trade: TradeTriple { price: q, strike: k, volume: v },
                    };
                    if better(&term, &chosen) {
                        chosen = Some(term);
                    }
                }
                match chosen {
                    Some(t) => {
                        trades.insert(buyers[i].id.clone(), ClearedTrade { side: Side::Buyer, trade: t.trade });
                    }
                    None => feasible = false,
                }
            }
            if !feasible {
                continue;
            }
            let buyer_trades: Vec<TradeTriple<T>> = trades.values().map(|c| c.trade).collect();

            // Seller candidates, each with a proxy score assuming it absorbs
            // its pro-rata share of exercised volume.
            let demand: Vec<T> = spot
                .iter()
                .map(|&p| {
                    buyer_trades
                        .iter()
                        .filter(|t| p >= t.strike)
                        .fold(T::zero(), |a, t| a + t.volume)
                })
                .collect();
            let mut candidates: Vec<Vec<TradeTriple<T>>> = Vec::new();
            for (&i, &v) in sset.iter().zip(&svol) {
                let set = &sellers[i].acceptability;
                let cells = strike_cells(&levels, set.bbox());
                let mut cands: Vec<TradeTriple<T>> = strike_candidates(set, &cells, v)
                    .into_iter()
                    .filter_map(|k| {
                        set.price_frontier(Side::Seller, k, v)
                            .map(|q| TradeTriple { price: q, strike: k, volume: v })
                    })
                    .collect();
                if problem.objective() == ClearingObjective::ZeroMs {
                    for bt in &buyer_trades {
                        let mirror = TradeTriple { volume: v, ..*bt };
                        if set.accepts(&mirror) {
                            cands.push(mirror);
                        }
                    }
                }
                if cands.is_empty() {
                    feasible = false;
                    break;
                }
                candidates.push(cands);
            }
            if !feasible {
                continue;
            }
            let share = |v: T, d: T| -> T { if volume > T::zero() { v * d / volume } else { T::zero() } };
            let mut picks: Vec<TradeTriple<T>> = Vec::new();
            for (n, cands) in candidates.iter().enumerate() {
                let set = &sellers[sset[n]].acceptability;
                let mut chosen: Option<Term<T>> = None;
                for t in cands {
                    let terms: Vec<T> = spot
                        .iter()
                        .zip(&weights)
                        .zip(&demand)
                        .map(|((&p, &w), &d)| w * t.payoff_per_unit(p) * share(t.volume, d))
                        .collect();
                    let term = Term {
                        score: pairwise_sum(&terms) - t.price * t.volume,
                        dist: center_distance(set, t.price, t.strike),
                        trade: *t,
                    };
                    if better(&term, &chosen) {
                        chosen = Some(term);
                    }
                }
                picks.push(chosen.expect("nonempty candidates").trade);
            }

            let build = |picks: &[TradeTriple<T>]| {
                let mut all = trades.clone();
                for (n, t) in picks.iter().enumerate() {
                    all.insert(sellers[sset[n]].id.clone(), ClearedTrade { side: Side::Seller, trade: *t });
                }
                ClearingSolution::assemble(all, spot, scenarios, problem.allocation())
            };
            // One coordinate pass against the exact objective.
            let mut current = build(&picks)?;
            let mut current_score = objective_value(&current, problem.objective());
            for n in 0..picks.len() {
                let set = &sellers[sset[n]].acceptability;
                let mut dist = center_distance(set, picks[n].price, picks[n].strike);
                for t in &candidates[n] {
                    let mut trial = picks.clone();
                    trial[n] = *t;
                    let sol = build(&trial)?;
                    let score = objective_value(&sol, problem.objective());
                    let d = center_distance(set, t.price, t.strike);
                    let tie = T::lit(TIE_TOL) * T::one().max(current_score.abs());
                    if score > current_score + tie || ((score - current_score).abs() <= tie && d < dist) {
                        picks = trial;
                        current = sol;
                        current_score = score;
                        dist = d;
                    }
                }
            }

            let tie = T::lit(TIE_TOL) * T::one().max(best_score.abs());
            let wins = current_score > best_score + tie
                || ((current_score - best_score).abs() <= tie && current.volume() > best.volume() + tol);
            if wins {
                best_score = current_score;
                best = current;
            }
        }
    }
    Ok(best)
}

/// Two-party solution of the stylized example built from explicit trades.
fn stylized_solution<T: Scalar>(
    model: &UniformScenarioModel<T>,
    rho: T,
    buyer: TradeTriple<T>,
    seller: TradeTriple<T>,
    scenarios: &ScenarioSet<T>,
) -> Result<ClearingSolution<T>, ClearingError> {
    let spot: Vec<T> = scenarios
        .omegas()
        .map(|w| spot_price_example(w, model.mu(), rho))
        .collect();
    let mut trades = BTreeMap::new();
    trades.insert(
        crate::dispatch::WIND_ID.to_string(),
        ClearedTrade {
            side: Side::Buyer,
            trade: buyer,
        },
    );
    trades.insert(
        crate::dispatch::PEAKER_ID.to_string(),
        ClearedTrade {
            side: Side::Seller,
            trade: seller,
        },
    );
    ClearingSolution::assemble(trades, &spot, scenarios, &ExerciseAllocation::Greedy)
}

/// Closed-form optimum of the stylized example: `K_i = 1/rho - 2 q_i` and
/// full volume `sqrt(3) sigma` on both sides.
pub fn clear_example_analytic<T: Scalar>(
    model: &UniformScenarioModel<T>,
    rho: T,
    q_choice: (T, T),
    scenarios: &ScenarioSet<T>,
) -> Result<ClearingSolution<T>, ClearingError> {
    let (q_w, q_p) = q_choice;
    let limit = T::one() / (T::lit(2.0) * rho);
    for (name, q) in [("q_W", q_w), ("q_P", q_p)] {
        if !(q > T::zero() && q < limit) {
            return Err(ClearingError::InvalidChoice(format!("{name} = {q} outside (0, {limit})")));
        }
    }
    let peak = T::one() / rho;
    let volume = model.half_width();
    let buyer = TradeTriple::new(q_w, peak - T::lit(2.0) * q_w, volume)?;
    let seller = TradeTriple::new(q_p, peak - T::lit(2.0) * q_p, volume)?;
    stylized_solution(model, rho, buyer, seller, scenarios)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry<T> {
    pub party: String,
    /// Cash received; negative when paying.
    pub amount: T,
}

/// Cash flows of one settlement stage, participants by id then `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ledger<T> {
    pub entries: Vec<LedgerEntry<T>>,
}

impl<T: Scalar> Ledger<T> {
    pub fn total(&self) -> T {
        let v: Vec<T> = self.entries.iter().map(|e| e.amount).collect();
        pairwise_sum(&v)
    }

    pub fn amount_for(&self, party: &str) -> Option<T> {
        self.entries.iter().find(|e| e.party == party).map(|e| e.amount)
    }

    /// Net amount kept by the market maker.
    pub fn market_maker(&self) -> T {
        self.amount_for(MARKET_MAKER_ID).unwrap_or(T::zero())
    }
}

/// Option fees: buyers pay `q D` to `M`, `M` pays `q D` to each seller.
pub fn settle_day_ahead<T: Scalar>(solution: &ClearingSolution<T>) -> Ledger<T> {
    let mut entries: Vec<LedgerEntry<T>> = solution
        .trades()
        .iter()
        .map(|(id, c)| {
            let fee = c.trade.price * c.trade.volume;
            LedgerEntry {
                party: id.clone(),
                amount: match c.side {
                    Side::Buyer => -fee,
                    Side::Seller => fee,
                },
            }
        })
        .collect();
    entries.push(LedgerEntry {
        party: MARKET_MAKER_ID.into(),
        amount: solution.ms_day_ahead(),
    });
    Ledger { entries }
}

/// Option payoffs in scenario `k`: `M` pays `(p - K_r)+ D_r` to each buyer,
/// each seller pays `(p - K_g)+ d_g` to `M`.
pub fn settle_real_time<T: Scalar>(solution: &ClearingSolution<T>, k: usize) -> Ledger<T> {
    let p = solution.spot()[k];
    let mut entries: Vec<LedgerEntry<T>> = solution
        .trades()
        .iter()
        .map(|(id, c)| LedgerEntry {
            party: id.clone(),
            amount: match c.side {
                Side::Buyer => c.trade.payoff_per_unit(p) * c.trade.volume,
                Side::Seller => -c.trade.payoff_per_unit(p) * solution.exercise()[id][k],
            },
        })
        .collect();
    entries.push(LedgerEntry {
        party: MARKET_MAKER_ID.into(),
        amount: solution.ms_real_time(k),
    });
    Ledger { entries }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome<T> {
    pub buyer: TradeTriple<T>,
    pub seller: TradeTriple<T>,
    /// Residual evaluations, including the one that met the tolerance.
    pub iterations: usize,
    /// Max-norm of the final residual.
    pub residual: T,
}

/// Residual of the zero-surplus system in `x = (q_W, K_W, q_P, K_P)`:
/// surplus at the high and low spot level, then `2 q_i + K_i - 1/rho`.
fn zero_ms_residual<T: Scalar>(x: &[T; 4], peak: T, a: T) -> [T; 4] {
    let [qw, kw, qp, kp] = *x;
    let exercised = if peak >= kw { T::one() } else { T::zero() };
    let high = a * ((qw - qp) - pos(peak - kw) + pos(peak - kp) * exercised);
    let low = a * (qw - qp);
    let two = T::lit(2.0);
    [high, low, two * qw + kw - peak, two * qp + kp - peak]
}

/// Solves `MS = 0` in both spot regimes of the stylized example together
/// with `2 q_i + K_i = 1/rho`, starting from `K_i = 1/rho - 2 q_i`. The
/// surplus equations only fix `q_W - q_P` and `K_W - K_P`, so the Jacobian
/// is singular and each step is the minimum-norm solution of the linearized
/// system.
pub fn newton_zero_ms<T: Scalar + RealField>(
    model: &UniformScenarioModel<T>,
    rho: T,
    init: (T, T),
) -> Result<NewtonOutcome<T>, ClearingError> {
    let peak = <T as Scalar>::lit(1.0) / rho;
    let eps = <T as Scalar>::lit(EPSILON);
    let two = <T as Scalar>::lit(2.0);
    let q_hi = (peak - eps) / two;
    for (name, q) in [("q_W", init.0), ("q_P", init.1)] {
        if !(q >= eps && q <= q_hi) {
            return Err(ClearingError::InvalidChoice(format!("{name} = {q} outside [{eps}, {q_hi}]")));
        }
    }
    let a = model.half_width();
    let tol = Float::max(<T as Scalar>::lit(1e-12), <T as Scalar>::lit(16.0) * <T as Scalar>::eps());
    let mut x = [init.0, peak - two * init.0, init.1, peak - two * init.1];
    let norm = |f: &[T; 4]| f.iter().fold(<T as Scalar>::lit(0.0), |m, &v| Float::max(m, Float::abs(v)));
    let mut residual = norm(&zero_ms_residual(&x, peak, a));
    for iteration in 1..=NEWTON_MAX_ITER {
        let f = zero_ms_residual(&x, peak, a);
        residual = norm(&f);
        if residual <= tol {
            let q_w = x[0];
            let q_p = x[2];
            return Ok(NewtonOutcome {
                buyer: TradeTriple::new(q_w, x[1], a)?,
                seller: TradeTriple::new(q_p, x[3], a)?,
                iterations: iteration,
                residual,
            });
        }
        let one = <T as Scalar>::lit(1.0);
        let zero = <T as Scalar>::lit(0.0);
        let exercised = if peak >= x[1] { one } else { zero };
        let dk_w = if peak > x[1] { one } else { zero };
        let dk_p = if peak > x[3] { -exercised } else { zero };
        let jac = Matrix4::new(
            a, a * dk_w, -a, a * dk_p,
            a, zero, -a, zero,
            two, one, zero, zero,
            zero, zero, two, one,
        );
        let rhs = Vector4::new(f[0], f[1], f[2], f[3]);
        let step = jac
            .svd(true, true)
            .solve(&rhs, <T as Scalar>::lit(1e-12))
            .map_err(|_| ClearingError::NoConvergence {
                iterations: iteration,
                residual: residual.to_f64().unwrap_or(f64::NAN),
            })?;
        for i in 0..4 {
            x[i] = x[i] - step[i];
        }
    }
    Err(ClearingError::NoConvergence {
        iterations: NEWTON_MAX_ITER,
        residual: residual.to_f64().unwrap_or(f64::NAN),
    })
}

/// Full clearing solution of the stylized example at the Newton fixed point.
pub fn newton_solution<T: Scalar + RealField>(
    model: &UniformScenarioModel<T>,
    rho: T,
    outcome: &NewtonOutcome<T>,
    scenarios: &ScenarioSet<T>,
) -> Result<ClearingSolution<T>, ClearingError> {
    stylized_solution(model, rho, outcome.buyer, outcome.seller, scenarios)
}
