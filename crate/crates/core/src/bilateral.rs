//! Bilateral cash-settled call option between the wind producer (buyer) and
//! the peaker (seller) of the stylized example.
//!
//! The seller leads by posting an option price `q` and strike `K`; the buyer
//! follows with a volume in `[0, sqrt(3) sigma]`. All closed forms assume the
//! stylized two-level spot price (`1/rho` with probability one half, else 0).

use thiserror::Error;

use crate::scalar::{pos, Interval, Scalar};
use crate::scenario::UniformScenarioModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TradeError {
    #[error("option price must be finite and nonnegative, got {0}")]
    Price(f64),
    #[error("strike must be finite and nonnegative, got {0}")]
    Strike(f64),
    #[error("volume must be finite and nonnegative, got {0}")]
    Volume(f64),
    #[error("volume {volume} exceeds cap {cap}")]
    VolumeCap { volume: f64, cap: f64 },
}

/// An option contract: price per unit, strike ($/MWh) and volume (MW).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeTriple<T> {
    pub price: T,
    pub strike: T,
    pub volume: T,
}

impl<T: Scalar> TradeTriple<T> {
    pub fn new(price: T, strike: T, volume: T) -> Result<Self, TradeError> {
        let bad = |x: T| !x.is_finite() || x < T::zero();
        if bad(price) {
            return Err(TradeError::Price(price.to_f64().unwrap_or(f64::NAN)));
        }
        if bad(strike) {
            return Err(TradeError::Strike(strike.to_f64().unwrap_or(f64::NAN)));
        }
        if bad(volume) {
            return Err(TradeError::Volume(volume.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self {
            price,
            strike,
            volume,
        })
    }

    /// Like [`TradeTriple::new`] and additionally enforces `volume <= cap`.
    pub fn capped(price: T, strike: T, volume: T, cap: T) -> Result<Self, TradeError> {
        let t = Self::new(price, strike, volume)?;
        if volume > cap {
            return Err(TradeError::VolumeCap {
                volume: volume.to_f64().unwrap_or(f64::NAN),
                cap: cap.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(t)
    }

    pub fn no_trade() -> Self {
        Self {
            price: T::zero(),
            strike: T::zero(),
            volume: T::zero(),
        }
    }

    /// Real-time payoff per unit volume, `(spot - K)+`.
    pub fn payoff_per_unit(&self, spot: T) -> T {
        pos(spot - self.strike)
    }
}

/// Per-scenario option cash flows `(buyer, seller)`:
/// the buyer pays `q * volume` and receives `(spot - K)+ * volume`.
pub fn option_cashflows<T: Scalar>(spot: T, trade: &TradeTriple<T>) -> (T, T) {
    let buyer = -trade.price * trade.volume + trade.payoff_per_unit(spot) * trade.volume;
    (buyer, -buyer)
}

/// Which side of an option trade a participant is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Buyer,
    Seller,
}

impl Side {
    pub fn label(&self) -> &'static str {
        match self {
            Side::Buyer => "buyer",
            Side::Seller => "seller",
        }
    }

    /// Option cash flow to this side in one scenario. Sellers are charged as
    /// if the full volume is exercised against them.
    pub fn option_flow<T: Scalar>(&self, spot: T, trade: &TradeTriple<T>) -> T {
        let (buyer, seller) = option_cashflows(spot, trade);
        match self {
            Side::Buyer => buyer,
            Side::Seller => seller,
        }
    }
}

/// Best-response set of the buyer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BestResponse<T> {
    /// `{0}`
    Zero,
    /// `{cap}`
    Full(T),
    /// `[0, cap]`: indifferent.
    Interval(T),
}

impl<T: Scalar> BestResponse<T> {
    pub fn contains(&self, volume: T) -> bool {
        match *self {
            BestResponse::Zero => volume == T::zero(),
            BestResponse::Full(cap) => volume == cap,
            BestResponse::Interval(cap) => volume >= T::zero() && volume <= cap,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            BestResponse::Zero => "zero",
            BestResponse::Full(_) => "full",
            BestResponse::Interval(_) => "interval",
        }
    }

    /// The volume reported as canonical: `cap` for full and interval sets.
    pub fn representative(&self) -> T {
        match *self {
            BestResponse::Zero => T::zero(),
            BestResponse::Full(cap) | BestResponse::Interval(cap) => cap,
        }
    }
}

/// Stackelberg equilibrium class of a posted `(q, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumClass {
    /// `2q + K > 1/rho`: the buyer never trades.
    N1,
    /// `2q + K = 1/rho`: nontrivial trades at zero expected gain to both.
    N2,
    /// The seller would lose in expectation and deviates.
    None,
}

impl EquilibriumClass {
    pub fn label(&self) -> &'static str {
        match self {
            EquilibriumClass::N1 => "N1",
            EquilibriumClass::N2 => "N2",
            EquilibriumClass::None => "none",
        }
    }
}

/// Default relative tolerance on `2q + K = 1/rho`.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// The bilateral game on the stylized market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralGame<T> {
    pub model: UniformScenarioModel<T>,
    pub rho: T,
}

impl<T: Scalar> BilateralGame<T> {
    pub fn new(model: UniformScenarioModel<T>, rho: T) -> Self {
        assert!(rho > T::zero() && rho <= T::one(), "rho must lie in (0, 1]");
        Self { model, rho }
    }

    /// Option volume cap, `sqrt(3) sigma`.
    pub fn cap(&self) -> T {
        self.model.half_width()
    }

    pub fn peak_price(&self) -> T {
        T::one() / self.rho
    }

    /// Absolute tolerance used for `2q + K = 1/rho`.
    pub fn default_tol(&self) -> T {
        T::lit(DEFAULT_REL_TOL) * self.peak_price()
    }

    /// Expected payoff of the buyer from the option alone.
    pub fn expected_buyer_option_payoff(&self, trade: &TradeTriple<T>) -> T {
        let peak = self.peak_price();
        if trade.strike > peak {
            -trade.price * trade.volume
        } else {
            -(trade.volume / T::lit(2.0)) * (T::lit(2.0) * trade.price + trade.strike - peak)
        }
    }

    /// Zero-sum mirror of [`Self::expected_buyer_option_payoff`].
    pub fn expected_seller_option_payoff(&self, trade: &TradeTriple<T>) -> T {
        -self.expected_buyer_option_payoff(trade)
    }

    pub fn best_response(&self, price: T, strike: T, tol: T) -> BestResponse<T> {
        let peak = self.peak_price();
        if strike > peak {
            return BestResponse::Zero;
        }
        let gap = T::lit(2.0) * price + strike - peak;
        if gap.abs() <= tol {
            BestResponse::Interval(self.cap())
        } else if gap < T::zero() {
            BestResponse::Full(self.cap())
        } else {
            BestResponse::Zero
        }
    }

    pub fn classify(&self, price: T, strike: T, tol: T) -> EquilibriumClass {
        classify_equilibrium(price, strike, self.rho, tol)
    }

    /// Scenarios with a negative total payment to the buyer after trading at
    /// an N2 point with full volume.
    pub fn negative_region_with_option(&self, price: T) -> Option<Interval<T>> {
        negative_region_with_option(price, self.model.mu(), self.model.sigma(), self.rho)
    }
}

/// `|2q + K - 1/rho| <= tol` gives N2; a positive gap gives N1; otherwise the
/// seller would rather deviate.
pub fn classify_equilibrium<T: Scalar>(price: T, strike: T, rho: T, tol: T) -> EquilibriumClass {
    let gap = T::lit(2.0) * price + strike - T::one() / rho;
    if gap.abs() <= tol {
        EquilibriumClass::N2
    } else if gap > tol {
        EquilibriumClass::N1
    } else {
        EquilibriumClass::None
    }
}

/// `var[Pi] - var[pi] = 2 cov(pi, V) + var[V]` at an N2 point with volume
/// `sqrt(3) sigma`, which evaluates to `-(3/2) q K sigma^2`.
///
/// Note the dependence on `q`: the shorter form `-3 K sigma^2 / 2` is wrong.
/// At `q = 0.5, K = 1, sigma = 0.2, rho = 0.5` it would exceed the unhedged
/// variance `0.05` and make the hedged variance negative.
pub fn variance_delta_analytic<T: Scalar>(price: T, strike: T, sigma: T) -> T {
    -T::lit(1.5) * price * strike * sigma * sigma
}

/// Unhedged variance of the wind payment, `5 sigma^2 / (16 rho^2)`.
pub fn wind_payment_variance<T: Scalar>(sigma: T, rho: T) -> T {
    T::lit(5.0) * sigma * sigma / (T::lit(16.0) * rho * rho)
}

/// `[mu - sqrt(3) sigma, mu (1 - rho) - rho q sqrt(3) sigma)`, or `None` when
/// empty.
pub fn negative_region_with_option<T: Scalar>(
    price: T,
    mu: T,
    sigma: T,
    rho: T,
) -> Option<Interval<T>> {
    let a = T::sqrt3() * sigma;
    let lo = mu - a;
    let hi = mu * (T::one() - rho) - rho * price * a;
    (hi > lo).then(|| Interval::new(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::loss_region;

    fn game(sigma: f64) -> BilateralGame<f64> {
        BilateralGame::new(UniformScenarioModel::new(1.0, sigma).unwrap(), 0.5)
    }

    #[test]
    fn cashflow_examples() {
        let t = TradeTriple::<f64>::new(0.5, 1.0, 0.346410).unwrap();
        let (b, s) = option_cashflows(2.0, &t);
        assert!((b - 0.173205).abs() < 1e-12);
        assert_eq!(b + s, 0.0);
        let (b, s) = option_cashflows(0.0, &t);
        assert!((b + 0.173205).abs() < 1e-12);
        assert!((s - 0.173205).abs() < 1e-12);
        assert_eq!(option_cashflows(2.0, &TradeTriple::new(0.5, 1.0, 0.0).unwrap()), (0.0, 0.0));
    }

    #[test]
    fn expected_payoffs() {
        let g = game(0.2);
        let t = TradeTriple::new(0.4, 1.0, 0.3).unwrap();
        assert!((g.expected_buyer_option_payoff(&t) - 0.03).abs() < 1e-12);
        assert!((g.expected_seller_option_payoff(&t) + 0.03).abs() < 1e-12);
        let t = TradeTriple::new(0.5, 1.0, 0.17).unwrap();
        assert_eq!(g.expected_buyer_option_payoff(&t), 0.0);
        let t = TradeTriple::new(0.1, 3.0, 0.2).unwrap();
        assert!((g.expected_buyer_option_payoff(&t) + 0.02).abs() < 1e-12);
        assert!((g.expected_seller_option_payoff(&t) - 0.02).abs() < 1e-12);
        let t = TradeTriple::new(0.1, 1.0, 0.0).unwrap();
        assert_eq!(g.expected_seller_option_payoff(&t), 0.0);
    }

    #[test]
    fn best_response_trichotomy() {
        let g = game(0.2);
        let tol = g.default_tol();
        let cap = 3f64.sqrt() * 0.2;
        assert_eq!(g.best_response(0.4, 1.0, tol), BestResponse::Full(cap));
        assert_eq!(g.best_response(0.5, 1.0, tol), BestResponse::Interval(cap));
        assert_eq!(g.best_response(0.6, 1.0, tol), BestResponse::Zero);
        assert_eq!(g.best_response(0.0, 2.5, tol), BestResponse::Zero);
    }

    #[test]
    fn equilibrium_classes() {
        let tol = 1e-9 * 2.0;
        assert_eq!(classify_equilibrium(0.5, 1.0, 0.5, tol), EquilibriumClass::N2);
        assert_eq!(classify_equilibrium(1.2, 1.0, 0.5, tol), EquilibriumClass::N1);
        assert_eq!(classify_equilibrium(0.1, 1.0, 0.5, tol), EquilibriumClass::None);
    }

    #[test]
    fn analytic_variance_delta() {
        assert!((variance_delta_analytic(0.5_f64, 1.0, 0.2) + 0.03).abs() < 1e-15);
        assert_eq!(variance_delta_analytic(0.0_f64, 2.0, 0.2), 0.0);
        assert!((variance_delta_analytic(0.5_f64, 1.0, 0.4) + 0.12).abs() < 1e-15);
        assert!((wind_payment_variance(0.2_f64, 0.5) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn negative_regions() {
        let r = negative_region_with_option(0.5_f64, 1.0, 0.4, 0.5).unwrap();
        assert!((r.lo - 0.307180).abs() < 1e-6);
        assert!((r.hi - 0.326795).abs() < 1e-6);
        let base = loss_region(1.0, 0.4, 0.5).unwrap();
        assert!(r.is_subset_of(&base) && r.hi < base.hi);
        assert_eq!(negative_region_with_option(0.0, 1.0, 0.4, 0.5), Some(base));
        assert!(negative_region_with_option(0.5_f64, 1.0, 0.2, 0.5).is_none());
    }

    #[test]
    fn trade_validation() {
        assert!(TradeTriple::new(-0.1, 1.0, 0.1).is_err());
        assert!(TradeTriple::capped(0.1, 1.0, 0.5, 0.34).is_err());
        assert!(TradeTriple::capped(0.1, 1.0, 0.3, 0.34).is_ok());
    }
}
