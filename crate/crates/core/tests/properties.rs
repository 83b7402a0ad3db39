use std::collections::BTreeMap;

use optmarket::bilateral::{option_cashflows, BestResponse, BilateralGame, Side, TradeTriple};
use optmarket::clearing::{
    settle_day_ahead, settle_real_time, ClearedTrade, ClearingSolution, ExerciseAllocation,
};
use optmarket::dispatch::{day_ahead, loss_region, real_time, stylized_instance};
use optmarket::risk::{cvar, cvar_accepts, RiskLevel, WeightedLossSample};
use optmarket::scenario::{discretize, ScenarioPoint, ScenarioSet, UniformScenarioModel};
use proptest::prelude::*;

fn sample_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-10.0..10.0f64, 0.05..1.0f64), 1..16).prop_map(|raw| {
        let total: f64 = raw.iter().map(|e| e.1).sum();
        raw.into_iter().map(|(l, w)| (l, w / total)).collect()
    })
}

fn renormalized(entries: &[(f64, f64)]) -> WeightedLossSample<f64> {
    // Tiny drift from the division above is absorbed by the last weight.
    let mut e = entries.to_vec();
    let head: f64 = e[..e.len() - 1].iter().map(|x| x.1).sum();
    let last = e.len() - 1;
    e[last].1 = 1.0 - head;
    WeightedLossSample::new(e).unwrap()
}

proptest! {
    #[test]
    fn expectation_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64, n in 1usize..200) {
        let m = UniformScenarioModel::new(1.0, 0.3).unwrap();
        let s = discretize(&m, n).unwrap();
        let lhs = s.expect(|w| a * w * w + b * w);
        let rhs = a * s.expect(|w| w * w) + b * s.expect(|w| w);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn cvar_axioms(entries in sample_strategy(), c in -3.0..3.0f64, lambda in 0.1..4.0f64,
                   shift in prop::collection::vec(0.0..2.0f64, 16), a in 0.0..0.99f64, b in 0.0..0.99f64) {
        let s = renormalized(&entries);
        let lv = RiskLevel::new(a).unwrap();
        let base = cvar(&s, lv).value;
        let shifted = WeightedLossSample::new(s.entries().iter().map(|&(l, w)| (l + c, w)).collect()).unwrap();
        prop_assert!((cvar(&shifted, lv).value - (base + c)).abs() < 1e-10);
        let scaled = WeightedLossSample::new(s.entries().iter().map(|&(l, w)| (lambda * l, w)).collect()).unwrap();
        prop_assert!((cvar(&scaled, lv).value - lambda * base).abs() < 1e-10 * lambda.max(1.0) * 10.0);
        let worse = WeightedLossSample::new(
            s.entries().iter().zip(&shift).map(|(&(l, w), &d)| (l + d, w)).collect()).unwrap();
        prop_assert!(cvar(&worse, lv).value >= base - 1e-10);
        prop_assert!(base >= s.mean() - 1e-10);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(cvar(&s, RiskLevel::new(lo).unwrap()).value
            <= cvar(&s, RiskLevel::new(hi).unwrap()).value + 1e-10);
        prop_assert!((cvar(&s, RiskLevel::neutral()).value - s.mean()).abs() < 1e-10);
        let c = cvar(&s, lv);
        prop_assert!((c.value - c.ru_value).abs() < 1e-10);
    }

    #[test]
    fn option_is_zero_sum(spot in 0.0..5.0f64, q in 0.0..3.0f64, k in 0.0..3.0f64, d in 0.0..1.0f64) {
        let t = TradeTriple::new(q, k, d).unwrap();
        let (b, s) = option_cashflows(spot, &t);
        prop_assert_eq!(b + s, 0.0);
    }

    #[test]
    fn best_response_is_optimal(q in 0.0..2.0f64, k in 0.0..3.0f64, sigma in 0.05..0.5f64) {
        let g = BilateralGame::new(UniformScenarioModel::new(1.0, sigma).unwrap(), 0.5);
        let br = g.best_response(q, k, g.default_tol());
        let value = |d: f64| g.expected_buyer_option_payoff(&TradeTriple::new(q, k, d).unwrap());
        let chosen = value(br.representative());
        for i in 0..=20 {
            let d = g.cap() * i as f64 / 20.0;
            prop_assert!(chosen >= value(d) - 1e-9);
            if matches!(br, BestResponse::Interval(_)) {
                prop_assert!((value(d) - chosen).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn option_shrinks_loss_region(q in 0.001..1.0f64, sigma in 0.05..0.57f64, rho in 0.1..1.0f64) {
        let game = BilateralGame::new(UniformScenarioModel::new(1.0, sigma).unwrap(), rho);
        if let Some(with) = game.negative_region_with_option(q) {
            let without = loss_region(1.0, sigma, rho).expect("nonempty when the option region is");
            prop_assert!(with.is_subset_of(&without));
            prop_assert!(with.length() < without.length());
        }
    }

    #[test]
    fn real_time_balances_energy(omega_frac in 0.0..1.0f64, sigma in 0.05..0.5f64, rho in 0.2..1.0f64) {
        let m = UniformScenarioModel::new(1.0, sigma).unwrap();
        let inst = stylized_instance(2.0, m, rho, &[]).unwrap();
        let fwd = day_ahead(&inst).unwrap();
        let (lo, hi) = m.support();
        let omega = lo + (hi - lo) * omega_frac;
        let rt = real_time(&inst, &fwd, omega).unwrap();
        let total: f64 = rt.quantities.values().sum();
        prop_assert!((total - 2.0).abs() < 1e-9);
        prop_assert!(rt.price == 0.0 || (rt.price - 1.0 / rho).abs() < 1e-12);
    }

    #[test]
    fn ledgers_conserve_cash(
        buyers in prop::collection::vec((0.01..2.0f64, 0.01..2.0f64, 0.01..1.0f64), 1..4),
        sellers in prop::collection::vec((0.01..2.0f64, 0.01..2.0f64, 0.01..1.0f64), 1..4),
        spot in prop::collection::vec(0.0..3.0f64, 4),
    ) {
        let m = UniformScenarioModel::new(1.0, 0.2).unwrap();
        let s = discretize(&m, 4).unwrap();
        let total: f64 = buyers.iter().map(|b| b.2).sum();
        let seller_raw: f64 = sellers.iter().map(|x| x.2).sum();
        let mut trades = BTreeMap::new();
        for (i, &(q, k, d)) in buyers.iter().enumerate() {
            trades.insert(format!("r{i}"), ClearedTrade { side: Side::Buyer, trade: TradeTriple::new(q, k, d).unwrap() });
        }
        for (i, &(q, k, d)) in sellers.iter().enumerate() {
            let v = d * total / seller_raw;
            trades.insert(format!("g{i}"), ClearedTrade { side: Side::Seller, trade: TradeTriple::new(q, k, v).unwrap() });
        }
        let sol = ClearingSolution::assemble(trades, &spot, &s, &ExerciseAllocation::Greedy).unwrap();
        prop_assert!(settle_day_ahead(&sol).total().abs() < 1e-9);
        for k in 0..spot.len() {
            let rt = settle_real_time(&sol, k);
            prop_assert!(rt.total().abs() < 1e-9);
            let mm = settle_day_ahead(&sol).market_maker() + rt.market_maker();
            prop_assert!((mm - sol.ms()[k]).abs() < 1e-9);
            for (id, d) in sol.exercise() {
                let t = sol.trade(id).unwrap();
                prop_assert!(d[k] >= 0.0 && d[k] <= t.volume + 1e-9);
                prop_assert!(t.payoff_per_unit(spot[k]) * d[k] <= t.payoff_per_unit(spot[k]) * t.volume + 1e-12);
            }
        }
    }
}

/// Buyer acceptance only grows with risk aversion on the stylized example.
#[test]
fn buyer_sets_nest_in_alpha() {
    let m = UniformScenarioModel::new(1.0, 0.4).unwrap();
    let inst = stylized_instance(2.0, m, 0.5, &[]).unwrap();
    let s = discretize(&m, 400).unwrap();
    let view = optmarket::market::MarketView::from_instance(&inst, s.clone()).unwrap();
    let pi = view.payments_of("W").unwrap();
    let levels = [0.0, 0.3, 0.6, 0.9];
    let volume = 2.0 * 3f64.sqrt() * 0.4 / 5.0;
    for i in 0..30 {
        for j in 0..30 {
            let q = 0.05 + 1.5 * i as f64 / 29.0;
            let k = 0.05 + 2.0 * j as f64 / 29.0;
            let t = TradeTriple::new(q, k, volume).unwrap();
            let verdicts: Vec<bool> = levels
                .iter()
                .map(|&a| cvar_accepts(&t, Side::Buyer, RiskLevel::new(a).unwrap(), pi, view.spot(), &s).unwrap())
                .collect();
            for w in verdicts.windows(2) {
                assert!(!w[0] || w[1], "nesting fails at q={q}, K={k}: {verdicts:?}");
            }
        }
    }
}

#[test]
fn zero_volume_always_accepted() {
    let m = UniformScenarioModel::new(1.0, 0.4).unwrap();
    let s = ScenarioSet::from_points(
        &m,
        vec![
            ScenarioPoint { omega: 0.6, weight: 0.5 },
            ScenarioPoint { omega: 1.3, weight: 0.5 },
        ],
    )
    .unwrap();
    let pi = [0.2, 1.0];
    let spot = [2.0, 0.0];
    let t = TradeTriple::new(1.5, 0.1, 0.0).unwrap();
    for a in [0.0, 0.5, 0.9] {
        for side in [Side::Buyer, Side::Seller] {
            assert!(cvar_accepts(&t, side, RiskLevel::new(a).unwrap(), &pi, &spot, &s).unwrap());
        }
    }
}
