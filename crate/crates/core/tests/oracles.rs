//! Independent brute-force checks of the closed forms and solvers.

use optmarket::analytics::{
    loss_probability, mean_standard_error, moments, simulate_payments, variance_standard_error, OptionOverlay,
};
use optmarket::bilateral::{Side, TradeTriple};
use optmarket::clearing::{
    clear, clear_example_analytic, risk_neutral_acceptability, AllowableBox, ClearingObjective,
    ClearingProblem, ExerciseAllocation, ParticipantBid,
};
use optmarket::dispatch::{
    day_ahead, loss_region, stylized_instance, CostBlock, CostCurve, DispatchableGen, Limit, MarketInstance,
};
use optmarket::market::MarketView;
use optmarket::risk::{
    boundary_trace, cvar, cvar_accepts, rockafellar_uryasev_objective, Boundary, CvarCriterion,
    RiskLevel, WeightedLossSample, TRACE_TOL,
};
use optmarket::scenario::{discretize, sample, UniformScenarioModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn block_cost(blocks: &[(f64, f64)], x: f64) -> f64 {
    let mut left = x;
    let mut cost = 0.0;
    for &(cap, mc) in blocks {
        let take = left.min(cap);
        cost += take * mc;
        left -= take;
    }
    cost
}

fn random_blocks(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = rng.gen_range(1..=4);
    let mut mc = rng.gen_range(0.0..2.0);
    (0..n)
        .map(|_| {
            mc += rng.gen_range(0.0..1.5);
            (0.05 * rng.gen_range(1..=10) as f64, mc)
        })
        .collect()
}

#[test]
fn dispatch_matches_grid_search_and_difference_quotient() {
    let model = UniformScenarioModel::<f64>::new(1.0, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let units: Vec<Vec<(f64, f64)>> = (0..rng.gen_range(1..=3)).map(|_| random_blocks(&mut rng)).collect();
        let total: f64 = units.iter().flatten().map(|b| b.0).sum();
        let steps = ((total.min(1.5) - 0.05) / 0.01).floor() as i64;
        let demand = 0.01 * rng.gen_range(1..=steps.max(1)) as f64;
        let gens = units
            .iter()
            .enumerate()
            .map(|(i, bl)| DispatchableGen {
                id: format!("g{i}"),
                cap: Limit::Unbounded,
                ramp: Limit::Unbounded,
                cost: CostCurve::new(
                    bl.iter()
                        .map(|&(c, mc)| CostBlock { capacity: Limit::Finite(c), marginal_cost: mc })
                        .collect(),
                )
                .unwrap(),
            })
            .collect();
        let inst = MarketInstance::new(demand, gens, vec![], model).unwrap();
        let fwd = day_ahead(&inst).unwrap();

        let caps: Vec<f64> = units.iter().map(|b| b.iter().map(|x| x.0).sum()).collect();
        let grid = |c: f64| (0..=((c / 0.01).round() as usize)).map(|i| i as f64 * 0.01);
        let mut best = f64::INFINITY;
        let last = units.len() - 1;
        let mut visit = |xs: &[f64]| {
            let rest = demand - xs.iter().sum::<f64>();
            if rest < -1e-12 || rest > caps[last] + 1e-12 {
                return;
            }
            let mut c = block_cost(&units[last], rest.max(0.0));
            for (i, &x) in xs.iter().enumerate() {
                c += block_cost(&units[i], x);
            }
            best = best.min(c);
        };
        match last {
            0 => visit(&[]),
            1 => grid(caps[0]).for_each(|a| visit(&[a])),
            _ => grid(caps[0]).for_each(|a| grid(caps[1]).for_each(|b| visit(&[a, b]))),
        }
        assert!((fwd.cost - best).abs() < 1e-3, "case {case}: {} vs {best}", fwd.cost);

        let h = 1e-6;
        let bumped = day_ahead(&inst.with_demand(demand + h).unwrap()).unwrap();
        let fd = (bumped.cost - fwd.cost) / h;
        assert!((fd - fwd.price).abs() < 1e-4, "case {case}: price {} vs {fd}", fwd.price);
    }
}

#[test]
fn monte_carlo_agrees_with_quadrature() {
    let model = UniformScenarioModel::<f64>::new(1.0, 0.2).unwrap();
    let inst = stylized_instance(2.0, model, 0.5, &[]).unwrap();
    let quad = simulate_payments(&inst, OptionOverlay::None, &discretize(&model, 100_000).unwrap()).unwrap();
    for seed in 1..=3 {
        let mc = simulate_payments(&inst, OptionOverlay::None, &sample(&model, 100_000, seed).unwrap()).unwrap();
        for id in ["W", "P"] {
            let (q, m) = (&quad[id], &mc[id]);
            assert!((q.mean() - m.mean()).abs() < 4.0 * mean_standard_error(m), "{id} seed {seed}");
            assert!((q.variance() - m.variance()).abs() < 4.0 * variance_standard_error(m), "{id} seed {seed}");
        }
    }
}

#[test]
fn n2_trade_preserves_mean_and_cuts_variance() {
    let model = UniformScenarioModel::<f64>::new(1.0, 0.2).unwrap();
    let inst = stylized_instance(2.0, model, 0.5, &[]).unwrap();
    let s = sample(&model, 100_000, 5).unwrap();
    let trade = TradeTriple::new(0.5, 1.0, model.half_width()).unwrap();
    let base = simulate_payments(&inst, OptionOverlay::None, &s).unwrap();
    let hedged =
        simulate_payments(&inst, OptionOverlay::Bilateral { buyer: "W", seller: "P", trade }, &s).unwrap();
    let se = mean_standard_error(&base["W"]) + mean_standard_error(&hedged["W"]);
    assert!((base["W"].mean() - hedged["W"].mean()).abs() < 4.0 * se);
    let m0 = moments(&[&base["W"], &base["P"]]).unwrap();
    let m1 = moments(&[&hedged["W"], &hedged["P"]]).unwrap();
    for i in 0..2 {
        assert!(m1.variance(i) < m0.variance(i));
    }
}

#[test]
fn sorted_tail_matches_ru_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.gen_range(1..10);
        let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(0.1..1.0))).collect();
        let tw: f64 = raw.iter().map(|e| e.1).sum();
        let mut entries: Vec<(f64, f64)> = raw.iter().map(|&(l, w)| (l, w / tw)).collect();
        let head: f64 = entries[..n - 1].iter().map(|e| e.1).sum();
        entries[n - 1].1 = 1.0 - head;
        let s = WeightedLossSample::new(entries.clone()).unwrap();
        let alpha = rng.gen_range(0.0..0.95);
        let lv = RiskLevel::new(alpha).unwrap();
        let lo = entries.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        let hi = entries.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        let step = ((hi - lo) * 1e-4).max(1e-6);
        let mut best = f64::INFINITY;
        let mut t = lo;
        while t <= hi + step {
            best = best.min(rockafellar_uryasev_objective(&s, lv, t));
            t += step;
        }
        assert!((cvar(&s, lv).value - best).abs() < 1e-4);
    }
}

fn fig2_view() -> (UniformScenarioModel<f64>, MarketView<f64>) {
    let model = UniformScenarioModel::<f64>::new(1.0, 0.4).unwrap();
    let inst = stylized_instance(2.0, model, 0.5, &[]).unwrap();
    (model, MarketView::from_instance(&inst, discretize(&model, 2000).unwrap()).unwrap())
}

#[test]
fn risk_aversion_admits_dearer_hedge() {
    let (model, view) = fig2_view();
    let pi = view.payments_of("W").unwrap();
    let t = TradeTriple::new(0.52, 1.0, model.half_width()).unwrap();
    let at = |a: f64| cvar_accepts(&t, Side::Buyer, RiskLevel::new(a).unwrap(), pi, view.spot(), view.scenarios()).unwrap();
    assert!(!at(0.0));
    assert!(at(0.9));
}

#[test]
fn neutral_frontier_is_half_space_line() {
    let (_, view) = fig2_view();
    for (side, id) in [(Side::Buyer, "W"), (Side::Seller, "P")] {
        let c = CvarCriterion::new(
            side,
            RiskLevel::neutral(),
            view.payments_of(id).unwrap().to_vec(),
            view.spot().to_vec(),
            view.scenarios().clone(),
        )
        .unwrap();
        let ks: Vec<f64> = (1..=19).map(|i| 0.1 * i as f64).collect();
        let pts = boundary_trace(&c, 0.3, &ks, (1e-9, 2.0), TRACE_TOL).unwrap();
        for p in pts {
            match p.boundary {
                Boundary::At(q) => assert!((q - (2.0 - p.strike) / 2.0).abs() < 1e-5, "{side:?} {p:?}"),
                other => panic!("{side:?} at {}: {other:?}", p.strike),
            }
        }
    }
}

#[test]
fn centralized_matches_analytic_optimum() {
    let model = UniformScenarioModel::<f64>::new(1.0, 0.2).unwrap();
    let inst = stylized_instance(2.0, model, 0.5, &[]).unwrap();
    let s = discretize(&model, 1000).unwrap();
    let view = MarketView::from_instance(&inst, s.clone()).unwrap();
    let bbox = AllowableBox::stylized(&model, 0.5).unwrap();
    let bid = |id: &str, side| ParticipantBid {
        id: id.into(),
        side,
        acceptability: risk_neutral_acceptability(side, view.spot(), &s, bbox).unwrap(),
    };
    let problem = ClearingProblem::new(
        vec![bid("W", Side::Buyer), bid("P", Side::Seller)],
        s.clone(),
        view.spot().to_vec(),
        ClearingObjective::MaxMs,
        ExerciseAllocation::Greedy,
    )
    .unwrap();
    let sol = clear(&problem).unwrap();
    sol.verify(&problem).unwrap();
    let w = sol.trade("W").unwrap();
    let p = sol.trade("P").unwrap();
    let analytic = clear_example_analytic(&model, 0.5, (w.price, p.price), &s).unwrap();
    assert!((sol.expected_ms() - analytic.expected_ms()).abs() < 1e-9);
    for (a, b) in sol.ms().iter().zip(analytic.ms()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn pipeline_runs_in_single_precision() {
    let model = UniformScenarioModel::<f32>::new(1.0, 0.2).unwrap();
    let inst = stylized_instance(2.0f32, model, 0.5, &[]).unwrap();
    let s = discretize(&model, 1000).unwrap();
    let pays = simulate_payments(&inst, OptionOverlay::None, &s).unwrap();
    assert!((pays["W"].variance() - 0.05).abs() < 1e-3);
}

#[test]
fn loss_probability_is_interval_measure() {
    for sigma in [0.3, 0.4, 0.5] {
        let model = UniformScenarioModel::<f64>::new(1.0, sigma).unwrap();
        let inst = stylized_instance(2.0, model, 0.5, &[]).unwrap();
        let pays = simulate_payments(&inst, OptionOverlay::None, &discretize(&model, 100_000).unwrap()).unwrap();
        let region = loss_region(1.0, sigma, 0.5).unwrap();
        let exact = region.length() / (2.0 * model.half_width());
        assert!((loss_probability(&pays["W"]) - exact).abs() < 1e-4, "sigma {sigma}");
    }
}
