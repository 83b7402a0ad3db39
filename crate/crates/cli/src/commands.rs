//! Subcommand implementations. Each returns a human-readable report and
//! writes its CSV artifacts into the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use optmarket::analytics::{
    loss_probability, moments, simulate_payments, variance_decomposition, OptionOverlay, PaymentSample,
};
use optmarket::bilateral::{variance_delta_analytic, BestResponse, BilateralGame, EquilibriumClass, Side, TradeTriple};
use optmarket::clearing::{
    clear, cvar_acceptability, newton_solution, newton_zero_ms, risk_neutral_acceptability, settle_day_ahead,
    settle_real_time, AllowableBox, ClearingObjective, ClearingProblem, ClearingSolution, ExerciseAllocation,
    ParticipantBid, EPSILON,
};
use optmarket::dispatch::{day_ahead, payments, real_time, PEAKER_ID, WIND_ID};
use optmarket::market::MarketView;
use optmarket::risk::{boundary_trace, Boundary, CvarCriterion, RiskLevel, TRACE_TOL};
use optmarket::scenario::ScenarioSet;

use crate::config::{AllocationMode, LoadedConfig, ObjectiveConfig, OptionMode, SideConfig};
use crate::error::CliError;
use crate::output::{num, CsvOut, RunHeader};

/// Loaded config plus the resolved output directory.
pub struct Context {
    pub loaded: LoadedConfig,
    pub out_dir: PathBuf,
}

impl Context {
    fn header(&self, seed: Option<u64>) -> RunHeader {
        RunHeader {
            config_sha256: self.loaded.sha256.clone(),
            seed,
        }
    }

    fn config(&self) -> &crate::config::ExperimentConfig {
        &self.loaded.config
    }

    fn run_scenarios(&self) -> Result<ScenarioSet<f64>, CliError> {
        let run = &self.config().run;
        self.config().scenarios(run.scenarios, run.seed)
    }
}

pub fn cmd_dispatch(ctx: &Context, omega: Option<f64>) -> Result<String, CliError> {
    let inst = ctx.config().instance()?;
    let fwd = day_ahead(&inst)?;
    let header = ctx.header(None);
    let mut report = String::new();
    let mut f = CsvOut::create(&ctx.out_dir, "forward.csv", &header, &["id", "X", "P_star"])?;
    for (id, x) in &fwd.quantities {
        f.row([id.clone(), num(*x), num(fwd.price)])?;
    }
    f.finish()?;
    writeln!(report, "forward price P* = {}", num(fwd.price)).unwrap();
    for (id, x) in &fwd.quantities {
        writeln!(report, "  X[{id}] = {}", num(*x)).unwrap();
    }
    if let Some(omega) = omega {
        let rt = real_time(&inst, &fwd, omega)?;
        let settlement = payments(&inst, &fwd, &rt)?;
        let mut f = CsvOut::create(&ctx.out_dir, "realtime.csv", &header, &["id", "x", "p", "payment"])?;
        for rec in &settlement.records {
            f.row([rec.id.clone(), num(rt.quantities[&rec.id]), num(rt.price), num(rec.total)])?;
        }
        f.finish()?;
        writeln!(report, "spot price at omega = {}: {}", num(omega), num(rt.price)).unwrap();
    }
    Ok(report)
}

pub fn cmd_bilateral(ctx: &Context, q: Option<f64>, k: Option<f64>, delta: Option<f64>) -> Result<String, CliError> {
    let cfg = ctx.config();
    let rho = cfg
        .rho()
        .ok_or_else(|| CliError::Config("bilateral analysis needs the stylized market".into()))?;
    let model = cfg.model()?;
    let preset = cfg.option.bilateral.as_ref();
    let q = q
        .or(preset.map(|b| b.price))
        .ok_or_else(|| CliError::Config("option price missing: pass --q or set option.bilateral.price".into()))?;
    let k = k
        .or(preset.map(|b| b.strike))
        .ok_or_else(|| CliError::Config("strike missing: pass --k or set option.bilateral.strike".into()))?;
    let game = BilateralGame::new(model, rho);
    let br = game.best_response(q, k, game.default_tol());
    let class = game.classify(q, k, game.default_tol());
    let volume = delta.or(preset.and_then(|b| b.volume_mw)).unwrap_or(match br {
        BestResponse::Zero => 0.0,
        BestResponse::Full(c) | BestResponse::Interval(c) => c,
    });
    let trade = TradeTriple::capped(q, k, volume, game.cap()).map_err(|e| CliError::Config(e.to_string()))?;
    let expected_vw = game.expected_buyer_option_payoff(&trade);
    let at_cap = (volume - game.cap()).abs() <= 1e-12 * game.cap().max(1.0);
    let analytic = (class == EquilibriumClass::N2 && at_cap).then(|| variance_delta_analytic(q, k, model.sigma()));

    let inst = cfg.instance()?;
    let scenarios = ctx.run_scenarios()?;
    let base = simulate_payments(&inst, OptionOverlay::None, &scenarios)?;
    let hedged = simulate_payments(
        &inst,
        OptionOverlay::Bilateral {
            buyer: WIND_ID,
            seller: PEAKER_ID,
            trade,
        },
        &scenarios,
    )?;
    let delta_of = |id: &str| hedged[id].variance() - base[id].variance();
    let (dw, dp) = (delta_of(WIND_ID), delta_of(PEAKER_ID));

    let br_label = match br {
        BestResponse::Zero => "{0}".to_string(),
        BestResponse::Full(c) => format!("{{{}}}", num(c)),
        BestResponse::Interval(c) => format!("[0, {}]", num(c)),
    };
    let mut f = CsvOut::create(
        &ctx.out_dir,
        "bilateral.csv",
        &ctx.header(cfg.run.seed),
        &[
            "q",
            "K",
            "delta",
            "best_response",
            "equilibrium",
            "expected_v_w",
            "var_delta_analytic",
            "var_delta_w",
            "var_delta_p",
        ],
    )?;
    f.row([
        num(q),
        num(k),
        num(volume),
        br_label.clone(),
        class.label().to_string(),
        num(expected_vw),
        analytic.map(num).unwrap_or_default(),
        num(dw),
        num(dp),
    ])?;
    f.finish()?;

    let mut report = String::new();
    writeln!(report, "best response: {br_label} ({})", br.label()).unwrap();
    writeln!(report, "equilibrium class: {}", class.label()).unwrap();
    writeln!(report, "E[V_W] = {}", num(expected_vw)).unwrap();
    match analytic {
        Some(a) => writeln!(report, "analytic variance delta: {}", num(a)).unwrap(),
        None => writeln!(report, "analytic variance delta: n/a (needs an N2 trade at full volume)").unwrap(),
    }
    writeln!(report, "simulated variance delta: W {}, P {}", num(dw), num(dp)).unwrap();
    Ok(report)
}

fn side_of(s: SideConfig) -> Side {
    match s {
        SideConfig::Buyer => Side::Buyer,
        SideConfig::Seller => Side::Seller,
    }
}

fn objective_of(o: ObjectiveConfig) -> ClearingObjective {
    match o {
        ObjectiveConfig::MaxMs => ClearingObjective::MaxMs,
        ObjectiveConfig::ZeroMs => ClearingObjective::ZeroMs,
    }
}

/// Outcome of the centralized market on the configured scenarios.
pub struct Clearing {
    pub problem: ClearingProblem<f64>,
    pub solution: ClearingSolution<f64>,
    pub newton_iterations: Option<usize>,
}

pub fn run_clearing(
    ctx: &Context,
    scenarios: &ScenarioSet<f64>,
    mode: Option<ObjectiveConfig>,
) -> Result<Clearing, CliError> {
    let cfg = ctx.config();
    let central = match (&cfg.option.mode, &cfg.option.centralized) {
        (OptionMode::Centralized, Some(c)) => c,
        _ => return Err(CliError::Config("option.mode must be centralized".into())),
    };
    let inst = cfg.instance()?;
    let model = cfg.model()?;
    let view = MarketView::from_instance(&inst, scenarios.clone())?;
    let spot_max = view.spot_levels().last().copied().unwrap_or(0.0);
    let mut bids = Vec::new();
    for (i, b) in central.bids.iter().enumerate() {
        let bbox = match &b.bbox {
            Some(x) => AllowableBox::new(x.q_max, x.k_max, x.delta_max_mw),
            None => AllowableBox::new(spot_max.max(1.0), spot_max.max(1.0), model.half_width()),
        }
        .map_err(|e| CliError::Config(format!("option.centralized.bids[{i}].box: {e}")))?;
        let side = side_of(b.side);
        let acceptability = if b.alpha == 0.0 {
            risk_neutral_acceptability(side, view.spot(), scenarios, bbox)?
        } else {
            let level = RiskLevel::new(b.alpha)
                .map_err(|e| CliError::Config(format!("option.centralized.bids[{i}].alpha: {e}")))?;
            let zeros = vec![0.0; scenarios.len()];
            let pi = view.payments_of(&b.id).unwrap_or(&zeros);
            cvar_acceptability(side, level, pi, view.spot(), scenarios, bbox)?
        };
        bids.push(ParticipantBid {
            id: b.id.clone(),
            side,
            acceptability,
        });
    }
    let allocation = match central.allocation.mode {
        AllocationMode::Greedy => ExerciseAllocation::Greedy,
        AllocationMode::Split => ExerciseAllocation::Split(central.allocation.fractions.clone()),
    };
    let objective = objective_of(mode.unwrap_or(central.objective));
    let problem = ClearingProblem::new(bids, scenarios.clone(), view.spot().to_vec(), objective, allocation)?;
    let mut solution = clear(&problem)?;
    solution.verify(&problem).map_err(CliError::Numerical)?;

    // The stylized two-party market admits the exact zero-surplus system.
    let mut newton_iterations = None;
    let two_party = problem.bids().len() == 2
        && problem.bid(WIND_ID).is_some_and(|b| b.side == Side::Buyer)
        && problem.bid(PEAKER_ID).is_some_and(|b| b.side == Side::Seller)
        && central.bids.iter().all(|b| b.alpha == 0.0)
        && matches!(problem.allocation(), ExerciseAllocation::Greedy);
    if objective == ClearingObjective::ZeroMs && two_party && !solution.is_empty() {
        if let Some(rho) = cfg.rho() {
            let limit = (1.0 / rho - EPSILON) / 2.0;
            let init = |id: &str| solution.trade(id).map(|t| t.price.clamp(EPSILON, limit)).unwrap_or(limit / 2.0);
            let outcome = newton_zero_ms(&model, rho, (init(WIND_ID), init(PEAKER_ID)))?;
            let refined = newton_solution(&model, rho, &outcome, scenarios)?;
            refined.verify(&problem).map_err(CliError::Numerical)?;
            solution = refined;
            newton_iterations = Some(outcome.iterations);
        }
    }
    Ok(Clearing {
        problem,
        solution,
        newton_iterations,
    })
}

pub fn cmd_clear(ctx: &Context, mode: Option<ObjectiveConfig>) -> Result<String, CliError> {
    let scenarios = ctx.run_scenarios()?;
    let Clearing {
        problem,
        solution,
        newton_iterations,
    } = run_clearing(ctx, &scenarios, mode)?;
    let header = ctx.header(ctx.config().run.seed);

    let mut f = CsvOut::create(&ctx.out_dir, "trades.csv", &header, &["id", "side", "q", "K", "delta"])?;
    if solution.is_empty() {
        f.row(["none", "none", "", "", "0"])?;
    }
    for (id, c) in solution.trades() {
        f.row([
            id.clone(),
            c.side.label().to_string(),
            num(c.trade.price),
            num(c.trade.strike),
            num(c.trade.volume),
        ])?;
    }
    f.finish()?;

    let mut f = CsvOut::create(&ctx.out_dir, "exercise.csv", &header, &["seller", "scenario", "delta_exercised"])?;
    for (id, d) in solution.exercise() {
        for (k, v) in d.iter().enumerate() {
            f.row([id.clone(), k.to_string(), num(*v)])?;
        }
    }
    f.finish()?;

    let mut f = CsvOut::create(&ctx.out_dir, "ms.csv", &header, &["scenario", "weight", "ms"])?;
    for (k, (m, w)) in solution.ms().iter().zip(solution.weights()).enumerate() {
        f.row([k.to_string(), num(*w), num(*m)])?;
    }
    f.finish()?;

    let mut f = CsvOut::create(&ctx.out_dir, "ledger.csv", &header, &["stage", "scenario", "party", "amount"])?;
    for e in settle_day_ahead(&solution).entries {
        f.row(["day-ahead".to_string(), String::new(), e.party, num(e.amount)])?;
    }
    if !solution.is_empty() {
        for k in 0..scenarios.len() {
            for e in settle_real_time(&solution, k).entries {
                f.row(["real-time".to_string(), k.to_string(), e.party, num(e.amount)])?;
            }
        }
    }
    f.finish()?;

    let mut report = String::new();
    writeln!(report, "objective: {}", problem.objective().label()).unwrap();
    if solution.is_empty() {
        writeln!(report, "empty clearing: no acceptable trade").unwrap();
    }
    for (id, c) in solution.trades() {
        writeln!(
            report,
            "  {id} ({}): q = {}, K = {}, delta = {}",
            c.side.label(),
            num(c.trade.price),
            num(c.trade.strike),
            num(c.trade.volume)
        )
        .unwrap();
    }
    if let Some(n) = newton_iterations {
        writeln!(report, "Newton iterations: {n}").unwrap();
    }
    writeln!(report, "E[MS] = {}", num(solution.expected_ms())).unwrap();
    Ok(report)
}

pub fn cmd_risk_boundary(
    ctx: &Context,
    side: SideConfig,
    alpha: Option<f64>,
    delta: Option<f64>,
    id: Option<String>,
) -> Result<String, CliError> {
    let cfg = ctx.config();
    let side = side_of(side);
    let id = id.unwrap_or_else(|| match side {
        Side::Buyer => WIND_ID.into(),
        Side::Seller => PEAKER_ID.into(),
    });
    let model = cfg.model()?;
    let inst = cfg.instance()?;
    let scenarios = ctx.run_scenarios()?;
    let view = MarketView::from_instance(&inst, scenarios.clone())?;
    let pi = view
        .payments_of(&id)
        .ok_or_else(|| CliError::Config(format!("participant {id} is not part of the market")))?;
    let alphas = match alpha {
        Some(a) => vec![a],
        None if cfg.risk.alphas.is_empty() => vec![0.0],
        None => cfg.risk.alphas.clone(),
    };
    let delta = delta.or(cfg.risk.delta_cap_mw).unwrap_or(model.half_width());
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(CliError::Config(format!("delta must be finite and nonnegative, got {delta}")));
    }
    let spot_max = view.spot_levels().last().copied().unwrap_or(0.0).max(1.0);
    let strikes: Vec<f64> = match &cfg.risk.k_grid {
        Some(g) if g.count == 1 => vec![g.start],
        Some(g) => (0..g.count)
            .map(|i| g.start + (g.stop - g.start) * i as f64 / (g.count - 1) as f64)
            .collect(),
        None => (1..=20).map(|i| spot_max * i as f64 / 20.0).collect(),
    };
    let bracket = cfg.risk.q_bracket.map(|[a, b]| (a, b)).unwrap_or((EPSILON, spot_max));

    let mut f = CsvOut::create(
        &ctx.out_dir,
        "frontier.csv",
        &ctx.header(cfg.run.seed),
        &["K", "q_boundary", "alpha", "delta", "status"],
    )?;
    let mut report = String::new();
    if delta == 0.0 {
        writeln!(report, "degenerate frontier: delta = 0 leaves payments unchanged, every trade is accepted").unwrap();
    }
    for &a in &alphas {
        let level = RiskLevel::new(a).map_err(|e| CliError::Config(format!("alpha: {e}")))?;
        let criterion = CvarCriterion::new(side, level, pi.to_vec(), view.spot().to_vec(), scenarios.clone())?;
        let points = boundary_trace(&criterion, delta, &strikes, bracket, TRACE_TOL)?;
        let mut bounded = 0;
        for p in &points {
            let (q, status) = match p.boundary {
                Boundary::At(q) => {
                    bounded += 1;
                    (num(q), "boundary")
                }
                Boundary::Unbounded { accepted: true } => ("unbounded".to_string(), "accept-all"),
                Boundary::Unbounded { accepted: false } => ("unbounded".to_string(), "reject-all"),
            };
            f.row([num(p.strike), q, num(a), num(delta), status.to_string()])?;
        }
        writeln!(
            report,
            "alpha {}: {bounded} of {} strikes have a boundary in the bracket",
            num(a),
            points.len()
        )
        .unwrap();
    }
    f.finish()?;
    Ok(report)
}

pub fn cmd_simulate(ctx: &Context, n: Option<usize>, seed: Option<u64>) -> Result<String, CliError> {
    let cfg = ctx.config();
    let n = n.unwrap_or(cfg.run.scenarios);
    let seed = seed.or(cfg.run.seed);
    let scenarios = cfg.scenarios(n, seed)?;
    let inst = cfg.instance()?;
    let base = simulate_payments(&inst, OptionOverlay::None, &scenarios)?;
    let clearing;
    let with_option: Option<BTreeMap<String, PaymentSample<f64>>> = match cfg.option.mode {
        OptionMode::None => None,
        OptionMode::Bilateral => {
            let b = cfg.option.bilateral.as_ref().expect("validated");
            let model = cfg.model()?;
            let volume = b.volume_mw.unwrap_or(model.half_width());
            let trade = TradeTriple::new(b.price, b.strike, volume).map_err(|e| CliError::Config(e.to_string()))?;
            let overlay = OptionOverlay::Bilateral {
                buyer: &b.buyer,
                seller: &b.seller,
                trade,
            };
            Some(simulate_payments(&inst, overlay, &scenarios)?)
        }
        OptionMode::Centralized => {
            clearing = run_clearing(ctx, &scenarios, None)?;
            Some(simulate_payments(&inst, OptionOverlay::Centralized(&clearing.solution), &scenarios)?)
        }
    };
    let samples = with_option.as_ref().unwrap_or(&base);
    let header = ctx.header(seed);

    let mut f = CsvOut::create(&ctx.out_dir, "payments.csv", &header, &["scenario", "weight", "participant", "payment"])?;
    for (id, s) in samples {
        for (k, (w, p)) in s.weights().iter().zip(s.payments()).enumerate() {
            f.row([k.to_string(), num(*w), id.clone(), num(*p)])?;
        }
    }
    f.finish()?;

    let refs: Vec<&PaymentSample<f64>> = samples.values().collect();
    let m = moments(&refs)?;
    let mut f = CsvOut::create(&ctx.out_dir, "moments.csv", &header, &["stat", "participant", "other", "value"])?;
    let mut report = String::new();
    for (i, id) in m.ids.iter().enumerate() {
        f.row(["mean".to_string(), id.clone(), String::new(), num(m.means[i])])?;
        f.row(["variance".to_string(), id.clone(), String::new(), num(m.variance(i))])?;
        for (j, other) in m.ids.iter().enumerate() {
            if j != i {
                f.row(["covariance".to_string(), id.clone(), other.clone(), num(m.covariance[i][j])])?;
            }
        }
        let loss = loss_probability(refs[i]);
        f.row(["loss_probability".to_string(), id.clone(), String::new(), num(loss)])?;
        write!(report, "{id}: mean {}, variance {}, loss probability {}", num(m.means[i]), num(m.variance(i)), num(loss)).unwrap();
        if with_option.is_some() {
            let v = refs[i].difference(&base[id])?;
            let d = variance_decomposition(&base[id], &v)?;
            f.row(["covariance_term".to_string(), id.clone(), String::new(), num(d.covariance_term)])?;
            f.row(["variance_term".to_string(), id.clone(), String::new(), num(d.variance_term)])?;
            f.row(["variance_delta".to_string(), id.clone(), String::new(), num(d.total)])?;
            write!(report, ", variance delta {}", num(d.total)).unwrap();
        }
        writeln!(report).unwrap();
    }
    f.finish()?;
    Ok(report)
}
