//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use marketsim::agents::{fit_line, Portfolio};
use marketsim::config::{apply_patch, read_table, ExperimentConfig};
use marketsim::exchange::ExchangeAgent;
use marketsim::kernel::{AgentId, LogRecord};
use marketsim::message::{decode_record, Body, Cents, Message, MessageKind, Order, MKT_BUY};
use marketsim::oracle::{audit_accesses, observe, FundamentalSeries};
use marketsim::rng::rng_from_seed;
use marketsim::runner::{exchange_trades, first_order_arrival, run_ab, run_experiment, trial_from_output, RunOutput};
use marketsim::study::{mean_traded_price, pearson, spearman, Trade};
use marketsim::time::SimTime;
use rand::Rng;
use toml::Table;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn load(name: &str, overrides: &[String]) -> ExperimentConfig {
    ExperimentConfig::load(&common::config_path(name), overrides).expect("bundled config loads")
}

fn run(cfg: &ExperimentConfig, trace: bool) -> RunOutput {
    run_experiment(cfg, trace).expect("run completes")
}

fn exchange_log(out: &RunOutput) -> Vec<LogRecord> {
    let ex = out.manifest.agents_of_type("exchange").next().expect("exchange in roster");
    out.log(ex).expect("exchange log archived")
}

fn determinism() -> Check {
    let cfg = load("determinism.toml", &[]);
    let kinds: BTreeMap<&str, usize> = cfg.agents.iter().fold(BTreeMap::new(), |mut m, g| {
        *m.entry(g.kind.type_name()).or_default() += g.count as usize;
        m
    });
    ensure(
        kinds.get("exchange") == Some(&1) && kinds.get("background") == Some(&100) && kinds.get("momentum") == Some(&1),
        || format!("unexpected population {kinds:?}"),
    )?;
    ensure(cfg.stop.0 - cfg.start.0 >= 3_600_000_000_000, || "window shorter than one hour".into())?;
    let mut outputs = Vec::new();
    let mut timings = Vec::new();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let t0 = Instant::now();
        let out = run(&cfg, false);
        out.write_to(dir.path()).map_err(|e| e.to_string())?;
        timings.push(t0.elapsed());
        outputs.push(out);
    }
    let mut compared = 0;
    for entry in std::fs::read_dir(dirs[0].path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b =
            std::fs::read(dirs[1].path().join(&name)).map_err(|e| format!("{name:?} missing in second run: {e}"))?;
        ensure(a == b, || format!("{name:?} differs between runs"))?;
        compared += 1;
    }
    ensure(compared == std::fs::read_dir(dirs[1].path()).unwrap().count(), || "file sets differ".into())?;
    let trades = exchange_trades(&exchange_log(&outputs[0])).len();
    ensure(trades > 0, || "no trades".into())?;
    ensure(timings.iter().all(|t| *t < Duration::from_secs(60)), || format!("too slow: {timings:?}"))?;
    Ok(format!("{compared} files byte-identical, {trades} trades, runs took {:.2?} and {:.2?}", timings[0], timings[1]))
}

fn impact_docs() -> (Table, Table, &'static Path) {
    let doc = read_table(&common::config_path("impact.toml")).unwrap();
    let patch = read_table(&common::config_path("impact_patch.toml")).unwrap();
    (doc, patch, Path::new(env!("CARGO_MANIFEST_DIR")))
}

fn ab_isolation() -> Check {
    let (doc, patch, base) = impact_docs();
    let mut lines = Vec::new();
    for (seed, greed) in [(1, 0.5), (2, 0.1), (3, 1.9)] {
        let overrides = vec![format!("seed={seed}"), format!("IMPACT.greed={greed}")];
        let ab = run_ab(&doc, &patch, &overrides, base).map_err(|e| e.to_string())?;
        let s = &ab.summary;
        ensure(s.appended, || "impact agent was not appended".into())?;
        ensure(s.seed_differences.is_empty(), || format!("seed {seed}: agent seeds changed {:?}", s.seed_differences))?;
        ensure(s.jitter_seed_differences == 0, || format!("seed {seed}: jitter seeds changed"))?;
        ensure(s.oracle_identical, || format!("seed {seed}: oracle differs"))?;
        let delivery = s.impact_delivery_ns.ok_or_else(|| format!("seed {seed}: impact order never delivered"))?;
        let divergence = s.first_divergence_ns.ok_or_else(|| format!("seed {seed}: tapes never diverge"))?;
        ensure(divergence >= delivery, || format!("seed {seed}: divergence {divergence} before delivery {delivery}"))?;
        ensure(s.pass, || format!("seed {seed}: summary reports failure"))?;
        lines.push(format!("seed {seed}: +{}ns", divergence - delivery));
    }
    Ok(format!("no seed changes, divergence after delivery ({})", lines.join(", ")))
}

fn matching_oracle() -> Check {
    let mut rng = common::scenario_rng(20_190_628);
    let mut ops = 0;
    for n in 0..1_000 {
        let scenario = common::random_scenario(&mut rng);
        ops += scenario.len();
        common::compare_scenario(&scenario).map_err(|e| format!("scenario {n}: {e}"))?;
    }
    Ok(format!("1000 scenarios ({ops} operations), 0 mismatches"))
}

/// Rebuilds a portfolio from HOLDINGS_UPDATED records alone.
fn replay_holdings(log: &[LogRecord], starting_cash: Cents) -> Portfolio {
    let mut p = Portfolio::with_cash(starting_cash);
    for r in log.iter().filter(|r| r.event_type == "HOLDINGS_UPDATED") {
        let f = &r.payload;
        p.apply_fill(
            f["symbol"].as_str().unwrap(),
            f["is_buy"].as_bool().unwrap(),
            f["quantity"].as_i64().unwrap(),
            f["price"].as_i64().unwrap(),
        );
    }
    p
}

fn conserved(out: &RunOutput, label: &str) -> Result<usize, String> {
    let symbols: Vec<&str> = out.oracle.symbols().collect();
    for sym in &symbols {
        let total: i64 = out.portfolios.iter().map(|p| p.portfolio.holding(sym)).sum();
        ensure(total == 0, || format!("{label}: {sym} shares sum to {total}"))?;
    }
    let cash: i64 = out.portfolios.iter().map(|p| p.portfolio.cash).sum();
    let start: i64 = out.portfolios.iter().map(|p| p.starting_cash).sum();
    ensure(cash == start, || format!("{label}: cash {cash} != starting {start}"))?;
    for fp in &out.portfolios {
        let entry = out.manifest.agents.iter().find(|a| a.id == fp.id).unwrap();
        let log = out.log(entry).unwrap_or_default();
        let mut replayed = replay_holdings(&log, fp.starting_cash);
        replayed.holdings.retain(|_, q| *q != 0);
        let mut actual = fp.portfolio.clone();
        actual.holdings.retain(|_, q| *q != 0);
        ensure(replayed == actual, || format!("{label}: {} log replay {replayed:?} != {actual:?}", fp.name))?;
    }
    Ok(out.portfolios.len())
}

fn conservation() -> Check {
    let n = conserved(&run(&load("determinism.toml", &[]), false), "determinism")?;
    let (doc, patch, base) = impact_docs();
    let treated = apply_patch(&doc, &patch).unwrap();
    let mut checked = 1;
    for (seed, greed) in [(1, 1.9), (4, 0.5)] {
        let overrides = [format!("seed={seed}"), format!("IMPACT.greed={greed}")];
        let cfg = ExperimentConfig::from_table(treated.clone(), &overrides, base).unwrap();
        conserved(&run(&cfg, false), &format!("impact seed {seed}"))?;
        checked += 1;
    }
    Ok(format!("{checked} runs: shares and cash exact, {n} portfolios match log replay"))
}

fn no_time_travel() -> Check {
    let out = run(&load("determinism.toml", &[]), true);
    ensure(!out.trace.is_empty(), || "empty trace".into())?;
    let mut last_by_target: BTreeMap<AgentId, SimTime> = BTreeMap::new();
    let mut gvt = SimTime(i64::MIN);
    for d in &out.trace {
        if let Some(sent) = d.sent_time {
            ensure(d.time >= sent, || format!("delivery {d:?} precedes its send"))?;
        }
        ensure(d.time >= gvt, || format!("GVT regressed at {d:?}"))?;
        gvt = d.time;
        let prev = last_by_target.insert(d.target, d.time).unwrap_or(SimTime(i64::MIN));
        ensure(d.time >= prev, || format!("agent {} went back in time at {d:?}", d.target))?;
    }
    let mut logged_messages = 0;
    for entry in &out.manifest.agents {
        let Some(log) = out.log(entry) else { continue };
        let mut prev = i64::MIN;
        for r in &log {
            ensure(r.timestamp_ns >= prev, || format!("{}: log timestamp regressed at {r:?}", entry.name))?;
            prev = r.timestamp_ns;
            let Some(line) = r.payload.get("msg").and_then(|m| m.as_str()) else { continue };
            let msg = decode_record(line).map_err(|e| format!("{}: {e}", entry.name))?;
            ensure(msg.delivery_time >= msg.sent_time, || format!("{}: {line}", entry.name))?;
            if msg.recipient == entry.id && r.event_type != "SEND" {
                ensure(r.timestamp_ns >= msg.delivery_time.0, || {
                    format!("{}: handled before delivery: {line}", entry.name)
                })?;
            }
            logged_messages += 1;
        }
    }
    Ok(format!("{} deliveries and {logged_messages} logged messages, 0 violations", out.trace.len()))
}

fn impact_sign_and_persistence() -> Check {
    let t0 = Instant::now();
    let (doc, patch, base) = impact_docs();
    let treated = apply_patch(&doc, &patch).unwrap();
    let treatment = |seed: u64, greed: f64| {
        let overrides = [format!("seed={seed}"), format!("IMPACT.greed={greed}")];
        run(&ExperimentConfig::from_table(treated.clone(), &overrides, base).unwrap(), false)
    };

    let window = 15 * 60 * 1_000_000_000i64;
    let mut wins: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 1..=20u64 {
        let control = run(&ExperimentConfig::from_table(doc.clone(), &[format!("seed={seed}")], base).unwrap(), false);
        let control_trades: Vec<Trade> = exchange_trades(&exchange_log(&control))
            .into_iter()
            .map(|t| Trade { time: t.time, price: t.price, quantity: t.quantity })
            .collect();
        for greed in [0.1, 0.5] {
            let out = treatment(seed, greed);
            let impact = out.manifest.agents_of_type("impact").next().unwrap().id;
            let Some(at) = first_order_arrival(&exchange_log(&out), impact) else { continue };
            let trial = trial_from_output("treatment", &out).map_err(|e| e.to_string())?;
            let end = SimTime(at.0 + window);
            let higher = match (mean_traded_price(&trial.trades, at, end), mean_traded_price(&control_trades, at, end))
            {
                (Some(t), Some(c)) => t > c,
                _ => false,
            };
            *wins.entry(format!("{greed}")).or_default() += higher as usize;
        }
    }
    let part_a = ["0.1", "0.5"].iter().all(|g| wins.get(*g).copied().unwrap_or(0) >= 16);

    let mut greeds = Vec::new();
    let mut profits = Vec::new();
    let mut sizes = Vec::new();
    let mut pps = Vec::new();
    for seed in 1..=2u64 {
        for step in 1..=19 {
            let greed = step as f64 / 10.0;
            let trial = trial_from_output("grid", &treatment(seed, greed)).map_err(|e| e.to_string())?;
            if let Some(o) = trial.impact {
                greeds.push(o.greed);
                profits.push(o.profit as f64);
                sizes.push(o.size as f64);
                pps.push(o.profit_per_share());
            }
        }
    }
    let rank = spearman(&greeds, &profits).unwrap_or(f64::NAN);
    let r = pearson(&sizes, &pps).unwrap_or(f64::NAN);
    let part_b = greeds.len() >= 20 && rank > 0.0 && r < 0.0;
    let summary = format!(
        "(a) higher post-impact mean price in {}/20 (greed 0.1) and {}/20 (greed 0.5) seeds; \
         (b) {} trials, spearman(profit, greed) {rank:+.3}, pearson(profit/share, size) {r:+.3}; {:.1?}",
        wins.get("0.1").copied().unwrap_or(0),
        wins.get("0.5").copied().unwrap_or(0),
        greeds.len(),
        t0.elapsed()
    );
    ensure(t0.elapsed() < Duration::from_secs(30 * 60), || format!("too slow: {summary}"))?;
    if part_a && part_b {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// Least squares on x = 0..n with exact integer sums; slope and intercept as rationals.
fn exact_fit(ys: &[i64]) -> (f64, f64) {
    let n = ys.len() as i128;
    let sx: i128 = (0..n).sum();
    let sxx: i128 = (0..n).map(|k| k * k).sum();
    let sy: i128 = ys.iter().map(|&y| y as i128).sum();
    let sxy: i128 = ys.iter().enumerate().map(|(k, &y)| k as i128 * y as i128).sum();
    let den = n * sxx - sx * sx;
    let slope_num = n * sxy - sx * sy;
    let intercept_num = sy * den - sx * slope_num;
    (slope_num as f64 / den as f64, intercept_num as f64 / (n * den) as f64)
}

fn momentum_regression() -> Check {
    let mut rng = rng_from_seed(7);
    let mut worst = 0.0f64;
    for w in 0..100 {
        let len = rng.random_range(2..=60);
        let mut px: i64 = rng.random_range(1_000..1_000_000);
        let ys: Vec<i64> = (0..len)
            .map(|_| {
                px = (px + rng.random_range(-500..=500)).max(1);
                px
            })
            .collect();
        let fit = fit_line(&ys.iter().map(|&y| y as f64).collect::<Vec<_>>()).ok_or("fit refused a window")?;
        let (slope, intercept) = exact_fit(&ys);
        for (got, want, what) in [(fit.slope, slope, "slope"), (fit.intercept, intercept, "intercept")] {
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("window {w}: {what} {got} vs exact {want} (rel err {err:e})"))?;
        }
    }
    Ok(format!("100 windows, worst relative error {worst:.2e}"))
}

fn market_hours() -> Check {
    const OPEN: i64 = 1_000;
    const CLOSE: i64 = 2_000;
    let trader = AgentId(1);
    let order = |id: u64, is_buy: bool, px: Cents| Order {
        order_id: id,
        agent_id: trader,
        symbol: "IBM".into(),
        is_buy,
        quantity: 10,
        limit_price: px,
        placement_time: SimTime(0),
    };
    let request = |kind: MessageKind| match kind {
        MessageKind::MarketOpenTime => Body::MarketOpenTime,
        MessageKind::MarketCloseTime => Body::MarketCloseTime,
        MessageKind::QueryLastTrade => Body::QueryLastTrade { symbol: "IBM".into() },
        MessageKind::QuerySpread => Body::QuerySpread { symbol: "IBM".into(), depth: 3 },
        // Would cross the resting ask and sweep the book if accepted.
        MessageKind::LimitOrder => Body::LimitOrder { order: order(90, true, MKT_BUY) },
        MessageKind::CancelOrder => Body::CancelOrder { order: order(2, false, 10_100) },
        other => panic!("{other} is not a request"),
    };
    let msg = |body: Body, at: i64| Message {
        sender: trader,
        recipient: AgentId(0),
        sent_time: SimTime(at),
        delivery_time: SimTime(at),
        body,
    };

    let mut ex = ExchangeAgent::new("EX", SimTime(OPEN), SimTime(CLOSE), [("IBM".to_string(), 10_000)]).unwrap();
    for (o, at) in [(order(1, false, 10_050), 1_100), (order(2, false, 10_100), 1_200), (order(3, true, 10_050), 1_500)]
    {
        ex.handle_message(&msg(Body::LimitOrder { order: o }, at), SimTime(at));
    }
    let final_trade = ex.book("IBM").unwrap().last_trade();
    ensure(final_trade == 10_050, || format!("setup trade at {final_trade}"))?;
    let state = |ex: &ExchangeAgent| {
        let b = ex.book("IBM").unwrap();
        (b.orders().cloned().collect::<Vec<_>>(), b.last_trade(), b.snapshot(SimTime(0), 10))
    };

    let kinds: Vec<MessageKind> = MessageKind::ALL.into_iter().filter(|k| k.is_request()).collect();
    let mut checks = 0;
    for at in [0, OPEN - 1, CLOSE + 1, CLOSE + 1_000_000] {
        for &kind in &kinds {
            let before = state(&ex);
            let handled = ex.handle_message(&msg(request(kind), at), SimTime(at));
            ensure(state(&ex) == before, || format!("{kind} at {at} mutated the book"))?;
            ensure(handled.executions.is_empty(), || format!("{kind} at {at} executed"))?;
            ensure(handled.replies.len() == 1, || format!("{kind} at {at}: {} replies", handled.replies.len()))?;
            let reply = &handled.replies[0];
            ensure(reply.to == trader, || format!("{kind} at {at}: reply to {}", reply.to))?;
            let ok = match (kind, &reply.body) {
                (
                    MessageKind::LimitOrder | MessageKind::CancelOrder | MessageKind::QuerySpread,
                    Body::MarketClosed { .. },
                ) => true,
                (MessageKind::MarketOpenTime, Body::MarketOpenTimeResponse { time }) => time.0 == OPEN,
                (MessageKind::MarketCloseTime, Body::MarketCloseTimeResponse { time }) => time.0 == CLOSE,
                (MessageKind::QueryLastTrade, Body::QueryLastTradeResponse { price, market_closed, .. }) => {
                    *price == final_trade && *market_closed == (at > CLOSE)
                }
                _ => false,
            };
            ensure(ok, || format!("{kind} at {at}: unexpected reply {:?}", reply.body))?;
            checks += 1;
        }
    }
    // Inside the closed interval the same requests are served, so the gate above is the only barrier.
    for at in [OPEN, CLOSE] {
        let handled = ex.handle_message(&msg(request(MessageKind::QuerySpread), at), SimTime(at));
        ensure(matches!(handled.replies[0].body, Body::QuerySpreadResponse { .. }), || {
            format!("spread query refused at {at}")
        })?;
    }
    Ok(format!("{} request kinds x 4 out-of-hours times = {checks} checks, book untouched", kinds.len()))
}

/// Linear-scan step function over the sample list.
fn step_value(series: &FundamentalSeries, at: SimTime) -> Option<(SimTime, Cents)> {
    let mut found = None;
    for &(t, p) in &series.samples {
        if t <= at {
            found = Some((t, p));
        }
    }
    found
}

fn oracle_gating() -> Check {
    let out = run(&load("determinism.toml", &[]), false);
    let accesses = &out.oracle_accesses;
    ensure(!accesses.is_empty(), || "no oracle observations served".into())?;
    let violations = audit_accesses(|s| out.oracle.series(s), accesses);
    ensure(violations.is_empty(), || format!("{} violations, first {:?}", violations.len(), violations[0]))?;
    for a in accesses {
        let series = out.oracle.series(&a.symbol).unwrap();
        let (t, p) = step_value(series, SimTime(a.query_time_ns)).ok_or("access before first sample")?;
        ensure(t.0 == a.sample_time_ns && p == a.sample_price && t.0 <= a.query_time_ns, || format!("{a:?}"))?;
    }

    let mut zero_noise = 0;
    let mut rng = rng_from_seed(11);
    for sym in out.oracle.symbols() {
        let series = out.oracle.series(sym).unwrap();
        let first = series.first_time().0;
        let last = series.samples.last().unwrap().0 .0;
        let mut probes: Vec<i64> = series.samples.iter().flat_map(|(t, _)| [t.0 - 1, t.0, t.0 + 1]).collect();
        probes.extend((0..2_000).map(|_| rng.random_range(first..=last + 1_000_000_000)));
        for at in probes {
            let at = SimTime(at);
            match (observe(series, at, 0.0, &mut rng), step_value(series, at)) {
                (Ok(obs), Some((t, p))) => {
                    ensure(obs.value == p && obs.sample_price == p && obs.sample_time == t, || {
                        format!("{sym} at {}: observed {obs:?}, step function ({}, {p})", at.0, t.0)
                    })?;
                }
                (Err(_), None) => {}
                (got, want) => return Err(format!("{sym} at {}: {got:?} vs {want:?}", at.0)),
            }
            zero_noise += 1;
        }
    }
    Ok(format!("{} served observations audited, {zero_noise} zero-noise probes exact", accesses.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("determinism", determinism),
        ("a/b isolation", ab_isolation),
        ("matching oracle", matching_oracle),
        ("conservation", conservation),
        ("no time travel", no_time_travel),
        ("market impact", impact_sign_and_persistence),
        ("momentum regression", momentum_regression),
        ("market hours", market_hours),
        ("oracle gating", oracle_gating),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let text = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {text}"))
        });
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
