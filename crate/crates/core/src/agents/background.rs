use std::any::Any;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{OrderIntent, TradingCore, WakeRoute, BACKGROUND_TYPE};
use crate::error::{AgentError, ServiceError};
use crate::kernel::{Agent, AgentContext};
use crate::message::{Body, Cents, Message, Order, Shares};
use crate::oracle::Oracle;
use crate::time::{SimTime, NANOS_PER_MINUTE, NANOS_PER_SECOND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundParams {
    pub symbol: String,
    pub starting_cash: Cents,
    /// Absolute position the agent enters, exits or reverses into.
    pub target_holdings: Shares,
    pub wake_interval_ns: i64,
    /// Relative half-width of the uniform jitter on each wake interval.
    pub wake_jitter: f64,
    /// Oracle noise variance, cents squared.
    pub observation_variance: f64,
    /// Growth of belief variance between observations, cents squared per second.
    pub belief_drift_per_second: f64,
    /// Upper bound of the per-wake limit offset: bids go below the belief and
    /// asks above it by a uniform draw from `[0, max_surplus]` cents.
    pub max_surplus: Cents,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        BackgroundParams {
            symbol: "IBM".into(),
            starting_cash: 10_000_000,
            target_holdings: 100,
            wake_interval_ns: NANOS_PER_MINUTE,
            wake_jitter: 0.1,
            observation_variance: 10_000.0,
            belief_drift_per_second: 1_000.0,
            max_surplus: 0,
        }
    }
}

impl BackgroundParams {
    pub fn check(&self) -> Result<(), String> {
        if self.target_holdings <= 0 {
            return Err("target_holdings must be positive".into());
        }
        if self.wake_interval_ns <= 0 {
            return Err("wake_interval_ns must be positive".into());
        }
        if !(0.0..1.0).contains(&self.wake_jitter) {
            return Err("wake_jitter must lie in [0, 1)".into());
        }
        if !(self.observation_variance.is_finite() && self.observation_variance > 0.0) {
            return Err("observation_variance must be finite and positive".into());
        }
        if !(self.belief_drift_per_second.is_finite() && self.belief_drift_per_second >= 0.0) {
            return Err("belief_drift_per_second must be finite and non-negative".into());
        }
        if self.max_surplus < 0 {
            return Err("max_surplus must be non-negative".into());
        }
        Ok(())
    }
}

/// Gaussian value belief in cents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Belief {
    pub mean: f64,
    pub variance: f64,
}

/// Precision-weighted combination of a prior with one observation.
/// Without a prior the observation itself becomes the belief.
pub fn mix_belief(prior: Option<Belief>, observation: f64, observation_variance: f64) -> Belief {
    match prior {
        None => Belief { mean: observation, variance: observation_variance },
        Some(p) => {
            let total = p.variance + observation_variance;
            Belief {
                mean: (observation_variance * p.mean + p.variance * observation) / total,
                variance: p.variance * observation_variance / total,
            }
        }
    }
}

/// Moves holdings to `+target` when the belief is above the last trade and to
/// `-target` when below, limited at the rounded belief less (buys) or plus
/// (sells) `surplus`.
pub fn background_decision(
    belief_mean: f64,
    last: Cents,
    holdings: Shares,
    target: Shares,
    surplus: Cents,
) -> Option<OrderIntent> {
    let goal = if belief_mean > last as f64 {
        target
    } else if belief_mean < last as f64 {
        -target
    } else {
        return None;
    };
    let delta = goal - holdings;
    let anchor = belief_mean.round() as Cents;
    (delta != 0).then(|| OrderIntent {
        is_buy: delta > 0,
        quantity: delta.abs(),
        limit_price: if delta > 0 { anchor - surplus } else { anchor + surplus }.max(1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    AwaitingWakeup,
    AwaitingCancel,
    AwaitingLastTrade,
    Done,
}

/// Noisy-fundamental trader: observes the oracle, updates its belief and
/// positions itself toward the side the belief favors.
pub struct BackgroundAgent {
    name: String,
    params: BackgroundParams,
    core: TradingCore,
    oracle: Rc<Oracle>,
    belief: Option<(Belief, SimTime)>,
    state: State,
    next_cycle_at: SimTime,
    cancel_retry_at: SimTime,
}

impl std::fmt::Debug for BackgroundAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackgroundAgent")
            .field("name", &self.name)
            .field("state", &self.state)
            .field("belief", &self.belief)
            .finish_non_exhaustive()
    }
}

impl BackgroundAgent {
    pub fn new(name: impl Into<String>, params: BackgroundParams, oracle: Rc<Oracle>) -> Result<Self, AgentError> {
        params.check().map_err(AgentError::failed)?;
        if oracle.series(&params.symbol).is_none() {
            return Err(AgentError::failed(format!("oracle has no series for {}", params.symbol)));
        }
        let core = TradingCore::new(params.starting_cash, [params.symbol.clone()]);
        Ok(BackgroundAgent {
            name: name.into(),
            params,
            core,
            oracle,
            belief: None,
            state: State::AwaitingWakeup,
            next_cycle_at: SimTime::ZERO,
            cancel_retry_at: SimTime::ZERO,
        })
    }

    pub fn core(&self) -> &TradingCore {
        &self.core
    }

    pub fn belief(&self) -> Option<Belief> {
        self.belief.map(|(b, _)| b)
    }

    fn after(now: SimTime, nanos: i64) -> Result<SimTime, AgentError> {
        Ok(now.checked_add(nanos).map_err(ServiceError::from)?)
    }

    fn begin_cycle(&mut self, ctx: &mut AgentContext<'_>, now: SimTime) -> Result<(), AgentError> {
        if self.core.open_orders.is_empty() {
            return self.query_last_trade(ctx);
        }
        self.state = State::AwaitingCancel;
        self.send_cancels(ctx)?;
        // Guards against a cancel that overtook its own order in the network.
        self.cancel_retry_at = Self::after(now, self.params.wake_interval_ns)?;
        ctx.set_wakeup(self.cancel_retry_at)?;
        Ok(())
    }

    fn send_cancels(&mut self, ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        let open: Vec<Order> = self.core.open_orders.values().cloned().collect();
        for order in &open {
            self.core.cancel_order(ctx, order)?;
        }
        Ok(())
    }

    fn query_last_trade(&mut self, ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        self.state = State::AwaitingLastTrade;
        self.core.send(ctx, Body::QueryLastTrade { symbol: self.params.symbol.clone() })?;
        Ok(())
    }

    fn update_belief(&mut self, ctx: &mut AgentContext<'_>, now: SimTime) -> Result<Belief, AgentError> {
        let observed = self
            .oracle
            .observe(ctx.id(), &self.params.symbol, now, self.params.observation_variance, ctx.rng())
            .map_err(|e| AgentError::failed(e.to_string()))?;
        let prior = self.belief.map(|(b, at)| {
            let elapsed = (now - at) as f64 / NANOS_PER_SECOND as f64;
            Belief { mean: b.mean, variance: b.variance + self.params.belief_drift_per_second * elapsed }
        });
        let posterior = mix_belief(prior, observed as f64, self.params.observation_variance);
        self.belief = Some((posterior, now));
        ctx.log_event(
            "BELIEF",
            json!({ "observation": observed, "mean": posterior.mean, "variance": posterior.variance }),
        );
        Ok(posterior)
    }

    fn trade_and_sleep(&mut self, ctx: &mut AgentContext<'_>, now: SimTime, last: Cents) -> Result<(), AgentError> {
        let belief = self.update_belief(ctx, now)?;
        let holdings = self.core.portfolio.holding(&self.params.symbol);
        let surplus = if self.params.max_surplus > 0 { ctx.rng().random_range(0..=self.params.max_surplus) } else { 0 };
        if let Some(intent) = background_decision(belief.mean, last, holdings, self.params.target_holdings, surplus) {
            let symbol = self.params.symbol.clone();
            self.core.place_limit_order(ctx, &symbol, intent.quantity, intent.is_buy, intent.limit_price)?;
        }
        let jitter = self.params.wake_jitter;
        let u: f64 = if jitter > 0.0 { ctx.rng().random_range(-jitter..=jitter) } else { 0.0 };
        let interval = (self.params.wake_interval_ns as f64 * (1.0 + u)).round() as i64;
        self.next_cycle_at = Self::after(now, interval.max(1))?;
        self.state = State::AwaitingWakeup;
        ctx.set_wakeup(self.next_cycle_at)?;
        Ok(())
    }

    fn finish(&mut self, ctx: &mut AgentContext<'_>) {
        if self.state != State::Done {
            self.state = State::Done;
            ctx.log_event("STOP_TRADING", json!({ "reason": "market closed" }));
        }
    }
}

impl Agent for BackgroundAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn agent_type(&self) -> &str {
        BACKGROUND_TYPE
    }

    fn kernel_initializing(&mut self, ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        self.core.log_start(ctx);
        Ok(())
    }

    fn kernel_stopping(&mut self, ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        self.core.log_final(ctx);
        Ok(())
    }

    fn wakeup(&mut self, ctx: &mut AgentContext<'_>, now: SimTime) -> Result<(), AgentError> {
        if self.core.on_wakeup(ctx, now)? == WakeRoute::Consumed {
            return Ok(());
        }
        if self.core.market_closed() {
            self.finish(ctx);
            return Ok(());
        }
        match self.state {
            State::AwaitingWakeup if now >= self.next_cycle_at => self.begin_cycle(ctx, now),
            State::AwaitingCancel if now >= self.cancel_retry_at => {
                self.send_cancels(ctx)?;
                self.cancel_retry_at = Self::after(now, self.params.wake_interval_ns)?;
                ctx.set_wakeup(self.cancel_retry_at)?;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn receive_message(&mut self, ctx: &mut AgentContext<'_>, now: SimTime, msg: Message) -> Result<(), AgentError> {
        let event = self.core.on_message(ctx, &msg)?;
        if event.hours_known {
            let open = self.core.market_open().expect("hours known");
            let offset = ctx.rng().random_range(0..self.params.wake_interval_ns);
            self.next_cycle_at = Self::after(open, offset)?.max(now);
            ctx.set_wakeup(self.next_cycle_at)?;
        }
        if self.state == State::Done {
            return Ok(());
        }
        if self.core.market_closed() {
            self.finish(ctx);
            return Ok(());
        }
        match (&msg.body, self.state) {
            (Body::QueryLastTradeResponse { symbol, price, .. }, State::AwaitingLastTrade)
                if *symbol == self.params.symbol =>
            {
                let last = *price;
                self.trade_and_sleep(ctx, now, last)
            }
            (_, State::AwaitingCancel) if self.core.open_orders.is_empty() => self.query_last_trade(ctx),
            _ => Ok(()),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_precision_gives_midpoint() {
        let b = mix_belief(Some(Belief { mean: 10_000.0, variance: 100.0 }), 10_200.0, 100.0);
        assert_eq!(b, Belief { mean: 10_100.0, variance: 50.0 });
    }

    #[test]
    fn unequal_precision_weights_prior() {
        let b = mix_belief(Some(Belief { mean: 10_000.0, variance: 100.0 }), 10_300.0, 300.0);
        assert!((b.mean - 10_075.0).abs() < 1e-9);
        assert!((b.variance - 75.0).abs() < 1e-9);
    }

    #[test]
    fn vague_observation_leaves_prior() {
        let prior = Belief { mean: 10_000.0, variance: 100.0 };
        let b = mix_belief(Some(prior), 50_000.0, 1e15);
        assert!((b.mean - prior.mean).abs() < 1e-6);
        assert!((b.variance - prior.variance).abs() < 1e-6);
    }

    #[test]
    fn first_observation_is_the_belief() {
        assert_eq!(mix_belief(None, 9_900.0, 25.0), Belief { mean: 9_900.0, variance: 25.0 });
    }

    #[test]
    fn decision_follows_belief_direction() {
        let buy = background_decision(10_200.0, 10_000, 0, 100, 0).unwrap();
        assert_eq!(buy, OrderIntent { is_buy: true, quantity: 100, limit_price: 10_200 });
        let reverse = background_decision(9_800.0, 10_000, 100, 100, 0).unwrap();
        assert_eq!(reverse, OrderIntent { is_buy: false, quantity: 200, limit_price: 9_800 });
        assert_eq!(background_decision(10_000.0, 10_000, 0, 100, 0), None);
        assert_eq!(background_decision(10_500.0, 10_000, 100, 100, 0), None);
    }

    #[test]
    fn surplus_widens_away_from_the_belief() {
        let buy = background_decision(10_200.0, 10_000, 0, 100, 150).unwrap();
        assert_eq!(buy.limit_price, 10_050);
        let sell = background_decision(9_800.0, 10_000, 100, 100, 150).unwrap();
        assert_eq!(sell.limit_price, 9_950);
        assert_eq!(background_decision(100.0, 50, 0, 100, 500).unwrap().limit_price, 1);
    }

    #[test]
    fn params_are_validated() {
        assert!(BackgroundParams::default().check().is_ok());
        assert!(BackgroundParams { wake_jitter: 1.5, ..Default::default() }.check().is_err());
        assert!(BackgroundParams { observation_variance: 0.0, ..Default::default() }.check().is_err());
    }

    proptest::proptest! {
        #[test]
        fn posterior_variance_contracts(
            prior_mean in 1.0f64..1e6, prior_var in 1e-3f64..1e8,
            obs in 1.0f64..1e6, obs_var in 1e-3f64..1e8,
        ) {
            let b = mix_belief(Some(Belief { mean: prior_mean, variance: prior_var }), obs, obs_var);
            proptest::prop_assert!(b.variance < prior_var && b.variance < obs_var);
            proptest::prop_assert!(b.variance > 0.0);
            let (lo, hi) = if prior_mean < obs { (prior_mean, obs) } else { (obs, prior_mean) };
            proptest::prop_assert!(b.mean >= lo - 1e-6 && b.mean <= hi + 1e-6);
        }
    }
}
