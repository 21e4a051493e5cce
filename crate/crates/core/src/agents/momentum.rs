use std::any::Any;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{TradingCore, WakeRoute, MOMENTUM_TYPE};
use crate::error::AgentError;
use crate::kernel::{Agent, AgentContext};
use crate::message::{Body, Cents, Message, Shares, MKT_BUY, MKT_SELL};
use crate::time::{SimTime, NANOS_PER_MINUTE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentumParams {
    pub symbol: String,
    pub starting_cash: Cents,
    pub lookback: usize,
    /// Target absolute position; the agent trades toward plus or minus this.
    pub position: Shares,
    pub wake_interval_ns: i64,
}

impl Default for MomentumParams {
    fn default() -> Self {
        MomentumParams {
            symbol: "IBM".into(),
            starting_cash: 10_000_000,
            lookback: 10,
            position: 100,
            wake_interval_ns: NANOS_PER_MINUTE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Least-squares line through `(k, ys[k])` for `k = 0..n`. Needs at least two points.
pub fn fit_line(ys: &[f64]) -> Option<LineFit> {
    let n = ys.len();
    if n < 2 {
        return None;
    }
    let x_mean = (n as f64 - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Some(LineFit { slope, intercept: y_mean - slope * x_mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderIntent {
    pub is_buy: bool,
    pub quantity: Shares,
    pub limit_price: Cents,
}

/// Projects one step past the window and trades toward `+position` if the
/// projection is strictly above `last`, otherwise toward `-position`.
pub fn momentum_decision(window: &[Cents], last: Cents, holdings: Shares, position: Shares) -> Option<OrderIntent> {
    let ys: Vec<f64> = window.iter().map(|p| *p as f64).collect();
    let fit = fit_line(&ys)?;
    let projected = fit.predict(window.len() as f64);
    let intent = if projected > last as f64 {
        OrderIntent { is_buy: true, quantity: position - holdings, limit_price: MKT_BUY }
    } else {
        OrderIntent { is_buy: false, quantity: position + holdings, limit_price: MKT_SELL }
    };
    (intent.quantity > 0).then_some(intent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    AwaitingWakeup,
    AwaitingLastTrade,
}

/// Trend follower: samples the last trade every interval and trades on a
/// linear projection of the most recent `lookback` samples.
#[derive(Debug)]
pub struct MomentumAgent {
    name: String,
    params: MomentumParams,
    core: TradingCore,
    window: VecDeque<Cents>,
    state: State,
}

impl MomentumAgent {
    pub fn new(name: impl Into<String>, params: MomentumParams) -> Result<Self, AgentError> {
        if params.lookback < 2 {
            return Err(AgentError::failed("momentum lookback must be at least 2"));
        }
        if params.wake_interval_ns <= 0 || params.position <= 0 {
            return Err(AgentError::failed("momentum wake interval and position must be positive"));
        }
        let core = TradingCore::new(params.starting_cash, [params.symbol.clone()]);
        Ok(MomentumAgent { name: name.into(), params, core, window: VecDeque::new(), state: State::AwaitingWakeup })
    }

    pub fn core(&self) -> &TradingCore {
        &self.core
    }

    fn schedule_next(&mut self, ctx: &mut AgentContext<'_>, now: SimTime) -> Result<(), AgentError> {
        self.state = State::AwaitingWakeup;
        let next = now.checked_add(self.params.wake_interval_ns).map_err(crate::error::ServiceError::from)?;
        ctx.set_wakeup(next)?;
        Ok(())
    }

    fn on_last_trade(&mut self, ctx: &mut AgentContext<'_>, now: SimTime, last: Cents) -> Result<(), AgentError> {
        self.window.push_back(last);
        while self.window.len() > self.params.lookback {
            self.window.pop_front();
        }
        if self.window.len() == self.params.lookback {
            let window: Vec<Cents> = self.window.iter().copied().collect();
            let holdings = self.core.portfolio.holding(&self.params.symbol);
            if let Some(intent) = momentum_decision(&window, last, holdings, self.params.position) {
                let symbol = self.params.symbol.clone();
                self.core.place_limit_order(ctx, &symbol, intent.quantity, intent.is_buy, intent.limit_price)?;
            }
        }
        self.schedule_next(ctx, now)
    }
}

impl Agent for MomentumAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn agent_type(&self) -> &str {
        MOMENTUM_TYPE
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
        if self.core.on_wakeup(ctx, now)? == WakeRoute::Consumed || self.core.market_closed() {
            return Ok(());
        }
        if self.state == State::AwaitingWakeup {
            self.state = State::AwaitingLastTrade;
            self.core.send(ctx, Body::QueryLastTrade { symbol: self.params.symbol.clone() })?;
        }
        Ok(())
    }

    fn receive_message(&mut self, ctx: &mut AgentContext<'_>, now: SimTime, msg: Message) -> Result<(), AgentError> {
        let event = self.core.on_message(ctx, &msg)?;
        if event.hours_known {
            let open = self.core.market_open().expect("hours known");
            ctx.set_wakeup(open.max(now))?;
        }
        match msg.body {
            Body::QueryLastTradeResponse { symbol, price, market_closed }
                if symbol == self.params.symbol && self.state == State::AwaitingLastTrade =>
            {
                if market_closed {
                    self.state = State::AwaitingWakeup;
                    ctx.log_event("STOP_TRADING", json!({ "reason": "market closed" }));
                    return Ok(());
                }
                self.on_last_trade(ctx, now, price)
            }
            Body::MarketClosed { .. } if self.state == State::AwaitingLastTrade => self.schedule_next(ctx, now),
            _ => Ok(()),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
