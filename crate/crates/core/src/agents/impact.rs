use std::any::Any;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{TradingCore, WakeRoute, IMPACT_TYPE};
use crate::error::AgentError;
use crate::kernel::{Agent, AgentContext};
use crate::message::{Body, Cents, Message, PriceLevelSummary, Shares, MKT_BUY, MKT_SELL};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpactParams {
    pub symbol: String,
    pub starting_cash: Cents,
    /// Fraction of visible opposite-side volume to demand.
    pub greed: f64,
    pub is_buy: bool,
    pub trigger: SimTime,
    /// Price levels inspected on the opposite side.
    pub depth_levels: u32,
}

impl Default for ImpactParams {
    fn default() -> Self {
        ImpactParams {
            symbol: "IBM".into(),
            starting_cash: 10_000_000,
            greed: 0.1,
            is_buy: true,
            trigger: SimTime::ZERO,
            depth_levels: 10,
        }
    }
}

/// `floor(greed * visible volume)`, tolerant of binary representation of `greed`.
pub fn impact_quantity(greed: f64, opposite: &[PriceLevelSummary]) -> Shares {
    let visible: Shares = opposite.iter().map(|l| l.volume).sum();
    (greed * visible as f64 + 1e-9).floor() as Shares
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Waiting,
    AwaitingSpread,
    Done,
}

/// Places a single marketable order sized off visible liquidity, then holds.
#[derive(Debug)]
pub struct ImpactAgent {
    name: String,
    params: ImpactParams,
    core: TradingCore,
    state: State,
}

impl ImpactAgent {
    pub fn new(name: impl Into<String>, params: ImpactParams) -> Result<Self, AgentError> {
        if !(params.greed.is_finite() && params.greed >= 0.0) {
            return Err(AgentError::failed("impact greed must be finite and non-negative"));
        }
        if params.depth_levels == 0 {
            return Err(AgentError::failed("impact depth_levels must be at least 1"));
        }
        let core = TradingCore::new(params.starting_cash, [params.symbol.clone()]);
        Ok(ImpactAgent { name: name.into(), params, core, state: State::Waiting })
    }

    pub fn core(&self) -> &TradingCore {
        &self.core
    }

    fn act(
        &mut self,
        ctx: &mut AgentContext<'_>,
        bids: &[PriceLevelSummary],
        asks: &[PriceLevelSummary],
    ) -> Result<(), AgentError> {
        self.state = State::Done;
        let opposite = if self.params.is_buy { asks } else { bids };
        let visible: Shares = opposite.iter().map(|l| l.volume).sum();
        if visible == 0 {
            ctx.log_event("IMPACT_ABSTAIN", json!({ "reason": "opposite side empty" }));
            return Ok(());
        }
        let quantity = impact_quantity(self.params.greed, opposite);
        if quantity <= 0 {
            ctx.log_event("IMPACT_ABSTAIN", json!({ "reason": "zero quantity", "visible": visible }));
            return Ok(());
        }
        let price = if self.params.is_buy { MKT_BUY } else { MKT_SELL };
        let symbol = self.params.symbol.clone();
        let order = self.core.place_limit_order(ctx, &symbol, quantity, self.params.is_buy, price)?;
        ctx.log_event(
            "IMPACT_ORDER",
            json!({
                "order_id": order.order_id, "symbol": symbol, "is_buy": self.params.is_buy,
                "quantity": quantity, "visible": visible, "greed": self.params.greed,
            }),
        );
        Ok(())
    }
}

impl Agent for ImpactAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn agent_type(&self) -> &str {
        IMPACT_TYPE
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
        if self.state == State::Waiting && now >= self.params.trigger {
            self.state = State::AwaitingSpread;
            let body = Body::QuerySpread { symbol: self.params.symbol.clone(), depth: self.params.depth_levels };
            self.core.send(ctx, body)?;
        }
        Ok(())
    }

    fn receive_message(&mut self, ctx: &mut AgentContext<'_>, now: SimTime, msg: Message) -> Result<(), AgentError> {
        let event = self.core.on_message(ctx, &msg)?;
        if event.hours_known {
            let open = self.core.market_open().expect("hours known");
            let close = self.core.market_close().expect("hours known");
            let at = self.params.trigger.max(open).max(now);
            if at <= close {
                ctx.set_wakeup(at)?;
            } else {
                self.state = State::Done;
                ctx.log_event("IMPACT_ABSTAIN", json!({ "reason": "trigger after market close" }));
            }
        }
        match msg.body {
            Body::QuerySpreadResponse { symbol, bids, asks, .. }
                if self.state == State::AwaitingSpread && symbol == self.params.symbol =>
            {
                self.act(ctx, &bids, &asks)
            }
            Body::MarketClosed { reason } if self.state == State::AwaitingSpread => {
                self.state = State::Done;
                ctx.log_event("IMPACT_ABSTAIN", json!({ "reason": reason }));
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
