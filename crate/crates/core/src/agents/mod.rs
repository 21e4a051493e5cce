//! Trading agents and the bookkeeping they share.
//!
//! Each strategy owns a [`TradingCore`] that handles the exchange bootstrap,
//! portfolio and open-order tracking, the symbol cache and end-of-day logging.
//! Strategies drive their own state machines on top of it.

mod background;
mod impact;
mod momentum;

pub use background::{background_decision, mix_belief, BackgroundAgent, BackgroundParams, Belief};
pub use impact::{impact_quantity, ImpactAgent, ImpactParams};
pub use momentum::{fit_line, momentum_decision, LineFit, MomentumAgent, MomentumParams, OrderIntent};

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use crate::error::{AgentError, ServiceError};
use crate::exchange::EXCHANGE_TYPE;
use crate::kernel::{Agent, AgentContext, AgentId};
use crate::message::{Body, Cents, Message, Order, OrderId, PriceLevelSummary, Shares};
use crate::time::SimTime;

pub const MOMENTUM_TYPE: &str = "MomentumAgent";
pub const BACKGROUND_TYPE: &str = "BackgroundAgent";
pub const IMPACT_TYPE: &str = "ImpactAgent";

/// The bookkeeping of any trading agent, for post-run inspection.
pub fn trading_core(agent: &dyn Agent) -> Option<&TradingCore> {
    let any = agent.as_any();
    any.downcast_ref::<BackgroundAgent>()
        .map(BackgroundAgent::core)
        .or_else(|| any.downcast_ref::<MomentumAgent>().map(MomentumAgent::core))
        .or_else(|| any.downcast_ref::<ImpactAgent>().map(ImpactAgent::core))
}

/// Cash and signed share holdings. Shorting is unrestricted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Portfolio {
    pub cash: Cents,
    pub holdings: BTreeMap<String, Shares>,
}

impl Portfolio {
    pub fn with_cash(cash: Cents) -> Self {
        Portfolio { cash, holdings: BTreeMap::new() }
    }

    pub fn holding(&self, symbol: &str) -> Shares {
        self.holdings.get(symbol).copied().unwrap_or(0)
    }

    pub fn apply_fill(&mut self, symbol: &str, is_buy: bool, quantity: Shares, price: Cents) {
        let signed = if is_buy { quantity } else { -quantity };
        self.cash -= signed * price;
        *self.holdings.entry(symbol.to_string()).or_insert(0) += signed;
    }

    /// `cash + sum(holdings * price)`. Errors with the first held symbol lacking a price.
    pub fn mark_to_market(&self, price_of: impl Fn(&str) -> Option<Cents>) -> Result<Cents, String> {
        let mut total = self.cash;
        for (sym, qty) in &self.holdings {
            if *qty == 0 {
                continue;
            }
            let px = price_of(sym).ok_or_else(|| format!("no known price for held symbol {sym}"))?;
            total += qty * px;
        }
        Ok(total)
    }
}

/// What the agent knows about one symbol, with the exchange time of each fact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolInfo {
    pub last_trade: Option<(Cents, SimTime)>,
    pub daily_close: Option<Cents>,
    pub depth: Option<DepthView>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthView {
    pub as_of: SimTime,
    pub bids: Vec<PriceLevelSummary>,
    pub asks: Vec<PriceLevelSummary>,
}

/// Outcome of routing a wakeup through the core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WakeRoute {
    /// Bootstrap, dormancy or end-of-day handling consumed the wakeup.
    Consumed,
    /// The market is known to be open or pending; the strategy should act.
    Strategy,
}

/// Facts a strategy may need to react to after the core processed a message.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreEvent {
    /// Both market open and close became known with this message.
    pub hours_known: bool,
    /// The market-closed flag was raised by this message.
    pub closed: bool,
}

/// Shared state of every trading agent.
#[derive(Debug, Clone)]
pub struct TradingCore {
    pub portfolio: Portfolio,
    pub starting_cash: Cents,
    pub open_orders: BTreeMap<OrderId, Order>,
    pub symbols: BTreeMap<String, SymbolInfo>,
    placed: BTreeSet<OrderId>,
    exchange: Option<AgentId>,
    market_open: Option<SimTime>,
    market_close: Option<SimTime>,
    mkt_closed: bool,
    dormant: bool,
    bootstrapped: bool,
    eod_queried: bool,
    next_order_seq: u32,
}

impl TradingCore {
    pub fn new(starting_cash: Cents, symbols: impl IntoIterator<Item = String>) -> Self {
        TradingCore {
            portfolio: Portfolio::with_cash(starting_cash),
            starting_cash,
            open_orders: BTreeMap::new(),
            symbols: symbols.into_iter().map(|s| (s, SymbolInfo::default())).collect(),
            placed: BTreeSet::new(),
            exchange: None,
            market_open: None,
            market_close: None,
            mkt_closed: false,
            dormant: false,
            bootstrapped: false,
            eod_queried: false,
            next_order_seq: 0,
        }
    }

    pub fn exchange(&self) -> Option<AgentId> {
        self.exchange
    }

    pub fn market_open(&self) -> Option<SimTime> {
        self.market_open
    }

    pub fn market_close(&self) -> Option<SimTime> {
        self.market_close
    }

    pub fn market_closed(&self) -> bool {
        self.mkt_closed
    }

    pub fn is_dormant(&self) -> bool {
        self.dormant
    }

    pub fn last_trade(&self, symbol: &str) -> Option<Cents> {
        self.symbols.get(symbol).and_then(|s| s.last_trade.map(|(p, _)| p))
    }

    /// Prefers the daily close, then the freshest last trade.
    pub fn known_price(&self, symbol: &str) -> Option<Cents> {
        let info = self.symbols.get(symbol)?;
        info.daily_close.or(info.last_trade.map(|(p, _)| p))
    }

    pub fn mark_to_market(&self) -> Result<Cents, String> {
        self.portfolio.mark_to_market(|s| self.known_price(s))
    }

    pub fn log_start(&self, ctx: &mut AgentContext<'_>) {
        ctx.log_event("STARTING_CASH", json!({ "cash": self.starting_cash }));
    }

    /// Routes a wakeup: the first locates the exchange and asks for market hours,
    /// one after the close fetches final prices, and the rest go to the strategy.
    pub fn on_wakeup(&mut self, ctx: &mut AgentContext<'_>, now: SimTime) -> Result<WakeRoute, AgentError> {
        if self.dormant {
            return Ok(WakeRoute::Consumed);
        }
        if !self.bootstrapped {
            self.bootstrapped = true;
            let Some(exchange) = ctx.find_agent_by_type(EXCHANGE_TYPE) else {
                ctx.log_event("FATAL", json!({ "reason": "no exchange agent in population" }));
                self.dormant = true;
                return Ok(WakeRoute::Consumed);
            };
            self.exchange = Some(exchange);
            self.send(ctx, Body::MarketOpenTime)?;
            self.send(ctx, Body::MarketCloseTime)?;
            return Ok(WakeRoute::Consumed);
        }
        if self.market_close.is_some_and(|close| now > close) {
            self.mkt_closed = true;
            self.query_closing_prices(ctx)?;
            return Ok(WakeRoute::Consumed);
        }
        if self.market_open.is_none() || self.market_close.is_none() {
            return Ok(WakeRoute::Consumed);
        }
        Ok(WakeRoute::Strategy)
    }

    fn query_closing_prices(&mut self, ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        if self.eod_queried {
            return Ok(());
        }
        self.eod_queried = true;
        let symbols: Vec<String> = self.symbols.keys().cloned().collect();
        for symbol in symbols {
            self.send(ctx, Body::QueryLastTrade { symbol })?;
        }
        Ok(())
    }

    /// Sends to the exchange and logs the stamped message.
    pub fn send(&mut self, ctx: &mut AgentContext<'_>, body: Body) -> Result<Message, AgentError> {
        let exchange = self.exchange.ok_or_else(|| AgentError::failed("no exchange located"))?;
        let sent = ctx.send(exchange, body)?;
        ctx.log_event("SEND", json!({ "msg": sent.encode() }));
        Ok(sent)
    }

    pub fn place_limit_order(
        &mut self,
        ctx: &mut AgentContext<'_>,
        symbol: &str,
        quantity: Shares,
        is_buy: bool,
        limit_price: Cents,
    ) -> Result<Order, AgentError> {
        if quantity <= 0 {
            return Err(AgentError::failed(format!("refusing to place order for {quantity} shares")));
        }
        let seq = self.next_order_seq;
        self.next_order_seq = seq.checked_add(1).ok_or_else(|| AgentError::failed("order id space exhausted"))?;
        let order = Order {
            order_id: ((ctx.id().0 as u64) << 32) | seq as u64,
            agent_id: ctx.id(),
            symbol: symbol.to_string(),
            is_buy,
            quantity,
            limit_price,
            placement_time: ctx.now(),
        };
        self.open_orders.insert(order.order_id, order.clone());
        self.placed.insert(order.order_id);
        ctx.log_event(
            "ORDER_PLACED",
            json!({
                "order_id": order.order_id, "symbol": symbol, "is_buy": is_buy,
                "quantity": quantity, "limit_price": limit_price,
            }),
        );
        self.send(ctx, Body::LimitOrder { order: order.clone() })?;
        Ok(order)
    }

    pub fn cancel_order(&mut self, ctx: &mut AgentContext<'_>, order: &Order) -> Result<(), AgentError> {
        self.send(ctx, Body::CancelOrder { order: order.clone() })?;
        Ok(())
    }

    /// Updates portfolio, open orders, symbol info and market status from one message.
    pub fn on_message(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) -> Result<CoreEvent, AgentError> {
        ctx.log_event(msg.kind().as_str(), json!({ "msg": msg.encode() }));
        let exchange_time = msg.sent_time;
        let mut event = CoreEvent::default();
        let hours_were_known = self.market_open.is_some() && self.market_close.is_some();
        match &msg.body {
            Body::MarketOpenTimeResponse { time } => self.market_open = Some(*time),
            Body::MarketCloseTimeResponse { time } => self.market_close = Some(*time),
            Body::OrderAccepted { .. } => {}
            Body::OrderExecuted { order_id, symbol, is_buy, quantity, price } => {
                self.apply_execution(ctx, *order_id, symbol, *is_buy, *quantity, *price);
            }
            Body::OrderCancelled { order } => {
                self.open_orders.remove(&order.order_id);
            }
            Body::QueryLastTradeResponse { symbol, price, market_closed } => {
                let info = self.symbols.entry(symbol.clone()).or_default();
                if info.last_trade.is_none_or(|(_, t)| t <= exchange_time) {
                    info.last_trade = Some((*price, exchange_time));
                }
                if *market_closed {
                    info.daily_close = Some(*price);
                    if !self.mkt_closed {
                        event.closed = true;
                    }
                    self.mkt_closed = true;
                }
            }
            Body::QuerySpreadResponse { symbol, last_trade, bids, asks, .. } => {
                let info = self.symbols.entry(symbol.clone()).or_default();
                if info.last_trade.is_none_or(|(_, t)| t <= exchange_time) {
                    info.last_trade = Some((*last_trade, exchange_time));
                }
                if info.depth.as_ref().is_none_or(|d| d.as_of <= exchange_time) {
                    info.depth = Some(DepthView { as_of: exchange_time, bids: bids.clone(), asks: asks.clone() });
                }
            }
            Body::MarketClosed { reason } => {
                // A pre-open rejection does not end the day.
                let after_close = self.market_close.is_some_and(|close| exchange_time > close);
                if reason == crate::exchange::REASON_CLOSED && after_close && !self.mkt_closed {
                    self.mkt_closed = true;
                    event.closed = true;
                }
            }
            _ => {}
        }
        if !hours_were_known {
            if let (Some(open), Some(close)) = (self.market_open, self.market_close) {
                event.hours_known = true;
                ctx.log_event("MARKET_HOURS", json!({ "open": open.0, "close": close.0 }));
                // Final prices are fetched just after the close.
                let eod = close.checked_add(1).map_err(ServiceError::from)?;
                ctx.set_wakeup(eod.max(ctx.now()))?;
            }
        }
        Ok(event)
    }

    fn apply_execution(
        &mut self,
        ctx: &mut AgentContext<'_>,
        order_id: OrderId,
        symbol: &str,
        is_buy: bool,
        quantity: Shares,
        price: Cents,
    ) {
        if !self.placed.contains(&order_id) {
            ctx.log_event("UNKNOWN_EXECUTION", json!({ "order_id": order_id }));
            return;
        }
        match self.open_orders.get_mut(&order_id) {
            Some(open) => {
                open.quantity -= quantity;
                if open.quantity <= 0 {
                    self.open_orders.remove(&order_id);
                }
            }
            // A fill that raced a cancellation still moved shares and cash.
            None => ctx.log_event("LATE_EXECUTION", json!({ "order_id": order_id })),
        }
        self.portfolio.apply_fill(symbol, is_buy, quantity, price);
        ctx.log_event(
            "HOLDINGS_UPDATED",
            json!({
                "order_id": order_id, "symbol": symbol, "is_buy": is_buy, "quantity": quantity, "price": price,
                "holdings": self.portfolio.holding(symbol), "cash": self.portfolio.cash,
            }),
        );
    }

    /// End-of-day records: final holdings, cash and the mark to market.
    pub fn log_final(&self, ctx: &mut AgentContext<'_>) {
        ctx.log_event("FINAL_HOLDINGS", json!(self.portfolio.holdings));
        ctx.log_event("FINAL_CASH", json!({ "cash": self.portfolio.cash }));
        match self.mark_to_market() {
            Ok(value) => {
                ctx.log_event("MARK_TO_MARKET", json!({ "value": value, "profit": value - self.starting_cash }))
            }
            Err(reason) => ctx.log_event("MARK_TO_MARKET_FAILED", json!({ "reason": reason })),
        }
        if !self.open_orders.is_empty() {
            let ids: Vec<OrderId> = self.open_orders.keys().copied().collect();
            ctx.log_event("OPEN_ORDERS_AT_CLOSE", json!({ "order_ids": ids }));
        }
    }
}
