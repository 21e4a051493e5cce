//! Exchange agent: one order book per listed symbol, market-hours enforcement,
//! and archival of the order stream or periodic book snapshots.
//!
//! The exchange is an ordinary agent. Its replies pay its own computation
//! delay and the network latency back to the requester.

use std::any::Any;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::book::{BookSnapshot, Execution, OrderBook};
use crate::error::AgentError;
use crate::kernel::{Agent, AgentContext, AgentId};
use crate::message::{Body, Cents, Message, Order, MKT_BUY, MKT_SELL};
use crate::time::SimTime;

pub const EXCHANGE_TYPE: &str = "ExchangeAgent";

pub const REASON_CLOSED: &str = "market closed";
pub const REASON_UNKNOWN_SYMBOL: &str = "unknown symbol";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum StreamLogging {
    /// Every acceptance, execution and cancellation, in the message line grammar.
    FullStream,
    /// Top-of-book snapshot every `frequency_ns` while the market is open.
    Snapshots { frequency_ns: i64 },
    #[default]
    Off,
}

/// A reply the exchange wants delivered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: AgentId,
    pub body: Body,
    /// Book events are mirrored into the full-stream archive.
    pub book_event: bool,
}

impl Outbound {
    fn reply(to: AgentId, body: Body) -> Self {
        Outbound { to, body, book_event: false }
    }

    fn book(to: AgentId, body: Body) -> Self {
        Outbound { to, body, book_event: true }
    }
}

/// What happened to the books while handling one request.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Handled {
    pub replies: Vec<Outbound>,
    pub executions: Vec<Execution>,
}

/// What happens to the unfilled part of an order priced at a market-order sentinel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualPolicy {
    /// Rests in the book at the sentinel price like any other limit order.
    #[default]
    Rest,
    /// Cancelled in the same activation that matched it (immediate-or-cancel).
    Cancel,
}

fn is_market_price(order: &Order) -> bool {
    order.limit_price == if order.is_buy { MKT_BUY } else { MKT_SELL }
}

#[derive(Debug)]
pub struct ExchangeAgent {
    name: String,
    residual_policy: ResidualPolicy,
    market_open: SimTime,
    market_close: SimTime,
    books: BTreeMap<String, OrderBook>,
    stream_logging: StreamLogging,
    snapshot_levels: usize,
    stream_lines: String,
    snapshot_rows: BTreeMap<String, Vec<String>>,
    snapshots_taken: i64,
}

impl ExchangeAgent {
    /// `listings` pairs each symbol with its oracle open price, reported as the
    /// last trade until the first execution.
    pub fn new(
        name: impl Into<String>,
        market_open: SimTime,
        market_close: SimTime,
        listings: impl IntoIterator<Item = (String, Cents)>,
    ) -> Result<Self, AgentError> {
        if market_open >= market_close {
            return Err(AgentError::failed(format!(
                "market open {}ns must precede market close {}ns",
                market_open.0, market_close.0
            )));
        }
        let books = listings.into_iter().map(|(sym, open)| (sym.clone(), OrderBook::new(sym, open))).collect();
        Ok(ExchangeAgent {
            name: name.into(),
            residual_policy: ResidualPolicy::Rest,
            market_open,
            market_close,
            books,
            stream_logging: StreamLogging::Off,
            snapshot_levels: 10,
            stream_lines: String::new(),
            snapshot_rows: BTreeMap::new(),
            snapshots_taken: 0,
        })
    }

    pub fn with_stream_logging(mut self, mode: StreamLogging, snapshot_levels: usize) -> Self {
        self.stream_logging = mode;
        self.snapshot_levels = snapshot_levels.max(1);
        self
    }

    pub fn with_residual_policy(mut self, policy: ResidualPolicy) -> Self {
        self.residual_policy = policy;
        self
    }

    pub fn book(&self, symbol: &str) -> Option<&OrderBook> {
        self.books.get(symbol)
    }

    pub fn market_open(&self) -> SimTime {
        self.market_open
    }

    pub fn market_close(&self) -> SimTime {
        self.market_close
    }

    /// Closed interval: messages delivered exactly at the close are still processed.
    pub fn is_open(&self, now: SimTime) -> bool {
        self.market_open <= now && now <= self.market_close
    }

    fn closed(to: AgentId, reason: &str) -> Outbound {
        Outbound::reply(to, Body::MarketClosed { reason: reason.to_string() })
    }

    /// Answers one protocol message. Pure with respect to the kernel: the caller
    /// sends the returned replies.
    pub fn handle_message(&mut self, msg: &Message, now: SimTime) -> Handled {
        let from = msg.sender;
        let open = self.is_open(now);
        let mut out = Handled::default();
        match &msg.body {
            Body::MarketOpenTime => {
                out.replies.push(Outbound::reply(from, Body::MarketOpenTimeResponse { time: self.market_open }))
            }
            Body::MarketCloseTime => {
                out.replies.push(Outbound::reply(from, Body::MarketCloseTimeResponse { time: self.market_close }))
            }
            Body::QueryLastTrade { symbol } => match self.books.get(symbol) {
                None => out.replies.push(Self::closed(from, REASON_UNKNOWN_SYMBOL)),
                Some(book) => out.replies.push(Outbound::reply(
                    from,
                    Body::QueryLastTradeResponse {
                        symbol: symbol.clone(),
                        price: book.last_trade(),
                        market_closed: now > self.market_close,
                    },
                )),
            },
            Body::QuerySpread { symbol, depth } => match self.books.get(symbol) {
                None => out.replies.push(Self::closed(from, REASON_UNKNOWN_SYMBOL)),
                Some(_) if !open => out.replies.push(Self::closed(from, REASON_CLOSED)),
                Some(book) => {
                    let (bids, asks) = book.depth((*depth).max(1) as usize);
                    out.replies.push(Outbound::reply(
                        from,
                        Body::QuerySpreadResponse {
                            symbol: symbol.clone(),
                            depth: *depth,
                            last_trade: book.last_trade(),
                            bids,
                            asks,
                        },
                    ));
                }
            },
            Body::LimitOrder { order } => match self.books.get_mut(&order.symbol) {
                None => out.replies.push(Self::closed(from, REASON_UNKNOWN_SYMBOL)),
                Some(_) if !open => out.replies.push(Self::closed(from, REASON_CLOSED)),
                Some(_) if order.quantity <= 0 || order.limit_price < 0 => {
                    out.replies.push(Self::closed(from, "invalid order"))
                }
                Some(book) => {
                    let mut order = order.clone();
                    order.placement_time = now;
                    let incoming_owner = order.agent_id;
                    let outcome = book.submit(order, now);
                    for e in &outcome.executions {
                        let notice = |order_id, is_buy| Body::OrderExecuted {
                            order_id,
                            symbol: book.symbol().to_string(),
                            is_buy,
                            quantity: e.quantity,
                            price: e.price,
                        };
                        out.replies
                            .push(Outbound::book(incoming_owner, notice(e.incoming_order_id, e.incoming_is_buy)));
                        out.replies.push(Outbound {
                            to: e.resting_agent,
                            body: notice(e.resting_order_id, !e.incoming_is_buy),
                            book_event: false,
                        });
                    }
                    match outcome.accepted {
                        Some(rest) if self.residual_policy == ResidualPolicy::Cancel && is_market_price(&rest) => {
                            let cancelled = book.cancel(rest.order_id).expect("residual was just rested");
                            out.replies.push(Outbound::book(incoming_owner, Body::OrderCancelled { order: cancelled }));
                        }
                        Some(rest) => {
                            out.replies.push(Outbound::book(incoming_owner, Body::OrderAccepted { order: rest }))
                        }
                        None => {}
                    }
                    out.executions = outcome.executions;
                }
            },
            Body::CancelOrder { order } => match self.books.get_mut(&order.symbol) {
                None => out.replies.push(Self::closed(from, REASON_UNKNOWN_SYMBOL)),
                Some(_) if !open => out.replies.push(Self::closed(from, REASON_CLOSED)),
                Some(book) => {
                    if let Some(cancelled) = book.cancel(order.order_id) {
                        out.replies.push(Outbound::book(cancelled.agent_id, Body::OrderCancelled { order: cancelled }));
                    }
                }
            },
            // Responses, notifications and wakeups are not requests.
            _ => {}
        }
        out
    }

    fn take_snapshots(&mut self, now: SimTime) {
        let levels = self.snapshot_levels;
        for (sym, book) in &self.books {
            let rows = self.snapshot_rows.entry(sym.clone()).or_default();
            rows.push(book.snapshot(now, levels).csv_row(levels));
        }
    }

    fn next_snapshot_time(&self) -> Option<SimTime> {
        let StreamLogging::Snapshots { frequency_ns } = self.stream_logging else { return None };
        let offset = frequency_ns.checked_mul(self.snapshots_taken)?;
        let t = self.market_open.checked_add(offset).ok()?;
        (t <= self.market_close).then_some(t)
    }
}

impl Agent for ExchangeAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn agent_type(&self) -> &str {
        EXCHANGE_TYPE
    }

    fn kernel_starting(&mut self, ctx: &mut AgentContext<'_>, start_time: SimTime) -> Result<(), AgentError> {
        // Snapshot ticks are the exchange's only self-scheduled activity.
        while self.next_snapshot_time().is_some_and(|t| t < start_time) {
            self.snapshots_taken += 1;
        }
        if let Some(first) = self.next_snapshot_time() {
            ctx.set_wakeup(first)?;
        }
        Ok(())
    }

    fn wakeup(&mut self, ctx: &mut AgentContext<'_>, now: SimTime) -> Result<(), AgentError> {
        let Some(due) = self.next_snapshot_time() else { return Ok(()) };
        if now < due {
            return Ok(());
        }
        self.take_snapshots(due);
        self.snapshots_taken += 1;
        if let Some(next) = self.next_snapshot_time() {
            ctx.set_wakeup(next.max(now))?;
        }
        Ok(())
    }

    fn receive_message(&mut self, ctx: &mut AgentContext<'_>, now: SimTime, msg: Message) -> Result<(), AgentError> {
        match &msg.body {
            Body::LimitOrder { order } => ctx.log_event(
                "ORDER_RECEIVED",
                json!({
                    "order_id": order.order_id, "agent": order.agent_id.0, "symbol": order.symbol,
                    "is_buy": order.is_buy, "quantity": order.quantity, "limit_price": order.limit_price,
                }),
            ),
            Body::CancelOrder { order } => {
                ctx.log_event("CANCEL_RECEIVED", json!({ "order_id": order.order_id, "agent": order.agent_id.0 }))
            }
            _ => {}
        }

        let handled = self.handle_message(&msg, now);
        for e in &handled.executions {
            let symbol = match &msg.body {
                Body::LimitOrder { order } => order.symbol.as_str(),
                _ => "",
            };
            ctx.log_event(
                "TRADE",
                json!({
                    "symbol": symbol, "price": e.price, "quantity": e.quantity,
                    "buyer": e.buyer().0, "seller": e.seller().0,
                    "incoming_order_id": e.incoming_order_id, "resting_order_id": e.resting_order_id,
                    "incoming_agent": e.incoming_agent.0,
                }),
            );
        }
        if let (Body::LimitOrder { order }, false) = (&msg.body, handled.executions.is_empty()) {
            if let Some(book) = self.books.get(&order.symbol) {
                ctx.log_event("LAST_TRADE", json!({ "symbol": order.symbol, "price": book.last_trade() }));
            }
        }
        if let (Body::CancelOrder { order }, true) = (&msg.body, handled.replies.is_empty()) {
            ctx.log_event("CANCEL_NOT_FOUND", json!({ "order_id": order.order_id, "agent": order.agent_id.0 }));
        }

        let full_stream = self.stream_logging == StreamLogging::FullStream;
        for reply in handled.replies {
            let sent = ctx.send(reply.to, reply.body)?;
            if full_stream && reply.book_event {
                self.stream_lines.push_str(&sent.encode());
                self.stream_lines.push('\n');
            }
        }
        Ok(())
    }

    fn kernel_terminating(&mut self, ctx: &mut AgentContext<'_>) -> Result<(), AgentError> {
        for (sym, book) in &self.books {
            ctx.log_event("CLOSE_PRICE", json!({ "symbol": sym, "price": book.last_trade() }));
        }
        ctx.archive_log()?;
        match self.stream_logging {
            StreamLogging::Off => {}
            StreamLogging::FullStream => {
                ctx.archive_file("stream", std::mem::take(&mut self.stream_lines))?;
            }
            StreamLogging::Snapshots { .. } => {
                let header = BookSnapshot::csv_header(self.snapshot_levels);
                for (sym, rows) in std::mem::take(&mut self.snapshot_rows) {
                    let mut text = header.clone();
                    text.push('\n');
                    for r in rows {
                        text.push_str(&r);
                        text.push('\n');
                    }
                    ctx.archive_file(&format!("{sym}.snapshots.csv"), text)?;
                }
            }
        }
        Ok(())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
