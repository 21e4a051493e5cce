//! Continuous double auction order book for a single symbol.
//!
//! Matching is price-time priority: an incoming order trades against the best
//! opposite price level first and, within a level, against the oldest order
//! (placement time, then order id). Every fill executes at the resting order's
//! price. Any unfilled remainder rests at the incoming order's limit price.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::kernel::AgentId;
use crate::message::{Cents, Order, OrderId, PriceLevelSummary, Shares};
use crate::time::SimTime;

/// One fill between a resting and an incoming order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub resting_order_id: OrderId,
    pub resting_agent: AgentId,
    pub incoming_order_id: OrderId,
    pub incoming_agent: AgentId,
    /// Side of the incoming order.
    pub incoming_is_buy: bool,
    pub quantity: Shares,
    pub price: Cents,
    pub time: SimTime,
}

impl Execution {
    pub fn buyer(&self) -> AgentId {
        if self.incoming_is_buy {
            self.incoming_agent
        } else {
            self.resting_agent
        }
    }

    pub fn seller(&self) -> AgentId {
        if self.incoming_is_buy {
            self.resting_agent
        } else {
            self.incoming_agent
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub executions: Vec<Execution>,
    /// Remainder added to the book, if any.
    pub accepted: Option<Order>,
}

impl SubmitOutcome {
    pub fn filled_quantity(&self) -> Shares {
        self.executions.iter().map(|e| e.quantity).sum()
    }
}

/// Top-of-book view used for periodic archival.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BookSnapshot {
    pub time: SimTime,
    pub last_trade: Cents,
    pub bids: Vec<PriceLevelSummary>,
    pub asks: Vec<PriceLevelSummary>,
}

impl BookSnapshot {
    pub fn csv_header(levels: usize) -> String {
        let mut cols = vec!["timestamp_ns".to_string(), "last_trade".to_string()];
        for k in 1..=levels {
            cols.extend([
                format!("bid_price_{k}"),
                format!("bid_vol_{k}"),
                format!("ask_price_{k}"),
                format!("ask_vol_{k}"),
            ]);
        }
        cols.join(",")
    }

    /// `timestamp,last_trade` followed by `levels` groups of `bid_px,bid_vol,ask_px,ask_vol`.
    /// Missing levels leave their cells empty.
    pub fn csv_row(&self, levels: usize) -> String {
        let mut row = format!("{},{}", self.time.0, self.last_trade);
        let cell = |l: Option<&PriceLevelSummary>| match l {
            Some(l) => (l.price.to_string(), l.volume.to_string()),
            None => (String::new(), String::new()),
        };
        for k in 0..levels {
            let (bp, bv) = cell(self.bids.get(k));
            let (ap, av) = cell(self.asks.get(k));
            row.push_str(&format!(",{bp},{bv},{ap},{av}"));
        }
        row
    }
}

#[derive(Debug, Clone, Copy)]
struct Location {
    is_buy: bool,
    price: Cents,
}

#[derive(Debug, Clone)]
pub struct OrderBook {
    symbol: String,
    bids: BTreeMap<Cents, VecDeque<Order>>,
    asks: BTreeMap<Cents, VecDeque<Order>>,
    index: HashMap<OrderId, Location>,
    last_trade: Cents,
    next_execution_id: u64,
}

/// Quantity-weighted mean price rounded to the nearest cent, halves away from zero.
pub fn average_price(fills: impl IntoIterator<Item = (Shares, Cents)>) -> Option<Cents> {
    let (mut notional, mut volume) = (0i128, 0i128);
    for (q, p) in fills {
        notional += i128::from(q) * i128::from(p);
        volume += i128::from(q);
    }
    if volume <= 0 {
        return None;
    }
    let twice = 2 * notional;
    let rounded = if notional >= 0 { (twice + volume) / (2 * volume) } else { -((-twice + volume) / (2 * volume)) };
    Some(rounded as Cents)
}

impl OrderBook {
    /// An empty book whose last trade starts at the oracle open price.
    pub fn new(symbol: impl Into<String>, open_price: Cents) -> Self {
        OrderBook {
            symbol: symbol.into(),
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            index: HashMap::new(),
            last_trade: open_price,
            next_execution_id: 0,
        }
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn last_trade(&self) -> Cents {
        self.last_trade
    }

    pub fn executions_so_far(&self) -> u64 {
        self.next_execution_id
    }

    pub fn best_bid(&self) -> Option<Cents> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<Cents> {
        self.asks.keys().next().copied()
    }

    pub fn resting_orders(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, order_id: OrderId) -> bool {
        self.index.contains_key(&order_id)
    }

    /// All resting orders, bids best-first then asks best-first, each level in queue order.
    pub fn orders(&self) -> impl Iterator<Item = &Order> {
        self.bids.values().rev().chain(self.asks.values()).flatten()
    }

    /// Matches `order` against the book and rests any remainder.
    ///
    /// The order must have positive quantity; validation happens upstream.
    pub fn submit(&mut self, mut order: Order, now: SimTime) -> SubmitOutcome {
        debug_assert!(order.quantity > 0, "submitting non-positive quantity");
        let mut executions = Vec::new();

        while order.quantity > 0 {
            let opposite = if order.is_buy { &mut self.asks } else { &mut self.bids };
            let best = if order.is_buy {
                opposite.first_entry().filter(|e| *e.key() <= order.limit_price)
            } else {
                opposite.last_entry().filter(|e| *e.key() >= order.limit_price)
            };
            let Some(mut level) = best else { break };
            let price = *level.key();
            let queue = level.get_mut();
            let resting = queue.front_mut().expect("price levels are never empty");

            let qty = resting.quantity.min(order.quantity);
            resting.quantity -= qty;
            order.quantity -= qty;
            executions.push(Execution {
                resting_order_id: resting.order_id,
                resting_agent: resting.agent_id,
                incoming_order_id: order.order_id,
                incoming_agent: order.agent_id,
                incoming_is_buy: order.is_buy,
                quantity: qty,
                price,
                time: now,
            });
            self.next_execution_id += 1;

            if resting.quantity == 0 {
                let done = queue.pop_front().expect("front exists");
                self.index.remove(&done.order_id);
                if queue.is_empty() {
                    level.remove();
                }
            }
        }

        if let Some(avg) = average_price(executions.iter().map(|e| (e.quantity, e.price))) {
            self.last_trade = avg;
        }

        let accepted = (order.quantity > 0).then(|| {
            self.rest(order.clone());
            order
        });
        SubmitOutcome { executions, accepted }
    }

    fn rest(&mut self, order: Order) {
        let side = if order.is_buy { &mut self.bids } else { &mut self.asks };
        let queue = side.entry(order.limit_price).or_default();
        let key = (order.placement_time, order.order_id);
        // Arrivals are almost always the newest; scan from the back.
        let pos = queue.iter().rposition(|o| (o.placement_time, o.order_id) <= key).map_or(0, |p| p + 1);
        self.index.insert(order.order_id, Location { is_buy: order.is_buy, price: order.limit_price });
        queue.insert(pos, order);
    }

    /// Removes whatever remains of `order_id`. `None` when the order is not resting,
    /// which includes orders that executed in full before the cancel arrived.
    pub fn cancel(&mut self, order_id: OrderId) -> Option<Order> {
        let loc = self.index.remove(&order_id)?;
        let side = if loc.is_buy { &mut self.bids } else { &mut self.asks };
        let queue = side.get_mut(&loc.price).expect("indexed level exists");
        let pos = queue.iter().position(|o| o.order_id == order_id).expect("indexed order exists");
        let order = queue.remove(pos).expect("position is valid");
        if queue.is_empty() {
            side.remove(&loc.price);
        }
        Some(order)
    }

    fn summarize<'a>(
        levels: impl Iterator<Item = (&'a Cents, &'a VecDeque<Order>)>,
        n: usize,
    ) -> Vec<PriceLevelSummary> {
        levels
            .take(n)
            .map(|(&price, q)| PriceLevelSummary { price, volume: q.iter().map(|o| o.quantity).sum() })
            .collect()
    }

    /// Up to `n` best levels per side with aggregate volume, best first.
    pub fn depth(&self, n: usize) -> (Vec<PriceLevelSummary>, Vec<PriceLevelSummary>) {
        (Self::summarize(self.bids.iter().rev(), n), Self::summarize(self.asks.iter(), n))
    }

    pub fn snapshot(&self, time: SimTime, levels: usize) -> BookSnapshot {
        let (bids, asks) = self.depth(levels);
        BookSnapshot { time, last_trade: self.last_trade, bids, asks }
    }
}
