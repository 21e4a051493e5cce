//! Shared helpers for integration tests and the acceptance suite.
#![allow(dead_code)]

use marketsim::book::OrderBook;
use marketsim::kernel::AgentId;
use marketsim::message::{Cents, Order, OrderId, Shares, MKT_BUY, MKT_SELL};
use marketsim::time::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force matcher: a flat list of resting orders scanned linearly for the best
/// counterparty on every fill.
#[derive(Debug, Clone)]
pub struct ReferenceBook {
    pub resting: Vec<Order>,
    pub last_trade: Cents,
}

/// Bid and ask levels as (price, volume), best first.
pub type Depth = (Vec<(Cents, Shares)>, Vec<(Cents, Shares)>);

/// (resting id, incoming id, quantity, price)
pub type Fill = (OrderId, OrderId, Shares, Cents);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Submit(Order),
    Cancel(OrderId),
}

/// Observable result of one operation, comparable across implementations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Submitted { fills: Vec<Fill>, rested: Option<(OrderId, Shares, Cents)>, last_trade: Cents },
    Cancelled(Option<(OrderId, Shares)>),
}

impl ReferenceBook {
    pub fn new(open: Cents) -> Self {
        ReferenceBook { resting: Vec::new(), last_trade: open }
    }

    fn better(incoming_buy: bool, a: &Order, b: &Order) -> bool {
        let price_better = if incoming_buy { a.limit_price < b.limit_price } else { a.limit_price > b.limit_price };
        if a.limit_price != b.limit_price {
            return price_better;
        }
        (a.placement_time, a.order_id) < (b.placement_time, b.order_id)
    }

    pub fn submit(&mut self, mut order: Order) -> Outcome {
        let mut fills = Vec::new();
        loop {
            if order.quantity == 0 {
                break;
            }
            let mut best: Option<usize> = None;
            for (i, r) in self.resting.iter().enumerate() {
                if r.is_buy == order.is_buy {
                    continue;
                }
                let crosses =
                    if order.is_buy { r.limit_price <= order.limit_price } else { r.limit_price >= order.limit_price };
                if !crosses {
                    continue;
                }
                if best.is_none_or(|b| Self::better(order.is_buy, r, &self.resting[b])) {
                    best = Some(i);
                }
            }
            let Some(i) = best else { break };
            let q = self.resting[i].quantity.min(order.quantity);
            fills.push((self.resting[i].order_id, order.order_id, q, self.resting[i].limit_price));
            self.resting[i].quantity -= q;
            order.quantity -= q;
            if self.resting[i].quantity == 0 {
                self.resting.remove(i);
            }
        }
        if !fills.is_empty() {
            let notional: i128 = fills.iter().map(|f| f.2 as i128 * f.3 as i128).sum();
            let volume: i128 = fills.iter().map(|f| f.2 as i128).sum();
            // Prices are non-negative, so rounding half away from zero is rounding half up.
            self.last_trade = ((2 * notional + volume) / (2 * volume)) as Cents;
        }
        let rested = (order.quantity > 0).then_some((order.order_id, order.quantity, order.limit_price));
        if order.quantity > 0 {
            self.resting.push(order);
        }
        Outcome::Submitted { fills, rested, last_trade: self.last_trade }
    }

    pub fn cancel(&mut self, id: OrderId) -> Outcome {
        let found = self.resting.iter().position(|o| o.order_id == id).map(|i| self.resting.remove(i));
        Outcome::Cancelled(found.map(|o| (o.order_id, o.quantity)))
    }

    /// (price, aggregate volume) best-first per side.
    pub fn depth(&self) -> Depth {
        let side = |is_buy: bool| {
            let mut levels: Vec<(Cents, Shares)> = Vec::new();
            for o in self.resting.iter().filter(|o| o.is_buy == is_buy) {
                match levels.iter_mut().find(|l| l.0 == o.limit_price) {
                    Some(l) => l.1 += o.quantity,
                    None => levels.push((o.limit_price, o.quantity)),
                }
            }
            levels.sort_by_key(|l| if is_buy { -l.0 } else { l.0 });
            levels
        };
        (side(true), side(false))
    }

    /// Resting (id, quantity) pairs in priority order per side.
    pub fn queue_state(&self) -> Vec<(OrderId, Shares)> {
        let mut bids: Vec<&Order> = self.resting.iter().filter(|o| o.is_buy).collect();
        let mut asks: Vec<&Order> = self.resting.iter().filter(|o| !o.is_buy).collect();
        bids.sort_by_key(|o| (-o.limit_price, o.placement_time, o.order_id));
        asks.sort_by_key(|o| (o.limit_price, o.placement_time, o.order_id));
        bids.into_iter().chain(asks).map(|o| (o.order_id, o.quantity)).collect()
    }
}

pub fn apply_to_book(book: &mut OrderBook, op: &Op) -> Outcome {
    match op {
        Op::Submit(o) => {
            let out = book.submit(o.clone(), o.placement_time);
            Outcome::Submitted {
                fills: out
                    .executions
                    .iter()
                    .map(|e| (e.resting_order_id, e.incoming_order_id, e.quantity, e.price))
                    .collect(),
                rested: out.accepted.map(|r| (r.order_id, r.quantity, r.limit_price)),
                last_trade: book.last_trade(),
            }
        }
        Op::Cancel(id) => Outcome::Cancelled(book.cancel(*id).map(|o| (o.order_id, o.quantity))),
    }
}

pub fn book_depth(book: &OrderBook) -> Depth {
    let (b, a) = book.depth(usize::MAX);
    (b.iter().map(|l| (l.price, l.volume)).collect(), a.iter().map(|l| (l.price, l.volume)).collect())
}

pub const OPEN_PRICE: Cents = 10_000;

/// Up to 20 operations: limit orders near 10_000, occasional sentinel market orders,
/// cancels of earlier ids and unknown ids, colliding placement times and shuffled ids.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> Vec<Op> {
    let len = rng.random_range(1..=20);
    let mut ops = Vec::with_capacity(len);
    let mut ids: Vec<OrderId> = Vec::new();
    let mut clock = 0i64;
    for _ in 0..len {
        if !ids.is_empty() && rng.random_bool(0.2) {
            let id = if rng.random_bool(0.85) {
                ids[rng.random_range(0..ids.len())]
            } else {
                1_000_000 + rng.random_range(0..10)
            };
            ops.push(Op::Cancel(id));
            continue;
        }
        // Mostly advancing time with ties; sometimes an earlier stamp to exercise ordering.
        clock += rng.random_range(0..3);
        let placed = if rng.random_bool(0.1) { clock - rng.random_range(0..5) } else { clock };
        let is_buy = rng.random_bool(0.5);
        let limit_price = if rng.random_bool(0.08) {
            if is_buy {
                MKT_BUY
            } else {
                MKT_SELL
            }
        } else {
            OPEN_PRICE + rng.random_range(-5..=5)
        };
        let id = loop {
            let candidate = rng.random_range(1..500u64);
            if !ids.contains(&candidate) {
                break candidate;
            }
        };
        ids.push(id);
        ops.push(Op::Submit(Order {
            order_id: id,
            agent_id: AgentId(rng.random_range(1..6)),
            symbol: "IBM".into(),
            is_buy,
            quantity: rng.random_range(1..=100),
            limit_price,
            placement_time: SimTime(placed),
        }));
    }
    ops
}

/// Replays `ops` through both matchers; the first divergence, if any, as a description.
pub fn compare_scenario(ops: &[Op]) -> Result<(), String> {
    let mut book = OrderBook::new("IBM", OPEN_PRICE);
    let mut reference = ReferenceBook::new(OPEN_PRICE);
    for (step, op) in ops.iter().enumerate() {
        let got = apply_to_book(&mut book, op);
        let want = match op {
            Op::Submit(o) => reference.submit(o.clone()),
            Op::Cancel(id) => reference.cancel(*id),
        };
        if got != want {
            return Err(format!("step {step} {op:?}: book {got:?}, reference {want:?}"));
        }
        if book_depth(&book) != reference.depth() {
            return Err(format!("step {step}: depth {:?} vs {:?}", book_depth(&book), reference.depth()));
        }
        let queues: Vec<(OrderId, Shares)> = book.orders().map(|o| (o.order_id, o.quantity)).collect();
        if queues != reference.queue_state() {
            return Err(format!("step {step}: queues {queues:?} vs {:?}", reference.queue_state()));
        }
    }
    Ok(())
}

pub fn scenario_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Path to a bundled example configuration.
pub fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}
