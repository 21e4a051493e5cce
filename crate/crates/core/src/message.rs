//! Message vocabulary exchanged between agents, and its single-line log encoding.
//!
//! # Line grammar
//!
//! ```text
//! line     = KIND " from=" u32 " to=" u32 " sent=" i64 " dlv=" i64 *(" " field)
//! field    = name "=" value
//! ```
//!
//! Body fields follow the envelope in a fixed order per kind (see [`Body`]).
//! Orders expand to `id agent sym side qty px placed`; depth ladders are
//! `price x volume` pairs joined by commas (`bids=10000x150,9990x20`, empty
//! when the side is empty). Free text (symbols, reasons) is percent-escaped
//! for `%`, space, `=`, `,` and control characters, so a record never
//! spans lines and never splits ambiguously.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::kernel::AgentId;
use crate::time::SimTime;

/// Integer cents.
pub type Cents = i64;
/// Signed share count.
pub type Shares = i64;
pub type OrderId = u64;

/// Limit price used to simulate a market buy.
pub const MKT_BUY: Cents = (1 << 31) - 1;
/// Limit price used to simulate a market sell.
pub const MKT_SELL: Cents = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Order {
    pub order_id: OrderId,
    pub agent_id: AgentId,
    pub symbol: String,
    pub is_buy: bool,
    pub quantity: Shares,
    pub limit_price: Cents,
    pub placement_time: SimTime,
}

/// Aggregate volume resting at one price.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriceLevelSummary {
    pub price: Cents,
    pub volume: Shares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    MarketOpenTime,
    MarketCloseTime,
    QueryLastTrade,
    QuerySpread,
    LimitOrder,
    CancelOrder,
    OrderAccepted,
    OrderExecuted,
    OrderCancelled,
    QueryLastTradeResponse,
    QuerySpreadResponse,
    MarketOpenTimeResponse,
    MarketCloseTimeResponse,
    MarketClosed,
    WakeupCall,
}

impl MessageKind {
    pub const ALL: [MessageKind; 15] = [
        MessageKind::MarketOpenTime,
        MessageKind::MarketCloseTime,
        MessageKind::QueryLastTrade,
        MessageKind::QuerySpread,
        MessageKind::LimitOrder,
        MessageKind::CancelOrder,
        MessageKind::OrderAccepted,
        MessageKind::OrderExecuted,
        MessageKind::OrderCancelled,
        MessageKind::QueryLastTradeResponse,
        MessageKind::QuerySpreadResponse,
        MessageKind::MarketOpenTimeResponse,
        MessageKind::MarketCloseTimeResponse,
        MessageKind::MarketClosed,
        MessageKind::WakeupCall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::MarketOpenTime => "MARKET_OPEN_TIME",
            MessageKind::MarketCloseTime => "MARKET_CLOSE_TIME",
            MessageKind::QueryLastTrade => "QUERY_LAST_TRADE",
            MessageKind::QuerySpread => "QUERY_SPREAD",
            MessageKind::LimitOrder => "LIMIT_ORDER",
            MessageKind::CancelOrder => "CANCEL_ORDER",
            MessageKind::OrderAccepted => "ORDER_ACCEPTED",
            MessageKind::OrderExecuted => "ORDER_EXECUTED",
            MessageKind::OrderCancelled => "ORDER_CANCELLED",
            MessageKind::QueryLastTradeResponse => "QUERY_LAST_TRADE_RESPONSE",
            MessageKind::QuerySpreadResponse => "QUERY_SPREAD_RESPONSE",
            MessageKind::MarketOpenTimeResponse => "MARKET_OPEN_TIME_RESPONSE",
            MessageKind::MarketCloseTimeResponse => "MARKET_CLOSE_TIME_RESPONSE",
            MessageKind::MarketClosed => "MARKET_CLOSED",
            MessageKind::WakeupCall => "WAKEUP_CALL",
        }
    }

    /// Kinds an exchange is expected to answer.
    pub fn is_request(self) -> bool {
        matches!(
            self,
            MessageKind::MarketOpenTime
                | MessageKind::MarketCloseTime
                | MessageKind::QueryLastTrade
                | MessageKind::QuerySpread
                | MessageKind::LimitOrder
                | MessageKind::CancelOrder
        )
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| DecodeError::UnknownKind(s.to_string()))
    }
}

/// Kind-specific payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    MarketOpenTime,
    MarketCloseTime,
    QueryLastTrade {
        symbol: String,
    },
    /// `depth` best levels per side; depth 1 is the spread.
    QuerySpread {
        symbol: String,
        depth: u32,
    },
    LimitOrder {
        order: Order,
    },
    CancelOrder {
        order: Order,
    },
    OrderAccepted {
        order: Order,
    },
    OrderExecuted {
        order_id: OrderId,
        symbol: String,
        is_buy: bool,
        quantity: Shares,
        price: Cents,
    },
    OrderCancelled {
        order: Order,
    },
    QueryLastTradeResponse {
        symbol: String,
        price: Cents,
        market_closed: bool,
    },
    QuerySpreadResponse {
        symbol: String,
        depth: u32,
        last_trade: Cents,
        bids: Vec<PriceLevelSummary>,
        asks: Vec<PriceLevelSummary>,
    },
    MarketOpenTimeResponse {
        time: SimTime,
    },
    MarketCloseTimeResponse {
        time: SimTime,
    },
    MarketClosed {
        reason: String,
    },
    WakeupCall,
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::MarketOpenTime => MessageKind::MarketOpenTime,
            Body::MarketCloseTime => MessageKind::MarketCloseTime,
            Body::QueryLastTrade { .. } => MessageKind::QueryLastTrade,
            Body::QuerySpread { .. } => MessageKind::QuerySpread,
            Body::LimitOrder { .. } => MessageKind::LimitOrder,
            Body::CancelOrder { .. } => MessageKind::CancelOrder,
            Body::OrderAccepted { .. } => MessageKind::OrderAccepted,
            Body::OrderExecuted { .. } => MessageKind::OrderExecuted,
            Body::OrderCancelled { .. } => MessageKind::OrderCancelled,
            Body::QueryLastTradeResponse { .. } => MessageKind::QueryLastTradeResponse,
            Body::QuerySpreadResponse { .. } => MessageKind::QuerySpreadResponse,
            Body::MarketOpenTimeResponse { .. } => MessageKind::MarketOpenTimeResponse,
            Body::MarketCloseTimeResponse { .. } => MessageKind::MarketCloseTimeResponse,
            Body::MarketClosed { .. } => MessageKind::MarketClosed,
            Body::WakeupCall => MessageKind::WakeupCall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub sender: AgentId,
    pub recipient: AgentId,
    pub sent_time: SimTime,
    pub delivery_time: SimTime,
    pub body: Body,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn encode(&self) -> String {
        encode_record(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("empty record")]
    Empty,
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("expected field `{expected}`, found {found:?}")]
    UnexpectedField { expected: &'static str, found: String },
    #[error("invalid value for field `{field}`: {value:?}")]
    InvalidValue { field: &'static str, value: String },
    #[error("unexpected trailing field {0:?}")]
    Trailing(String),
}

fn escape_into(out: &mut String, text: &str) {
    for c in text.chars() {
        match c {
            '%' | ' ' | '=' | ',' => write!(out, "%{:02X}", c as u32).unwrap(),
            c if c.is_control() => {
                let mut buf = [0u8; 4];
                for b in c.encode_utf8(&mut buf).bytes() {
                    write!(out, "%{b:02X}").unwrap();
                }
            }
            c => out.push(c),
        }
    }
}

fn unescape(field: &'static str, text: &str) -> Result<String, DecodeError> {
    let bad = || DecodeError::InvalidValue { field, value: text.to_string() };
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = text.get(i + 1..i + 3).ok_or_else(bad)?;
            out.push(u8::from_str_radix(hex, 16).map_err(|_| bad())?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| bad())
}

struct Writer(String);

impl Writer {
    fn num(&mut self, name: &str, v: impl fmt::Display) {
        write!(self.0, " {name}={v}").unwrap();
    }

    fn text(&mut self, name: &str, v: &str) {
        write!(self.0, " {name}=").unwrap();
        escape_into(&mut self.0, v);
    }

    fn side(&mut self, is_buy: bool) {
        self.0.push_str(if is_buy { " side=BUY" } else { " side=SELL" });
    }

    fn order(&mut self, o: &Order) {
        self.num("id", o.order_id);
        self.num("agent", o.agent_id.0);
        self.text("sym", &o.symbol);
        self.side(o.is_buy);
        self.num("qty", o.quantity);
        self.num("px", o.limit_price);
        self.num("placed", o.placement_time.0);
    }

    fn ladder(&mut self, name: &str, levels: &[PriceLevelSummary]) {
        write!(self.0, " {name}=").unwrap();
        for (i, l) in levels.iter().enumerate() {
            if i > 0 {
                self.0.push(',');
            }
            write!(self.0, "{}x{}", l.price, l.volume).unwrap();
        }
    }
}

/// Encodes a message as one log line.
pub fn encode_record(msg: &Message) -> String {
    let mut w = Writer(String::with_capacity(96));
    w.0.push_str(msg.kind().as_str());
    w.num("from", msg.sender.0);
    w.num("to", msg.recipient.0);
    w.num("sent", msg.sent_time.0);
    w.num("dlv", msg.delivery_time.0);
    match &msg.body {
        Body::MarketOpenTime | Body::MarketCloseTime | Body::WakeupCall => {}
        Body::QueryLastTrade { symbol } => w.text("sym", symbol),
        Body::QuerySpread { symbol, depth } => {
            w.text("sym", symbol);
            w.num("depth", depth);
        }
        Body::LimitOrder { order }
        | Body::CancelOrder { order }
        | Body::OrderAccepted { order }
        | Body::OrderCancelled { order } => w.order(order),
        Body::OrderExecuted { order_id, symbol, is_buy, quantity, price } => {
            w.num("id", order_id);
            w.text("sym", symbol);
            w.side(*is_buy);
            w.num("qty", quantity);
            w.num("px", price);
        }
        Body::QueryLastTradeResponse { symbol, price, market_closed } => {
            w.text("sym", symbol);
            w.num("px", price);
            w.num("closed", u8::from(*market_closed));
        }
        Body::QuerySpreadResponse { symbol, depth, last_trade, bids, asks } => {
            w.text("sym", symbol);
            w.num("depth", depth);
            w.num("last", last_trade);
            w.ladder("bids", bids);
            w.ladder("asks", asks);
        }
        Body::MarketOpenTimeResponse { time } | Body::MarketCloseTimeResponse { time } => w.num("time", time.0),
        Body::MarketClosed { reason } => w.text("reason", reason),
    }
    w.0
}

struct Reader<'a> {
    tokens: std::str::Split<'a, char>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, name: &'static str) -> Result<&'a str, DecodeError> {
        let token = self.tokens.next().ok_or(DecodeError::Missing(name))?;
        match token.split_once('=') {
            Some((k, v)) if k == name => Ok(v),
            _ => Err(DecodeError::UnexpectedField { expected: name, found: token.to_string() }),
        }
    }

    fn num<T: FromStr>(&mut self, name: &'static str) -> Result<T, DecodeError> {
        let v = self.raw(name)?;
        v.parse().map_err(|_| DecodeError::InvalidValue { field: name, value: v.to_string() })
    }

    fn text(&mut self, name: &'static str) -> Result<String, DecodeError> {
        let v = self.raw(name)?;
        unescape(name, v)
    }

    fn side(&mut self) -> Result<bool, DecodeError> {
        match self.raw("side")? {
            "BUY" => Ok(true),
            "SELL" => Ok(false),
            other => Err(DecodeError::InvalidValue { field: "side", value: other.to_string() }),
        }
    }

    fn flag(&mut self, name: &'static str) -> Result<bool, DecodeError> {
        match self.raw(name)? {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(DecodeError::InvalidValue { field: name, value: other.to_string() }),
        }
    }

    fn order(&mut self) -> Result<Order, DecodeError> {
        Ok(Order {
            order_id: self.num("id")?,
            agent_id: AgentId(self.num("agent")?),
            symbol: self.text("sym")?,
            is_buy: self.side()?,
            quantity: self.num("qty")?,
            limit_price: self.num("px")?,
            placement_time: SimTime(self.num("placed")?),
        })
    }

    fn ladder(&mut self, name: &'static str) -> Result<Vec<PriceLevelSummary>, DecodeError> {
        let v = self.raw(name)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|pair| {
                let bad = || DecodeError::InvalidValue { field: name, value: pair.to_string() };
                let (p, q) = pair.split_once('x').ok_or_else(bad)?;
                Ok(PriceLevelSummary { price: p.parse().map_err(|_| bad())?, volume: q.parse().map_err(|_| bad())? })
            })
            .collect()
    }
}

/// Parses a line produced by [`encode_record`].
pub fn decode_record(line: &str) -> Result<Message, DecodeError> {
    let line = line.trim_end_matches(['\n', '\r']);
    if line.is_empty() {
        return Err(DecodeError::Empty);
    }
    let mut tokens = line.split(' ');
    let kind: MessageKind = tokens.next().unwrap_or_default().parse()?;
    let mut r = Reader { tokens };
    let sender = AgentId(r.num("from")?);
    let recipient = AgentId(r.num("to")?);
    let sent_time = SimTime(r.num("sent")?);
    let delivery_time = SimTime(r.num("dlv")?);
    let body = match kind {
        MessageKind::MarketOpenTime => Body::MarketOpenTime,
        MessageKind::MarketCloseTime => Body::MarketCloseTime,
        MessageKind::WakeupCall => Body::WakeupCall,
        MessageKind::QueryLastTrade => Body::QueryLastTrade { symbol: r.text("sym")? },
        MessageKind::QuerySpread => Body::QuerySpread { symbol: r.text("sym")?, depth: r.num("depth")? },
        MessageKind::LimitOrder => Body::LimitOrder { order: r.order()? },
        MessageKind::CancelOrder => Body::CancelOrder { order: r.order()? },
        MessageKind::OrderAccepted => Body::OrderAccepted { order: r.order()? },
        MessageKind::OrderCancelled => Body::OrderCancelled { order: r.order()? },
        MessageKind::OrderExecuted => Body::OrderExecuted {
            order_id: r.num("id")?,
            symbol: r.text("sym")?,
            is_buy: r.side()?,
            quantity: r.num("qty")?,
            price: r.num("px")?,
        },
        MessageKind::QueryLastTradeResponse => Body::QueryLastTradeResponse {
            symbol: r.text("sym")?,
            price: r.num("px")?,
            market_closed: r.flag("closed")?,
        },
        MessageKind::QuerySpreadResponse => Body::QuerySpreadResponse {
            symbol: r.text("sym")?,
            depth: r.num("depth")?,
            last_trade: r.num("last")?,
            bids: r.ladder("bids")?,
            asks: r.ladder("asks")?,
        },
        MessageKind::MarketOpenTimeResponse => Body::MarketOpenTimeResponse { time: SimTime(r.num("time")?) },
        MessageKind::MarketCloseTimeResponse => Body::MarketCloseTimeResponse { time: SimTime(r.num("time")?) },
        MessageKind::MarketClosed => Body::MarketClosed { reason: r.text("reason")? },
    };
    if let Some(extra) = r.tokens.next() {
        return Err(DecodeError::Trailing(extra.to_string()));
    }
    Ok(Message { sender, recipient, sent_time, delivery_time, body })
}

fn check_order(order: &Order, require_quantity: bool, out: &mut Vec<String>) {
    if require_quantity && order.quantity <= 0 {
        out.push("quantity must be positive".to_string());
    }
    if order.quantity < 0 {
        out.push("quantity must be non-negative".to_string());
    }
    if order.limit_price < 0 {
        out.push("limit price must be non-negative".to_string());
    }
    if order.symbol.is_empty() {
        out.push("symbol must be non-empty".to_string());
    }
}

fn check_ladder(side: &str, levels: &[PriceLevelSummary], out: &mut Vec<String>) {
    for l in levels {
        if l.price < 0 {
            out.push(format!("{side} level price must be non-negative"));
        }
        if l.volume <= 0 {
            out.push(format!("{side} level volume must be positive"));
        }
    }
}

/// Checks body-schema invariants. An empty result means the message is well formed.
pub fn validate(msg: &Message) -> Vec<String> {
    let mut out = Vec::new();
    if msg.delivery_time < msg.sent_time {
        out.push("delivery time precedes sent time".to_string());
    }
    let require_symbol = |symbol: &str, out: &mut Vec<String>| {
        if symbol.is_empty() {
            out.push("symbol must be non-empty".to_string());
        }
    };
    match &msg.body {
        Body::MarketOpenTime | Body::MarketCloseTime | Body::WakeupCall => {}
        Body::MarketOpenTimeResponse { .. } | Body::MarketCloseTimeResponse { .. } => {}
        Body::MarketClosed { .. } => {}
        Body::QueryLastTrade { symbol } => require_symbol(symbol, &mut out),
        Body::QuerySpread { symbol, depth } => {
            require_symbol(symbol, &mut out);
            if *depth < 1 {
                out.push("depth must be at least 1".to_string());
            }
        }
        Body::LimitOrder { order } => check_order(order, true, &mut out),
        Body::OrderAccepted { order } => check_order(order, true, &mut out),
        Body::CancelOrder { order } | Body::OrderCancelled { order } => check_order(order, false, &mut out),
        Body::OrderExecuted { symbol, quantity, price, .. } => {
            require_symbol(symbol, &mut out);
            if *quantity <= 0 {
                out.push("quantity must be positive".to_string());
            }
            if *price < 0 {
                out.push("price must be non-negative".to_string());
            }
        }
        Body::QueryLastTradeResponse { symbol, price, .. } => {
            require_symbol(symbol, &mut out);
            if *price < 0 {
                out.push("price must be non-negative".to_string());
            }
        }
        Body::QuerySpreadResponse { symbol, depth, bids, asks, .. } => {
            require_symbol(symbol, &mut out);
            if *depth < 1 {
                out.push("depth must be at least 1".to_string());
            }
            check_ladder("bid", bids, &mut out);
            check_ladder("ask", asks, &mut out);
        }
    }
    out
}
