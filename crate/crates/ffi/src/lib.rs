//! C ABI for embedding the simulator.
//!
//! Every fallible function returns an [`MsStatus`]. On failure a description is kept
//! per thread and can be fetched with [`ms_last_error`]. Handles are opaque and must be
//! released with their matching `*_free` function. Strings are NUL-terminated UTF-8.
//!
//! Functions that fill a caller buffer always store the required length, excluding the
//! terminating NUL, in `out_len`, and return [`MsStatus::BufferTooSmall`] when
//! `capacity` cannot hold it plus the NUL.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use marketsim::book::{Execution, OrderBook};
use marketsim::config::ExperimentConfig;
use marketsim::kernel::AgentId;
use marketsim::message::{decode_record, validate, Order};
use marketsim::rng;
use marketsim::runner::{exchange_trades, run_experiment, RunOutput};
use marketsim::time::SimTime;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    BufferTooSmall = 4,
    Config = 5,
    RunFailed = 6,
    Io = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: MsStatus, msg: impl Into<String>) -> MsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MsStatus) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(panic) => {
            let text = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            fail(MsStatus::Panic, text)
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, MsStatus> {
    if ptr.is_null() {
        return Err(fail(MsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| fail(MsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_str(text: &str, buf: *mut c_char, capacity: usize, out_len: *mut usize) -> MsStatus {
    if out_len.is_null() {
        return fail(MsStatus::NullPointer, "out_len is null");
    }
    *out_len = text.len();
    if buf.is_null() || capacity < text.len() + 1 {
        return fail(MsStatus::BufferTooSmall, format!("need {} bytes", text.len() + 1));
    }
    std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    MsStatus::Ok
}

macro_rules! out_ptr {
    ($p:expr) => {
        if $p.is_null() {
            return fail(MsStatus::NullPointer, concat!(stringify!($p), " is null"));
        }
    };
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Copies the calling thread's most recent error message.
#[no_mangle]
pub unsafe extern "C" fn ms_last_error(buf: *mut c_char, capacity: usize, out_len: *mut usize) -> MsStatus {
    let text = LAST_ERROR.with(|e| e.borrow().clone());
    write_str(&text, buf, capacity, out_len)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ms_agent_seed(master_seed: u64, agent: u32) -> u64 {
    rng::agent_seed(master_seed, AgentId(agent))
}

#[no_mangle]
pub extern "C" fn ms_jitter_seed(master_seed: u64, from: u32, to: u32) -> u64 {
    rng::jitter_seed(master_seed, AgentId(from), AgentId(to))
}

#[no_mangle]
pub unsafe extern "C" fn ms_oracle_seed(master_seed: u64, symbol: *const c_char, out_seed: *mut u64) -> MsStatus {
    guard(|| {
        out_ptr!(out_seed);
        let symbol = try_ffi!(read_str(symbol, "symbol"));
        *out_seed = rng::oracle_seed(master_seed, symbol);
        MsStatus::Ok
    })
}

/// One fill, as reported by [`ms_book_execution`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MsExecution {
    pub resting_order_id: u64,
    pub incoming_order_id: u64,
    pub resting_agent: u32,
    pub incoming_agent: u32,
    pub incoming_is_buy: bool,
    pub quantity: i64,
    pub price: i64,
    pub time_ns: i64,
}

impl From<&Execution> for MsExecution {
    fn from(e: &Execution) -> Self {
        MsExecution {
            resting_order_id: e.resting_order_id,
            incoming_order_id: e.incoming_order_id,
            resting_agent: e.resting_agent.0,
            incoming_agent: e.incoming_agent.0,
            incoming_is_buy: e.incoming_is_buy,
            quantity: e.quantity,
            price: e.price,
            time_ns: e.time.0,
        }
    }
}

/// Opaque single-symbol order book.
pub struct MsBook {
    book: OrderBook,
    last_executions: Vec<Execution>,
}

#[no_mangle]
pub unsafe extern "C" fn ms_book_new(symbol: *const c_char, open_price: i64, out_book: *mut *mut MsBook) -> MsStatus {
    guard(|| {
        out_ptr!(out_book);
        let symbol = try_ffi!(read_str(symbol, "symbol"));
        if open_price <= 0 {
            return fail(MsStatus::InvalidArgument, "open price must be positive");
        }
        let handle = MsBook { book: OrderBook::new(symbol, open_price), last_executions: Vec::new() };
        *out_book = Box::into_raw(Box::new(handle));
        MsStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn ms_book_free(book: *mut MsBook) {
    if !book.is_null() {
        drop(Box::from_raw(book));
    }
}

/// Matches a limit order. `out_filled` and `out_rested` receive the executed and resting
/// quantities; the fills themselves are available through [`ms_book_execution`].
#[no_mangle]
pub unsafe extern "C" fn ms_book_submit(
    book: *mut MsBook,
    order_id: u64,
    agent: u32,
    is_buy: bool,
    quantity: i64,
    limit_price: i64,
    time_ns: i64,
    out_filled: *mut i64,
    out_rested: *mut i64,
) -> MsStatus {
    guard(|| {
        out_ptr!(book);
        out_ptr!(out_filled);
        out_ptr!(out_rested);
        if quantity <= 0 || limit_price < 0 {
            return fail(MsStatus::InvalidArgument, "quantity must be positive and price non-negative");
        }
        let handle = &mut *book;
        if handle.book.contains(order_id) {
            return fail(MsStatus::InvalidArgument, format!("order {order_id} is already resting"));
        }
        let order = Order {
            order_id,
            agent_id: AgentId(agent),
            symbol: handle.book.symbol().to_string(),
            is_buy,
            quantity,
            limit_price,
            placement_time: SimTime(time_ns),
        };
        let outcome = handle.book.submit(order, SimTime(time_ns));
        *out_filled = outcome.executions.iter().map(|e| e.quantity).sum();
        *out_rested = outcome.accepted.map_or(0, |o| o.quantity);
        handle.last_executions = outcome.executions;
        MsStatus::Ok
    })
}

/// Number of fills produced by the most recent submit.
#[no_mangle]
pub unsafe extern "C" fn ms_book_execution_count(book: *const MsBook, out_count: *mut usize) -> MsStatus {
    guard(|| {
        out_ptr!(book);
        out_ptr!(out_count);
        *out_count = (*book).last_executions.len();
        MsStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn ms_book_execution(
    book: *const MsBook,
    index: usize,
    out_execution: *mut MsExecution,
) -> MsStatus {
    guard(|| {
        out_ptr!(book);
        out_ptr!(out_execution);
        match (&*book).last_executions.get(index) {
            Some(e) => {
                *out_execution = e.into();
                MsStatus::Ok
            }
            None => fail(MsStatus::NotFound, format!("no execution {index}")),
        }
    })
}

/// Removes a resting order; `NotFound` if it is not in the book.
#[no_mangle]
pub unsafe extern "C" fn ms_book_cancel(book: *mut MsBook, order_id: u64, out_quantity: *mut i64) -> MsStatus {
    guard(|| {
        out_ptr!(book);
        out_ptr!(out_quantity);
        match (*book).book.cancel(order_id) {
            Some(o) => {
                *out_quantity = o.quantity;
                MsStatus::Ok
            }
            None => fail(MsStatus::NotFound, format!("order {order_id} is not resting")),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ms_book_last_trade(book: *const MsBook, out_price: *mut i64) -> MsStatus {
    guard(|| {
        out_ptr!(book);
        out_ptr!(out_price);
        *out_price = (*book).book.last_trade();
        MsStatus::Ok
    })
}

/// Best bid, or `NotFound` when the bid side is empty.
#[no_mangle]
pub unsafe extern "C" fn ms_book_best_bid(book: *const MsBook, out_price: *mut i64) -> MsStatus {
    guard(|| {
        out_ptr!(book);
        out_ptr!(out_price);
        match (*book).book.best_bid() {
            Some(p) => {
                *out_price = p;
                MsStatus::Ok
            }
            None => fail(MsStatus::NotFound, "no bids"),
        }
    })
}

/// Best ask, or `NotFound` when the ask side is empty.
#[no_mangle]
pub unsafe extern "C" fn ms_book_best_ask(book: *const MsBook, out_price: *mut i64) -> MsStatus {
    guard(|| {
        out_ptr!(book);
        out_ptr!(out_price);
        match (*book).book.best_ask() {
            Some(p) => {
                *out_price = p;
                MsStatus::Ok
            }
            None => fail(MsStatus::NotFound, "no asks"),
        }
    })
}

/// Opaque completed simulation.
pub struct MsRun {
    output: RunOutput,
}

/// Loads a TOML configuration, applies `override_count` `path=value` overrides and runs it
/// in memory.
#[no_mangle]
pub unsafe extern "C" fn ms_run_config(
    config_path: *const c_char,
    overrides: *const *const c_char,
    override_count: usize,
    out_run: *mut *mut MsRun,
) -> MsStatus {
    guard(|| {
        out_ptr!(out_run);
        let path = try_ffi!(read_str(config_path, "config_path"));
        if overrides.is_null() && override_count > 0 {
            return fail(MsStatus::NullPointer, "overrides is null");
        }
        let mut list = Vec::with_capacity(override_count);
        for i in 0..override_count {
            list.push(try_ffi!(read_str(*overrides.add(i), "override")).to_string());
        }
        let cfg = match ExperimentConfig::load(Path::new(path), &list) {
            Ok(cfg) => cfg,
            Err(e) => return fail(MsStatus::Config, e.to_string()),
        };
        match run_experiment(&cfg, false) {
            Ok(output) => {
                *out_run = Box::into_raw(Box::new(MsRun { output }));
                MsStatus::Ok
            }
            Err(e) => fail(MsStatus::RunFailed, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ms_run_free(run: *mut MsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Writes every artifact and the manifest into `dir`, creating it if needed.
#[no_mangle]
pub unsafe extern "C" fn ms_run_write(run: *const MsRun, dir: *const c_char) -> MsStatus {
    guard(|| {
        out_ptr!(run);
        let dir = try_ffi!(read_str(dir, "dir"));
        match (*run).output.write_to(Path::new(dir)) {
            Ok(()) => MsStatus::Ok,
            Err(e) => fail(MsStatus::Io, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ms_run_manifest_json(
    run: *const MsRun,
    buf: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> MsStatus {
    guard(|| {
        out_ptr!(run);
        write_str(&(*run).output.manifest.to_json(), buf, capacity, out_len)
    })
}

/// Trades printed by the run's exchange.
#[no_mangle]
pub unsafe extern "C" fn ms_run_trade_count(run: *const MsRun, out_count: *mut usize) -> MsStatus {
    guard(|| {
        out_ptr!(run);
        out_ptr!(out_count);
        let out = &(*run).output;
        let Some(ex) = out.manifest.agents.iter().find(|a| a.kind == "exchange") else {
            return fail(MsStatus::NotFound, "run has no exchange");
        };
        *out_count = exchange_trades(&out.log(ex).unwrap_or_default()).len();
        MsStatus::Ok
    })
}

/// Decodes one wire-format line and checks it. Problems, one per line, go to `buf`;
/// an empty result means the record is valid.
#[no_mangle]
pub unsafe extern "C" fn ms_record_validate(
    line: *const c_char,
    buf: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> MsStatus {
    guard(|| {
        let line = try_ffi!(read_str(line, "line"));
        let problems = match decode_record(line) {
            Ok(msg) => validate(&msg).join("\n"),
            Err(e) => e.to_string(),
        };
        write_str(&problems, buf, capacity, out_len)
    })
}

/// Re-encodes a wire-format line in canonical form.
#[no_mangle]
pub unsafe extern "C" fn ms_record_canonical(
    line: *const c_char,
    buf: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> MsStatus {
    guard(|| {
        let line = try_ffi!(read_str(line, "line"));
        match decode_record(line) {
            Ok(msg) => write_str(&msg.encode(), buf, capacity, out_len),
            Err(e) => fail(MsStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_str_reports_length_even_when_too_small() {
        let mut buf = [1 as c_char; 3];
        let mut len = 0;
        assert_eq!(unsafe { write_str("abc", buf.as_mut_ptr(), 3, &mut len) }, MsStatus::BufferTooSmall);
        assert_eq!(len, 3);
        assert_eq!(unsafe { write_str("ab", buf.as_mut_ptr(), 3, &mut len) }, MsStatus::Ok);
        assert_eq!(buf, [b'a' as c_char, b'b' as c_char, 0]);
    }

    #[test]
    fn panics_become_status_codes() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, MsStatus::Panic);
        assert_eq!(LAST_ERROR.with(|e| e.borrow().clone()), "boom");
    }
}
