use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use marketsim_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let mut len = 0usize;
    unsafe { ms_last_error(buf.as_mut_ptr(), buf.len(), &mut len) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn new_book() -> *mut MsBook {
    let sym = CString::new("IBM").unwrap();
    let mut book = ptr::null_mut();
    assert_eq!(unsafe { ms_book_new(sym.as_ptr(), 10_000, &mut book) }, MsStatus::Ok);
    book
}

fn submit(book: *mut MsBook, id: u64, is_buy: bool, qty: i64, px: i64, t: i64) -> (MsStatus, i64, i64) {
    let (mut filled, mut rested) = (0, 0);
    let status = unsafe { ms_book_submit(book, id, 1, is_buy, qty, px, t, &mut filled, &mut rested) };
    (status, filled, rested)
}

#[test]
fn book_round_trip() {
    let book = new_book();
    assert_eq!(submit(book, 1, false, 60, 10_000, 1), (MsStatus::Ok, 0, 60));
    assert_eq!(submit(book, 2, false, 40, 10_010, 2), (MsStatus::Ok, 0, 40));
    assert_eq!(submit(book, 3, true, 80, 10_010, 3), (MsStatus::Ok, 80, 0));

    let mut n = 0;
    assert_eq!(unsafe { ms_book_execution_count(book, &mut n) }, MsStatus::Ok);
    assert_eq!(n, 2);
    let mut e = MsExecution::default();
    assert_eq!(unsafe { ms_book_execution(book, 1, &mut e) }, MsStatus::Ok);
    assert_eq!((e.resting_order_id, e.incoming_order_id, e.quantity, e.price), (2, 3, 20, 10_010));
    assert_eq!(unsafe { ms_book_execution(book, 2, &mut e) }, MsStatus::NotFound);

    let mut px = 0;
    assert_eq!(unsafe { ms_book_last_trade(book, &mut px) }, MsStatus::Ok);
    assert_eq!(px, 10_003); // (60 * 10000 + 20 * 10010) / 80, rounded
    assert_eq!(unsafe { ms_book_best_ask(book, &mut px) }, MsStatus::Ok);
    assert_eq!(px, 10_010);
    assert_eq!(unsafe { ms_book_best_bid(book, &mut px) }, MsStatus::NotFound);

    let mut qty = 0;
    assert_eq!(unsafe { ms_book_cancel(book, 2, &mut qty) }, MsStatus::Ok);
    assert_eq!(qty, 20);
    assert_eq!(unsafe { ms_book_cancel(book, 2, &mut qty) }, MsStatus::NotFound);
    assert!(last_error().contains("not resting"));
    unsafe { ms_book_free(book) };
}

#[test]
fn invalid_arguments_are_reported() {
    let book = new_book();
    assert_eq!(submit(book, 1, true, 0, 10_000, 1).0, MsStatus::InvalidArgument);
    assert_eq!(submit(book, 1, true, 5, 9_000, 1).0, MsStatus::Ok);
    assert_eq!(submit(book, 1, true, 5, 9_000, 2).0, MsStatus::InvalidArgument);
    assert!(last_error().contains("already resting"));
    let mut filled = 0;
    assert_eq!(
        unsafe { ms_book_submit(book, 9, 1, true, 1, 1, 0, &mut filled, ptr::null_mut()) },
        MsStatus::NullPointer
    );
    assert_eq!(unsafe { ms_book_last_trade(ptr::null(), &mut filled) }, MsStatus::NullPointer);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ms_book_new(ptr::null(), 1, &mut out) }, MsStatus::NullPointer);
    unsafe { ms_book_free(book) };
    unsafe { ms_book_free(ptr::null_mut()) };
}

#[test]
fn records_validate_and_canonicalize() {
    let good = CString::new(
        "LIMIT_ORDER from=3 to=0 sent=1050 dlv=1550 id=1 agent=3 sym=IBM side=BUY qty=100 px=10050 placed=1000",
    )
    .unwrap();
    let mut buf = vec![0 as c_char; 256];
    let mut len = 0;
    assert_eq!(unsafe { ms_record_validate(good.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len) }, MsStatus::Ok);
    assert_eq!(len, 0);
    assert_eq!(unsafe { ms_record_canonical(good.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len) }, MsStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes(), good.as_bytes());

    let mut tiny = vec![0 as c_char; 4];
    assert_eq!(
        unsafe { ms_record_canonical(good.as_ptr(), tiny.as_mut_ptr(), tiny.len(), &mut len) },
        MsStatus::BufferTooSmall
    );
    assert_eq!(len, good.as_bytes().len());

    let backwards = CString::new("MARKET_OPEN_TIME from=1 to=0 sent=500 dlv=100").unwrap();
    assert_eq!(unsafe { ms_record_validate(backwards.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len) }, MsStatus::Ok);
    assert!(len > 0);
    let bad = CString::new("FLASH_CRASH from=1 to=2 sent=0 dlv=0").unwrap();
    assert_eq!(
        unsafe { ms_record_canonical(bad.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len) },
        MsStatus::InvalidArgument
    );
}

#[test]
fn seeds_match_the_library() {
    use marketsim::kernel::AgentId;
    assert_eq!(ms_agent_seed(42, 7), marketsim::rng::agent_seed(42, AgentId(7)));
    assert_eq!(ms_jitter_seed(42, 1, 0), marketsim::rng::jitter_seed(42, AgentId(1), AgentId(0)));
    let sym = CString::new("IBM").unwrap();
    let mut seed = 0;
    assert_eq!(unsafe { ms_oracle_seed(42, sym.as_ptr(), &mut seed) }, MsStatus::Ok);
    assert_eq!(seed, marketsim::rng::oracle_seed(42, "IBM"));
}

fn core_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs").join(name)
}

#[test]
fn run_handle_writes_artifacts() {
    let path = CString::new(core_config("determinism.toml").to_str().unwrap()).unwrap();
    let overrides = [CString::new("stop=09:40:00").unwrap()];
    let ptrs: Vec<*const c_char> = overrides.iter().map(|s| s.as_ptr()).collect();
    let mut run = ptr::null_mut();
    assert_eq!(
        unsafe { ms_run_config(path.as_ptr(), ptrs.as_ptr(), ptrs.len(), &mut run) },
        MsStatus::Ok,
        "{}",
        last_error()
    );

    let mut trades = 0;
    assert_eq!(unsafe { ms_run_trade_count(run, &mut trades) }, MsStatus::Ok);
    assert!(trades > 0);
    let mut len = 0;
    assert_eq!(unsafe { ms_run_manifest_json(run, ptr::null_mut(), 0, &mut len) }, MsStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; len + 1];
    assert_eq!(unsafe { ms_run_manifest_json(run, buf.as_mut_ptr(), buf.len(), &mut len) }, MsStatus::Ok);
    let manifest = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();

    let tmp = tempfile::tempdir().unwrap();
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ms_run_write(run, dir.as_ptr()) }, MsStatus::Ok);
    assert_eq!(std::fs::read_to_string(tmp.path().join("manifest.json")).unwrap(), manifest);
    unsafe { ms_run_free(run) };
}

#[test]
fn bad_config_override_is_a_config_error() {
    let path = CString::new(core_config("determinism.toml").to_str().unwrap()).unwrap();
    let overrides = [CString::new("NOPE.count=1").unwrap()];
    let ptrs: Vec<*const c_char> = overrides.iter().map(|s| s.as_ptr()).collect();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { ms_run_config(path.as_ptr(), ptrs.as_ptr(), 1, &mut run) }, MsStatus::Config);
    assert!(last_error().contains("no such agent group"));
    assert!(run.is_null());
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "marketsim.h"

int main(void) {
    MsBook *book = NULL;
    int64_t filled = 0, rested = 0, px = 0;
    if (ms_book_new("IBM", 10000, &book) != MS_STATUS_OK) return 1;
    if (ms_book_submit(book, 1, 1, false, 100, 10000, 1, &filled, &rested) != MS_STATUS_OK || rested != 100) return 2;
    if (ms_book_submit(book, 2, 2, true, 30, 10000, 2, &filled, &rested) != MS_STATUS_OK || filled != 30) return 3;
    if (ms_book_last_trade(book, &px) != MS_STATUS_OK || px != 10000) return 4;
    MsExecution e;
    if (ms_book_execution(book, 0, &e) != MS_STATUS_OK || e.resting_order_id != 1 || e.quantity != 30) return 5;
    if (ms_book_cancel(book, 7, &filled) != MS_STATUS_NOT_FOUND) return 6;
    char msg[128];
    size_t len = 0;
    if (ms_last_error(msg, sizeof msg, &len) != MS_STATUS_OK || len == 0) return 7;
    ms_book_free(book);
    printf("ok %s\n", ms_version());
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(include.join("marketsim.h")).unwrap();
    for name in ["ms_book_submit", "ms_run_config", "ms_record_validate", "MS_STATUS_BUFFER_TOO_SMALL"] {
        assert!(header.contains(name), "header lacks {name}");
    }
    // Test binaries live in target/<profile>/deps; the static library one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let staticlib = lib_dir.join("libmarketsim_ffi.a");
    assert!(staticlib.is_file(), "{} missing", staticlib.display());

    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    let bin = tmp.path().join("smoke");
    std::fs::write(&src, C_SMOKE).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&staticlib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok 0.1.0"));
}
