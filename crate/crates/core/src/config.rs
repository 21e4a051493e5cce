//! Declarative experiment configuration (TOML) with command-line overrides.
//!
//! Times of day are written as `"HH:MM:SS[.fraction]"` on the configured date or
//! as raw nanoseconds since the epoch. Durations accept `ns`, `us`, `ms`, `s`,
//! `m`/`min` and `h` suffixes; bare integers are nanoseconds. Parameter keys
//! ending in `_ns` accept duration strings.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;
use toml::{Table, Value};

use crate::agents::{BackgroundParams, ImpactParams, MomentumParams};
use crate::exchange::{ResidualPolicy, StreamLogging};
use crate::latency::Jitter;
use crate::oracle::OuParams;
use crate::time::{parse_duration, SimTime};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("invalid TOML: {0}")]
    Syntax(String),
    #[error("invalid override {text:?}: {reason}")]
    Override { text: String, reason: String },
    #[error("configuration has {} problem(s):\n  - {}", .0.len(), .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymbolSource {
    Ou { params: OuParams, seed: Option<u64> },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSpec {
    pub symbol: String,
    pub source: SymbolSource,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentKind {
    Exchange { symbols: Vec<String>, residual: ResidualPolicy },
    Momentum(MomentumParams),
    Background(BackgroundParams),
    Impact(ImpactParams),
}

impl AgentKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            AgentKind::Exchange { .. } => "exchange",
            AgentKind::Momentum(_) => "momentum",
            AgentKind::Background(_) => "background",
            AgentKind::Impact(_) => "impact",
        }
    }

    fn symbols(&self) -> Vec<&str> {
        match self {
            AgentKind::Exchange { symbols, .. } => symbols.iter().map(String::as_str).collect(),
            AgentKind::Momentum(p) => vec![&p.symbol],
            AgentKind::Background(p) => vec![&p.symbol],
            AgentKind::Impact(p) => vec![&p.symbol],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentGroup {
    pub name: String,
    pub count: u32,
    pub computation_delay_ns: Option<i64>,
    pub kind: AgentKind,
}

impl AgentGroup {
    /// Name of the `k`-th member: the group name alone for singleton groups.
    pub fn member_name(&self, k: u32) -> String {
        if self.count == 1 {
            self.name.clone()
        } else {
            format!("{}_{}", self.name, k)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySpec {
    pub default_ns: i64,
    pub overrides: Vec<(u32, u32, i64)>,
    pub jitter: Jitter,
    pub jitter_overrides: Vec<(u32, u32, Jitter)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggingSpec {
    pub log_dir: Option<PathBuf>,
    pub exchange_stream: StreamLogging,
    pub snapshot_levels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub date: String,
    pub start: SimTime,
    pub stop: SimTime,
    pub market_open: SimTime,
    pub market_close: SimTime,
    pub seed: u64,
    pub default_computation_delay_ns: i64,
    pub symbols: Vec<SymbolSpec>,
    pub agents: Vec<AgentGroup>,
    pub latency: LatencySpec,
    pub logging: LoggingSpec,
    /// The merged document after overrides, echoed into run manifests.
    pub resolved: Table,
}

impl ExperimentConfig {
    pub fn agent_count(&self) -> usize {
        self.agents.iter().map(|g| g.count as usize).sum()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let doc = read_table(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_table(doc, overrides, base)
    }

    pub fn parse(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self, ConfigError> {
        let doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        Self::from_table(doc, overrides, base_dir)
    }

    pub fn from_table(mut doc: Table, overrides: &[String], base_dir: &Path) -> Result<Self, ConfigError> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        resolve(doc, base_dir)
    }
}

pub fn read_table(path: &Path) -> Result<Table, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(format!("{}: {e}", path.display())))
}

fn parse_value(text: &str) -> Value {
    match format!("v = {text}").parse::<Table>() {
        // Bare dates and times stay textual so they echo cleanly into manifests.
        Ok(mut t) => match t.remove("v") {
            Some(Value::Datetime(_)) | None => Value::String(text.to_string()),
            Some(v) => v,
        },
        Err(_) => Value::String(text.to_string()),
    }
}

fn default_group_name(table: &Table) -> Option<String> {
    table.get("type").and_then(Value::as_str).map(str::to_uppercase)
}

fn group_name(table: &Table) -> Option<String> {
    table.get("name").and_then(Value::as_str).map(str::to_string).or_else(|| default_group_name(table))
}

/// Applies `path=value`. The first path segment selects a top-level key, an agent
/// group by name (`IMPACT.greed`, `BACKGROUND.count`), `oracle.<SYMBOL>.<key>`,
/// `latency.<key>` or `logging.<key>`.
pub fn apply_override(doc: &mut Table, text: &str) -> Result<(), ConfigError> {
    let bad = |reason: &str| ConfigError::Override { text: text.to_string(), reason: reason.to_string() };
    let (path, raw) = text.split_once('=').ok_or_else(|| bad("expected path=value"))?;
    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(bad("empty path segment"));
    }
    let value = parse_value(raw.trim());
    match segments.as_slice() {
        [key] => {
            doc.insert(key.to_string(), value);
        }
        ["latency" | "logging", key] => {
            let table = doc.entry(segments[0]).or_insert_with(|| Value::Table(Table::new()));
            table.as_table_mut().ok_or_else(|| bad("not a table"))?.insert(key.to_string(), value);
        }
        ["oracle", symbol, key] => {
            let entry = doc
                .get_mut("oracle")
                .and_then(|o| o.get_mut("symbols"))
                .and_then(Value::as_array_mut)
                .and_then(|entries| {
                    entries
                        .iter_mut()
                        .filter_map(Value::as_table_mut)
                        .find(|t| t.get("symbol").and_then(Value::as_str) == Some(symbol))
                })
                .ok_or_else(|| bad("no such oracle symbol"))?;
            entry.insert(key.to_string(), value);
        }
        [group, key] => {
            let table = doc
                .get_mut("agents")
                .and_then(Value::as_array_mut)
                .and_then(|agents| {
                    agents.iter_mut().filter_map(Value::as_table_mut).find(|t| group_name(t).as_deref() == Some(group))
                })
                .ok_or_else(|| bad("no such agent group"))?;
            if matches!(*key, "count" | "name" | "type" | "computation_delay") {
                table.insert(key.to_string(), value);
            } else {
                let params = table.entry("params").or_insert_with(|| Value::Table(Table::new()));
                params.as_table_mut().ok_or_else(|| bad("params is not a table"))?.insert(key.to_string(), value);
            }
        }
        _ => return Err(bad("unrecognised path")),
    }
    Ok(())
}

/// True when `text` is a `GROUP.key` override naming an agent group of `doc`.
pub fn targets_group(doc: &Table, text: &str) -> bool {
    let Some((path, _)) = text.split_once('=') else { return false };
    let Some((group, _)) = path.trim().split_once('.') else { return false };
    doc.get("agents")
        .and_then(Value::as_array)
        .is_some_and(|a| a.iter().filter_map(Value::as_table).any(|t| group_name(t).as_deref() == Some(group)))
}

struct Resolver<'a> {
    errors: Vec<String>,
    midnight: Option<SimTime>,
    base_dir: &'a Path,
}

impl Resolver<'_> {
    fn err(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }

    fn time(&mut self, doc: &Table, key: &str) -> Option<SimTime> {
        match doc.get(key) {
            None => {
                self.err(format!("missing `{key}`"));
                None
            }
            Some(v) => self.time_value(key, v),
        }
    }

    fn time_value(&mut self, what: &str, v: &Value) -> Option<SimTime> {
        match v {
            Value::Integer(n) => Some(SimTime(*n)),
            Value::String(_) | Value::Datetime(_) => {
                let text = match v {
                    Value::Datetime(d) => d.to_string(),
                    other => other.as_str().unwrap_or_default().to_string(),
                };
                let midnight = self.midnight?;
                SimTime::parse_on(midnight, &text).map_err(|e| self.err(format!("`{what}`: {e}"))).ok()
            }
            _ => {
                self.err(format!("`{what}` must be a time of day string or integer nanoseconds"));
                None
            }
        }
    }

    fn duration(&mut self, what: &str, v: &Value) -> Option<i64> {
        match v {
            Value::Integer(n) => Some(*n),
            Value::String(s) => parse_duration(s).map_err(|e| self.err(format!("`{what}`: {e}"))).ok(),
            _ => {
                self.err(format!("`{what}` must be a duration string or integer nanoseconds"));
                None
            }
        }
    }

    fn opt_duration(&mut self, table: &Table, key: &str, what: &str) -> Option<Option<i64>> {
        match table.get(key) {
            None => Some(None),
            Some(v) => self.duration(what, v).map(Some),
        }
    }

    fn check_keys(&mut self, table: &Table, allowed: &[&str], what: &str) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                self.err(format!("{what}: unknown key `{key}`"));
            }
        }
    }

    /// Converts duration strings under `_ns` keys and time strings under `time_keys`.
    fn normalize_params(&mut self, params: &Table, time_keys: &[&str], what: &str) -> Table {
        let mut out = Table::new();
        for (k, v) in params {
            let converted = if k.ends_with("_ns") && v.is_str() {
                self.duration(&format!("{what}.{k}"), v).map(Value::Integer)
            } else if time_keys.contains(&k.as_str()) && (v.is_str() || v.is_datetime()) {
                self.time_value(&format!("{what}.{k}"), v).map(|t| Value::Integer(t.0))
            } else {
                Some(v.clone())
            };
            if let Some(v) = converted {
                out.insert(k.clone(), v);
            }
        }
        out
    }

    fn params<T: DeserializeOwned>(&mut self, params: Table, what: &str) -> Option<T> {
        Value::Table(params).try_into::<T>().map_err(|e| self.err(format!("{what}: {}", e.message().trim()))).ok()
    }
}

fn resolve(doc: Table, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut r = Resolver { errors: Vec::new(), midnight: None, base_dir };
    r.check_keys(
        &doc,
        &[
            "date",
            "start",
            "stop",
            "market_open",
            "market_close",
            "seed",
            "default_computation_delay",
            "oracle",
            "agents",
            "latency",
            "logging",
        ],
        "top level",
    );

    let date = match doc.get("date") {
        Some(Value::String(d)) => d.clone(),
        Some(Value::Datetime(d)) if d.time.is_none() => d.to_string(),
        _ => {
            r.err("missing or non-string `date` (YYYY-MM-DD)");
            String::new()
        }
    };
    if !date.is_empty() {
        r.midnight = SimTime::midnight_of(&date).map_err(|e| r.err(format!("`date`: {e}"))).ok();
    }
    let start = r.time(&doc, "start");
    let stop = r.time(&doc, "stop");
    let market_open = r.time(&doc, "market_open");
    let market_close = r.time(&doc, "market_close");
    if let (Some(a), Some(b)) = (start, stop) {
        if a >= b {
            r.err("`start` must precede `stop`");
        }
    }
    if let (Some(a), Some(b)) = (market_open, market_close) {
        if a >= b {
            r.err("`market_open` must precede `market_close`");
        }
    }
    let seed = match doc.get("seed") {
        Some(Value::Integer(n)) if *n >= 0 => Some(*n as u64),
        Some(_) => {
            r.err("`seed` must be a non-negative integer");
            None
        }
        None => {
            r.err("missing `seed`");
            None
        }
    };
    let default_delay = match doc.get("default_computation_delay") {
        None => Some(0),
        Some(v) => r.duration("default_computation_delay", v),
    };
    if default_delay.is_some_and(|d| d < 0) {
        r.err("`default_computation_delay` must be non-negative");
    }

    let symbols = resolve_symbols(&mut r, &doc);
    let agents = resolve_agents(&mut r, &doc, &symbols);
    let n_agents: usize = agents.iter().map(|g| g.count as usize).sum();
    let latency = resolve_latency(&mut r, &doc, n_agents);
    let logging = resolve_logging(&mut r, &doc);

    let has_exchange = agents.iter().any(|g| matches!(g.kind, AgentKind::Exchange { .. }) && g.count > 0);
    let has_traders = agents.iter().any(|g| !matches!(g.kind, AgentKind::Exchange { .. }) && g.count > 0);
    if has_traders && !has_exchange {
        r.err("population has trading agents but no exchange");
    }
    if n_agents == 0 {
        r.err("population is empty");
    }
    for g in &agents {
        for s in g.kind.symbols() {
            if !symbols.iter().any(|spec| spec.symbol == s) {
                r.err(format!("agent group {} references unknown symbol {s}", g.name));
            }
        }
    }
    let mut names: Vec<&str> = agents.iter().map(|g| g.name.as_str()).collect();
    names.sort_unstable();
    for w in names.windows(2) {
        if w[0] == w[1] {
            r.err(format!("duplicate agent group name {}", w[0]));
        }
    }

    if !r.errors.is_empty() {
        return Err(ConfigError::Invalid(r.errors));
    }
    Ok(ExperimentConfig {
        date,
        start: start.expect("validated"),
        stop: stop.expect("validated"),
        market_open: market_open.expect("validated"),
        market_close: market_close.expect("validated"),
        seed: seed.expect("validated"),
        default_computation_delay_ns: default_delay.expect("validated"),
        symbols,
        agents,
        latency,
        logging,
        resolved: doc,
    })
}

fn resolve_symbols(r: &mut Resolver<'_>, doc: &Table) -> Vec<SymbolSpec> {
    let Some(entries) = doc.get("oracle").and_then(|o| o.get("symbols")).and_then(Value::as_array) else {
        r.err("missing `[[oracle.symbols]]`");
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let what = format!("oracle.symbols[{i}]");
        let Some(t) = entry.as_table() else {
            r.err(format!("{what} must be a table"));
            continue;
        };
        let Some(symbol) = t.get("symbol").and_then(Value::as_str).map(str::to_string) else {
            r.err(format!("{what}: missing `symbol`"));
            continue;
        };
        match t.get("kind").and_then(Value::as_str) {
            Some("ou") => {
                r.check_keys(
                    t,
                    &["symbol", "kind", "mean", "reversion_rate", "volatility", "open", "sample_interval", "seed"],
                    &what,
                );
                let num = |r: &mut Resolver<'_>, key: &str| match t.get(key) {
                    Some(Value::Float(f)) => Some(*f),
                    Some(Value::Integer(n)) => Some(*n as f64),
                    _ => {
                        r.err(format!("{what}: `{key}` must be a number"));
                        None
                    }
                };
                let mean = num(r, "mean");
                let open = match t.get("open") {
                    None => mean,
                    Some(_) => num(r, "open"),
                };
                let reversion_rate = num(r, "reversion_rate");
                let volatility = num(r, "volatility");
                let interval = match t.get("sample_interval") {
                    None => Some(crate::time::NANOS_PER_SECOND),
                    Some(v) => r.duration(&format!("{what}.sample_interval"), v),
                };
                let seed = match t.get("seed") {
                    None => Some(None),
                    Some(Value::Integer(n)) if *n >= 0 => Some(Some(*n as u64)),
                    Some(_) => {
                        r.err(format!("{what}: `seed` must be a non-negative integer"));
                        None
                    }
                };
                if let (Some(mean), Some(open), Some(k), Some(vol), Some(dt), Some(seed)) =
                    (mean, open, reversion_rate, volatility, interval, seed)
                {
                    let params = OuParams { mean, reversion_rate: k, volatility: vol, open, sample_interval_ns: dt };
                    if let Err(e) = params.check() {
                        r.err(format!("{what}: {e}"));
                    }
                    out.push(SymbolSpec { symbol, source: SymbolSource::Ou { params, seed } });
                }
            }
            Some("csv") => {
                r.check_keys(t, &["symbol", "kind", "path"], &what);
                match t.get("path").and_then(Value::as_str) {
                    Some(p) => {
                        let path = r.base_dir.join(p);
                        out.push(SymbolSpec { symbol, source: SymbolSource::Csv { path } });
                    }
                    None => r.err(format!("{what}: csv source needs `path`")),
                }
            }
            other => r.err(format!("{what}: `kind` must be \"ou\" or \"csv\", got {other:?}")),
        }
    }
    let mut seen: Vec<&str> = out.iter().map(|s| s.symbol.as_str()).collect();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        r.err("duplicate oracle symbol");
    }
    out
}

fn resolve_agents(r: &mut Resolver<'_>, doc: &Table, symbols: &[SymbolSpec]) -> Vec<AgentGroup> {
    let Some(entries) = doc.get("agents").and_then(Value::as_array) else {
        r.err("missing `[[agents]]`");
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let Some(t) = entry.as_table() else {
            r.err(format!("agents[{i}] must be a table"));
            continue;
        };
        let name = group_name(t).unwrap_or_else(|| format!("GROUP{i}"));
        let what = format!("agents[{i}] ({name})");
        r.check_keys(t, &["type", "name", "count", "computation_delay", "params"], &what);
        let count = match t.get("count") {
            None => Some(1),
            Some(Value::Integer(n)) if (0..=u32::MAX as i64).contains(n) => Some(*n as u32),
            Some(_) => {
                r.err(format!("{what}: `count` must be a non-negative integer"));
                None
            }
        };
        let delay = r.opt_duration(t, "computation_delay", &format!("{what}.computation_delay"));
        if delay.flatten().is_some_and(|d| d < 0) {
            r.err(format!("{what}: computation delay must be non-negative"));
        }
        let params = match t.get("params") {
            None => Table::new(),
            Some(Value::Table(p)) => p.clone(),
            Some(_) => {
                r.err(format!("{what}: `params` must be a table"));
                Table::new()
            }
        };
        let kind = match t.get("type").and_then(Value::as_str) {
            Some("exchange") => {
                let p = r.normalize_params(&params, &[], &what);
                r.check_keys(&p, &["symbols", "market_order_residual"], &what);
                let listed = match p.get("symbols") {
                    None => Some(symbols.iter().map(|s| s.symbol.clone()).collect()),
                    Some(v) => v
                        .clone()
                        .try_into::<Vec<String>>()
                        .map_err(|_| r.err(format!("{what}: `symbols` must be a list of strings")))
                        .ok(),
                };
                let residual = match p.get("market_order_residual") {
                    None => Some(ResidualPolicy::default()),
                    Some(v) => v
                        .clone()
                        .try_into::<ResidualPolicy>()
                        .map_err(|_| r.err(format!("{what}: `market_order_residual` must be \"rest\" or \"cancel\"")))
                        .ok(),
                };
                listed.zip(residual).map(|(symbols, residual)| AgentKind::Exchange { symbols, residual })
            }
            Some("momentum") => {
                let p = r.normalize_params(&params, &[], &what);
                r.params::<MomentumParams>(p, &what).map(AgentKind::Momentum)
            }
            Some("background") => {
                let p = r.normalize_params(&params, &[], &what);
                let parsed = r.params::<BackgroundParams>(p, &what);
                if let Some(Err(e)) = parsed.as_ref().map(BackgroundParams::check) {
                    r.err(format!("{what}: {e}"));
                }
                parsed.map(AgentKind::Background)
            }
            Some("impact") => {
                let p = r.normalize_params(&params, &["trigger"], &what);
                let parsed = r.params::<ImpactParams>(p, &what);
                if parsed.as_ref().is_some_and(|p| !(p.greed.is_finite() && p.greed >= 0.0)) {
                    r.err(format!("{what}: greed must be finite and non-negative"));
                }
                parsed.map(AgentKind::Impact)
            }
            other => {
                r.err(format!("{what}: unknown agent type {other:?}"));
                None
            }
        };
        if let (Some(count), Some(delay), Some(kind)) = (count, delay, kind) {
            out.push(AgentGroup { name, count, computation_delay_ns: delay, kind });
        }
    }
    out
}

fn pair(r: &mut Resolver<'_>, t: &Table, what: &str, n: usize) -> Option<(u32, u32)> {
    let id = |key: &str| t.get(key).and_then(Value::as_integer).filter(|v| *v >= 0);
    match (id("from"), id("to")) {
        (Some(f), Some(to)) if (f as usize) < n && (to as usize) < n => Some((f as u32, to as u32)),
        (Some(f), Some(to)) => {
            r.err(format!("{what}: pair {f}->{to} references an agent outside 0..{n}"));
            None
        }
        _ => {
            r.err(format!("{what}: `from` and `to` must be non-negative agent ids"));
            None
        }
    }
}

fn resolve_latency(r: &mut Resolver<'_>, doc: &Table, n: usize) -> LatencySpec {
    let mut spec = LatencySpec { default_ns: 0, overrides: vec![], jitter: Jitter::None, jitter_overrides: vec![] };
    let Some(t) = doc.get("latency") else { return spec };
    let Some(t) = t.as_table() else {
        r.err("`latency` must be a table");
        return spec;
    };
    r.check_keys(t, &["default", "overrides", "jitter", "jitter_overrides"], "latency");
    if let Some(v) = t.get("default") {
        if let Some(d) = r.duration("latency.default", v) {
            if d < 0 {
                r.err("latency.default must be non-negative");
            }
            spec.default_ns = d;
        }
    }
    for (i, o) in t.get("overrides").and_then(Value::as_array).into_iter().flatten().enumerate() {
        let what = format!("latency.overrides[{i}]");
        let Some(o) = o.as_table() else {
            r.err(format!("{what} must be a table"));
            continue;
        };
        let p = pair(r, o, &what, n);
        let ns = o.get("latency").and_then(|v| r.duration(&what, v));
        if ns.is_some_and(|v| v < 0) {
            r.err(format!("{what}: latency must be non-negative"));
        }
        if let (Some((f, to)), Some(ns)) = (p, ns) {
            spec.overrides.push((f, to, ns));
        }
    }
    let jitter = |r: &mut Resolver<'_>, v: &Value, what: &str| -> Option<Jitter> {
        let j: Jitter =
            v.clone().try_into().map_err(|e: toml::de::Error| r.err(format!("{what}: {}", e.message().trim()))).ok()?;
        j.check().map_err(|e| r.err(format!("{what}: {e}"))).ok()?;
        Some(j)
    };
    if let Some(v) = t.get("jitter") {
        if let Some(j) = jitter(r, v, "latency.jitter") {
            spec.jitter = j;
        }
    }
    for (i, o) in t.get("jitter_overrides").and_then(Value::as_array).into_iter().flatten().enumerate() {
        let what = format!("latency.jitter_overrides[{i}]");
        let Some(o) = o.as_table() else {
            r.err(format!("{what} must be a table"));
            continue;
        };
        let p = pair(r, o, &what, n);
        let j = o.get("jitter").and_then(|v| jitter(r, v, &what));
        if let (Some((f, to)), Some(j)) = (p, j) {
            spec.jitter_overrides.push((f, to, j));
        }
    }
    spec
}

fn resolve_logging(r: &mut Resolver<'_>, doc: &Table) -> LoggingSpec {
    let mut spec = LoggingSpec { log_dir: None, exchange_stream: StreamLogging::Off, snapshot_levels: 10 };
    let Some(t) = doc.get("logging") else { return spec };
    let Some(t) = t.as_table() else {
        r.err("`logging` must be a table");
        return spec;
    };
    r.check_keys(t, &["log_dir", "exchange_stream", "snapshot_levels", "snapshot_frequency"], "logging");
    if let Some(d) = t.get("log_dir") {
        match d.as_str() {
            Some(d) => spec.log_dir = Some(r.base_dir.join(d)),
            None => r.err("logging.log_dir must be a string"),
        }
    }
    if let Some(levels) = t.get("snapshot_levels") {
        match levels.as_integer() {
            Some(k) if k >= 1 => spec.snapshot_levels = k as usize,
            _ => r.err("logging.snapshot_levels must be a positive integer"),
        }
    }
    match t.get("exchange_stream").and_then(Value::as_str).unwrap_or("off") {
        "off" => {}
        "full" => spec.exchange_stream = StreamLogging::FullStream,
        "snapshots" => {
            let freq = match t.get("snapshot_frequency") {
                Some(v) => r.duration("logging.snapshot_frequency", v),
                None => {
                    r.err("logging.snapshot_frequency is required for snapshot logging");
                    None
                }
            };
            match freq {
                Some(f) if f > 0 => spec.exchange_stream = StreamLogging::Snapshots { frequency_ns: f },
                Some(_) => r.err("logging.snapshot_frequency must be positive"),
                None => {}
            }
        }
        other => r.err(format!("logging.exchange_stream must be off, full or snapshots, got {other:?}")),
    }
    spec
}

/// Applies a treatment patch holding exactly one `[[agents]]` entry. An entry whose
/// name matches an existing singleton group replaces fields of that group; otherwise
/// it is appended, taking the next agent id.
pub fn apply_patch(doc: &Table, patch: &Table) -> Result<Table, ConfigError> {
    let mut problems = Vec::new();
    for key in patch.keys() {
        if key != "agents" {
            problems.push(format!("patch may only contain [[agents]], found `{key}`"));
        }
    }
    let entries = patch.get("agents").and_then(Value::as_array).cloned().unwrap_or_default();
    if entries.len() != 1 {
        problems.push(format!("patch must add or modify exactly one agent, found {} entries", entries.len()));
    }
    let entry = entries.first().and_then(Value::as_table).cloned();
    if let Some(e) = &entry {
        match e.get("count") {
            None => {}
            Some(Value::Integer(1)) => {}
            Some(_) => problems.push("patched agent entry must have count 1".into()),
        }
    }
    if !problems.is_empty() {
        return Err(ConfigError::Invalid(problems));
    }
    let entry = entry.expect("checked");
    let mut out = doc.clone();
    let agents = out.entry("agents").or_insert_with(|| Value::Array(vec![]));
    let agents = agents.as_array_mut().ok_or_else(|| ConfigError::Invalid(vec!["`agents` must be an array".into()]))?;
    let target = group_name(&entry);
    let existing = agents.iter_mut().filter_map(Value::as_table_mut).find(|t| group_name(t) == target);
    match existing {
        Some(t) => {
            if t.get("count").and_then(Value::as_integer).unwrap_or(1) != 1 {
                return Err(ConfigError::Invalid(vec![format!(
                    "patch targets group {} which has more than one agent",
                    target.unwrap_or_default()
                )]));
            }
            for (k, v) in entry {
                match (k.as_str(), t.get_mut("params"), v) {
                    ("params", Some(Value::Table(old)), Value::Table(new)) => old.extend(new),
                    (_, _, v) => {
                        t.insert(k, v);
                    }
                }
            }
        }
        None => {
            let mut entry = entry;
            entry.entry("count").or_insert(Value::Integer(1));
            agents.push(Value::Table(entry));
        }
    }
    Ok(out)
}
