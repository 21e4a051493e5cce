//! Experiment execution: population construction, run manifests, paired A/B
//! runs, manifest verification and loading of finished runs for analysis.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::Table;

use crate::agents::{trading_core, BackgroundAgent, ImpactAgent, MomentumAgent, Portfolio};
use crate::config::{
    apply_override, apply_patch, targets_group, AgentKind, ConfigError, ExperimentConfig, LatencySpec, SymbolSource,
};
use crate::error::{AgentError, KernelError, ServiceError};
use crate::exchange::ExchangeAgent;
use crate::kernel::{Agent, AgentId, Delivery, Kernel, KernelConfig, LogRecord, RunStats};
use crate::latency::{LatencyError, LatencyModel};
use crate::message::{Cents, Shares};
use crate::oracle::{generate_ou, ingest_csv, FundamentalSeries, Oracle, OracleAccess, OracleError};
use crate::rng::{oracle_seed, RandomPlan};
use crate::study::{ImpactOutcome, Trade, Trial};
use crate::time::SimTime;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ORACLE_ACCESS_FILE: &str = "oracle_access.log";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("latency: {0}")]
    Latency(#[from] LatencyError),
    #[error("cannot build agent {name}: {source}")]
    Agent { name: String, source: AgentError },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{0}")]
    Artifact(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io { path: path.display().to_string(), reason: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: AgentId,
    pub name: String,
    pub group: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub symbol: String,
    pub seed: Option<u64>,
    pub open_price: Cents,
    pub samples: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Everything needed to identify and re-check a run. Contains no wall-clock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub date: String,
    pub start_ns: i64,
    pub stop_ns: i64,
    pub market_open_ns: i64,
    pub market_close_ns: i64,
    pub stats: RunStats,
    pub agents: Vec<RosterEntry>,
    pub oracle: Vec<OracleEntry>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn agents_of_type<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a RosterEntry> {
        self.agents.iter().filter(move |a| a.kind == kind)
    }

    pub fn log_file(&self, agent: &RosterEntry) -> Option<&str> {
        let prefix = format!("{:04}_", agent.id.0);
        self.artifacts.iter().map(|a| a.file.as_str()).find(|f| f.starts_with(&prefix) && f.ends_with(".log"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalPortfolio {
    pub id: AgentId,
    pub name: String,
    pub starting_cash: Cents,
    pub portfolio: Portfolio,
}

#[derive(Debug)]
pub struct RunOutput {
    pub manifest: Manifest,
    /// Artifact contents by file name, excluding the manifest.
    pub files: BTreeMap<String, String>,
    pub trace: Vec<Delivery>,
    pub oracle: Rc<Oracle>,
    pub oracle_accesses: Vec<OracleAccess>,
    pub portfolios: Vec<FinalPortfolio>,
}

impl RunOutput {
    pub fn log(&self, agent: &RosterEntry) -> Option<Vec<LogRecord>> {
        let name = self.manifest.log_file(agent)?;
        self.files.get(name).map(|text| parse_log(text).unwrap_or_default())
    }

    /// Writes every artifact and the manifest into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, content) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|e| io_err(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest.to_json()).map_err(|e| io_err(&path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(LogRecord::parse).collect()
}

pub fn build_oracle(cfg: &ExperimentConfig) -> Result<Oracle, RunError> {
    let mut series = Vec::new();
    for spec in &cfg.symbols {
        let s = match &spec.source {
            SymbolSource::Ou { params, seed } => {
                let seed = seed.unwrap_or_else(|| oracle_seed(cfg.seed, &spec.symbol));
                generate_ou(&spec.symbol, params, cfg.market_open, cfg.market_close, seed)?
            }
            SymbolSource::Csv { path } => ingest_csv(&spec.symbol, path)?,
        };
        series.push(s);
    }
    Ok(Oracle::new(series))
}

pub fn build_latency(spec: &LatencySpec, agents: usize) -> Result<LatencyModel, LatencyError> {
    let mut model = LatencyModel::uniform(agents, spec.default_ns)?;
    for (from, to, ns) in &spec.overrides {
        model.set(AgentId(*from), AgentId(*to), *ns)?;
    }
    model.set_default_jitter(spec.jitter.clone())?;
    for (from, to, j) in &spec.jitter_overrides {
        model.set_pair_jitter(AgentId(*from), AgentId(*to), j.clone())?;
    }
    Ok(model)
}

/// Agents in id order, their roster entries and per-agent computation delays.
pub type Population = (Vec<Box<dyn Agent>>, Vec<RosterEntry>, Vec<(AgentId, i64)>);

/// Instantiates the population with dense ids in configuration order.
pub fn build_population(cfg: &ExperimentConfig, oracle: &Rc<Oracle>) -> Result<Population, RunError> {
    let ids: Vec<AgentId> = (0..cfg.agent_count() as u32).map(AgentId).collect();
    let plan = RandomPlan::derive(cfg.seed, &ids);
    let mut agents: Vec<Box<dyn Agent>> = Vec::with_capacity(ids.len());
    let mut roster = Vec::with_capacity(ids.len());
    let mut delays = Vec::new();
    for group in &cfg.agents {
        for k in 0..group.count {
            let id = AgentId(agents.len() as u32);
            let name = group.member_name(k);
            let fail = |source| RunError::Agent { name: name.clone(), source };
            let agent: Box<dyn Agent> = match &group.kind {
                AgentKind::Exchange { symbols, residual } => {
                    let listings = symbols
                        .iter()
                        .map(|s| oracle.open_price(s).map(|p| (s.clone(), p)))
                        .collect::<Result<Vec<_>, _>>()?;
                    let ex = ExchangeAgent::new(name.clone(), cfg.market_open, cfg.market_close, listings)
                        .map_err(fail)?
                        .with_stream_logging(cfg.logging.exchange_stream.clone(), cfg.logging.snapshot_levels)
                        .with_residual_policy(*residual);
                    Box::new(ex)
                }
                AgentKind::Momentum(p) => Box::new(MomentumAgent::new(name.clone(), p.clone()).map_err(fail)?),
                AgentKind::Background(p) => {
                    Box::new(BackgroundAgent::new(name.clone(), p.clone(), Rc::clone(oracle)).map_err(fail)?)
                }
                AgentKind::Impact(p) => Box::new(ImpactAgent::new(name.clone(), p.clone()).map_err(fail)?),
            };
            if let Some(d) = group.computation_delay_ns {
                delays.push((id, d));
            }
            roster.push(RosterEntry {
                id,
                name,
                group: group.name.clone(),
                kind: group.kind.type_name().to_string(),
                seed: plan.seed_of(id).expect("seed derived for every id"),
            });
            agents.push(agent);
        }
    }
    Ok((agents, roster, delays))
}

pub fn config_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(&cfg.resolved).expect("TOML tables convert to JSON")
}

/// Runs one experiment in memory. Nothing is written to disk.
pub fn run_experiment(cfg: &ExperimentConfig, trace: bool) -> Result<RunOutput, RunError> {
    let oracle = Rc::new(build_oracle(cfg)?);
    let (agents, roster, delays) = build_population(cfg, &oracle)?;
    let latency = build_latency(&cfg.latency, agents.len())?;
    let mut kcfg = KernelConfig::new(cfg.start, cfg.stop, cfg.seed);
    kcfg.default_computation_delay = cfg.default_computation_delay_ns;
    kcfg.trace = trace;
    let mut kernel = Kernel::new(agents, latency, kcfg)?;
    for (id, d) in delays {
        kernel.set_computation_delay(id, d)?;
    }
    let result = kernel.run()?;

    let portfolios = kernel
        .agents()
        .iter()
        .enumerate()
        .filter_map(|(i, a)| {
            trading_core(a.as_ref()).map(|core| FinalPortfolio {
                id: AgentId(i as u32),
                name: a.name().to_string(),
                starting_cash: core.starting_cash,
                portfolio: core.portfolio.clone(),
            })
        })
        .collect();

    let mut files = result.files;
    let mut oracle_entries = Vec::new();
    for spec in &cfg.symbols {
        let series: &FundamentalSeries = oracle.series(&spec.symbol).expect("built from the same spec");
        let file = format!("oracle_{}.csv", spec.symbol);
        files.insert(file.clone(), series.to_csv());
        let seed = match &spec.source {
            SymbolSource::Ou { seed, .. } => Some(seed.unwrap_or_else(|| oracle_seed(cfg.seed, &spec.symbol))),
            SymbolSource::Csv { .. } => None,
        };
        oracle_entries.push(OracleEntry {
            symbol: spec.symbol.clone(),
            seed,
            open_price: series.open_price(),
            samples: series.samples.len(),
            file,
        });
    }
    files.insert(ORACLE_ACCESS_FILE.to_string(), oracle.access_log_text());

    let artifacts = files
        .iter()
        .map(|(file, content)| ArtifactEntry {
            file: file.clone(),
            sha256: sha256_hex(content.as_bytes()),
            bytes: content.len(),
        })
        .collect();
    let config = config_json(cfg);
    let manifest = Manifest {
        config_sha256: sha256_hex(config.to_string().as_bytes()),
        config,
        seed: cfg.seed,
        date: cfg.date.clone(),
        start_ns: cfg.start.0,
        stop_ns: cfg.stop.0,
        market_open_ns: cfg.market_open.0,
        market_close_ns: cfg.market_close.0,
        stats: result.stats,
        agents: roster,
        oracle: oracle_entries,
        artifacts,
    };
    let oracle_accesses = oracle.accesses();
    Ok(RunOutput { manifest, files, trace: result.trace, oracle, oracle_accesses, portfolios })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, RunError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(&path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Re-hashes every artifact listed in `dir/manifest.json`. With `rerun`, also
/// re-executes the embedded configuration and compares artifact hashes.
pub fn verify_run(dir: &Path, rerun: bool) -> Result<VerifyReport, RunError> {
    let manifest = read_manifest(dir)?;
    let mut problems = Vec::new();
    for a in &manifest.artifacts {
        match std::fs::read(dir.join(&a.file)) {
            Ok(bytes) if sha256_hex(&bytes) == a.sha256 => {}
            Ok(_) => problems.push(format!("{}: content hash mismatch", a.file)),
            Err(e) => problems.push(format!("{}: {e}", a.file)),
        }
    }
    if sha256_hex(manifest.config.to_string().as_bytes()) != manifest.config_sha256 {
        problems.push("embedded config does not match its hash".into());
    }
    if rerun {
        let mut doc: Table = toml::Value::try_from(&manifest.config)
            .ok()
            .and_then(|v| v.as_table().cloned())
            .ok_or_else(|| RunError::Artifact("embedded config is not a table".into()))?;
        // Ingested series are replayed from the archived copy.
        if let Some(symbols) = doc.get_mut("oracle").and_then(|o| o.get_mut("symbols")).and_then(|s| s.as_array_mut()) {
            for entry in symbols.iter_mut().filter_map(|e| e.as_table_mut()) {
                if entry.get("kind").and_then(|k| k.as_str()) == Some("csv") {
                    let sym = entry.get("symbol").and_then(|s| s.as_str()).unwrap_or_default().to_string();
                    let archived = dir.join(format!("oracle_{sym}.csv"));
                    entry.insert("path".into(), toml::Value::String(archived.display().to_string()));
                }
            }
        }
        let cfg = ExperimentConfig::from_table(doc, &[], dir)?;
        let again = run_experiment(&cfg, false)?;
        if again.manifest.artifacts != manifest.artifacts {
            let before: BTreeMap<_, _> = manifest.artifacts.iter().map(|a| (&a.file, &a.sha256)).collect();
            let after: BTreeMap<_, _> = again.manifest.artifacts.iter().map(|a| (&a.file, &a.sha256)).collect();
            for (file, hash) in &before {
                if after.get(file) != Some(hash) {
                    problems.push(format!("{file}: rerun produced different content"));
                }
            }
            for file in after.keys().filter(|f| !before.contains_key(*f)) {
                problems.push(format!("{file}: produced by rerun but not listed"));
            }
        }
    }
    Ok(VerifyReport { checked: manifest.artifacts.len(), problems })
}

/// One fill from an exchange log, with counterparties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradeRecord {
    pub time: SimTime,
    pub symbol: String,
    pub price: Cents,
    pub quantity: Shares,
    pub buyer: u32,
    pub seller: u32,
}

pub fn exchange_trades(records: &[LogRecord]) -> Vec<TradeRecord> {
    records
        .iter()
        .filter(|r| r.event_type == "TRADE")
        .filter_map(|r| {
            let p = &r.payload;
            Some(TradeRecord {
                time: SimTime(r.timestamp_ns),
                symbol: p.get("symbol")?.as_str()?.to_string(),
                price: p.get("price")?.as_i64()?,
                quantity: p.get("quantity")?.as_i64()?,
                buyer: p.get("buyer")?.as_u64()? as u32,
                seller: p.get("seller")?.as_u64()? as u32,
            })
        })
        .collect()
}

/// Time an order from `agent` first reached the exchange.
pub fn first_order_arrival(exchange_log: &[LogRecord], agent: AgentId) -> Option<SimTime> {
    exchange_log
        .iter()
        .find(|r| {
            r.event_type == "ORDER_RECEIVED" && r.payload.get("agent").and_then(|a| a.as_u64()) == Some(agent.0 as u64)
        })
        .map(|r| SimTime(r.timestamp_ns))
}

fn exchange_log_of(output_files: &BTreeMap<String, String>, manifest: &Manifest) -> Result<Vec<LogRecord>, RunError> {
    let ex =
        manifest.agents_of_type("exchange").next().ok_or_else(|| RunError::Artifact("run has no exchange".into()))?;
    let file = manifest.log_file(ex).ok_or_else(|| RunError::Artifact("exchange log missing".into()))?;
    let text = output_files.get(file).ok_or_else(|| RunError::Artifact(format!("{file} missing")))?;
    parse_log(text).map_err(|e| RunError::Artifact(format!("{file}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedDifference {
    pub id: AgentId,
    pub name: String,
    pub control: u64,
    pub treatment: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbSummary {
    pub changed_agent: RosterEntry,
    pub appended: bool,
    pub shared_agents: usize,
    pub seed_differences: Vec<SeedDifference>,
    pub jitter_seed_differences: usize,
    pub oracle_identical: bool,
    /// Arrival at the exchange of the changed agent's first order.
    pub impact_delivery_ns: Option<i64>,
    /// Time of the first trade that differs between the two runs.
    pub first_divergence_ns: Option<i64>,
    pub control_trades: usize,
    pub treatment_trades: usize,
    pub pass: bool,
}

#[derive(Debug)]
pub struct AbOutput {
    pub control_config: ExperimentConfig,
    pub control: RunOutput,
    pub treatment: RunOutput,
    pub summary: AbSummary,
}

/// First time at which the two trade tapes differ.
pub fn first_divergence(a: &[TradeRecord], b: &[TradeRecord]) -> Option<SimTime> {
    let common = a.iter().zip(b).position(|(x, y)| x != y);
    match common {
        Some(i) => Some(a[i].time.min(b[i].time)),
        None if a.len() == b.len() => None,
        None => {
            let n = a.len().min(b.len());
            Some(a.get(n).or(b.get(n)).expect("longer tape has an extra record").time)
        }
    }
}

/// Runs the control document and the document with `patch` applied, under the same seed.
pub fn run_ab(doc: &Table, patch: &Table, overrides: &[String], base_dir: &Path) -> Result<AbOutput, RunError> {
    // Overrides naming a group that only the patch introduces apply to the treatment alone.
    let (treatment_only, shared): (Vec<String>, Vec<String>) =
        overrides.iter().cloned().partition(|o| !targets_group(doc, o) && targets_group(patch, o));
    let control_cfg = ExperimentConfig::from_table(doc.clone(), &shared, base_dir)?;
    let mut treated_doc = apply_patch(doc, patch)?;
    for o in &shared {
        apply_override(&mut treated_doc, o)?;
    }
    let treatment_cfg = ExperimentConfig::from_table(treated_doc, &treatment_only, base_dir)?;
    let control = run_experiment(&control_cfg, false)?;
    let treatment = run_experiment(&treatment_cfg, false)?;

    let c_roster = &control.manifest.agents;
    let t_roster = &treatment.manifest.agents;
    let appended = t_roster.len() == c_roster.len() + 1;
    let changed = if appended {
        t_roster.last().cloned()
    } else {
        control_cfg
            .agents
            .iter()
            .zip(&treatment_cfg.agents)
            .position(|(a, b)| a != b)
            .and_then(|g| t_roster.iter().find(|r| r.group == treatment_cfg.agents[g].name).cloned())
    }
    .ok_or_else(|| RunError::Artifact("patch changed no agent".into()))?;

    let mut seed_differences = Vec::new();
    let mut shared = 0;
    for c in c_roster {
        if let Some(t) = t_roster.iter().find(|t| t.id == c.id) {
            shared += 1;
            if t.seed != c.seed {
                seed_differences.push(SeedDifference {
                    id: c.id,
                    name: c.name.clone(),
                    control: c.seed,
                    treatment: t.seed,
                });
            }
        }
    }
    let c_plan = RandomPlan { master_seed: control.manifest.seed, agent_seeds: vec![] };
    let t_plan = RandomPlan { master_seed: treatment.manifest.seed, agent_seeds: vec![] };
    let mut jitter_seed_differences = 0;
    for a in 0..shared as u32 {
        for b in 0..shared as u32 {
            if c_plan.jitter_seed(AgentId(a), AgentId(b)) != t_plan.jitter_seed(AgentId(a), AgentId(b)) {
                jitter_seed_differences += 1;
            }
        }
    }
    let oracle_identical =
        control.manifest.oracle.iter().all(|o| control.files.get(&o.file) == treatment.files.get(&o.file));

    let c_log = exchange_log_of(&control.files, &control.manifest)?;
    let t_log = exchange_log_of(&treatment.files, &treatment.manifest)?;
    let c_trades = exchange_trades(&c_log);
    let t_trades = exchange_trades(&t_log);
    let impact_delivery = first_order_arrival(&t_log, changed.id);
    let divergence = first_divergence(&c_trades, &t_trades);
    let timing_ok = match (divergence, impact_delivery) {
        (None, _) => true,
        (Some(d), Some(i)) => d >= i,
        (Some(_), None) => false,
    };
    let pass = seed_differences.is_empty() && jitter_seed_differences == 0 && oracle_identical && timing_ok;
    let summary = AbSummary {
        changed_agent: changed,
        appended,
        shared_agents: shared,
        seed_differences,
        jitter_seed_differences,
        oracle_identical,
        impact_delivery_ns: impact_delivery.map(|t| t.0),
        first_divergence_ns: divergence.map(|t| t.0),
        control_trades: c_trades.len(),
        treatment_trades: t_trades.len(),
        pass,
    };
    Ok(AbOutput { control_config: control_cfg, control, treatment, summary })
}

/// Reconstructs an event-study trial from an archived run directory.
pub fn load_trial(dir: &Path) -> Result<Trial, RunError> {
    let manifest = read_manifest(dir)?;
    let mut files = BTreeMap::new();
    for a in &manifest.artifacts {
        if a.file.ends_with(".log") {
            let path = dir.join(&a.file);
            files.insert(a.file.clone(), std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?);
        }
    }
    trial_from_files(&dir.display().to_string(), &manifest, &files)
}

pub fn trial_from_output(label: &str, out: &RunOutput) -> Result<Trial, RunError> {
    trial_from_files(label, &out.manifest, &out.files)
}

fn trial_from_files(label: &str, manifest: &Manifest, files: &BTreeMap<String, String>) -> Result<Trial, RunError> {
    let ex_log = exchange_log_of(files, manifest)?;
    let impact = manifest
        .agents_of_type("impact")
        .next()
        .ok_or_else(|| RunError::Artifact(format!("{label}: run has no impact agent")))?;
    let impact_file =
        manifest.log_file(impact).ok_or_else(|| RunError::Artifact(format!("{label}: impact log missing")))?;
    let impact_log = parse_log(files.get(impact_file).map(String::as_str).unwrap_or_default())
        .map_err(|e| RunError::Artifact(format!("{impact_file}: {e}")))?;

    let order = impact_log.iter().find(|r| r.event_type == "IMPACT_ORDER");
    let symbol = order.and_then(|r| r.payload.get("symbol")).and_then(|s| s.as_str()).map(str::to_string);
    let mut trades: Vec<Trade> = exchange_trades(&ex_log)
        .into_iter()
        .filter(|t| symbol.as_deref().is_none_or(|s| s == t.symbol))
        .map(|t| Trade { time: t.time, price: t.price, quantity: t.quantity })
        .collect();
    trades.sort_by_key(|t| t.time);
    let impact_time = first_order_arrival(&ex_log, impact.id)
        .ok_or_else(|| RunError::Artifact(format!("{label}: impact order never reached the exchange")))?;
    let outcome = order.and_then(|o| {
        let order_id = o.payload.get("order_id")?.as_u64()?;
        let size: i64 = impact_log
            .iter()
            .filter(|r| r.event_type == "HOLDINGS_UPDATED")
            .filter(|r| r.payload.get("order_id").and_then(|v| v.as_u64()) == Some(order_id))
            .filter_map(|r| r.payload.get("quantity")?.as_i64())
            .sum();
        if size == 0 {
            return None;
        }
        let greed = o.payload.get("greed")?.as_f64()?;
        let mtm = impact_log.iter().find(|r| r.event_type == "MARK_TO_MARKET")?;
        let profit = mtm.payload.get("profit")?.as_i64()?;
        Some(ImpactOutcome { greed, size, profit })
    });
    Ok(Trial { label: label.to_string(), trades, impact_time, impact: outcome })
}

/// Directory names for the two halves of an A/B run.
pub fn ab_dirs(out: &Path) -> (PathBuf, PathBuf) {
    (out.join("control"), out.join("treatment"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trade(t: i64, px: i64, buyer: u32) -> TradeRecord {
        TradeRecord { time: SimTime(t), symbol: "IBM".into(), price: px, quantity: 1, buyer, seller: 9 }
    }

    #[test]
    fn divergence_finds_first_difference() {
        let a = vec![trade(1, 100, 1), trade(5, 101, 1)];
        let b = vec![trade(1, 100, 1), trade(4, 105, 2)];
        assert_eq!(first_divergence(&a, &b), Some(SimTime(4)));
        assert_eq!(first_divergence(&a, &a), None);
        assert_eq!(first_divergence(&a[..1], &a), Some(SimTime(5)));
    }

    #[test]
    fn latency_spec_builds_matrix() {
        let spec = LatencySpec {
            default_ns: 500,
            overrides: vec![(1, 2, 21_000_000)],
            jitter: crate::latency::Jitter::None,
            jitter_overrides: vec![],
        };
        let m = build_latency(&spec, 3).unwrap();
        assert_eq!(m.get(AgentId(0), AgentId(0)), Some(0));
        assert_eq!(m.get(AgentId(0), AgentId(2)), Some(500));
        assert_eq!(m.get(AgentId(1), AgentId(2)), Some(21_000_000));
        assert_eq!(m.get(AgentId(2), AgentId(1)), Some(500));
        let bad = LatencySpec { overrides: vec![(1, 7, 5)], ..spec };
        assert!(build_latency(&bad, 3).is_err());
    }
}
