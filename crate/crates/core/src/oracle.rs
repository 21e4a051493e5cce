//! Data oracle: the only holder of fundamental value.
//!
//! The fundamental is a left-continuous step function over its samples.
//! Observations are gated to the requester's current time and perturbed with
//! Gaussian noise drawn from the requester's own PRNG. Every observation is
//! recorded in an access log so gating can be audited after a run.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::AgentId;
use crate::message::Cents;
use crate::rng::{rng_from_seed, SimRng};
use crate::time::{SimTime, NANOS_PER_SECOND};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{path}:{line}: {reason}")]
    Csv { path: String, line: usize, reason: String },
    #[error("series for {0} is empty")]
    Empty(String),
    #[error("observation at {at}ns precedes the first sample of {symbol} at {first}ns")]
    BeforeStart { symbol: String, at: i64, first: i64 },
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("invalid parameters: {0}")]
    BadParams(String),
}

/// Discretized Ornstein-Uhlenbeck parameters, in cents and seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub mean: f64,
    /// Per second.
    pub reversion_rate: f64,
    /// Cents per square-root second.
    pub volatility: f64,
    pub open: f64,
    pub sample_interval_ns: i64,
}

impl OuParams {
    pub fn check(&self) -> Result<(), OracleError> {
        let bad = |m: &str| Err(OracleError::BadParams(m.to_string()));
        if !(self.reversion_rate >= 0.0 && self.reversion_rate.is_finite()) {
            return bad("reversion rate must be finite and non-negative");
        }
        if !(self.volatility >= 0.0 && self.volatility.is_finite()) {
            return bad("volatility must be finite and non-negative");
        }
        if self.sample_interval_ns <= 0 {
            return bad("sample interval must be positive");
        }
        if !(self.mean.is_finite() && self.open.is_finite() && self.open > 0.0) {
            return bad("mean must be finite and open price positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeriesSource {
    Ou { params: OuParams, seed: u64 },
    Csv { path: PathBuf },
    Inline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalSeries {
    pub symbol: String,
    /// Strictly increasing times, positive prices.
    pub samples: Vec<(SimTime, Cents)>,
    pub source: SeriesSource,
}

impl FundamentalSeries {
    pub fn from_samples(symbol: impl Into<String>, samples: Vec<(SimTime, Cents)>) -> Result<Self, OracleError> {
        let symbol = symbol.into();
        if samples.is_empty() {
            return Err(OracleError::Empty(symbol));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(OracleError::BadParams(format!("sample {} is not after sample {}", i + 1, i)));
            }
        }
        if let Some(i) = samples.iter().position(|(_, p)| *p <= 0) {
            return Err(OracleError::BadParams(format!("sample {i} has non-positive price")));
        }
        Ok(FundamentalSeries { symbol, samples, source: SeriesSource::Inline })
    }

    pub fn open_price(&self) -> Cents {
        self.samples[0].1
    }

    pub fn first_time(&self) -> SimTime {
        self.samples[0].0
    }

    /// Most recent sample at or before `at`.
    pub fn sample_at(&self, at: SimTime) -> Option<(SimTime, Cents)> {
        let idx = self.samples.partition_point(|(t, _)| *t <= at);
        idx.checked_sub(1).map(|i| self.samples[i])
    }

    /// `timestamp_ns,price_cents` rows with a header, readable by [`ingest_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_ns,price_cents\n");
        for (t, p) in &self.samples {
            out.push_str(&format!("{},{}\n", t.0, p));
        }
        out
    }
}

/// Generates an Ornstein-Uhlenbeck path sampled every `sample_interval_ns` over `[start, end]`.
///
/// `X(t+dt) = X(t) + k(mu - X(t))dt + sigma sqrt(dt) z`, with stored samples rounded to
/// cents and floored at one cent. The unrounded state carries between steps.
pub fn generate_ou(
    symbol: &str,
    params: &OuParams,
    start: SimTime,
    end: SimTime,
    seed: u64,
) -> Result<FundamentalSeries, OracleError> {
    params.check()?;
    if end < start {
        return Err(OracleError::BadParams("series end precedes start".into()));
    }
    let mut rng = rng_from_seed(seed);
    let dt = params.sample_interval_ns as f64 / NANOS_PER_SECOND as f64;
    let shock = params.volatility * dt.sqrt();
    let steps = ((end - start) / params.sample_interval_ns) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut x = params.open;
    let mut t = start;
    loop {
        samples.push((t, (x.round() as Cents).max(1)));
        let Some(next) = t.0.checked_add(params.sample_interval_ns).filter(|n| *n <= end.0) else { break };
        let z: f64 = StandardNormal.sample(&mut rng);
        x += params.reversion_rate * (params.mean - x) * dt + shock * z;
        t = SimTime(next);
    }
    Ok(FundamentalSeries {
        symbol: symbol.to_string(),
        samples,
        source: SeriesSource::Ou { params: params.clone(), seed },
    })
}

/// Parses `timestamp_ns,price_cents` rows. A leading header row and blank lines are skipped.
pub fn parse_csv(symbol: &str, origin: &str, text: &str) -> Result<FundamentalSeries, OracleError> {
    let err = |line: usize, reason: String| OracleError::Csv { path: origin.to_string(), line, reason };
    let mut samples: Vec<(SimTime, Cents)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || (samples.is_empty() && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(t), Some(p), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(err(line_no, format!("expected 2 columns, got {line:?}")));
        };
        let t: i64 = t.parse().map_err(|_| err(line_no, format!("invalid timestamp {t:?}")))?;
        let p: Cents = p.parse().map_err(|_| err(line_no, format!("invalid price {p:?}")))?;
        if p <= 0 {
            return Err(err(line_no, format!("price must be positive, got {p}")));
        }
        if let Some((prev, _)) = samples.last() {
            if t <= prev.0 {
                return Err(err(line_no, format!("timestamp {t} is not after {}", prev.0)));
            }
        }
        samples.push((SimTime(t), p));
    }
    if samples.is_empty() {
        return Err(OracleError::Empty(symbol.to_string()));
    }
    Ok(FundamentalSeries { symbol: symbol.to_string(), samples, source: SeriesSource::Inline })
}

pub fn ingest_csv(symbol: &str, path: &Path) -> Result<FundamentalSeries, OracleError> {
    let text = std::fs::read_to_string(path).map_err(|e| OracleError::Csv {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    let mut series = parse_csv(symbol, &path.display().to_string(), &text)?;
    series.source = SeriesSource::Csv { path: path.to_path_buf() };
    Ok(series)
}

/// Result of one noisy observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub value: Cents,
    pub sample_time: SimTime,
    pub sample_price: Cents,
}

/// Most recent sample at or before `at`, plus N(0, noise_variance), rounded and floored at 1 cent.
///
/// Exactly one normal variate is drawn from `rng` per call regardless of the variance.
pub fn observe(
    series: &FundamentalSeries,
    at: SimTime,
    noise_variance: f64,
    rng: &mut SimRng,
) -> Result<Observation, OracleError> {
    let (sample_time, sample_price) = series.sample_at(at).ok_or_else(|| OracleError::BeforeStart {
        symbol: series.symbol.clone(),
        at: at.0,
        first: series.first_time().0,
    })?;
    let z: f64 = StandardNormal.sample(rng);
    let noisy = sample_price as f64 + noise_variance.max(0.0).sqrt() * z;
    Ok(Observation { value: (noisy.round() as Cents).max(1), sample_time, sample_price })
}

/// One served observation, as written to the oracle access log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAccess {
    pub agent: AgentId,
    pub symbol: String,
    pub query_time_ns: i64,
    pub sample_time_ns: i64,
    pub sample_price: Cents,
    pub observed: Cents,
    pub noise_variance: f64,
}

#[derive(Debug, Default)]
pub struct Oracle {
    series: BTreeMap<String, FundamentalSeries>,
    access_log: RefCell<Vec<OracleAccess>>,
}

impl Oracle {
    pub fn new(series: impl IntoIterator<Item = FundamentalSeries>) -> Self {
        Oracle {
            series: series.into_iter().map(|s| (s.symbol.clone(), s)).collect(),
            access_log: RefCell::new(Vec::new()),
        }
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn series(&self, symbol: &str) -> Option<&FundamentalSeries> {
        self.series.get(symbol)
    }

    pub fn open_price(&self, symbol: &str) -> Result<Cents, OracleError> {
        self.series(symbol).map(FundamentalSeries::open_price).ok_or_else(|| OracleError::UnknownSymbol(symbol.into()))
    }

    /// Noisy observation for `agent` at its current time `at`, recorded in the access log.
    pub fn observe(
        &self,
        agent: AgentId,
        symbol: &str,
        at: SimTime,
        noise_variance: f64,
        rng: &mut SimRng,
    ) -> Result<Cents, OracleError> {
        let series = self.series(symbol).ok_or_else(|| OracleError::UnknownSymbol(symbol.into()))?;
        let obs = observe(series, at, noise_variance, rng)?;
        self.access_log.borrow_mut().push(OracleAccess {
            agent,
            symbol: symbol.to_string(),
            query_time_ns: at.0,
            sample_time_ns: obs.sample_time.0,
            sample_price: obs.sample_price,
            observed: obs.value,
            noise_variance,
        });
        Ok(obs.value)
    }

    pub fn accesses(&self) -> Vec<OracleAccess> {
        self.access_log.borrow().clone()
    }

    /// Line-delimited JSON, one access per line.
    pub fn access_log_text(&self) -> String {
        let mut out = String::new();
        for a in self.access_log.borrow().iter() {
            out.push_str(&serde_json::to_string(a).expect("access records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Accesses that served a sample from after the query time, or whose sample does not
/// match the step-function value at the query time.
pub fn audit_accesses<'a>(
    oracle_series: impl Fn(&str) -> Option<&'a FundamentalSeries>,
    log: &[OracleAccess],
) -> Vec<OracleAccess> {
    log.iter()
        .filter(|a| {
            if a.sample_time_ns > a.query_time_ns {
                return true;
            }
            match oracle_series(&a.symbol).and_then(|s| s.sample_at(SimTime(a.query_time_ns))) {
                Some((t, p)) => t.0 != a.sample_time_ns || p != a.sample_price,
                None => true,
            }
        })
        .cloned()
        .collect()
}
