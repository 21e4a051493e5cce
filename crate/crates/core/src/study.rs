//! Event studies over completed runs: time-aligned, normalized price curves
//! around impact trades, plus profit-versus-size statistics.

use serde::Serialize;
use thiserror::Error;

use crate::message::{Cents, Shares};
use crate::time::{SimTime, NANOS_PER_SECOND};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyError {
    #[error("bucket width must be positive")]
    BadBucket,
    #[error("windows must be non-negative")]
    BadWindow,
    #[error("no usable trials ({excluded} excluded)")]
    NoTrials { excluded: usize },
}

/// One fill as recorded by the exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Trade {
    pub time: SimTime,
    pub price: Cents,
    pub quantity: Shares,
}

/// Impact agent outcome for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpactOutcome {
    pub greed: f64,
    /// Shares actually filled.
    pub size: Shares,
    /// Mark-to-market at close minus starting cash.
    pub profit: Cents,
}

impl ImpactOutcome {
    pub fn profit_per_share(&self) -> f64 {
        self.profit as f64 / self.size as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub label: String,
    /// Sorted by time.
    pub trades: Vec<Trade>,
    /// Arrival of the impact order at the exchange.
    pub impact_time: SimTime,
    pub impact: Option<ImpactOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyParams {
    pub pre_ns: i64,
    pub post_ns: i64,
    pub bucket_ns: i64,
    /// Trailing-mean window, in buckets, applied to the mean curve. 1 disables smoothing.
    pub smoothing: usize,
}

impl Default for StudyParams {
    fn default() -> Self {
        StudyParams {
            pre_ns: 600 * NANOS_PER_SECOND,
            post_ns: 1800 * NANOS_PER_SECOND,
            bucket_ns: 30 * NANOS_PER_SECOND,
            smoothing: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStudyResult {
    pub params: StudyParams,
    pub offsets_ns: Vec<i64>,
    /// Per included trial, `None` where no trade preceded the bucket time.
    pub curves: Vec<(String, Vec<Option<f64>>)>,
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    pub count: Vec<usize>,
    pub smoothed_mean: Vec<f64>,
    pub excluded: Vec<String>,
}

/// Most recent trade strictly before `t`.
pub fn price_before(trades: &[Trade], t: SimTime) -> Option<Cents> {
    let idx = trades.partition_point(|tr| tr.time < t);
    idx.checked_sub(1).map(|i| trades[i].price)
}

/// Volume-weighted mean price of trades in `(from, to]`.
pub fn mean_traded_price(trades: &[Trade], from: SimTime, to: SimTime) -> Option<f64> {
    let (mut notional, mut volume) = (0i128, 0i128);
    for tr in trades.iter().filter(|tr| tr.time > from && tr.time <= to) {
        notional += tr.price as i128 * tr.quantity as i128;
        volume += tr.quantity as i128;
    }
    (volume > 0).then(|| notional as f64 / volume as f64)
}

/// Aligns every trial on its impact time and normalizes by the last trade before it,
/// so each curve is exactly 1.0 at offset zero.
pub fn event_study(trials: &[Trial], params: StudyParams) -> Result<EventStudyResult, StudyError> {
    if params.bucket_ns <= 0 {
        return Err(StudyError::BadBucket);
    }
    if params.pre_ns < 0 || params.post_ns < 0 {
        return Err(StudyError::BadWindow);
    }
    let before = params.pre_ns / params.bucket_ns;
    let after = params.post_ns / params.bucket_ns;
    let offsets_ns: Vec<i64> = (-before..=after).map(|k| k * params.bucket_ns).collect();

    let mut curves = Vec::new();
    let mut excluded = Vec::new();
    for trial in trials {
        let lo = SimTime(trial.impact_time.0.saturating_sub(params.pre_ns));
        let hi = SimTime(trial.impact_time.0.saturating_add(params.post_ns));
        let in_window = trial.trades.iter().any(|tr| tr.time >= lo && tr.time <= hi);
        let Some(base) = price_before(&trial.trades, trial.impact_time).filter(|_| in_window) else {
            excluded.push(trial.label.clone());
            continue;
        };
        let curve: Vec<Option<f64>> = offsets_ns
            .iter()
            .map(|off| {
                if *off == 0 {
                    return Some(1.0);
                }
                let at = SimTime(trial.impact_time.0.saturating_add(*off));
                price_before(&trial.trades, at).map(|p| p as f64 / base as f64)
            })
            .collect();
        curves.push((trial.label.clone(), curve));
    }
    if curves.is_empty() {
        return Err(StudyError::NoTrials { excluded: excluded.len() });
    }

    let mut mean = Vec::with_capacity(offsets_ns.len());
    let mut stddev = Vec::with_capacity(offsets_ns.len());
    let mut count = Vec::with_capacity(offsets_ns.len());
    for k in 0..offsets_ns.len() {
        let values: Vec<f64> = curves.iter().filter_map(|(_, c)| c[k]).collect();
        let n = values.len();
        let m = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
        let sd =
            if n < 2 { 0.0 } else { (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        mean.push(m);
        stddev.push(sd);
        count.push(n);
    }
    let smoothed_mean = trailing_mean(&mean, params.smoothing.max(1));
    Ok(EventStudyResult { params, offsets_ns, curves, mean, stddev, count, smoothed_mean, excluded })
}

fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            let slice: Vec<f64> = values[start..=i].iter().copied().filter(|v| v.is_finite()).collect();
            if slice.is_empty() {
                f64::NAN
            } else {
                slice.iter().sum::<f64>() / slice.len() as f64
            }
        })
        .collect()
}

impl EventStudyResult {
    /// `offset_ns,offset_s,mean,stddev,n,smoothed_mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("offset_ns,offset_s,mean,stddev,n,smoothed_mean\n");
        for k in 0..self.offsets_ns.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.offsets_ns[k],
                self.offsets_ns[k] as f64 / NANOS_PER_SECOND as f64,
                fmt_f64(self.mean[k]),
                fmt_f64(self.stddev[k]),
                self.count[k],
                fmt_f64(self.smoothed_mean[k]),
            ));
        }
        out
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8}")
    } else {
        String::new()
    }
}

/// Summary of impact profitability across trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfitSummary {
    pub trials: usize,
    /// Spearman rank correlation of total profit with greed.
    pub profit_greed_rank_correlation: Option<f64>,
    /// Pearson correlation of profit per share with order size.
    pub profit_per_share_size_correlation: Option<f64>,
}

pub fn profit_summary(outcomes: &[ImpactOutcome]) -> ProfitSummary {
    let usable: Vec<&ImpactOutcome> = outcomes.iter().filter(|o| o.size > 0).collect();
    let greed: Vec<f64> = usable.iter().map(|o| o.greed).collect();
    let profit: Vec<f64> = usable.iter().map(|o| o.profit as f64).collect();
    let pps: Vec<f64> = usable.iter().map(|o| o.profit_per_share()).collect();
    let size: Vec<f64> = usable.iter().map(|o| o.size as f64).collect();
    ProfitSummary {
        trials: usable.len(),
        profit_greed_rank_correlation: spearman(&greed, &profit),
        profit_per_share_size_correlation: pearson(&pps, &size),
    }
}

/// `profit,profit_per_share,size,greed` per trial.
pub fn outcomes_csv(labels: &[String], outcomes: &[ImpactOutcome]) -> String {
    let mut out = String::from("trial,greed,size,profit,profit_per_share\n");
    for (label, o) in labels.iter().zip(outcomes) {
        out.push_str(&format!("{},{},{},{},{:.6}\n", label, o.greed, o.size, o.profit, o.profit_per_share()));
    }
    out
}

/// Sample Pearson correlation. `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Average ranks, ties sharing the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            out[*k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() {
        return None;
    }
    pearson(&ranks(xs), &ranks(ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: i64 = NANOS_PER_SECOND;

    fn trades(points: &[(i64, Cents)]) -> Vec<Trade> {
        points.iter().map(|(t, p)| Trade { time: SimTime(t * S), price: *p, quantity: 100 }).collect()
    }

    fn params() -> StudyParams {
        StudyParams { pre_ns: 60 * S, post_ns: 60 * S, bucket_ns: 30 * S, smoothing: 1 }
    }

    #[test]
    fn constant_prices_give_flat_curve() {
        let trial = Trial {
            label: "a".into(),
            trades: trades(&[(0, 10_000), (50, 10_000), (100, 10_000), (150, 10_000)]),
            impact_time: SimTime(100 * S),
            impact: None,
        };
        let r = event_study(&[trial], params()).unwrap();
        assert_eq!(r.offsets_ns, vec![-60 * S, -30 * S, 0, 30 * S, 60 * S]);
        assert!(r.mean.iter().all(|m| *m == 1.0));
    }

    #[test]
    fn mean_of_two_trials() {
        let up = |label: &str, post: Cents| Trial {
            label: label.into(),
            trades: trades(&[(0, 10_000), (100, post)]),
            impact_time: SimTime(100 * S),
            impact: None,
        };
        let r = event_study(&[up("a", 10_100), up("b", 10_300)], params()).unwrap();
        let zero = r.offsets_ns.iter().position(|o| *o == 0).unwrap();
        assert_eq!(r.mean[zero], 1.0);
        assert!((r.mean[zero + 1] - 1.02).abs() < 1e-12);
        assert_eq!(r.count[zero + 1], 2);
    }

    #[test]
    fn trials_without_trades_are_excluded() {
        let empty = Trial { label: "empty".into(), trades: vec![], impact_time: SimTime(10 * S), impact: None };
        let far = Trial {
            label: "far".into(),
            trades: trades(&[(0, 10_000)]),
            impact_time: SimTime(1_000 * S),
            impact: None,
        };
        assert_eq!(event_study(&[empty.clone(), far.clone()], params()), Err(StudyError::NoTrials { excluded: 2 }));
        let ok =
            Trial { label: "ok".into(), trades: trades(&[(5, 10_000)]), impact_time: SimTime(10 * S), impact: None };
        let r = event_study(&[empty, ok, far], params()).unwrap();
        assert_eq!(r.excluded, vec!["empty".to_string(), "far".to_string()]);
        assert_eq!(r.curves.len(), 1);
    }

    #[test]
    fn vwap_window_is_half_open() {
        let t = vec![
            Trade { time: SimTime(10), price: 100, quantity: 1 },
            Trade { time: SimTime(20), price: 200, quantity: 3 },
        ];
        assert_eq!(mean_traded_price(&t, SimTime(10), SimTime(20)), Some(200.0));
        assert_eq!(mean_traded_price(&t, SimTime(0), SimTime(20)), Some(175.0));
        assert_eq!(mean_traded_price(&t, SimTime(20), SimTime(30)), None);
    }

    #[test]
    fn correlations() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0; 4]), None);
        assert!((spearman(&x, &[1.0, 10.0, 100.0, 1000.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn smoothing_is_trailing() {
        assert_eq!(trailing_mean(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
    }

    proptest::proptest! {
        #[test]
        fn every_curve_is_one_at_zero(
            prices in proptest::collection::vec(1i64..1_000_000, 1..30),
            impact_s in 0i64..60,
        ) {
            let tr: Vec<Trade> = prices.iter().enumerate()
                .map(|(i, p)| Trade { time: SimTime(i as i64 * 2 * S), price: *p, quantity: 1 })
                .collect();
            let trial = Trial { label: "p".into(), trades: tr, impact_time: SimTime(impact_s * S + 1), impact: None };
            if let Ok(r) = event_study(&[trial], params()) {
                let zero = r.offsets_ns.iter().position(|o| *o == 0).unwrap();
                for (_, c) in &r.curves {
                    proptest::prop_assert_eq!(c[zero], Some(1.0));
                }
            }
        }
    }
}
