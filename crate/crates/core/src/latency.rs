//! Pairwise network latency with per-pair jitter.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::AgentId;
use crate::rng::{jitter_seed, rng_from_seed, SimRng};

/// Distribution of the extra nanoseconds added to a message's transit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Jitter {
    #[default]
    None,
    /// Integer nanoseconds drawn uniformly from `[lo, hi]`.
    Uniform { lo: i64, hi: i64 },
    /// `values[k]` drawn with probability proportional to `weights[k]`.
    Discrete { values: Vec<i64>, weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatencyError {
    #[error("latency from {from} to {to} is negative ({nanos}ns)")]
    Negative { from: u32, to: u32, nanos: i64 },
    #[error("latency matrix must be square, row {row} has {len} entries for {n} agents")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("pair {from}->{to} references an agent outside 0..{n}")]
    UnknownAgent { from: u32, to: u32, n: usize },
    #[error("invalid jitter: {0}")]
    BadJitter(String),
}

impl Jitter {
    pub fn check(&self) -> Result<(), LatencyError> {
        match self {
            Jitter::None => Ok(()),
            Jitter::Uniform { lo, hi } => {
                if *lo < 0 || hi < lo {
                    Err(LatencyError::BadJitter(format!("uniform bounds must satisfy 0 <= lo <= hi, got [{lo}, {hi}]")))
                } else {
                    Ok(())
                }
            }
            Jitter::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(LatencyError::BadJitter(
                        "discrete values and weights must be non-empty and equal length".into(),
                    ));
                }
                if values.iter().any(|v| *v < 0) {
                    return Err(LatencyError::BadJitter("discrete values must be non-negative".into()));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
                    return Err(LatencyError::BadJitter(
                        "discrete weights must be finite, non-negative and not all zero".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    fn draw(&self, rng: &mut SimRng) -> i64 {
        match self {
            Jitter::None => 0,
            Jitter::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            Jitter::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                // floating-point leftovers land on the last positive weight
                let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(values.len() - 1);
                values[last]
            }
        }
    }
}

/// Directed latency matrix plus a jitter model with one RNG stream per directed pair.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    n: usize,
    matrix: Vec<i64>,
    default_jitter: Jitter,
    pair_jitter: BTreeMap<(u32, u32), Jitter>,
    master_seed: u64,
    streams: BTreeMap<(u32, u32), SimRng>,
}

impl LatencyModel {
    /// Every off-diagonal pair gets `nanos`; self-latency is zero.
    pub fn uniform(n: usize, nanos: i64) -> Result<Self, LatencyError> {
        let matrix = (0..n * n).map(|k| if k / n == k % n { 0 } else { nanos }).collect::<Vec<_>>();
        Self::from_flat(n, matrix)
    }

    pub fn from_rows(rows: Vec<Vec<i64>>) -> Result<Self, LatencyError> {
        let n = rows.len();
        let mut matrix = Vec::with_capacity(n * n);
        for (row, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(LatencyError::NotSquare { row, len: r.len(), n });
            }
            matrix.extend(r);
        }
        Self::from_flat(n, matrix)
    }

    fn from_flat(n: usize, matrix: Vec<i64>) -> Result<Self, LatencyError> {
        if let Some(k) = matrix.iter().position(|v| *v < 0) {
            return Err(LatencyError::Negative { from: (k / n) as u32, to: (k % n) as u32, nanos: matrix[k] });
        }
        Ok(LatencyModel {
            n,
            matrix,
            default_jitter: Jitter::None,
            pair_jitter: BTreeMap::new(),
            master_seed: 0,
            streams: BTreeMap::new(),
        })
    }

    pub fn agents(&self) -> usize {
        self.n
    }

    fn check_pair(&self, from: AgentId, to: AgentId) -> Result<usize, LatencyError> {
        let (f, t) = (from.0 as usize, to.0 as usize);
        if f >= self.n || t >= self.n {
            return Err(LatencyError::UnknownAgent { from: from.0, to: to.0, n: self.n });
        }
        Ok(f * self.n + t)
    }

    pub fn set(&mut self, from: AgentId, to: AgentId, nanos: i64) -> Result<(), LatencyError> {
        let k = self.check_pair(from, to)?;
        if nanos < 0 {
            return Err(LatencyError::Negative { from: from.0, to: to.0, nanos });
        }
        self.matrix[k] = nanos;
        Ok(())
    }

    pub fn get(&self, from: AgentId, to: AgentId) -> Option<i64> {
        self.check_pair(from, to).ok().map(|k| self.matrix[k])
    }

    pub fn set_default_jitter(&mut self, jitter: Jitter) -> Result<(), LatencyError> {
        jitter.check()?;
        self.default_jitter = jitter;
        Ok(())
    }

    pub fn set_pair_jitter(&mut self, from: AgentId, to: AgentId, jitter: Jitter) -> Result<(), LatencyError> {
        self.check_pair(from, to)?;
        jitter.check()?;
        self.pair_jitter.insert((from.0, to.0), jitter);
        Ok(())
    }

    pub fn jitter_for(&self, from: AgentId, to: AgentId) -> &Jitter {
        self.pair_jitter.get(&(from.0, to.0)).unwrap_or(&self.default_jitter)
    }

    /// Resets all jitter streams to the ones derived from `master_seed`.
    pub fn reseed(&mut self, master_seed: u64) {
        self.master_seed = master_seed;
        self.streams.clear();
    }

    /// Transit time for the next message on `from -> to`: base latency plus a jitter draw.
    pub fn transit(&mut self, from: AgentId, to: AgentId) -> Option<i64> {
        let base = self.get(from, to)?;
        let jitter = self.pair_jitter.get(&(from.0, to.0)).unwrap_or(&self.default_jitter);
        if matches!(jitter, Jitter::None) {
            return Some(base);
        }
        let master = self.master_seed;
        let stream = self.streams.entry((from.0, to.0)).or_insert_with(|| rng_from_seed(jitter_seed(master, from, to)));
        Some(base + jitter.draw(stream))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_matrix_has_zero_diagonal() {
        let m = LatencyModel::uniform(3, 500).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0 } else { 500 };
                assert_eq!(m.get(AgentId(i), AgentId(j)), Some(want));
            }
        }
    }

    #[test]
    fn overrides_are_directional() {
        let mut m = LatencyModel::uniform(3, 500).unwrap();
        m.set(AgentId(1), AgentId(2), 21_000_000).unwrap();
        assert_eq!(m.get(AgentId(1), AgentId(2)), Some(21_000_000));
        assert_eq!(m.get(AgentId(2), AgentId(1)), Some(500));
        assert!(m.set(AgentId(1), AgentId(3), 5).is_err());
        assert!(m.set(AgentId(0), AgentId(1), -1).is_err());
    }

    #[test]
    fn negative_or_ragged_rows_are_rejected() {
        assert!(matches!(LatencyModel::from_rows(vec![vec![0, -1], vec![1, 0]]), Err(LatencyError::Negative { .. })));
        assert!(matches!(LatencyModel::from_rows(vec![vec![0, 1], vec![1]]), Err(LatencyError::NotSquare { .. })));
    }

    #[test]
    fn uniform_jitter_stays_in_bounds_and_replays() {
        let draws = |seed| {
            let mut m = LatencyModel::uniform(2, 500).unwrap();
            m.set_default_jitter(Jitter::Uniform { lo: 0, hi: 10 }).unwrap();
            m.reseed(seed);
            (0..200).map(|_| m.transit(AgentId(0), AgentId(1)).unwrap()).collect::<Vec<_>>()
        };
        let a = draws(11);
        assert!(a.iter().all(|t| (500..=510).contains(t)));
        assert_eq!(a, draws(11));
        assert_ne!(a, draws(12));
    }

    #[test]
    fn pair_streams_are_independent_of_other_traffic() {
        let mut quiet = LatencyModel::uniform(3, 0).unwrap();
        quiet.set_default_jitter(Jitter::Uniform { lo: 0, hi: 1_000_000 }).unwrap();
        quiet.reseed(5);
        let mut busy = quiet.clone();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..50 {
            a.push(quiet.transit(AgentId(0), AgentId(1)).unwrap());
            busy.transit(AgentId(2), AgentId(1)).unwrap();
            busy.transit(AgentId(1), AgentId(0)).unwrap();
            b.push(busy.transit(AgentId(0), AgentId(1)).unwrap());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn discrete_jitter_respects_weights() {
        let mut m = LatencyModel::uniform(2, 0).unwrap();
        m.set_pair_jitter(AgentId(0), AgentId(1), Jitter::Discrete { values: vec![7, 9], weights: vec![1.0, 0.0] })
            .unwrap();
        m.reseed(3);
        assert!((0..100).all(|_| m.transit(AgentId(0), AgentId(1)) == Some(7)));
        assert_eq!(m.transit(AgentId(1), AgentId(0)), Some(0));
        assert!(Jitter::Discrete { values: vec![1], weights: vec![] }.check().is_err());
        assert!(Jitter::Uniform { lo: 5, hi: 1 }.check().is_err());
    }
}
