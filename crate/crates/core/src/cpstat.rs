//! Changepoint statistics: the midpoint Pólya likelihood-ratio score and the
//! (multivariate) CUSUM statistic.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lda::TopicCounts;
use crate::polya::{mle_from_stats, moment_init, Alpha, MleConfig, PolyaStats};

/// Closed interval `[start, end]` of 0-based positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!("interval [{start}, {end}] is reversed")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `floor((start + end) / 2)`; the left half is `[start, midpoint]`.
    pub fn midpoint(&self) -> usize {
        (self.start + self.end) / 2
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

/// The LR score of one interval with the three fitted priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub interval: Interval,
    pub value: f64,
    pub alpha_left: Alpha,
    pub alpha_right: Alpha,
    pub alpha_pooled: Alpha,
}

/// Midpoint LR score of `counts` rows `start..=end`.
pub fn lr_statistic(counts: &TopicCounts, interval: Interval, cfg: &MleConfig) -> Result<Score> {
    if interval.end >= counts.num_docs() {
        return Err(Error::invalid(format!(
            "interval [{}, {}] outside 0..{}",
            interval.start,
            interval.end,
            counts.num_docs()
        )));
    }
    let rows: Vec<&[u32]> = counts.rows_in(interval.start, interval.end).collect();
    let fit = lr_from_rows(counts.num_topics(), &rows, cfg)?;
    Ok(Score {
        interval,
        value: fit.value,
        alpha_left: fit.left,
        alpha_right: fit.right,
        alpha_pooled: fit.pooled,
    })
}

pub(crate) struct LrFit {
    pub value: f64,
    pub left: Alpha,
    pub right: Alpha,
    pub pooled: Alpha,
}

/// Score of an arbitrary row sequence split at `floor((n - 1) / 2)`.
///
/// Both halves are warm-started from the pooled MLE; since the optimiser never
/// accepts a worse iterate, each half's maximum is at least its likelihood at
/// the pooled α, which keeps the value non-negative.
pub(crate) fn lr_from_rows(k: usize, rows: &[&[u32]], cfg: &MleConfig) -> Result<LrFit> {
    let n = rows.len();
    if n < 4 {
        return Err(Error::invalid(format!("LR statistic needs at least 4 documents, got {n}")));
    }
    let split = (n - 1) / 2 + 1;
    let pooled_stats = PolyaStats::from_rows(k, rows.iter().copied())?;
    let init = moment_init(k, rows.iter().copied(), cfg.init_floor);
    let pooled = mle_from_stats(&pooled_stats, &init, cfg)?;
    let half = |part: &[&[u32]]| -> Result<_> {
        let stats = PolyaStats::from_rows(k, part.iter().copied())?;
        mle_from_stats(&stats, pooled.alpha.values(), cfg)
    };
    let left = half(&rows[..split])?;
    let right = half(&rows[split..])?;
    let value = (left.log_likelihood + right.log_likelihood - pooled.log_likelihood) / n as f64;
    Ok(LrFit {
        value,
        left: left.alpha,
        right: right.alpha,
        pooled: pooled.alpha,
    })
}

/// Row-major sequence of `dim`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Series<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Series<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::invalid("series length must be a positive multiple of the dimension"));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// CUSUM value at every split `t` in `[start, end)`:
/// `sqrt(r/n * (1 - r/n)) * |mean(start..=t) - mean(t+1..=end)|`, with
/// `r = t - start + 1` and `n = end - start + 1`.
pub fn cusum_trace(xs: &Series, start: usize, end: usize) -> Result<Vec<f64>> {
    if end >= xs.len() || start >= end {
        return Err(Error::invalid(format!(
            "CUSUM needs start < end < {}, got [{start}, {end}]",
            xs.len()
        )));
    }
    let d = xs.dim();
    let n = (end - start + 1) as f64;
    let mut total = vec![0.0; d];
    for i in start..=end {
        for (a, x) in total.iter_mut().zip(xs.row(i)) {
            *a += x;
        }
    }
    let mut left = vec![0.0; d];
    let mut out = Vec::with_capacity(end - start);
    for t in start..end {
        for (a, x) in left.iter_mut().zip(xs.row(t)) {
            *a += x;
        }
        let r = (t - start + 1) as f64;
        let sq: f64 = left
            .iter()
            .zip(&total)
            .map(|(l, tot)| {
                let diff = l / r - (tot - l) / (n - r);
                diff * diff
            })
            .sum();
        out.push((r / n * (1.0 - r / n)).sqrt() * sq.sqrt());
    }
    Ok(out)
}

/// Maximum of [`cusum_trace`] and its location (first maximiser on ties).
pub fn cusum_statistic(xs: &Series, start: usize, end: usize) -> Result<(f64, usize)> {
    let trace = cusum_trace(xs, start, end)?;
    let mut best = 0;
    for (i, v) in trace.iter().enumerate() {
        if *v > trace[best] {
            best = i;
        }
    }
    Ok((trace[best], start + best))
}

/// One row of a score trace: interval, split location, score, threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub s: usize,
    pub e: usize,
    pub t: usize,
    pub value: f64,
    pub threshold: f64,
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "s,e,t,value,threshold")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.s, r.e, r.t, r.value, r.threshold)?;
    }
    out.flush()?;
    Ok(())
}
