//! Length-dependent null thresholds for the LR score, by interleaving
//! permutation of observed rows or by simulating change-free data from a
//! fitted model.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpstat::lr_from_rows;
use crate::error::{Error, Result};
use crate::lda::{estimate_topic_counts, TopicCounts, TopicModel};
use crate::polya::MleConfig;
use crate::synthgen::{generate, DocLength, TtmcSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    /// Interleaved halves of observed intervals.
    Permutation,
    /// Change-free corpus simulated from a fitted model.
    Simulation,
    /// Observed intervals with their documents shuffled (embedding series).
    Shuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateConfig {
    /// Shortest interval length.
    pub delta: usize,
    /// Random intervals scored per grid length.
    pub num_intervals: usize,
    /// Quantile of the null scores kept as the threshold.
    pub eta: f64,
    /// Ratio between consecutive grid lengths.
    pub grid_ratio: f64,
    /// Longest calibrated length; defaults to the series length.
    pub max_len: Option<usize>,
    pub seed: u64,
    pub mle: MleConfig,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            delta: 20,
            num_intervals: 100,
            eta: 0.5,
            grid_ratio: 1.25,
            max_len: None,
            seed: 0,
            mle: MleConfig::default(),
        }
    }
}

impl CalibrateConfig {
    fn validate(&self, series_len: usize) -> Result<usize> {
        if self.delta < 4 {
            return Err(Error::invalid("minimum interval length must be at least 4"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("quantile {} outside (0, 1]", self.eta)));
        }
        if !(self.grid_ratio > 1.0) {
            return Err(Error::invalid("grid ratio must exceed 1"));
        }
        let max_len = self.max_len.unwrap_or(series_len);
        if max_len > series_len {
            return Err(Error::invalid(format!(
                "length {max_len} exceeds the series length {series_len}"
            )));
        }
        if self.delta > max_len {
            return Err(Error::invalid(format!(
                "minimum length {} exceeds the longest length {max_len}",
                self.delta
            )));
        }
        Ok(max_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub approach: Approach,
    pub eta: f64,
    pub num_intervals: usize,
    pub delta: usize,
    pub grid_ratio: f64,
    pub seed: u64,
}

/// Thresholds on a geometric grid of lengths, interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub header: TableHeader,
    entries: Vec<(usize, f64)>,
}

/// `delta, delta * r, delta * r^2, ...` rounded and strictly increasing,
/// always ending at `max_len`.
pub fn length_grid(delta: usize, max_len: usize, ratio: f64) -> Vec<usize> {
    let mut grid = vec![delta];
    let mut x = delta as f64;
    loop {
        x *= ratio;
        let last = *grid.last().expect("non-empty");
        let next = (x.round() as usize).max(last + 1);
        if next >= max_len {
            break;
        }
        grid.push(next);
    }
    if *grid.last().expect("non-empty") < max_len {
        grid.push(max_len);
    }
    grid
}

/// Linear-interpolation quantile of `values` (sorted in place).
pub fn quantile(values: &mut [f64], eta: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let h = eta * (values.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

impl ThresholdTable {
    pub fn new(header: TableHeader, entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("threshold table is empty"));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid("threshold lengths must be strictly increasing"));
        }
        if entries.iter().any(|e| !(e.1.is_finite() && e.1 >= 0.0)) {
            return Err(Error::invalid("thresholds must be finite and non-negative"));
        }
        Ok(Self { header, entries })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn min_len(&self) -> usize {
        self.entries[0].0
    }

    pub fn max_len(&self) -> usize {
        self.entries[self.entries.len() - 1].0
    }

    /// Threshold for length `len`: exact at grid points, log-log
    /// interpolation between them (linear in log-length when an endpoint is
    /// zero), and clamped to the end values outside the grid.
    pub fn threshold(&self, len: usize) -> f64 {
        let i = self.entries.partition_point(|e| e.0 < len);
        if i == 0 {
            return self.entries[0].1;
        }
        if i == self.entries.len() {
            return self.entries[i - 1].1;
        }
        let (l1, t1) = self.entries[i];
        if l1 == len {
            return t1;
        }
        let (l0, t0) = self.entries[i - 1];
        let w = ((len as f64).ln() - (l0 as f64).ln()) / ((l1 as f64).ln() - (l0 as f64).ln());
        if t0 > 0.0 && t1 > 0.0 {
            (t0.ln() + w * (t1.ln() - t0.ln())).exp()
        } else {
            t0 + w * (t1 - t0)
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# {}", serde_json::to_string(&self.header)?)?;
        writeln!(out, "length,threshold")?;
        for (l, t) in &self.entries {
            writeln!(out, "{l},{t}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header = None;
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let parse_err = |message: String| Error::Parse { line: lineno, message };
            if let Some(json) = line.strip_prefix("# ") {
                header = Some(serde_json::from_str(json).map_err(|e| parse_err(e.to_string()))?);
                continue;
            }
            if line.trim().is_empty() || line.starts_with("length") {
                continue;
            }
            let (l, t) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected `length,threshold`".into()))?;
            let l = l.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let t = t.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            entries.push((l, t));
        }
        let header = header.ok_or(Error::Parse {
            line: 1,
            message: "missing `# {...}` header".into(),
        })?;
        Self::new(header, entries)
    }
}

/// Reorders `rows` so the left half lands on even offsets and the right half
/// on odd ones; an odd trailing row is dropped.
pub fn interleave<T: Copy>(rows: &[T]) -> Vec<T> {
    let m = rows.len() / 2;
    let mut out = Vec::with_capacity(2 * m);
    for k in 0..m {
        out.push(rows[k]);
        out.push(rows[m + k]);
    }
    out
}

pub(crate) fn length_rng(seed: u64, len: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(len as u64);
    rng
}

fn null_scores(z: &TopicCounts, len: usize, permute: bool, cfg: &CalibrateConfig) -> Result<Vec<f64>> {
    let mut rng = length_rng(cfg.seed, len);
    let k = z.num_topics();
    let mut out = Vec::with_capacity(cfg.num_intervals);
    for _ in 0..cfg.num_intervals {
        let s = rng.random_range(0..=z.num_docs() - len);
        let rows: Vec<&[u32]> = z.rows_in(s, s + len - 1).collect();
        let rows = if permute { interleave(&rows) } else { rows };
        out.push(lr_from_rows(k, &rows, &cfg.mle)?.value.max(0.0));
    }
    Ok(out)
}

fn build(z: &TopicCounts, cfg: &CalibrateConfig, approach: Approach) -> Result<ThresholdTable> {
    let max_len = cfg.validate(z.num_docs())?;
    if cfg.num_intervals == 0 {
        return Err(Error::invalid("need at least one interval per length"));
    }
    let grid = length_grid(cfg.delta, max_len, cfg.grid_ratio);
    let permute = approach == Approach::Permutation;
    let entries = grid
        .par_iter()
        .map(|&len| {
            let mut scores = null_scores(z, len, permute, cfg)?;
            Ok((len, quantile(&mut scores, cfg.eta)))
        })
        .collect::<Result<Vec<_>>>()?;
    ThresholdTable::new(
        TableHeader {
            approach,
            eta: cfg.eta,
            num_intervals: cfg.num_intervals,
            delta: cfg.delta,
            grid_ratio: cfg.grid_ratio,
            seed: cfg.seed,
        },
        entries,
    )
}

/// Thresholds from interleaved observed rows. Interleaving mixes the two
/// halves of each sampled interval, so any change at its midpoint is
/// destroyed while the marginal behaviour of the rows is kept.
pub fn calibrate_permutation(z: &TopicCounts, cfg: &CalibrateConfig) -> Result<ThresholdTable> {
    build(z, cfg, Approach::Permutation)
}

/// Thresholds from raw scores on a change-free corpus simulated from the
/// fitted topics and prior, reduced to topic counts with the same model.
pub fn calibrate_simulation(
    model: &TopicModel,
    num_docs: usize,
    doc_length: DocLength,
    cfg: &CalibrateConfig,
) -> Result<ThresholdTable> {
    let spec = TtmcSpec::without_changes(num_docs, model.phi.clone(), model.alpha.clone(), doc_length, cfg.seed)?;
    let (corpus, _) = generate(&spec)?;
    let z = estimate_topic_counts(model, &corpus)?;
    build(&z, cfg, Approach::Simulation)
}
