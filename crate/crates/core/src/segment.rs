//! Wild binary segmentation over precomputed interval scores, and the
//! end-to-end detection driver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_permutation, calibrate_simulation, Approach, CalibrateConfig, ThresholdTable};
use crate::corpus::{split_three_way, Corpus, Part, SplitScheme};
use crate::cpstat::{lr_statistic, Interval, TraceRow};
use crate::error::{Error, Result, StageExt};
use crate::lda::{estimate_topic_counts, select_model, LdaConfig, TopicCounts, TopicModel};
use crate::polya::MleConfig;
use crate::synthgen::DocLength;

/// A sampled interval with its score, the location it nominates, and the
/// threshold for its length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredInterval {
    pub interval: Interval,
    pub location: usize,
    pub score: f64,
    pub threshold: f64,
}

impl ScoredInterval {
    pub fn trace_row(&self) -> TraceRow {
        TraceRow {
            s: self.interval.start,
            e: self.interval.end,
            t: self.location,
            value: self.score,
            threshold: self.threshold,
        }
    }
}

/// Intervals that passed their length's threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredIntervalSet {
    pub items: Vec<ScoredInterval>,
    pub seed: u64,
    pub num_sampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub changepoint: usize,
    pub interval: Interval,
    pub score: f64,
    pub threshold: f64,
}

/// Estimated changepoints. A changepoint `t` ends the left segment, so the
/// new regime starts at `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointResult {
    /// Positions in the analysed series, strictly increasing.
    pub changepoints: Vec<usize>,
    /// Positions of the same documents in the unsplit corpus, when the
    /// series came from a split.
    #[serde(default)]
    pub full_positions: Vec<usize>,
    /// Time indices of the same documents.
    #[serde(default)]
    pub time_indices: Vec<i64>,
    pub provenance: Vec<Provenance>,
    pub config: serde_json::Value,
}

impl ChangepointResult {
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }
}

/// `count` intervals of `0..len` with both endpoints uniform (with
/// replacement); pairs shorter than `delta` are redrawn.
pub fn sample_intervals(len: usize, count: usize, delta: usize, seed: u64) -> Result<Vec<Interval>> {
    if delta == 0 || delta > len {
        return Err(Error::invalid(format!("minimum length {delta} does not fit in {len} positions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = rng.random_range(0..len);
        let b = rng.random_range(0..len);
        let (s, e) = if a <= b { (a, b) } else { (b, a) };
        if e - s + 1 >= delta {
            out.push(Interval { start: s, end: e });
        }
    }
    Ok(out)
}

/// Scores distinct sampled intervals in parallel; the returned list is
/// sorted by interval.
pub fn score_intervals<F>(intervals: &[Interval], score: F) -> Result<Vec<(Interval, usize, f64)>>
where
    F: Fn(Interval) -> Result<(usize, f64)> + Sync,
{
    let mut unique = intervals.to_vec();
    unique.sort_unstable();
    unique.dedup();
    unique
        .par_iter()
        .map(|&iv| score(iv).map(|(loc, v)| (iv, loc, v)))
        .collect()
}

/// Samples intervals, scores each once with the midpoint LR statistic, and
/// keeps those scoring at least their length's threshold. Also returns
/// every scored interval for tracing.
pub fn sample_and_filter(
    z: &TopicCounts,
    thresholds: &ThresholdTable,
    num_intervals: usize,
    delta: usize,
    seed: u64,
    mle: &MleConfig,
) -> Result<(ScoredIntervalSet, Vec<ScoredInterval>)> {
    let sampled = if num_intervals == 0 {
        Vec::new()
    } else {
        sample_intervals(z.num_docs(), num_intervals, delta, seed)?
    };
    let scored = score_intervals(&sampled, |iv| Ok((iv.midpoint(), lr_statistic(z, iv, mle)?.value)))?;
    Ok(filter(scored, thresholds, seed, num_intervals))
}

pub(crate) fn filter(
    scored: Vec<(Interval, usize, f64)>,
    thresholds: &ThresholdTable,
    seed: u64,
    num_sampled: usize,
) -> (ScoredIntervalSet, Vec<ScoredInterval>) {
    let all: Vec<ScoredInterval> = scored
        .into_iter()
        .map(|(interval, location, score)| ScoredInterval {
            interval,
            location,
            score,
            threshold: thresholds.threshold(interval.len()),
        })
        .collect();
    let items = all.iter().filter(|x| x.score >= x.threshold && x.score > 0.0).copied().collect();
    (
        ScoredIntervalSet {
            items,
            seed,
            num_sampled,
        },
        all,
    )
}

fn better(a: &ScoredInterval, b: &ScoredInterval) -> bool {
    match a.score.total_cmp(&b.score) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => (a.interval.len(), a.interval.start) < (b.interval.len(), b.interval.start),
    }
}

/// Recursive extraction on `[start, end]`: the best interval's location
/// becomes a changepoint, intervals ending at or before it go left, those
/// starting at or after it go right, and the rest are dropped.
pub fn mwbs(start: usize, end: usize, set: &ScoredIntervalSet) -> Vec<Provenance> {
    let items: Vec<&ScoredInterval> = set
        .items
        .iter()
        .filter(|x| x.interval.start >= start && x.interval.end <= end)
        .collect();
    let mut out = Vec::new();
    recurse(start, end, items, &mut out);
    out.sort_by_key(|p| p.changepoint);
    out.dedup_by_key(|p| p.changepoint);
    out
}

fn recurse(start: usize, end: usize, items: Vec<&ScoredInterval>, out: &mut Vec<Provenance>) {
    if items.is_empty() || start >= end {
        return;
    }
    let mut best = items[0];
    for x in &items[1..] {
        if better(x, best) {
            best = x;
        }
    }
    let t = best.location;
    out.push(Provenance {
        changepoint: t,
        interval: best.interval,
        score: best.score,
        threshold: best.threshold,
    });
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for x in items {
        if std::ptr::eq(x, best) {
            continue;
        }
        if x.interval.end <= t {
            left.push(x);
        } else if x.interval.start >= t {
            right.push(x);
        }
    }
    recurse(start, t, left, out);
    recurse(t, end, right, out);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub split: SplitScheme,
    pub k_grid: Vec<usize>,
    pub lda: LdaConfig,
    /// Minimum interval length.
    pub delta: usize,
    /// Threshold quantile.
    pub eta: f64,
    /// Sampled intervals; `None` means five times the series length.
    pub num_intervals: Option<usize>,
    /// Null samples per grid length during calibration.
    pub calibration_intervals: usize,
    pub approach: Approach,
    /// Document lengths of the simulated corpus (simulation approach only);
    /// `None` uses the observed range.
    pub simulation_doc_length: Option<DocLength>,
    pub mle: MleConfig,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            split: SplitScheme::ThirdsInterleaved,
            k_grid: vec![5, 10, 15, 20],
            lda: LdaConfig::default(),
            delta: 20,
            eta: 0.5,
            num_intervals: None,
            calibration_intervals: 100,
            approach: Approach::Permutation,
            simulation_doc_length: None,
            mle: MleConfig::default(),
            seed: 0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta < 4 {
            return Err(Error::invalid("minimum interval length must be at least 4"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid(format!("quantile {} outside (0, 1]", self.eta)));
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return Err(Error::invalid("K grid must be non-empty and positive"));
        }
        Ok(())
    }

    fn calibrate_config(&self) -> CalibrateConfig {
        CalibrateConfig {
            delta: self.delta,
            num_intervals: self.calibration_intervals,
            eta: self.eta,
            seed: sub_seed(self.seed, 1),
            mle: self.mle,
            ..CalibrateConfig::default()
        }
    }
}

pub(crate) fn sub_seed(seed: u64, stage: u64) -> u64 {
    seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Everything a detection run produces.
#[derive(Debug, Clone)]
pub struct Detection {
    pub result: ChangepointResult,
    pub model: TopicModel,
    /// `(K, held-out score)` per grid point.
    pub model_scores: Vec<(usize, f64)>,
    pub counts: TopicCounts,
    pub thresholds: ThresholdTable,
    /// Every scored interval, retained or not.
    pub trace: Vec<ScoredInterval>,
}

/// Split, fit topics, reduce to topic counts, calibrate, score, segment.
pub fn detect(corpus: &Corpus, cfg: &DetectConfig) -> Result<ChangepointResult> {
    detect_full(corpus, cfg).map(|d| d.result)
}

pub fn detect_full(corpus: &Corpus, cfg: &DetectConfig) -> Result<Detection> {
    cfg.validate()?;
    let split = split_three_way(corpus, cfg.split).stage("split")?;
    let lda = LdaConfig {
        seed: cfg.seed,
        ..cfg.lda.clone()
    };
    let selection = select_model(&split.w_tilde_1, &split.w_tilde_2, &cfg.k_grid, &lda).stage("topic model")?;
    let model = selection.best;
    let z = estimate_topic_counts(&model, &split.w).stage("topic counts")?;
    let t = z.num_docs();
    if cfg.delta > t {
        return Err(Error::TooFewDocuments {
            needed: cfg.delta,
            got: t,
        })
        .stage("calibration");
    }
    let ccfg = cfg.calibrate_config();
    let thresholds = match cfg.approach {
        Approach::Permutation => calibrate_permutation(&z, &ccfg),
        Approach::Simulation => {
            let lengths = z.doc_lengths();
            let observed = DocLength {
                min: *lengths.iter().min().expect("non-empty") as usize,
                max: *lengths.iter().max().expect("non-empty") as usize,
            };
            calibrate_simulation(&model, t, cfg.simulation_doc_length.unwrap_or(observed), &ccfg)
        }
        Approach::Shuffle => Err(Error::invalid("shuffle calibration applies to embedding series")),
    }
    .stage("calibration")?;
    let num_intervals = cfg.num_intervals.unwrap_or(5 * t);
    let sample_seed = sub_seed(cfg.seed, 2);
    let (set, trace) =
        sample_and_filter(&z, &thresholds, num_intervals, cfg.delta, sample_seed, &cfg.mle).stage("scoring")?;
    let provenance = mwbs(0, t - 1, &set);
    let changepoints: Vec<usize> = provenance.iter().map(|p| p.changepoint).collect();
    let full_positions = changepoints
        .iter()
        .map(|&c| split.source_position(Part::Detect, c))
        .collect();
    let time_indices = changepoints.iter().map(|&c| split.w.documents()[c].time_index).collect();
    let mut config = serde_json::to_value(cfg)?;
    config["selected_k"] = serde_json::json!(model.num_topics());
    config["num_intervals_used"] = serde_json::json!(num_intervals);
    Ok(Detection {
        result: ChangepointResult {
            changepoints,
            full_positions,
            time_indices,
            provenance,
            config,
        },
        model,
        model_scores: selection.scores,
        counts: z,
        thresholds,
        trace,
    })
}
