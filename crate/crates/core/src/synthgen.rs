//! Synthetic corpora from the temporal topic model with changepoints: fixed
//! topics, and a Dirichlet prior on topic proportions that is piecewise
//! constant in time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::polya::Alpha;
use crate::topics::TopicMatrix;

const SEPARATION_RETRIES: usize = 1000;
const GAP_RETRIES: usize = 10_000;

/// Inclusive range of words per document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocLength {
    pub min: usize,
    pub max: usize,
}

impl Default for DocLength {
    fn default() -> Self {
        Self { min: 50, max: 200 }
    }
}

impl DocLength {
    pub fn fixed(n: usize) -> Self {
        Self { min: n, max: n }
    }

    fn validate(&self) -> Result<()> {
        if self.min == 0 || self.min > self.max {
            return Err(Error::invalid(format!(
                "document length range [{}, {}] is empty or allows empty documents",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Full parameterisation of one synthetic corpus.
///
/// `changepoints[i]` is the position of the first document governed by
/// `alphas[i + 1]`; documents before `changepoints[0]` use `alphas[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtmcSpec {
    pub num_docs: usize,
    pub doc_length: DocLength,
    pub changepoints: Vec<usize>,
    pub alphas: Vec<Alpha>,
    pub topics: TopicMatrix,
    pub seed: u64,
}

/// What [`generate`] knows that a detector has to recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub changepoints: Vec<usize>,
    pub segment_alphas: Vec<Vec<f64>>,
    pub topics: TopicMatrix,
    pub num_docs: usize,
    pub doc_length: DocLength,
    pub seed: u64,
}

impl GroundTruth {
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

impl TtmcSpec {
    /// A corpus with no changes at all.
    pub fn without_changes(num_docs: usize, topics: TopicMatrix, alpha: Alpha, doc_length: DocLength, seed: u64) -> Result<Self> {
        let spec = Self {
            num_docs,
            doc_length,
            changepoints: Vec::new(),
            alphas: vec![alpha],
            topics,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_topics(&self) -> usize {
        self.topics.num_topics()
    }

    pub fn vocab_size(&self) -> usize {
        self.topics.vocab_size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_docs == 0 {
            return Err(Error::invalid("num_docs must be positive"));
        }
        self.doc_length.validate()?;
        if self.alphas.len() != self.changepoints.len() + 1 {
            return Err(Error::invalid(format!(
                "{} changepoints need {} alphas, got {}",
                self.changepoints.len(),
                self.changepoints.len() + 1,
                self.alphas.len()
            )));
        }
        let mut prev = 0;
        for &c in &self.changepoints {
            if c <= prev || c >= self.num_docs {
                return Err(Error::invalid("changepoints must be strictly increasing within (0, T)"));
            }
            prev = c;
        }
        let k = self.num_topics();
        if let Some(a) = self.alphas.iter().find(|a| a.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: a.len(),
            });
        }
        if self.topics.max_column_sum_error() > 1e-9 || self.topics.as_column_major().iter().any(|&p| p < 0.0) {
            return Err(Error::invalid("topic columns must be probability vectors"));
        }
        Ok(())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            changepoints: self.changepoints.clone(),
            segment_alphas: self.alphas.iter().map(|a| a.values().to_vec()).collect(),
            topics: self.topics.clone(),
            num_docs: self.num_docs,
            doc_length: self.doc_length,
            seed: self.seed,
        }
    }
}

/// Parameters for [`random_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSpecParams {
    pub num_docs: usize,
    pub vocab_size: usize,
    pub num_topics: usize,
    pub num_changes: usize,
    /// Common ℓ₂ norm of every segment's Dirichlet parameter.
    pub norm: f64,
    /// Minimum relative separation ‖α_{i+1} − α_i‖ / ‖α_i‖.
    pub epsilon: f64,
    pub min_gap: usize,
    pub max_gap: usize,
    pub doc_length: DocLength,
    /// Symmetric Dirichlet concentration the topic columns are drawn from.
    pub topic_concentration: f64,
    pub seed: u64,
}

impl RandomSpecParams {
    /// Defaults scaled from the large synthetic benchmark: gaps of
    /// `[T/60, T/10]`, unit norm, separation 0.5.
    pub fn new(num_docs: usize, vocab_size: usize, num_topics: usize, num_changes: usize) -> Self {
        Self {
            num_docs,
            vocab_size,
            num_topics,
            num_changes,
            norm: 1.0,
            epsilon: 0.5,
            min_gap: (num_docs / 60).max(1),
            max_gap: (num_docs / 10).max(1),
            doc_length: DocLength::default(),
            topic_concentration: 0.1,
            seed: 0,
        }
    }
}

/// Draws a random specification: changepoint gaps uniform in
/// `[min_gap, max_gap]`, equal-norm segment parameters with the requested
/// separation, and Dirichlet topics.
pub fn random_spec(p: &RandomSpecParams) -> Result<TtmcSpec> {
    if p.num_docs == 0 || p.vocab_size == 0 || p.num_topics == 0 {
        return Err(Error::invalid("T, V and K must be positive"));
    }
    if !(p.norm > 0.0 && p.norm.is_finite()) {
        return Err(Error::invalid("norm must be positive"));
    }
    if !(p.epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if !(p.topic_concentration > 0.0) {
        return Err(Error::invalid("topic concentration must be positive"));
    }
    p.doc_length.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let changepoints = sample_changepoints(&mut rng, p)?;

    let mut alphas = Vec::with_capacity(p.num_changes + 1);
    alphas.push(random_direction(&mut rng, p.num_topics, p.norm));
    for _ in 0..p.num_changes {
        let prev = alphas.last().unwrap();
        let mut next = None;
        for _ in 0..SEPARATION_RETRIES {
            let cand = random_direction(&mut rng, p.num_topics, p.norm);
            let dist = cand.iter().zip(prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist / p.norm >= p.epsilon {
                next = Some(cand);
                break;
            }
        }
        match next {
            Some(a) => alphas.push(a),
            None => {
                return Err(Error::Infeasible(format!(
                    "no Dirichlet parameter with relative separation {} found in {SEPARATION_RETRIES} draws",
                    p.epsilon
                )))
            }
        }
    }

    let topic_alpha = vec![p.topic_concentration; p.vocab_size];
    let mut columns = Vec::with_capacity(p.num_topics);
    for _ in 0..p.num_topics {
        let mut col = vec![0.0; p.vocab_size];
        sample_dirichlet(&mut rng, &topic_alpha, &mut col);
        columns.push(col);
    }

    let spec = TtmcSpec {
        num_docs: p.num_docs,
        doc_length: p.doc_length,
        changepoints,
        alphas: alphas.into_iter().map(Alpha::new).collect::<Result<_>>()?,
        topics: TopicMatrix::from_columns(columns)?,
        seed: p.seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn sample_changepoints(rng: &mut ChaCha8Rng, p: &RandomSpecParams) -> Result<Vec<usize>> {
    let m = p.num_changes;
    if m == 0 {
        return Ok(Vec::new());
    }
    if p.min_gap == 0 || p.min_gap > p.max_gap {
        return Err(Error::Infeasible(format!("gap range [{}, {}] is empty", p.min_gap, p.max_gap)));
    }
    if m * p.min_gap >= p.num_docs {
        return Err(Error::Infeasible(format!(
            "{m} changepoints with gaps ≥ {} do not fit in {} documents",
            p.min_gap, p.num_docs
        )));
    }
    for _ in 0..GAP_RETRIES {
        let mut cps = Vec::with_capacity(m);
        let mut pos = 0;
        for _ in 0..m {
            pos += rng.random_range(p.min_gap..=p.max_gap);
            cps.push(pos);
        }
        if pos < p.num_docs {
            return Ok(cps);
        }
    }
    Err(Error::Infeasible(format!(
        "could not place {m} gaps from [{}, {}] inside {} documents",
        p.min_gap, p.max_gap, p.num_docs
    )))
}

/// Uniform direction on the positive orthant of the sphere, scaled to `norm`.
fn random_direction(rng: &mut ChaCha8Rng, k: usize, norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..k)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            x.abs().max(f64::MIN_POSITIVE)
        })
        .collect();
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / len * norm).max(f64::MIN_POSITIVE)).collect()
}

/// Dirichlet draw computed in log space, which stays accurate for very
/// small concentrations (where plain Gamma draws underflow to zero).
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64], out: &mut [f64]) {
    debug_assert_eq!(alpha.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for (o, &a) in out.iter_mut().zip(alpha) {
        let lg = if a >= 1.0 {
            Gamma::new(a, 1.0).expect("positive shape").sample(rng).ln()
        } else {
            // Γ(a) =d Γ(a + 1) · U^{1/a}
            let g = Gamma::new(a + 1.0, 1.0).expect("positive shape").sample(rng);
            let u: f64 = rng.random::<f64>();
            g.ln() + (1.0 - u).ln() / a
        };
        *o = lg;
        max = max.max(lg);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn cdf(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

#[inline]
fn draw(cdf: &[f64], u: f64) -> usize {
    let x = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= x).min(cdf.len() - 1)
}

/// Vocabulary tokens `w0`, `w1`, …, zero-padded so that lexicographic order
/// matches index order.
pub fn synthetic_vocabulary(v: usize) -> Result<Vocabulary> {
    let width = v.saturating_sub(1).to_string().len();
    Vocabulary::new((0..v).map(|i| format!("w{i:0width$}")).collect())
}

/// Per-document RNG stream, independent of how documents are scheduled.
pub(crate) fn doc_rng(seed: u64, doc: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(doc as u64 + 1);
    rng
}

/// Samples a corpus from the specification. Deterministic given `spec.seed`.
pub fn generate(spec: &TtmcSpec) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let k = spec.num_topics();
    let word_cdfs: Vec<Vec<f64>> = spec.topics.columns().map(cdf).collect();
    let seg_of = |d: usize| spec.changepoints.partition_point(|&c| c <= d);

    let documents: Vec<Document> = (0..spec.num_docs)
        .into_par_iter()
        .map(|d| {
            let mut rng = doc_rng(spec.seed, d);
            let alpha = spec.alphas[seg_of(d)].values();
            let mut theta = vec![0.0; k];
            sample_dirichlet(&mut rng, alpha, &mut theta);
            let theta_cdf = cdf(&theta);
            let n = rng.random_range(spec.doc_length.min..=spec.doc_length.max);
            let token_ids = (0..n)
                .map(|_| {
                    let z = draw(&theta_cdf, rng.random::<f64>());
                    draw(&word_cdfs[z], rng.random::<f64>()) as u32
                })
                .collect();
            Document {
                time_index: d as i64,
                token_ids,
            }
        })
        .collect();

    let corpus = Corpus::new(synthetic_vocabulary(spec.vocab_size())?, documents)?;
    Ok((corpus, spec.ground_truth()))
}
