//! Latent semantic analysis baseline: truncated SVD document embeddings and
//! wild binary segmentation with the multivariate CUSUM statistic.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{length_grid, length_rng, quantile, Approach, TableHeader, ThresholdTable};
use crate::corpus::Corpus;
use crate::cpstat::{cusum_statistic, Series};
use crate::error::{Error, Result};
use crate::segment::{filter, mwbs, sample_intervals, score_intervals, sub_seed, ChangepointResult, ScoredInterval};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Raw term counts.
    #[default]
    Raw,
    /// Counts times `ln(T / df)`.
    TfIdf,
}

/// Sparse `V x T` term-document matrix, one column per document.
#[derive(Debug, Clone)]
pub struct TermDocument {
    vocab_size: usize,
    columns: Vec<Vec<(usize, f64)>>,
}

impl TermDocument {
    pub fn new(corpus: &Corpus, weighting: Weighting) -> Self {
        let v = corpus.vocab_size();
        let mut columns: Vec<Vec<(usize, f64)>> = corpus
            .documents()
            .iter()
            .map(|d| {
                let mut ids: Vec<u32> = d.token_ids.clone();
                ids.sort_unstable();
                let mut col: Vec<(usize, f64)> = Vec::new();
                for w in ids {
                    match col.last_mut() {
                        Some((last, c)) if *last == w as usize => *c += 1.0,
                        _ => col.push((w as usize, 1.0)),
                    }
                }
                col
            })
            .collect();
        if weighting == Weighting::TfIdf {
            let mut df = vec![0usize; v];
            for col in &columns {
                for &(w, _) in col {
                    df[w] += 1;
                }
            }
            let t = columns.len() as f64;
            for col in &mut columns {
                for (w, c) in col.iter_mut() {
                    *c *= (t / df[*w] as f64).ln();
                }
            }
        }
        Self {
            vocab_size: v,
            columns,
        }
    }

    pub fn num_terms(&self) -> usize {
        self.vocab_size
    }

    pub fn num_docs(&self) -> usize {
        self.columns.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.vocab_size, self.columns.len());
        for (d, col) in self.columns.iter().enumerate() {
            for &(w, c) in col {
                m[(w, d)] = c;
            }
        }
        m
    }

    /// `Xᵀ Q` for a `V x b` matrix `Q`.
    fn tr_mul(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let b = q.ncols();
        let mut out = DMatrix::zeros(self.columns.len(), b);
        for (d, col) in self.columns.iter().enumerate() {
            for j in 0..b {
                out[(d, j)] = col.iter().map(|&(w, c)| c * q[(w, j)]).sum();
            }
        }
        out
    }

    /// `X Y` for a `T x b` matrix `Y`.
    fn mul(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let b = y.ncols();
        let mut out = DMatrix::zeros(self.vocab_size, b);
        for (d, col) in self.columns.iter().enumerate() {
            for j in 0..b {
                let yd = y[(d, j)];
                if yd != 0.0 {
                    for &(w, c) in col {
                        out[(w, j)] += c * yd;
                    }
                }
            }
        }
        out
    }

    /// Gram matrix of the smaller side: `X Xᵀ` if `V <= T`, else `Xᵀ X`.
    fn small_gram(&self) -> DMatrix<f64> {
        let (v, t) = (self.vocab_size, self.columns.len());
        if v <= t {
            let mut g = DMatrix::zeros(v, v);
            for col in &self.columns {
                for &(a, ca) in col {
                    for &(b, cb) in col {
                        g[(a, b)] += ca * cb;
                    }
                }
            }
            g
        } else {
            let mut dense = vec![0.0; v];
            let mut g = DMatrix::zeros(t, t);
            for (i, ci) in self.columns.iter().enumerate() {
                for &(w, c) in ci {
                    dense[w] = c;
                }
                for (j, cj) in self.columns.iter().enumerate().skip(i) {
                    let dot: f64 = cj.iter().map(|&(w, c)| c * dense[w]).sum();
                    g[(i, j)] = dot;
                    g[(j, i)] = dot;
                }
                for &(w, _) in ci {
                    dense[w] = 0.0;
                }
            }
            g
        }
    }
}

/// Every singular value of the term-document matrix, non-increasing.
pub fn singular_spectrum(x: &TermDocument) -> Vec<f64> {
    let eig = SymmetricEigen::new(x.small_gram());
    let mut s: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsaEmbedding {
    /// Retained rank.
    pub k: usize,
    /// `T x k`: each document's term vector projected on the top `k` left
    /// singular vectors.
    pub doc_vectors: DMatrix<f64>,
    /// `V x k` left singular vectors (empty when loaded from disk).
    pub left_vectors: DMatrix<f64>,
    /// Full spectrum when requested, otherwise the top `k`.
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsaOptions {
    pub weighting: Weighting,
    pub full_spectrum: bool,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for LsaOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::Raw,
            full_spectrum: true,
            max_iters: 2000,
            seed: 0,
        }
    }
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Top-`k` singular triplets by block subspace iteration on `X Xᵀ` with a
/// Rayleigh–Ritz step through the small SVD of `Xᵀ Q`. Returns
/// `(σ, U, Xᵀ U)` in non-increasing order of σ.
fn top_singular(x: &TermDocument, k: usize, max_iters: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (v, t) = (x.num_terms(), x.num_docs());
    let rank_cap = v.min(t);
    let b = (2 * k).max(k + 10).min(rank_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = DMatrix::from_fn(v, b, |_, _| rng.random::<f64>() - 0.5);
    let mut q = orthonormalize(start);
    let mut prev: Vec<f64> = vec![0.0; k];
    let mut stable = 0;
    for _ in 0..max_iters {
        let z = x.tr_mul(&q);
        let sv = z.clone().svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let change = s
            .iter()
            .zip(&prev)
            .take(k)
            .map(|(a, p)| (a - p).abs() / a.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        prev = s[..k].to_vec();
        if change < 1e-14 {
            stable += 1;
            if stable >= 3 {
                break;
            }
        } else {
            stable = 0;
        }
        q = orthonormalize(x.mul(&z));
    }
    let z = x.tr_mul(&q);
    let svd = z.svd(true, true);
    let vt = svd.v_t.expect("requested");
    let u_z = svd.u.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let order = &order[..k];
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    // Qᵀ X = V_z Σ U_zᵀ, so U = Q V_z and Xᵀ U = U_z Σ.
    let mut left = DMatrix::zeros(v, k);
    let mut docs = DMatrix::zeros(t, k);
    for (c, &i) in order.iter().enumerate() {
        let u = &q * vt.row(i).transpose();
        let mut sign = 1.0;
        let mut big = 0.0;
        for &val in u.iter() {
            if val.abs() > big {
                big = val.abs();
                sign = val.signum();
            }
        }
        left.set_column(c, &(u * sign));
        docs.set_column(c, &(u_z.column(i) * (svd.singular_values[i] * sign)));
    }
    (sigma, left, docs)
}

/// Embeds every document with a rank-`k` truncated SVD of the term-document
/// matrix.
pub fn lsa_embed(corpus: &Corpus, k: usize, opts: &LsaOptions) -> Result<LsaEmbedding> {
    let x = TermDocument::new(corpus, opts.weighting);
    let cap = x.num_terms().min(x.num_docs());
    if k == 0 || k > cap {
        return Err(Error::invalid(format!("rank {k} outside 1..={cap}")));
    }
    let (sigma, left_vectors, doc_vectors) = top_singular(&x, k, opts.max_iters, opts.seed);
    let singular_values = if opts.full_spectrum {
        let mut full = singular_spectrum(&x);
        full[..k].copy_from_slice(&sigma);
        for i in k..full.len() {
            full[i] = full[i].min(full[i - 1]);
        }
        full
    } else {
        sigma
    };
    Ok(LsaEmbedding {
        k,
        doc_vectors,
        left_vectors,
        singular_values,
    })
}

pub fn write_scree(path: &Path, singular_values: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "rank,singular_value")?;
    for (i, s) in singular_values.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, s)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EmbeddingHeader {
    rows: usize,
    cols: usize,
    dtype: String,
    singular_values: Vec<f64>,
}

impl LsaEmbedding {
    pub fn num_docs(&self) -> usize {
        self.doc_vectors.nrows()
    }

    /// Row-major copy of the document vectors.
    pub fn rows(&self) -> Vec<f64> {
        let (t, k) = self.doc_vectors.shape();
        let mut out = Vec::with_capacity(t * k);
        for d in 0..t {
            out.extend(self.doc_vectors.row(d).iter());
        }
        out
    }

    /// JSON header line, then the `T x k` matrix as little-endian f64,
    /// row-major.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = EmbeddingHeader {
            rows: self.num_docs(),
            cols: self.k,
            dtype: "f64-le".into(),
            singular_values: self.singular_values.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for x in self.rows() {
            out.write_all(&x.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: EmbeddingHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.dtype != "f64-le" {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported dtype {}", header.dtype),
            });
        }
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != header.rows * header.cols * 8 {
            return Err(Error::DimensionMismatch {
                expected: header.rows * header.cols * 8,
                got: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            k: header.cols,
            doc_vectors: DMatrix::from_row_slice(header.rows, header.cols, &values),
            left_vectors: DMatrix::zeros(0, header.cols),
            singular_values: header.singular_values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsaDetectConfig {
    pub delta: usize,
    pub eta: f64,
    /// Sampled intervals; `None` means five times the series length.
    pub num_intervals: Option<usize>,
    /// Shuffled null samples per grid length.
    pub calibration_intervals: usize,
    pub grid_ratio: f64,
    pub seed: u64,
}

impl Default for LsaDetectConfig {
    fn default() -> Self {
        Self {
            delta: 20,
            eta: 0.5,
            num_intervals: None,
            calibration_intervals: 100,
            grid_ratio: 1.25,
            seed: 0,
        }
    }
}

/// CUSUM thresholds per length from intervals whose documents are shuffled.
pub fn calibrate_shuffle(xs: &Series, cfg: &LsaDetectConfig) -> Result<ThresholdTable> {
    let t = xs.len();
    if cfg.delta < 2 || cfg.delta > t {
        return Err(Error::invalid(format!("minimum length {} does not fit in {t} documents", cfg.delta)));
    }
    if !(cfg.eta > 0.0 && cfg.eta <= 1.0) {
        return Err(Error::invalid(format!("quantile {} outside (0, 1]", cfg.eta)));
    }
    if cfg.calibration_intervals == 0 {
        return Err(Error::invalid("need at least one interval per length"));
    }
    let seed = sub_seed(cfg.seed, 1);
    let dim = xs.dim();
    let entries = length_grid(cfg.delta, t, cfg.grid_ratio)
        .into_par_iter()
        .map(|len| {
            let mut rng = length_rng(seed, len);
            let mut idx: Vec<usize> = (0..len).collect();
            let mut buf = vec![0.0; len * dim];
            let mut scores = Vec::with_capacity(cfg.calibration_intervals);
            for _ in 0..cfg.calibration_intervals {
                let s = rng.random_range(0..=t - len);
                idx.shuffle(&mut rng);
                for (r, &i) in idx.iter().enumerate() {
                    buf[r * dim..(r + 1) * dim].copy_from_slice(xs.row(s + i));
                }
                let series = Series::new(&buf, dim)?;
                scores.push(cusum_statistic(&series, 0, len - 1)?.0);
            }
            Ok((len, quantile(&mut scores, cfg.eta)))
        })
        .collect::<Result<Vec<_>>>()?;
    ThresholdTable::new(
        TableHeader {
            approach: Approach::Shuffle,
            eta: cfg.eta,
            num_intervals: cfg.calibration_intervals,
            delta: cfg.delta,
            grid_ratio: cfg.grid_ratio,
            seed,
        },
        entries,
    )
}

pub struct LsaDetection {
    pub result: ChangepointResult,
    pub thresholds: ThresholdTable,
    pub trace: Vec<ScoredInterval>,
}

/// Wild binary segmentation on the embedding series with the multivariate
/// CUSUM statistic; each interval nominates its CUSUM maximiser.
pub fn lsa_detect(emb: &LsaEmbedding, cfg: &LsaDetectConfig) -> Result<LsaDetection> {
    let data = emb.rows();
    let xs = Series::new(&data, emb.k)?;
    let t = xs.len();
    let thresholds = calibrate_shuffle(&xs, cfg)?;
    let num_intervals = cfg.num_intervals.unwrap_or(5 * t);
    let seed = sub_seed(cfg.seed, 2);
    let sampled = if num_intervals == 0 {
        Vec::new()
    } else {
        sample_intervals(t, num_intervals, cfg.delta, seed)?
    };
    let scored = score_intervals(&sampled, |iv| {
        let (value, loc) = cusum_statistic(&xs, iv.start, iv.end)?;
        Ok((loc, value))
    })?;
    let (set, trace) = filter(scored, &thresholds, seed, num_intervals);
    let provenance = mwbs(0, t - 1, &set);
    let changepoints: Vec<usize> = provenance.iter().map(|p| p.changepoint).collect();
    let mut config = serde_json::to_value(cfg)?;
    config["k"] = serde_json::json!(emb.k);
    config["num_intervals_used"] = serde_json::json!(num_intervals);
    Ok(LsaDetection {
        result: ChangepointResult {
            full_positions: changepoints.clone(),
            changepoints,
            time_indices: Vec::new(),
            provenance,
            config,
        },
        thresholds,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Vocabulary};

    fn corpus(v: usize, docs: Vec<Vec<u32>>) -> Corpus {
        let vocab = Vocabulary::new((0..v).map(|i| format!("w{i}")).collect()).unwrap();
        let docs = docs
            .into_iter()
            .enumerate()
            .map(|(i, t)| Document {
                time_index: i as i64,
                token_ids: t,
            })
            .collect();
        Corpus::new(vocab, docs).unwrap()
    }

    fn random_corpus(v: usize, t: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = (0..t)
            .map(|_| (0..rng.random_range(1..30)).map(|_| rng.random_range(0..v as u32)).collect())
            .collect();
        corpus(v, docs)
    }

    #[test]
    fn rank_one_spectrum() {
        // every document has the same term proportions
        let docs: Vec<Vec<u32>> = (1..=6).map(|m| [0u32, 0, 1, 2].repeat(m)).collect();
        let c = corpus(3, docs);
        let e = lsa_embed(&c, 2, &LsaOptions::default()).unwrap();
        assert!(e.singular_values[1] / e.singular_values[0] <= 1e-8);
        let frob: f64 = TermDocument::new(&c, Weighting::Raw).to_dense().norm();
        assert!((e.singular_values[0] - frob).abs() / frob < 1e-12);
    }

    #[test]
    fn matches_dense_svd() {
        let c = random_corpus(40, 60, 1);
        let dense = TermDocument::new(&c, Weighting::Raw).to_dense();
        let mut oracle: Vec<f64> = dense.clone().svd(false, false).singular_values.iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        let e = lsa_embed(&c, 8, &LsaOptions::default()).unwrap();
        for i in 0..8 {
            assert!((e.singular_values[i] - oracle[i]).abs() / oracle[i] < 1e-8, "{i}");
        }
        for i in 8..40 {
            assert!((e.singular_values[i] - oracle[i]).abs() < 1e-6 * oracle[0], "{i}");
        }
    }

    #[test]
    fn full_rank_reconstruction() {
        let c = random_corpus(20, 50, 2);
        let dense = TermDocument::new(&c, Weighting::Raw).to_dense();
        let e = lsa_embed(&c, 20, &LsaOptions::default()).unwrap();
        let recon = &e.left_vectors * e.doc_vectors.transpose();
        assert!((recon - &dense).norm() / dense.norm() < 1e-6);
    }

    #[test]
    fn sign_convention() {
        let c = random_corpus(15, 30, 3);
        let e = lsa_embed(&c, 4, &LsaOptions::default()).unwrap();
        for col in e.left_vectors.column_iter() {
            let big = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn rank_bounds() {
        let c = random_corpus(5, 8, 4);
        assert!(lsa_embed(&c, 0, &LsaOptions::default()).is_err());
        assert!(lsa_embed(&c, 6, &LsaOptions::default()).is_err());
        assert!(lsa_embed(&c, 5, &LsaOptions::default()).is_ok());
    }

    #[test]
    fn tf_idf_zeroes_ubiquitous_terms() {
        let c = corpus(3, vec![vec![0, 1], vec![0, 2], vec![0, 1, 2]]);
        let x = TermDocument::new(&c, Weighting::TfIdf).to_dense();
        assert!(x.row(0).iter().all(|&v| v == 0.0));
        assert!(x[(1, 0)] > 0.0);
    }

    #[test]
    fn embedding_file_round_trip() {
        let c = random_corpus(10, 12, 5);
        let e = lsa_embed(&c, 3, &LsaOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        e.write(&p).unwrap();
        let back = LsaEmbedding::read(&p).unwrap();
        assert_eq!(back.doc_vectors, e.doc_vectors);
        assert_eq!(back.singular_values, e.singular_values);
    }

    fn embedding(rows: usize, k: usize, f: impl Fn(usize, usize) -> f64) -> LsaEmbedding {
        LsaEmbedding {
            k,
            doc_vectors: DMatrix::from_fn(rows, k, f),
            left_vectors: DMatrix::zeros(0, k),
            singular_values: vec![1.0; k],
        }
    }

    #[test]
    fn constant_embeddings_have_no_changes() {
        let e = embedding(200, 3, |_, j| j as f64);
        let d = lsa_detect(&e, &LsaDetectConfig::default()).unwrap();
        assert!(d.result.changepoints.is_empty());
    }

    #[test]
    fn single_mean_shift_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<f64> = (0..300 * 2).map(|_| rng.random::<f64>() - 0.5).collect();
        let e = embedding(300, 2, |i, j| noise[i * 2 + j] + if i > 149 { 2.0 } else { 0.0 });
        let cfg = LsaDetectConfig {
            eta: 1.0,
            ..LsaDetectConfig::default()
        };
        let d = lsa_detect(&e, &cfg).unwrap();
        assert!(d.result.changepoints.iter().any(|&c| c.abs_diff(149) <= 5), "{:?}", d.result.changepoints);
        let flipped = embedding(300, 2, |i, j| -(noise[i * 2 + j] + if i > 149 { 2.0 } else { 0.0 }));
        assert_eq!(lsa_detect(&flipped, &cfg).unwrap().result.changepoints, d.result.changepoints);
    }
}
