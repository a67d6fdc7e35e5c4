//! Topic estimation: collapsed Gibbs LDA, held-out scoring, model selection
//! over a grid of topic counts, and per-document topic-count vectors.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::polya::{minka_fixed_point, Alpha, PolyaStats};
use crate::synthgen::doc_rng;
use crate::topics::TopicMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    /// Total Gibbs sweeps.
    pub iters: usize,
    /// Sweeps discarded before topic estimates are averaged.
    pub burn_in: usize,
    /// Averaging interval (in sweeps) after burn-in.
    pub sample_lag: usize,
    /// Symmetric topic-word smoothing.
    pub beta: f64,
    /// Re-estimate α every this many sweeps after burn-in (0 = only at the end).
    pub alpha_update_every: usize,
    /// Gibbs sweeps used to infer θ on each held-out document prefix.
    pub heldout_sweeps: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            iters: 300,
            burn_in: 150,
            sample_lag: 5,
            beta: 0.01,
            alpha_update_every: 25,
            heldout_sweeps: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iters: usize,
    pub burn_in: usize,
    pub beta: f64,
    pub seed: u64,
    /// Per-word held-out negative log-likelihood, when the model was scored.
    pub log_perplexity: Option<f64>,
    pub vocab_hash: String,
}

/// Fitted topics plus the Dirichlet prior over topic proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub phi: TopicMatrix,
    pub alpha: Alpha,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "V")]
    v: usize,
    alpha: Vec<f64>,
    /// Column-major `V x K`.
    phi: Vec<f64>,
    vocab_hash: String,
    train_meta: TrainMeta,
}

impl TopicModel {
    pub fn num_topics(&self) -> usize {
        self.phi.num_topics()
    }

    pub fn vocab_size(&self) -> usize {
        self.phi.vocab_size()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            k: self.num_topics(),
            v: self.vocab_size(),
            alpha: self.alpha.values().to_vec(),
            phi: self.phi.as_column_major().to_vec(),
            vocab_hash: self.meta.vocab_hash.clone(),
            train_meta: self.meta.clone(),
        };
        let out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: ModelFile = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let phi = TopicMatrix::from_column_major(f.v, f.k, f.phi)?;
        let alpha = Alpha::new(f.alpha)?;
        if alpha.len() != f.k {
            return Err(Error::DimensionMismatch {
                expected: f.k,
                got: alpha.len(),
            });
        }
        let mut meta = f.train_meta;
        meta.vocab_hash = f.vocab_hash;
        Ok(Self { phi, alpha, meta })
    }
}

/// Per-document topic counts (`T x K`, row-major).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCounts {
    num_topics: usize,
    z: Vec<u32>,
    doc_lengths: Vec<u32>,
}

impl TopicCounts {
    pub fn from_rows(num_topics: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        if num_topics == 0 {
            return Err(Error::invalid("need at least one topic"));
        }
        let mut z = Vec::with_capacity(rows.len() * num_topics);
        let mut doc_lengths = Vec::with_capacity(rows.len());
        for r in rows {
            if r.len() != num_topics {
                return Err(Error::DimensionMismatch {
                    expected: num_topics,
                    got: r.len(),
                });
            }
            doc_lengths.push(r.iter().sum());
            z.extend(r);
        }
        Ok(Self {
            num_topics,
            z,
            doc_lengths,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn row(&self, d: usize) -> &[u32] {
        &self.z[d * self.num_topics..(d + 1) * self.num_topics]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.z.chunks_exact(self.num_topics)
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    /// Rows `start..=end`.
    pub fn rows_in(&self, start: usize, end: usize) -> impl Iterator<Item = &[u32]> {
        (start..=end).map(move |d| self.row(d))
    }
}

struct Flat {
    words: Vec<u32>,
    offsets: Vec<usize>,
}

fn flatten(corpus: &Corpus) -> Flat {
    let mut words = Vec::with_capacity(corpus.num_tokens());
    let mut offsets = Vec::with_capacity(corpus.len() + 1);
    offsets.push(0);
    for d in corpus.documents() {
        words.extend_from_slice(&d.token_ids);
        offsets.push(words.len());
    }
    Flat { words, offsets }
}

#[inline]
fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Collapsed Gibbs sampling for LDA with `k` topics.
///
/// `phi` is averaged over post-burn-in samples of the smoothed topic-word
/// distribution; `alpha` is refitted periodically from the sampled
/// document-topic counts with Minka's fixed-point iteration.
pub fn fit_lda(train: &Corpus, k: usize, cfg: &LdaConfig) -> Result<TopicModel> {
    if k == 0 {
        return Err(Error::invalid("number of topics must be positive"));
    }
    if !(cfg.beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    let n_tokens = train.num_tokens();
    if n_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    if k > n_tokens {
        return Err(Error::DegenerateData(format!("{k} topics for only {n_tokens} tokens")));
    }
    let v = train.vocab_size();
    let n_docs = train.len();
    let flat = flatten(train);
    let beta = cfg.beta;
    let v_beta = v as f64 * beta;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut alpha = vec![1.0 / k as f64; k];
    let mut z = vec![0u32; n_tokens];
    let mut n_dk = vec![0u32; n_docs * k];
    let mut n_wk = vec![0u32; v * k];
    let mut n_k = vec![0u32; k];
    for d in 0..n_docs {
        for i in flat.offsets[d]..flat.offsets[d + 1] {
            let t = rng.random_range(0..k);
            z[i] = t as u32;
            n_dk[d * k + t] += 1;
            n_wk[flat.words[i] as usize * k + t] += 1;
            n_k[t] += 1;
        }
    }

    let mut phi_acc = vec![0.0; v * k];
    let mut samples = 0usize;
    let mut weights = vec![0.0; k];
    let lag = cfg.sample_lag.max(1);

    for sweep in 0..cfg.iters {
        for d in 0..n_docs {
            let row = &mut n_dk[d * k..(d + 1) * k];
            for i in flat.offsets[d]..flat.offsets[d + 1] {
                let w = flat.words[i] as usize;
                let old = z[i] as usize;
                let wk = &mut n_wk[w * k..(w + 1) * k];
                row[old] -= 1;
                wk[old] -= 1;
                n_k[old] -= 1;
                for t in 0..k {
                    weights[t] = (row[t] as f64 + alpha[t]) * (wk[t] as f64 + beta) / (n_k[t] as f64 + v_beta);
                }
                let new = sample_index(&mut rng, &weights);
                z[i] = new as u32;
                row[new] += 1;
                wk[new] += 1;
                n_k[new] += 1;
            }
        }
        let done = sweep + 1;
        if done > cfg.burn_in {
            let since = done - cfg.burn_in;
            if since % lag == 0 {
                accumulate_phi(&mut phi_acc, &n_wk, &n_k, k, beta, v_beta);
                samples += 1;
            }
            if cfg.alpha_update_every > 0 && since % cfg.alpha_update_every == 0 {
                alpha = refit_alpha(&n_dk, k, &alpha);
            }
        }
    }
    if samples == 0 {
        accumulate_phi(&mut phi_acc, &n_wk, &n_k, k, beta, v_beta);
        samples = 1;
    }
    alpha = refit_alpha(&n_dk, k, &alpha);

    // phi_acc is word-major; TopicMatrix wants one column per topic.
    let mut cols = vec![vec![0.0; v]; k];
    for w in 0..v {
        for t in 0..k {
            cols[t][w] = phi_acc[w * k + t] / samples as f64;
        }
    }
    for c in &mut cols {
        let s: f64 = c.iter().sum();
        c.iter_mut().for_each(|x| *x /= s);
    }

    Ok(TopicModel {
        phi: TopicMatrix::from_columns(cols)?,
        alpha: Alpha::new(alpha)?,
        meta: TrainMeta {
            iters: cfg.iters,
            burn_in: cfg.burn_in,
            beta,
            seed: cfg.seed,
            log_perplexity: None,
            vocab_hash: train.vocabulary().fingerprint(),
        },
    })
}

fn accumulate_phi(acc: &mut [f64], n_wk: &[u32], n_k: &[u32], k: usize, beta: f64, v_beta: f64) {
    let denom: Vec<f64> = n_k.iter().map(|&n| 1.0 / (n as f64 + v_beta)).collect();
    for (i, (a, &n)) in acc.iter_mut().zip(n_wk).enumerate() {
        *a += (n as f64 + beta) * denom[i % k];
    }
}

fn refit_alpha(n_dk: &[u32], k: usize, current: &[f64]) -> Vec<f64> {
    match PolyaStats::from_rows(k, n_dk.chunks_exact(k)) {
        Ok(stats) if !stats.is_degenerate() => minka_fixed_point(&stats, current, 200, 1e-6),
        _ => current.to_vec(),
    }
}

/// Per-word held-out negative log-likelihood by document completion: θ is
/// inferred from the first half of each document and the second half is
/// scored. Lower is better. Documents with fewer than two tokens are skipped.
pub fn log_perplexity(model: &TopicModel, heldout: &Corpus, sweeps: usize, seed: u64) -> Result<f64> {
    if heldout.vocab_size() != model.vocab_size() {
        return Err(Error::DimensionMismatch {
            expected: model.vocab_size(),
            got: heldout.vocab_size(),
        });
    }
    let k = model.num_topics();
    let alpha = model.alpha.values();
    let a_sum = model.alpha.sum();
    let phi = &model.phi;
    let skipped = heldout.documents().iter().filter(|d| d.len() < 2).count();
    if skipped > 0 {
        log::warn!("skipping {skipped} held-out documents with fewer than 2 tokens");
    }
    let burn = sweeps / 5;
    let per_doc: Vec<(f64, usize)> = heldout
        .documents()
        .par_iter()
        .enumerate()
        .filter(|(_, d)| d.len() >= 2)
        .map(|(idx, doc)| {
            let mut rng = doc_rng(seed, idx);
            let half = doc.len() / 2;
            let (seen, unseen) = doc.token_ids.split_at(half);
            let mut theta = vec![0.0; k];
            if k == 1 {
                theta[0] = 1.0;
            } else {
                let mut counts = vec![0u32; k];
                let mut z: Vec<usize> = seen.iter().map(|_| rng.random_range(0..k)).collect();
                for &t in &z {
                    counts[t] += 1;
                }
                let mut weights = vec![0.0; k];
                let mut kept = 0usize;
                for sweep in 0..sweeps.max(1) {
                    for (i, &w) in seen.iter().enumerate() {
                        counts[z[i]] -= 1;
                        for t in 0..k {
                            weights[t] = (counts[t] as f64 + alpha[t]) * phi.get(w as usize, t);
                        }
                        let new = sample_index(&mut rng, &weights);
                        z[i] = new;
                        counts[new] += 1;
                    }
                    if sweep >= burn {
                        let denom = seen.len() as f64 + a_sum;
                        for t in 0..k {
                            theta[t] += (counts[t] as f64 + alpha[t]) / denom;
                        }
                        kept += 1;
                    }
                }
                theta.iter_mut().for_each(|x| *x /= kept as f64);
            }
            let nll: f64 = unseen
                .iter()
                .map(|&w| {
                    let p: f64 = (0..k).map(|t| theta[t] * phi.get(w as usize, t)).sum();
                    -p.ln()
                })
                .sum();
            (nll, unseen.len())
        })
        .collect();
    let (nll, n) = per_doc.iter().fold((0.0, 0usize), |(a, b), (x, y)| (a + x, b + y));
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(nll / n as f64)
}

/// One model per candidate topic count, fitted on `w1` and scored on `w2`.
#[derive(Debug, Clone)]
pub struct ModelSelection {
    pub best: TopicModel,
    /// `(K, held-out score)` for every grid point, in grid order.
    pub scores: Vec<(usize, f64)>,
}

/// Fits every `K` in the grid on `w1` and keeps the one with the lowest
/// held-out perplexity on `w2` (ties go to the smaller `K`).
pub fn select_model(w1: &Corpus, w2: &Corpus, k_grid: &[usize], cfg: &LdaConfig) -> Result<ModelSelection> {
    if k_grid.is_empty() {
        return Err(Error::invalid("K grid is empty"));
    }
    let fitted: Vec<Result<TopicModel>> = k_grid
        .par_iter()
        .map(|&k| {
            let mut m = fit_lda(w1, k, cfg)?;
            let score = log_perplexity(&m, w2, cfg.heldout_sweeps, cfg.seed)?;
            m.meta.log_perplexity = Some(score);
            Ok(m)
        })
        .collect();
    let fitted = fitted.into_iter().collect::<Result<Vec<_>>>()?;
    let scores: Vec<(usize, f64)> = fitted
        .iter()
        .map(|m| (m.num_topics(), m.meta.log_perplexity.unwrap_or(f64::INFINITY)))
        .collect();
    // Scores within rounding of the minimum count as ties.
    let min = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs().max(1.0);
    let best_idx = (0..fitted.len())
        .filter(|&i| scores[i].1 <= min + tol)
        .min_by_key(|&i| scores[i].0)
        .expect("non-empty grid");
    let best = fitted.into_iter().nth(best_idx).expect("index in range");
    Ok(ModelSelection { best, scores })
}

/// Assigns every word to the topic under which it is most probable (ties go
/// to the lowest topic index) and counts assignments per document.
pub fn estimate_topic_counts(model: &TopicModel, corpus: &Corpus) -> Result<TopicCounts> {
    let v = model.vocab_size();
    if corpus.vocab_size() != v {
        return Err(Error::DimensionMismatch {
            expected: v,
            got: corpus.vocab_size(),
        });
    }
    let k = model.num_topics();
    let best_topic: Vec<usize> = (0..v)
        .map(|w| {
            let mut best = 0;
            for t in 1..k {
                if model.phi.get(w, t) > model.phi.get(w, best) {
                    best = t;
                }
            }
            best
        })
        .collect();
    let mut z = vec![0u32; corpus.len() * k];
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    for (d, doc) in corpus.documents().iter().enumerate() {
        for &w in &doc.token_ids {
            let w = w as usize;
            if w >= v {
                return Err(Error::TokenOutOfRange { id: w, vocab_size: v });
            }
            z[d * k + best_topic[w]] += 1;
        }
        doc_lengths.push(doc.len() as u32);
    }
    Ok(TopicCounts {
        num_topics: k,
        z,
        doc_lengths,
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

    fn model(cols: Vec<Vec<f64>>) -> TopicModel {
        let k = cols.len();
        TopicModel {
            phi: TopicMatrix::from_columns(cols).unwrap(),
            alpha: Alpha::symmetric(k, 0.5).unwrap(),
            meta: TrainMeta {
                iters: 0,
                burn_in: 0,
                beta: 0.01,
                seed: 0,
                log_perplexity: None,
                vocab_hash: String::new(),
            },
        }
    }

    fn quick() -> LdaConfig {
        LdaConfig {
            iters: 40,
            burn_in: 20,
            ..LdaConfig::default()
        }
    }

    #[test]
    fn single_word_vocabulary() {
        let c = corpus(1, vec![vec![0, 0, 0], vec![0, 0]]);
        let m = fit_lda(&c, 3, &quick()).unwrap();
        assert!(m.phi.as_column_major().iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_topic_is_smoothed_unigram() {
        let c = corpus(3, vec![vec![0, 0, 1], vec![0, 2, 2, 2]]);
        let cfg = quick();
        let m = fit_lda(&c, 1, &cfg).unwrap();
        let n = 7.0;
        let expect = [3.0, 1.0, 3.0].map(|x: f64| (x + cfg.beta) / (n + 3.0 * cfg.beta));
        for (p, e) in m.phi.column(0).iter().zip(expect) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_topics_is_an_error() {
        let c = corpus(2, vec![vec![0, 1]]);
        assert!(matches!(fit_lda(&c, 3, &quick()), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn fit_is_deterministic() {
        let c = corpus(4, vec![vec![0, 1, 0, 1], vec![2, 3, 3], vec![0, 0, 2, 3, 1]]);
        let a = fit_lda(&c, 2, &quick()).unwrap();
        let b = fit_lda(&c, 2, &quick()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_counts() {
        let m = model(vec![vec![0.9, 0.1], vec![0.1, 0.9]]);
        let c = corpus(2, vec![vec![0, 0, 1]]);
        let z = estimate_topic_counts(&m, &c).unwrap();
        assert_eq!(z.row(0), &[2, 1]);
    }

    #[test]
    fn argmax_ties_go_to_first_topic() {
        let m = model(vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]);
        let c = corpus(2, vec![vec![0, 1, 1], vec![1]]);
        let z = estimate_topic_counts(&m, &c).unwrap();
        assert_eq!(z.row(0), &[3, 0, 0]);
        assert_eq!(z.row(1), &[1, 0, 0]);
        assert_eq!(z.doc_lengths(), &[3, 1]);
    }

    #[test]
    fn counts_need_matching_vocabulary() {
        let m = model(vec![vec![0.5, 0.5]]);
        let c = corpus(3, vec![vec![2]]);
        assert!(estimate_topic_counts(&m, &c).is_err());
    }

    #[test]
    fn perplexity_single_topic_closed_form() {
        let docs = vec![vec![0, 1, 0, 2], vec![1, 1, 2], vec![0, 0, 0, 1, 2, 2]];
        let c = corpus(3, docs.clone());
        let cfg = quick();
        let m = fit_lda(&c, 1, &cfg).unwrap();
        let phi = m.phi.column(0).to_vec();
        let (mut nll, mut n) = (0.0, 0);
        for d in &docs {
            for &w in &d[d.len() / 2..] {
                nll -= phi[w as usize].ln();
                n += 1;
            }
        }
        let got = log_perplexity(&m, &c, 10, 3).unwrap();
        assert!((got - nll / n as f64).abs() < 1e-12);
    }

    #[test]
    fn perplexity_needs_scorable_documents() {
        let m = model(vec![vec![0.5, 0.5]]);
        let c = corpus(2, vec![vec![0], vec![1]]);
        assert!(log_perplexity(&m, &c, 10, 0).is_err());
    }

    #[test]
    fn singleton_grid_and_tie_rule() {
        let c = corpus(4, vec![vec![0, 1, 0, 1], vec![2, 3, 3, 2], vec![0, 0, 2, 3, 1]]);
        let sel = select_model(&c, &c, &[2], &quick()).unwrap();
        assert_eq!(sel.best.num_topics(), 2);
        // V = 1 makes every K score identically.
        let c1 = corpus(1, vec![vec![0, 0, 0], vec![0, 0]]);
        let sel = select_model(&c1, &c1, &[3, 2], &quick()).unwrap();
        assert!((sel.scores[0].1 - sel.scores[1].1).abs() < 1e-12);
        assert_eq!(sel.best.num_topics(), 2);
    }

    #[test]
    fn model_file_round_trip() {
        let m = model(vec![vec![0.25, 0.75], vec![0.6, 0.4]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(TopicModel::load(&p).unwrap(), m);
    }
}
