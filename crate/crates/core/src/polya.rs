//! Dirichlet-multinomial (Pólya) log-density, gradient and maximum
//! likelihood estimation.
//!
//! The density omits the multinomial coefficient: it is the probability of one
//! particular outcome sequence with the given counts,
//!
//! ```text
//! log p(z | α) = lnΓ(Σα) − lnΓ(Σn + Σα) + Σ_k [lnΓ(n_k + α_k) − lnΓ(α_k)]
//! ```
//!
//! The coefficient does not depend on `α`, so it cancels in every likelihood
//! ratio built on top of this module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma_diff, ln_rising};

/// Strictly positive, finite Dirichlet parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Alpha(Vec<f64>);

impl Alpha {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("alpha must have at least one component"));
        }
        if let Some(bad) = values.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::invalid(format!("alpha components must be positive and finite, got {bad}")));
        }
        Ok(Self(values))
    }

    pub fn symmetric(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for Alpha {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Alpha::new(v)
    }
}

impl From<Alpha> for Vec<f64> {
    fn from(a: Alpha) -> Self {
        a.0
    }
}

fn check_dim(z: &[u32], alpha: &Alpha) -> Result<()> {
    if z.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Log-probability of one count vector under Pólya(α).
pub fn log_density(z: &[u32], alpha: &Alpha) -> Result<f64> {
    check_dim(z, alpha)?;
    let a_sum = alpha.sum();
    let n: u32 = z.iter().sum();
    let mut ll = -ln_rising(a_sum, n);
    for (&nk, &ak) in z.iter().zip(alpha.values()) {
        ll += ln_rising(ak, nk);
    }
    Ok(ll)
}

/// Sum of [`log_density`] over independent observations. An empty list has
/// log-likelihood 0.
pub fn log_likelihood<Z: AsRef<[u32]>>(zs: &[Z], alpha: &Alpha) -> Result<f64> {
    if zs.is_empty() {
        log::warn!("Pólya log-likelihood of an empty observation list");
    }
    zs.iter().map(|z| log_density(z.as_ref(), alpha)).sum()
}

/// Gradient of [`log_likelihood`] with respect to α.
pub fn gradient<Z: AsRef<[u32]>>(zs: &[Z], alpha: &Alpha) -> Result<Vec<f64>> {
    let k = alpha.len();
    let a_sum = alpha.sum();
    let mut g = vec![0.0; k];
    for z in zs {
        let z = z.as_ref();
        check_dim(z, alpha)?;
        let n: u32 = z.iter().sum();
        let common = -digamma_diff(a_sum, n);
        for ((gk, &nk), &ak) in g.iter_mut().zip(z).zip(alpha.values()) {
            *gk += common + digamma_diff(ak, nk);
        }
    }
    Ok(g)
}

/// Count data compressed to distinct values with multiplicities, per topic
/// and for the per-observation totals. Evaluating the likelihood costs one
/// special-function call per distinct value instead of one per observation.
#[derive(Debug, Clone)]
pub struct PolyaStats {
    k: usize,
    n_obs: usize,
    per_topic: Vec<Vec<(u32, f64)>>,
    totals: Vec<(u32, f64)>,
}

fn run_length(mut v: Vec<u32>) -> Vec<(u32, f64)> {
    v.sort_unstable();
    let mut out: Vec<(u32, f64)> = Vec::new();
    for x in v {
        if x == 0 {
            continue;
        }
        match out.last_mut() {
            Some((val, m)) if *val == x => *m += 1.0,
            _ => out.push((x, 1.0)),
        }
    }
    out
}

impl PolyaStats {
    /// Builds statistics from `K`-wide rows.
    pub fn from_rows<'a>(k: usize, rows: impl IntoIterator<Item = &'a [u32]>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("need at least one category"));
        }
        let mut cols: Vec<Vec<u32>> = vec![Vec::new(); k];
        let mut totals = Vec::new();
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: row.len(),
                });
            }
            let mut n = 0u32;
            for (c, &x) in cols.iter_mut().zip(row) {
                c.push(x);
                n += x;
            }
            totals.push(n);
        }
        let n_obs = totals.len();
        Ok(Self {
            k,
            n_obs,
            per_topic: cols.into_iter().map(run_length).collect(),
            totals: run_length(totals),
        })
    }

    pub fn num_categories(&self) -> usize {
        self.k
    }

    pub fn num_observations(&self) -> usize {
        self.n_obs
    }

    /// True when every observation has zero total.
    pub fn is_degenerate(&self) -> bool {
        self.totals.is_empty()
    }

    pub fn log_likelihood(&self, alpha: &[f64]) -> f64 {
        let a_sum: f64 = alpha.iter().sum();
        let mut ll = 0.0;
        for &(n, m) in &self.totals {
            ll -= m * ln_rising(a_sum, n);
        }
        for (vals, &ak) in self.per_topic.iter().zip(alpha) {
            for &(n, m) in vals {
                ll += m * ln_rising(ak, n);
            }
        }
        ll
    }

    /// Log-likelihood and its gradient with respect to α.
    pub fn value_and_gradient(&self, alpha: &[f64], grad: &mut [f64]) -> f64 {
        let a_sum: f64 = alpha.iter().sum();
        let mut ll = 0.0;
        let mut common = 0.0;
        for &(n, m) in &self.totals {
            ll -= m * ln_rising(a_sum, n);
            common -= m * digamma_diff(a_sum, n);
        }
        for ((vals, &ak), g) in self.per_topic.iter().zip(alpha).zip(grad.iter_mut()) {
            let mut gk = common;
            for &(n, m) in vals {
                ll += m * ln_rising(ak, n);
                gk += m * digamma_diff(ak, n);
            }
            *g = gk;
        }
        ll
    }
}

/// Minka's fixed-point iteration for the Pólya MLE. Slower than [`mle`] but
/// cheap per step and monotone; used to refresh the prior inside LDA.
pub fn minka_fixed_point(stats: &PolyaStats, init: &[f64], max_iters: usize, tol: f64) -> Vec<f64> {
    let mut alpha = init.to_vec();
    for _ in 0..max_iters {
        let a_sum: f64 = alpha.iter().sum();
        let denom: f64 = stats.totals.iter().map(|&(n, m)| m * digamma_diff(a_sum, n)).sum();
        if !(denom > 0.0) {
            break;
        }
        let mut change = 0.0f64;
        for (vals, a) in stats.per_topic.iter().zip(alpha.iter_mut()) {
            let num: f64 = vals.iter().map(|&(n, m)| m * digamma_diff(*a, n)).sum();
            let next = (*a * num / denom).max(1e-8);
            change = change.max((next - *a).abs() / *a);
            *a = next;
        }
        if change < tol {
            break;
        }
    }
    alpha
}

/// Settings for [`mle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    /// Stop once the ∞-norm of the α-gradient is at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Step shrink factor of the backtracking line search.
    pub backtrack: f64,
    /// Lower bound on each component of the moment-matched start.
    pub init_floor: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 500,
            backtrack: 0.5,
            init_floor: 1e-3,
        }
    }
}

/// Output of [`mle`], including the objective trace used to check monotonicity.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub alpha: Alpha,
    pub log_likelihood: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after every accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

// Keeps exp(λ) inside a range where lnΓ and ψ stay well conditioned.
const LOG_ALPHA_MIN: f64 = -23.0;
const LOG_ALPHA_MAX: f64 = 23.0;
// Largest change of any log-component in one step.
const MAX_LOG_STEP: f64 = 2.0;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MAX_FLAT_TRIES: usize = 4;

fn moment_match(mean: &[f64], var: &[f64], mean_len: f64, floor: f64) -> Vec<f64> {
    // Var(n_k / n) ≈ p(1-p) [1/n + (1 - 1/n)/(s + 1)] for Pólya with precision s.
    let inv_n = if mean_len > 0.0 { 1.0 / mean_len } else { 1.0 };
    let mut log_s = Vec::new();
    for (&p, &v) in mean.iter().zip(var) {
        let pq = p * (1.0 - p);
        if pq <= 1e-12 {
            continue;
        }
        let excess = v / pq - inv_n;
        let s = if excess <= 1e-9 {
            1e4
        } else {
            ((1.0 - inv_n) / excess - 1.0).clamp(1e-2, 1e4)
        };
        log_s.push(s.ln());
    }
    let s = if log_s.is_empty() {
        1.0
    } else {
        (log_s.iter().sum::<f64>() / log_s.len() as f64).exp()
    };
    mean.iter().map(|&p| (s * p).max(floor)).collect()
}

/// Moment-matched starting value for `rows`.
pub fn moment_init<'a>(k: usize, rows: impl IntoIterator<Item = &'a [u32]>, floor: f64) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    let mut len_sum = 0.0;
    let mut m = 0.0;
    for row in rows {
        let n: u32 = row.iter().sum();
        if n == 0 {
            continue;
        }
        let n = n as f64;
        for ((s, q), &x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(row) {
            let p = x as f64 / n;
            *s += p;
            *q += p * p;
        }
        len_sum += n;
        m += 1.0;
    }
    if m == 0.0 {
        return vec![1.0; k];
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let var: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, p)| (q / m - p * p).max(0.0))
        .collect();
    moment_match(&mean, &var, len_sum / m, floor)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Maximum-likelihood α for Pólya-distributed count vectors.
///
/// Gradient ascent on `λ = ln α`. The gradient is scaled by a BFGS inverse
/// curvature estimate and every step passes an Armijo backtracking test, so
/// the objective never decreases. Stops when the α-gradient ∞-norm drops to
/// `tol`, the line search can make no further progress, or `max_iters` is
/// reached.
pub fn mle_from_stats(stats: &PolyaStats, init: &[f64], cfg: &MleConfig) -> Result<MleFit> {
    let k = stats.num_categories();
    if init.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: init.len(),
        });
    }
    if stats.is_degenerate() {
        return Err(Error::DegenerateData("all observations have zero total".into()));
    }
    Alpha::new(init.to_vec())?;

    let mut lam: Vec<f64> = init.iter().map(|a| a.ln().clamp(LOG_ALPHA_MIN, LOG_ALPHA_MAX)).collect();
    let mut alpha: Vec<f64> = lam.iter().map(|l| l.exp()).collect();
    let mut g_alpha = vec![0.0; k];
    let mut f = stats.value_and_gradient(&alpha, &mut g_alpha);
    let mut trace = vec![f];

    // K = 1 (or any start with a vanishing gradient) is already stationary.
    let mut iterations = 0;
    let mut converged = inf_norm(&g_alpha) <= cfg.tol;

    let mut g_lam: Vec<f64> = g_alpha.iter().zip(&alpha).map(|(g, a)| g * a).collect();
    // Inverse curvature of -f in λ, row-major K x K; None until the first step.
    let mut h_inv: Option<Vec<f64>> = None;
    let mut dir = vec![0.0; k];
    let mut cand_lam = vec![0.0; k];
    let mut cand_alpha = vec![0.0; k];
    let mut cand_g = vec![0.0; k];

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let gnorm = inf_norm(&g_lam);
        if gnorm == 0.0 {
            break;
        }
        match &h_inv {
            Some(h) => {
                for i in 0..k {
                    dir[i] = (0..k).map(|j| h[i * k + j] * g_lam[j]).sum();
                }
            }
            None => {
                for i in 0..k {
                    dir[i] = g_lam[i] * 0.5 / gnorm;
                }
            }
        }
        let mut slope: f64 = dir.iter().zip(&g_lam).map(|(d, g)| d * g).sum();
        if !(slope > 0.0) {
            // Curvature estimate lost positive definiteness; restart.
            for i in 0..k {
                dir[i] = g_lam[i] * 0.5 / gnorm;
            }
            slope = dir.iter().zip(&g_lam).map(|(d, g)| d * g).sum();
            h_inv = None;
        }
        let mut step = (MAX_LOG_STEP / inf_norm(&dir)).min(1.0);

        let mut accepted = false;
        let mut cand_f = f;
        let mut flat_tries = 0;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..k {
                cand_lam[i] = (lam[i] + step * dir[i]).clamp(LOG_ALPHA_MIN, LOG_ALPHA_MAX);
                cand_alpha[i] = cand_lam[i].exp();
            }
            if cand_lam == lam {
                break;
            }
            cand_f = stats.value_and_gradient(&cand_alpha, &mut cand_g);
            if !cand_f.is_finite() {
                step *= cfg.backtrack;
                continue;
            }
            let gain = ARMIJO_C * step * slope;
            if cand_f >= f + gain {
                accepted = true;
                break;
            }
            // Below the rounding level of f the Armijo test is blind; a step
            // is then taken only if f does not drop and the gradient shrinks.
            let noise = 1e-13 * f.abs().max(1.0);
            if gain < noise {
                if cand_f >= f && inf_norm(&cand_g) < inf_norm(&g_alpha) {
                    accepted = true;
                    break;
                }
                flat_tries += 1;
                if flat_tries == MAX_FLAT_TRIES {
                    break;
                }
            }
            step *= cfg.backtrack;
        }
        if !accepted {
            // No ascent direction left at double precision.
            break;
        }
        let new_g_lam: Vec<f64> = cand_g.iter().zip(&cand_alpha).map(|(g, a)| g * a).collect();
        // BFGS on -f: s = Δλ, y = -(Δg).
        let s: Vec<f64> = cand_lam.iter().zip(&lam).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_lam.iter().zip(&new_g_lam).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        if sy > 1e-12 * yy.sqrt() * s.iter().map(|a| a * a).sum::<f64>().sqrt() {
            let h = h_inv.get_or_insert_with(|| {
                let mut id = vec![0.0; k * k];
                for i in 0..k {
                    id[i * k + i] = sy / yy;
                }
                id
            });
            bfgs_update(h, &s, &y, sy);
        }
        lam.copy_from_slice(&cand_lam);
        alpha.copy_from_slice(&cand_alpha);
        g_alpha.copy_from_slice(&cand_g);
        g_lam = new_g_lam;
        f = cand_f;
        trace.push(f);
        converged = inf_norm(&g_alpha) <= cfg.tol;
    }

    Ok(MleFit {
        alpha: Alpha::new(alpha)?,
        log_likelihood: f,
        grad_inf_norm: inf_norm(&g_alpha),
        iterations,
        converged,
        trace,
    })
}

/// `H <- (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ` with `ρ = 1 / sᵀy`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let k = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..k).map(|i| (0..k).map(|j| h[i * k + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..k {
        for j in 0..k {
            h[i * k + j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Maximum-likelihood α from a list of count vectors. With `init = None`
/// the start is moment-matched.
pub fn mle<Z: AsRef<[u32]>>(zs: &[Z], init: Option<&Alpha>, cfg: &MleConfig) -> Result<MleFit> {
    let k = match (zs.first(), init) {
        (_, Some(a)) => a.len(),
        (Some(z), None) => z.as_ref().len(),
        (None, None) => return Err(Error::DegenerateData("no observations".into())),
    };
    let stats = PolyaStats::from_rows(k, zs.iter().map(|z| z.as_ref()))?;
    if stats.is_degenerate() {
        return Err(Error::DegenerateData("all observations have zero total".into()));
    }
    let start = match init {
        Some(a) => a.values().to_vec(),
        None => moment_init(k, zs.iter().map(|z| z.as_ref()), cfg.init_floor),
    };
    mle_from_stats(&stats, &start, cfg)
}
