//! Diagonal-covariance Gaussian mixtures, universal background model (UBM)
//! training by EM, and one-iteration MAP adaptation of a UBM to a patch set.
//!
//! Every per-patch evaluation happens in the log domain with max-subtraction,
//! so mixtures with hundreds of components never underflow. Patch matrices
//! are processed in fixed-size row chunks that are reduced in chunk order;
//! results are therefore bit-identical for any rayon worker count.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Soft counts below this are treated as "no data" for a component.
pub const COUNT_EPSILON: f64 = 1e-10;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-4;
pub const DEFAULT_RELEVANCE: f64 = 16.0;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-10;
const ROW_CHUNK: usize = 512;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A K-component mixture with diagonal covariances, stored as standard
/// deviations. Doubles as the UBM.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGmm {
    weights: Array1<f64>,
    means: Array2<f64>,
    stds: Array2<f64>,
}

impl DiagonalGmm {
    pub fn new(weights: Array1<f64>, means: Array2<f64>, stds: Array2<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.ncols() == 0 {
            return Err(Error::invalid("a mixture needs K >= 1 and D >= 1"));
        }
        check_dim("mixture means (rows)", k, means.nrows())?;
        check_dim("mixture stds (rows)", k, stds.nrows())?;
        check_dim("mixture stds (cols)", means.ncols(), stds.ncols())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("mixture weights must be finite and nonnegative"));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        if stds.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::invalid("mixture stds must be finite and strictly positive"));
        }
        Ok(Self {
            weights,
            means,
            stds,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn means(&self) -> ArrayView2<'_, f64> {
        self.means.view()
    }

    pub fn stds(&self) -> ArrayView2<'_, f64> {
        self.stds.view()
    }

    pub fn min_std(&self) -> f64 {
        self.stds.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when every variance is at least `variance_floor` (and hence every
    /// std is at least `sqrt(variance_floor)`).
    pub fn respects_floor(&self, variance_floor: f64) -> bool {
        self.stds.iter().all(|s| s * s >= variance_floor * (1.0 - 1e-12))
    }
}

/// Per-component soft counts and posterior-weighted first and second moments
/// of a patch set under a fixed mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `n_k`
    pub counts: Array1<f64>,
    /// `E_k(s)`, normalized by `n_k`.
    pub mean_acc: Array2<f64>,
    /// `E_k(s^2)` (elementwise square), normalized by `n_k`.
    pub sqmean_acc: Array2<f64>,
    /// `T`
    pub total_patches: usize,
}

impl SufficientStats {
    pub fn components(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.mean_acc.ncols()
    }

    /// Combines statistics accumulated over two disjoint patch subsets
    /// against the same model. Counts add; moments combine count-weighted.
    pub fn merge(&self, other: &SufficientStats) -> Result<SufficientStats> {
        check_dim("merged stats (K)", self.components(), other.components())?;
        check_dim("merged stats (D)", self.dim(), other.dim())?;
        let mut out = self.clone();
        out.total_patches += other.total_patches;
        for k in 0..self.components() {
            let (n1, n2) = (self.counts[k], other.counts[k]);
            let n = n1 + n2;
            out.counts[k] = n;
            if n < COUNT_EPSILON {
                continue;
            }
            for d in 0..self.dim() {
                out.mean_acc[[k, d]] =
                    (n1 * self.mean_acc[[k, d]] + n2 * other.mean_acc[[k, d]]) / n;
                out.sqmean_acc[[k, d]] =
                    (n1 * self.sqmean_acc[[k, d]] + n2 * other.sqmean_acc[[k, d]]) / n;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationConfig {
    /// Relevance factor `r` in `alpha_k = n_k / (n_k + r)`.
    pub relevance: f64,
    pub adapt_weights: bool,
    pub adapt_means: bool,
    pub adapt_stds: bool,
    pub variance_floor: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            relevance: DEFAULT_RELEVANCE,
            adapt_weights: true,
            adapt_means: true,
            adapt_stds: true,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relevance > 0.0 && self.relevance.is_finite()) {
            return Err(Error::invalid("relevance must be a positive finite number"));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::invalid("variance_floor must be a positive finite number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub ll_tolerance: f64,
    pub seed: u64,
    pub variance_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            ll_tolerance: 1e-6,
            seed: 0,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.ll_tolerance > 0.0) {
            return Err(Error::invalid("ll_tolerance must be positive"));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::invalid("variance_floor must be a positive finite number"));
        }
        Ok(())
    }
}

/// Quantities produced alongside an adapted model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptDiagnostics {
    pub alphas: Array1<f64>,
    /// Weight renormalization factor.
    pub gamma: f64,
}

/// Precomputed per-component constants for log-joint evaluation.
struct Scorer {
    dim: usize,
    log_norm: Vec<f64>,
    /// Row-major `K x D`.
    means: Vec<f64>,
    inv_var: Vec<f64>,
}

impl Scorer {
    fn new(model: &DiagonalGmm) -> Self {
        let d = model.dim() as f64;
        let log_norm = (0..model.components())
            .map(|k| {
                let log_det: f64 = model.stds.row(k).iter().map(|s| s.ln()).sum();
                model.weights[k].ln() - 0.5 * d * LN_2PI - log_det
            })
            .collect();
        Self {
            dim: model.dim(),
            log_norm,
            means: model.means.iter().copied().collect(),
            inv_var: model.stds.iter().map(|s| 1.0 / (s * s)).collect(),
        }
    }

    /// Fills `out[k]` with `log(w_k N(s; mu_k, sigma_k))`.
    fn log_joint(&self, patch: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (k, slot) in out.iter_mut().enumerate() {
            let mean = &self.means[k * d..(k + 1) * d];
            let iv = &self.inv_var[k * d..(k + 1) * d];
            let mut q = 0.0;
            for j in 0..d {
                let z = patch[j] - mean[j];
                q += z * z * iv[j];
            }
            *slot = self.log_norm[k] - 0.5 * q;
        }
    }

    /// Converts log-joints to posteriors in place; returns the log-evidence.
    fn normalize(log_joint: &mut [f64]) -> f64 {
        let max = log_joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in log_joint.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in log_joint.iter_mut() {
            *v /= sum;
        }
        max + sum.ln()
    }
}

/// Unnormalized accumulators: counts, posterior-weighted sums of `s` and
/// `s^2`, and the summed log-likelihood.
struct RawStats {
    counts: Array1<f64>,
    first: Array2<f64>,
    second: Array2<f64>,
    total: usize,
    log_likelihood: f64,
}

impl RawStats {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            counts: Array1::zeros(k),
            first: Array2::zeros((k, d)),
            second: Array2::zeros((k, d)),
            total: 0,
            log_likelihood: 0.0,
        }
    }

    fn absorb(&mut self, other: RawStats) {
        self.counts += &other.counts;
        self.first += &other.first;
        self.second += &other.second;
        self.total += other.total;
        self.log_likelihood += other.log_likelihood;
    }
}

fn accumulate_raw(model: &DiagonalGmm, patches: ArrayView2<'_, f64>, moments: bool) -> RawStats {
    let (k, d) = (model.components(), model.dim());
    let scorer = Scorer::new(model);
    let chunks: Vec<_> = patches.axis_chunks_iter(Axis(0), ROW_CHUNK).collect();
    let partials: Vec<RawStats> = chunks
        .into_par_iter()
        .map(|chunk| {
            let mut acc = RawStats::zeros(k, if moments { d } else { 0 });
            let mut post = vec![0.0; k];
            let mut row = vec![0.0; d];
            for view in chunk.rows() {
                for (dst, src) in row.iter_mut().zip(view.iter()) {
                    *dst = *src;
                }
                scorer.log_joint(&row, &mut post);
                acc.log_likelihood += Scorer::normalize(&mut post);
                acc.total += 1;
                for (c, &p) in post.iter().enumerate() {
                    acc.counts[c] += p;
                    if !moments || p == 0.0 {
                        continue;
                    }
                    let first = &mut acc.first.as_slice_mut().expect("standard layout")[c * d..(c + 1) * d];
                    for j in 0..d {
                        first[j] += p * row[j];
                    }
                    let second = &mut acc.second.as_slice_mut().expect("standard layout")[c * d..(c + 1) * d];
                    for j in 0..d {
                        second[j] += p * row[j] * row[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = RawStats::zeros(k, if moments { d } else { 0 });
    for part in partials {
        total.absorb(part);
    }
    total
}

/// Posterior responsibility of each component for one patch.
pub fn component_posteriors(model: &DiagonalGmm, patch: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    check_dim("patch", model.dim(), patch.len())?;
    let scorer = Scorer::new(model);
    let mut post = vec![0.0; model.components()];
    scorer.log_joint(&patch.to_vec(), &mut post);
    Scorer::normalize(&mut post);
    Ok(Array1::from(post))
}

/// Total log-likelihood `sum_t log p(s_t | model)`.
pub fn log_likelihood(model: &DiagonalGmm, patches: ArrayView2<'_, f64>) -> Result<f64> {
    if patches.nrows() > 0 {
        check_dim("patch columns", model.dim(), patches.ncols())?;
    }
    Ok(accumulate_raw(model, patches, false).log_likelihood)
}

/// Sufficient statistics of `patches` under `model`. Components whose soft
/// count is below [`COUNT_EPSILON`] get the model's own moments
/// (`mu_k`, `sigma_k^2 + mu_k^2`) in place of the undefined ratios.
pub fn accumulate_stats(model: &DiagonalGmm, patches: ArrayView2<'_, f64>) -> Result<SufficientStats> {
    if patches.nrows() > 0 {
        check_dim("patch columns", model.dim(), patches.ncols())?;
    }
    let raw = accumulate_raw(model, patches, true);
    let (k, d) = (model.components(), model.dim());
    let mut mean_acc = Array2::zeros((k, d));
    let mut sqmean_acc = Array2::zeros((k, d));
    for c in 0..k {
        let n = raw.counts[c];
        for j in 0..d {
            if n < COUNT_EPSILON {
                let (mu, sd) = (model.means[[c, j]], model.stds[[c, j]]);
                mean_acc[[c, j]] = mu;
                sqmean_acc[[c, j]] = sd * sd + mu * mu;
            } else {
                mean_acc[[c, j]] = raw.first[[c, j]] / n;
                sqmean_acc[[c, j]] = raw.second[[c, j]] / n;
            }
        }
    }
    Ok(SufficientStats {
        counts: raw.counts,
        mean_acc,
        sqmean_acc,
        total_patches: raw.total,
    })
}

/// One-iteration MAP adaptation of `ubm` towards the data summarized by
/// `stats`. Components with `alpha_k == 0` are copied from the UBM verbatim.
pub fn map_adapt(
    ubm: &DiagonalGmm,
    stats: &SufficientStats,
    cfg: &AdaptationConfig,
) -> Result<(DiagonalGmm, AdaptDiagnostics)> {
    cfg.validate()?;
    check_dim("stats components", ubm.components(), stats.components())?;
    check_dim("stats dimension", ubm.dim(), stats.dim())?;
    let (k, d) = (ubm.components(), ubm.dim());
    let alphas: Array1<f64> = stats.counts.mapv(|n| n / (n + cfg.relevance));

    let mut weights = ubm.weights.clone();
    let mut gamma = 1.0;
    if cfg.adapt_weights && stats.total_patches > 0 {
        let t = stats.total_patches as f64;
        let raw: Array1<f64> = (0..k)
            .map(|c| alphas[c] * stats.counts[c] / t + (1.0 - alphas[c]) * ubm.weights[c])
            .collect();
        gamma = 1.0 / raw.sum();
        weights = raw * gamma;
    }

    let mut means = ubm.means.clone();
    let mut stds = ubm.stds.clone();
    for c in 0..k {
        let a = alphas[c];
        if a == 0.0 {
            continue;
        }
        for j in 0..d {
            let (mu_bar, sd_bar) = (ubm.means[[c, j]], ubm.stds[[c, j]]);
            let mu = if cfg.adapt_means {
                a * stats.mean_acc[[c, j]] + (1.0 - a) * mu_bar
            } else {
                mu_bar
            };
            means[[c, j]] = mu;
            if cfg.adapt_stds {
                let var = a * stats.sqmean_acc[[c, j]]
                    + (1.0 - a) * (sd_bar * sd_bar + mu_bar * mu_bar)
                    - mu * mu;
                stds[[c, j]] = var.max(cfg.variance_floor).sqrt();
            }
        }
    }
    let adapted = DiagonalGmm::new(weights, means, stds)?;
    Ok((adapted, AdaptDiagnostics { alphas, gamma }))
}

/// Trains a UBM by EM from k-means++ seeding. Returns the model and the
/// per-iteration total log-likelihood trace (the last entry belongs to the
/// returned model).
pub fn train_ubm_em(
    patches: ArrayView2<'_, f64>,
    components: usize,
    cfg: &EmConfig,
) -> Result<(DiagonalGmm, Vec<f64>)> {
    cfg.validate()?;
    if components == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if patches.nrows() < components {
        return Err(Error::InsufficientData {
            patches: patches.nrows(),
            components,
        });
    }
    if patches.ncols() == 0 {
        return Err(Error::invalid("patches must have at least one column"));
    }
    if patches.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("patches contain non-finite values"));
    }

    let mut model = kmeans_init(patches, components, cfg)?;
    let mut trace = Vec::with_capacity(cfg.max_iterations + 1);
    for _ in 0..cfg.max_iterations {
        let raw = accumulate_raw(&model, patches, true);
        let ll = raw.log_likelihood;
        if let Some(&prev) = trace.last() {
            let improvement = (ll - prev) / f64::abs(prev).max(f64::MIN_POSITIVE);
            trace.push(ll);
            if improvement < cfg.ll_tolerance {
                return Ok((model, trace));
            }
        } else {
            trace.push(ll);
        }
        model = m_step(&model, &raw, cfg.variance_floor)?;
    }
    trace.push(log_likelihood(&model, patches)?);
    Ok((model, trace))
}

fn m_step(prev: &DiagonalGmm, raw: &RawStats, floor: f64) -> Result<DiagonalGmm> {
    let (k, d) = (prev.components(), prev.dim());
    let t = raw.total as f64;
    let weights = raw.counts.mapv(|n| n / t);
    let mut means = prev.means.clone();
    let mut stds = prev.stds.clone();
    for c in 0..k {
        let n = raw.counts[c];
        if n < COUNT_EPSILON {
            continue;
        }
        for j in 0..d {
            let mu = raw.first[[c, j]] / n;
            let var = raw.second[[c, j]] / n - mu * mu;
            means[[c, j]] = mu;
            stds[[c, j]] = var.max(floor).sqrt();
        }
    }
    let total = weights.sum();
    DiagonalGmm::new(weights / total, means, stds)
}

const KMEANS_SAMPLE_PER_COMPONENT: usize = 100;
const LLOYD_ITERATIONS: usize = 10;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding plus a few Lloyd sweeps on a subsample; variances are
/// the within-cluster variances and weights the cluster proportions.
fn kmeans_init(patches: ArrayView2<'_, f64>, k: usize, cfg: &EmConfig) -> Result<DiagonalGmm> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = patches.nrows();
    let d = patches.ncols();
    let limit = (KMEANS_SAMPLE_PER_COMPONENT * k).min(t);
    let mut rows: Vec<usize> = if limit < t {
        sample(&mut rng, t, limit).into_vec()
    } else {
        (0..t).collect()
    };
    rows.sort_unstable();
    let data = patches.select(Axis(0), &rows);
    let n = data.nrows();
    let flat = data.as_slice().expect("standard layout");
    let row = |i: usize| &flat[i * d..(i + 1) * d];

    let mut centers = Array2::<f64>::zeros((k, d));
    centers.row_mut(0).assign(&data.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| squared_distance(row(i), centers.row(0).as_slice().expect("contiguous")))
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(pick));
        let center = centers.row(c);
        let center = center.as_slice().expect("contiguous");
        for (i, near) in nearest.iter_mut().enumerate() {
            let dist = squared_distance(row(i), center);
            if dist < *near {
                *near = dist;
            }
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..LLOYD_ITERATIONS {
        let next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| {
                let r = row(i);
                let cs = centers.as_slice().expect("standard layout");
                let mut best = (f64::INFINITY, 0);
                for c in 0..k {
                    let dist = squared_distance(r, &cs[c * d..(c + 1) * d]);
                    if dist < best.0 {
                        best = (dist, c);
                    }
                }
                best.1
            })
            .collect();
        let changed = next != assign;
        assign = next;
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            let mut s = sums.row_mut(c);
            s += &data.row(i);
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mean = &sums.row(c) / count as f64;
                centers.row_mut(c).assign(&mean);
            }
        }
        if !changed {
            break;
        }
    }

    let global_mean = data.mean_axis(Axis(0)).expect("nonempty sample");
    let global_var = data.var_axis(Axis(0), 0.0);
    let mut counts = vec![0usize; k];
    let mut sq = Array2::<f64>::zeros((k, d));
    for (i, &c) in assign.iter().enumerate() {
        counts[c] += 1;
        for j in 0..d {
            let z = data[[i, j]] - centers[[c, j]];
            sq[[c, j]] += z * z;
        }
    }
    let mut stds = Array2::<f64>::zeros((k, d));
    let mut weights = Array1::<f64>::zeros(k);
    for c in 0..k {
        for j in 0..d {
            let var = if counts[c] > 0 {
                sq[[c, j]] / counts[c] as f64
            } else {
                global_var[j]
            };
            stds[[c, j]] = var.max(cfg.variance_floor).sqrt();
        }
        if counts[c] == 0 && centers.row(c).iter().all(|v| *v == 0.0) {
            centers.row_mut(c).assign(&global_mean);
        }
        weights[c] = counts[c].max(1) as f64;
    }
    let total = weights.sum();
    DiagonalGmm::new(weights / total, centers, stds)
}
