//! Survival-set learners: bounding boxes, halfspaces from third moments, and
//! polynomial threshold sets via positive-unlabeled reduction and L1 regression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleMatrix;
use crate::error::{Error, Result};
use crate::expfam::NaturalParams;
use crate::linalg;
use crate::poly::{self, Polynomial};
use crate::rng::{batches, child_seed, rng_from_seed};
use crate::truncation::SurvivalSet;

use rand::Rng as _;

/// Componentwise bounding box of the samples.
pub fn learn_box(samples: &SampleMatrix) -> Result<SurvivalSet> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("cannot learn a box from no samples".into()));
    }
    let d = samples.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for r in samples.rows() {
        for j in 0..d {
            lo[j] = lo[j].min(r[j]);
            hi[j] = hi[j].max(r[j]);
        }
    }
    SurvivalSet::axis_box(lo, hi)
}

/// Diagnostics of the third-moment halfspace learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceDiag {
    pub gamma_hat: Vec<f64>,
    pub m: Vec<f64>,
    /// Monte-Carlo standard error of each `m[j]`.
    pub std_err: Vec<f64>,
    pub degenerate: bool,
    pub threshold_used: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HalfspaceOptions {
    /// Constant `c` of the degeneracy threshold `c·ε³·d^{-3/2}`.
    pub degeneracy_const: f64,
    /// The threshold is never below this many standard errors of the moment estimate,
    /// and coordinates with `|M_j|` under `noise_z` standard errors are treated as zero.
    pub noise_z: f64,
    /// Re-estimate the direction in an orthonormal basis where the first estimate has
    /// equal components, which keeps the cube roots away from zero.
    pub rebalance: bool,
    /// Power iterations `w ← E[c·(cᵀw)²]` on the full third-moment tensor, with `c` the
    /// centered first-half samples. Zero keeps the coordinatewise estimate.
    pub power_iterations: usize,
}

impl Default for HalfspaceOptions {
    fn default() -> Self {
        Self { degeneracy_const: 0.01, noise_z: 4.0, rebalance: true, power_iterations: 10 }
    }
}

/// Empirical mean and per-coordinate third central moments over the first half of the samples.
pub fn third_central_moment_diag(samples: &SampleMatrix) -> Result<HalfspaceDiag> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let first = samples.slice(0..n / 2);
    let h = first.len() as f64;
    let gamma_hat = first.mean();
    let d = samples.dim();
    let mut m = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for r in first.rows() {
        for j in 0..d {
            let c = (r[j] - gamma_hat[j]).powi(3);
            m[j] += c;
            sq[j] += c * c;
        }
    }
    let mut std_err = vec![0.0; d];
    for j in 0..d {
        m[j] /= h;
        std_err[j] = ((sq[j] / h - m[j] * m[j]).max(0.0) / h).sqrt();
    }
    Ok(HalfspaceDiag { gamma_hat, m, std_err, degenerate: false, threshold_used: 0.0 })
}

/// Learn a halfspace containing the samples from the skew of their third moments.
///
/// Returns [`SurvivalSet::Full`] when every `|M_j|` is below the degeneracy threshold.
pub fn learn_halfspace(
    samples: &SampleMatrix,
    epsilon: f64,
    alpha: f64,
    opts: &HalfspaceOptions,
) -> Result<(SurvivalSet, HalfspaceDiag)> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 samples, got {n}")));
    }
    if !(epsilon > 0.0) || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("invalid epsilon {epsilon} or alpha {alpha}")));
    }
    let d = samples.dim();
    let mut diag = third_central_moment_diag(samples)?;
    let formula = opts.degeneracy_const * epsilon.powi(3) * (d as f64).powf(-1.5);
    let noise = opts.noise_z * diag.std_err.iter().cloned().fold(0.0, f64::max);
    diag.threshold_used = formula.max(noise);
    let max_m = diag.m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_m <= diag.threshold_used {
        diag.degenerate = true;
        return Ok((SurvivalSet::Full, diag));
    }
    let mut w = cube_root_direction(&diag.m, &diag.std_err, opts.noise_z);
    if opts.rebalance && d > 1 {
        let target = vec![1.0 / (d as f64).sqrt(); d];
        let refl = householder(&w, &target);
        let rotated = samples.map_rows(|x, y| reflect_into(&refl, x, y));
        let again = third_central_moment_diag(&rotated)?;
        let wy = cube_root_direction(&again.m, &again.std_err, opts.noise_z);
        w = vec![0.0; d];
        reflect_into(&refl, &wy, &mut w);
    }
    if opts.power_iterations > 0 {
        let first = samples.slice(0..n / 2);
        for _ in 0..opts.power_iterations {
            let u = tensor_contraction(&first, &diag.gamma_hat, &w);
            let norm = linalg::norm2(&u);
            if !(norm > 0.0) {
                break;
            }
            w = u.iter().map(|v| v / norm).collect();
        }
    }
    let tau = samples.slice(n / 2..n).rows().map(|r| linalg::dot(&w, r)).fold(f64::INFINITY, f64::min);
    Ok((SurvivalSet::halfspace(w, tau)?, diag))
}

/// `mean_i (x_i − g)((x_i − g)ᵀw)²`, the third-moment tensor applied to `w` twice.
fn tensor_contraction(samples: &SampleMatrix, g: &[f64], w: &[f64]) -> Vec<f64> {
    let d = samples.dim();
    let mut sum = samples
        .as_flat()
        .par_chunks(4096 * d)
        .map(|chunk| {
            let mut acc = vec![0.0; d];
            let mut c = vec![0.0; d];
            for r in chunk.chunks_exact(d) {
                for j in 0..d {
                    c[j] = r[j] - g[j];
                }
                let p = linalg::dot(&c, w);
                let p2 = p * p;
                for j in 0..d {
                    acc[j] += c[j] * p2;
                }
            }
            acc
        })
        .reduce(|| vec![0.0; d], |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        });
    let n = samples.len() as f64;
    sum.iter_mut().for_each(|v| *v /= n);
    sum
}

/// Unit vector along the signed cube roots of `m`, zeroing entries within `z` standard errors of 0.
fn cube_root_direction(m: &[f64], se: &[f64], z: f64) -> Vec<f64> {
    let mut w: Vec<f64> = m.iter().zip(se).map(|(v, s)| if v.abs() <= z * s { 0.0 } else { v.cbrt() }).collect();
    if w.iter().all(|v| *v == 0.0) {
        w = m.iter().map(|v| v.cbrt()).collect();
    }
    let norm = linalg::norm2(&w);
    w.iter().map(|v| v / norm).collect()
}

/// Householder vector `v` with `(I − 2vvᵀ)a = b` for unit `a`, `b`; `None` when `a = b`.
fn householder(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let v: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = linalg::norm2(&v);
    (n > 1e-12).then(|| v.iter().map(|x| x / n).collect())
}

fn reflect_into(refl: &Option<Vec<f64>>, x: &[f64], out: &mut [f64]) {
    out.copy_from_slice(x);
    if let Some(v) = refl {
        let s = 2.0 * linalg::dot(v, x);
        for (o, vi) in out.iter_mut().zip(v) {
            *o -= s * vi;
        }
    }
}

/// Mixture of unlabeled draws (label 0, probability `rho`) and resampled positives (label 1).
pub fn pu_dataset(pos: &SampleMatrix, unlabeled: &NaturalParams, rho: f64, n: usize, seed: u64) -> Result<SampleMatrix> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("rho must lie in [0, 1], got {rho}")));
    }
    if rho < 1.0 && pos.is_empty() {
        return Err(Error::EmptyInput("no positive samples".into()));
    }
    let d = unlabeled.dim();
    if !pos.is_empty() && pos.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: pos.dim() });
    }
    let sampler = unlabeled.sampler()?;
    let parts: Vec<(Vec<f64>, Vec<u8>)> = batches(n)
        .into_par_iter()
        .map(|(b, len)| {
            let mut rng = rng_from_seed(child_seed(seed, b));
            let mut xs = vec![0.0; len * d];
            let mut ys = vec![0u8; len];
            for (row, y) in xs.chunks_exact_mut(d).zip(ys.iter_mut()) {
                if rng.random::<f64>() < rho {
                    sampler.draw_into(&mut rng, row);
                    *y = 0;
                } else {
                    let i = rng.random_range(0..pos.len());
                    row.copy_from_slice(pos.row(i));
                    *y = 1;
                }
            }
            (xs, ys)
        })
        .collect();
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    for (x, y) in parts {
        xs.extend(x);
        ys.extend(y);
    }
    SampleMatrix::from_flat(d, xs)?.with_labels(ys)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L1Config {
    pub iterations: usize,
    pub feature_cap: usize,
    /// Initial step length in standardized coefficient units.
    pub step0: f64,
}

impl Default for L1Config {
    fn default() -> Self {
        Self { iterations: 10_000, feature_cap: 500, step0: 0.5 }
    }
}

/// Result of [`l1_poly_regression`].
#[derive(Clone, Debug)]
pub struct L1Fit {
    pub set: SurvivalSet,
    /// Best-so-far mean absolute error, one entry per iteration.
    pub objective: Vec<f64>,
    pub train_error: f64,
}

const CHUNK: usize = 4096;

/// Fit a degree-`degree` polynomial minimizing mean absolute error against the labels,
/// then threshold it to minimize the empirical 0/1 error.
pub fn l1_poly_regression(data: &SampleMatrix, degree: usize, cfg: &L1Config) -> Result<L1Fit> {
    let labels = data.labels().ok_or_else(|| Error::InvalidArgument("data carries no labels".into()))?;
    if degree < 1 {
        return Err(Error::InvalidArgument("polynomial degree must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("no labeled records".into()));
    }
    let d = data.dim();
    let count = poly::n_monomials(d, degree);
    if count > cfg.feature_cap {
        return Err(Error::FeatureCapExceeded { count, cap: cfg.feature_cap });
    }
    let exps = poly::monomials(d, degree);
    let n = data.len();
    let m = count;
    // Monomial features, column 0 is the constant.
    let mut feats = vec![0.0; n * m];
    for (r, f) in data.rows().zip(feats.chunks_exact_mut(m)) {
        poly::eval_monomials(&exps, r, f);
    }
    let mut mean = vec![0.0; m];
    let mut sd = vec![1.0; m];
    for k in 1..m {
        let mu = feats.iter().skip(k).step_by(m).sum::<f64>() / n as f64;
        let var = feats.iter().skip(k).step_by(m).map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        mean[k] = mu;
        sd[k] = if var > 1e-300 { var.sqrt() } else { 0.0 };
    }
    for f in feats.chunks_exact_mut(m) {
        for k in 1..m {
            f[k] = if sd[k] > 0.0 { (f[k] - mean[k]) / sd[k] } else { 0.0 };
        }
    }
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let mut sorted_y = y.clone();
    sorted_y.sort_by(f64::total_cmp);
    let mut beta = vec![0.0; m];
    beta[0] = sorted_y[n / 2];

    // Returns (objective, subgradient) at beta; chunk sums are combined in index order.
    let eval = |beta: &[f64]| -> (f64, Vec<f64>) {
        let parts: Vec<(f64, Vec<f64>)> = feats
            .par_chunks(CHUNK * m)
            .zip(y.par_chunks(CHUNK))
            .map(|(fc, yc)| {
                let mut obj = 0.0;
                let mut g = vec![0.0; m];
                for (f, yi) in fc.chunks_exact(m).zip(yc) {
                    let r = yi - linalg::dot(beta, f);
                    obj += r.abs();
                    let s = if r > 0.0 { -1.0 } else if r < 0.0 { 1.0 } else { 0.0 };
                    if s != 0.0 {
                        for (gk, fk) in g.iter_mut().zip(f) {
                            *gk += s * fk;
                        }
                    }
                }
                (obj, g)
            })
            .collect();
        let mut obj = 0.0;
        let mut g = vec![0.0; m];
        for (o, gp) in parts {
            obj += o;
            for (a, b) in g.iter_mut().zip(gp) {
                *a += b;
            }
        }
        (obj / n as f64, g.into_iter().map(|v| v / n as f64).collect())
    };

    let mut best = beta.clone();
    let mut best_obj = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    for k in 0..=cfg.iterations {
        let (obj, g) = eval(&beta);
        if !obj.is_finite() {
            return Err(Error::SolverNonConvergence(format!("objective became {obj} at iteration {k}")));
        }
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&beta);
        }
        history.push(best_obj);
        if k == cfg.iterations {
            break;
        }
        let gn = linalg::norm2(&g);
        if gn == 0.0 {
            break;
        }
        let step = cfg.step0 / ((k + 1) as f64).sqrt();
        for (b, gk) in beta.iter_mut().zip(&g) {
            *b -= step * gk / gn;
        }
    }

    // Fold the standardization back into raw monomial coefficients.
    let mut coeffs = vec![0.0; m];
    coeffs[0] = best[0];
    for k in 1..m {
        if sd[k] > 0.0 {
            coeffs[k] = best[k] / sd[k];
            coeffs[0] -= best[k] * mean[k] / sd[k];
        }
    }
    let poly = Polynomial::new(d, degree, coeffs)?;
    let values: Vec<f64> = data.rows().map(|r| poly.eval(r)).collect();
    let (threshold, errors) = best_threshold(&values, labels);
    Ok(L1Fit {
        set: SurvivalSet::poly_threshold(poly, threshold),
        objective: history,
        train_error: errors as f64 / n as f64,
    })
}

/// Threshold `t` minimizing the number of disagreements between `1{v ≥ t}` and the labels.
fn best_threshold(values: &[f64], labels: &[u8]) -> (f64, usize) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let positives = labels.iter().filter(|&&y| y == 1).count();
    // Threshold below everything: all predicted 1, errors are the zeros.
    let mut errors = labels.len() - positives;
    let mut best = (values[idx[0]] - 1.0, errors);
    let mut i = 0;
    while i < idx.len() {
        let v = values[idx[i]];
        let mut j = i;
        while j < idx.len() && values[idx[j]] == v {
            // Moving this point below the threshold flips its prediction to 0.
            if labels[idx[j]] == 1 {
                errors += 1;
            } else {
                errors -= 1;
            }
            j += 1;
        }
        let t = if j < idx.len() { 0.5 * (v + values[idx[j]]) } else { v + 1.0 };
        if errors < best.1 {
            best = (t, errors);
        }
        i = j;
    }
    best
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PuConfig {
    /// Number of mixture records; defaults to the number of positives.
    pub n_records: Option<usize>,
    pub l1: L1Config,
}


/// Learn a polynomial threshold set from positives via the PU reduction with `ρ = ε/6`.
pub fn learn_set_pu(
    pos: &SampleMatrix,
    theta0: &NaturalParams,
    epsilon: f64,
    degree: usize,
    seed: u64,
    cfg: &PuConfig,
) -> Result<SurvivalSet> {
    let rho = epsilon / 6.0;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("mixture weight rho = epsilon/6 = {rho} must lie in (0, 1)")));
    }
    let n = cfg.n_records.unwrap_or(pos.len());
    let data = pu_dataset(pos, theta0, rho, n, seed)?;
    Ok(l1_poly_regression(&data, degree, &cfg.l1)?.set)
}

/// Positive-unlabeled model on a finite set of bins.
///
/// `q` is the reference distribution, `positive` marks the support `P` of the
/// positives (whose distribution is `q` restricted to `P`), `u` is the unlabeled
/// distribution and `rho` the unlabeled weight.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramModel {
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub positive: Vec<bool>,
    pub rho: f64,
}

impl HistogramModel {
    pub fn new(q: Vec<f64>, u: Vec<f64>, positive: Vec<bool>, rho: f64) -> Result<Self> {
        if q.len() != u.len() || q.len() != positive.len() || q.is_empty() {
            return Err(Error::InvalidArgument("histogram inputs must have equal nonzero length".into()));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0, 1), got {rho}")));
        }
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        Ok(Self { q: norm(q), u: norm(u), positive, rho })
    }

    /// Distribution of the positives: `q` truncated to `P`.
    pub fn p(&self) -> Vec<f64> {
        let mass: f64 = self.q.iter().zip(&self.positive).filter(|(_, &in_p)| in_p).map(|(q, _)| q).sum();
        self.q.iter().zip(&self.positive).map(|(q, &in_p)| if in_p { q / mass } else { 0.0 }).collect()
    }

    /// Probability that a record's label disagrees with membership in `P`.
    pub fn noise_rate(&self) -> Vec<f64> {
        let p = self.p();
        let rho = self.rho;
        (0..self.q.len())
            .map(|i| {
                if self.positive[i] {
                    rho * self.u[i] / (rho * self.u[i] + (1.0 - rho) * p[i])
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn b_z(&self, z: f64) -> Vec<bool> {
        self.noise_rate().into_iter().map(|g| g >= z).collect()
    }

    pub fn q_mass(&self, set: &[bool]) -> f64 {
        self.q.iter().zip(set).filter(|(_, &s)| s).map(|(q, _)| q).sum()
    }

    /// `Pr[y ≠ 1{x ∈ T}]` under the labeled mixture.
    pub fn error(&self, set: &[bool]) -> f64 {
        let p = self.p();
        (0..self.q.len())
            .map(|i| if set[i] { self.rho * self.u[i] } else { (1.0 - self.rho) * p[i] })
            .sum()
    }

    /// Exhaustive minimizer of [`HistogramModel::error`] over all subsets of bins.
    pub fn bayes_optimal_bruteforce(&self) -> Result<Vec<bool>> {
        let k = self.q.len();
        if k > 24 {
            return Err(Error::InvalidArgument(format!("{k} bins is too many to enumerate")));
        }
        let p = self.p();
        let on: Vec<f64> = (0..k).map(|i| self.rho * self.u[i]).collect();
        let off: Vec<f64> = (0..k).map(|i| (1.0 - self.rho) * p[i]).collect();
        let best = (0u32..(1u32 << k))
            .into_par_iter()
            .map(|mask| {
                let e: f64 = (0..k).map(|i| if mask >> i & 1 == 1 { on[i] } else { off[i] }).sum();
                (e, mask)
            })
            .reduce(|| (f64::INFINITY, 0), |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
        Ok((0..k).map(|i| best.1 >> i & 1 == 1).collect())
    }
}
