//! Perturbed maximum-likelihood estimation by projected stochastic gradient descent.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleMatrix;
use crate::error::{check_dim, Error, Result};
use crate::expfam::{self, FamilyKind, MomentVector, NaturalParams, Sampler};
use crate::linalg;
use crate::metrics;
use crate::preprocess::{dykstra, project_ball, ParameterDomain};
use crate::rng::{batches, child_seed, rng_from_seed, Rng};
use crate::truncation::{default_max_attempts, draw_truncated, SurvivalSet};

const OMEGA_TOL: f64 = 1e-10;
const OMEGA_SWEEPS: usize = 10_000;

/// Moment-matched starting point projected into the shrunk domain.
pub fn init_theta0(samples: &SampleMatrix, dom: &ParameterDomain) -> Result<NaturalParams> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples for initialization".into()));
    }
    let kind = dom.family();
    check_dim(kind.dim(), samples.dim())?;
    let m = kind.param_len();
    let mut mean = vec![0.0; m];
    let mut t = vec![0.0; m];
    for r in samples.rows() {
        expfam::suff_stats_into(kind, r, &mut t);
        for (a, b) in mean.iter_mut().zip(&t) {
            *a += b;
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    let raw = expfam::moment_match(kind, &MomentVector { v: mean })?;
    dom.project_interior(dom.constants.eta, &raw)
}

/// `Ω = B(θ₀, radius) ∩ Θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Omega {
    center: Vec<f64>,
    radius: f64,
    domain: ParameterDomain,
}

/// Default radius `3Λ/(ηλα)` of the optimization region.
pub fn default_omega_radius(dom: &ParameterDomain) -> f64 {
    let c = dom.constants;
    3.0 * c.big_lambda / (c.eta * c.lambda * c.alpha)
}

pub fn build_omega(theta0: &NaturalParams, dom: &ParameterDomain, radius: f64) -> Result<Omega> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("omega radius must be positive, got {radius}")));
    }
    if !dom.contains_approx(theta0) {
        return Err(Error::InvalidArgument("theta0 lies outside the parameter domain".into()));
    }
    Ok(Omega { center: theta0.theta().to_vec(), radius, domain: dom.clone() })
}

impl Omega {
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn domain(&self) -> &ParameterDomain {
        &self.domain
    }

    pub fn contains(&self, theta: &[f64], tol: f64) -> bool {
        linalg::dist2(theta, &self.center) <= self.radius * (1.0 + tol) && self.domain.contains_vec(theta, tol)
    }

    pub fn project(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.center.len(), theta.len())?;
        let in_ball = linalg::dist2(theta, &self.center) <= self.radius;
        if in_ball && self.domain.contains_vec(theta, 0.0) {
            return Ok(theta.to_vec());
        }
        let mut x = theta.to_vec();
        project_ball(&mut x, &self.center, self.radius);
        if self.domain.contains_vec(&x, 0.0) {
            return Ok(x);
        }
        let y = self.domain.project_vec(theta)?;
        if linalg::dist2(&y, &self.center) <= self.radius {
            return Ok(y);
        }
        let center = self.center.clone();
        let radius = self.radius;
        let mut sets = self.domain.projectors();
        sets.push(Box::new(move |v: &mut [f64]| project_ball(v, &center, radius)));
        dykstra(theta, &sets, OMEGA_TOL, OMEGA_SWEEPS)
    }
}

/// One model draw `z ~ E(θ, S)` and the gradient sample `t(z) − t(x)`.
///
/// Returns the number of proposals used.
pub(crate) fn gradient_sample(
    kind: FamilyKind,
    sampler: &Sampler,
    set: &SurvivalSet,
    x: &[f64],
    rng: &mut Rng,
    budget: usize,
    z: &mut [f64],
    tz: &mut [f64],
    out: &mut [f64],
) -> Result<usize> {
    let used = draw_truncated(sampler, set, rng, budget, z)?;
    expfam::suff_stats_into(kind, z, tz);
    expfam::suff_stats_into(kind, x, out);
    for (o, a) in out.iter_mut().zip(tz.iter()) {
        *o = a - *o;
    }
    Ok(used)
}

/// Unbiased gradient sample of the PMLE objective at `θ` for data point `x`.
pub fn stochastic_gradient(x: &[f64], theta: &NaturalParams, set: &SurvivalSet, seed: u64, budget: usize) -> Result<Vec<f64>> {
    check_dim(theta.dim(), x.len())?;
    if budget == 0 {
        return Err(Error::InvalidArgument("rejection budget must be at least 1".into()));
    }
    let kind = theta.kind();
    let m = kind.param_len();
    let mut rng = rng_from_seed(seed);
    let mut z = vec![0.0; theta.dim()];
    let mut tz = vec![0.0; m];
    let mut out = vec![0.0; m];
    gradient_sample(kind, &theta.sampler()?, set, x, &mut rng, budget, &mut z, &mut tz, &mut out)?;
    Ok(out)
}

/// Monte-Carlo gradient with per-coordinate standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct McGradient {
    pub grad: Vec<f64>,
    pub std_err: Vec<f64>,
}

impl McGradient {
    pub fn norm(&self) -> f64 {
        linalg::norm2(&self.grad)
    }

    pub fn std_err_norm(&self) -> f64 {
        linalg::norm2(&self.std_err)
    }
}

/// Mean and covariance of `t(z)` over `n` draws from `E(θ, S)`.
fn truncated_stat_moments(theta: &NaturalParams, set: &SurvivalSet, n: usize, seed: u64, budget: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 model draws, got {n}")));
    }
    if budget == 0 {
        return Err(Error::InvalidArgument("rejection budget must be at least 1".into()));
    }
    let kind = theta.kind();
    let m = kind.param_len();
    let d = theta.dim();
    let sampler = theta.sampler()?;
    let parts: Vec<(Vec<f64>, DMatrix<f64>)> = batches(n)
        .into_par_iter()
        .map(|(b, len)| -> Result<_> {
            let mut rng = rng_from_seed(child_seed(seed, b));
            let mut z = vec![0.0; d];
            let mut t = vec![0.0; m];
            let mut sum = vec![0.0; m];
            let mut outer = DMatrix::zeros(m, m);
            for _ in 0..len {
                draw_truncated(&sampler, set, &mut rng, budget, &mut z)?;
                expfam::suff_stats_into(kind, &z, &mut t);
                for i in 0..m {
                    sum[i] += t[i];
                    for j in 0..m {
                        outer[(i, j)] += t[i] * t[j];
                    }
                }
            }
            Ok((sum, outer))
        })
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; m];
    let mut outer = DMatrix::zeros(m, m);
    for (s, o) in parts {
        for (a, b) in sum.iter_mut().zip(s) {
            *a += b;
        }
        outer += o;
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|v| v / nf).collect();
    let mut cov = outer / nf;
    for i in 0..m {
        for j in 0..m {
            cov[(i, j)] -= mean[i] * mean[j];
        }
    }
    Ok((mean, cov * (nf / (nf - 1.0))))
}

/// Full-batch gradient `E_{E(θ,S)}[t] − mean_i t(x_i)` with `n_mc` model draws.
pub fn pmle_gradient_mc(theta: &NaturalParams, set: &SurvivalSet, data: &SampleMatrix, n_mc: usize, seed: u64) -> Result<McGradient> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no data points".into()));
    }
    check_dim(theta.dim(), data.dim())?;
    let kind = theta.kind();
    let m = kind.param_len();
    let (model_mean, model_cov) = truncated_stat_moments(theta, set, n_mc, seed, usize::MAX)?;
    let n = data.len() as f64;
    let mut sum = vec![0.0; m];
    let mut sq = vec![0.0; m];
    let mut t = vec![0.0; m];
    for r in data.rows() {
        expfam::suff_stats_into(kind, r, &mut t);
        for i in 0..m {
            sum[i] += t[i];
            sq[i] += t[i] * t[i];
        }
    }
    let grad = (0..m).map(|i| model_mean[i] - sum[i] / n).collect();
    let std_err = (0..m)
        .map(|i| {
            let dv = (sq[i] / n - (sum[i] / n).powi(2)).max(0.0);
            (model_cov[(i, i)].max(0.0) / n_mc as f64 + dv / n).sqrt()
        })
        .collect();
    Ok(McGradient { grad, std_err })
}

/// Monte-Carlo Hessian `Cov_{E(θ,S)}[t]` of the PMLE objective.
pub fn pmle_hessian_mc(theta: &NaturalParams, set: &SurvivalSet, n_mc: usize, seed: u64) -> Result<DMatrix<f64>> {
    Ok(truncated_stat_moments(theta, set, n_mc, seed, usize::MAX)?.1)
}

/// Fixed reference draws used to evaluate the PMLE objective as a smooth function of `θ`.
///
/// `ln E(S; θ)` is estimated by importance weighting draws from `reference`, so the
/// same random numbers are reused for every `θ` and finite differences are meaningful.
pub struct McObjective {
    reference: NaturalParams,
    draws: SampleMatrix,
    data_mean_stats: Vec<f64>,
    data_mean_log_h: f64,
    set: SurvivalSet,
}

impl McObjective {
    pub fn new(reference: &NaturalParams, set: &SurvivalSet, data: &SampleMatrix, n_mc: usize, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("no data points".into()));
        }
        check_dim(reference.dim(), data.dim())?;
        let kind = reference.kind();
        let m = kind.param_len();
        let a_ref = expfam::log_partition(reference);
        let mut mean = vec![0.0; m];
        let mut log_h = 0.0;
        let mut t = vec![0.0; m];
        for r in data.rows() {
            expfam::suff_stats_into(kind, r, &mut t);
            for (a, b) in mean.iter_mut().zip(&t) {
                *a += b;
            }
            log_h += expfam::log_density_unchecked(reference, a_ref, r) - linalg::dot(reference.theta(), &t) + a_ref;
        }
        let n = data.len() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        Ok(Self {
            reference: reference.clone(),
            draws: expfam::sample(reference, n_mc, seed)?,
            data_mean_stats: mean,
            data_mean_log_h: log_h / n,
            set: set.clone(),
        })
    }

    /// `−mean_i ln E(x_i; θ, S)`.
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let p = self.reference.with_theta(theta.to_vec())?;
        let kind = p.kind();
        let m = kind.param_len();
        let a = expfam::log_partition(&p);
        let a_ref = expfam::log_partition(&self.reference);
        let delta: Vec<f64> = theta.iter().zip(self.reference.theta()).map(|(x, y)| x - y).collect();
        let mut t = vec![0.0; m];
        let mut w = 0.0;
        for z in self.draws.rows() {
            if self.set.contains_unchecked(z) {
                expfam::suff_stats_into(kind, z, &mut t);
                w += (linalg::dot(&delta, &t) - a + a_ref).exp();
            }
        }
        let mass = w / self.draws.len() as f64;
        if !(mass > 0.0) {
            return Err(Error::DegenerateMoments("no reference draw fell inside the set".into()));
        }
        Ok(a - linalg::dot(theta, &self.data_mean_stats) - self.data_mean_log_h + mass.ln())
    }

    /// Central finite-difference gradient of [`McObjective::value`].
    pub fn finite_difference_gradient(&self, theta: &[f64], h: f64) -> Result<Vec<f64>> {
        let kind = self.reference.kind();
        let mut g = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let (dirs, scale) = coordinate_direction(kind, i);
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            for &j in &dirs {
                plus[j] += h;
                minus[j] -= h;
            }
            g[i] = (self.value(&plus)? - self.value(&minus)?) / (2.0 * h) * scale;
        }
        Ok(g)
    }
}

/// Coordinates moved together when differentiating along `i`, keeping `Θ₂` symmetric.
fn coordinate_direction(kind: FamilyKind, i: usize) -> (Vec<usize>, f64) {
    match kind {
        FamilyKind::Gaussian(d) if i >= d => {
            let (r, c) = ((i - d) / d, (i - d) % d);
            if r == c {
                (vec![i], 1.0)
            } else {
                (vec![i, d + c * d + r], 0.5)
            }
        }
        _ => (vec![i], 1.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "fraction", rename_all = "snake_case")]
pub enum Averaging {
    Last,
    TailAverage(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsgdConfig {
    /// Step size; `None` uses `0.01 / (1 + Λ)`.
    pub step_size: Option<f64>,
    pub iterations: usize,
    /// Radius of the ball around `θ₀`; `None` uses `3Λ/(ηλα)`.
    pub omega_radius: Option<f64>,
    pub averaging: Averaging,
    /// Data points (each with one model draw) averaged per step.
    pub grad_batch: usize,
    /// Rejection proposals allowed per model draw; `None` uses `⌈50/α⌉`.
    pub budget: Option<usize>,
    /// Record a trace entry every this many iterations.
    pub record_every: usize,
    pub max_drop_fraction: f64,
}

impl Default for PsgdConfig {
    fn default() -> Self {
        Self {
            step_size: None,
            iterations: 100_000,
            omega_radius: None,
            averaging: Averaging::TailAverage(0.25),
            grad_batch: 1,
            budget: None,
            record_every: 1000,
            max_drop_fraction: 0.5,
        }
    }
}

impl PsgdConfig {
    pub fn resolved_step_size(&self, dom: &ParameterDomain) -> f64 {
        self.step_size.unwrap_or(1e-2 / (1.0 + dom.constants.big_lambda))
    }

    fn validate(&self) -> Result<()> {
        if let Some(g) = self.step_size {
            if !(g > 0.0) {
                return Err(Error::InvalidArgument(format!("step size must be positive, got {g}")));
            }
        }
        if let Some(r) = self.omega_radius {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("omega radius must be positive, got {r}")));
            }
        }
        if let Averaging::TailAverage(f) = self.averaging {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!("tail fraction must lie in (0, 1], got {f}")));
            }
        }
        if self.grad_batch == 0 || self.record_every == 0 || self.budget == Some(0) {
            return Err(Error::InvalidArgument("grad_batch, record_every and budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub grad_norm: f64,
    /// Rejection proposals spent on this iteration's gradient.
    pub proposals: usize,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsgdTrace {
    pub records: Vec<TraceRecord>,
    pub final_theta: Vec<f64>,
    pub step_size: f64,
    pub omega_radius: f64,
    /// Smallest eigenvalue of `Cov[t]` at `θ₀`, a proxy for the strong-convexity constant.
    pub sigma_est: f64,
    /// Running mean of `‖v‖²` over all iterations.
    pub mean_sq_grad: f64,
    pub total_proposals: usize,
    pub drop_fraction: f64,
    pub n_used: usize,
}

impl PsgdTrace {
    /// CSV with columns `iteration,grad_norm,proposals,theta_1..theta_m`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let m = self.final_theta.len();
        let mut header = vec!["iteration".to_string(), "grad_norm".into(), "proposals".into()];
        header.extend((1..=m).map(|i| format!("theta_{i}")));
        wr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.grad_norm.to_string(), r.proposals.to_string()];
            row.extend(r.theta.iter().map(|v| v.to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Projected SGD on the PMLE objective over `Ω = B(θ₀, r) ∩ Θ`.
pub fn psgd(
    data: &SampleMatrix,
    theta0: &NaturalParams,
    set: &SurvivalSet,
    dom: &ParameterDomain,
    cfg: &PsgdConfig,
    seed: u64,
) -> Result<(NaturalParams, PsgdTrace)> {
    cfg.validate()?;
    let kind = dom.family();
    if theta0.kind() != kind {
        return Err(Error::FamilyMismatch("theta0 and domain families differ".into()));
    }
    check_dim(kind.dim(), data.dim())?;
    if let Some(d) = set.dim() {
        check_dim(kind.dim(), d)?;
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("no data for PSGD".into()));
    }
    let kept = data.filter(|x| set.contains_unchecked(x));
    let drop_fraction = 1.0 - kept.len() as f64 / data.len() as f64;
    log::info!("psgd: dropped {:.4} of {} points outside the survival set", drop_fraction, data.len());
    if drop_fraction > cfg.max_drop_fraction || kept.is_empty() {
        return Err(Error::ExcessiveDrop(drop_fraction));
    }
    let gamma = cfg.resolved_step_size(dom);
    let radius = cfg.omega_radius.unwrap_or_else(|| default_omega_radius(dom));
    let omega = build_omega(theta0, dom, radius)?;
    let sigma_est = metrics::min_stat_eigenvalue(theta0);
    if gamma * sigma_est >= 1.0 {
        log::warn!("psgd: step size {gamma} is at least 1/sigma = {}", 1.0 / sigma_est);
    }
    let budget = cfg.budget.unwrap_or_else(|| default_max_attempts(dom.constants.alpha));

    let m = kind.param_len();
    let d = kind.dim();
    let n = kept.len();
    let mut theta = theta0.theta().to_vec();
    let mut trace = PsgdTrace {
        records: Vec::new(),
        final_theta: theta.clone(),
        step_size: gamma,
        omega_radius: radius,
        sigma_est,
        mean_sq_grad: 0.0,
        total_proposals: 0,
        drop_fraction,
        n_used: n,
    };
    if cfg.iterations == 0 {
        return Ok((theta0.clone(), trace));
    }

    let tail_start = match cfg.averaging {
        Averaging::Last => cfg.iterations,
        Averaging::TailAverage(f) => cfg.iterations - ((cfg.iterations as f64 * f).ceil() as usize).clamp(1, cfg.iterations),
    };
    let mut tail_sum = vec![0.0; m];
    let mut tail_count = 0usize;

    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch = 0u64;
    let mut pos = n;
    let mut rng = rng_from_seed(child_seed(seed, u64::MAX));
    let mut z = vec![0.0; d];
    let mut tz = vec![0.0; m];
    let mut v = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut sq_sum = 0.0;

    for it in 1..=cfg.iterations {
        let p = NaturalParams::new(kind, theta.clone())?;
        let sampler = p.sampler()?;
        g.iter_mut().for_each(|x| *x = 0.0);
        let mut used = 0;
        for _ in 0..cfg.grad_batch {
            if pos == n {
                order.shuffle(&mut rng_from_seed(child_seed(seed, epoch)));
                epoch += 1;
                pos = 0;
            }
            let x = kept.row(order[pos]);
            pos += 1;
            used += gradient_sample(kind, &sampler, set, x, &mut rng, budget, &mut z, &mut tz, &mut v)?;
            for (a, b) in g.iter_mut().zip(&v) {
                *a += b;
            }
        }
        let inv = 1.0 / cfg.grad_batch as f64;
        g.iter_mut().for_each(|x| *x *= inv);
        let gn = linalg::norm2(&g);
        sq_sum += gn * gn;
        trace.total_proposals += used;
        let step: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - gamma * gi).collect();
        theta = omega.project(&step)?;
        debug_assert!(omega.contains(&theta, 1e-6));
        if it > tail_start {
            for (a, b) in tail_sum.iter_mut().zip(&theta) {
                *a += b;
            }
            tail_count += 1;
        }
        if it % cfg.record_every == 0 || it == cfg.iterations {
            trace.records.push(TraceRecord { iteration: it, grad_norm: gn, proposals: used, theta: theta.clone() });
        }
    }
    trace.mean_sq_grad = sq_sum / cfg.iterations as f64;
    let out = if tail_count > 0 { tail_sum.iter().map(|v| v / tail_count as f64).collect() } else { theta };
    let est = NaturalParams::new(kind, out)?;
    trace.final_theta = est.theta().to_vec();
    Ok((est, trace))
}
