//! Gaussian and product-exponential families in canonical form.
//!
//! Gaussian parameters are `θ = (Σ⁻¹μ, ½Σ⁻¹)` with the matrix block flattened
//! row-major, sufficient statistic `t(x) = [x, -(x xᵀ)]` and carrier
//! `h(x) = (2π)^{-d/2}`. Product-exponential parameters are a vector of
//! negative numbers with `t(x) = x` on the nonnegative orthant.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleMatrix;
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::rng::{batches, child_seed, rng_from_seed, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Gaussian(usize),
    ProductExponential(usize),
}

impl FamilyKind {
    pub fn dim(&self) -> usize {
        match *self {
            FamilyKind::Gaussian(d) | FamilyKind::ProductExponential(d) => d,
        }
    }

    /// Length of the natural-parameter and sufficient-statistic vectors.
    pub fn param_len(&self) -> usize {
        match *self {
            FamilyKind::Gaussian(d) => d + d * d,
            FamilyKind::ProductExponential(d) => d,
        }
    }

    /// Polynomial degree of the sufficient statistic.
    pub fn stat_degree(&self) -> usize {
        match self {
            FamilyKind::Gaussian(_) => 2,
            FamilyKind::ProductExponential(_) => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Gaussian(_) => "gaussian",
            FamilyKind::ProductExponential(_) => "exponential",
        }
    }

    pub fn from_name(name: &str, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        match name.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(FamilyKind::Gaussian(d)),
            "exponential" | "product_exponential" => Ok(FamilyKind::ProductExponential(d)),
            other => Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, FamilyKind::Gaussian(_))
    }
}

/// Validated natural parameters of one family member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct NaturalParams {
    kind: FamilyKind,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    family: String,
    d: usize,
    theta: Vec<f64>,
}

impl TryFrom<ParamsRepr> for NaturalParams {
    type Error = Error;
    fn try_from(r: ParamsRepr) -> Result<Self> {
        NaturalParams::new(FamilyKind::from_name(&r.family, r.d)?, r.theta)
    }
}

impl From<NaturalParams> for ParamsRepr {
    fn from(p: NaturalParams) -> Self {
        ParamsRepr { family: p.kind.name().into(), d: p.kind.dim(), theta: p.theta }
    }
}

impl NaturalParams {
    /// Validate and wrap a parameter vector. The Gaussian matrix block is symmetrized.
    pub fn new(kind: FamilyKind, mut theta: Vec<f64>) -> Result<Self> {
        let d = kind.dim();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        check_dim(kind.param_len(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite entry".into()));
        }
        match kind {
            FamilyKind::Gaussian(d) => {
                let block = &mut theta[d..];
                for i in 0..d {
                    for j in (i + 1)..d {
                        let avg = 0.5 * (block[i * d + j] + block[j * d + i]);
                        block[i * d + j] = avg;
                        block[j * d + i] = avg;
                    }
                }
                linalg::cholesky(&linalg::mat_from_row_major(d, block))
                    .map_err(|e| Error::InvalidParams(format!("precision block: {e}")))?;
            }
            FamilyKind::ProductExponential(_) => {
                if let Some(v) = theta.iter().find(|v| **v >= 0.0) {
                    return Err(Error::InvalidParams(format!("exponential coordinate {v} is not negative")));
                }
            }
        }
        Ok(Self { kind, theta })
    }

    pub fn gaussian(mu: &[f64], sigma: &[f64]) -> Result<Self> {
        mean_cov_to_params(&MeanCov::new(mu.to_vec(), sigma.to_vec())?)
    }

    pub fn exponential(theta: &[f64]) -> Result<Self> {
        Self::new(FamilyKind::ProductExponential(theta.len()), theta.to_vec())
    }

    /// Product exponential with the given rates (`θ = −rate`).
    pub fn exponential_rates(rates: &[f64]) -> Result<Self> {
        Self::exponential(&rates.iter().map(|r| -r).collect::<Vec<_>>())
    }

    pub fn standard_normal(d: usize) -> Self {
        let mut theta = vec![0.0; d + d * d];
        for i in 0..d {
            theta[d + i * d + i] = 0.5;
        }
        Self { kind: FamilyKind::Gaussian(d), theta }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    /// Replace the parameter vector, keeping the family.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.kind, theta)
    }

    pub fn distance(&self, other: &NaturalParams) -> f64 {
        linalg::dist2(&self.theta, &other.theta)
    }

    /// `(θ₁, Θ₂)` blocks for Gaussian parameters.
    pub fn gaussian_blocks(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match self.kind {
            FamilyKind::Gaussian(d) => Ok((
                DVector::from_column_slice(&self.theta[..d]),
                linalg::mat_from_row_major(d, &self.theta[d..]),
            )),
            _ => Err(Error::FamilyMismatch("expected Gaussian parameters".into())),
        }
    }

    pub fn to_mean_cov(&self) -> Result<MeanCov> {
        params_to_mean_cov(self)
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(self)
    }
}

/// Expected sufficient statistics `E[t(x)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub v: Vec<f64>,
}

/// Mean and row-major covariance of a Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCov {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MeanCov {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidArgument("empty mean".into()));
        }
        check_dim(d * d, sigma.len())?;
        let s = linalg::symmetrize(&linalg::mat_from_row_major(d, &sigma));
        linalg::cholesky(&s)?;
        Ok(Self { mu, sigma: linalg::mat_to_row_major(&s) })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    pub fn sigma_mat(&self) -> DMatrix<f64> {
        linalg::mat_from_row_major(self.dim(), &self.sigma)
    }
}

pub fn suff_stats(kind: FamilyKind, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(kind.dim(), x.len())?;
    let mut out = vec![0.0; kind.param_len()];
    suff_stats_into(kind, x, &mut out);
    Ok(out)
}

/// Write `t(x)` into `out` (lengths are the caller's responsibility).
pub fn suff_stats_into(kind: FamilyKind, x: &[f64], out: &mut [f64]) {
    match kind {
        FamilyKind::Gaussian(d) => {
            out[..d].copy_from_slice(x);
            for i in 0..d {
                for j in 0..d {
                    out[d + i * d + j] = -x[i] * x[j];
                }
            }
        }
        FamilyKind::ProductExponential(_) => out.copy_from_slice(x),
    }
}

pub fn log_partition(p: &NaturalParams) -> f64 {
    match p.kind {
        FamilyKind::Gaussian(_) => {
            let (t1, t2) = p.gaussian_blocks().expect("gaussian");
            let prec = t2 * 2.0;
            let l = linalg::cholesky(&prec).expect("validated on construction");
            let y = l.solve_lower_triangular(&t1).expect("nonsingular factor");
            let log_det_prec: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            0.5 * y.norm_squared() - 0.5 * log_det_prec
        }
        FamilyKind::ProductExponential(_) => p.theta.iter().map(|t| (-1.0 / t).ln()).sum(),
    }
}

pub fn params_to_mean_cov(p: &NaturalParams) -> Result<MeanCov> {
    let (t1, t2) = p.gaussian_blocks()?;
    let sigma = linalg::spd_inverse(&(t2 * 2.0))?;
    let mu = &sigma * t1;
    Ok(MeanCov { mu: mu.iter().copied().collect(), sigma: linalg::mat_to_row_major(&sigma) })
}

pub fn mean_cov_to_params(mc: &MeanCov) -> Result<NaturalParams> {
    let d = mc.dim();
    let prec = linalg::spd_inverse(&mc.sigma_mat())?;
    let t1 = &prec * mc.mu_vec();
    let mut theta: Vec<f64> = t1.iter().copied().collect();
    theta.extend(linalg::mat_to_row_major(&(prec * 0.5)));
    NaturalParams::new(FamilyKind::Gaussian(d), theta)
}

pub fn mean_suff_stats(p: &NaturalParams) -> MomentVector {
    match p.kind {
        FamilyKind::Gaussian(d) => {
            let mc = params_to_mean_cov(p).expect("validated on construction");
            let mut v = mc.mu.clone();
            for i in 0..d {
                for j in 0..d {
                    v.push(-(mc.sigma[i * d + j] + mc.mu[i] * mc.mu[j]));
                }
            }
            MomentVector { v }
        }
        FamilyKind::ProductExponential(_) => MomentVector { v: p.theta.iter().map(|t| -1.0 / t).collect() },
    }
}

/// Closed-form inverse of [`mean_suff_stats`].
pub fn moment_match(kind: FamilyKind, v: &MomentVector) -> Result<NaturalParams> {
    check_dim(kind.param_len(), v.v.len())?;
    if v.v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateMoments("non-finite moment".into()));
    }
    match kind {
        FamilyKind::Gaussian(d) => {
            let mu = &v.v[..d];
            let mut sigma = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    sigma[i * d + j] = -v.v[d + i * d + j] - mu[i] * mu[j];
                }
            }
            let mc = MeanCov::new(mu.to_vec(), sigma)
                .map_err(|e| Error::DegenerateMoments(format!("implied covariance: {e}")))?;
            mean_cov_to_params(&mc).map_err(|e| Error::DegenerateMoments(e.to_string()))
        }
        FamilyKind::ProductExponential(_) => {
            if let Some(x) = v.v.iter().find(|x| **x <= 0.0) {
                return Err(Error::DegenerateMoments(format!("exponential moment {x} is not positive")));
            }
            NaturalParams::new(kind, v.v.iter().map(|x| -1.0 / x).collect())
        }
    }
}

pub fn log_density(p: &NaturalParams, x: &[f64]) -> Result<f64> {
    check_dim(p.dim(), x.len())?;
    Ok(log_density_unchecked(p, log_partition(p), x))
}

pub fn density(p: &NaturalParams, x: &[f64]) -> Result<f64> {
    Ok(log_density(p, x)?.exp())
}

/// Log-density with a precomputed log-partition value.
pub(crate) fn log_density_unchecked(p: &NaturalParams, a: f64, x: &[f64]) -> f64 {
    match p.kind {
        FamilyKind::Gaussian(d) => {
            let t = &p.theta;
            let mut s = linalg::dot(&t[..d], x);
            for i in 0..d {
                for j in 0..d {
                    s -= t[d + i * d + j] * x[i] * x[j];
                }
            }
            s - 0.5 * d as f64 * LN_2PI - a
        }
        FamilyKind::ProductExponential(_) => {
            if x.iter().any(|v| *v < 0.0) {
                f64::NEG_INFINITY
            } else {
                linalg::dot(&p.theta, x) - a
            }
        }
    }
}

/// Vectorised log-density evaluator that caches the log-partition.
#[derive(Clone, Debug)]
pub struct LogDensity {
    params: NaturalParams,
    a: f64,
}

impl LogDensity {
    pub fn new(p: &NaturalParams) -> Self {
        Self { params: p.clone(), a: log_partition(p) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        log_density_unchecked(&self.params, self.a, x)
    }
}

/// Covariance of `t(x)` under `p`, the Hessian of the log-partition.
pub fn suff_stat_cov(p: &NaturalParams) -> DMatrix<f64> {
    match p.kind {
        FamilyKind::Gaussian(d) => {
            let mc = params_to_mean_cov(p).expect("validated on construction");
            let mu = &mc.mu;
            let s = |i: usize, j: usize| mc.sigma[i * d + j];
            let m = d + d * d;
            let mut c = DMatrix::zeros(m, m);
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] = s(i, j);
                }
            }
            for i in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        // Cov(x_i, -x_k x_l)
                        let v = -(mu[k] * s(i, l) + mu[l] * s(i, k));
                        c[(i, d + k * d + l)] = v;
                        c[(d + k * d + l, i)] = v;
                    }
                }
            }
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            let v = s(i, k) * s(j, l)
                                + s(i, l) * s(j, k)
                                + mu[i] * mu[k] * s(j, l)
                                + mu[i] * mu[l] * s(j, k)
                                + mu[j] * mu[k] * s(i, l)
                                + mu[j] * mu[l] * s(i, k);
                            c[(d + i * d + j, d + k * d + l)] = v;
                        }
                    }
                }
            }
            c
        }
        FamilyKind::ProductExponential(d) => {
            DMatrix::from_diagonal(&DVector::from_iterator(d, p.theta.iter().map(|t| 1.0 / (t * t))))
        }
    }
}

/// Exact sampler for one family member.
#[derive(Clone, Debug)]
pub enum Sampler {
    Gaussian { mu: Vec<f64>, chol: DMatrix<f64> },
    Exponential { theta: Vec<f64> },
}

impl Sampler {
    pub fn new(p: &NaturalParams) -> Result<Self> {
        match p.kind {
            FamilyKind::Gaussian(_) => {
                let mc = params_to_mean_cov(p)?;
                let chol = linalg::cholesky(&mc.sigma_mat())?;
                Ok(Sampler::Gaussian { mu: mc.mu, chol })
            }
            FamilyKind::ProductExponential(_) => Ok(Sampler::Exponential { theta: p.theta.clone() }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Sampler::Gaussian { mu, .. } => mu.len(),
            Sampler::Exponential { theta } => theta.len(),
        }
    }

    pub fn draw_into(&self, rng: &mut Rng, out: &mut [f64]) {
        match self {
            Sampler::Gaussian { mu, chol } => {
                let d = mu.len();
                let mut z = [0.0f64; 16];
                let mut zv;
                let zs: &mut [f64] = if d <= 16 {
                    &mut z[..d]
                } else {
                    zv = vec![0.0; d];
                    &mut zv
                };
                for zi in zs.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..d {
                    let mut v = mu[i];
                    for k in 0..=i {
                        v += chol[(i, k)] * zs[k];
                    }
                    out[i] = v;
                }
            }
            Sampler::Exponential { theta } => {
                for (o, t) in out.iter_mut().zip(theta) {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    *o = u.ln() / t;
                }
            }
        }
    }
}

/// `n` independent draws; deterministic given `seed` regardless of thread count.
pub fn sample(p: &NaturalParams, n: usize, seed: u64) -> Result<SampleMatrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let sampler = Sampler::new(p)?;
    let d = p.dim();
    let chunks: Vec<Vec<f64>> = batches(n)
        .into_par_iter()
        .map(|(b, len)| {
            let mut rng = rng_from_seed(child_seed(seed, b));
            let mut buf = vec![0.0; len * d];
            for row in buf.chunks_exact_mut(d) {
                sampler.draw_into(&mut rng, row);
            }
            buf
        })
        .collect();
    SampleMatrix::from_flat(d, chunks.concat())
}
