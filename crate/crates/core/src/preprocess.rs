//! Data normalisation and convex parameter domains with Euclidean projections.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SampleMatrix;
use crate::error::{check_dim, Error, Result};
use crate::expfam::{FamilyKind, MeanCov, NaturalParams};
use crate::linalg;

/// The map `x ↦ A(x − c)` with its inverse cached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct AffineTransform {
    a: DMatrix<f64>,
    c: DVector<f64>,
    a_inv: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    d: usize,
    a: Vec<f64>,
    c: Vec<f64>,
}

impl TryFrom<TransformRepr> for AffineTransform {
    type Error = Error;
    fn try_from(r: TransformRepr) -> Result<Self> {
        check_dim(r.d * r.d, r.a.len())?;
        AffineTransform::new(linalg::mat_from_row_major(r.d, &r.a), r.c)
    }
}

impl From<AffineTransform> for TransformRepr {
    fn from(t: AffineTransform) -> Self {
        TransformRepr { d: t.dim(), a: linalg::mat_to_row_major(&t.a), c: t.c.iter().copied().collect() }
    }
}

impl AffineTransform {
    pub fn new(a: DMatrix<f64>, c: Vec<f64>) -> Result<Self> {
        let d = c.len();
        if a.nrows() != d || a.ncols() != d || d == 0 {
            return Err(Error::DimensionMismatch { expected: d, got: a.nrows() });
        }
        let a_inv = a
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::InvalidArgument("transform matrix is singular".into()))?;
        Ok(Self { a, c: DVector::from_vec(c), a_inv })
    }

    /// The map `x = A⁻¹z + c`, written in the same `A'(z − c')` form.
    pub fn inverse(&self) -> AffineTransform {
        let c = -(&self.a * &self.c);
        Self { a: self.a_inv.clone(), c, a_inv: self.a.clone() }
    }

    pub fn identity(d: usize) -> Self {
        Self { a: DMatrix::identity(d, d), c: DVector::zeros(d), a_inv: DMatrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn offset(&self) -> &[f64] {
        self.c.as_slice()
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.a[(i, j)] == 0.0))
    }

    /// `z = A(x − c)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; x.len()];
        self.apply_into(x, &mut z);
        z
    }

    pub fn apply_into(&self, x: &[f64], z: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            z[i] = (0..d).map(|j| self.a[(i, j)] * (x[j] - self.c[j])).sum();
        }
    }

    /// `x = A⁻¹z + c`.
    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.c[i] + (0..d).map(|j| self.a_inv[(i, j)] * z[j]).sum::<f64>()).collect()
    }

    pub fn apply_samples(&self, s: &SampleMatrix) -> SampleMatrix {
        s.map_rows(|x, z| self.apply_into(x, z))
    }

    /// Parameters of the law of `x` when `z = A(x − c)` has parameters `p`.
    pub fn params_to_original(&self, p: &NaturalParams) -> Result<NaturalParams> {
        check_dim(self.dim(), p.dim())?;
        match p.kind() {
            FamilyKind::Gaussian(_) => {
                let mc = p.to_mean_cov()?;
                let mu = &self.a_inv * mc.mu_vec() + &self.c;
                let sigma = linalg::symmetrize(&(&self.a_inv * mc.sigma_mat() * self.a_inv.transpose()));
                NaturalParams::gaussian(mu.as_slice(), &linalg::mat_to_row_major(&sigma))
            }
            FamilyKind::ProductExponential(_) => {
                self.require_positive_diagonal()?;
                let theta: Vec<f64> = p.theta().iter().enumerate().map(|(i, t)| t * self.a[(i, i)]).collect();
                NaturalParams::exponential(&theta)
            }
        }
    }

    /// Parameters of the law of `z = A(x − c)` when `x` has parameters `p`.
    pub fn params_to_transformed(&self, p: &NaturalParams) -> Result<NaturalParams> {
        check_dim(self.dim(), p.dim())?;
        match p.kind() {
            FamilyKind::Gaussian(_) => {
                let mc = p.to_mean_cov()?;
                let mu = &self.a * (mc.mu_vec() - &self.c);
                let sigma = linalg::symmetrize(&(&self.a * mc.sigma_mat() * self.a.transpose()));
                NaturalParams::gaussian(mu.as_slice(), &linalg::mat_to_row_major(&sigma))
            }
            FamilyKind::ProductExponential(_) => {
                self.require_positive_diagonal()?;
                let theta: Vec<f64> = p.theta().iter().enumerate().map(|(i, t)| t / self.a[(i, i)]).collect();
                NaturalParams::exponential(&theta)
            }
        }
    }

    fn require_positive_diagonal(&self) -> Result<()> {
        if !self.is_diagonal() || self.c.iter().any(|v| *v != 0.0) || self.a.diagonal().iter().any(|v| *v <= 0.0) {
            return Err(Error::Unsupported("exponential parameters only map through positive diagonal scalings".into()));
        }
        Ok(())
    }
}

/// Smoothness and interiority constants attached to a domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainConstants {
    pub lambda: f64,
    pub big_lambda: f64,
    pub eta: f64,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DomainKind {
    /// `‖Σ⁻¹μ‖ ≤ b`, `‖Σ‖₂ ≤ b`, `‖I − Σ⁻¹‖_F ≤ b`.
    GaussianTheta { b: f64 },
    /// `[−1/r, −r]^d ∩ B(−1, R)`.
    ExpTheta { r: f64, big_r: f64 },
}

/// Tunable constants used when building a domain from data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainOptions {
    pub c_b: f64,
    pub c_r: f64,
    pub c_big_r: f64,
    /// Smallest admissible Gaussian radius `b`.
    pub min_b: f64,
    pub lambda: Option<f64>,
    pub big_lambda: Option<f64>,
    pub eta: Option<f64>,
}

impl Default for DomainOptions {
    fn default() -> Self {
        Self { c_b: 1.0, c_r: 0.5, c_big_r: 10.0, min_b: 4.0, lambda: None, big_lambda: None, eta: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    pub d: usize,
    pub kind: DomainKind,
    pub constants: DomainConstants,
}

const FEAS_TOL: f64 = 1e-7;
const DYKSTRA_TOL: f64 = 1e-8;
const DYKSTRA_MAX_SWEEPS: usize = 10_000;

type Projector<'a> = Box<dyn Fn(&mut [f64]) + 'a>;

/// Dykstra's alternating projections onto the intersection of convex sets.
///
/// Stops once a full sweep moves the iterate by less than `tol` and every
/// correction step is below `tol`.
pub fn dykstra(x0: &[f64], sets: &[Projector<'_>], tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
    let k = sets.len();
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut incr = vec![vec![0.0; n]; k];
    let mut y = vec![0.0; n];
    for _ in 0..max_sweeps {
        let start = x.clone();
        let mut max_gap = 0.0f64;
        for (proj, p) in sets.iter().zip(incr.iter_mut()) {
            for i in 0..n {
                y[i] = x[i] + p[i];
            }
            let before = y.clone();
            proj(&mut y);
            let mut gap = 0.0;
            for i in 0..n {
                p[i] = before[i] - y[i];
                gap += (y[i] - x[i]) * (y[i] - x[i]);
            }
            max_gap = max_gap.max(gap.sqrt());
            x.copy_from_slice(&y);
        }
        if linalg::dist2(&start, &x) < tol && max_gap < tol {
            return Ok(x);
        }
    }
    Err(Error::ProjectionFailure { sweeps: max_sweeps })
}

pub(crate) fn project_ball(x: &mut [f64], center: &[f64], radius: f64) {
    let dist = linalg::dist2(x, center);
    if dist > radius {
        let s = radius / dist;
        for (v, c) in x.iter_mut().zip(center) {
            *v = c + (*v - c) * s;
        }
    }
}

impl ParameterDomain {
    pub fn gaussian(d: usize, b: f64, constants: DomainConstants) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::InvalidArgument(format!("domain radius b must be positive, got {b}")));
        }
        Self::check_constants(&constants)?;
        Ok(Self { d, kind: DomainKind::GaussianTheta { b }, constants })
    }

    pub fn exponential(d: usize, r: f64, big_r: f64, constants: DomainConstants) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) || !(big_r > 0.0) || !big_r.is_finite() {
            return Err(Error::InvalidArgument(format!("need 0 < r <= 1 and R > 0, got r={r}, R={big_r}")));
        }
        Self::check_constants(&constants)?;
        Ok(Self { d, kind: DomainKind::ExpTheta { r, big_r }, constants })
    }

    fn check_constants(c: &DomainConstants) -> Result<()> {
        if !(c.lambda > 0.0 && c.lambda <= c.big_lambda && c.eta > 0.0 && c.alpha > 0.0 && c.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("invalid domain constants {c:?}")));
        }
        Ok(())
    }

    /// Gaussian domain sized for mass bound `alpha`.
    pub fn gaussian_default(d: usize, alpha: f64, opts: &DomainOptions) -> Result<Self> {
        check_alpha(alpha)?;
        let b = (opts.c_b * (1.0 / alpha).ln() / (alpha * alpha)).max(opts.min_b);
        let a6 = alpha.powi(6);
        let constants = DomainConstants {
            lambda: opts.lambda.unwrap_or(a6 / 100.0),
            big_lambda: opts.big_lambda.unwrap_or(100.0 / a6),
            eta: opts.eta.unwrap_or(alpha.powi(3) / 10.0),
            alpha,
        };
        Self::gaussian(d, b, constants)
    }

    /// Exponential domain sized for mass bound `alpha`.
    pub fn exponential_default(d: usize, alpha: f64, opts: &DomainOptions) -> Result<Self> {
        check_alpha(alpha)?;
        let r = (opts.c_r * alpha).min(1.0);
        let big_r = opts.c_big_r / alpha;
        let constants = DomainConstants {
            lambda: opts.lambda.unwrap_or(r * r),
            big_lambda: opts.big_lambda.unwrap_or(1.0 / (r * r)),
            eta: opts.eta.unwrap_or(r / 10.0),
            alpha,
        };
        Self::exponential(d, r, big_r, constants)
    }

    pub fn family(&self) -> FamilyKind {
        match self.kind {
            DomainKind::GaussianTheta { .. } => FamilyKind::Gaussian(self.d),
            DomainKind::ExpTheta { .. } => FamilyKind::ProductExponential(self.d),
        }
    }

    fn check_family(&self, p: &NaturalParams) -> Result<()> {
        if p.kind() != self.family() {
            return Err(Error::FamilyMismatch(format!(
                "domain is for {:?}, parameters are {:?}",
                self.family(),
                p.kind()
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &NaturalParams) -> Result<bool> {
        self.check_family(p)?;
        Ok(self.contains_vec(p.theta(), 0.0))
    }

    /// Membership with relative slack `tol` on every constraint.
    pub fn contains_vec(&self, theta: &[f64], tol: f64) -> bool {
        let d = self.d;
        match self.kind {
            DomainKind::GaussianTheta { b } => {
                if linalg::norm2(&theta[..d]) > b * (1.0 + tol) {
                    return false;
                }
                let t2 = linalg::symmetrize(&linalg::mat_from_row_major(d, &theta[d..]));
                let (vals, _) = linalg::sym_eigen(&t2);
                if vals[0] < 1.0 / (2.0 * b) * (1.0 - tol) {
                    return false;
                }
                let dev = t2 - DMatrix::identity(d, d) * 0.5;
                linalg::frobenius(&dev) <= 0.5 * b * (1.0 + tol)
            }
            DomainKind::ExpTheta { r, big_r } => {
                let lo = -1.0 / r;
                let hi = -r;
                let slack = tol * (1.0 + 1.0 / r);
                theta.iter().all(|t| *t >= lo - slack && *t <= hi + slack)
                    && theta.iter().map(|t| (t + 1.0) * (t + 1.0)).sum::<f64>().sqrt() <= big_r * (1.0 + tol)
            }
        }
    }

    /// Convex constraint projectors in natural-parameter coordinates.
    pub(crate) fn projectors(&self) -> Vec<Projector<'static>> {
        let d = self.d;
        match self.kind {
            DomainKind::GaussianTheta { b } => vec![
                Box::new(move |x: &mut [f64]| {
                    let n = linalg::norm2(&x[..d]);
                    if n > b {
                        x[..d].iter_mut().for_each(|v| *v *= b / n);
                    }
                }),
                Box::new(move |x: &mut [f64]| {
                    let m = linalg::mat_from_row_major(d, &x[d..]);
                    let floor = 1.0 / (2.0 * b);
                    let p = linalg::sym_apply(&m, |v| v.max(floor));
                    x[d..].copy_from_slice(&linalg::mat_to_row_major(&p));
                }),
                Box::new(move |x: &mut [f64]| {
                    let m = linalg::symmetrize(&linalg::mat_from_row_major(d, &x[d..]));
                    let half = DMatrix::identity(d, d) * 0.5;
                    let dev = &m - &half;
                    let n = linalg::frobenius(&dev);
                    let p = if n > 0.5 * b { half + dev * (0.5 * b / n) } else { m };
                    x[d..].copy_from_slice(&linalg::mat_to_row_major(&p));
                }),
            ],
            DomainKind::ExpTheta { r, big_r } => vec![
                Box::new(move |x: &mut [f64]| x.iter_mut().for_each(|v| *v = v.clamp(-1.0 / r, -r))),
                Box::new(move |x: &mut [f64]| project_ball(x, &vec![-1.0; x.len()], big_r)),
            ],
        }
    }

    /// Euclidean projection of a raw parameter vector.
    pub fn project_vec(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.family().param_len(), theta.len())?;
        let mut x = theta.to_vec();
        if let DomainKind::GaussianTheta { .. } = self.kind {
            let d = self.d;
            let s = linalg::symmetrize(&linalg::mat_from_row_major(d, &x[d..]));
            x[d..].copy_from_slice(&linalg::mat_to_row_major(&s));
        }
        if self.contains_vec(&x, 0.0) {
            return Ok(x);
        }
        dykstra(&x, &self.projectors(), DYKSTRA_TOL, DYKSTRA_MAX_SWEEPS)
    }

    pub fn project(&self, p: &NaturalParams) -> Result<NaturalParams> {
        self.check_family(p)?;
        if self.contains_vec(p.theta(), 0.0) {
            return Ok(p.clone());
        }
        NaturalParams::new(p.kind(), self.project_vec(p.theta())?)
    }

    /// The shrunk domain used for interior projection.
    pub fn shrunk(&self, eta: f64) -> Result<ParameterDomain> {
        let kind = match self.kind {
            DomainKind::GaussianTheta { b } => {
                if b / 2.0 < 1.0 {
                    return Err(Error::EmptyDomain(format!("b/2 = {} excludes the standard normal", b / 2.0)));
                }
                DomainKind::GaussianTheta { b: b / 2.0 }
            }
            DomainKind::ExpTheta { r, big_r } => {
                let (r2, big_r2) = (r + eta, big_r - eta);
                if r2 > 1.0 || big_r2 <= 0.0 {
                    return Err(Error::EmptyDomain(format!("shrinking by {eta} leaves r={r2}, R={big_r2}")));
                }
                DomainKind::ExpTheta { r: r2, big_r: big_r2 }
            }
        };
        Ok(ParameterDomain { d: self.d, kind, constants: self.constants })
    }

    pub fn project_interior(&self, eta: f64, p: &NaturalParams) -> Result<NaturalParams> {
        self.shrunk(eta)?.project(p)
    }

    /// Feasibility check tolerant of projection round-off.
    pub fn contains_approx(&self, p: &NaturalParams) -> bool {
        p.kind() == self.family() && self.contains_vec(p.theta(), FEAS_TOL)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("mass bound alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Whitening transform `z = Σ̂^{-1/2}(x − μ̂)` and a Gaussian domain for `alpha`.
pub fn gaussian_preprocess(samples: &SampleMatrix, alpha: f64, opts: &DomainOptions) -> Result<(AffineTransform, ParameterDomain)> {
    let d = samples.dim();
    if samples.len() <= d {
        return Err(Error::InvalidArgument(format!("need more than {d} samples to whiten, got {}", samples.len())));
    }
    let mu = samples.mean();
    let cov = linalg::mat_from_row_major(d, &samples.covariance());
    linalg::cholesky(&cov).map_err(|e| Error::NotPositiveDefinite(format!("empirical covariance: {e}")))?;
    let a = linalg::sym_inv_sqrt(&cov)?;
    Ok((AffineTransform::new(a, mu)?, ParameterDomain::gaussian_default(d, alpha, opts)?))
}

/// Coordinate scaling `z = x / μ̂` (empirical mean becomes 1) and an exponential domain.
pub fn exponential_preprocess(samples: &SampleMatrix, alpha: f64, opts: &DomainOptions) -> Result<(AffineTransform, ParameterDomain)> {
    let d = samples.dim();
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples".into()));
    }
    if samples.as_flat().iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("exponential samples must be nonnegative".into()));
    }
    let mu = samples.mean();
    if let Some(j) = mu.iter().position(|m| !(*m > 0.0)) {
        return Err(Error::DegenerateMoments(format!("coordinate {j} has zero empirical mean")));
    }
    let a = DMatrix::from_diagonal(&DVector::from_iterator(d, mu.iter().map(|m| 1.0 / m)));
    Ok((AffineTransform::new(a, vec![0.0; d])?, ParameterDomain::exponential_default(d, alpha, opts)?))
}

/// Convenience: mean/covariance form of a transform's action on a Gaussian.
pub fn map_mean_cov(t: &AffineTransform, mc: &MeanCov) -> Result<MeanCov> {
    let mu = t.matrix() * (mc.mu_vec() - DVector::from_column_slice(t.offset()));
    let sigma = linalg::symmetrize(&(t.matrix() * mc.sigma_mat() * t.matrix().transpose()));
    MeanCov::new(mu.iter().copied().collect(), linalg::mat_to_row_major(&sigma))
}
