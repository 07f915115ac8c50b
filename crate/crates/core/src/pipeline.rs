//! End-to-end estimators for unknown truncation sets and truncated linear regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SampleMatrix;
use crate::error::{check_dim, Error, Result};
use crate::expfam::{FamilyKind, MeanCov, NaturalParams};
use crate::linalg;
use crate::pmle::{self, PsgdConfig};
use crate::preprocess::{self, AffineTransform, DomainOptions, ParameterDomain};
use crate::rng::child_seed;
use crate::setlearn::{self, HalfspaceDiag, HalfspaceOptions, PuConfig};
use crate::truncation::{self, MassEstimate, SurvivalSet};

/// Hypothesis class for the unknown survival set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SetClass {
    Box,
    Halfspace,
    #[serde(rename = "poly")]
    PolyDegree { degree: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Relative sizes of the initialization, set-learning and optimization splits.
    pub split: [f64; 3],
    pub domain: DomainOptions,
    pub psgd: PsgdConfig,
    pub halfspace: HalfspaceOptions,
    pub pu: PuConfig,
    /// Monte-Carlo draws for the reported mass of the learned set.
    pub mass_draws: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            split: [1.0, 1.0, 1.0],
            domain: DomainOptions::default(),
            psgd: PsgdConfig::default(),
            halfspace: HalfspaceOptions::default(),
            pu: PuConfig::default(),
            mass_draws: 100_000,
        }
    }
}

impl PipelineConfig {
    /// Index ranges of the three splits for `n` samples.
    pub fn split_ranges(&self, n: usize) -> Result<[std::ops::Range<usize>; 3]> {
        if self.split.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(format!("split ratios must be positive, got {:?}", self.split)));
        }
        let total: f64 = self.split.iter().sum();
        let n1 = (n as f64 * self.split[0] / total).floor() as usize;
        let n2 = (n as f64 * (self.split[0] + self.split[1]) / total).floor() as usize;
        if n1 == 0 || n2 == n1 || n2 == n {
            return Err(Error::InvalidArgument(format!("{n} samples are too few to split three ways")));
        }
        Ok([0..n1, n1..n2, n2..n])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsgdSummary {
    pub iterations: usize,
    pub step_size: f64,
    pub omega_radius: f64,
    pub sigma_est: f64,
    pub mean_sq_grad: f64,
    pub final_grad_norm: Option<f64>,
    pub total_proposals: usize,
    pub n_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub split_sizes: [usize; 3],
    pub drop_fraction: f64,
    /// Mass of the learned set under the estimate, in transformed coordinates.
    pub learned_set_mass: MassEstimate,
    pub halfspace: Option<HalfspaceDiag>,
    pub psgd: PsgdSummary,
}

/// Everything needed to interpret and rerun one estimation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub family: String,
    pub d: usize,
    pub set_class: SetClass,
    pub alpha: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub config: PipelineConfig,
    pub theta_hat: NaturalParams,
    pub theta_hat_transformed: NaturalParams,
    pub theta0_transformed: NaturalParams,
    pub transform: AffineTransform,
    pub domain: ParameterDomain,
    /// Learned set in original coordinates.
    pub learned_set: SurvivalSet,
    pub diagnostics: Diagnostics,
}

impl EstimationReport {
    /// The learned set as seen by the solver, on transformed coordinates.
    pub fn learned_set_transformed(&self) -> SurvivalSet {
        pushforward_set(&self.learned_set, &self.transform)
    }
}

/// Estimate the parameters of `E(θ*, S*)` from truncated samples with unknown `S*`.
pub fn estimate_unknown_truncation(
    samples: &SampleMatrix,
    family: FamilyKind,
    set_class: SetClass,
    alpha: f64,
    epsilon: f64,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EstimationReport> {
    check_dim(family.dim(), samples.dim())?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if set_class == SetClass::Halfspace && !family.is_gaussian() {
        return Err(Error::Unsupported("halfspace learning requires the Gaussian family".into()));
    }
    let [r1, r2, r3] = cfg.split_ranges(samples.len())?;
    let split_sizes = [r1.len(), r2.len(), r3.len()];
    let (s1, s2, s3) = (samples.slice(r1), samples.slice(r2), samples.slice(r3));

    let (transform, domain) = if family.is_gaussian() {
        preprocess::gaussian_preprocess(&s1, alpha, &cfg.domain)?
    } else {
        preprocess::exponential_preprocess(&s1, alpha, &cfg.domain)?
    };
    let theta0 = pmle::init_theta0(&transform.apply_samples(&s1), &domain)?;

    let z2 = transform.apply_samples(&s2);
    let mut hs_diag = None;
    // Whitening does not preserve axis alignment, so boxes are fitted on raw samples.
    let (learned, learned_x) = match set_class {
        SetClass::Box => {
            let b = setlearn::learn_box(&s2)?;
            (pushforward_set(&b, &transform), b)
        }
        SetClass::Halfspace => {
            let (s, diag) = setlearn::learn_halfspace(&z2, epsilon, alpha, &cfg.halfspace)?;
            hs_diag = Some(diag);
            let x = pullback_set(&s, &transform);
            (s, x)
        }
        SetClass::PolyDegree { degree } => {
            let s = setlearn::learn_set_pu(&z2, &theta0, epsilon, degree, child_seed(seed, 1), &cfg.pu)?;
            let x = pullback_set(&s, &transform);
            (s, x)
        }
    };

    let z3 = transform.apply_samples(&s3);
    let (theta_z, trace) = pmle::psgd(&z3, &theta0, &learned, &domain, &cfg.psgd, child_seed(seed, 2))?;
    let theta_x = transform.params_to_original(&theta_z)?;
    let learned_set_mass = truncation::mass_estimate(&theta_z, &learned, cfg.mass_draws.max(100), child_seed(seed, 3))?;

    let psgd = PsgdSummary {
        iterations: cfg.psgd.iterations,
        step_size: trace.step_size,
        omega_radius: trace.omega_radius,
        sigma_est: trace.sigma_est,
        mean_sq_grad: trace.mean_sq_grad,
        final_grad_norm: trace.records.last().map(|r| r.grad_norm),
        total_proposals: trace.total_proposals,
        n_used: trace.n_used,
    };
    Ok(EstimationReport {
        family: family.name().to_string(),
        d: family.dim(),
        set_class,
        alpha,
        epsilon,
        seed,
        config: cfg.clone(),
        theta_hat: theta_x,
        theta_hat_transformed: theta_z,
        theta0_transformed: theta0,
        learned_set: learned_x,
        transform,
        domain,
        diagnostics: Diagnostics { split_sizes, drop_fraction: trace.drop_fraction, learned_set_mass, halfspace: hs_diag, psgd },
    })
}

/// Express a set on original coordinates `x` as a set on `z = A(x − c)`.
pub fn pushforward_set(set: &SurvivalSet, t: &AffineTransform) -> SurvivalSet {
    pullback_set(set, &t.inverse())
}

/// Express a set on transformed coordinates `z = A(x − c)` as a set on `x`.
pub fn pullback_set(set: &SurvivalSet, t: &AffineTransform) -> SurvivalSet {
    let a = t.matrix();
    let c = t.offset();
    match set {
        SurvivalSet::Full => SurvivalSet::Full,
        SurvivalSet::Halfspace { w, tau } => {
            let atw = a.transpose() * DVector::from_column_slice(w);
            let ac = a * DVector::from_column_slice(c);
            let norm = atw.norm();
            let shift = linalg::dot(w, ac.as_slice());
            SurvivalSet::Halfspace { w: atw.iter().map(|v| v / norm).collect(), tau: (tau + shift) / norm }
        }
        SurvivalSet::AxisBox { lo, hi } if t.is_diagonal() => {
            let mut l = vec![0.0; lo.len()];
            let mut h = vec![0.0; hi.len()];
            for i in 0..lo.len() {
                let s = a[(i, i)];
                let (x1, x2) = (lo[i] / s + c[i], hi[i] / s + c[i]);
                l[i] = x1.min(x2);
                h[i] = x1.max(x2);
            }
            SurvivalSet::AxisBox { lo: l, hi: h }
        }
        SurvivalSet::PolyThreshold { poly, threshold } => {
            SurvivalSet::PolyThreshold { poly: poly.compose_affine(a, c), threshold: *threshold }
        }
        other => {
            let inner = other.clone();
            let tr = t.clone();
            let desc = format!("{} after x -> A(x - c)", other.describe());
            SurvivalSet::external(t.dim(), desc, move |x| inner.contains_unchecked(&tr.apply(x)))
        }
    }
}

/// Regression coefficients of the last coordinate on the others, from the joint moments.
pub fn regression_from_mean_cov(mc: &MeanCov) -> Result<(Vec<f64>, f64)> {
    let d1 = mc.dim();
    if d1 < 2 {
        return Err(Error::InvalidArgument("joint distribution needs at least two coordinates".into()));
    }
    let d = d1 - 1;
    let s = mc.sigma_mat();
    let sxx = s.view((0, 0), (d, d)).into_owned();
    let sxy = s.view((0, d), (d, 1)).into_owned();
    let w = linalg::spd_inverse(&sxx)? * sxy;
    let b = mc.mu[d] - (0..d).map(|i| mc.mu[i] * w[i]).sum::<f64>();
    Ok((w.iter().copied().collect(), b))
}

/// Regression coefficients read from the natural-parameter blocks of the joint Gaussian.
///
/// The precision is `[[Σ⁻¹ + wwᵀ/s², −w/s²], [−wᵀ/s², 1/s²]]` and the last entry of
/// `Σ̄⁻¹μ̄` is `b/s²`, so both reads are normalized by the `(y, y)` precision entry.
pub fn regression_from_blocks(p: &NaturalParams) -> Result<(Vec<f64>, f64)> {
    let (t1, t2) = p.gaussian_blocks()?;
    let d1 = p.dim();
    if d1 < 2 {
        return Err(Error::InvalidArgument("joint distribution needs at least two coordinates".into()));
    }
    let d = d1 - 1;
    let prec: DMatrix<f64> = t2 * 2.0;
    let pyy = prec[(d, d)];
    let w = (0..d).map(|i| -prec[(i, d)] / pyy).collect();
    Ok((w, t1[d] / pyy))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub w_hat: Vec<f64>,
    pub b_hat: f64,
    /// Noise variance of `y` given `x` implied by the joint estimate.
    pub noise_var: f64,
    pub joint: EstimationReport,
}

/// Fit `y = wᵀx + b + ξ` from pairs `(x, y)` truncated jointly to an unknown set.
pub fn truncated_linear_regression(
    pairs: &SampleMatrix,
    set_class: SetClass,
    alpha: f64,
    epsilon: f64,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<RegressionReport> {
    if pairs.dim() < 2 {
        return Err(Error::InvalidArgument("regression data needs at least one feature and a response".into()));
    }
    let family = FamilyKind::Gaussian(pairs.dim());
    let joint = estimate_unknown_truncation(pairs, family, set_class, alpha, epsilon, cfg, seed)?;
    let mc = joint.theta_hat.to_mean_cov()?;
    let (w_hat, b_hat) = regression_from_mean_cov(&mc)?;
    let (_, t2) = joint.theta_hat.gaussian_blocks()?;
    let noise_var = 1.0 / (2.0 * t2[(pairs.dim() - 1, pairs.dim() - 1)]);
    Ok(RegressionReport { w_hat, b_hat, noise_var, joint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::sample;

    #[test]
    fn split_ranges_are_disjoint() {
        let cfg = PipelineConfig::default();
        let [a, b, c] = cfg.split_ranges(10).unwrap();
        assert_eq!((a, b, c), (0..3, 3..6, 6..10));
        assert!(cfg.split_ranges(2).is_err());
    }

    #[test]
    fn pullback_identity_and_shift() {
        let h = SurvivalSet::halfspace(vec![0.6, 0.8], 0.3).unwrap();
        assert_eq!(pullback_set(&h, &AffineTransform::identity(2)), h);
        let t = AffineTransform::new(DMatrix::from_element(1, 1, 0.5), vec![1.0]).unwrap();
        let s = pullback_set(&SurvivalSet::halfspace(vec![1.0], 0.0).unwrap(), &t);
        assert_eq!(s, SurvivalSet::Halfspace { w: vec![1.0], tau: 1.0 });
    }

    #[test]
    fn pullback_box_negative_scale() {
        let t = AffineTransform::new(DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 1.0])), vec![0.0, 1.0]).unwrap();
        let b = SurvivalSet::axis_box(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(pullback_set(&b, &t), SurvivalSet::AxisBox { lo: vec![-0.5, 1.0], hi: vec![0.0, 3.0] });
    }

    #[test]
    fn regression_examples() {
        let mc = MeanCov::new(vec![0.0, 1.0], vec![1.0, 2.0, 2.0, 5.0]).unwrap();
        let (w, b) = regression_from_mean_cov(&mc).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let p = crate::expfam::mean_cov_to_params(&mc).unwrap();
        let (t1, t2) = p.gaussian_blocks().unwrap();
        let prec = t2 * 2.0;
        assert!((prec[(0, 0)] - 5.0).abs() < 1e-12 && (prec[(0, 1)] + 2.0).abs() < 1e-12 && (prec[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((t1[1] - 1.0).abs() < 1e-12);
        let (w2, b2) = regression_from_blocks(&p).unwrap();
        assert!((w2[0] - 2.0).abs() < 1e-10 && (b2 - 1.0).abs() < 1e-10);
        let iden = MeanCov::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(regression_from_mean_cov(&iden).unwrap(), (vec![0.0], 0.0));
    }

    #[test]
    fn halfspace_rejected_for_exponential() {
        let s = sample(&NaturalParams::exponential(&[-1.0]).unwrap(), 300, 1).unwrap();
        let r = estimate_unknown_truncation(&s, FamilyKind::ProductExponential(1), SetClass::Halfspace, 0.5, 0.1, &PipelineConfig::default(), 1);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn full_set_declared_as_halfspace() {
        let truth = NaturalParams::gaussian(&[1.0, -1.0], &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let s = sample(&truth, 60_000, 4).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.psgd.step_size = Some(1e-3);
        cfg.psgd.iterations = 20_000;
        let rep = estimate_unknown_truncation(&s, FamilyKind::Gaussian(2), SetClass::Halfspace, 0.9, 0.5, &cfg, 5).unwrap();
        assert!(rep.learned_set.is_full());
        assert!(rep.diagnostics.halfspace.as_ref().unwrap().degenerate);
        let mc = rep.theta_hat.to_mean_cov().unwrap();
        let want = truth.to_mean_cov().unwrap();
        for (a, b) in mc.mu.iter().chain(&mc.sigma).zip(want.mu.iter().chain(&want.sigma)) {
            assert!((a - b).abs() < 0.1, "{mc:?}");
        }
        let json = serde_json::to_string(&rep).unwrap();
        let back: EstimationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.theta_hat, rep.theta_hat);
    }
}
