//! Truncated-normal analytics, divergences, bridge distributions and bound checks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::expfam::{self, FamilyKind, LogDensity, MeanCov, NaturalParams};
use crate::linalg;
use crate::quad;
use crate::rng::{batches, child_seed, rng_from_seed};
use crate::truncation::MassEstimate;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Upper tail `1 − Φ(t)`.
pub fn normal_sf(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

pub fn normal_cdf(t: f64) -> f64 {
    normal_sf(-t)
}

/// Hazard rate `φ(t) / (1 − Φ(t))` of the standard normal.
pub fn hazard(t: f64) -> f64 {
    if t > 8.0 {
        // Continued fraction for the Mills ratio, evaluated bottom-up.
        let mut v = t;
        for k in (1..=60).rev() {
            v = t + k as f64 / v;
        }
        v
    } else {
        normal_pdf(t) / normal_sf(t)
    }
}

pub fn hazard_lb1(t: f64) -> f64 {
    let t2 = t * t;
    let num = t * (((t2 + 21.0) * t2 + 105.0) * t2 + 105.0);
    let den = ((t2 + 20.0) * t2 + 87.0) * t2 + 48.0;
    num / den
}

pub fn hazard_lb2(t: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (2.0 * t + ((pi - 2.0).powi(2) * t * t + 2.0 * pi).sqrt()) / pi
}

/// Moments of a standard normal conditioned on `z ≥ tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncNormalMoments {
    pub tau: f64,
    pub h: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub c3: f64,
}

pub fn trunc_normal_moments(tau: f64) -> TruncNormalMoments {
    let h = hazard(tau);
    TruncNormalMoments {
        tau,
        h,
        m1: h,
        m2: 1.0 + tau * h,
        m3: (2.0 + tau * tau) * h,
        c3: h * (tau * tau - 1.0 + 2.0 * h * h - 3.0 * tau * h),
    }
}

/// Explicit lower bound on the third central moment of the upper-truncated normal.
pub fn third_moment_lower_bound(tau: f64) -> f64 {
    let phi = normal_pdf(tau);
    if tau >= 1.2 {
        phi * 9.0 / (1e4 * 156.0 * 156.0) * tau.powi(-12)
    } else if tau > 0.0 {
        phi * 0.004
    } else {
        phi * 0.008
    }
}

fn gaussian_pair(p1: &NaturalParams, p2: &NaturalParams) -> Result<(MeanCov, MeanCov)> {
    if p1.kind() != p2.kind() || !p1.kind().is_gaussian() {
        return Err(Error::FamilyMismatch("expected two Gaussians of equal dimension".into()));
    }
    Ok((p1.to_mean_cov()?, p2.to_mean_cov()?))
}

pub fn gaussian_kl(p1: &NaturalParams, p2: &NaturalParams) -> Result<f64> {
    let (a, b) = gaussian_pair(p1, p2)?;
    let d = a.dim() as f64;
    let s1 = a.sigma_mat();
    let s2 = b.sigma_mat();
    let p2inv = linalg::spd_inverse(&s2)?;
    let dm = b.mu_vec() - a.mu_vec();
    let tr = (&p2inv * &s1).trace();
    let quad = dm.dot(&(&p2inv * &dm));
    Ok(0.5 * (tr + quad - d + linalg::log_det_spd(&s2)? - linalg::log_det_spd(&s1)?))
}

/// Rényi divergence of order `q > 1` (or `0 < q < 1`), `+∞` when the integral diverges.
pub fn gaussian_renyi(q: f64, p1: &NaturalParams, p2: &NaturalParams) -> Result<f64> {
    if !(q > 0.0) || q == 1.0 {
        return Err(Error::InvalidArgument(format!("Renyi order must be positive and not 1, got {q}")));
    }
    let (a, b) = gaussian_pair(p1, p2)?;
    let s1 = a.sigma_mat();
    let s2 = b.sigma_mat();
    let prec1 = linalg::spd_inverse(&s1)?;
    let prec2 = linalg::spd_inverse(&s2)?;
    let m = &prec1 * q + &prec2 * (1.0 - q);
    let Ok(ld_m) = linalg::log_det_spd(&m) else {
        return Ok(f64::INFINITY);
    };
    let (mu1, mu2) = (a.mu_vec(), b.mu_vec());
    let h = &prec1 * &mu1 * q + &prec2 * &mu2 * (1.0 - q);
    let m_inv = linalg::spd_inverse(&m)?;
    let c = q * mu1.dot(&(&prec1 * &mu1)) + (1.0 - q) * mu2.dot(&(&prec2 * &mu2));
    let log_int = -0.5 * q * linalg::log_det_spd(&s1)? - 0.5 * (1.0 - q) * linalg::log_det_spd(&s2)?
        - 0.5 * ld_m
        - 0.5 * (c - h.dot(&(&m_inv * &h)));
    Ok(log_int / (q - 1.0))
}

/// χ² divergence `∫p1²/p2 − 1` from the covariance-form closed expression.
pub fn gaussian_chi2(p1: &NaturalParams, p2: &NaturalParams) -> Result<f64> {
    let (a, b) = gaussian_pair(p1, p2)?;
    let s1 = a.sigma_mat();
    let s2 = b.sigma_mat();
    let k = &s2 * 2.0 - &s1;
    let Ok(ld_k) = linalg::log_det_spd(&k) else {
        return Ok(f64::INFINITY);
    };
    let dm = a.mu_vec() - b.mu_vec();
    let quad = dm.dot(&(linalg::spd_inverse(&k)? * &dm));
    let log_ratio = linalg::log_det_spd(&s2)? - 0.5 * linalg::log_det_spd(&s1)? - 0.5 * ld_k + quad;
    Ok(log_ratio.exp() - 1.0)
}

/// Gaussian close in third-order Rényi divergence to both inputs.
pub fn bridge_gaussian(p1: &NaturalParams, p2: &NaturalParams) -> Result<NaturalParams> {
    let (a, b) = gaussian_pair(p1, p2)?;
    let s1 = a.sigma_mat();
    let root = linalg::sym_sqrt(&s1);
    let w = linalg::sym_inv_sqrt(&s1)?;
    let inner = linalg::symmetrize(&(&w * b.sigma_mat() * &w));
    let wide = linalg::sym_apply(&inner, |l| l.max(1.0));
    let sigma = linalg::symmetrize(&(&root * wide * &root));
    NaturalParams::gaussian(&a.mu, &linalg::mat_to_row_major(&sigma))
}

/// Right side of the Gaussian bridge divergence bound.
pub fn bridge_gaussian_bound(p1: &NaturalParams, p2: &NaturalParams) -> Result<f64> {
    let (a, b) = gaussian_pair(p1, p2)?;
    let d = a.dim();
    let w = linalg::sym_inv_sqrt(&a.sigma_mat())?;
    let dm = &w * (a.mu_vec() - b.mu_vec());
    let dev = &w * b.sigma_mat() * &w - DMatrix::identity(d, d);
    let bridge = bridge_gaussian(p1, p2)?.to_mean_cov()?;
    let spec = linalg::spectral_norm_sym(&bridge.sigma_mat());
    Ok(1.5 * dm.norm_squared() + 0.75 * spec.max(1.0) * linalg::frobenius(&dev).powi(2))
}

fn exp_pair<'a>(p1: &'a NaturalParams, p2: &'a NaturalParams) -> Result<(&'a [f64], &'a [f64])> {
    if p1.kind() != p2.kind() || p1.kind().is_gaussian() {
        return Err(Error::FamilyMismatch("expected two product exponentials of equal dimension".into()));
    }
    Ok((p1.theta(), p2.theta()))
}

/// Product exponential with the heavier tail in each coordinate.
///
/// Natural parameters are negative rates, so the heavier tail is the larger value.
pub fn bridge_exponential(phi: &NaturalParams, gamma: &NaturalParams) -> Result<NaturalParams> {
    let (a, b) = exp_pair(phi, gamma)?;
    NaturalParams::exponential(&a.iter().zip(b).map(|(x, y)| x.max(*y)).collect::<Vec<_>>())
}

/// `R₃(Exp(φ) ‖ Exp(λ))`, infinite unless `2λᵢ − 3φᵢ > 0` for every coordinate.
pub fn exp_renyi3(phi: &NaturalParams, lambda: &NaturalParams) -> Result<f64> {
    let (f, l) = exp_pair(phi, lambda)?;
    let mut s = 0.0;
    for (fi, li) in f.iter().zip(l) {
        let k = 2.0 * li - 3.0 * fi;
        if !(k > 0.0) {
            return Ok(f64::INFINITY);
        }
        s += 3.0 * (-fi).ln() - 2.0 * (-li).ln() - k.ln();
    }
    Ok(0.5 * s)
}

/// Total variation distance: quadrature for `d = 1`, Monte Carlo otherwise.
pub fn gaussian_tv(p1: &NaturalParams, p2: &NaturalParams, n_mc: usize, seed: u64) -> Result<MassEstimate> {
    let (a, b) = gaussian_pair(p1, p2)?;
    if a.dim() == 1 {
        return Ok(MassEstimate::exact(tv_1d_gaussian(&a, &b), 0));
    }
    tv_monte_carlo(p1, p2, n_mc, seed)
}

fn tv_1d_gaussian(a: &MeanCov, b: &MeanCov) -> f64 {
    let (m1, v1, m2, v2) = (a.mu[0], a.sigma[0], b.mu[0], b.sigma[0]);
    let f = |x: f64, m: f64, v: f64| (-0.5 * (x - m) * (x - m) / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    // Roots of log f1 = log f2, a quadratic in x.
    let qa = 0.5 / v2 - 0.5 / v1;
    let qb = m1 / v1 - m2 / v2;
    let qc = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 + 0.5 * (v2 / v1).ln();
    let mut breaks = Vec::new();
    if qa.abs() < 1e-15 {
        if qb.abs() > 0.0 {
            breaks.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            breaks.push((-qb + sq) / (2.0 * qa));
            breaks.push((-qb - sq) / (2.0 * qa));
        }
    }
    let s = v1.sqrt().max(v2.sqrt());
    let lo = m1.min(m2) - 40.0 * s;
    let hi = m1.max(m2) + 40.0 * s;
    0.5 * quad::integrate_pieces(|x| (f(x, m1, v1) - f(x, m2, v2)).abs(), lo, hi, &breaks, 1e-10)
}

/// `½ E_{p1} |1 − min(p2/p1, 10⁶)|` with a normal-approximation half-width.
pub fn tv_monte_carlo(p1: &NaturalParams, p2: &NaturalParams, n: usize, seed: u64) -> Result<MassEstimate> {
    if n < 2 {
        return Err(Error::InvalidArgument("Monte-Carlo TV needs at least 2 draws".into()));
    }
    let sampler = p1.sampler()?;
    let l1 = LogDensity::new(p1);
    let l2 = LogDensity::new(p2);
    let d = p1.dim();
    let (s, s2) = batches(n)
        .into_par_iter()
        .map(|(bi, len)| {
            let mut rng = rng_from_seed(child_seed(seed, bi));
            let mut x = vec![0.0; d];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..len {
                sampler.draw_into(&mut rng, &mut x);
                let ratio = (l2.eval(&x) - l1.eval(&x)).exp().min(1e6);
                let v = 0.5 * (1.0 - ratio).abs();
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = n as f64;
    let mean = s / nf;
    let var = (s2 / nf - mean * mean).max(0.0);
    Ok(MassEstimate { point_estimate: mean, n, half_width: 1.96 * (var / nf).sqrt() })
}

/// `√(Λ/2) ‖θ₁ − θ₂‖`.
pub fn tv_upper_bound(p1: &NaturalParams, p2: &NaturalParams, big_lambda: f64) -> f64 {
    (big_lambda / 2.0).sqrt() * p1.distance(p2)
}

/// Support of a one-dimensional family member, for quadrature.
fn support_1d(p: &NaturalParams) -> Result<(f64, f64)> {
    match p.kind() {
        FamilyKind::Gaussian(1) => {
            let mc = p.to_mean_cov()?;
            let s = mc.sigma[0].sqrt();
            Ok((mc.mu[0] - 40.0 * s, mc.mu[0] + 40.0 * s))
        }
        FamilyKind::ProductExponential(1) => Ok((0.0, 60.0 / -p.theta()[0])),
        _ => Err(Error::InvalidArgument("one-dimensional parameters required".into())),
    }
}

/// Mass of `[lo, hi]` (endpoints may be infinite) under a one-dimensional member.
pub fn interval_mass(p: &NaturalParams, lo: f64, hi: f64) -> Result<f64> {
    Ok(interval_moments(p, lo, hi)?.0)
}

/// Mass and conditional mean sufficient statistic on `[lo, hi]`, by quadrature.
pub fn interval_moments(p: &NaturalParams, lo: f64, hi: f64) -> Result<(f64, Vec<f64>)> {
    let (slo, shi) = support_1d(p)?;
    let a = lo.max(slo);
    let b = hi.min(shi);
    let m = p.kind().param_len();
    if !(a < b) {
        return Ok((0.0, vec![0.0; m]));
    }
    let ld = LogDensity::new(p);
    let kind = p.kind();
    let dens = |x: f64| ld.eval(&[x]).exp();
    let mass = quad::integrate(dens, a, b, 1e-13);
    let mut mean = Vec::with_capacity(m);
    for j in 0..m {
        let v = quad::integrate(
            |x| {
                let mut t = vec![0.0; m];
                expfam::suff_stats_into(kind, &[x], &mut t);
                t[j] * dens(x)
            },
            a,
            b,
            1e-12,
        );
        mean.push(if mass > 0.0 { v / mass } else { 0.0 });
    }
    Ok((mass, mean))
}

/// The constant `max{ΛR(R + r), 1 + R/r}`.
pub fn sandwich_constant(r: f64, big_r: f64, big_lambda: f64) -> f64 {
    (big_lambda * big_r * (big_r + r)).max(1.0 + big_r / r)
}

/// Check `e^{−C} E(T;θ₂)^C ≤ E(T;θ₁) ≤ e^{C} E(T;θ₂)^{1/C}` on each interval.
pub fn measure_sandwich_check_with_c(
    theta1: &NaturalParams,
    theta2: &NaturalParams,
    c: f64,
    intervals: &[(f64, f64)],
) -> Result<bool> {
    for &(lo, hi) in intervals {
        let m1 = interval_mass(theta1, lo, hi)?;
        let m2 = interval_mass(theta2, lo, hi)?;
        let lower = (-c).exp() * m2.powf(c);
        let upper = c.exp() * m2.powf(1.0 / c);
        if !(lower <= m1 && m1 <= upper) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn measure_sandwich_check(
    theta1: &NaturalParams,
    theta2: &NaturalParams,
    r: f64,
    big_r: f64,
    big_lambda: f64,
    intervals: &[(f64, f64)],
) -> Result<bool> {
    measure_sandwich_check_with_c(theta1, theta2, sandwich_constant(r, big_r, big_lambda), intervals)
}

/// Quantities of the gradient-norm bound at the true parameter, for one-dimensional
/// interval sets `S* = [a*, ∞)` and `S = [a, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientNormCheck {
    pub gradient_norm: f64,
    pub sym_diff_mass: f64,
    pub true_mass: f64,
    pub bound: f64,
}

impl GradientNormCheck {
    pub fn holds(&self) -> bool {
        self.gradient_norm <= self.bound
    }
}

pub fn gradient_norm_at_truth(
    theta_star: &NaturalParams,
    a_star: f64,
    a: f64,
    big_lambda: f64,
    eta: f64,
    alpha: f64,
) -> Result<GradientNormCheck> {
    let inter_lo = a_star.max(a);
    let (_, e_inter) = interval_moments(theta_star, inter_lo, f64::INFINITY)?;
    let (_, e_s) = interval_moments(theta_star, a, f64::INFINITY)?;
    let gradient_norm = linalg::dist2(&e_inter, &e_s);
    let sym_diff_mass = interval_mass(theta_star, a_star.min(a), a_star.max(a))?;
    let true_mass = interval_mass(theta_star, a_star, f64::INFINITY)?;
    let bound = 3.0 * big_lambda * (2.0 + 2.0 * big_lambda * eta * eta).exp() / (alpha * eta) * sym_diff_mass / true_mass;
    Ok(GradientNormCheck { gradient_norm, sym_diff_mass, true_mass, bound })
}

/// Smallest eigenvalue of the sufficient-statistic covariance.
pub fn min_stat_eigenvalue(p: &NaturalParams) -> f64 {
    let (vals, _) = linalg::sym_eigen(&expfam::suff_stat_cov(p));
    vals[0]
}

/// Largest eigenvalue of the sufficient-statistic covariance.
pub fn max_stat_eigenvalue(p: &NaturalParams) -> f64 {
    let (vals, _) = linalg::sym_eigen(&expfam::suff_stat_cov(p));
    vals[vals.len() - 1]
}

/// Mean vector as `DVector`, for small helpers in tests and the verify suite.
pub fn mean_of(p: &NaturalParams) -> Result<DVector<f64>> {
    Ok(p.to_mean_cov()?.mu_vec())
}
