//! Named numerical checks of the analytic identities and bounds used by the estimators.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::expfam::{self, FamilyKind, NaturalParams};
use crate::metrics::{self, normal_pdf, normal_sf};
use crate::preprocess::{DomainConstants, ParameterDomain};
use crate::quad;
use crate::rng::{rng_from_seed, Rng};
use crate::setlearn::HistogramModel;

/// Outcome of one check. `worst_margin ≥ 0` exactly when the check passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub worst_margin: f64,
}

type CheckFn = fn() -> Result<f64>;

const CHECKS: &[(&str, &str, CheckFn)] = &[
    ("metrics", "hazard_lower_bounds", hazard_lower_bounds),
    ("metrics", "hazard_lb1_above_identity", hazard_lb1_above_identity),
    ("metrics", "trunc_moments_vs_quadrature", trunc_moments_vs_quadrature),
    ("metrics", "c3_at_zero_vs_quadrature", c3_at_zero_vs_quadrature),
    ("metrics", "third_moment_lower_bound", third_moment_lower_bound_grid),
    ("metrics", "chi2_renyi_identity", chi2_renyi_identity),
    ("metrics", "gradient_norm_at_truth", gradient_norm_at_truth),
    ("moments", "log_partition_gradient", log_partition_gradient),
    ("domain", "projection_idempotence", projection_idempotence),
    ("domain", "projection_grid_oracle", projection_grid_oracle),
    ("domain", "measure_sandwich", measure_sandwich),
    ("domain", "gaussian_bridge_bound", gaussian_bridge_bound),
    ("domain", "exponential_bridge_finite", exponential_bridge_finite),
    ("domain", "tv_upper_bound", tv_upper_bound),
    ("pu", "noise_set_mass_bound", noise_set_mass_bound),
    ("pu", "bayes_set_structure", bayes_set_structure),
];

/// Names of all checks as `suite/name`.
pub fn check_names() -> Vec<String> {
    CHECKS.iter().map(|(s, n, _)| format!("{s}/{n}")).collect()
}

/// Run every check whose suite or name equals `filter` (all checks when `None`).
pub fn run_suite(filter: Option<&str>) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .filter(|(s, n, _)| filter.is_none_or(|f| f == *s || f == *n))
        .map(|(s, n, f)| {
            let margin = f().unwrap_or(f64::NEG_INFINITY);
            CheckResult { suite: s.to_string(), name: n.to_string(), passed: margin >= 0.0, worst_margin: margin }
        })
        .collect()
}

/// CSV with columns `check,status,worst_margin`.
pub fn write_csv<W: Write>(results: &[CheckResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["check", "status", "worst_margin"])?;
    for r in results {
        let status = if r.passed { "pass" } else { "fail" };
        wr.write_record([format!("{}/{}", r.suite, r.name), status.to_string(), format!("{:e}", r.worst_margin)])?;
    }
    wr.flush()?;
    Ok(())
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn hazard_lower_bounds() -> Result<f64> {
    Ok(grid(0.005, 10.0, 2000)
        .map(|t| {
            let h = metrics::hazard(t);
            (h - metrics::hazard_lb1(t)).min(h - metrics::hazard_lb2(t)) + 1e-10
        })
        .fold(f64::INFINITY, f64::min))
}

fn hazard_lb1_above_identity() -> Result<f64> {
    Ok(grid(0.0, 10.0, 2000).map(|t| metrics::hazard_lb1(t) - t).fold(f64::INFINITY, f64::min))
}

fn trunc_normal_quadrature(tau: f64, k: i32) -> f64 {
    quad::integrate(|z| z.powi(k) * normal_pdf(z), tau, tau + 40.0, 1e-14) / normal_sf(tau)
}

fn trunc_moments_vs_quadrature() -> Result<f64> {
    let mut worst = f64::INFINITY;
    for tau in grid(-5.0, 5.0, 41) {
        let m = metrics::trunc_normal_moments(tau);
        let q = [trunc_normal_quadrature(tau, 1), trunc_normal_quadrature(tau, 2), trunc_normal_quadrature(tau, 3)];
        let c3 = quad::integrate(|z| (z - q[0]).powi(3) * normal_pdf(z), tau, tau + 40.0, 1e-14) / normal_sf(tau);
        for (a, b) in [(m.m1, q[0]), (m.m2, q[1]), (m.m3, q[2]), (m.c3, c3)] {
            worst = worst.min(1e-6 - (a - b).abs());
        }
    }
    Ok(worst)
}

fn c3_at_zero_vs_quadrature() -> Result<f64> {
    let h = metrics::hazard(0.0);
    let q = quad::integrate(|z| (z - h).powi(3) * 2.0 * normal_pdf(z), 0.0, 40.0, 1e-14);
    Ok(1e-6 - (metrics::trunc_normal_moments(0.0).c3 - q).abs())
}

fn third_moment_lower_bound_grid() -> Result<f64> {
    let mut worst = f64::INFINITY;
    for tau in grid(-10.0, 10.0, 2000) {
        let c3 = metrics::trunc_normal_moments(tau).c3;
        let lb = metrics::third_moment_lower_bound(tau);
        // Relative margin so the far tails, where both sides are tiny, still count.
        worst = worst.min((c3 - lb) / lb).min(lb);
    }
    Ok(worst)
}

fn chi2_renyi_identity() -> Result<f64> {
    let mut rng = rng_from_seed(31);
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let p1 = NaturalParams::gaussian(&[rng.random_range(-1.0..1.0)], &[rng.random_range(0.5..2.0)])?;
        let p2 = NaturalParams::gaussian(&[rng.random_range(-1.0..1.0)], &[rng.random_range(0.5..2.0)])?;
        let chi2 = metrics::gaussian_chi2(&p1, &p2)?;
        let r2 = metrics::gaussian_renyi(2.0, &p1, &p2)?;
        if chi2.is_infinite() || r2.is_infinite() {
            worst = worst.min(if chi2.is_infinite() == r2.is_infinite() { 0.0 } else { -1.0 });
        } else {
            worst = worst.min(1e-10 - (r2.exp() - 1.0 - chi2).abs() / (1.0 + chi2));
        }
    }
    Ok(worst)
}

fn gradient_norm_at_truth() -> Result<f64> {
    let alpha = 0.5;
    let dom = ParameterDomain::gaussian_default(1, alpha, &Default::default())?;
    let c = dom.constants;
    let truth = NaturalParams::standard_normal(1);
    let mut worst = f64::INFINITY;
    for delta in [0.01, 0.05, 0.1] {
        for a in [delta, -delta] {
            let chk = metrics::gradient_norm_at_truth(&truth, 0.0, a, c.big_lambda, c.eta, alpha)?;
            worst = worst.min((chk.bound - chk.gradient_norm) / chk.bound);
        }
    }
    Ok(worst)
}

fn log_partition_gradient() -> Result<f64> {
    let params = [
        NaturalParams::gaussian(&[0.5], &[2.0])?,
        NaturalParams::gaussian(&[1.0, -1.0], &[2.0, 0.5, 0.5, 1.0])?,
        NaturalParams::gaussian(&[0.2, 0.0, -0.3], &[1.0, 0.2, 0.0, 0.2, 1.5, 0.1, 0.0, 0.1, 0.8])?,
        NaturalParams::exponential(&[-1.0, -0.5, -2.0])?,
    ];
    let mut worst = f64::INFINITY;
    for p in &params {
        let fd = finite_difference_log_partition(p, 1e-5)?;
        let exact = expfam::mean_suff_stats(p).v;
        let err: f64 = fd.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.min(1e-4 - err / norm);
    }
    Ok(worst)
}

/// Central differences of the log-partition, moving symmetric off-diagonal pairs together.
pub fn finite_difference_log_partition(p: &NaturalParams, h: f64) -> Result<Vec<f64>> {
    let theta = p.theta();
    let mut g = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let mut idx = vec![i];
        let mut scale = 1.0;
        if let FamilyKind::Gaussian(d) = p.kind() {
            if i >= d && (i - d) / d != (i - d) % d {
                idx.push(d + ((i - d) % d) * d + (i - d) / d);
                scale = 0.5;
            }
        }
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        for &j in &idx {
            plus[j] += h;
            minus[j] -= h;
        }
        let a = expfam::log_partition(&p.with_theta(plus)?);
        let b = expfam::log_partition(&p.with_theta(minus)?);
        g[i] = (a - b) / (2.0 * h) * scale;
    }
    Ok(g)
}

/// A uniformly random point of the domain, by rejection from a bounding box.
pub fn random_domain_point(dom: &ParameterDomain, rng: &mut Rng) -> Vec<f64> {
    let m = dom.family().param_len();
    let d = dom.d;
    loop {
        let theta: Vec<f64> = match dom.kind {
            crate::preprocess::DomainKind::GaussianTheta { b } => {
                let mut t = vec![0.0; m];
                for v in t.iter_mut().take(d) {
                    *v = rng.random_range(-b..b);
                }
                for i in 0..d {
                    for j in i..d {
                        let v = if i == j { rng.random_range(1.0 / (2.0 * b)..0.5 + b / 2.0) } else { rng.random_range(-b / 2.0..b / 2.0) };
                        t[d + i * d + j] = v;
                        t[d + j * d + i] = v;
                    }
                }
                t
            }
            crate::preprocess::DomainKind::ExpTheta { r, .. } => (0..m).map(|_| rng.random_range(-1.0 / r..-r)).collect(),
        };
        if dom.contains_vec(&theta, 0.0) {
            return theta;
        }
    }
}

fn test_gaussian_domain(d: usize) -> Result<ParameterDomain> {
    ParameterDomain::gaussian(d, 4.0, DomainConstants { lambda: 0.05, big_lambda: 20.0, eta: 0.1, alpha: 0.5 })
}

fn test_exp_domain(d: usize) -> Result<ParameterDomain> {
    ParameterDomain::exponential(d, 0.25, 5.0, DomainConstants { lambda: 0.0625, big_lambda: 16.0, eta: 0.025, alpha: 0.5 })
}

fn projection_idempotence() -> Result<f64> {
    let mut rng = rng_from_seed(41);
    let mut worst = f64::INFINITY;
    for dom in [test_gaussian_domain(2)?, test_exp_domain(3)?] {
        let m = dom.family().param_len();
        for _ in 0..50 {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(-8.0..8.0)).collect();
            let once = dom.project_vec(&raw)?;
            let twice = dom.project_vec(&once)?;
            let gap: f64 = once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.min(1e-6 - gap);
            if !dom.contains_vec(&once, 1e-7) {
                worst = worst.min(-1.0);
            }
        }
    }
    Ok(worst)
}

fn projection_grid_oracle() -> Result<f64> {
    let dom = test_exp_domain(1)?;
    let mut worst = f64::INFINITY;
    let pts: Vec<f64> = grid(-4.0, 0.0, 400_001).filter(|t| dom.contains_vec(&[*t], 0.0)).collect();
    for target in [-6.0, -3.5, -1.0, -0.3, -0.1, 2.0] {
        let got = dom.project_vec(&[target])?[0];
        let best = pts.iter().map(|p| (p - target).abs()).fold(f64::INFINITY, f64::min);
        worst = worst.min(1e-4 - ((got - target).abs() - best));
    }
    let gdom = test_gaussian_domain(1)?;
    let g2: Vec<[f64; 2]> = grid(-5.0, 5.0, 401)
        .flat_map(|a| grid(0.0, 3.0, 301).map(move |b| [a, b]))
        .filter(|t| gdom.contains_vec(t, 0.0))
        .collect();
    for target in [[6.0, 0.5], [1.0, -1.0], [-7.0, 4.0], [0.3, 0.7]] {
        let got = gdom.project_vec(&target)?;
        let dist = |p: &[f64]| ((p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2)).sqrt();
        let best = g2.iter().map(|p| dist(p)).fold(f64::INFINITY, f64::min);
        worst = worst.min(1e-4 - (dist(&got) - best));
    }
    Ok(worst)
}

fn measure_sandwich() -> Result<f64> {
    let dom = ParameterDomain::gaussian_default(1, 0.5, &Default::default())?;
    let c = dom.constants;
    let a = NaturalParams::standard_normal(1);
    let b = NaturalParams::gaussian(&[1.0], &[1.0])?;
    let ts = [(-3.0, -2.0), (-1.0, 0.0), (0.0, 1.0), (2.0, 3.0)];
    let holds = metrics::measure_sandwich_check(&a, &b, c.eta, 1.0, c.big_lambda, &ts)?;
    let tight_fails = !metrics::measure_sandwich_check_with_c(&a, &b, 1.0001, &ts)?;
    Ok(if holds && tight_fails { 0.0 } else { -1.0 })
}

fn gaussian_bridge_bound() -> Result<f64> {
    let dom = test_gaussian_domain(2)?;
    let mut rng = rng_from_seed(53);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let p1 = NaturalParams::new(FamilyKind::Gaussian(2), random_domain_point(&dom, &mut rng))?;
        let p2 = NaturalParams::new(FamilyKind::Gaussian(2), random_domain_point(&dom, &mut rng))?;
        let br = metrics::bridge_gaussian(&p1, &p2)?;
        let bound = metrics::bridge_gaussian_bound(&p1, &p2)?;
        for p in [&p1, &p2] {
            let r = metrics::gaussian_renyi(3.0, p, &br)?;
            worst = worst.min(if r.is_finite() { (bound - r) / bound.max(1e-12) } else { -1.0 });
        }
    }
    Ok(worst)
}

fn exponential_bridge_finite() -> Result<f64> {
    let dom = test_exp_domain(2)?;
    let mut rng = rng_from_seed(59);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let p1 = NaturalParams::exponential(&random_domain_point(&dom, &mut rng))?;
        let p2 = NaturalParams::exponential(&random_domain_point(&dom, &mut rng))?;
        let br = metrics::bridge_exponential(&p1, &p2)?;
        for p in [&p1, &p2] {
            let r = metrics::exp_renyi3(p, &br)?;
            worst = worst.min(if r.is_finite() && r >= -1e-12 { 0.0 } else { -1.0 });
        }
    }
    Ok(worst)
}

fn tv_upper_bound() -> Result<f64> {
    let mut rng = rng_from_seed(61);
    let mut worst = f64::INFINITY;
    for d in [1, 2] {
        let dom = test_gaussian_domain(d)?;
        let lambda = dom.constants.big_lambda;
        for i in 0..50 {
            let p1 = NaturalParams::new(FamilyKind::Gaussian(d), random_domain_point(&dom, &mut rng))?;
            let p2 = NaturalParams::new(FamilyKind::Gaussian(d), random_domain_point(&dom, &mut rng))?;
            let tv = metrics::gaussian_tv(&p1, &p2, 20_000, 100 + i)?.point_estimate;
            worst = worst.min(metrics::tv_upper_bound(&p1, &p2, lambda) - tv);
        }
    }
    Ok(worst)
}

/// Twenty-bin model: reference `N(0,1)` on `[−4, 4]`, positives on the right half,
/// unlabeled `N(0, 9)`, weight `rho`.
pub fn histogram_example(rho: f64) -> Result<HistogramModel> {
    let edges: Vec<f64> = grid(-4.0, 4.0, 21).collect();
    let bin = |s: f64| -> Vec<f64> { edges.windows(2).map(|w| normal_sf(w[0] / s) - normal_sf(w[1] / s)).collect() };
    let positive = edges.windows(2).map(|w| w[0] >= 0.0).collect();
    HistogramModel::new(bin(1.0), bin(3.0), positive, rho)
}

fn noise_set_mass_bound() -> Result<f64> {
    let mut worst = f64::INFINITY;
    for rho in [0.05, 0.1, 0.3] {
        let m = histogram_example(rho)?;
        for z in [1.0 / 3.0, 0.5] {
            let mass = m.q_mass(&m.b_z(z));
            worst = worst.min(rho / (1.0 - rho) * (1.0 - z) / z - mass);
        }
    }
    Ok(worst)
}

fn bayes_set_structure() -> Result<f64> {
    let mut worst = f64::INFINITY;
    for rho in [0.05, 0.1, 0.3] {
        let m = histogram_example(rho)?;
        let brute = m.bayes_optimal_bruteforce()?;
        let b = m.b_z(0.5);
        let rule: Vec<bool> = (0..b.len()).map(|i| m.positive[i] && !b[i]).collect();
        worst = worst.min(if brute == rule { 0.0 } else { -1.0 });
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let results = run_suite(None);
        assert_eq!(results.len(), CHECKS.len());
        for r in &results {
            assert!(r.passed, "{r:?}");
        }
        let mut buf = Vec::new();
        write_csv(&results, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("check,status,worst_margin\n"));
    }

    #[test]
    fn filter_by_suite_and_name() {
        assert_eq!(run_suite(Some("pu")).len(), 2);
        assert_eq!(run_suite(Some("measure_sandwich")).len(), 1);
        assert!(run_suite(Some("nope")).is_empty());
    }

    #[test]
    fn histogram_bound_is_not_vacuous() {
        let m = histogram_example(0.1).unwrap();
        assert!(m.b_z(0.5).iter().any(|b| *b));
    }
}
