//! Survival sets, rejection sampling and Monte-Carlo mass estimation.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SampleMatrix;
use crate::error::{check_dim, Error, Result};
use crate::expfam::{NaturalParams, Sampler};
use crate::linalg;
use crate::poly::Polynomial;
use crate::rng::{batches, child_seed, rng_from_seed, Rng};

type Membership = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Opaque membership predicate.
#[derive(Clone)]
pub struct ExternalOracle {
    d: usize,
    description: String,
    f: Membership,
}

impl ExternalOracle {
    pub fn new(d: usize, description: impl Into<String>, f: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        Self { d, description: description.into(), f: Arc::new(f) }
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

impl fmt::Debug for ExternalOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalOracle").field("d", &self.d).field("description", &self.description).finish()
    }
}

impl PartialEq for ExternalOracle {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.f, &other.f)
    }
}

/// A set `S ⊆ ℝ^d` known only through membership.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SetRepr", into = "SetRepr")]
pub enum SurvivalSet {
    Full,
    /// `{x : wᵀx ≥ tau}` with `‖w‖ = 1`.
    Halfspace { w: Vec<f64>, tau: f64 },
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    /// `{x : p(x) ≥ threshold}`.
    PolyThreshold { poly: Polynomial, threshold: f64 },
    External(ExternalOracle),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SetRepr {
    Full,
    Halfspace { w: Vec<f64>, tau: f64 },
    #[serde(rename = "box")]
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    #[serde(rename = "poly")]
    PolyThreshold { d: usize, degree: usize, coeffs: Vec<f64>, threshold: f64 },
    External {
        #[serde(default)]
        d: usize,
        #[serde(default)]
        description: String,
    },
}

impl TryFrom<SetRepr> for SurvivalSet {
    type Error = Error;
    fn try_from(r: SetRepr) -> Result<Self> {
        match r {
            SetRepr::Full => Ok(SurvivalSet::Full),
            SetRepr::Halfspace { w, tau } => SurvivalSet::halfspace(w, tau),
            SetRepr::AxisBox { lo, hi } => SurvivalSet::axis_box(lo, hi),
            SetRepr::PolyThreshold { d, degree, coeffs, threshold } => {
                Ok(SurvivalSet::PolyThreshold { poly: Polynomial::new(d, degree, coeffs)?, threshold })
            }
            SetRepr::External { description, .. } => Err(Error::Unsupported(format!(
                "external membership oracle '{description}' cannot be reconstructed from JSON"
            ))),
        }
    }
}

impl From<SurvivalSet> for SetRepr {
    fn from(s: SurvivalSet) -> Self {
        match s {
            SurvivalSet::Full => SetRepr::Full,
            SurvivalSet::Halfspace { w, tau } => SetRepr::Halfspace { w, tau },
            SurvivalSet::AxisBox { lo, hi } => SetRepr::AxisBox { lo, hi },
            SurvivalSet::PolyThreshold { poly, threshold } => SetRepr::PolyThreshold {
                d: poly.dim(),
                degree: poly.degree(),
                coeffs: poly.coeffs().to_vec(),
                threshold,
            },
            SurvivalSet::External(o) => SetRepr::External { d: o.d, description: o.description },
        }
    }
}

impl SurvivalSet {
    /// Halfspace with a unit normal; errors if `‖w‖` differs from 1 by more than `1e-10`.
    pub fn halfspace(w: Vec<f64>, tau: f64) -> Result<Self> {
        let n = linalg::norm2(&w);
        if w.is_empty() || (n - 1.0).abs() > 1e-10 || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("halfspace normal must be a unit vector (norm {n})")));
        }
        Ok(SurvivalSet::Halfspace { w, tau })
    }

    /// Halfspace `{wᵀx ≥ tau}` for any nonzero `w`, rescaled to a unit normal.
    pub fn halfspace_normalized(w: &[f64], tau: f64) -> Result<Self> {
        let n = linalg::norm2(w);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument("halfspace normal is zero".into()));
        }
        SurvivalSet::halfspace(w.iter().map(|v| v / n).collect(), tau / n)
    }

    pub fn axis_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("box bounds must satisfy lo <= hi".into()));
        }
        Ok(SurvivalSet::AxisBox { lo, hi })
    }

    pub fn poly_threshold(poly: Polynomial, threshold: f64) -> Self {
        SurvivalSet::PolyThreshold { poly, threshold }
    }

    pub fn external(d: usize, description: impl Into<String>, f: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        SurvivalSet::External(ExternalOracle::new(d, description, f))
    }

    /// Ambient dimension, `None` for [`SurvivalSet::Full`].
    pub fn dim(&self) -> Option<usize> {
        match self {
            SurvivalSet::Full => None,
            SurvivalSet::Halfspace { w, .. } => Some(w.len()),
            SurvivalSet::AxisBox { lo, .. } => Some(lo.len()),
            SurvivalSet::PolyThreshold { poly, .. } => Some(poly.dim()),
            SurvivalSet::External(o) => Some(o.d),
        }
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        if let Some(d) = self.dim() {
            check_dim(d, x.len())?;
        }
        Ok(self.contains_unchecked(x))
    }

    /// Membership without the dimension check.
    pub fn contains_unchecked(&self, x: &[f64]) -> bool {
        match self {
            SurvivalSet::Full => true,
            SurvivalSet::Halfspace { w, tau } => linalg::dot(w, x) >= *tau,
            SurvivalSet::AxisBox { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *l <= *v && *v <= *h),
            SurvivalSet::PolyThreshold { poly, threshold } => poly.eval(x) >= *threshold,
            SurvivalSet::External(o) => (o.f)(x),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, SurvivalSet::Full)
    }

    pub fn describe(&self) -> String {
        match self {
            SurvivalSet::Full => "full space".into(),
            SurvivalSet::Halfspace { w, tau } => format!("halfspace w={w:?} tau={tau}"),
            SurvivalSet::AxisBox { lo, hi } => format!("box lo={lo:?} hi={hi:?}"),
            SurvivalSet::PolyThreshold { poly, threshold } => {
                format!("polynomial threshold degree {} at {threshold}", poly.degree())
            }
            SurvivalSet::External(o) => format!("external oracle: {}", o.description),
        }
    }
}

/// Monte-Carlo proportion with a normal-approximation 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub point_estimate: f64,
    pub n: usize,
    pub half_width: f64,
}

impl MassEstimate {
    pub fn from_counts(hits: usize, n: usize) -> Self {
        let p = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        Self { point_estimate: p, n, half_width: 1.96 * (p * (1.0 - p) / n.max(1) as f64).sqrt() }
    }

    pub fn exact(p: f64, n: usize) -> Self {
        Self { point_estimate: p, n, half_width: 0.0 }
    }

    pub fn lower(&self) -> f64 {
        (self.point_estimate - self.half_width).max(0.0)
    }

    pub fn upper(&self) -> f64 {
        (self.point_estimate + self.half_width).min(1.0)
    }

    /// True if `value` lies within `k` half-widths (plus `slack`) of the estimate.
    pub fn consistent_with(&self, value: f64, k: f64, slack: f64) -> bool {
        (self.point_estimate - value).abs() <= k * self.half_width + slack
    }
}

/// Default rejection budget per sample for a declared mass lower bound `alpha`.
pub fn default_max_attempts(alpha: f64) -> usize {
    (50.0 / alpha).ceil().max(1.0) as usize
}

/// Draw one point of `E(θ, S)` into `out`; returns the number of proposals used.
pub fn draw_truncated(sampler: &Sampler, set: &SurvivalSet, rng: &mut Rng, budget: usize, out: &mut [f64]) -> Result<usize> {
    for k in 1..=budget {
        sampler.draw_into(rng, out);
        if set.contains_unchecked(out) {
            return Ok(k);
        }
    }
    Err(Error::RejectionBudgetExceeded { attempts: budget })
}

/// Output of [`sample_truncated`].
#[derive(Clone, Debug)]
pub struct TruncatedDraws {
    pub samples: SampleMatrix,
    pub proposals: usize,
}

impl TruncatedDraws {
    pub fn acceptance_rate(&self) -> f64 {
        self.samples.len() as f64 / self.proposals.max(1) as f64
    }
}

/// `n` rejection-sampled draws from `E(θ, S)`.
pub fn sample_truncated(
    p: &NaturalParams,
    set: &SurvivalSet,
    n: usize,
    seed: u64,
    max_attempts_per_sample: usize,
) -> Result<TruncatedDraws> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if max_attempts_per_sample == 0 {
        return Err(Error::InvalidArgument("max_attempts_per_sample must be at least 1".into()));
    }
    if let Some(d) = set.dim() {
        check_dim(p.dim(), d)?;
    }
    let sampler = p.sampler()?;
    let d = p.dim();
    let parts: Vec<(Vec<f64>, usize)> = batches(n)
        .into_par_iter()
        .map(|(b, len)| -> Result<(Vec<f64>, usize)> {
            let mut rng = rng_from_seed(child_seed(seed, b));
            let mut buf = vec![0.0; len * d];
            let mut used = 0;
            for row in buf.chunks_exact_mut(d) {
                used += draw_truncated(&sampler, set, &mut rng, max_attempts_per_sample, row)?;
                debug_assert!(set.contains_unchecked(row));
            }
            Ok((buf, used))
        })
        .collect::<Result<_>>()?;
    let proposals = parts.iter().map(|p| p.1).sum();
    let flat: Vec<f64> = parts.into_iter().flat_map(|p| p.0).collect();
    Ok(TruncatedDraws { samples: SampleMatrix::from_flat(d, flat)?, proposals })
}

fn count_hits(p: &NaturalParams, n: usize, seed: u64, hit: impl Fn(&[f64]) -> bool + Sync) -> Result<usize> {
    let sampler = p.sampler()?;
    let d = p.dim();
    Ok(batches(n)
        .into_par_iter()
        .map(|(b, len)| {
            let mut rng = rng_from_seed(child_seed(seed, b));
            let mut x = vec![0.0; d];
            let mut hits = 0;
            for _ in 0..len {
                sampler.draw_into(&mut rng, &mut x);
                if hit(&x) {
                    hits += 1;
                }
            }
            hits
        })
        .sum())
}

/// Fraction of `n` untruncated draws that land in `S`.
pub fn mass_estimate(p: &NaturalParams, set: &SurvivalSet, n: usize, seed: u64) -> Result<MassEstimate> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!("mass estimate needs at least 100 draws, got {n}")));
    }
    if set.is_full() {
        return Ok(MassEstimate::exact(1.0, n));
    }
    if let Some(d) = set.dim() {
        check_dim(p.dim(), d)?;
    }
    Ok(MassEstimate::from_counts(count_hits(p, n, seed, |x| set.contains_unchecked(x))?, n))
}

/// Monte-Carlo mass of the symmetric difference `S1 △ S2` under `E(θ)`.
pub fn sym_diff_mass(p: &NaturalParams, s1: &SurvivalSet, s2: &SurvivalSet, n: usize, seed: u64) -> Result<MassEstimate> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!("mass estimate needs at least 100 draws, got {n}")));
    }
    for s in [s1, s2] {
        if let Some(d) = s.dim() {
            check_dim(p.dim(), d)?;
        }
    }
    let hits = count_hits(p, n, seed, |x| s1.contains_unchecked(x) != s2.contains_unchecked(x))?;
    Ok(MassEstimate::from_counts(hits, n))
}
