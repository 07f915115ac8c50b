use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trunc_estim::{FamilyKind, NaturalParams, PipelineConfig, SetClass, SurvivalSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Exponential,
}

/// Ground-truth distribution used by `gen` and `bench`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Truth {
    /// Gaussian mean and row-major covariance.
    MeanCov { mu: Vec<f64>, sigma: Vec<f64> },
    /// Product-exponential rates.
    Rates { rates: Vec<f64> },
    /// Natural parameter vector of the configured family.
    Natural { theta: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub samples: String,
    pub truth: String,
    pub report: Option<String>,
}

impl Default for Outputs {
    fn default() -> Self {
        Self { samples: "samples.csv".into(), truth: "truth.json".into(), report: None }
    }
}

/// One experiment: what to sample, how to estimate, and where to write results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Truth>,
    #[serde(default = "full_set")]
    pub survival_set: SurvivalSet,
    pub n: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub set_class: SetClass,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub outputs: Outputs,
}

fn full_set() -> SurvivalSet {
    SurvivalSet::Full
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&s).with_context(|| format!("in {}", path.display()))
    }

    /// Canonical text form: pretty JSON with a trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn family_kind(&self) -> FamilyKind {
        match self.family {
            Family::Gaussian => FamilyKind::Gaussian(self.d),
            Family::Exponential => FamilyKind::ProductExponential(self.d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            bail!("d must be at least 1");
        }
        if self.n == 0 {
            bail!("n must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            bail!("alpha must lie in (0, 1], got {}", self.alpha);
        }
        if !(self.epsilon > 0.0) {
            bail!("epsilon must be positive, got {}", self.epsilon);
        }
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        if let Some(sd) = self.survival_set.dim() {
            if sd != self.d {
                bail!("survival set has dimension {sd}, config has d = {}", self.d);
            }
        }
        if self.truth.is_some() {
            self.true_params()?;
        }
        Ok(())
    }

    /// Natural parameters of the configured ground truth.
    pub fn true_params(&self) -> Result<NaturalParams> {
        let truth = self.truth.as_ref().context("config has no \"truth\" section")?;
        let p = match (self.family, truth) {
            (Family::Gaussian, Truth::MeanCov { mu, sigma }) => NaturalParams::gaussian(mu, sigma)?,
            (Family::Exponential, Truth::Rates { rates }) => NaturalParams::exponential_rates(rates)?,
            (_, Truth::Natural { theta }) => NaturalParams::new(self.family_kind(), theta.clone())?,
            (f, t) => bail!("truth {t:?} does not fit family {f:?}"),
        };
        if p.dim() != self.d {
            bail!("truth has dimension {}, config has d = {}", p.dim(), self.d);
        }
        Ok(p)
    }
}
