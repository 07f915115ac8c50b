use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use trunc_estim::expfam::{self, MeanCov};
use trunc_estim::pipeline::{self, EstimationReport, RegressionReport};
use trunc_estim::rng::{child_seed, rng_from_seed};
use trunc_estim::truncation::{self, SurvivalSet};
use trunc_estim::verify::{self, CheckResult};
use trunc_estim::{NaturalParams, SampleMatrix};

use crate::config::{ExperimentConfig, Family};

/// Fraction of the data held out to score repeats.
pub const HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Serialize)]
pub struct GroundTruth {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub params: NaturalParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_cov: Option<MeanCov>,
    pub survival_set: SurvivalSet,
    pub samples: usize,
    pub proposals: usize,
    pub acceptance_rate: f64,
}

pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<(SampleMatrix, GroundTruth)> {
    let params = cfg.true_params()?;
    let draws = truncation::sample_truncated(
        &params,
        &cfg.survival_set,
        cfg.n,
        seed,
        truncation::default_max_attempts(cfg.alpha),
    )?;
    let rate = draws.acceptance_rate();
    info!("acceptance rate {rate:.4} ({} of {} proposals)", draws.samples.len(), draws.proposals);
    let mean_cov = match cfg.family {
        Family::Gaussian => Some(params.to_mean_cov()?),
        Family::Exponential => None,
    };
    let truth = GroundTruth {
        config: cfg.clone(),
        seed,
        params,
        mean_cov,
        survival_set: cfg.survival_set.clone(),
        samples: draws.samples.len(),
        proposals: draws.proposals,
        acceptance_rate: rate,
    };
    Ok((draws.samples, truth))
}

pub fn gen(cfg: &ExperimentConfig, out_dir: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let (samples, truth) = generate(cfg, seed)?;
    let samples_path = out_dir.join(&cfg.outputs.samples);
    samples.write_csv_path(&samples_path, true)?;
    write_json(&out_dir.join(&cfg.outputs.truth), &truth)?;
    info!("wrote {} samples to {}", samples.len(), samples_path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Candidate<T> {
    pub repeat: usize,
    pub seed: u64,
    /// Mean truncated log-density of the held-out points inside the learned set.
    pub holdout_log_density: Option<f64>,
    /// Held-out points that fall outside the learned set.
    pub holdout_outside: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RunReport<T> {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub repeats: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    /// Index into `candidates` of the repeat with the median held-out score.
    pub selected: usize,
    pub estimate: T,
    pub candidates: Vec<Candidate<T>>,
}

/// Split off a seeded random holdout when there is more than one repeat to choose from.
fn train_holdout(data: &SampleMatrix, repeats: usize, seed: u64) -> (SampleMatrix, SampleMatrix) {
    if repeats <= 1 {
        return (data.clone(), SampleMatrix::new(data.dim()));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_from_seed(child_seed(seed, u64::MAX)));
    let k = ((data.len() as f64 * HOLDOUT_FRACTION).round() as usize).max(1);
    let (hold, train) = idx.split_at(k);
    (data.select(train), data.select(hold))
}

/// Mean of `ln p(x) - ln p(S)` over held-out points in the learned set `S`.
fn holdout_score(rep: &EstimationReport, holdout: &SampleMatrix) -> Result<(Option<f64>, usize)> {
    let ld = expfam::LogDensity::new(&rep.theta_hat);
    let mass = rep.diagnostics.learned_set_mass.point_estimate;
    let (mut sum, mut inside) = (0.0, 0usize);
    for x in holdout.rows() {
        if rep.learned_set.contains(x)? {
            sum += ld.eval(x);
            inside += 1;
        }
    }
    let outside = holdout.len() - inside;
    if inside == 0 || !(mass > 0.0) {
        return Ok((None, outside));
    }
    Ok((Some(sum / inside as f64 - mass.ln()), outside))
}

fn run_repeats<T, F, J>(cfg: &ExperimentConfig, data: &SampleMatrix, seed: u64, repeats: usize, fit: F, joint: J) -> Result<RunReport<T>>
where
    T: Send + Clone,
    F: Fn(&SampleMatrix, u64) -> trunc_estim::Result<T> + Sync,
    J: Fn(&T) -> &EstimationReport + Sync,
{
    let (train, holdout) = train_holdout(data, repeats, seed);
    let mut candidates: Vec<Candidate<T>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let s = if repeats == 1 { seed } else { child_seed(seed, r as u64) };
            let mut c = Candidate { repeat: r, seed: s, holdout_log_density: None, holdout_outside: 0, result: None, error: None };
            match fit(&train, s) {
                Ok(res) => {
                    match holdout_score(joint(&res), &holdout) {
                        Ok((score, outside)) => {
                            c.holdout_log_density = score;
                            c.holdout_outside = outside;
                        }
                        Err(e) => c.error = Some(e.to_string()),
                    }
                    c.result = Some(res);
                }
                Err(e) => c.error = Some(e.to_string()),
            }
            c
        })
        .collect();
    candidates.sort_by_key(|c| c.repeat);
    for c in &candidates {
        if let Some(e) = &c.error {
            warn!("repeat {} failed: {e}", c.repeat);
        }
    }
    let mut ok: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].result.is_some()).collect();
    if ok.is_empty() {
        let first = candidates.iter().find_map(|c| c.error.clone()).unwrap_or_default();
        bail!("all {repeats} repeats failed; first error: {first}");
    }
    if repeats > 1 {
        ok.retain(|&i| candidates[i].holdout_log_density.is_some());
        if ok.is_empty() {
            bail!("no repeat produced a finite held-out score");
        }
        ok.sort_by(|&a, &b| candidates[a].holdout_log_density.partial_cmp(&candidates[b].holdout_log_density).unwrap());
    }
    let selected = ok[(ok.len() - 1) / 2];
    info!("selected repeat {selected} of {repeats}");
    Ok(RunReport {
        config: cfg.clone(),
        seed,
        repeats,
        n_train: train.len(),
        n_holdout: holdout.len(),
        selected,
        estimate: candidates[selected].result.clone().expect("selected repeat succeeded"),
        candidates,
    })
}

pub fn estimate(cfg: &ExperimentConfig, data: &SampleMatrix, seed: u64, repeats: usize) -> Result<RunReport<EstimationReport>> {
    if data.dim() != cfg.d {
        bail!("data has {} columns, config has d = {}", data.dim(), cfg.d);
    }
    let family = cfg.family_kind();
    run_repeats(
        cfg,
        data,
        seed,
        repeats,
        |x, s| pipeline::estimate_unknown_truncation(x, family, cfg.set_class, cfg.alpha, cfg.epsilon, &cfg.pipeline, s),
        |r| r,
    )
}

pub fn regress(cfg: &ExperimentConfig, data: &SampleMatrix, seed: u64, repeats: usize) -> Result<RunReport<RegressionReport>> {
    if cfg.family != Family::Gaussian {
        bail!("regression needs the gaussian family");
    }
    if data.dim() != cfg.d {
        bail!("data has {} columns, config has d = {} (features plus response)", data.dim(), cfg.d);
    }
    run_repeats(
        cfg,
        data,
        seed,
        repeats,
        |x, s| pipeline::truncated_linear_regression(x, cfg.set_class, cfg.alpha, cfg.epsilon, &cfg.pipeline, s),
        |r| &r.joint,
    )
}

/// Run the named checks and write the CSV. Returns whether all passed.
pub fn verify(suite: Option<&str>, out: Option<&Path>) -> Result<bool> {
    let results: Vec<CheckResult> = verify::run_suite(suite);
    if results.is_empty() {
        bail!("no check matches '{}'; known checks: {}", suite.unwrap_or(""), verify::check_names().join(", "));
    }
    match out {
        Some(p) => verify::write_csv(&results, fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?,
        None => verify::write_csv(&results, std::io::stdout().lock())?,
    }
    let failed: Vec<&CheckResult> = results.iter().filter(|r| !r.passed).collect();
    for r in &failed {
        warn!("check {}/{} failed (worst margin {:e})", r.suite, r.name, r.worst_margin);
    }
    info!("{} of {} checks passed", results.len() - failed.len(), results.len());
    Ok(failed.is_empty())
}

/// Time sampling and estimation for each repeat; CSV with `stage,repeat,seconds,samples`.
pub fn bench<W: Write>(cfg: &ExperimentConfig, seed: u64, repeats: usize, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["stage", "repeat", "seconds", "samples"])?;
    for r in 0..repeats {
        let s = child_seed(seed, r as u64);
        let t = Instant::now();
        let (samples, _) = generate(cfg, s)?;
        let gen_secs = t.elapsed().as_secs_f64();
        wr.write_record(["generate".to_string(), r.to_string(), format!("{gen_secs:.6}"), samples.len().to_string()])?;
        let t = Instant::now();
        pipeline::estimate_unknown_truncation(&samples, cfg.family_kind(), cfg.set_class, cfg.alpha, cfg.epsilon, &cfg.pipeline, s)?;
        let est_secs = t.elapsed().as_secs_f64();
        wr.write_record(["estimate".to_string(), r.to_string(), format!("{est_secs:.6}"), samples.len().to_string()])?;
        wr.flush()?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Write JSON to `out`, or to stdout when no path is given.
pub fn emit_json<T: Serialize>(out: Option<&PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let mut so = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut so, value)?;
            writeln!(so)?;
            Ok(())
        }
    }
}
