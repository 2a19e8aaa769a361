//! Synthetic scenarios for checking the stopping rule empirically.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(seed)`; each chain or replication `c` reads its own stream
//! selected with `set_stream(c)`, so streams are independent of one another
//! and of evaluation order. The synthetic dataset of the Gaussian model uses
//! stream [`DATA_STREAM`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eprocess::{run_chain, LogRatioStep, StoppingConfig};
use crate::error::{Error, Result};
use crate::ingest::LogLikTable;
use crate::numeric::{mean, quantile_sorted, sample_std};

pub const DATA_STREAM: u64 = u64::MAX;
pub const MIN_REPLICATIONS: usize = 500;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// `ln S ~ N(−σ²/2, σ²)`, so `E[S] = 1`: the boundary of the null.
    ExactNull,
    /// `ln S ~ N(μ − σ²/2, σ²)`, so `E[S] = e^μ`.
    LognormalAlt,
    /// Conjugate 1-D Gaussian mean model sampled with random-walk Metropolis.
    GaussianModel,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::ExactNull => "exact_null",
            ScenarioKind::LognormalAlt => "lognormal_alt",
            ScenarioKind::GaussianModel => "gaussian_model",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "exact_null" => Ok(ScenarioKind::ExactNull),
            "lognormal_alt" => Ok(ScenarioKind::LognormalAlt),
            "gaussian_model" => Ok(ScenarioKind::GaussianModel),
            other => Err(format!("unknown scenario kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub mu: f64,
    pub sigma: f64,
    pub m: usize,
    pub chains: usize,
    pub budget: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Validates the parameters; `mu` is forced to zero for the exact null.
    pub fn new(
        kind: ScenarioKind,
        mu: f64,
        sigma: f64,
        m: usize,
        chains: usize,
        budget: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be finite and non-negative, got {sigma}")));
        }
        if !mu.is_finite() {
            return Err(Error::Config(format!("mu must be finite, got {mu}")));
        }
        if m == 0 || chains == 0 || budget == 0 {
            return Err(Error::Config("m, chains and budget must be positive".into()));
        }
        let mu = if kind == ScenarioKind::ExactNull { 0.0 } else { mu };
        Ok(Self {
            kind,
            mu,
            sigma,
            m,
            chains,
            budget,
            seed,
        })
    }

    pub fn exact_null(sigma: f64, budget: usize, seed: u64) -> Result<Self> {
        Self::new(ScenarioKind::ExactNull, 0.0, sigma, 1, 1, budget, seed)
    }

    pub fn lognormal_alt(mu: f64, sigma: f64, budget: usize, seed: u64) -> Result<Self> {
        Self::new(ScenarioKind::LognormalAlt, mu, sigma, 1, 1, budget, seed)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// I.i.d. log-ratio steps for `chain`, tested indices `2..=budget + 1`.
pub fn generate_log_ratio_stream(spec: &ScenarioSpec, chain: u64) -> Vec<LogRatioStep> {
    let mut rng = spec.rng(chain);
    let drift = spec.mu - 0.5 * spec.sigma * spec.sigma;
    (0..spec.budget)
        .map(|k| {
            let z: f64 = rng.sample(StandardNormal);
            LogRatioStep {
                sample_index: k + 2,
                log_s: drift + spec.sigma * z,
            }
        })
        .collect()
}

/// Streams laid out as record tables: a zero warmstart row and sample `k`
/// holding `ln S_k / m` at every point, for use with the warmstart reference.
pub fn stream_tables(spec: &ScenarioSpec) -> Result<Vec<LogLikTable>> {
    (0..spec.chains as u64)
        .map(|c| {
            let rows = generate_log_ratio_stream(spec, c)
                .into_iter()
                .map(|s| vec![s.log_s / spec.m as f64; spec.m])
                .collect();
            LogLikTable::new(format!("chain{c}"), Some(vec![0.0; spec.m]), rows)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMean {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityResult {
    pub kind: ScenarioKind,
    pub mu: f64,
    pub sigma: f64,
    pub budget: usize,
    pub seed: u64,
    pub alpha: f64,
    pub replications: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Mean of the stopped process `E_{min(τ, k)}` at each checkpoint `k`.
    pub mean_e_at_checkpoints: BTreeMap<usize, CheckpointMean>,
    /// Quartiles of the stopping step (tested steps consumed) among rejecting
    /// replications.
    pub stopping_time_quantiles: Option<[f64; 3]>,
    /// Median stopping step over all replications, counting non-rejection as
    /// +∞; `None` when that median is infinite.
    pub median_stopping_time: Option<usize>,
}

impl ValidityResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn checkpoints(budget: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = [5, 20, budget.min(100)]
        .into_iter()
        .filter(|&k| k >= 1 && k <= budget)
        .collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Runs `replications` independent chains of a stream scenario through the
/// stopping rule. Replication `r` reads stream `r`.
pub fn simulate_stopping(spec: &ScenarioSpec, alpha: f64, replications: usize) -> Result<ValidityResult> {
    if spec.kind == ScenarioKind::GaussianModel {
        return Err(Error::Config(
            "stopping simulations need a log-ratio stream scenario".into(),
        ));
    }
    if replications == 0 {
        return Err(Error::Config("replications must be positive".into()));
    }
    let config = StoppingConfig::new(alpha, spec.budget, 1)?;
    let ks = checkpoints(spec.budget);
    let runs: Vec<(Option<usize>, Vec<f64>)> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let steps = generate_log_ratio_stream(spec, r);
            let run = run_chain(&steps, &config)?;
            let at_checkpoints = ks
                .iter()
                .map(|&k| run.trajectory[k.min(run.trajectory.len()) - 1].1.exp())
                .collect();
            Ok((run.rejected().then_some(run.steps_consumed), at_checkpoints))
        })
        .collect::<Result<_>>()?;

    let rejections = runs.iter().filter(|(s, _)| s.is_some()).count();
    let mut mean_e_at_checkpoints = BTreeMap::new();
    for (j, &k) in ks.iter().enumerate() {
        let values: Vec<f64> = runs.iter().map(|(_, e)| e[j]).collect();
        mean_e_at_checkpoints.insert(
            k,
            CheckpointMean {
                mean: mean(&values),
                std_error: sample_std(&values) / (values.len() as f64).sqrt(),
            },
        );
    }
    let mut stops: Vec<f64> = runs.iter().filter_map(|(s, _)| s.map(|v| v as f64)).collect();
    stops.sort_by(f64::total_cmp);
    let stopping_time_quantiles = (!stops.is_empty()).then(|| {
        [0.25, 0.5, 0.75].map(|q| quantile_sorted(&stops, q).expect("non-empty"))
    });
    let mut censored: Vec<usize> = runs.iter().map(|(s, _)| s.unwrap_or(usize::MAX)).collect();
    censored.sort_unstable();
    let median = censored[(censored.len() - 1) / 2];

    Ok(ValidityResult {
        kind: spec.kind,
        mu: spec.mu,
        sigma: spec.sigma,
        budget: spec.budget,
        seed: spec.seed,
        alpha,
        replications,
        rejections,
        rejection_rate: rejections as f64 / replications as f64,
        mean_e_at_checkpoints,
        stopping_time_quantiles,
        median_stopping_time: (median != usize::MAX).then_some(median),
    })
}

/// Monte Carlo check of the anytime-valid Type-I guarantee under the exact null.
pub fn certify_validity(spec: &ScenarioSpec, alpha: f64, replications: usize) -> Result<ValidityResult> {
    if spec.kind != ScenarioKind::ExactNull {
        return Err(Error::Config("certification runs on the exact_null scenario".into()));
    }
    if replications < MIN_REPLICATIONS {
        return Err(Error::Config(format!(
            "certification needs at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    simulate_stopping(spec, alpha, replications)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    /// Start every chain at the posterior mode (the warmstart).
    AtMap,
    /// Start at `MAP + offset` and record from the first step, so early
    /// samples are still transient.
    Offset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianModelOptions {
    pub true_mean: f64,
    pub noise_sd: f64,
    pub n_train: usize,
    pub prior_sd: f64,
    pub proposal_sd: f64,
    pub init: ChainInit,
    /// Metropolis steps discarded before the first recorded sample.
    pub burn_in: usize,
    /// Metropolis steps between recorded samples.
    pub steps_per_sample: usize,
}

impl Default for GaussianModelOptions {
    fn default() -> Self {
        Self {
            true_mean: 0.0,
            noise_sd: 1.0,
            n_train: 50,
            prior_sd: 10.0,
            proposal_sd: 0.5,
            init: ChainInit::AtMap,
            burn_in: 0,
            steps_per_sample: 1,
        }
    }
}

/// Closed-form posterior of the unknown mean under a `N(0, prior_sd²)` prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianPosterior {
    pub fn from_data(train: &[f64], noise_sd: f64, prior_sd: f64) -> Self {
        let noise_prec = 1.0 / (noise_sd * noise_sd);
        let precision = train.len() as f64 * noise_prec + 1.0 / (prior_sd * prior_sd);
        let mean = noise_prec * train.iter().sum::<f64>() / precision;
        Self {
            mean,
            sd: precision.sqrt().recip(),
        }
    }

    pub fn log_density(&self, theta: f64) -> f64 {
        let z = (theta - self.mean) / self.sd;
        -0.5 * z * z
    }
}

/// Random-walk Metropolis on a 1-D log density. Returns the states after each
/// step and the number of accepted proposals.
pub fn random_walk_metropolis<F: Fn(f64) -> f64>(
    rng: &mut ChaCha8Rng,
    log_density: F,
    init: f64,
    proposal_sd: f64,
    steps: usize,
) -> (Vec<f64>, usize) {
    let mut theta = init;
    let mut current = log_density(theta);
    let mut accepted = 0;
    let mut states = Vec::with_capacity(steps);
    for _ in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        let proposal = theta + proposal_sd * z;
        let candidate = log_density(proposal);
        let u: f64 = rng.random();
        if u.ln() < candidate - current {
            theta = proposal;
            current = candidate;
            accepted += 1;
        }
        states.push(theta);
    }
    (states, accepted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModelRun {
    pub posterior: GaussianPosterior,
    pub validation: Vec<f64>,
    pub holdout: Vec<f64>,
    /// Tables evaluated on the validation points (input to the test).
    pub tables: Vec<LogLikTable>,
    /// Tables evaluated on independent hold-out points (for reporting).
    pub report_tables: Vec<LogLikTable>,
    /// Recorded parameter values per chain.
    pub thetas: Vec<Vec<f64>>,
    pub acceptance_rates: Vec<f64>,
}

fn gaussian_loglik_row(theta: f64, ys: &[f64], noise_sd: f64) -> Vec<f64> {
    ys.iter()
        .map(|y| {
            let z = (y - theta) / noise_sd;
            -0.5 * z * z - LN_SQRT_2PI - noise_sd.ln()
        })
        .collect()
}

/// End-to-end instance: data, closed-form posterior, Metropolis chains and
/// per-point log-likelihood tables for validation and hold-out points.
pub fn gaussian_model_run(spec: &ScenarioSpec, options: &GaussianModelOptions) -> Result<GaussianModelRun> {
    if spec.kind != ScenarioKind::GaussianModel {
        return Err(Error::Config("gaussian_model_run needs the gaussian_model scenario".into()));
    }
    if options.steps_per_sample == 0 || options.n_train == 0 {
        return Err(Error::Config("n_train and steps_per_sample must be positive".into()));
    }
    let mut data_rng = spec.rng(DATA_STREAM);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = data_rng.sample(StandardNormal);
                options.true_mean + options.noise_sd * z
            })
            .collect()
    };
    let train = draw(options.n_train);
    let validation = draw(spec.m);
    let holdout = draw(spec.m);
    let posterior = GaussianPosterior::from_data(&train, options.noise_sd, options.prior_sd);
    let init = match options.init {
        ChainInit::AtMap => posterior.mean,
        ChainInit::Offset(d) => posterior.mean + d,
    };

    let per_chain: Vec<(Vec<f64>, f64)> = (0..spec.chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = spec.rng(c);
            let total = options.burn_in + spec.budget * options.steps_per_sample;
            let (states, accepted) = random_walk_metropolis(
                &mut rng,
                |t| posterior.log_density(t),
                init,
                options.proposal_sd,
                total,
            );
            let recorded = states[options.burn_in..]
                .iter()
                .skip(options.steps_per_sample - 1)
                .step_by(options.steps_per_sample)
                .copied()
                .collect();
            (recorded, accepted as f64 / total as f64)
        })
        .collect();

    let mut tables = Vec::with_capacity(spec.chains);
    let mut report_tables = Vec::with_capacity(spec.chains);
    for (c, (thetas, _)) in per_chain.iter().enumerate() {
        let id = format!("chain{c}");
        let rows = |ys: &[f64]| -> Vec<Vec<f64>> {
            thetas.iter().map(|&t| gaussian_loglik_row(t, ys, options.noise_sd)).collect()
        };
        tables.push(LogLikTable::new(
            id.clone(),
            Some(gaussian_loglik_row(posterior.mean, &validation, options.noise_sd)),
            rows(&validation),
        )?);
        report_tables.push(LogLikTable::new(
            id,
            Some(gaussian_loglik_row(posterior.mean, &holdout, options.noise_sd)),
            rows(&holdout),
        )?);
    }
    let (thetas, acceptance_rates) = per_chain.into_iter().unzip();
    Ok(GaussianModelRun {
        posterior,
        validation,
        holdout,
        tables,
        report_tables,
        thetas,
        acceptance_rates,
    })
}
