//! Table → decision pipeline: truncation to the budget, optional thinning,
//! reference selection, and the per-chain e-process.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{apply_thinning, integrated_autocorrelation_time};
use crate::ensemble::ChainDecision;
use crate::eprocess::{run_chain, step_log_evalue, LogRatioStep, StoppingConfig};
use crate::error::{Error, Result};
use crate::ingest::{select_reference, LogLikTable, ReferenceMode};

/// Samples used to estimate the autocorrelation time before testing.
pub const PILOT_LEN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thinning {
    Auto,
    Off,
    Fixed(usize),
}

impl std::str::FromStr for Thinning {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Thinning::Auto),
            "off" | "none" => Ok(Thinning::Off),
            other => match other.parse::<usize>() {
                Ok(0) | Err(_) => Err(format!(
                    "thinning must be auto, off or a positive interval, got {other:?}"
                )),
                Ok(n) => Ok(Thinning::Fixed(n)),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub alpha: f64,
    pub mode: ReferenceMode,
    /// Maximum posterior samples per chain.
    pub budget: usize,
    pub thinning: Thinning,
}

/// `ln S_k` for every tested row of `table`, in table numbering.
pub fn tested_steps(table: &LogLikTable, mode: ReferenceMode) -> Result<Vec<LogRatioStep>> {
    let reference = select_reference(table, mode)?;
    (reference.first_tested_index..=table.num_samples())
        .map(|k| {
            let row = table.sample(k).expect("index within table");
            let log_s = step_log_evalue(row, reference.baseline)?;
            LogRatioStep::new(k, log_s)
        })
        .collect()
}

fn choose_interval(table: &LogLikTable, thinning: Thinning) -> (usize, Option<f64>) {
    match thinning {
        Thinning::Off => (1, None),
        Thinning::Fixed(n) => (n, None),
        Thinning::Auto => {
            let pilot = table.sample_row_sums();
            let pilot = &pilot[..pilot.len().min(PILOT_LEN)];
            match integrated_autocorrelation_time(pilot) {
                Ok(d) => (d.recommended_interval, Some(d.iac_time)),
                Err(e) => {
                    log::info!(
                        "chain {:?}: no autocorrelation estimate ({e}), not thinning",
                        table.chain_id
                    );
                    (1, None)
                }
            }
        }
    }
}

/// Runs the stopping rule on one chain.
pub fn decide_chain(table: &LogLikTable, settings: &RunSettings) -> Result<ChainDecision> {
    let truncated = table.truncated(settings.budget);
    let (interval, iac_time) = choose_interval(&truncated, settings.thinning);
    let thinned = apply_thinning(&truncated, interval);
    let config = StoppingConfig::new(settings.alpha, settings.budget, interval)?;
    let steps = tested_steps(&thinned, settings.mode)?;
    let run = run_chain(&steps, &config)?;
    let mut decision = ChainDecision::from_run(&thinned, &run, settings.mode)?;
    decision.thinning_interval = interval;
    decision.iac_time = iac_time;
    Ok(decision)
}

/// Runs every chain, using at most `jobs` worker threads (0 = rayon default).
pub fn decide_all(
    tables: &[LogLikTable],
    settings: &RunSettings,
    jobs: usize,
) -> Result<Vec<ChainDecision>> {
    StoppingConfig::new(settings.alpha, settings.budget, 1)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| tables.par_iter().map(|t| decide_chain(t, settings)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Verdict;

    fn settings(mode: ReferenceMode) -> RunSettings {
        RunSettings {
            alpha: 0.01,
            mode,
            budget: 100,
            thinning: Thinning::Off,
        }
    }

    #[test]
    fn null_chain_is_discarded() {
        let t = LogLikTable::new("n", Some(vec![-1.0, -2.0]), vec![vec![-1.0, -2.0]; 50]).unwrap();
        for mode in [ReferenceMode::DeWarmstart, ReferenceMode::FirstSample] {
            let d = decide_chain(&t, &settings(mode)).unwrap();
            assert_eq!(d.verdict, Verdict::BudgetExhausted);
            assert!(d.retained_sample_indices.is_empty());
        }
        let auto = RunSettings {
            thinning: Thinning::Auto,
            ..settings(ReferenceMode::DeWarmstart)
        };
        assert_eq!(decide_chain(&t, &auto).unwrap().thinning_interval, 1);
    }

    #[test]
    fn improving_chain_stops() {
        let rows = (1..=40).map(|k| vec![-1.0 + k as f64]).collect();
        let t = LogLikTable::new("u", Some(vec![-1.0]), rows).unwrap();
        let d = decide_chain(&t, &settings(ReferenceMode::DeWarmstart)).unwrap();
        // log-ratios 1, 2, 3: cumulative 6 ≥ 4.605 at sample 3.
        assert_eq!(d.stop_index, Some(3));
        assert_eq!(d.retained_sample_indices, vec![1, 2, 3]);
    }

    #[test]
    fn budget_truncates() {
        let rows = (1..=40).map(|k| vec![if k > 5 { 10.0 } else { 0.0 }]).collect();
        let t = LogLikTable::new("b", Some(vec![0.0]), rows).unwrap();
        let s = RunSettings {
            budget: 5,
            ..settings(ReferenceMode::DeWarmstart)
        };
        let d = decide_chain(&t, &s).unwrap();
        assert_eq!(d.verdict, Verdict::BudgetExhausted);
        assert_eq!(d.steps_consumed, 5);
    }

    #[test]
    fn thinning_parse() {
        assert_eq!("auto".parse::<Thinning>().unwrap(), Thinning::Auto);
        assert_eq!("off".parse::<Thinning>().unwrap(), Thinning::Off);
        assert_eq!("7".parse::<Thinning>().unwrap(), Thinning::Fixed(7));
        assert!("0".parse::<Thinning>().is_err());
    }

    #[test]
    fn missing_warmstart_is_config_error() {
        let t = LogLikTable::new("x", None, vec![vec![0.0]; 3]).unwrap();
        let err = decide_all(&[t], &settings(ReferenceMode::DeWarmstart), 1).unwrap_err();
        assert_eq!(err.class(), crate::error::ErrorClass::Config);
    }
}
