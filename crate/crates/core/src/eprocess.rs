//! Likelihood-ratio e-variables and the accumulated e-process.
//!
//! Each tested posterior sample `θ_k` contributes the e-variable
//!
//! ```text
//!     S_k = L(θ_k) / L(θ_1) = Π_i p(y_i | x_i, θ_k) / p(y_i | x_i, θ_1)
//! ```
//!
//! and the process `E_k = E_{k-1} · S_k` starts at `E_1 = 1`. Under the null
//! (sampling does not improve the expected validation likelihood over the
//! reference `θ_1`) and independent samples, `E_k` is a test supermartingale,
//! so Ville's inequality gives `P(∃k : E_k ≥ 1/α) ≤ α`. A chain is stopped the
//! first time `E_k ≥ 1/α`; a chain that never crosses within its budget is
//! discarded.
//!
//! All arithmetic is carried out on `ln E_k`. The products over hundreds of
//! validation points leave the range of `f64` long before the evidence does.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One tested sample and the natural log of its e-variable `S_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRatioStep {
    pub sample_index: usize,
    pub log_s: f64,
}

impl LogRatioStep {
    pub fn new(sample_index: usize, log_s: f64) -> Result<Self> {
        if !log_s.is_finite() {
            return Err(Error::NonFinite {
                context: "log-ratio step",
                index: sample_index,
                value: log_s,
            });
        }
        if sample_index == 0 {
            return Err(Error::Config(
                "tested sample indices start at 1 (0 is the warmstart)".into(),
            ));
        }
        Ok(Self {
            sample_index,
            log_s,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    alpha: f64,
    budget: usize,
    thinning_interval: usize,
}

impl StoppingConfig {
    pub fn new(alpha: f64, budget: usize, thinning_interval: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in the open interval (0, 1), got {alpha}"
            )));
        }
        if budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if thinning_interval == 0 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        Ok(Self {
            alpha,
            budget,
            thinning_interval,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Maximum number of tested steps per chain.
    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn thinning_interval(&self) -> usize {
        self.thinning_interval
    }

    /// `ln(1/α)`, the rejection threshold on `ln E_k`.
    pub fn log_threshold(&self) -> f64 {
        -self.alpha.ln()
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        Self::new(alpha, self.budget, self.thinning_interval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    RejectedH0,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EProcessState {
    pub log_e: f64,
    pub steps_consumed: usize,
    pub status: Status,
    pub stop_index: Option<usize>,
    next_index: Option<usize>,
}

impl Default for EProcessState {
    fn default() -> Self {
        Self::new()
    }
}

impl EProcessState {
    /// `E_1 = 1`, nothing consumed. The first accumulated step fixes the
    /// starting index; later steps must follow contiguously.
    pub fn new() -> Self {
        Self {
            log_e: 0.0,
            steps_consumed: 0,
            status: Status::Running,
            stop_index: None,
            next_index: None,
        }
    }

    /// Like [`EProcessState::new`] but with the first tested index pinned.
    pub fn starting_at(first_tested_index: usize) -> Self {
        Self {
            next_index: Some(first_tested_index),
            ..Self::new()
        }
    }

    pub fn e_value(&self) -> f64 {
        self.log_e.exp()
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }
}

/// `ln S_k = Σ_i (candidate_i − baseline_i)`.
pub fn step_log_evalue(candidate: &[f64], baseline: &[f64]) -> Result<f64> {
    if candidate.len() != baseline.len() {
        return Err(Error::LengthMismatch {
            candidate: candidate.len(),
            baseline: baseline.len(),
        });
    }
    if candidate.is_empty() {
        return Err(Error::Degenerate("validation rows are empty".into()));
    }
    let mut sum = 0.0;
    for (i, (&c, &b)) in candidate.iter().zip(baseline).enumerate() {
        if !c.is_finite() {
            return Err(Error::NonFinite {
                context: "candidate row",
                index: i,
                value: c,
            });
        }
        if !b.is_finite() {
            return Err(Error::NonFinite {
                context: "baseline row",
                index: i,
                value: b,
            });
        }
        sum += c - b;
    }
    Ok(sum)
}

/// Applies one step of `E_k = E_{k-1} · S_k` and evaluates the stopping rule.
pub fn accumulate(
    state: &EProcessState,
    step: LogRatioStep,
    config: &StoppingConfig,
) -> Result<EProcessState> {
    if !state.is_running() {
        return Err(Error::Usage(format!(
            "cannot accumulate into a finished e-process (status {:?})",
            state.status
        )));
    }
    if let Some(expected) = state.next_index {
        if step.sample_index != expected {
            return Err(Error::StepOrder {
                expected,
                found: step.sample_index,
            });
        }
    }
    if !step.log_s.is_finite() {
        return Err(Error::NonFinite {
            context: "log-ratio step",
            index: step.sample_index,
            value: step.log_s,
        });
    }

    let mut next = state.clone();
    next.log_e += step.log_s;
    next.steps_consumed += 1;
    next.next_index = Some(step.sample_index + 1);
    if next.log_e >= config.log_threshold() {
        next.status = Status::RejectedH0;
        next.stop_index = Some(step.sample_index);
    } else if next.steps_consumed >= config.budget() {
        next.status = Status::BudgetExhausted;
    }
    Ok(next)
}

/// Outcome of running the stopping rule over one chain's tested steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub status: Status,
    pub stop_index: Option<usize>,
    pub steps_consumed: usize,
    pub final_log_e: f64,
    /// `(tested sample index, ln E_k)` for every consumed step.
    pub trajectory: Vec<(usize, f64)>,
}

impl ChainRun {
    pub fn rejected(&self) -> bool {
        self.status == Status::RejectedH0
    }
}

/// Feeds the steps in order until the first threshold crossing or the budget.
///
/// An empty sequence, or one that ends before the budget without a crossing,
/// is reported as budget-exhausted.
pub fn run_chain(steps: &[LogRatioStep], config: &StoppingConfig) -> Result<ChainRun> {
    let mut state = match steps.first() {
        Some(first) => EProcessState::starting_at(first.sample_index),
        None => EProcessState::new(),
    };
    let mut trajectory = Vec::with_capacity(steps.len().min(config.budget()));
    for &step in steps {
        state = accumulate(&state, step, config)?;
        trajectory.push((step.sample_index, state.log_e));
        if !state.is_running() {
            break;
        }
    }
    if state.is_running() {
        state.status = Status::BudgetExhausted;
    }
    Ok(ChainRun {
        status: state.status,
        stop_index: state.stop_index,
        steps_consumed: state.steps_consumed,
        final_log_e: state.log_e,
        trajectory,
    })
}

/// Builds steps `first_index, first_index + 1, ...` from raw log-ratios.
pub fn steps_from_log_ratios(first_index: usize, log_ratios: &[f64]) -> Result<Vec<LogRatioStep>> {
    log_ratios
        .iter()
        .enumerate()
        .map(|(offset, &log_s)| LogRatioStep::new(first_index + offset, log_s))
        .collect()
}
