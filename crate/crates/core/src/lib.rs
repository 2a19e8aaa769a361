//! Anytime-valid stopping for sequentially sampled model ensembles.
//!
//! Per-sample validation log-likelihoods are turned into likelihood-ratio
//! e-values against a reference model; each chain stops the first time its
//! accumulated evidence reaches `1/α`, and the resulting minimal ensemble is
//! evaluated and compared against the full sampling budget.
//!
//! * [`eprocess`]: e-variables, the e-process and the stopping rule.
//! * [`ingest`]: record parsing, per-chain tables and reference selection.
//! * [`diagnostics`]: autocorrelation time, thinning and the Jensen bound.
//! * [`ensemble`]: minimal-ensemble membership, LPPD and compression reports.
//! * [`pipeline`]: tables to per-chain decisions.
//! * [`simlab`]: synthetic scenarios and Monte Carlo certification.
//! * [`cli`]: the `evstop` command-line surface.

pub mod cli;
pub mod diagnostics;
pub mod ensemble;
pub mod eprocess;
pub mod error;
pub mod ingest;
pub mod numeric;
pub mod pipeline;
pub mod simlab;

pub use diagnostics::{
    apply_thinning, integrated_autocorrelation_time, jensen_gap, JensenGapReport, ThinningDiagnostics,
};
pub use ensemble::{
    assemble_minimal_bde, compression_report, lppd, ChainDecision, EnsembleReport, Membership, Verdict,
};
pub use eprocess::{
    accumulate, run_chain, step_log_evalue, ChainRun, EProcessState, LogRatioStep, Status, StoppingConfig,
};
pub use error::{Error, ErrorClass, Result};
pub use ingest::{
    build_tables, parse_records, select_reference, LogLikRecord, LogLikTable, ParseOptions, RecordKind,
    ReferenceMode,
};
pub use pipeline::{decide_all, decide_chain, RunSettings, Thinning};
pub use simlab::{
    certify_validity, gaussian_model_run, generate_log_ratio_stream, simulate_stopping, GaussianModelOptions,
    ScenarioKind, ScenarioSpec, ValidityResult,
};
