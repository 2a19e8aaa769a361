//! Minimal-ensemble assembly, LPPD evaluation and compression reporting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_rows, jensen_gap, per_point_lppd, JensenGapReport};
use crate::eprocess::{ChainRun, Status};
use crate::error::{Error, Result};
use crate::ingest::{LogLikTable, ReferenceMode};
use crate::numeric::{mean, sample_std};

/// Slack allowed on the Jensen bound before a report is refused.
pub const JENSEN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    RejectedH0,
    BudgetExhausted,
}

/// Per-chain outcome of the stopping rule, with every index expressed in the
/// chain's original (unthinned) sample numbering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDecision {
    pub chain_id: String,
    pub verdict: Verdict,
    pub stop_index: Option<usize>,
    pub retained_sample_indices: Vec<usize>,
    pub trajectory: Vec<(usize, f64)>,
    pub steps_consumed: usize,
    pub final_log_e: f64,
    pub thinning_interval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iac_time: Option<f64>,
}

impl ChainDecision {
    /// Translates a run over `tested` (possibly thinned) back to original indices.
    pub fn from_run(tested: &LogLikTable, run: &ChainRun, mode: ReferenceMode) -> Result<Self> {
        let original = |i: usize| {
            tested.original_index(i).ok_or_else(|| {
                Error::Invariant(format!(
                    "chain {:?}: tested index {i} outside the table",
                    tested.chain_id
                ))
            })
        };
        let trajectory = run
            .trajectory
            .iter()
            .map(|&(i, log_e)| Ok((original(i)?, log_e)))
            .collect::<Result<Vec<_>>>()?;
        let (verdict, stop_index, retained) = match (run.status, run.stop_index) {
            (Status::RejectedH0, Some(stop)) => {
                let retained = (mode.first_tested_index()..=stop)
                    .map(original)
                    .collect::<Result<Vec<_>>>()?;
                (Verdict::RejectedH0, Some(original(stop)?), retained)
            }
            (Status::RejectedH0, None) | (Status::Running, _) => {
                return Err(Error::Invariant(format!(
                    "chain {:?}: inconsistent e-process outcome {:?}",
                    tested.chain_id, run.status
                )))
            }
            (Status::BudgetExhausted, _) => (Verdict::BudgetExhausted, None, Vec::new()),
        };
        let thinning_interval = match tested.original_indices.as_slice() {
            [a, b, ..] => b - a,
            _ => 1,
        };
        Ok(Self {
            chain_id: tested.chain_id.clone(),
            verdict,
            stop_index,
            retained_sample_indices: retained,
            trajectory,
            steps_consumed: run.steps_consumed,
            final_log_e: run.final_log_e,
            thinning_interval,
            iac_time: None,
        })
    }

    pub fn rejected(&self) -> bool {
        self.verdict == Verdict::RejectedH0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMember {
    Warmstart,
    /// Original index of the reference posterior sample.
    Sample(usize),
}

/// Members of one chain's contribution to the minimal ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub chain_id: String,
    pub reference: ReferenceMember,
    pub sample_indices: Vec<usize>,
}

impl Membership {
    pub fn member_count(&self) -> usize {
        1 + self.sample_indices.len()
    }

    /// Resolves member rows in `table`, which must use original sample numbering.
    pub fn rows<'a>(&self, table: &'a LogLikTable) -> Result<Vec<&'a [f64]>> {
        if table.chain_id != self.chain_id {
            return Err(Error::ChainMismatch(format!(
                "membership for {:?} evaluated against table {:?}",
                self.chain_id, table.chain_id
            )));
        }
        let missing = |what: String| {
            Error::ChainMismatch(format!("chain {:?}: {what} missing from records", self.chain_id))
        };
        let reference = match self.reference {
            ReferenceMember::Warmstart => table
                .warmstart_row
                .as_deref()
                .ok_or_else(|| missing("warmstart".into()))?,
            ReferenceMember::Sample(i) => table
                .sample_by_original(i)
                .ok_or_else(|| missing(format!("sample {i}")))?,
        };
        let mut rows = Vec::with_capacity(self.member_count());
        rows.push(reference);
        for &i in &self.sample_indices {
            rows.push(
                table
                    .sample_by_original(i)
                    .ok_or_else(|| missing(format!("sample {i}")))?,
            );
        }
        Ok(rows)
    }
}

/// Reference member plus the retained prefix for rejecting chains; the
/// reference member alone for chains that exhausted their budget.
pub fn assemble_minimal_bde(
    decisions: &[ChainDecision],
    tables: &[LogLikTable],
    mode: ReferenceMode,
) -> Result<Vec<Membership>> {
    if decisions.len() != tables.len() {
        return Err(Error::ChainMismatch(format!(
            "{} decisions for {} chains",
            decisions.len(),
            tables.len()
        )));
    }
    decisions
        .iter()
        .map(|d| {
            let table = find_table(tables, &d.chain_id)?;
            let reference = match mode {
                ReferenceMode::DeWarmstart => ReferenceMember::Warmstart,
                ReferenceMode::FirstSample => ReferenceMember::Sample(1),
            };
            let membership = Membership {
                chain_id: d.chain_id.clone(),
                reference,
                sample_indices: d.retained_sample_indices.clone(),
            };
            membership.rows(table)?;
            Ok(membership)
        })
        .collect()
}

pub(crate) fn find_table<'a>(tables: &'a [LogLikTable], chain_id: &str) -> Result<&'a LogLikTable> {
    tables
        .iter()
        .find(|t| t.chain_id == chain_id)
        .ok_or_else(|| Error::ChainMismatch(format!("no records for chain {chain_id:?}")))
}

/// Per-point LPPD `(1/m) Σ_i ln((1/K) Σ_k p(y_i | x_i, θ_k))`.
pub fn lppd<R: AsRef<[f64]>>(member_rows: &[R]) -> Result<f64> {
    let m = check_rows(member_rows)?;
    Ok(per_point_lppd(member_rows, m))
}

/// One line of the printed report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub lppd: f64,
    pub lppd_std: Option<f64>,
    pub samples: f64,
    /// `None` when nothing was retained.
    pub compression: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain_id: String,
    pub verdict: Verdict,
    pub stop_index: Option<usize>,
    pub retained_samples: usize,
    pub members: usize,
    pub lppd: f64,
    pub thinning_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub mode: ReferenceMode,
    pub alpha: f64,
    pub log_threshold: f64,
    pub chains: usize,
    pub chain_budget: usize,
    pub full_budget: usize,
    pub ensemble_lppd: f64,
    pub ensemble_lppd_total: f64,
    pub mean_chain_lppd: f64,
    pub mean_chain_lppd_std: f64,
    pub total_samples_used: usize,
    pub total_members: usize,
    pub average_samples_per_chain: f64,
    pub compression_factor: f64,
    pub chain_compression_factor: f64,
    pub jensen: JensenGapReport,
    pub ensemble_rows: Vec<ReportRow>,
    pub chain_rows: Vec<ReportRow>,
    pub per_chain: Vec<ChainSummary>,
    pub notes: Vec<String>,
}

pub fn compression_factor(full_budget: usize, used: usize) -> f64 {
    full_budget as f64 / used.max(1) as f64
}

/// Formats with one decimal, dropping a trailing `.0` (`64`, `10.1`, `484.8`).
pub fn format_one_decimal(x: f64) -> String {
    let s = format!("{x:.1}");
    match s.strip_suffix(".0") {
        Some(int) => int.to_string(),
        None => s,
    }
}

fn check_jensen(rows: &[&[f64]], what: &str) -> Result<JensenGapReport> {
    let report = jensen_gap(rows)?;
    if report.gap < -JENSEN_SLACK {
        return Err(Error::Invariant(format!(
            "{what}: ensemble LPPD {} below mean member log-likelihood {}",
            report.ensemble_lppd, report.mean_member_loglik
        )));
    }
    Ok(report)
}

fn mode_label(mode: ReferenceMode) -> &'static str {
    match mode {
        ReferenceMode::DeWarmstart => "DE ref.",
        ReferenceMode::FirstSample => "Sample ref.",
    }
}

/// Builds the full report. `report_tables` supply the LPPD evaluation rows and
/// must use original sample numbering; `chain_budget` caps the samples per
/// chain counted as the full ensemble.
pub fn compression_report(
    decisions: &[ChainDecision],
    report_tables: &[LogLikTable],
    alpha: f64,
    chain_budget: usize,
    mode: ReferenceMode,
) -> Result<EnsembleReport> {
    let memberships = assemble_minimal_bde(decisions, report_tables, mode)?;
    let chains = memberships.len();
    if chains == 0 {
        return Err(Error::Degenerate("no chains to report".into()));
    }
    let tables: Vec<&LogLikTable> = memberships
        .iter()
        .map(|mb| find_table(report_tables, &mb.chain_id))
        .collect::<Result<_>>()?;

    let mut pooled: Vec<&[f64]> = Vec::new();
    let mut per_chain = Vec::with_capacity(chains);
    let mut chain_lppds = Vec::with_capacity(chains);
    for ((mb, table), d) in memberships.iter().zip(&tables).zip(decisions) {
        let rows = mb.rows(table)?;
        check_jensen(&rows, &format!("chain {:?}", mb.chain_id))?;
        let value = lppd(&rows)?;
        chain_lppds.push(value);
        per_chain.push(ChainSummary {
            chain_id: mb.chain_id.clone(),
            verdict: d.verdict,
            stop_index: d.stop_index,
            retained_samples: mb.sample_indices.len(),
            members: mb.member_count(),
            lppd: value,
            thinning_interval: d.thinning_interval,
        });
        pooled.extend(rows);
    }
    let jensen = check_jensen(&pooled, "minimal ensemble")?;
    let ensemble_lppd = jensen.ensemble_lppd;

    let full_rows: Vec<Vec<&[f64]>> = tables
        .iter()
        .map(|t| {
            t.sample_rows
                .iter()
                .take(chain_budget)
                .map(Vec::as_slice)
                .collect()
        })
        .collect();
    let full_budget: usize = full_rows.iter().map(Vec::len).sum();
    let total_samples_used: usize = per_chain.iter().map(|c| c.retained_samples).sum();
    let total_members: usize = per_chain.iter().map(|c| c.members).sum();
    let average_samples_per_chain = total_samples_used as f64 / chains as f64;
    let chain_full = chain_budget.min(full_rows.iter().map(Vec::len).max().unwrap_or(0));

    let minimal_label = format!("alpha={} ({})", alpha, mode_label(mode));
    let mut ensemble_rows = Vec::new();
    let mut chain_rows = Vec::new();

    let warmstarts: Option<Vec<&[f64]>> = tables.iter().map(|t| t.warmstart_row.as_deref()).collect();
    if let Some(warm) = &warmstarts {
        ensemble_rows.push(ReportRow {
            label: "DE".into(),
            lppd: lppd(warm)?,
            lppd_std: None,
            samples: chains as f64,
            compression: Some(full_budget as f64 / chains as f64),
        });
        let single: Vec<f64> = warm.iter().map(|r| lppd(&[*r])).collect::<Result<_>>()?;
        chain_rows.push(ReportRow {
            label: "DNN".into(),
            lppd: mean(&single),
            lppd_std: Some(sample_std(&single)),
            samples: 1.0,
            compression: Some(chain_full as f64),
        });
    }

    ensemble_rows.push(ReportRow {
        label: minimal_label.clone(),
        lppd: ensemble_lppd,
        lppd_std: None,
        samples: total_samples_used as f64,
        compression: (total_samples_used > 0)
            .then(|| full_budget as f64 / total_samples_used as f64),
    });
    chain_rows.push(ReportRow {
        label: minimal_label,
        lppd: mean(&chain_lppds),
        lppd_std: Some(sample_std(&chain_lppds)),
        samples: average_samples_per_chain,
        compression: (total_samples_used > 0)
            .then(|| chain_full as f64 / average_samples_per_chain),
    });

    if full_rows.iter().all(|r| !r.is_empty()) {
        let all: Vec<&[f64]> = full_rows.iter().flatten().copied().collect();
        ensemble_rows.push(ReportRow {
            label: "Full".into(),
            lppd: lppd(&all)?,
            lppd_std: None,
            samples: full_budget as f64,
            compression: Some(1.0),
        });
        let single: Vec<f64> = full_rows.iter().map(|r| lppd(r)).collect::<Result<_>>()?;
        chain_rows.push(ReportRow {
            label: "Full chain".into(),
            lppd: mean(&single),
            lppd_std: Some(sample_std(&single)),
            samples: chain_full as f64,
            compression: Some(1.0),
        });
    }

    Ok(EnsembleReport {
        mode,
        alpha,
        log_threshold: -alpha.ln(),
        chains,
        chain_budget: chain_full,
        full_budget,
        ensemble_lppd,
        ensemble_lppd_total: jensen.ensemble_lppd_total(),
        mean_chain_lppd: mean(&chain_lppds),
        mean_chain_lppd_std: sample_std(&chain_lppds),
        total_samples_used,
        total_members,
        average_samples_per_chain,
        compression_factor: compression_factor(full_budget, total_samples_used),
        chain_compression_factor: if total_samples_used > 0 {
            chain_full as f64 / average_samples_per_chain
        } else {
            chain_full as f64
        },
        jensen,
        ensemble_rows,
        chain_rows,
        per_chain,
        notes: Vec::new(),
    })
}

impl EnsembleReport {
    /// Two-block plain-text table: LPPD to 4 places, compression to 1.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "reference: {}  alpha: {}  threshold ln(1/alpha): {:.5}  chains: {}",
            self.mode, self.alpha, self.log_threshold, self.chains
        );
        let rejected = self.per_chain.iter().filter(|c| c.verdict == Verdict::RejectedH0).count();
        // rounding noise below the Jensen slack prints as zero
        let gap = if self.jensen.gap.abs() < JENSEN_SLACK { 0.0 } else { self.jensen.gap };
        let _ = writeln!(
            out,
            "rejected: {}/{}  retained samples: {}  members: {}  jensen gap: {:.4}",
            rejected, self.chains, self.total_samples_used, self.total_members, gap
        );
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<28} {:>10} {:>9} {:>10}", "Method", "LPPD", "Samples", "Compr.");
        for (title, rows) in [("Ensemble", &self.ensemble_rows), ("Single chain (mean)", &self.chain_rows)] {
            let _ = writeln!(out, "{title}");
            for row in rows {
                let compression = row
                    .compression
                    .map(|c| format!("x{}", format_one_decimal(c)))
                    .unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    out,
                    "  {:<26} {:>10.4} {:>9} {:>10}",
                    row.label,
                    row.lppd,
                    format_one_decimal(row.samples),
                    compression
                );
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:>6} {:>9} {:>8} {:>10}",
            "chain", "verdict", "stop", "retained", "thin", "LPPD"
        );
        for c in &self.per_chain {
            let verdict = match c.verdict {
                Verdict::RejectedH0 => "rejected_h0",
                Verdict::BudgetExhausted => "budget_exhausted",
            };
            let stop = c.stop_index.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<16} {:<16} {:>6} {:>9} {:>8} {:>10.4}",
                c.chain_id, verdict, stop, c.retained_samples, c.thinning_interval, c.lppd
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eprocess::{run_chain, steps_from_log_ratios, StoppingConfig};

    fn chain(id: &str, n: usize) -> LogLikTable {
        let rows = (1..=n).map(|k| vec![-1.0 + 0.01 * k as f64, -0.5]).collect();
        LogLikTable::new(id, Some(vec![-1.0, -0.5]), rows).unwrap()
    }

    fn exhausted(id: &str) -> ChainDecision {
        ChainDecision {
            chain_id: id.into(),
            verdict: Verdict::BudgetExhausted,
            stop_index: None,
            retained_sample_indices: vec![],
            trajectory: vec![],
            steps_consumed: 10,
            final_log_e: -1.0,
            thinning_interval: 1,
            iac_time: None,
        }
    }

    #[test]
    fn abstention_falls_back_to_de() {
        let tables: Vec<_> = (0..4).map(|c| chain(&format!("c{c}"), 10)).collect();
        let decisions: Vec<_> = tables.iter().map(|t| exhausted(&t.chain_id)).collect();
        let members = assemble_minimal_bde(&decisions, &tables, ReferenceMode::DeWarmstart).unwrap();
        assert!(members.iter().all(|m| m.reference == ReferenceMember::Warmstart && m.sample_indices.is_empty()));
        let report = compression_report(&decisions, &tables, 0.01, 10, ReferenceMode::DeWarmstart).unwrap();
        assert_eq!(report.total_samples_used, 0);
        assert_eq!(report.total_members, 4);
        assert_eq!(report.ensemble_rows[1].compression, None);
        assert!((report.ensemble_lppd - report.ensemble_rows[0].lppd).abs() < 1e-15);
    }

    #[test]
    fn prefix_membership_in_first_sample_mode() {
        let table = chain("c0", 20);
        let run = run_chain(
            &steps_from_log_ratios(2, &[1.0; 19]).unwrap(),
            &StoppingConfig::new(0.05, 19, 1).unwrap(),
        )
        .unwrap();
        // ln(20) ≈ 2.996: crossing after three unit steps, at sample 4.
        assert_eq!(run.stop_index, Some(4));
        let d = ChainDecision::from_run(&table, &run, ReferenceMode::FirstSample).unwrap();
        assert_eq!(d.retained_sample_indices, vec![2, 3, 4]);
        let m = assemble_minimal_bde(&[d], &[table], ReferenceMode::FirstSample).unwrap();
        assert_eq!(m[0].reference, ReferenceMember::Sample(1));
        assert_eq!(m[0].member_count(), 4);
    }

    #[test]
    fn stop_at_fifth_tested_keeps_samples_one_to_five() {
        let table = chain("c0", 30);
        let d = ChainDecision {
            verdict: Verdict::RejectedH0,
            stop_index: Some(5),
            retained_sample_indices: vec![2, 3, 4, 5],
            ..exhausted("c0")
        };
        let m = assemble_minimal_bde(&[d], std::slice::from_ref(&table), ReferenceMode::FirstSample).unwrap();
        let rows = m[0].rows(&table).unwrap();
        let expected: Vec<&[f64]> = (1..=5).map(|k| table.sample(k).unwrap()).collect();
        assert_eq!(rows, expected);
    }

    #[test]
    fn thinned_indices_map_back() {
        let table = crate::diagnostics::apply_thinning(&chain("c0", 30), 5);
        let run = run_chain(
            &steps_from_log_ratios(1, &[3.0; 6]).unwrap(),
            &StoppingConfig::new(0.01, 6, 5).unwrap(),
        )
        .unwrap();
        let d = ChainDecision::from_run(&table, &run, ReferenceMode::DeWarmstart).unwrap();
        assert_eq!(d.stop_index, Some(6));
        assert_eq!(d.retained_sample_indices, vec![1, 6]);
        assert_eq!(d.thinning_interval, 5);
        assert_eq!(d.trajectory[1].0, 6);
    }

    #[test]
    fn mismatched_decisions() {
        let tables = vec![chain("a", 3)];
        assert!(assemble_minimal_bde(&[], &tables, ReferenceMode::DeWarmstart).is_err());
        assert!(assemble_minimal_bde(&[exhausted("b")], &tables, ReferenceMode::DeWarmstart).is_err());
    }

    #[test]
    fn lppd_examples() {
        let row = vec![-0.2, -0.4, -0.9];
        assert!((lppd(std::slice::from_ref(&row)).unwrap() - (-0.5)).abs() < 1e-15);
        let v = lppd(&[vec![0.5f64.ln()], vec![0.25f64.ln()]]).unwrap();
        assert!((v - 0.375f64.ln()).abs() < 1e-14);
        for k in 1..6 {
            let rows = vec![vec![-0.3; 4]; k];
            assert!((lppd(&rows).unwrap() + 0.3).abs() < 1e-15);
        }
        assert!(lppd::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn compression_values() {
        assert_eq!(format_one_decimal(compression_factor(1600, 158)), "10.1");
        assert_eq!(format_one_decimal(compression_factor(3200, 50)), "64");
        assert_eq!(format_one_decimal(compression_factor(16000, 64)), "250");
        assert_eq!(format_one_decimal(compression_factor(16000, 33)), "484.8");
        assert_eq!(format_one_decimal(compression_factor(100, 100)), "1");
        assert_eq!(compression_factor(100, 0), 100.0);
    }
}
