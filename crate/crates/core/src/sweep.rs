//! Multi-day comparison runs: AR, IMM and the optimizer on each day,
//! summarized with means and standard deviations. Days are independent and
//! run in parallel under the `parallel` feature.

use thiserror::Error;

use crate::baseline::{average_rate, baseline_cost, immediate, percent_reduction, BaselineCost};
use crate::domain::ScenarioSnapshot;
use crate::formulation::{build, cost_breakdown, extract_schedule, FormulationError};
use crate::milp::{solve_milp, MilpError, MilpStatus, SolverConfig};
use crate::par;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("day {label}: {source}")]
    Day {
        label: String,
        source: FormulationError,
    },
    #[error("day {label}: solver returned {status:?} without an incumbent")]
    NoIncumbent { label: String, status: MilpStatus },
    #[error(transparent)]
    Milp(#[from] MilpError),
}

/// One day's inputs for a sweep.
#[derive(Debug, Clone)]
pub struct DayInput {
    pub label: String,
    pub snapshot: ScenarioSnapshot,
}

/// AR/IMM/OPT costs for one day plus the percentage reductions against AR.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub label: String,
    pub ar: BaselineCost,
    pub imm: BaselineCost,
    /// True when IMM could not deliver some EV's demand before departure.
    pub imm_truncated: bool,
    pub opt_net_usd: f64,
    pub opt_ev_cost_usd: f64,
    pub pct_imm: Option<f64>,
    pub pct_opt: Option<f64>,
    pub solver_status: MilpStatus,
    pub solver_gap: f64,
    pub solver_nodes: usize,
}

/// Runs the three policies on one day (single-shot day-0 solve for OPT).
pub fn compare_day(
    label: &str,
    snapshot: &ScenarioSnapshot,
    config: &SolverConfig,
) -> Result<ComparisonRow, SweepError> {
    let wrap = |source: FormulationError| SweepError::Day {
        label: label.to_string(),
        source,
    };
    let ar_profile = average_rate(snapshot);
    let imm_profile = immediate(snapshot);
    let ar = baseline_cost(&ar_profile, snapshot).map_err(|e| SweepError::Day {
        label: label.to_string(),
        source: FormulationError::DimensionMismatch(e.to_string()),
    })?;
    let imm = baseline_cost(&imm_profile, snapshot).map_err(|e| SweepError::Day {
        label: label.to_string(),
        source: FormulationError::DimensionMismatch(e.to_string()),
    })?;

    let (model, catalog) = build(snapshot, 0).map_err(wrap)?;
    let solution = solve_milp(&model, config)?;
    if !solution.status.has_incumbent() || solution.values.is_empty() {
        return Err(SweepError::NoIncumbent {
            label: label.to_string(),
            status: solution.status,
        });
    }
    let schedule = extract_schedule(&model, &solution, &catalog, snapshot).map_err(wrap)?;
    let opt = cost_breakdown(&schedule, snapshot).map_err(wrap)?;

    Ok(ComparisonRow {
        label: label.to_string(),
        pct_imm: percent_reduction(ar.net_usd, imm.net_usd),
        pct_opt: percent_reduction(ar.net_usd, opt.total_usd),
        ar,
        imm,
        imm_truncated: !imm_profile.truncated.is_empty(),
        opt_net_usd: opt.total_usd,
        opt_ev_cost_usd: opt.ev_cost_usd,
        solver_status: solution.status,
        solver_gap: solution.rel_gap,
        solver_nodes: solution.stats.nodes,
    })
}

/// Mean and standard deviation of one statistic over the sweep days.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(values: impl Iterator<Item = f64>) -> MeanSd {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        return MeanSd::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanSd { mean, sd }
}

/// Sweep summary: per-statistic means and SDs over the days. The percentage
/// rows are means of the daily percentages; `pct_of_mean_*` instead applies
/// the reduction formula to the mean net costs (a different statistic).
#[derive(Debug, Clone, Default)]
pub struct SweepSummary {
    pub days: usize,
    pub pv_sales: MeanSd,
    pub ev_cost_ar: MeanSd,
    pub ev_cost_imm: MeanSd,
    pub ev_cost_opt: MeanSd,
    pub net_ar: MeanSd,
    pub net_imm: MeanSd,
    pub net_opt: MeanSd,
    pub pct_imm: MeanSd,
    pub pct_opt: MeanSd,
    pub pct_of_mean_imm: Option<f64>,
    pub pct_of_mean_opt: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<ComparisonRow>,
    pub summary: SweepSummary,
}

impl SweepReport {
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            w,
            "label,pv_sales_usd,ev_cost_ar_usd,ev_cost_imm_usd,ev_cost_opt_usd,net_ar_usd,net_imm_usd,net_opt_usd,pct_imm,pct_opt,imm_truncated,solver_status,solver_gap,solver_nodes"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{},{},{},{:?},{:.3e},{}",
                r.label,
                r.ar.pv_sales_usd,
                r.ar.ev_cost_usd,
                r.imm.ev_cost_usd,
                r.opt_ev_cost_usd,
                r.ar.net_usd,
                r.imm.net_usd,
                r.opt_net_usd,
                r.pct_imm.map(|p| format!("{p:.6}")).unwrap_or_else(|| "undefined".into()),
                r.pct_opt.map(|p| format!("{p:.6}")).unwrap_or_else(|| "undefined".into()),
                r.imm_truncated,
                r.solver_status,
                r.solver_gap,
                r.solver_nodes
            )?;
        }
        Ok(())
    }

    /// The summary block: one row per statistic, mean and SD per policy.
    pub fn render_summary(&self) -> String {
        let s = &self.summary;
        let cell = |m: MeanSd| format!("{:>9.4}, {:>8.4}", m.mean, m.sd);
        let pct = |p: Option<f64>| match p {
            Some(p) => format!("{p:.2}%"),
            None => "undefined".into(),
        };
        format!(
            "days: {}\n\
             [mean, sd]          AR                    IMM                   OPT\n\
             pv_sales_usd   {:<21} {:<21} -\n\
             ev_cost_usd    {:<21} {:<21} {:<21}\n\
             net_usd        {:<21} {:<21} {:<21}\n\
             pct_vs_ar      -                     {:<21} {:<21}\n\
             pct_of_means   -                     {:<21} {:<21}\n",
            s.days,
            cell(s.pv_sales),
            cell(s.pv_sales),
            cell(s.ev_cost_ar),
            cell(s.ev_cost_imm),
            cell(s.ev_cost_opt),
            cell(s.net_ar),
            cell(s.net_imm),
            cell(s.net_opt),
            cell(s.pct_imm),
            cell(s.pct_opt),
            pct(s.pct_of_mean_imm),
            pct(s.pct_of_mean_opt),
        )
    }
}

/// Runs every day (in parallel when enabled) and assembles the summary.
pub fn run_sweep(days: Vec<DayInput>, config: &SolverConfig) -> Result<SweepReport, SweepError> {
    let config = config.clone();
    let results: Vec<Result<ComparisonRow, SweepError>> = par::par_map(days, move |day| {
        compare_day(&day.label, &day.snapshot, &config)
    });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }
    let summary = summarize(&rows);
    Ok(SweepReport { rows, summary })
}

pub fn summarize(rows: &[ComparisonRow]) -> SweepSummary {
    let net_ar = mean_sd(rows.iter().map(|r| r.ar.net_usd));
    let net_imm = mean_sd(rows.iter().map(|r| r.imm.net_usd));
    let net_opt = mean_sd(rows.iter().map(|r| r.opt_net_usd));
    SweepSummary {
        days: rows.len(),
        pv_sales: mean_sd(rows.iter().map(|r| r.ar.pv_sales_usd)),
        ev_cost_ar: mean_sd(rows.iter().map(|r| r.ar.ev_cost_usd)),
        ev_cost_imm: mean_sd(rows.iter().map(|r| r.imm.ev_cost_usd)),
        ev_cost_opt: mean_sd(rows.iter().map(|r| r.opt_ev_cost_usd)),
        net_ar,
        net_imm,
        net_opt,
        pct_imm: mean_sd(rows.iter().filter_map(|r| r.pct_imm)),
        pct_opt: mean_sd(rows.iter().filter_map(|r| r.pct_opt)),
        pct_of_mean_imm: percent_reduction(net_ar.mean, net_imm.mean),
        pct_of_mean_opt: percent_reduction(net_ar.mean, net_opt.mean),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn quick_config() -> SolverConfig {
        SolverConfig {
            rel_gap_tol: 1e-6,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn two_day_sweep_has_two_rows_and_a_summary() {
        let mut day2 = synth::mini_snapshot();
        for p in &mut day2.market.buy_price {
            *p *= 1.5;
        }
        for p in &mut day2.market.sell_price {
            *p *= 1.5;
        }
        let days = vec![
            DayInput {
                label: "day1".into(),
                snapshot: synth::mini_snapshot(),
            },
            DayInput {
                label: "day2".into(),
                snapshot: day2,
            },
        ];
        let report = run_sweep(days, &quick_config()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.summary.days, 2);
        assert!(report.summary.net_ar.sd > 0.0);
        let text = report.render_summary();
        assert!(text.contains("net_usd"));
    }

    #[test]
    fn optimizer_beats_the_baselines_on_the_mini_day() {
        let snap = synth::mini_snapshot();
        let row = compare_day("mini", &snap, &quick_config()).unwrap();
        assert!(row.opt_net_usd <= row.ar.net_usd + 1e-6, "{row:?}");
        assert!(row.pct_opt.unwrap() >= -1e-9);
    }

    #[test]
    fn identical_costs_give_zero_reductions() {
        let rows = vec![ComparisonRow {
            label: "same".into(),
            ar: BaselineCost {
                ev_cost_usd: 1.0,
                pv_sales_usd: 0.5,
                net_usd: 0.5,
            },
            imm: BaselineCost {
                ev_cost_usd: 1.0,
                pv_sales_usd: 0.5,
                net_usd: 0.5,
            },
            imm_truncated: false,
            opt_net_usd: 0.5,
            opt_ev_cost_usd: 1.0,
            pct_imm: percent_reduction(0.5, 0.5),
            pct_opt: percent_reduction(0.5, 0.5),
            solver_status: MilpStatus::Optimal,
            solver_gap: 0.0,
            solver_nodes: 1,
        }];
        let summary = summarize(&rows);
        assert_eq!(summary.pct_imm.mean, 0.0);
        assert_eq!(summary.pct_opt.mean, 0.0);
    }
}
