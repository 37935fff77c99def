//! Best-bound branch-and-bound over the LP relaxation.
//!
//! Nodes carry their accumulated binary fixings plus the parent's optimal
//! basis, so each node LP warm-starts a few pivots away from its parent.
//! Branching picks the most fractional free binary (ties to the lowest
//! variable id) and the queue always expands the node with the smallest LP
//! bound, which keeps runs reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::{Duration, Instant};

use super::model::{MilpError, MilpModel, VarId};
use super::simplex::{
    solve_bounded, standardize, BasisSnapshot, LpStatus, PivotLimits, Workspace,
};
use super::{SolverConfig, GAP_EPS};

/// Terminal state of a MILP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    /// Tree exhausted; the incumbent is optimal up to the feasibility tols.
    Optimal,
    /// Stopped because the relative gap reached the configured tolerance.
    GapLimit,
    /// Wall-clock budget ran out; the incumbent (if any) is the best found.
    TimeLimit,
    /// Node budget ran out; the incumbent (if any) is the best found.
    NodeLimit,
    Infeasible,
    Unbounded,
}

impl MilpStatus {
    pub fn has_incumbent(&self) -> bool {
        matches!(
            self,
            MilpStatus::Optimal | MilpStatus::GapLimit | MilpStatus::TimeLimit | MilpStatus::NodeLimit
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub nodes: usize,
    pub lp_iterations: usize,
    pub wall: Duration,
}

/// Incumbent, bound and gap certificate returned by [`solve_milp`].
#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: MilpStatus,
    /// Values per model variable; empty when no incumbent exists.
    pub values: Vec<f64>,
    /// Incumbent objective; NaN when no incumbent exists.
    pub objective: f64,
    /// Valid lower bound on the true optimum (minimization).
    pub best_bound: f64,
    /// |incumbent − bound| / max(|incumbent|, 1e-9).
    pub rel_gap: f64,
    pub stats: SolveStats,
}

impl MilpSolution {
    pub fn incumbent(&self) -> Result<&[f64], MilpError> {
        if self.status.has_incumbent() && !self.values.is_empty() {
            Ok(&self.values)
        } else {
            Err(MilpError::NoIncumbent)
        }
    }
}

/// Node interval between heuristic dives in the main loop.
const DIVE_PERIOD: usize = 256;
/// How many fractional binaries a dive step may audition when the most
/// fractional one cannot be fixed for free.
const DIVE_CANDIDATES: usize = 24;
/// A candidate child within this relative loss counts as good enough to
/// stop auditioning further candidates.
const DIVE_NEAR_LOSSLESS: f64 = 1e-7;

fn rel_gap(incumbent: f64, bound: f64) -> f64 {
    if !incumbent.is_finite() {
        return f64::INFINITY;
    }
    (incumbent - bound).abs() / incumbent.abs().max(GAP_EPS)
}

struct Node {
    bound: f64,
    id: u64,
    /// (binary var index, fixed value 0/1) along the path from the root.
    fixes: Rc<Vec<(usize, u8)>>,
    basis: Rc<BasisSnapshot>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest bound pops first.
        // Bound ties go to the deepest node (then the newest): on models
        // with a large optimal face a FIFO tie-break degenerates into
        // breadth-first search and never reaches integral leaves.
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.fixes.len().cmp(&other.fixes.len()))
            .then_with(|| self.id.cmp(&other.id))
    }
}

/// Solves a sealed MILP by branch-and-bound. Statuses `Optimal` and
/// `GapLimit` certify the relative gap against `config.rel_gap_tol`; the
/// resource-limit statuses carry the best incumbent found so far.
pub fn solve_milp(model: &MilpModel, config: &SolverConfig) -> Result<MilpSolution, MilpError> {
    debug_assert!(model.is_sealed());
    let start = Instant::now();
    let lp = standardize(model);
    let mut ws = Workspace::default();
    let limits = PivotLimits {
        max_pivots: config.max_pivots,
    };
    let binaries = model.free_binaries();

    let mut stats = SolveStats::default();
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut next_id: u64 = 0;

    let root = solve_bounded(&lp, &[], None, limits, &mut ws)?;
    stats.nodes = 1;
    stats.lp_iterations = root.iterations;
    match root.status {
        LpStatus::Infeasible => {
            return Ok(MilpSolution {
                status: MilpStatus::Infeasible,
                values: Vec::new(),
                objective: f64::NAN,
                best_bound: f64::INFINITY,
                rel_gap: f64::INFINITY,
                stats: finish_stats(stats, start),
            });
        }
        LpStatus::Unbounded => {
            return Ok(MilpSolution {
                status: MilpStatus::Unbounded,
                values: Vec::new(),
                objective: f64::NAN,
                best_bound: f64::NEG_INFINITY,
                rel_gap: f64::INFINITY,
                stats: finish_stats(stats, start),
            });
        }
        LpStatus::Optimal => {}
    }

    if let Some((obj, vals)) =
        dive_for_incumbent(&lp, &binaries, config, &[], &root, &mut ws, &mut stats, limits)?
    {
        incumbent = Some((obj, vals));
    }
    process_lp_result(
        &lp,
        &binaries,
        config,
        root,
        &Rc::new(Vec::new()),
        &mut heap,
        &mut next_id,
        &mut incumbent,
        &mut ws,
        &mut stats,
        limits,
    )?;

    let status;
    loop {
        let inc_obj = incumbent.as_ref().map(|(o, _)| *o).unwrap_or(f64::INFINITY);
        let bound = heap.peek().map(|n| n.bound).unwrap_or(inc_obj);
        if heap.is_empty() {
            status = if incumbent.is_some() {
                MilpStatus::Optimal
            } else {
                MilpStatus::Infeasible
            };
            break;
        }
        if incumbent.is_some() && rel_gap(inc_obj, bound.min(inc_obj)) <= config.rel_gap_tol {
            status = if rel_gap(inc_obj, bound.min(inc_obj)) <= GAP_EPS {
                MilpStatus::Optimal
            } else {
                MilpStatus::GapLimit
            };
            break;
        }
        if let Some(limit) = config.time_limit {
            if start.elapsed() > limit {
                status = MilpStatus::TimeLimit;
                break;
            }
        }
        if stats.nodes >= config.max_nodes {
            status = MilpStatus::NodeLimit;
            break;
        }

        let node = heap.pop().expect("checked non-empty");
        // A node queued before a better incumbent arrived may be prunable now.
        if node.bound >= inc_obj - GAP_EPS * inc_obj.abs().max(1.0) {
            continue;
        }

        let overrides = fixes_to_overrides(&node.fixes);
        let out = solve_bounded(&lp, &overrides, Some(&node.basis), limits, &mut ws)?;
        stats.nodes += 1;
        stats.lp_iterations += out.iterations;
        match out.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                // Cannot happen when the root was bounded, but stay safe.
                return Ok(MilpSolution {
                    status: MilpStatus::Unbounded,
                    values: Vec::new(),
                    objective: f64::NAN,
                    best_bound: f64::NEG_INFINITY,
                    rel_gap: f64::INFINITY,
                    stats: finish_stats(stats, start),
                });
            }
            LpStatus::Optimal => {}
        }
        // Periodic dives keep pulling the incumbent toward the (possibly
        // stuck) best bound; without them integral leaves are out of reach.
        if stats.nodes % DIVE_PERIOD == 0 {
            if let Some((obj, vals)) = dive_for_incumbent(
                &lp,
                &binaries,
                config,
                &node.fixes,
                &out,
                &mut ws,
                &mut stats,
                limits,
            )? {
                let better = incumbent.as_ref().map_or(true, |(best, _)| obj < *best);
                if better {
                    incumbent = Some((obj, vals));
                }
            }
        }
        process_lp_result(
            &lp,
            &binaries,
            config,
            out,
            &node.fixes,
            &mut heap,
            &mut next_id,
            &mut incumbent,
            &mut ws,
            &mut stats,
            limits,
        )?;
    }

    let (objective, values) = match incumbent {
        Some((obj, vals)) => (obj, vals),
        None => (f64::NAN, Vec::new()),
    };
    let best_bound = match status {
        MilpStatus::Optimal => objective,
        _ => heap
            .peek()
            .map(|n| n.bound)
            .unwrap_or(objective)
            .min(if objective.is_nan() {
                f64::INFINITY
            } else {
                objective
            }),
    };
    let gap = if status == MilpStatus::Optimal {
        0.0
    } else {
        rel_gap(objective, best_bound)
    };
    Ok(MilpSolution {
        status,
        values,
        objective,
        best_bound,
        rel_gap: gap,
        stats: finish_stats(stats, start),
    })
}

fn finish_stats(mut stats: SolveStats, start: Instant) -> SolveStats {
    stats.wall = start.elapsed();
    stats
}

/// Depth-first rounding dive used as the primal heuristic: repeatedly pin
/// the most fractional free binary to its nearest integer (ties round up)
/// and re-solve warm, until the point is integral or the dive dead-ends.
/// Pure best-bound search cannot reach integral leaves on models whose
/// optimal face is large, so incumbents come from here.
#[allow(clippy::too_many_arguments)]
fn dive_for_incumbent(
    lp: &super::simplex::StandardLp,
    binaries: &[VarId],
    config: &SolverConfig,
    base_fixes: &[(usize, u8)],
    start: &super::simplex::LpOutcome,
    ws: &mut Workspace,
    stats: &mut SolveStats,
    limits: PivotLimits,
) -> Result<Option<(f64, Vec<f64>)>, MilpError> {
    let mut fixes: Vec<(usize, u8)> = base_fixes.to_vec();
    let mut current = start.clone();
    for _ in 0..=binaries.len() {
        let mut cands: Vec<(f64, usize, f64)> = Vec::new();
        for &b in binaries {
            if fixes.iter().any(|&(v, _)| v == b.0) {
                continue;
            }
            let x = current.values[b.0];
            if (x - x.round()).abs() > config.int_tol {
                cands.push(((x - x.floor() - 0.5).abs(), b.0, x));
            }
        }
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if cands.is_empty() {
            // Integral: pin everything and polish, mirroring the main loop.
            let mut overrides = fixes_to_overrides(&fixes);
            for &b in binaries {
                if fixes.iter().any(|&(v, _)| v == b.0) {
                    continue;
                }
                let r = current.values[b.0].round();
                overrides.push((b.0, r, r));
            }
            let polished = solve_bounded(lp, &overrides, Some(&current.basis), limits, ws)?;
            stats.lp_iterations += polished.iterations;
            return Ok(if polished.status == LpStatus::Optimal {
                Some((polished.objective, polished.values))
            } else {
                Some((current.objective, current.values))
            });
        }
        // Evaluate both children of each candidate (most fractional first)
        // and keep the best child found. Nearest-rounding alone is a trap:
        // indicator binaries sit at value/capacity in the relaxation, and
        // rounding them down wipes out the flow they gate. Scanning stops
        // at the first candidate whose fix costs nothing.
        let scale = 1.0 + current.objective.abs();
        let lossless = current.objective + 1e-9 * scale;
        let near_lossless = current.objective + DIVE_NEAR_LOSSLESS * scale;
        let mut best: Option<(usize, u8, super::simplex::LpOutcome)> = None;
        'scan: for &(_, var, x) in cands.iter().take(DIVE_CANDIDATES) {
            let nearest = if x - x.floor() >= 0.5 { 1u8 } else { 0u8 };
            for val in [nearest, nearest ^ 1] {
                fixes.push((var, val));
                let out = solve_bounded(
                    lp,
                    &fixes_to_overrides(&fixes),
                    Some(&current.basis),
                    limits,
                    ws,
                )?;
                stats.lp_iterations += out.iterations;
                fixes.pop();
                if out.status == LpStatus::Optimal {
                    let better = match &best {
                        Some((_, _, b)) => out.objective < b.objective - 1e-12,
                        None => true,
                    };
                    if better {
                        let done = out.objective <= lossless;
                        best = Some((var, val, out));
                        if done {
                            break 'scan;
                        }
                    }
                }
            }
            // A near-lossless child is good enough; deeper scans only pay
            // off when every candidate costs real objective.
            if let Some((_, _, b)) = &best {
                if b.objective <= near_lossless {
                    break 'scan;
                }
            }
        }
        match best {
            Some((var, val, out)) => {
                fixes.push((var, val));
                current = out;
            }
            None => return Ok(None),
        }
    }
    Ok(None)
}

fn fixes_to_overrides(fixes: &[(usize, u8)]) -> Vec<(usize, f64, f64)> {
    fixes
        .iter()
        .map(|&(var, val)| (var, val as f64, val as f64))
        .collect()
}

/// Handles one solved LP node: either registers an integral incumbent
/// (after a polish re-solve with the binaries pinned) or pushes the two
/// children of the most fractional binary.
#[allow(clippy::too_many_arguments)]
fn process_lp_result(
    lp: &super::simplex::StandardLp,
    binaries: &[VarId],
    config: &SolverConfig,
    out: super::simplex::LpOutcome,
    fixes: &Rc<Vec<(usize, u8)>>,
    heap: &mut BinaryHeap<Node>,
    next_id: &mut u64,
    incumbent: &mut Option<(f64, Vec<f64>)>,
    ws: &mut Workspace,
    stats: &mut SolveStats,
    limits: PivotLimits,
) -> Result<(), MilpError> {
    let inc_obj = incumbent.as_ref().map(|(o, _)| *o).unwrap_or(f64::INFINITY);
    if out.objective >= inc_obj - GAP_EPS * inc_obj.abs().max(1.0) {
        return Ok(());
    }

    // Most fractional free binary, ties to the lowest id.
    let mut branch: Option<(usize, f64)> = None;
    for &b in binaries {
        if fixes.iter().any(|&(v, _)| v == b.0) {
            continue;
        }
        let x = out.values[b.0];
        let frac = (x - x.round()).abs();
        if frac > config.int_tol {
            let dist = (x - x.floor() - 0.5).abs();
            match branch {
                Some((_, best_dist)) if dist >= best_dist => {}
                _ => branch = Some((b.0, dist)),
            }
        }
    }

    match branch {
        None => {
            // Integral: pin every free binary to its rounded value and
            // re-solve so the incumbent is exactly integral.
            let mut overrides = fixes_to_overrides(fixes);
            for &b in binaries {
                if fixes.iter().any(|&(v, _)| v == b.0) {
                    continue;
                }
                let r = out.values[b.0].round();
                overrides.push((b.0, r, r));
            }
            let polished = solve_bounded(lp, &overrides, Some(&out.basis), limits, ws)?;
            stats.lp_iterations += polished.iterations;
            let (obj, values) = if polished.status == LpStatus::Optimal {
                (polished.objective, polished.values)
            } else {
                // Rounding killed feasibility (possible only inside the
                // integrality tolerance); keep the raw node point.
                (out.objective, out.values)
            };
            if obj < inc_obj {
                *incumbent = Some((obj, values));
            }
        }
        Some((var, _)) => {
            let basis = Rc::new(out.basis);
            for val in [0u8, 1u8] {
                let mut child = (**fixes).clone();
                child.push((var, val));
                heap.push(Node {
                    bound: out.objective,
                    id: *next_id,
                    fixes: Rc::new(child),
                    basis: Rc::clone(&basis),
                });
                *next_id += 1;
            }
        }
    }
    Ok(())
}

/// Exact optimum by solving the LP for every assignment of the free
/// binaries. The independent cross-check for [`solve_milp`]; refuses to run
/// beyond `max_binaries` assignments worth of work.
pub fn enumerate_oracle(model: &MilpModel, max_binaries: usize) -> Result<MilpSolution, MilpError> {
    debug_assert!(model.is_sealed());
    let start = Instant::now();
    let binaries = model.free_binaries();
    if binaries.len() > max_binaries {
        return Err(MilpError::TooManyBinaries(binaries.len(), max_binaries));
    }
    let lp = standardize(model);
    let limits = PivotLimits {
        max_pivots: 2_000_000,
    };
    let mut ws = Workspace::default();
    let mut stats = SolveStats::default();
    let mut best: Option<(f64, Vec<f64>)> = None;

    for mask in 0u64..(1u64 << binaries.len()) {
        let overrides: Vec<(usize, f64, f64)> = binaries
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let v = ((mask >> k) & 1) as f64;
                (b.0, v, v)
            })
            .collect();
        let out = solve_bounded(&lp, &overrides, None, limits, &mut ws)?;
        stats.nodes += 1;
        stats.lp_iterations += out.iterations;
        match out.status {
            LpStatus::Optimal => {
                if best.as_ref().map_or(true, |(obj, _)| out.objective < *obj) {
                    best = Some((out.objective, out.values));
                }
            }
            LpStatus::Unbounded => {
                return Ok(MilpSolution {
                    status: MilpStatus::Unbounded,
                    values: Vec::new(),
                    objective: f64::NAN,
                    best_bound: f64::NEG_INFINITY,
                    rel_gap: f64::INFINITY,
                    stats: finish_stats(stats, start),
                });
            }
            LpStatus::Infeasible => {}
        }
    }

    Ok(match best {
        Some((obj, values)) => MilpSolution {
            status: MilpStatus::Optimal,
            values,
            objective: obj,
            best_bound: obj,
            rel_gap: 0.0,
            stats: finish_stats(stats, start),
        },
        None => MilpSolution {
            status: MilpStatus::Infeasible,
            values: Vec::new(),
            objective: f64::NAN,
            best_bound: f64::INFINITY,
            rel_gap: f64::INFINITY,
            stats: finish_stats(stats, start),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::ConstraintSense;
    use crate::milp::{audit, solve_lp};

    fn knapsack() -> MilpModel {
        // minimize -(5a + 4b + 3c), binaries, 2a+3b+c <= 5, 4a+b+2c <= 11
        let mut m = MilpModel::new();
        let a = m.add_binary();
        let b = m.add_binary();
        let c = m.add_binary();
        m.add_objective_term(a, -5.0);
        m.add_objective_term(b, -4.0);
        m.add_objective_term(c, -3.0);
        m.add_row("w1", [(a, 2.0), (b, 3.0), (c, 1.0)], ConstraintSense::Le, 5.0);
        m.add_row("w2", [(a, 4.0), (b, 1.0), (c, 2.0)], ConstraintSense::Le, 11.0);
        m.seal().unwrap()
    }

    #[test]
    fn pair_of_binaries_capped() {
        // minimize -(x1 + x2), x1 + x2 <= 1.5 -> objective -1
        let mut m = MilpModel::new();
        let x1 = m.add_binary();
        let x2 = m.add_binary();
        m.add_objective_term(x1, -1.0);
        m.add_objective_term(x2, -1.0);
        m.add_row("cap", [(x1, 1.0), (x2, 1.0)], ConstraintSense::Le, 1.5);
        let m = m.seal().unwrap();
        let sol = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
        assert!((sol.objective + 1.0).abs() < 1e-9, "{}", sol.objective);
    }

    #[test]
    fn knapsack_optimum_is_minus_nine() {
        let m = knapsack();
        let sol = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
        assert!((sol.objective + 9.0).abs() < 1e-9, "{}", sol.objective);
        // a = b = 1, c = 0
        assert!((sol.values[0] - 1.0).abs() < 1e-9);
        assert!((sol.values[1] - 1.0).abs() < 1e-9);
        assert!(sol.values[2].abs() < 1e-9);
    }

    #[test]
    fn oracle_agrees_on_knapsack() {
        let m = knapsack();
        let oracle = enumerate_oracle(&m, 20).unwrap();
        assert_eq!(oracle.status, MilpStatus::Optimal);
        assert!((oracle.objective + 9.0).abs() < 1e-9);
        assert_eq!(oracle.rel_gap, 0.0);
    }

    #[test]
    fn all_continuous_model_matches_solve_lp() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 4.0);
        let y = m.add_continuous(0.0, 4.0);
        m.add_objective_term(x, -2.0);
        m.add_objective_term(y, -1.0);
        m.add_row("r", [(x, 1.0), (y, 1.0)], ConstraintSense::Le, 5.0);
        let m = m.seal().unwrap();
        let lp = solve_lp(&m).unwrap();
        let milp = solve_milp(&m, &SolverConfig::default()).unwrap();
        let oracle = enumerate_oracle(&m, 20).unwrap();
        assert_eq!(milp.status, MilpStatus::Optimal);
        assert!((milp.objective - lp.objective).abs() < 1e-9);
        assert!((oracle.objective - lp.objective).abs() < 1e-9);
    }

    #[test]
    fn infeasible_toy_reported_by_both() {
        let mut m = MilpModel::new();
        let b = m.add_binary();
        m.add_row("impossible", [(b, 1.0)], ConstraintSense::Ge, 2.0);
        let m = m.seal().unwrap();
        let sol = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, MilpStatus::Infeasible);
        let oracle = enumerate_oracle(&m, 20).unwrap();
        assert_eq!(oracle.status, MilpStatus::Infeasible);
    }

    #[test]
    fn oracle_refuses_too_many_binaries() {
        let mut m = MilpModel::new();
        for _ in 0..8 {
            m.add_binary();
        }
        let m = m.seal().unwrap();
        assert!(matches!(
            enumerate_oracle(&m, 4),
            Err(MilpError::TooManyBinaries(8, 4))
        ));
    }

    #[test]
    fn incumbent_passes_audit() {
        let m = knapsack();
        let sol = solve_milp(&m, &SolverConfig::default()).unwrap();
        let report = audit(&m, sol.incumbent().unwrap(), 1e-6).unwrap();
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn bound_never_exceeds_incumbent() {
        let m = knapsack();
        let sol = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert!(sol.best_bound <= sol.objective + 1e-9);
    }

    #[test]
    fn deterministic_across_runs() {
        let m = knapsack();
        let a = solve_milp(&m, &SolverConfig::default()).unwrap();
        let b = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.values, b.values);
        assert_eq!(a.stats.nodes, b.stats.nodes);
    }

    #[test]
    fn fixed_binaries_are_not_branched() {
        let mut m = MilpModel::new();
        let a = m.add_binary();
        let b = m.add_binary();
        m.fix_var(b, 0.0);
        m.add_objective_term(a, -1.0);
        m.add_objective_term(b, -10.0);
        let m = m.seal().unwrap();
        assert_eq!(m.free_binaries(), vec![a]);
        let sol = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert!((sol.objective + 1.0).abs() < 1e-9);
        assert_eq!(sol.values[1], 0.0);
    }
}
