//! Bounded-variable primal simplex with a two-phase start.
//!
//! All rows are turned into equalities by one slack column each; the slack
//! bounds encode the sense (≤ gives [0, ∞), ≥ gives (−∞, 0], = gives
//! [0, 0]). Phase 1 minimizes the total bound infeasibility of the basic
//! variables (the composite method, so no artificial columns and any warm
//! basis is a legal starting point); phase 2 minimizes the real objective.
//! Pricing is Dantzig by default and switches to Bland's rule after a run of
//! pivots without progress, which is the anti-cycling safeguard.

use super::basis::{ColMatrix, Factorization};
use super::model::{ConstraintSense, MilpError, MilpModel};

/// Terminal state of one LP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of an LP solve. `values` covers the structural variables only and
/// is empty unless the status is [`LpStatus::Optimal`].
#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub(crate) basis: BasisSnapshot,
}

/// Compact restartable basis: which variable sits in each slot plus the
/// bound each nonbasic variable is parked at.
#[derive(Debug, Clone)]
pub(crate) struct BasisSnapshot {
    pub basic: Vec<u32>,
    pub at_upper: Vec<bool>,
}

/// Equality-form LP shared by every node of a branch-and-bound run.
#[derive(Debug)]
pub(crate) struct StandardLp {
    pub m: usize,
    pub n_struct: usize,
    pub cols: ColMatrix,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
    pub obj_offset: f64,
}

pub(crate) fn standardize(model: &MilpModel) -> StandardLp {
    let m = model.rows.len();
    let n = model.vars.len();
    let n_total = n + m;

    let mut col_ptr = Vec::with_capacity(n_total + 1);
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    col_ptr.push(0);

    // Structural columns, gathered from the row-major model.
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in model.rows.iter().enumerate() {
        for &(var, coeff) in &row.terms {
            by_col[var.0].push((i, coeff));
        }
    }
    for col in &by_col {
        for &(i, c) in col {
            row_idx.push(i);
            values.push(c);
        }
        col_ptr.push(row_idx.len());
    }

    let mut lower = Vec::with_capacity(n_total);
    let mut upper = Vec::with_capacity(n_total);
    for v in &model.vars {
        lower.push(v.lower);
        upper.push(v.upper);
    }

    // Slack columns.
    let mut rhs = Vec::with_capacity(m);
    for (i, row) in model.rows.iter().enumerate() {
        row_idx.push(i);
        values.push(1.0);
        col_ptr.push(row_idx.len());
        let (lo, hi) = match row.sense {
            ConstraintSense::Le => (0.0, f64::INFINITY),
            ConstraintSense::Ge => (f64::NEG_INFINITY, 0.0),
            ConstraintSense::Eq => (0.0, 0.0),
        };
        lower.push(lo);
        upper.push(hi);
        rhs.push(row.rhs);
    }

    let mut cost = vec![0.0; n_total];
    cost[..n].copy_from_slice(&model.obj);

    StandardLp {
        m,
        n_struct: n,
        cols: ColMatrix {
            col_ptr,
            row_idx,
            values,
        },
        cost,
        lower,
        upper,
        rhs,
        obj_offset: model.obj_offset,
    }
}

const FEAS_TOL: f64 = 1e-8;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-8;
const RATIO_SLACK: f64 = 1e-9;
/// Pivots without objective progress before Bland's rule takes over.
const STALL_LIMIT: usize = 64;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarStatus {
    Basic(u32),
    AtLower,
    AtUpper,
}

/// Scratch reused across the many solves of one branch-and-bound run.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    status: Vec<VarStatus>,
    basic: Vec<u32>,
    y: Vec<f64>,
    w: Vec<f64>,
    residual: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PivotLimits {
    pub max_pivots: usize,
}

enum PhaseEnd {
    Done,
    Infeasible,
    Unbounded,
    Stalled,
}

enum StepResult {
    Moved,
    Unbounded,
    BadPivot,
}

struct Engine<'a> {
    lp: &'a StandardLp,
    ws: &'a mut Workspace,
    factor: Factorization,
    iterations: usize,
    bland: bool,
    stall: usize,
    bad_pivots: usize,
    max_pivots: usize,
}

pub(crate) fn solve_bounded(
    lp: &StandardLp,
    overrides: &[(usize, f64, f64)],
    warm: Option<&BasisSnapshot>,
    limits: PivotLimits,
    ws: &mut Workspace,
) -> Result<LpOutcome, MilpError> {
    let n_total = lp.n_struct + lp.m;
    ws.lower.clear();
    ws.lower.extend_from_slice(&lp.lower);
    ws.upper.clear();
    ws.upper.extend_from_slice(&lp.upper);
    for &(var, lo, hi) in overrides {
        ws.lower[var] = lo;
        ws.upper[var] = hi;
    }
    ws.x.clear();
    ws.x.resize(n_total, 0.0);
    ws.status.clear();
    ws.status.resize(n_total, VarStatus::AtLower);
    ws.basic.clear();
    ws.y.clear();
    ws.y.resize(lp.m, 0.0);
    ws.w.clear();
    ws.w.resize(lp.m, 0.0);
    ws.residual.clear();
    ws.residual.resize(lp.m, 0.0);

    // Choose the starting basis: the caller's snapshot if usable, otherwise
    // the all-slack basis.
    let mut used_warm = false;
    if let Some(snap) = warm {
        if snap.basic.len() == lp.m && snap.at_upper.len() == n_total {
            let mut seen = vec![false; n_total];
            let mut ok = true;
            for &v in &snap.basic {
                let v = v as usize;
                if v >= n_total || seen[v] {
                    ok = false;
                    break;
                }
                seen[v] = true;
            }
            if ok {
                ws.basic.extend_from_slice(&snap.basic);
                for (slot, &v) in snap.basic.iter().enumerate() {
                    ws.status[v as usize] = VarStatus::Basic(slot as u32);
                }
                for j in 0..n_total {
                    if matches!(ws.status[j], VarStatus::Basic(_)) {
                        continue;
                    }
                    ws.status[j] = if snap.at_upper[j] && ws.upper[j].is_finite() {
                        VarStatus::AtUpper
                    } else if ws.lower[j].is_finite() {
                        VarStatus::AtLower
                    } else {
                        VarStatus::AtUpper
                    };
                }
                used_warm = true;
            }
        }
    }
    if !used_warm {
        for i in 0..lp.m {
            ws.basic.push((lp.n_struct + i) as u32);
            ws.status[lp.n_struct + i] = VarStatus::Basic(i as u32);
        }
        for j in 0..lp.n_struct {
            ws.status[j] = if ws.lower[j].is_finite() {
                VarStatus::AtLower
            } else {
                VarStatus::AtUpper
            };
        }
    }

    let basic_usize: Vec<usize> = ws.basic.iter().map(|&v| v as usize).collect();
    let factor = match Factorization::factorize(&lp.cols, &basic_usize) {
        Ok(f) => f,
        Err(_) if used_warm => {
            // The warm basis went singular under the new bounds; restart cold.
            return solve_bounded(lp, overrides, None, limits, ws);
        }
        Err(_) => return Err(MilpError::Stalled(0)),
    };

    let mut engine = Engine {
        lp,
        ws,
        factor,
        iterations: 0,
        bland: false,
        stall: 0,
        bad_pivots: 0,
        max_pivots: limits.max_pivots,
    };
    engine.set_nonbasic_values();
    engine.recompute_basic_values();

    match engine.run_phase(true) {
        PhaseEnd::Done => {}
        PhaseEnd::Infeasible => return Ok(engine.finish(LpStatus::Infeasible)),
        PhaseEnd::Unbounded | PhaseEnd::Stalled => {
            return Err(MilpError::Stalled(engine.iterations))
        }
    }
    match engine.run_phase(false) {
        PhaseEnd::Done => Ok(engine.finish(LpStatus::Optimal)),
        PhaseEnd::Unbounded => Ok(engine.finish(LpStatus::Unbounded)),
        PhaseEnd::Infeasible => Ok(engine.finish(LpStatus::Infeasible)),
        PhaseEnd::Stalled => Err(MilpError::Stalled(engine.iterations)),
    }
}

impl<'a> Engine<'a> {
    fn set_nonbasic_values(&mut self) {
        let n_total = self.lp.n_struct + self.lp.m;
        for j in 0..n_total {
            match self.ws.status[j] {
                VarStatus::AtLower => {
                    self.ws.x[j] = if self.ws.lower[j].is_finite() {
                        self.ws.lower[j]
                    } else {
                        0.0
                    }
                }
                VarStatus::AtUpper => {
                    self.ws.x[j] = if self.ws.upper[j].is_finite() {
                        self.ws.upper[j]
                    } else {
                        0.0
                    }
                }
                VarStatus::Basic(_) => {}
            }
        }
    }

    /// x_B = B⁻¹ (b − N x_N), refreshed from scratch.
    fn recompute_basic_values(&mut self) {
        let n_total = self.lp.n_struct + self.lp.m;
        self.ws.residual.copy_from_slice(&self.lp.rhs);
        for j in 0..n_total {
            if matches!(self.ws.status[j], VarStatus::Basic(_)) {
                continue;
            }
            let xj = self.ws.x[j];
            if xj != 0.0 {
                let (rows, vals) = self.lp.cols.col(j);
                for (&r, &a) in rows.iter().zip(vals) {
                    self.ws.residual[r] -= a * xj;
                }
            }
        }
        self.factor.ftran(&mut self.ws.residual);
        for slot in 0..self.lp.m {
            let v = self.ws.basic[slot] as usize;
            self.ws.x[v] = self.ws.residual[slot];
        }
    }

    fn refactorize(&mut self) -> bool {
        let basic_usize: Vec<usize> = self.ws.basic.iter().map(|&v| v as usize).collect();
        match Factorization::factorize(&self.lp.cols, &basic_usize) {
            Ok(f) => {
                self.factor = f;
                self.recompute_basic_values();
                true
            }
            Err(_) => false,
        }
    }

    /// Worst per-variable bound violation over the basics, scaled by
    /// max(1, |bound|). Phase 1 finishes when this drops to `FEAS_TOL`.
    fn max_scaled_infeasibility(&self) -> f64 {
        let mut worst = 0.0f64;
        for slot in 0..self.lp.m {
            let v = self.ws.basic[slot] as usize;
            let x = self.ws.x[v];
            let lo = self.ws.lower[v];
            let hi = self.ws.upper[v];
            if x < lo {
                worst = worst.max((lo - x) / lo.abs().max(1.0));
            } else if x > hi {
                worst = worst.max((x - hi) / hi.abs().max(1.0));
            }
        }
        worst
    }

    /// Raw total violation, used only for stall detection in phase 1.
    fn total_infeasibility(&self) -> f64 {
        let mut total = 0.0;
        for slot in 0..self.lp.m {
            let v = self.ws.basic[slot] as usize;
            let x = self.ws.x[v];
            if x < self.ws.lower[v] {
                total += self.ws.lower[v] - x;
            } else if x > self.ws.upper[v] {
                total += x - self.ws.upper[v];
            }
        }
        total
    }

    fn phase_objective(&self, phase1: bool) -> f64 {
        if phase1 {
            self.total_infeasibility()
        } else {
            let mut obj = 0.0;
            for (j, &c) in self.lp.cost.iter().enumerate() {
                if c != 0.0 {
                    obj += c * self.ws.x[j];
                }
            }
            obj
        }
    }

    /// One simplex phase. `phase1` drives the infeasibility objective.
    fn run_phase(&mut self, phase1: bool) -> PhaseEnd {
        let mut last_obj = f64::INFINITY;
        loop {
            if phase1 && self.max_scaled_infeasibility() <= FEAS_TOL {
                return PhaseEnd::Done;
            }
            if self.iterations >= self.max_pivots {
                return PhaseEnd::Stalled;
            }
            if self.factor.updates() >= REFACTOR_EVERY && !self.refactorize() {
                return PhaseEnd::Stalled;
            }

            // Dual direction: y = B⁻ᵀ g with g the phase gradient by slot.
            for slot in 0..self.lp.m {
                let v = self.ws.basic[slot] as usize;
                self.ws.y[slot] = if phase1 {
                    let x = self.ws.x[v];
                    let lo = self.ws.lower[v];
                    let hi = self.ws.upper[v];
                    if x < lo - FEAS_TOL * lo.abs().max(1.0) {
                        -1.0
                    } else if x > hi + FEAS_TOL * hi.abs().max(1.0) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    self.lp.cost[v]
                };
            }
            self.factor.btran(&mut self.ws.y);

            // Price the nonbasic columns. Phase 1 reduced cost is −y·a_j
            // (the derivative of the infeasibility sum); phase 2 is the
            // usual c_j − y·a_j.
            let n_total = self.lp.n_struct + self.lp.m;
            let mut entering = usize::MAX;
            let mut entering_dir = 1.0;
            let mut best_score = 0.0;
            for j in 0..n_total {
                let status = self.ws.status[j];
                if matches!(status, VarStatus::Basic(_)) || self.ws.lower[j] == self.ws.upper[j] {
                    continue;
                }
                let (rows, vals) = self.lp.cols.col(j);
                let mut d = if phase1 { 0.0 } else { self.lp.cost[j] };
                for (&r, &a) in rows.iter().zip(vals) {
                    d -= a * self.ws.y[r];
                }
                let (eligible, dir, score) = match status {
                    VarStatus::AtLower => (d < -DUAL_TOL, 1.0, -d),
                    VarStatus::AtUpper => (d > DUAL_TOL, -1.0, d),
                    VarStatus::Basic(_) => unreachable!(),
                };
                if !eligible {
                    continue;
                }
                if self.bland {
                    entering = j;
                    entering_dir = dir;
                    break;
                }
                if score > best_score {
                    best_score = score;
                    entering = j;
                    entering_dir = dir;
                }
            }

            if entering == usize::MAX {
                return if phase1 {
                    PhaseEnd::Infeasible
                } else {
                    PhaseEnd::Done
                };
            }

            // FTRAN the entering column.
            self.ws.w.iter_mut().for_each(|v| *v = 0.0);
            {
                let (rows, vals) = self.lp.cols.col(entering);
                for (&r, &a) in rows.iter().zip(vals) {
                    self.ws.w[r] = a;
                }
            }
            self.factor.ftran(&mut self.ws.w);

            match self.ratio_test_and_pivot(entering, entering_dir, phase1) {
                StepResult::Moved => {
                    self.bad_pivots = 0;
                }
                StepResult::Unbounded => {
                    return if phase1 {
                        PhaseEnd::Stalled
                    } else {
                        PhaseEnd::Unbounded
                    }
                }
                StepResult::BadPivot => {
                    self.bad_pivots += 1;
                    if self.bad_pivots > 3 || !self.refactorize() {
                        return PhaseEnd::Stalled;
                    }
                    continue;
                }
            }
            self.iterations += 1;

            // Stall bookkeeping drives the Bland switch.
            let obj = self.phase_objective(phase1);
            if obj < last_obj - 1e-12 * (1.0 + last_obj.abs()) {
                self.stall = 0;
                self.bland = false;
            } else {
                self.stall += 1;
                if self.stall >= STALL_LIMIT {
                    self.bland = true;
                }
            }
            last_obj = obj;
        }
    }

    fn ratio_test_and_pivot(&mut self, entering: usize, dir: f64, phase1: bool) -> StepResult {
        let m = self.lp.m;
        let mut theta = f64::INFINITY;
        let mut blocking: Option<(usize, f64)> = None; // (slot, bound the leaver lands on)
        let range = self.ws.upper[entering] - self.ws.lower[entering];
        if range.is_finite() {
            theta = range.max(0.0);
        }

        for slot in 0..m {
            let wv = self.ws.w[slot];
            if wv.abs() <= PIVOT_TOL {
                continue;
            }
            let v = self.ws.basic[slot] as usize;
            let x = self.ws.x[v];
            let lo = self.ws.lower[v];
            let hi = self.ws.upper[v];
            let delta = -dir * wv; // rate of change of this basic value
            let feas_lo = lo - FEAS_TOL * lo.abs().max(1.0);
            let feas_hi = hi + FEAS_TOL * hi.abs().max(1.0);

            let (limit, bound) = if phase1 && x < feas_lo {
                // Infeasible below: blocks only while climbing toward its
                // lower bound (the infeasibility gradient flips there).
                if delta > 0.0 {
                    ((lo - x) / delta, lo)
                } else {
                    continue;
                }
            } else if phase1 && x > feas_hi {
                if delta < 0.0 {
                    ((hi - x) / delta, hi)
                } else {
                    continue;
                }
            } else if delta > 0.0 {
                if hi.is_finite() {
                    (((hi - x) / delta).max(0.0), hi)
                } else {
                    continue;
                }
            } else if lo.is_finite() {
                (((lo - x) / delta).max(0.0), lo)
            } else {
                continue;
            };

            let limit = limit.max(0.0);
            if limit < theta - RATIO_SLACK {
                theta = limit;
                blocking = Some((slot, bound));
            } else if limit <= theta + RATIO_SLACK {
                // Near-tie. Prefer a pivot over a bound flip, then the larger
                // |w| for stability, then the lowest variable id.
                match blocking {
                    None => {
                        theta = theta.min(limit);
                        blocking = Some((slot, bound));
                    }
                    Some((bslot, _)) => {
                        let cur = self.ws.w[bslot].abs();
                        let cand = wv.abs();
                        let better = if self.bland {
                            (self.ws.basic[slot] as usize) < (self.ws.basic[bslot] as usize)
                        } else {
                            cand > cur * (1.0 + 1e-12)
                                || ((cand - cur).abs() <= cur * 1e-12
                                    && (self.ws.basic[slot] as usize)
                                        < (self.ws.basic[bslot] as usize))
                        };
                        if better {
                            theta = theta.min(limit);
                            blocking = Some((slot, bound));
                        }
                    }
                }
            }
        }

        if !theta.is_finite() {
            return StepResult::Unbounded;
        }
        let theta = theta.max(0.0);

        match blocking {
            None => {
                // Bound flip of the entering variable.
                let to_upper = dir > 0.0;
                for slot in 0..m {
                    let wv = self.ws.w[slot];
                    if wv != 0.0 {
                        let v = self.ws.basic[slot] as usize;
                        self.ws.x[v] -= dir * theta * wv;
                    }
                }
                self.ws.x[entering] = if to_upper {
                    self.ws.upper[entering]
                } else {
                    self.ws.lower[entering]
                };
                self.ws.status[entering] = if to_upper {
                    VarStatus::AtUpper
                } else {
                    VarStatus::AtLower
                };
                StepResult::Moved
            }
            Some((slot, bound)) => {
                if !self.factor.push_eta(slot, &self.ws.w) {
                    return StepResult::BadPivot;
                }
                for s in 0..m {
                    let wv = self.ws.w[s];
                    if wv != 0.0 {
                        let v = self.ws.basic[s] as usize;
                        self.ws.x[v] -= dir * theta * wv;
                    }
                }
                let leaving = self.ws.basic[slot] as usize;
                self.ws.x[leaving] = bound;
                self.ws.status[leaving] = if bound == self.ws.upper[leaving] {
                    VarStatus::AtUpper
                } else {
                    VarStatus::AtLower
                };
                let start = match self.ws.status[entering] {
                    VarStatus::AtLower => self.ws.lower[entering],
                    VarStatus::AtUpper => self.ws.upper[entering],
                    VarStatus::Basic(_) => unreachable!(),
                };
                let base = if start.is_finite() { start } else { 0.0 };
                self.ws.x[entering] = base + dir * theta;
                self.ws.basic[slot] = entering as u32;
                self.ws.status[entering] = VarStatus::Basic(slot as u32);
                StepResult::Moved
            }
        }
    }

    fn finish(&mut self, status: LpStatus) -> LpOutcome {
        // Refresh the point from a clean factorization so the caller sees
        // factorization-grade accuracy rather than accumulated pivot drift.
        if status == LpStatus::Optimal {
            self.refactorize();
        }
        let n_total = self.lp.n_struct + self.lp.m;
        let mut at_upper = vec![false; n_total];
        for (j, flag) in at_upper.iter_mut().enumerate() {
            *flag = matches!(self.ws.status[j], VarStatus::AtUpper);
        }
        let basis = BasisSnapshot {
            basic: self.ws.basic.clone(),
            at_upper,
        };
        let (values, objective) = if status == LpStatus::Optimal {
            let mut vals = Vec::with_capacity(self.lp.n_struct);
            for j in 0..self.lp.n_struct {
                let mut x = self.ws.x[j];
                // Snap microscopic drift back onto the box.
                if x < self.ws.lower[j] {
                    let s = FEAS_TOL * self.ws.lower[j].abs().max(1.0);
                    if self.ws.lower[j] - x <= s * 10.0 {
                        x = self.ws.lower[j];
                    }
                } else if x > self.ws.upper[j] {
                    let s = FEAS_TOL * self.ws.upper[j].abs().max(1.0);
                    if x - self.ws.upper[j] <= s * 10.0 {
                        x = self.ws.upper[j];
                    }
                }
                vals.push(x);
            }
            let obj = self.lp.obj_offset
                + vals
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| self.lp.cost[j] * x)
                    .sum::<f64>();
            (vals, obj)
        } else {
            (Vec::new(), f64::NAN)
        };
        LpOutcome {
            status,
            values,
            objective,
            iterations: self.iterations,
            basis,
        }
    }
}

/// Solves the LP relaxation of a sealed model (binaries relaxed to their
/// continuous bounds) with a bounded-variable two-phase primal simplex.
/// Errors with [`MilpError::Stalled`] if the pivot limit is exhausted
/// without reaching a terminal state.
pub fn solve_lp(model: &MilpModel) -> Result<LpOutcome, MilpError> {
    solve_lp_with_pivots(model, 2_000_000)
}

pub(crate) fn solve_lp_with_pivots(
    model: &MilpModel,
    max_pivots: usize,
) -> Result<LpOutcome, MilpError> {
    debug_assert!(model.is_sealed());
    let lp = standardize(model);
    let mut ws = Workspace::default();
    solve_bounded(&lp, &[], None, PivotLimits { max_pivots }, &mut ws)
}
