//! Generic sparse MILP representation and solver.
//!
//! The pieces fit together as follows: [`MilpModel`] holds variables, rows
//! and the objective; [`solve_lp`] relaxes binaries and runs a
//! bounded-variable two-phase primal simplex; [`solve_milp`] wraps the
//! simplex in best-bound branch-and-bound; [`enumerate_oracle`] solves the
//! LP for every binary assignment and serves as the exact cross-check;
//! [`audit`] re-verifies any candidate point against the sealed model.

mod basis;
mod bnb;
mod model;
mod simplex;

pub use bnb::{enumerate_oracle, solve_milp, MilpSolution, MilpStatus, SolveStats};
pub use model::{
    audit, AuditReport, BoundViolation, Constraint, ConstraintSense, IntegralityViolation,
    MilpError, MilpModel, RowViolation, VarId, VarKind,
};
pub use simplex::{solve_lp, LpOutcome, LpStatus};

use std::time::Duration;

/// Relative-gap certificate: |incumbent - bound| / max(|incumbent|, eps).
pub const GAP_EPS: f64 = 1e-9;

/// Branching rule for binaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchRule {
    /// Branch on the binary whose LP value is closest to 0.5; ties go to the
    /// lowest variable id.
    #[default]
    MostFractional,
}

/// Node selection order for the branch-and-bound queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeSelection {
    /// Always expand the open node with the smallest LP bound.
    #[default]
    BestBound,
}

/// Solver knobs. Defaults reproduce the gap target used throughout the
/// acceptance suite (0.015% relative).
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Terminate once |incumbent - bound| / max(|incumbent|, eps) drops
    /// below this.
    pub rel_gap_tol: f64,
    /// Wall-clock budget; `None` means unlimited.
    pub time_limit: Option<Duration>,
    /// Maximum branch-and-bound nodes processed.
    pub max_nodes: usize,
    pub branch_rule: BranchRule,
    pub node_selection: NodeSelection,
    /// Row residual / bound tolerance, scaled by max(1, |rhs|).
    pub feasibility_tol: f64,
    /// A binary counts as integral when within this of 0 or 1.
    pub int_tol: f64,
    /// Pivot ceiling per LP solve before reporting a numerical stall.
    pub max_pivots: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_gap_tol: 1.5e-4,
            time_limit: None,
            max_nodes: 1_000_000,
            branch_rule: BranchRule::MostFractional,
            node_selection: NodeSelection::BestBound,
            feasibility_tol: 1e-6,
            int_tol: 1e-6,
            max_pivots: 2_000_000,
        }
    }
}
