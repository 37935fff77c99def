//! Sparse MILP model container, validation, auditing and the plain-text dump.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

/// Index of a decision variable inside one [`MilpModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub(crate) struct Variable {
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for ConstraintSense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintSense::Le => write!(f, "<="),
            ConstraintSense::Eq => write!(f, "="),
            ConstraintSense::Ge => write!(f, ">="),
        }
    }
}

/// One linear row: sparse coefficients, a sense and a right-hand side.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub label: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: ConstraintSense,
    pub rhs: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error("variable {0} referenced but model has only {1} variables")]
    UnknownVariable(usize, usize),
    #[error("non-finite coefficient {value} in {place}")]
    NonFinite { place: String, value: f64 },
    #[error("variable x{0} has lower bound {1} above upper bound {2}")]
    CrossedBounds(usize, f64, f64),
    #[error("binary variable x{0} has bounds [{1}, {2}] outside [0, 1]")]
    BinaryBounds(usize, f64, f64),
    #[error("variable x{0} is free in both directions; give it at least one finite bound")]
    FreeVariable(usize),
    #[error("model is sealed; no further edits allowed")]
    Sealed,
    #[error("model has {0} binaries, more than the oracle limit of {1}")]
    TooManyBinaries(usize, usize),
    #[error("values slice has length {0}, model has {1} variables")]
    ValueLength(usize, usize),
    #[error("no incumbent available")]
    NoIncumbent,
    #[error("simplex stalled after {0} pivots")]
    Stalled(usize),
}

/// A minimization MILP over continuous and binary variables.
///
/// Rows and the objective hold sparse coefficient vectors. Binaries carry
/// bounds inside [0, 1]; fixing a binary (equal bounds) is the presolve hook
/// used by callers to pin variables outside their validity window, and fixed
/// binaries are never branched on.
#[derive(Debug, Clone, Default)]
pub struct MilpModel {
    pub(crate) vars: Vec<Variable>,
    pub(crate) rows: Vec<Constraint>,
    pub(crate) obj: Vec<f64>,
    pub(crate) obj_offset: f64,
    sealed: bool,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .count()
    }

    /// Binaries whose bounds have not been collapsed by the presolve hook.
    pub fn free_binaries(&self) -> Vec<VarId> {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary && v.lower < v.upper)
            .map(|(i, _)| VarId(i))
            .collect()
    }

    pub fn add_continuous(&mut self, lower: f64, upper: f64) -> VarId {
        debug_assert!(!self.sealed);
        let id = VarId(self.vars.len());
        self.vars.push(Variable {
            kind: VarKind::Continuous,
            lower,
            upper,
        });
        self.obj.push(0.0);
        id
    }

    pub fn add_binary(&mut self) -> VarId {
        debug_assert!(!self.sealed);
        let id = VarId(self.vars.len());
        self.vars.push(Variable {
            kind: VarKind::Binary,
            lower: 0.0,
            upper: 1.0,
        });
        self.obj.push(0.0);
        id
    }

    /// Presolve hook: collapse a variable's bounds to a single value.
    pub fn fix_var(&mut self, var: VarId, value: f64) {
        debug_assert!(!self.sealed);
        let v = &mut self.vars[var.0];
        v.lower = value;
        v.upper = value;
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) {
        debug_assert!(!self.sealed);
        let v = &mut self.vars[var.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn bounds(&self, var: VarId) -> (f64, f64) {
        let v = &self.vars[var.0];
        (v.lower, v.upper)
    }

    pub fn kind(&self, var: VarId) -> VarKind {
        self.vars[var.0].kind
    }

    pub fn is_fixed(&self, var: VarId) -> bool {
        let v = &self.vars[var.0];
        v.lower == v.upper
    }

    /// Adds a row. Duplicate variable entries are merged; terms on fixed
    /// variables stay in the row (the solver substitutes them out itself).
    pub fn add_row(
        &mut self,
        label: impl Into<String>,
        terms: impl IntoIterator<Item = (VarId, f64)>,
        sense: ConstraintSense,
        rhs: f64,
    ) {
        debug_assert!(!self.sealed);
        let mut merged: Vec<(VarId, f64)> = Vec::new();
        for (var, coeff) in terms {
            if coeff == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(v, _)| *v == var) {
                Some((_, c)) => *c += coeff,
                None => merged.push((var, coeff)),
            }
        }
        merged.sort_by_key(|(v, _)| *v);
        self.rows.push(Constraint {
            label: label.into(),
            terms: merged,
            sense,
            rhs,
        });
    }

    /// Adds `coeff` onto the objective coefficient of `var`.
    pub fn add_objective_term(&mut self, var: VarId, coeff: f64) {
        debug_assert!(!self.sealed);
        self.obj[var.0] += coeff;
    }

    /// Adds a constant onto the objective (the model minimizes).
    pub fn add_objective_offset(&mut self, offset: f64) {
        debug_assert!(!self.sealed);
        self.obj_offset += offset;
    }

    pub fn objective_offset(&self) -> f64 {
        self.obj_offset
    }

    pub fn objective_coeff(&self, var: VarId) -> f64 {
        self.obj[var.0]
    }

    pub fn row(&self, idx: usize) -> &Constraint {
        &self.rows[idx]
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    /// Evaluates the objective at a candidate point, offset included.
    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.obj_offset
            + self
                .obj
                .iter()
                .zip(values)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    /// Validates and freezes the model. Solvers only accept sealed models.
    pub fn seal(mut self) -> Result<MilpModel, MilpError> {
        for (i, v) in self.vars.iter().enumerate() {
            if !v.lower.is_finite() && v.lower != f64::NEG_INFINITY {
                return Err(MilpError::NonFinite {
                    place: format!("lower bound of x{i}"),
                    value: v.lower,
                });
            }
            if !v.upper.is_finite() && v.upper != f64::INFINITY {
                return Err(MilpError::NonFinite {
                    place: format!("upper bound of x{i}"),
                    value: v.upper,
                });
            }
            if v.lower > v.upper {
                return Err(MilpError::CrossedBounds(i, v.lower, v.upper));
            }
            if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
                return Err(MilpError::FreeVariable(i));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(MilpError::BinaryBounds(i, v.lower, v.upper));
            }
        }
        let nv = self.vars.len();
        for row in &self.rows {
            for &(var, coeff) in &row.terms {
                if var.0 >= nv {
                    return Err(MilpError::UnknownVariable(var.0, nv));
                }
                if !coeff.is_finite() {
                    return Err(MilpError::NonFinite {
                        place: format!("row '{}' coefficient on {var}", row.label),
                        value: coeff,
                    });
                }
            }
            if !row.rhs.is_finite() {
                return Err(MilpError::NonFinite {
                    place: format!("row '{}' rhs", row.label),
                    value: row.rhs,
                });
            }
        }
        for (i, c) in self.obj.iter().enumerate() {
            if !c.is_finite() {
                return Err(MilpError::NonFinite {
                    place: format!("objective coefficient of x{i}"),
                    value: *c,
                });
            }
        }
        self.sealed = true;
        Ok(self)
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Writes the model in the plain-text dump format: one variable or row
    /// per line, suitable for diffing and for feeding external solvers.
    pub fn write_dump(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "# milp dump v1")?;
        writeln!(w, "minimize offset {}", self.obj_offset)?;
        let obj_terms: Vec<String> = self
            .obj
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| format!("{c} x{i}"))
            .collect();
        writeln!(w, "obj: {}", obj_terms.join(" + "))?;
        for (i, v) in self.vars.iter().enumerate() {
            let kind = match v.kind {
                VarKind::Continuous => "continuous",
                VarKind::Binary => "binary",
            };
            writeln!(w, "var x{i} {kind} [{}, {}]", v.lower, v.upper)?;
        }
        for (i, row) in self.rows.iter().enumerate() {
            let terms: Vec<String> = row
                .terms
                .iter()
                .map(|(v, c)| format!("{c} {v}"))
                .collect();
            writeln!(
                w,
                "row r{i} {}: {} {} {}",
                row.label,
                terms.join(" + "),
                row.sense,
                row.rhs
            )?;
        }
        Ok(())
    }
}

/// A row whose residual exceeds the audit tolerance.
#[derive(Debug, Clone)]
pub struct RowViolation {
    pub row: usize,
    pub label: String,
    /// Positive amount by which the row misses its sense, in row units.
    pub residual: f64,
}

/// A variable outside its box by more than the audit tolerance.
#[derive(Debug, Clone)]
pub struct BoundViolation {
    pub var: VarId,
    pub residual: f64,
}

/// A binary away from both 0 and 1 by more than the audit tolerance.
#[derive(Debug, Clone)]
pub struct IntegralityViolation {
    pub var: VarId,
    pub value: f64,
}

/// Everything [`audit`] found wrong with a candidate point.
#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub rows: Vec<RowViolation>,
    pub bounds: Vec<BoundViolation>,
    pub integrality: Vec<IntegralityViolation>,
}

impl AuditReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.bounds.is_empty() && self.integrality.is_empty()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return writeln!(f, "audit clean");
        }
        for v in &self.rows {
            writeln!(f, "row r{} {}: residual {:.3e}", v.row, v.label, v.residual)?;
        }
        for v in &self.bounds {
            writeln!(f, "bound {}: residual {:.3e}", v.var, v.residual)?;
        }
        for v in &self.integrality {
            writeln!(f, "integrality {}: value {}", v.var, v.value)?;
        }
        Ok(())
    }
}

/// Checks a full candidate point against every row, bound and binary of the
/// model. Residuals are compared against `tol * max(1, |rhs|)` (rows) and
/// `tol * max(1, |bound|)` (boxes).
pub fn audit(model: &MilpModel, values: &[f64], tol: f64) -> Result<AuditReport, MilpError> {
    if values.len() != model.vars.len() {
        return Err(MilpError::ValueLength(values.len(), model.vars.len()));
    }
    let mut report = AuditReport::default();
    for (i, row) in model.rows.iter().enumerate() {
        let lhs: f64 = row.terms.iter().map(|(v, c)| c * values[v.0]).sum();
        let scale = 1.0_f64.max(row.rhs.abs());
        let residual = match row.sense {
            ConstraintSense::Le => lhs - row.rhs,
            ConstraintSense::Ge => row.rhs - lhs,
            ConstraintSense::Eq => (lhs - row.rhs).abs(),
        };
        if residual > tol * scale {
            report.rows.push(RowViolation {
                row: i,
                label: row.label.clone(),
                residual,
            });
        }
    }
    for (i, v) in model.vars.iter().enumerate() {
        let x = values[i];
        let below = v.lower - x;
        let above = x - v.upper;
        let resid = below.max(above);
        let scale = 1.0_f64
            .max(if v.lower.is_finite() { v.lower.abs() } else { 0.0 })
            .max(if v.upper.is_finite() { v.upper.abs() } else { 0.0 });
        if resid > tol * scale {
            report.bounds.push(BoundViolation {
                var: VarId(i),
                residual: resid,
            });
        }
        if v.kind == VarKind::Binary {
            let frac = (x - x.round()).abs();
            if frac > tol {
                report.integrality.push(IntegralityViolation {
                    var: VarId(i),
                    value: x,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_flags_row_violation_with_residual() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 10.0);
        m.add_row("cap", [(x, 1.0)], ConstraintSense::Le, 1.0);
        let m = m.seal().unwrap();
        let report = audit(&m, &[2.0], 1e-6).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!((report.rows[0].residual - 1.0).abs() < 1e-12);
        assert!(report.bounds.is_empty());
    }

    #[test]
    fn audit_flags_fractional_binary() {
        let mut m = MilpModel::new();
        let b = m.add_binary();
        let _ = b;
        let m = m.seal().unwrap();
        let report = audit(&m, &[0.5], 1e-6).unwrap();
        assert_eq!(report.integrality.len(), 1);
        assert_eq!(report.integrality[0].value, 0.5);
    }

    #[test]
    fn audit_clean_point_is_empty() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 5.0);
        let b = m.add_binary();
        m.add_row("mix", [(x, 1.0), (b, -5.0)], ConstraintSense::Le, 0.0);
        let m = m.seal().unwrap();
        let report = audit(&m, &[3.0, 1.0], 1e-6).unwrap();
        assert!(report.is_empty(), "{report}");
    }

    #[test]
    fn seal_rejects_crossed_bounds() {
        let mut m = MilpModel::new();
        m.add_continuous(2.0, 1.0);
        assert!(matches!(m.seal(), Err(MilpError::CrossedBounds(0, _, _))));
    }

    #[test]
    fn seal_rejects_non_finite_coeff() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 1.0);
        m.add_row("bad", [(x, f64::NAN)], ConstraintSense::Le, 0.0);
        assert!(matches!(m.seal(), Err(MilpError::NonFinite { .. })));
    }

    #[test]
    fn add_row_merges_duplicate_terms() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 1.0);
        m.add_row("dup", [(x, 1.0), (x, 2.0)], ConstraintSense::Le, 4.0);
        assert_eq!(m.rows[0].terms, vec![(x, 3.0)]);
    }

    #[test]
    fn dump_lists_vars_and_rows() {
        let mut m = MilpModel::new();
        let x = m.add_continuous(0.0, 5.0);
        let b = m.add_binary();
        m.add_objective_term(x, -1.0);
        m.add_row("link", [(x, 1.0), (b, -5.0)], ConstraintSense::Le, 0.0);
        let m = m.seal().unwrap();
        let mut out = Vec::new();
        m.write_dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("# milp dump v1"));
        assert!(text.contains("var x0 continuous [0, 5]"));
        assert!(text.contains("var x1 binary [0, 1]"));
        assert!(text.contains("row r0 link: 1 x0 + -5 x1 <= 0"));
    }
}
