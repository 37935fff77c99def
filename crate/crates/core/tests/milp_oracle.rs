//! Cross-checks for the LP/MILP solver against two independent oracles:
//! brute-force vertex enumeration for pure LPs and exhaustive binary
//! enumeration for MILPs.

use evpark_core::milp::{
    audit, enumerate_oracle, solve_lp, solve_milp, ConstraintSense, LpStatus, MilpModel,
    MilpStatus, SolverConfig,
};
use proptest::prelude::*;

/// Dense description of a tiny LP used by the vertex oracle.
#[derive(Debug)]
struct TinyLp {
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<(Vec<f64>, ConstraintSense, f64)>,
    obj: Vec<f64>,
}

impl TinyLp {
    fn to_model(&self) -> MilpModel {
        let mut m = MilpModel::new();
        let vars: Vec<_> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| m.add_continuous(lo, hi))
            .collect();
        for (i, (coeffs, sense, rhs)) in self.rows.iter().enumerate() {
            let terms: Vec<_> = vars.iter().zip(coeffs).map(|(&v, &c)| (v, c)).collect();
            m.add_row(format!("r{i}"), terms, *sense, *rhs);
        }
        for (v, &c) in vars.iter().zip(&self.obj) {
            m.add_objective_term(*v, c);
        }
        m.seal().unwrap()
    }

    fn feasible(&self, x: &[f64], tol: f64) -> bool {
        for (j, &v) in x.iter().enumerate() {
            if v < self.lower[j] - tol || v > self.upper[j] + tol {
                return false;
            }
        }
        for (coeffs, sense, rhs) in &self.rows {
            let lhs: f64 = coeffs.iter().zip(x).map(|(c, v)| c * v).sum();
            let scale = 1.0_f64.max(rhs.abs());
            let ok = match sense {
                ConstraintSense::Le => lhs <= rhs + tol * scale,
                ConstraintSense::Ge => lhs >= rhs - tol * scale,
                ConstraintSense::Eq => (lhs - rhs).abs() <= tol * scale,
            };
            if !ok {
                return false;
            }
        }
        true
    }

    /// Exact optimum by enumerating candidate vertices: every choice of n
    /// active hyperplanes (rows as equalities plus bound faces), solved by
    /// Gaussian elimination and filtered by feasibility. With all variables
    /// boxed the optimum, when it exists, sits on one of these points.
    fn vertex_optimum(&self) -> Option<f64> {
        let n = self.lower.len();
        // Hyperplanes: (normal, offset)
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for (coeffs, _, rhs) in &self.rows {
            planes.push((coeffs.clone(), *rhs));
        }
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            planes.push((e.clone(), self.lower[j]));
            planes.push((e, self.upper[j]));
        }
        let mut best: Option<f64> = None;
        let k = planes.len();
        let mut idx = vec![0usize; n];
        // iterate over all n-subsets of planes
        fn subsets(
            k: usize,
            n: usize,
            start: usize,
            depth: usize,
            idx: &mut Vec<usize>,
            visit: &mut impl FnMut(&[usize]),
        ) {
            if depth == n {
                visit(idx);
                return;
            }
            for i in start..k {
                idx[depth] = i;
                subsets(k, n, i + 1, depth + 1, idx, visit);
            }
        }
        let mut visit = |chosen: &[usize]| {
            let mut a = vec![vec![0.0; n + 1]; n];
            for (r, &p) in chosen.iter().enumerate() {
                for j in 0..n {
                    a[r][j] = planes[p].0[j];
                }
                a[r][n] = planes[p].1;
            }
            if let Some(x) = gauss_solve(&mut a) {
                if self.feasible(&x, 1e-7) {
                    let obj: f64 = self.obj.iter().zip(&x).map(|(c, v)| c * v).sum();
                    best = Some(match best {
                        Some(b) => b.min(obj),
                        None => obj,
                    });
                }
            }
        };
        subsets(k, n, 0, 0, &mut idx, &mut visit);
        best
    }
}

/// Plain Gaussian elimination with partial pivoting on an n x (n+1) system.
fn gauss_solve(a: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..n).map(|r| a[r][n] / a[r][r]).collect())
}

fn sense_strategy() -> impl Strategy<Value = ConstraintSense> {
    prop_oneof![
        3 => Just(ConstraintSense::Le),
        2 => Just(ConstraintSense::Ge),
        1 => Just(ConstraintSense::Eq),
    ]
}

fn tiny_lp_strategy() -> impl Strategy<Value = TinyLp> {
    (1usize..=3).prop_flat_map(|n| {
        let bounds = prop::collection::vec((-3.0f64..=0.0, 0.5f64..=5.0), n);
        let rows = prop::collection::vec(
            (
                prop::collection::vec(-4.0f64..=4.0, n),
                sense_strategy(),
                -6.0f64..=6.0,
            ),
            0..=3,
        );
        let obj = prop::collection::vec(-5.0f64..=5.0, n);
        (bounds, rows, obj).prop_map(|(bounds, rows, obj)| {
            let (lower, upper): (Vec<_>, Vec<_>) = bounds.into_iter().unzip();
            TinyLp {
                lower,
                upper,
                rows,
                obj,
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn simplex_matches_vertex_enumeration(lp in tiny_lp_strategy()) {
        let model = lp.to_model();
        let out = solve_lp(&model).unwrap();
        let oracle = lp.vertex_optimum();
        match (out.status, oracle) {
            (LpStatus::Optimal, Some(best)) => {
                let tol = 1e-6 * best.abs().max(1.0);
                prop_assert!((out.objective - best).abs() <= tol,
                    "simplex {} vs vertex oracle {}", out.objective, best);
                let report = audit(&model, &out.values, 1e-6).unwrap();
                prop_assert!(report.is_empty(), "{report}");
            }
            (LpStatus::Infeasible, None) => {}
            (status, oracle) => {
                prop_assert!(false, "status {status:?} vs oracle {oracle:?}");
            }
        }
    }
}

/// Random small MILPs: boxed continuous variables plus a handful of
/// binaries, random sparse-ish rows.
fn tiny_milp_strategy() -> impl Strategy<Value = (usize, usize, TinyLp)> {
    (0usize..=6, 0usize..=3).prop_flat_map(|(nb, nc)| {
        let n = (nb + nc).max(1);
        let nb = nb.min(n);
        let bounds = prop::collection::vec((Just(0.0f64), 0.5f64..=4.0), n - nb);
        let rows = prop::collection::vec(
            (
                prop::collection::vec(-4.0f64..=4.0, n),
                sense_strategy(),
                -5.0f64..=7.0,
            ),
            0..=4,
        );
        let obj = prop::collection::vec(-5.0f64..=5.0, n);
        (Just(nb), bounds, rows, obj).prop_map(move |(nb, bounds, rows, obj)| {
            let mut lower = vec![0.0; nb];
            let mut upper = vec![1.0; nb];
            for (lo, hi) in bounds {
                lower.push(lo);
                upper.push(hi);
            }
            (
                nb,
                n,
                TinyLp {
                    lower,
                    upper,
                    rows,
                    obj,
                },
            )
        })
    })
}

fn build_milp(nb: usize, lp: &TinyLp) -> MilpModel {
    let mut m = MilpModel::new();
    let mut vars = Vec::new();
    for j in 0..lp.lower.len() {
        if j < nb {
            vars.push(m.add_binary());
        } else {
            vars.push(m.add_continuous(lp.lower[j], lp.upper[j]));
        }
    }
    for (i, (coeffs, sense, rhs)) in lp.rows.iter().enumerate() {
        let terms: Vec<_> = vars.iter().zip(coeffs).map(|(&v, &c)| (v, c)).collect();
        m.add_row(format!("r{i}"), terms, *sense, *rhs);
    }
    for (v, &c) in vars.iter().zip(&lp.obj) {
        m.add_objective_term(*v, c);
    }
    m.seal().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn branch_and_bound_matches_enumeration((nb, _n, lp) in tiny_milp_strategy()) {
        let model = build_milp(nb, &lp);
        let config = SolverConfig {
            rel_gap_tol: 1e-9,
            ..SolverConfig::default()
        };
        let bnb = solve_milp(&model, &config).unwrap();
        let oracle = enumerate_oracle(&model, 20).unwrap();
        match (bnb.status, oracle.status) {
            (MilpStatus::Optimal | MilpStatus::GapLimit, MilpStatus::Optimal) => {
                let tol = 1e-6 * oracle.objective.abs().max(1.0);
                prop_assert!((bnb.objective - oracle.objective).abs() <= tol,
                    "bnb {} vs oracle {}", bnb.objective, oracle.objective);
                prop_assert!(bnb.best_bound <= bnb.objective + 1e-9);
                let report = audit(&model, bnb.incumbent().unwrap(), 1e-6).unwrap();
                prop_assert!(report.is_empty(), "{report}");
            }
            (MilpStatus::Infeasible, MilpStatus::Infeasible) => {}
            (a, b) => prop_assert!(false, "bnb {a:?} vs oracle {b:?}"),
        }
    }
}
