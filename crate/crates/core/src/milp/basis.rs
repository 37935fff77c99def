//! Sparse LU factorization of the simplex basis, with product-form updates.
//!
//! The basis matrix B collects one column per basic variable. We factor
//! P·B·Q = L·U by left-looking Gilbert–Peierls elimination: columns are
//! processed in a static order (ascending nonzero count, a cheap Markowitz
//! stand-in) and the pivot row of each column is chosen by magnitude.
//! Between refactorizations, basis exchanges append product-form eta
//! vectors; solves apply the LU part first and then the eta file.
//!
//! Index spaces: FTRAN input vectors live in row space and outputs in
//! basis-slot space (one slot per row, holding one basic variable); BTRAN is
//! the opposite. Both solves work on dense scratch of length m, which is
//! cheap at the sizes this crate produces.

/// Column-major sparse matrix over all simplex columns (structural + slack).
#[derive(Debug, Clone)]
pub(crate) struct ColMatrix {
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl ColMatrix {
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let lo = self.col_ptr[j];
        let hi = self.col_ptr[j + 1];
        (&self.row_idx[lo..hi], &self.values[lo..hi])
    }
}

/// One product-form update: the basic variable at `slot` was replaced and
/// `w = B⁻¹ a_entering` (in slot space) recorded at that moment.
struct Eta {
    slot: usize,
    pivot: f64,
    /// Nonzeros of w excluding the pivot slot.
    terms: Vec<(usize, f64)>,
}

pub(crate) struct Factorization {
    m: usize,
    /// prow[k] = original row pivotal at elimination step k.
    prow: Vec<usize>,
    /// pinv[row] = elimination step at which `row` became pivotal.
    pinv: Vec<usize>,
    /// qcol[k] = basis slot whose column was eliminated at step k.
    qcol: Vec<usize>,
    /// L multipliers per step, entries (original row, multiplier).
    lcols: Vec<Vec<(usize, f64)>>,
    /// U off-diagonal entries per step, entries (earlier step, value).
    ucols: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
    etas: Vec<Eta>,
    // scratch buffers reused across solves
    work: Vec<f64>,
    stamp: Vec<u32>,
    stamp_gen: u32,
    topo: Vec<usize>,
    dfs_stack: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Singular;

const PIVOT_ABS_TOL: f64 = 1e-11;
const DROP_TOL: f64 = 1e-14;

impl Factorization {
    /// Factors the basis given by `basic` (variable index per slot).
    pub fn factorize(cols: &ColMatrix, basic: &[usize]) -> Result<Self, Singular> {
        let m = basic.len();
        let sentinel = usize::MAX;
        let mut f = Factorization {
            m,
            prow: vec![sentinel; m],
            pinv: vec![sentinel; m],
            qcol: vec![0; m],
            lcols: vec![Vec::new(); m],
            ucols: vec![Vec::new(); m],
            diag: vec![0.0; m],
            etas: Vec::new(),
            work: vec![0.0; m],
            stamp: vec![0; m],
            stamp_gen: 0,
            topo: Vec::with_capacity(m),
            dfs_stack: Vec::new(),
        };

        // Static column order: fewest nonzeros first, ties by slot.
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&slot| {
            let j = basic[slot];
            (cols.col_ptr[j + 1] - cols.col_ptr[j], slot)
        });

        let mut x = vec![0.0; m];
        let mut pattern: Vec<usize> = Vec::with_capacity(64);

        for (k, &slot) in order.iter().enumerate() {
            let (rows, vals) = cols.col(basic[slot]);

            // Symbolic: reach set of the column pattern over the L graph,
            // in topological order.
            f.next_stamp();
            f.topo.clear();
            for &r in rows {
                f.dfs_reach(r);
            }

            // Numeric: scatter, then eliminate along the topo order.
            for (&r, &v) in rows.iter().zip(vals) {
                x[r] = v;
            }
            for idx in (0..f.topo.len()).rev() {
                let r = f.topo[idx];
                let step = f.pinv[r];
                if step == sentinel {
                    continue;
                }
                let xr = x[r];
                if xr != 0.0 {
                    for &(rr, mult) in &f.lcols[step] {
                        x[rr] -= mult * xr;
                    }
                }
            }

            // Partition into U entries (pivotal rows) and pivot candidates.
            pattern.clear();
            pattern.extend(f.topo.iter().copied());
            let mut best_row = sentinel;
            let mut best_abs = 0.0;
            for &r in &pattern {
                if f.pinv[r] == sentinel {
                    let a = x[r].abs();
                    if a > best_abs || (a == best_abs && best_row != sentinel && r < best_row) {
                        best_abs = a;
                        best_row = r;
                    }
                }
            }
            if best_row == sentinel || best_abs < PIVOT_ABS_TOL {
                for &r in &pattern {
                    x[r] = 0.0;
                }
                return Err(Singular);
            }

            let pivot = x[best_row];
            f.diag[k] = pivot;
            f.prow[k] = best_row;
            f.qcol[k] = slot;

            let mut lcol = Vec::new();
            let mut ucol = Vec::new();
            for &r in &pattern {
                let v = x[r];
                x[r] = 0.0;
                if v.abs() <= DROP_TOL {
                    continue;
                }
                let step = f.pinv[r];
                if step != sentinel {
                    ucol.push((step, v));
                } else if r != best_row {
                    lcol.push((r, v / pivot));
                }
            }
            f.pinv[best_row] = k;
            f.lcols[k] = lcol;
            f.ucols[k] = ucol;
        }
        Ok(f)
    }

    fn next_stamp(&mut self) {
        self.stamp_gen = self.stamp_gen.wrapping_add(1);
        if self.stamp_gen == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.stamp_gen = 1;
        }
    }

    /// Iterative DFS over the L graph; appends finished nodes to `topo`.
    fn dfs_reach(&mut self, start: usize) {
        let gen = self.stamp_gen;
        if self.stamp[start] == gen {
            return;
        }
        self.dfs_stack.clear();
        self.dfs_stack.push((start, 0));
        self.stamp[start] = gen;
        while let Some(&mut (node, ref mut child)) = self.dfs_stack.last_mut() {
            let step = self.pinv[node];
            let children = if step == usize::MAX {
                &[][..]
            } else {
                &self.lcols[step][..]
            };
            if *child < children.len() {
                let next = children[*child].0;
                *child += 1;
                if self.stamp[next] != gen {
                    self.stamp[next] = gen;
                    self.dfs_stack.push((next, 0));
                }
            } else {
                self.topo.push(node);
                self.dfs_stack.pop();
            }
        }
    }

    pub fn updates(&self) -> usize {
        self.etas.len()
    }

    /// Solves B·x = b. On entry `v` is indexed by row; on exit by slot.
    pub fn ftran(&mut self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.m);
        // L z = P b (work in original row space)
        for k in 0..self.m {
            let zk = v[self.prow[k]];
            if zk != 0.0 {
                for &(r, mult) in &self.lcols[k] {
                    v[r] -= mult * zk;
                }
            }
        }
        // U y = z (step space)
        let work = &mut self.work;
        for k in 0..self.m {
            work[k] = v[self.prow[k]];
        }
        for k in (0..self.m).rev() {
            let yk = work[k] / self.diag[k];
            work[k] = yk;
            if yk != 0.0 {
                for &(j, uval) in &self.ucols[k] {
                    work[j] -= uval * yk;
                }
            }
        }
        // scatter into slot space
        for k in 0..self.m {
            v[self.qcol[k]] = work[k];
        }
        // eta file, oldest first
        for eta in &self.etas {
            let xp = v[eta.slot] / eta.pivot;
            if xp != 0.0 {
                for &(slot, wval) in &eta.terms {
                    v[slot] -= wval * xp;
                }
            }
            v[eta.slot] = xp;
        }
    }

    /// Solves Bᵀ·y = c. On entry `v` is indexed by slot; on exit by row.
    pub fn btran(&mut self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.m);
        // eta transposes, newest first
        for eta in self.etas.iter().rev() {
            let mut acc = v[eta.slot];
            for &(slot, wval) in &eta.terms {
                acc -= wval * v[slot];
            }
            v[eta.slot] = acc / eta.pivot;
        }
        // Uᵀ w = c' with c'[k] = v[qcol[k]]
        let work = &mut self.work;
        for k in 0..self.m {
            work[k] = v[self.qcol[k]];
        }
        for k in 0..self.m {
            let mut acc = work[k];
            for &(j, uval) in &self.ucols[k] {
                acc -= uval * work[j];
            }
            work[k] = acc / self.diag[k];
        }
        // Lᵀ u = w, then permute back to row space
        for k in (0..self.m).rev() {
            let mut acc = work[k];
            let step_row = self.prow[k];
            for &(r, mult) in &self.lcols[k] {
                // r is pivotal at a later step (or was eliminated), so its
                // value is already final in row space.
                acc -= mult * v[r];
            }
            v[step_row] = acc;
            work[k] = acc;
        }
    }

    /// Records a basis exchange at `slot`; `w` must be the FTRAN'd entering
    /// column (slot space) before any modification. Returns false when the
    /// pivot element is too small to be trusted.
    pub fn push_eta(&mut self, slot: usize, w: &[f64]) -> bool {
        let pivot = w[slot];
        if pivot.abs() < PIVOT_ABS_TOL {
            return false;
        }
        let mut terms = Vec::new();
        for (s, &val) in w.iter().enumerate() {
            if s != slot && val.abs() > DROP_TOL {
                terms.push((s, val));
            }
        }
        self.etas.push(Eta {
            slot,
            pivot,
            terms,
        });
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_to_colmatrix(dense: &[Vec<f64>]) -> ColMatrix {
        let m = dense.len();
        let n = dense[0].len();
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            for (i, row) in dense.iter().enumerate().take(m) {
                if row[j] != 0.0 {
                    row_idx.push(i);
                    values.push(row[j]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        ColMatrix {
            col_ptr,
            row_idx,
            values,
        }
    }

    #[test]
    fn ftran_btran_roundtrip_small() {
        // B = [[2, 1, 0], [0, 3, 1], [1, 0, 4]]
        let dense = vec![
            vec![2.0, 1.0, 0.0],
            vec![0.0, 3.0, 1.0],
            vec![1.0, 0.0, 4.0],
        ];
        let cols = dense_to_colmatrix(&dense);
        let basic = vec![0, 1, 2];
        let mut f = Factorization::factorize(&cols, &basic).unwrap();

        // FTRAN: B x = b with b = (5, 10, 9)^T; check by multiplying back.
        let mut v = vec![5.0, 10.0, 9.0];
        f.ftran(&mut v);
        for i in 0..3 {
            let mut acc = 0.0;
            for (slot, &xv) in v.iter().enumerate() {
                acc += dense[i][basic[slot]] * xv;
            }
            assert!((acc - [5.0, 10.0, 9.0][i]).abs() < 1e-10);
        }

        // BTRAN: B^T y = c with c = (1, 2, 3)^T per slot.
        let mut c = vec![1.0, 2.0, 3.0];
        f.btran(&mut c);
        for (slot, want) in [(0usize, 1.0), (1, 2.0), (2, 3.0)] {
            let j = basic[slot];
            let mut acc = 0.0;
            for (i, row) in dense.iter().enumerate() {
                acc += row[j] * c[i];
            }
            assert!((acc - want).abs() < 1e-10, "slot {slot}");
        }
    }

    #[test]
    fn eta_update_matches_refactorization() {
        // Start with identity basis of a 3x4 system, then swap in column 3.
        let dense = vec![
            vec![1.0, 0.0, 0.0, 2.0],
            vec![0.0, 1.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, -1.0],
        ];
        let cols = dense_to_colmatrix(&dense);
        let mut f = Factorization::factorize(&cols, &[0, 1, 2]).unwrap();

        // Entering column 3 replaces slot 0.
        let mut w = vec![0.0; 3];
        let (rows, vals) = cols.col(3);
        for (&r, &v) in rows.iter().zip(vals) {
            w[r] = v;
        }
        f.ftran(&mut w);
        assert!(f.push_eta(0, &w));

        let new_basic = vec![3usize, 1, 2];
        let mut fresh = Factorization::factorize(&cols, &new_basic).unwrap();

        let mut a = vec![3.0, -1.0, 4.0];
        let mut b = a.clone();
        f.ftran(&mut a);
        fresh.ftran(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }

        let mut c = vec![0.5, 2.0, -1.0];
        let mut d = c.clone();
        f.btran(&mut c);
        fresh.btran(&mut d);
        for (x, y) in c.iter().zip(&d) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_basis_is_detected() {
        let dense = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let cols = dense_to_colmatrix(&dense);
        assert!(Factorization::factorize(&cols, &[0, 1]).is_err());
    }
}
