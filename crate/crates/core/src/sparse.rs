//! Row-compressed sparse operators.

use std::fmt;
use std::io::Write;

use crate::exec::Exec;
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Laplace,
    Charge(usize),
    Grad(usize),
    Projection,
    Correction,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const AX: [&str; 3] = ["x", "y", "z"];
        match self {
            OperatorKind::Laplace => write!(f, "laplace"),
            OperatorKind::Charge(a) => write!(f, "charge_{}", AX[*a]),
            OperatorKind::Grad(a) => write!(f, "grad_{}", AX[*a]),
            OperatorKind::Projection => write!(f, "projection"),
            OperatorKind::Correction => write!(f, "correction"),
        }
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "laplace" => OperatorKind::Laplace,
            "charge_x" => OperatorKind::Charge(0),
            "charge_y" => OperatorKind::Charge(1),
            "charge_z" => OperatorKind::Charge(2),
            "grad_x" => OperatorKind::Grad(0),
            "grad_y" => OperatorKind::Grad(1),
            "grad_z" => OperatorKind::Grad(2),
            "projection" => OperatorKind::Projection,
            "correction" => OperatorKind::Correction,
            _ => return Err(format!("unknown operator kind `{s}`")),
        })
    }
}

/// CSR matrix. Columns are sorted and unique within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub kind: OperatorKind,
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Builds from unordered triplets; duplicate `(row, col)` entries are
    /// summed in input order, so the result does not depend on threading.
    pub fn from_triplets(
        kind: OperatorKind,
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        // stable: equal keys keep input order
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(
                r < n_rows && c < n_cols,
                "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
            );
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseOperator {
            kind,
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Positions of row `r` within the entry arrays.
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    /// Multiplies every row `r` by `s[r]`.
    pub fn scale_rows(&mut self, s: &[f64]) {
        for r in 0..self.n_rows {
            for v in &mut self.vals[self.row_ptr[r]..self.row_ptr[r + 1]] {
                *v *= s[r];
            }
        }
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push((c, r, v));
            }
        }
        SparseOperator::from_triplets(self.kind, self.n_cols, self.n_rows, t)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64], exec: Exec) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        exec.fill(y, |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
        });
    }

    pub fn apply(&self, x: &[f64], exec: Exec) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.apply_into(x, &mut y, exec);
        y
    }

    /// Applies the operator to each Cartesian component of a vector field.
    pub fn apply_vec(&self, x: &[Vec3], exec: Exec) -> Vec<Vec3> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![[0.0; 3]; self.n_rows];
        exec.fill(&mut y, |r| {
            let (cols, vals) = self.row(r);
            let mut acc = [0.0; 3];
            for (&c, &v) in cols.iter().zip(vals) {
                acc[0] += v * x[c][0];
                acc[1] += v * x[c][1];
                acc[2] += v * x[c][2];
            }
            acc
        });
        y
    }

    /// Largest absolute row sum, an estimate of the ∞-norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Writes `row col weight` lines.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# kind {} rows {} cols {} nnz {}",
            self.kind,
            self.n_rows,
            self.n_cols,
            self.nnz()
        )?;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{r} {c} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicates_are_summed() {
        let op = SparseOperator::from_triplets(
            OperatorKind::Laplace,
            2,
            3,
            vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5), (0, 0, -1.0)],
        );
        assert_eq!(op.nnz(), 3);
        assert_eq!(op.get(1, 2), 1.5);
        assert_eq!(op.apply(&[1.0, 1.0, 2.0], Exec::Sequential), vec![1.0, 3.0]);
    }

    #[test]
    fn triplet_dump_format() {
        let op = SparseOperator::from_triplets(OperatorKind::Grad(1), 1, 1, vec![(0, 0, 0.25)]);
        let mut buf = Vec::new();
        op.write_triplets(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# kind grad_y"));
        assert!(s.lines().nth(1).unwrap().starts_with("0 0 2.5"));
    }

    proptest! {
        #[test]
        fn transpose_is_adjoint(
            trip in proptest::collection::vec((0usize..7, 0usize..5, -1.0f64..1.0), 0..40),
            x in proptest::collection::vec(-1.0f64..1.0, 5),
            y in proptest::collection::vec(-1.0f64..1.0, 7),
        ) {
            let a = SparseOperator::from_triplets(OperatorKind::Correction, 7, 5, trip);
            let ax = a.apply(&x, Exec::Sequential);
            let aty = a.transpose().apply(&y, Exec::Parallel);
            let lhs: f64 = ax.iter().zip(&y).map(|(p, q)| p * q).sum();
            let rhs: f64 = aty.iter().zip(&x).map(|(p, q)| p * q).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
