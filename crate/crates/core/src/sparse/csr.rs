use crate::error::{Error, Result};
use crate::fpemu::PrecisionSpec;

/// Compressed sparse row matrix in carrier precision. Column indices are
/// sorted within each row and duplicates are rejected, so precision-aware
/// row dots are deterministic left-to-right sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Csr> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(Error::dim(format!(
                    "entry ({i}, {j}) outside {rows}x{cols} matrix"
                )));
            }
            if v != 0.0 {
                entries.push((i, j, v));
            }
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::invalid(format!(
                    "duplicate entry at ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(i, _, _) in &entries {
            row_ptr[i + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2).collect();
        Ok(Csr {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Csr {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Csr::from_triplets(n, n, &triplets).expect("identity")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.rows)
            .map(|i| self.row_ptr[i + 1] - self.row_ptr[i])
            .max()
            .unwrap_or(0)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.push((i, j, v));
            }
        }
        out
    }

    pub fn transpose(&self) -> Csr {
        let triplets: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Csr::from_triplets(self.cols, self.rows, &triplets).expect("transpose")
    }

    pub fn scale(&self, s: f64) -> Csr {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// Entrywise absolute value, same pattern.
    pub fn abs(&self) -> Csr {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = v.abs();
        }
        out
    }

    pub fn matvec_carrier(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `|A| |x|` in carrier precision; the componentwise scale every rounding
    /// bound is stated against.
    pub fn abs_matvec_carrier(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v.abs() * x[j].abs()).sum()
            })
            .collect()
    }

    /// Row-by-row sequential dots with every multiply and add in `prec`.
    pub fn matvec_prec(&self, x: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim(format!(
                "matvec: vector {} vs matrix cols {}",
                x.len(),
                self.cols
            )));
        }
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc = prec.add(acc, prec.mul(v, x[j])?)?;
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Sparse matrix product in carrier precision.
    pub fn mul(&self, rhs: &Csr) -> Result<Csr> {
        if self.cols != rhs.rows {
            return Err(Error::dim(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut triplets = Vec::new();
        let mut acc: Vec<f64> = vec![0.0; rhs.cols];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rcols, rvals) = rhs.row(k);
                for (&j, &b) in rcols.iter().zip(rvals) {
                    if acc[j] == 0.0 && !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if acc[j] != 0.0 {
                    triplets.push((i, j, acc[j]));
                }
                acc[j] = 0.0;
            }
            touched.clear();
        }
        Csr::from_triplets(self.rows, rhs.cols, &triplets)
    }

    /// Kronecker product, row-major block ordering.
    pub fn kron(&self, rhs: &Csr) -> Csr {
        let mut triplets = Vec::with_capacity(self.nnz() * rhs.nnz());
        for (i1, j1, v1) in self.triplets() {
            for (i2, j2, v2) in rhs.triplets() {
                triplets.push((i1 * rhs.rows + i2, j1 * rhs.cols + j2, v1 * v2));
            }
        }
        Csr::from_triplets(self.rows * rhs.rows, self.cols * rhs.cols, &triplets).expect("kron")
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }
}
