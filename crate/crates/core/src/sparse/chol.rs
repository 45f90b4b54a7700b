//! Envelope (skyline) Cholesky factorization. The model problems and their
//! Galerkin coarse operators are banded, so the envelope carries no fill
//! outside the profile. This is the carrier-precision "exact" solve behind
//! coarse-grid corrections, reference solutions and inverse iterations.

use crate::error::{Error, Result};
use crate::sparse::csr::Csr;

#[derive(Debug, Clone)]
pub struct Envelope {
    n: usize,
    /// Leftmost stored column per row.
    first: Vec<usize>,
    /// Offset of each packed row in `data`; row `i` spans `i - first[i] + 1`
    /// entries ending at the diagonal.
    start: Vec<usize>,
    data: Vec<f64>,
}

impl Envelope {
    /// Factors a symmetric matrix given by its full (both triangles) CSR form.
    /// Fails with `NotSpd` on a nonpositive pivot.
    pub fn factor(a: &Csr) -> Result<Envelope> {
        if a.rows() != a.cols() {
            return Err(Error::dim("cholesky needs a square matrix"));
        }
        let n = a.rows();
        let mut first = vec![0usize; n];
        for i in 0..n {
            let (cols, _) = a.row(i);
            first[i] = cols.first().copied().unwrap_or(i).min(i);
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0f64; start[n]];
        // Scatter the lower triangle of A into the profile.
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    data[start[i] + (j - first[i])] = v;
                }
            }
        }
        let at = |data: &[f64], start: &[usize], first: &[usize], i: usize, j: usize| -> f64 {
            if j < first[i] {
                0.0
            } else {
                data[start[i] + (j - first[i])]
            }
        };
        for i in 0..n {
            for j in first[i]..=i {
                let lo = first[i].max(first[j]);
                let mut sum = at(&data, &start, &first, i, j);
                for k in lo..j {
                    sum -= at(&data, &start, &first, i, k) * at(&data, &start, &first, j, k);
                }
                if j < i {
                    let djj = data[start[j] + (j - first[j])];
                    data[start[i] + (j - first[i])] = sum / djj;
                } else {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::NotSpd(format!(
                            "nonpositive pivot {sum:e} at row {i}"
                        )));
                    }
                    data[start[i] + (i - first[i])] = sum.sqrt();
                }
            }
        }
        Ok(Envelope {
            n,
            first,
            start,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` by forward and backward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "cholesky solve dimension");
        let mut x = b.to_vec();
        // L y = b
        for i in 0..self.n {
            let base = self.start[i];
            let f = self.first[i];
            let mut sum = x[i];
            for k in f..i {
                sum -= self.data[base + (k - f)] * x[k];
            }
            x[i] = sum / self.data[base + (i - f)];
        }
        // L^T x = y, sweeping columns right-to-left.
        for j in (0..self.n).rev() {
            let base = self.start[j];
            let f = self.first[j];
            x[j] /= self.data[base + (j - f)];
            let xj = x[j];
            for k in f..j {
                x[k] -= self.data[base + (k - f)] * xj;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Csr {
        // Diagonally dominant symmetric band matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            for j in i + 1..(i + 4).min(n) {
                let v = rng.random::<f64>() - 0.5;
                t.push((i, j, v));
                t.push((j, i, v));
            }
        }
        for i in 0..n {
            t.push((i, i, 4.0 + rng.random::<f64>()));
        }
        Csr::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn solve_matches_dense_cholesky() {
        let a = random_spd(40, 3);
        let ch = Envelope::factor(&a).unwrap();
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let x = ch.solve(&b);
        let dense = a.to_dense();
        let xd = nalgebra::Cholesky::new(dense.clone())
            .unwrap()
            .solve(&nalgebra::DVector::from_column_slice(&b));
        for i in 0..40 {
            assert!((x[i] - xd[i]).abs() <= 1e-10 * xd.norm());
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = Csr::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)])
            .unwrap();
        assert!(matches!(Envelope::factor(&a), Err(Error::NotSpd(_))));
    }
}
