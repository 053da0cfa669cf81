//! Banded symmetric positive definite storage and Cholesky factorization.
//!
//! Stiffness matrices on the structured meshes have half-bandwidth 1 (1D) or
//! `n + 2` (2D, row-major node numbering), so a banded factorization costs
//! O(N b^2) and needs no fill-reducing ordering.

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix: `band[i][k]` holds A[i][i - k].
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&mut self, i: usize, k: usize) -> &mut f64 {
        &mut self.band[i * (self.bw + 1) + k]
    }

    /// Accumulates into A[i][j] (and implicitly A[j][i]).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(r - c <= self.bw, "entry outside band");
        *self.at(r, r - c) += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.band[r * (self.bw + 1) + (r - c)]
        }
    }

    /// Factors in place and solves `A x = b`.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = self.band[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= self.band[i * w + (i - k)] * self.band[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Linear(format!(
                            "matrix not positive definite at row {i} (pivot {s:e})"
                        )));
                    }
                    self.band[i * w] = s.sqrt();
                } else {
                    self.band[i * w + (i - j)] = s / self.band[j * w];
                }
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[i * w + (i - k)] * y[k];
            }
            y[i] = s / self.band[i * w];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.band[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.band[i * w];
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_poisson() {
        // -u'' = 1 on 5 interior nodes, h = 1/6
        let n = 5;
        let h = 1.0 / 6.0;
        let mut a = BandedSpd::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0 / h);
            if i + 1 < n {
                a.add(i + 1, i, -1.0 / h);
            }
        }
        let x = a.solve(&vec![h; n]).unwrap();
        for (i, v) in x.iter().enumerate() {
            let t = (i + 1) as f64 * h;
            assert!((v - t * (1.0 - t) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn wide_band_matches_dense_product() {
        let n = 12;
        let bw = 4;
        let mut a = BandedSpd::zeros(n, bw);
        for i in 0..n {
            a.add(i, i, 10.0 + i as f64);
            for k in 1..=bw {
                if i + k < n {
                    a.add(i + k, i, 1.0 / (1.0 + (i * k) as f64));
                }
            }
        }
        let xs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.get(i, j) * xs[j]).sum()).collect();
        let x = a.solve(&b).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_detected() {
        let mut a = BandedSpd::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(matches!(a.solve(&[1.0, 1.0]), Err(Error::Linear(_))));
    }
}
