//! Banded LU factorization for the 5-point cell systems produced by the
//! low-order solvers. The matrices are (weakly) diagonally dominant with a
//! strictly positive time-derivative diagonal, so factorization without
//! pivoting is stable; a zero-pivot guard and a post-solve residual check
//! catch any pathological input.

use crate::error::{Error, Result, SolverError};

/// Square banded matrix with `half_band` sub- and super-diagonals, stored
/// row-major: entry (i, j) lives at `data[i * width + (j - i + half_band)]`
/// for `|i - j| <= half_band`, with `width = 2 * half_band + 1`.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    pub n: usize,
    pub half_band: usize,
    pub data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, half_band: usize) -> Self {
        BandedMatrix {
            n,
            half_band,
            data: vec![0.0; n * (2 * half_band + 1)],
        }
    }

    #[inline]
    fn width(&self) -> usize {
        2 * self.half_band + 1
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.n && j < self.n);
        let hb = self.half_band as isize;
        let off = j as isize - i as isize + hb;
        if (0..self.width() as isize).contains(&off) {
            self.data[i * self.width() + off as usize]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let hb = self.half_band as isize;
        let off = j as isize - i as isize + hb;
        debug_assert!(
            (0..self.width() as isize).contains(&off),
            "({i},{j}) outside band {hb}"
        );
        let w = self.width();
        self.data[i * w + off as usize] += v;
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        let hb = self.half_band;
        for i in 0..self.n {
            let lo = i.saturating_sub(hb);
            let hi = (i + hb + 1).min(self.n);
            let mut acc = 0.0;
            for j in lo..hi {
                acc += self.at(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Solves `A x = rhs` by in-place LU without pivoting on a copy of the
    /// band, then verifies the residual of the returned solution against
    /// the original matrix: `||Ax - rhs||_inf <= tol * max(||rhs||_inf,
    /// ||A x||_inf)`.
    pub fn solve(&self, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n);
        let mut lu = self.clone();
        let hb = self.half_band;
        let w = self.width();
        for k in 0..self.n {
            let pivot = lu.data[k * w + hb];
            if pivot.abs() < f64::MIN_POSITIVE * 1e4 {
                return Err(Error::Solver(SolverError::LinearSolve {
                    group: 0,
                    step: 0,
                    reason: format!("zero pivot at row {k}"),
                }));
            }
            let hi = (k + hb + 1).min(self.n);
            for i in (k + 1)..hi {
                // Column k entry of row i sits at offset k - i + hb.
                let off_ik = (k + hb) - i;
                let l = lu.data[i * w + off_ik] / pivot;
                lu.data[i * w + off_ik] = l;
                if l != 0.0 {
                    for j in (k + 1)..hi {
                        let a_kj = lu.data[k * w + (j - k) + hb];
                        lu.data[i * w + (j + hb - i)] -= l * a_kj;
                    }
                }
            }
        }
        // Forward substitution (L has unit diagonal).
        let mut x = rhs.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(hb);
            let mut acc = x[i];
            for k in lo..i {
                acc -= lu.data[i * w + (k + hb - i)] * x[k];
            }
            x[i] = acc;
        }
        // Back substitution.
        for i in (0..self.n).rev() {
            let hi = (i + hb + 1).min(self.n);
            let mut acc = x[i];
            for k in (i + 1)..hi {
                acc -= lu.data[i * w + (k + hb - i)] * x[k];
            }
            x[i] = acc / lu.data[i * w + hb];
        }
        // Residual check against the unfactored matrix.
        let ax = self.mul_vec(&x);
        let mut resid: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..self.n {
            resid = resid.max((ax[i] - rhs[i]).abs());
            scale = scale.max(rhs[i].abs()).max(ax[i].abs());
        }
        if resid > tol * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Solver(SolverError::LinearSolve {
                group: 0,
                step: 0,
                reason: format!("residual {resid:e} exceeds {tol:e} * {scale:e}"),
            }));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Dense Gaussian elimination with partial pivoting — the oracle.
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
        let mut x = b.to_vec();
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
            m.swap(k, piv);
            x.swap(k, piv);
            for i in (k + 1)..n {
                let l = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= l * m[k][j];
                }
                x[i] -= l * x[k];
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let xj = x[j];
                x[i] -= m[i][j] * xj;
            }
            x[i] /= m[i][i];
        }
        x
    }

    #[test]
    fn banded_solve_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(99);
        for (n, hb) in [(1usize, 0usize), (5, 1), (12, 3), (20, 4), (16, 5)] {
            let mut banded = BandedMatrix::zeros(n, hb);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i.saturating_sub(hb)..(i + hb + 1).min(n) {
                    if i != j {
                        let v = rng.gen_range(-1.0..1.0);
                        banded.add(i, j, v);
                        dense[i][j] = v;
                    }
                }
                // Diagonally dominant like the solver's matrices.
                let row_sum: f64 = dense[i].iter().map(|v| v.abs()).sum();
                let d = row_sum + 1.0 + rng.gen::<f64>();
                banded.add(i, i, d);
                dense[i][i] = d;
            }
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x = banded.solve(&rhs, 1e-12).unwrap();
            let y = dense_solve(&dense, &rhs);
            for i in 0..n {
                assert!(
                    (x[i] - y[i]).abs() <= 1e-10 * y[i].abs().max(1.0),
                    "n={n} hb={hb} i={i}: {} vs {}",
                    x[i],
                    y[i]
                );
            }
        }
    }

    #[test]
    fn mul_vec_and_at_consistency() {
        let mut a = BandedMatrix::zeros(4, 1);
        a.add(0, 0, 2.0);
        a.add(0, 1, -1.0);
        a.add(1, 0, -1.0);
        a.add(1, 1, 2.0);
        a.add(1, 2, -1.0);
        a.add(2, 1, -1.0);
        a.add(2, 2, 2.0);
        a.add(2, 3, -1.0);
        a.add(3, 2, -1.0);
        a.add(3, 3, 2.0);
        assert_eq!(a.at(0, 2), 0.0);
        let y = a.mul_vec(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(y, vec![0.0, 0.0, 0.0, 5.0]);
        // Tridiagonal Poisson-like solve: A maps the constant vector of
        // ones to e1 + e4, so that is the exact solution.
        let x = a.solve(&[1.0, 0.0, 0.0, 1.0], 1e-12).unwrap();
        for xi in &x {
            assert!((xi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let mut a = BandedMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(0, 1, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        assert!(a.solve(&[1.0, 2.0], 1e-12).is_err());
    }
}
