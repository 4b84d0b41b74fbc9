//! Dense symmetric positive-definite factorization used by kriging and
//! random field generation.

use crate::Scalar;

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn add_to_diagonal(&mut self, v: T) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: DenseMatrix<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

/// Four-way unrolled dot product; fixed summation order so results are
/// reproducible across runs.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut s = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            s[l] += x[l] * y[l];
        }
    }
    for (x, y) in ra.iter().zip(rb) {
        s[0] += *x * *y;
    }
    (s[0] + s[1]) + (s[2] + s[3])
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes the lower triangle of `a`; the upper triangle is ignored.
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self, NotPositiveDefinite> {
        // Rows are processed in panels: every finished row j above the panel
        // is loaded once and used for all panel rows, which keeps large
        // factorizations cache-resident. Summation order matches the plain
        // row-by-row algorithm exactly.
        const PANEL: usize = 32;
        let n = a.dim();
        let mut l = DenseMatrix::zeros(n);
        for i0 in (0..n).step_by(PANEL) {
            let i1 = (i0 + PANEL).min(n);
            let (done, panel) = l.data.split_at_mut(i0 * n);
            for j in 0..i0 {
                let rj = &done[j * n..j * n + j];
                let ljj = done[j * n + j];
                for i in i0..i1 {
                    let ri = &mut panel[(i - i0) * n..(i - i0 + 1) * n];
                    let s = a.get(i, j) - dot(&ri[..j], rj);
                    ri[j] = s / ljj;
                }
            }
            Self::factor_panel(a, &mut l, i0, i1)?;
        }
        Ok(Self { l })
    }

    /// Entries of rows `i0..i1` in columns `i0..=i`.
    fn factor_panel(a: &DenseMatrix<T>, l: &mut DenseMatrix<T>, i0: usize, i1: usize) -> Result<(), NotPositiveDefinite> {
        for i in i0..i1 {
            for j in i0..=i {
                let s = a.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(NotPositiveDefinite { pivot: i });
                    }
                    l.set(i, i, s.sqrt());
                } else {
                    let v = s / l.get(j, j);
                    l.set(i, j, v);
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn lower(&self) -> &DenseMatrix<T> {
        &self.l
    }

    /// `L · z`, used to colour white noise.
    pub fn mul_lower(&self, z: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| dot(&self.l.row(i)[..=i], &z[..=i]))
            .collect()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length must match matrix dimension");
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let s = b[i] - dot(&self.l.row(i)[..i], &y[..i]);
            y[i] = s / self.l.get(i, i);
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l.get(k, i) * x[k];
            }
            x[i] = s / self.l.get(i, i);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn factor_and_solve_3x3() {
        let a = DenseMatrix::from_fn(3, |i, j| {
            [[4.0, 12.0, -16.0], [12.0, 37.0, -43.0], [-16.0, -43.0, 98.0]][i][j]
        });
        let ch = Cholesky::factor(&a).unwrap();
        let l = ch.lower();
        let expected = [[2.0, 0.0, 0.0], [6.0, 1.0, 0.0], [-8.0, 5.0, 3.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(l.get(i, j), expected[i][j], epsilon = 1e-12);
            }
        }
        let x = ch.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a.get(i, j) * x[j]).sum();
            assert_relative_eq!(ax, [1.0, 2.0, 3.0][i], epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = DenseMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert_eq!(Cholesky::factor(&a).unwrap_err(), NotPositiveDefinite { pivot: 1 });
    }

    #[test]
    fn works_in_f32() {
        let a = DenseMatrix::<f32>::from_fn(2, |i, j| if i == j { 2.0 } else { 1.0 });
        let x = Cholesky::factor(&a).unwrap().solve(&[3.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }
}
