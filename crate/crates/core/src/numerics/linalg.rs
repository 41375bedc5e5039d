use std::ops::{Index, IndexMut};

use super::C64;
use crate::error::{invalid, Error, Result};

pub type CVec = Vec<C64>;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!("{} elements for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn mul_vec(&self, x: &[C64]) -> CVec {
        assert_eq!(x.len(), self.cols, "dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(l, j)];
                }
            }
        }
        out
    }

    /// Elementwise check `|A_ij - conj(A_ji)| <= tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (i..self.cols).all(|j| (self[(i, j)] - self[(j, i)].conj()).norm() <= tol))
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Cholesky factor `A = L L^H` of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    // Lower triangle, row-major.
    l: Vec<C64>,
}

impl Cholesky {
    pub fn new(a: &CMat) -> Result<Self> {
        if a.rows != a.cols {
            return Err(invalid(format!("expected square matrix, got {}x{}", a.rows, a.cols)));
        }
        if !a.is_hermitian(1e-10) {
            return Err(invalid("matrix is not Hermitian"));
        }
        let n = a.rows;
        let scale = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max);
        let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for p in 0..j {
                d -= l[j * n + p].norm_sqr();
            }
            if !(d > floor) {
                return Err(Error::SingularMatrix(format!("non-positive pivot {d:e} at column {j}")));
            }
            let d = d.sqrt();
            l[j * n + j] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p].conj();
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[C64]) -> CVec {
        assert_eq!(b.len(), self.n, "dimension mismatch");
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for p in 0..i {
                s -= self.l[i * n + p] * y[p];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in i + 1..n {
                s -= self.l[p * n + i].conj() * y[p];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        y
    }
}

/// Solves `A x = b` for Hermitian positive-definite `A`.
pub fn solve_hermitian(a: &CMat, b: &[C64]) -> Result<CVec> {
    if b.len() != a.rows {
        return Err(invalid(format!("rhs length {} for {}x{} matrix", b.len(), a.rows, a.cols)));
    }
    Ok(Cholesky::new(a)?.solve(b))
}

/// Least-squares solution of an overdetermined full-column-rank system.
///
/// Uses Gram-Schmidt QR with one reorthogonalization pass.
pub fn lstsq(a: &CMat, b: &[C64]) -> Result<CVec> {
    let (m, n) = (a.rows, a.cols);
    if b.len() != m {
        return Err(invalid(format!("rhs length {} for {m}x{n} matrix", b.len())));
    }
    if m < n {
        return Err(invalid(format!("underdetermined system {m}x{n}")));
    }
    let col_scale = (0..n)
        .map(|j| (0..m).map(|i| a[(i, j)].norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let mut q: Vec<CVec> = Vec::with_capacity(n);
    let mut r = CMat::zeros(n, n);
    for j in 0..n {
        let mut v: CVec = (0..m).map(|i| a[(i, j)]).collect();
        for _pass in 0..2 {
            for (p, qp) in q.iter().enumerate() {
                let c: C64 = qp.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                r[(p, j)] += c;
                for (vi, qi) in v.iter_mut().zip(qp) {
                    *vi -= c * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 1e-12 * col_scale) {
            return Err(Error::SingularMatrix(format!("rank deficient at column {j}")));
        }
        r[(j, j)] = C64::new(norm, 0.0);
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    let mut x: CVec = q.iter().map(|qj| qj.iter().zip(b).map(|(qi, bi)| qi.conj() * bi).sum()).collect();
    for i in (0..n).rev() {
        let mut s = x[i];
        for p in i + 1..n {
            s -= r[(i, p)] * x[p];
        }
        x[i] = s / r[(i, i)];
    }
    Ok(x)
}
