//! Minimal dense linear algebra for small state dimensions.
//!
//! Everything here works on row-major [`Mat`] buffers and flat `&[f64]`
//! vectors. State dimensions are tiny (a handful), so plain Gaussian
//! elimination and modified Gram-Schmidt are adequate and keep the crate
//! dependency-free and `no_std`.

// backs f64 math in no_std builds; shadowed by inherent methods under test
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Borrowed row-major matrix view.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    rows: usize,
    cols: usize,
    data: &'a [f64],
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn as_ref(&self) -> MatRef<'_> {
        MatRef { rows: self.rows, cols: self.cols, data: &self.data }
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_col(&mut self, c: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        for r in 0..self.rows {
            self[(r, c)] = v[r];
        }
    }

    pub fn transpose(&self) -> Mat {
        self.as_ref().transpose()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.as_ref().matvec(x, y);
    }

    /// `y = A^T x` (covector pullback when `A` is a propagator).
    pub fn tmatvec(&self, x: &[f64], y: &mut [f64]) {
        self.as_ref().tmatvec(x, y);
    }

    /// `C = A B`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        let c_total = self.cols;
        &mut self.data[r * c_total + c]
    }
}

impl<'a> MatRef<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        MatRef { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &'a [f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    pub fn to_owned(&self) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.to_vec() }
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self.at(r, c);
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            y[r] = dot(self.row(r), x);
        }
    }

    pub fn tmatvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        y.fill(0.0);
        for r in 0..self.rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for (yc, a) in y.iter_mut().zip(self.row(r)) {
                *yc += xr * a;
            }
        }
    }
}

/// Contiguous storage for a time series of equally-shaped matrices.
#[derive(Debug, Clone)]
pub struct MatSeries {
    len: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatSeries {
    pub fn zeros(len: usize, rows: usize, cols: usize) -> Self {
        MatSeries { len, rows, cols, data: vec![0.0; len * rows * cols] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn at(&self, k: usize) -> MatRef<'_> {
        let stride = self.rows * self.cols;
        MatRef::new(self.rows, self.cols, &self.data[k * stride..(k + 1) * stride])
    }

    pub fn set(&mut self, k: usize, m: &Mat) {
        assert_eq!((m.rows(), m.cols()), (self.rows, self.cols));
        let stride = self.rows * self.cols;
        self.data[k * stride..(k + 1) * stride].copy_from_slice(m.data());
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += s x`.
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn scale(s: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= s;
    }
}

/// Modified Gram-Schmidt thin QR of the columns, in place.
///
/// Columns of `a` are replaced by the orthonormal factor; returns the small
/// square `R` with a positive diagonal (the convention that keeps repeated
/// renormalizations deterministic). A diagonal entry below `tiny` means rank
/// collapse; the offending column index is returned as the error.
pub fn mgs_qr(a: &mut Mat, tiny: f64) -> core::result::Result<Mat, usize> {
    let n = a.cols();
    let mut r = Mat::zeros(n, n);
    for j in 0..n {
        let mut v = a.col(j);
        for i in 0..j {
            let qi = a.col(i);
            let rij = dot(&qi, &v);
            r[(i, j)] = rij;
            axpy(-rij, &qi, &mut v);
        }
        let nrm = norm2(&v);
        if !(nrm > tiny) {
            return Err(j);
        }
        r[(j, j)] = nrm;
        scale(1.0 / nrm, &mut v);
        a.set_col(j, &v);
    }
    Ok(r)
}

/// LU factorization with partial pivoting for tiny square systems.
struct Lu {
    n: usize,
    lu: Mat,
    piv: Vec<usize>,
    sign: f64,
}

impl Lu {
    fn factor(a: &Mat) -> Option<Lu> {
        assert_eq!(a.rows(), a.cols());
        let n = a.rows();
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return None;
            }
            if p != k {
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(p, c)];
                    lu[(p, c)] = tmp;
                }
                piv.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let m = lu[(i, k)] / pivot;
                lu[(i, k)] = m;
                for c in k + 1..n {
                    let s = lu[(k, c)];
                    lu[(i, c)] -= m * s;
                }
            }
        }
        Some(Lu { n, lu, piv, sign })
    }

    fn det(&self) -> f64 {
        let mut d = self.sign;
        for i in 0..self.n {
            d *= self.lu[(i, i)];
        }
        d
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for j in 0..i {
                x[i] -= self.lu[(i, j)] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[(i, j)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// Solve `A x = b`; `None` when `A` is exactly singular.
pub fn solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    Lu::factor(a).map(|lu| lu.solve(b))
}

/// Solve `A^T x = b` (used for forward covector transport).
pub fn solve_transposed(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    solve(&a.transpose(), b)
}

pub fn det(a: &Mat) -> f64 {
    Lu::factor(a).map_or(0.0, |lu| lu.det())
}

/// Explicit inverse for tiny matrices (pairing matrices, propagators).
pub fn inverse(a: &Mat) -> Option<Mat> {
    let n = a.rows();
    let lu = Lu::factor(a)?;
    let mut out = Mat::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e.fill(0.0);
        e[c] = 1.0;
        let x = lu.solve(&e);
        for r in 0..n {
            out[(r, c)] = x[r];
        }
    }
    Some(out)
}

/// Frobenius condition estimate `||A||_F ||A^-1||_F`; infinite when singular.
pub fn cond_frobenius(a: &Mat) -> f64 {
    match inverse(a) {
        Some(inv) => a.frob_norm() * inv.frob_norm(),
        None => f64::INFINITY,
    }
}
