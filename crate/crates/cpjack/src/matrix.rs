//! Dense column-major matrices and the small linear-algebra kernels used by
//! the decomposition routines: Khatri-Rao products, Gramians, and a
//! pseudoinverse solve based on a symmetric Jacobi eigendecomposition.

use crate::error::{CpError, Result};

/// Relative eigenvalue cutoff used by [`pinv_solve`] when none is given.
pub const DEFAULT_RCOND: f64 = 1e-12;

/// Dense matrix of `f64` in column-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from a column-major flat vector.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CpError::DimensionMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix by evaluating `f(row, col)` for every entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.data[i + j * rows] = f(i, j);
            }
        }
        m
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Flat column-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row + col * self.rows]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        debug_assert!(row < self.rows && col < self.cols);
        &mut self.data[row + col * self.rows]
    }

    /// Column `c` as a contiguous slice.
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    /// Euclidean norm of column `c`.
    pub fn col_norm(&self, c: usize) -> f64 {
        self.col(c).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale_col(&mut self, c: usize, s: f64) {
        for x in self.col_mut(c) {
            *x *= s;
        }
    }

    /// Sum of all entries (the scalar reduction used by the error formula).
    pub fn sum_elements(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of the elementwise product with `other`; shapes must match.
    pub fn dot_elementwise(&self, other: &Matrix) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise dot of mismatched shapes"
        );
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Frobenius norm squared.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// New matrix with columns reordered so that column `j` of the result is
    /// column `perm[j]` of `self`.
    pub fn select_columns(&self, perm: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, perm.len());
        for (j, &src) in perm.iter().enumerate() {
            out.col_mut(j).copy_from_slice(self.col(src));
        }
        out
    }

    /// New matrix keeping only the listed rows, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(keep.len(), self.cols);
        for j in 0..self.cols {
            let src = self.col(j);
            let dst = out.col_mut(j);
            for (i, &r) in keep.iter().enumerate() {
                dst[i] = src[r];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute entry of the difference with `other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// C <- A * B + beta * C for column-major slices with leading dimensions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_nn(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        scale_columns(m, n, beta, c, ldc);
        return;
    }
    assert!(a.len() >= (k - 1) * lda + m);
    assert!(b.len() >= (n - 1) * ldb + k);
    assert!(c.len() >= (n - 1) * ldc + m);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            lda as isize,
            b.as_ptr(),
            1,
            ldb as isize,
            beta,
            c.as_mut_ptr(),
            1,
            ldc as isize,
        );
    }
}

/// C <- A^T * B + beta * C where A is stored k x m column-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_tn(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        scale_columns(m, n, beta, c, ldc);
        return;
    }
    assert!(a.len() >= (m - 1) * lda + k);
    assert!(b.len() >= (n - 1) * ldb + k);
    assert!(c.len() >= (n - 1) * ldc + m);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            lda as isize,
            1,
            b.as_ptr(),
            1,
            ldb as isize,
            beta,
            c.as_mut_ptr(),
            1,
            ldc as isize,
        );
    }
}

/// C <- A * B^T + beta * C where B is stored n x k column-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_nt(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        scale_columns(m, n, beta, c, ldc);
        return;
    }
    assert!(a.len() >= (k - 1) * lda + m);
    assert!(b.len() >= (k - 1) * ldb + n);
    assert!(c.len() >= (n - 1) * ldc + m);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            lda as isize,
            b.as_ptr(),
            ldb as isize,
            1,
            beta,
            c.as_mut_ptr(),
            1,
            ldc as isize,
        );
    }
}

fn scale_columns(m: usize, n: usize, beta: f64, c: &mut [f64], ldc: usize) {
    for j in 0..n {
        for x in &mut c[j * ldc..j * ldc + m] {
            *x *= beta;
        }
    }
}

/// Plain matrix product `A * B` as a new matrix.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(CpError::DimensionMismatch(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut c = Matrix::zeros(a.rows(), b.cols());
    gemm_nn(
        a.rows(),
        a.cols(),
        b.cols(),
        a.data(),
        a.rows(),
        b.data(),
        b.rows(),
        0.0,
        c.data_mut(),
        a.rows(),
    );
    Ok(c)
}

/// Column-wise Kronecker product of `a` and `b`.
///
/// Column `r` of the result is `a[:, r] (x) b[:, r]`, with `b`'s row index
/// varying fastest. Both inputs must have the same number of columns.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(CpError::DimensionMismatch(format!(
            "khatri-rao column counts {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows() * b.rows(), a.cols());
    let (ar, br) = (a.rows(), b.rows());
    for r in 0..a.cols() {
        let ac = a.col(r);
        let bc = b.col(r);
        let oc = out.col_mut(r);
        for (i, &av) in ac.iter().enumerate().take(ar) {
            let base = i * br;
            for j in 0..br {
                oc[base + j] = av * bc[j];
            }
        }
    }
    Ok(out)
}

/// Khatri-Rao product of all `factors` except `factors[skip]`, in descending
/// mode order, written into columns `[col0, col0 + R)` of the column-major
/// buffer `out` with leading dimension `ld`.
///
/// With the descending order, the row index of the product enumerates the
/// non-skipped modes with the lowest mode fastest, matching the column
/// layout of the mode-`skip` unfolding.
pub(crate) fn krp_exclude_into(
    factors: &[Matrix],
    skip: usize,
    out: &mut [f64],
    ld: usize,
    col0: usize,
) {
    let ncols = factors[skip].cols();
    let total: usize = factors
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, f)| f.rows())
        .product();
    assert!(ld >= total, "krp output leading dimension");
    for f in factors {
        assert_eq!(f.cols(), ncols, "krp factor column counts");
    }
    for r in 0..ncols {
        let oc = &mut out[(col0 + r) * ld..(col0 + r) * ld + total];
        // Seed with the highest included mode, then expand in place from the
        // back with each lower mode (lower modes vary faster).
        let mut len = 1;
        oc[0] = 1.0;
        for (i, f) in factors.iter().enumerate().rev() {
            if i == skip {
                continue;
            }
            let fc = f.col(r);
            let fr = f.rows();
            if len == 1 {
                oc[..fr].copy_from_slice(fc);
                len = fr;
                continue;
            }
            for c in (0..len).rev() {
                let v = oc[c];
                let base = c * fr;
                for j in (0..fr).rev() {
                    oc[base + j] = v * fc[j];
                }
            }
            len *= fr;
        }
        debug_assert_eq!(len, total);
    }
}

/// Khatri-Rao product of all factors except `factors[skip]` as a new matrix.
pub fn khatri_rao_exclude(factors: &[Matrix], skip: usize) -> Result<Matrix> {
    if skip >= factors.len() {
        return Err(CpError::InvalidMode {
            mode: skip,
            ndims: factors.len(),
        });
    }
    let ncols = factors[skip].cols();
    for f in factors {
        if f.cols() != ncols {
            return Err(CpError::DimensionMismatch(
                "khatri-rao factor column counts differ".into(),
            ));
        }
    }
    let total: usize = factors
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, f)| f.rows())
        .product();
    let mut out = Matrix::zeros(total, ncols);
    krp_exclude_into(factors, skip, out.data_mut(), total, 0);
    Ok(out)
}

/// Gramian `U^T U` of a factor matrix; symmetric positive semidefinite.
pub fn gramian(u: &Matrix) -> Matrix {
    let r = u.cols();
    let mut g = Matrix::zeros(r, r);
    for j in 0..r {
        let cj = u.col(j);
        for i in 0..=j {
            let ci = u.col(i);
            let s: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
            *g.at_mut(i, j) = s;
            *g.at_mut(j, i) = s;
        }
    }
    g
}

/// Elementwise product of the Gramians of all factors except `factors[skip]`.
pub fn hadamard_gramians(factors: &[Matrix], skip: usize) -> Result<Matrix> {
    if skip >= factors.len() {
        return Err(CpError::InvalidMode {
            mode: skip,
            ndims: factors.len(),
        });
    }
    let r = factors[skip].cols();
    for f in factors {
        if f.cols() != r {
            return Err(CpError::DimensionMismatch(
                "hadamard of gramians with differing column counts".into(),
            ));
        }
    }
    let grams: Vec<Matrix> = factors.iter().map(gramian).collect();
    Ok(hadamard_skip(&grams, skip))
}

/// Elementwise product of the listed square matrices, skipping index `skip`.
pub(crate) fn hadamard_skip(grams: &[Matrix], skip: usize) -> Matrix {
    let r = grams[skip].rows();
    let mut h = Matrix::from_fn(r, r, |_, _| 1.0);
    for (i, g) in grams.iter().enumerate() {
        if i == skip {
            continue;
        }
        for (hv, gv) in h.data_mut().iter_mut().zip(g.data()) {
            *hv *= gv;
        }
    }
    h
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order with the matching eigenvectors as
/// columns. Intended for the small Gramian-sized systems that arise here.
pub fn sym_eigen(h: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = h.rows();
    if h.cols() != n {
        return Err(CpError::DimensionMismatch(format!(
            "symmetric eigendecomposition of {}x{} matrix",
            h.rows(),
            h.cols()
        )));
    }
    if !h.is_finite() {
        return Err(CpError::NonFinite("eigendecomposition input".into()));
    }
    let mut a = h.clone();
    let mut v = Matrix::identity(n);
    if n <= 1 {
        return Ok((a.data().to_vec(), v));
    }
    let frob = a.norm_sq().sqrt();
    let tol = 1e-15 * frob.max(f64::MIN_POSITIVE);
    const MAX_SWEEPS: usize = 60;
    for _ in 0..MAX_SWEEPS {
        let mut off_sq = 0.0;
        for q in 0..n {
            for p in 0..q {
                let x = a.at(p, q);
                off_sq += 2.0 * x * x;
            }
        }
        if off_sq.sqrt() <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a.at(p, q);
                if apq.abs() <= tol * 1e-3 {
                    continue;
                }
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rows p and q.
                for k in 0..n {
                    let akp = a.at(p, k);
                    let akq = a.at(q, k);
                    *a.at_mut(p, k) = c * akp - s * akq;
                    *a.at_mut(q, k) = s * akp + c * akq;
                }
                // Columns p and q.
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    *a.at_mut(k, p) = c * akp - s * akq;
                    *a.at_mut(k, q) = s * akp + c * akq;
                }
                // Accumulate the rotation.
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.at(i, i).partial_cmp(&a.at(j, j)).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a.at(i, i)).collect();
    let vectors = v.select_columns(&order);
    Ok((values, vectors))
}

/// Solves `M * H^+` where `H^+` is the Moore-Penrose pseudoinverse of the
/// symmetric positive semidefinite matrix `H`.
///
/// Eigenvalues below `rcond * lambda_max` (or below zero) are treated as
/// exact zeros.
pub fn pinv_solve(m: &Matrix, h: &Matrix, rcond: f64) -> Result<Matrix> {
    if h.rows() != h.cols() {
        return Err(CpError::DimensionMismatch(format!(
            "pseudoinverse of non-square {}x{} matrix",
            h.rows(),
            h.cols()
        )));
    }
    if m.cols() != h.rows() {
        return Err(CpError::DimensionMismatch(format!(
            "pinv_solve of {}x{} against {}x{}",
            m.rows(),
            m.cols(),
            h.rows(),
            h.cols()
        )));
    }
    if !m.is_finite() || !h.is_finite() {
        return Err(CpError::NonFinite("pinv_solve input".into()));
    }
    let r = h.rows();
    let (values, vectors) = sym_eigen(h)?;
    let lambda_max = values.iter().cloned().fold(0.0, f64::max);
    let mut out = Matrix::zeros(m.rows(), r);
    if lambda_max <= 0.0 {
        return Ok(out);
    }
    let cutoff = rcond * lambda_max;
    // M * H^+ = ((M V) diag(1/lambda)) V^T with small eigenvalues zeroed.
    let mut tmp = matmul(m, &vectors)?;
    for (j, &lam) in values.iter().enumerate() {
        let inv = if lam > 0.0 && lam >= cutoff {
            1.0 / lam
        } else {
            0.0
        };
        tmp.scale_col(j, inv);
    }
    gemm_nt(
        m.rows(),
        r,
        r,
        tmp.data(),
        tmp.rows(),
        vectors.data(),
        vectors.rows(),
        0.0,
        out.data_mut(),
        m.rows(),
    );
    Ok(out)
}
