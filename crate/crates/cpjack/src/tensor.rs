//! Dense N-mode tensors in generalized column-major layout (first index
//! fastest) and the tensor-level kernels: matricization, MTTKRP, Frobenius
//! norms, and slice removal along a mode.
//!
//! The mode-0 unfolding of a tensor stored this way is a plain reinterpretation
//! of the flat buffer, which lets the dominant MTTKRP run as one matrix
//! product against the Khatri-Rao product of the remaining factors.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{CpError, Result};
use crate::matrix::{gemm_nn, gemm_tn, khatri_rao_exclude, krp_exclude_into, Matrix};

/// Dense tensor of `f64` with dimensions `dims[0] x dims[1] x ...`.
///
/// Element `(i_0, ..., i_{N-1})` lives at flat offset
/// `i_0 + dims[0] * (i_1 + dims[1] * (i_2 + ...))`. The squared Frobenius
/// norm is cached on first use.
#[derive(Debug, Clone)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    norm_sq_cache: OnceLock<f64>,
}

impl PartialEq for DenseTensor {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.data == other.data
    }
}

impl DenseTensor {
    /// Builds a tensor from its dimensions and flat column-major data.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(CpError::InvalidArgument(format!(
                "tensor dimensions must be positive, got {dims:?}"
            )));
        }
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(CpError::DimensionMismatch(format!(
                "tensor {dims:?} needs {expect} values, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor {
            dims,
            data,
            norm_sq_cache: OnceLock::new(),
        })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len: usize = dims.iter().product();
        DenseTensor::new(dims, vec![0.0; len])
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for (i, d) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < *d {
                    break;
                }
                *i = 0;
            }
        }
        DenseTensor::new(dims, data)
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        // Invalidate the cached norm on mutable access.
        self.norm_sq_cache = OnceLock::new();
        &mut self.data
    }

    pub fn element_count(&self) -> usize {
        self.data.len()
    }

    /// Flat stride of `mode`: the product of all lower dimensions.
    pub fn mode_stride(&self, mode: usize) -> usize {
        self.dims[..mode].iter().product()
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(CpError::IndexOutOfRange(format!(
                "index of length {} into tensor of {} modes",
                index.len(),
                self.dims.len()
            )));
        }
        let mut off = 0;
        let mut stride = 1;
        for (k, (&i, &d)) in index.iter().zip(&self.dims).enumerate() {
            if i >= d {
                return Err(CpError::IndexOutOfRange(format!(
                    "index {i} out of range for mode {k} of size {d}"
                )));
            }
            off += i * stride;
            stride *= d;
        }
        Ok(off)
    }

    pub fn at(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    /// Squared Frobenius norm, computed once and cached.
    pub fn norm_sq(&self) -> f64 {
        *self
            .norm_sq_cache
            .get_or_init(|| self.data.iter().map(|x| x * x).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.dims.len() {
            return Err(CpError::InvalidMode {
                mode,
                ndims: self.dims.len(),
            });
        }
        Ok(())
    }
}

/// Maps a multi-index to its `(row, column)` position in the mode-`mode`
/// unfolding. All indices are zero-based; the column enumerates the remaining
/// modes with the lowest mode varying fastest.
pub fn unfold_index(dims: &[usize], mode: usize, index: &[usize]) -> Result<(usize, usize)> {
    if mode >= dims.len() {
        return Err(CpError::InvalidMode {
            mode,
            ndims: dims.len(),
        });
    }
    if index.len() != dims.len() {
        return Err(CpError::IndexOutOfRange(format!(
            "index of length {} into tensor of {} modes",
            index.len(),
            dims.len()
        )));
    }
    let mut col = 0;
    let mut weight = 1;
    for k in 0..dims.len() {
        if index[k] >= dims[k] {
            return Err(CpError::IndexOutOfRange(format!(
                "index {} out of range for mode {k} of size {}",
                index[k], dims[k]
            )));
        }
        if k == mode {
            continue;
        }
        col += index[k] * weight;
        weight *= dims[k];
    }
    Ok((index[mode], col))
}

/// Mode-`mode` unfolding as an explicit `I_mode x prod(other dims)` matrix.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    t.check_mode(mode)?;
    let rows = t.dims[mode];
    let cols = t.element_count() / rows;
    let stride = t.mode_stride(mode);
    let mut out = Matrix::zeros(rows, cols);
    let data = t.data();
    let od = out.data_mut();
    for c in 0..cols {
        let low = c % stride;
        let high = c / stride;
        let base = low + high * stride * rows;
        let dst = &mut od[c * rows..(c + 1) * rows];
        for (i, d) in dst.iter_mut().enumerate() {
            *d = data[base + i * stride];
        }
    }
    Ok(out)
}

/// out (I_mode x width) <- T_(mode) * K without materializing the unfolding.
///
/// `k` holds the Khatri-Rao product (or a horizontal stack of them) with
/// `prod_{i != mode} I_i` rows, column-major. When `threads > 1` the columns
/// of `k` and `out` are split into `threads` chunks processed in parallel;
/// each column's result does not depend on the chunking.
pub(crate) fn unfolding_times_matrix(
    t: &DenseTensor,
    mode: usize,
    k: &[f64],
    width: usize,
    out: &mut [f64],
    threads: usize,
) {
    let rows = t.dims[mode];
    let k_rows = t.element_count() / rows;
    assert!(k.len() >= k_rows * width);
    assert!(out.len() >= rows * width);
    if width == 0 {
        return;
    }
    let chunk = if threads > 1 {
        width.div_ceil(threads)
    } else {
        width
    };
    let stride = t.mode_stride(mode);
    let high = t.element_count() / (stride * rows);
    let run = |k_chunk: &[f64], out_chunk: &mut [f64]| {
        let w = out_chunk.len() / rows;
        if mode == 0 {
            // Zero-copy unfolding: the flat buffer is already I_0 x rest.
            gemm_nn(
                rows,
                k_rows,
                w,
                t.data(),
                rows,
                k_chunk,
                k_rows,
                0.0,
                out_chunk,
                rows,
            );
        } else {
            // Accumulate one transposed slab product per trailing index.
            out_chunk[..rows * w].fill(0.0);
            for jh in 0..high {
                let slab = &t.data()[jh * stride * rows..(jh + 1) * stride * rows];
                gemm_tn(
                    rows,
                    stride,
                    w,
                    slab,
                    stride,
                    &k_chunk[jh * stride..],
                    k_rows,
                    1.0,
                    out_chunk,
                    rows,
                );
            }
        }
    };
    if threads > 1 && width > 1 {
        out[..rows * width]
            .par_chunks_mut(rows * chunk)
            .zip(k[..k_rows * width].par_chunks(k_rows * chunk))
            .for_each(|(out_chunk, k_chunk)| run(k_chunk, out_chunk));
    } else {
        run(&k[..k_rows * width], &mut out[..rows * width]);
    }
}

fn check_factors(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<usize> {
    t.check_mode(mode)?;
    if factors.len() != t.ndims() {
        return Err(CpError::DimensionMismatch(format!(
            "{} factor matrices for a {}-mode tensor",
            factors.len(),
            t.ndims()
        )));
    }
    let rank = factors[0].cols();
    for (i, f) in factors.iter().enumerate() {
        if f.rows() != t.dims[i] {
            return Err(CpError::DimensionMismatch(format!(
                "factor {i} has {} rows, mode size is {}",
                f.rows(),
                t.dims[i]
            )));
        }
        if f.cols() != rank {
            return Err(CpError::DimensionMismatch(
                "factor matrices have differing column counts".into(),
            ));
        }
    }
    Ok(rank)
}

/// Matricized tensor times Khatri-Rao product for `mode`, using the
/// slab-blocked fast path.
pub fn mttkrp(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<Matrix> {
    mttkrp_threaded(t, factors, mode, 1)
}

/// [`mttkrp`] with the columns of the product split across `threads` chunks.
pub fn mttkrp_threaded(
    t: &DenseTensor,
    factors: &[Matrix],
    mode: usize,
    threads: usize,
) -> Result<Matrix> {
    let rank = check_factors(t, factors, mode)?;
    let k_rows = t.element_count() / t.dims[mode];
    let mut k = Matrix::zeros(k_rows, rank);
    krp_exclude_into(factors, mode, k.data_mut(), k_rows, 0);
    let mut out = Matrix::zeros(t.dims[mode], rank);
    unfolding_times_matrix(t, mode, k.data(), rank, out.data_mut(), threads);
    Ok(out)
}

/// Reference MTTKRP: explicit unfolding, explicit Khatri-Rao product, and a
/// naive triple-loop matrix product. Slow, but independent of the fast path;
/// the two are kept equivalent by a standing test.
pub fn mttkrp_reference(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<Matrix> {
    let rank = check_factors(t, factors, mode)?;
    let unfolded = unfold(t, mode)?;
    let k = khatri_rao_exclude(factors, mode)?;
    let mut out = Matrix::zeros(t.dims[mode], rank);
    for r in 0..rank {
        let kc = k.col(r);
        let oc = out.col_mut(r);
        for (c, &kv) in kc.iter().enumerate() {
            let uc = unfolded.col(c);
            for (o, &u) in oc.iter_mut().zip(uc) {
                *o += u * kv;
            }
        }
    }
    Ok(out)
}

/// Squared Frobenius norm (cached on the tensor).
pub fn frobenius_norm_sq(t: &DenseTensor) -> f64 {
    t.norm_sq()
}

/// Squared Frobenius norm of each mode-`mode` slice; the entries sum to the
/// tensor's squared norm.
pub fn slice_norms_sq(t: &DenseTensor, mode: usize) -> Result<Vec<f64>> {
    t.check_mode(mode)?;
    let size = t.dims[mode];
    let stride = t.mode_stride(mode);
    let high = t.element_count() / (stride * size);
    let mut norms = vec![0.0; size];
    let data = t.data();
    for jh in 0..high {
        for (p, norm) in norms.iter_mut().enumerate() {
            let base = (jh * size + p) * stride;
            *norm += data[base..base + stride].iter().map(|x| x * x).sum::<f64>();
        }
    }
    Ok(norms)
}

/// Removes the listed mode-`mode` slices, keeping the remaining slices in
/// their original order. Indices must be distinct and must leave at least one
/// slice behind.
pub fn remove_slice(t: &DenseTensor, mode: usize, indices: &[usize]) -> Result<DenseTensor> {
    t.check_mode(mode)?;
    let size = t.dims[mode];
    let mut drop = vec![false; size];
    for &i in indices {
        if i >= size {
            return Err(CpError::IndexOutOfRange(format!(
                "slice {i} out of range for mode {mode} of size {size}"
            )));
        }
        if drop[i] {
            return Err(CpError::InvalidArgument(format!(
                "duplicate slice index {i}"
            )));
        }
        drop[i] = true;
    }
    if indices.len() == size {
        return Err(CpError::InvalidArgument(
            "cannot remove every slice of a mode".into(),
        ));
    }
    if indices.is_empty() {
        return Ok(t.clone());
    }
    let kept: Vec<usize> = (0..size).filter(|&i| !drop[i]).collect();
    let stride = t.mode_stride(mode);
    let high = t.element_count() / (stride * size);
    let new_size = kept.len();
    let mut dims = t.dims.clone();
    dims[mode] = new_size;
    let mut data = vec![0.0; stride * new_size * high];
    let src = t.data();
    for jh in 0..high {
        for (new_i, &old_i) in kept.iter().enumerate() {
            let s = (jh * size + old_i) * stride;
            let d = (jh * new_size + new_i) * stride;
            data[d..d + stride].copy_from_slice(&src[s..s + stride]);
        }
    }
    DenseTensor::new(dims, data)
}
