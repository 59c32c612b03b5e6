//! CP model representation and the alternating least squares (ALS) driver.
//!
//! A rank-`R` CP model of an `N`-mode tensor is a list of factor matrices
//! `U^(n)` of shape `I_n x R`; the model tensor is the sum of `R` outer
//! products of their columns. One ALS sweep updates each factor in mode order
//! by solving the normal equations `U^(n) H = M` where `M` is the MTTKRP for
//! mode `n` and `H` is the Hadamard product of the other modes' Gramians.
//!
//! The squared residual is never formed explicitly during a fit. With the
//! last mode's `H` and `M` still in hand it follows from cached quantities:
//!
//! ```text
//! e = ||T||^2 + sum(H * (U^T U)) - 2 * sum(U * M)      (elementwise *, last mode)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CpError, Result};
use crate::flops::FlopCounter;
use crate::matrix::{gramian, hadamard_skip, krp_exclude_into, pinv_solve, Matrix, DEFAULT_RCOND};
use crate::tensor::{unfolding_times_matrix, DenseTensor};

/// Relative threshold below which a slightly negative squared residual is
/// clamped to zero; anything more negative is reported as a numerical
/// breakdown instead of silently truncated.
pub const ERROR_CLAMP_REL: f64 = 1e-9;

/// CP model: one factor matrix per mode plus fit history.
#[derive(Debug, Clone, PartialEq)]
pub struct CpModel {
    factors: Vec<Matrix>,
    rank: usize,
    /// Squared residual after each completed sweep.
    pub errors: Vec<f64>,
    /// Number of completed sweeps.
    pub iterations: usize,
}

impl CpModel {
    /// Model with all-zero factors.
    pub fn new(dims: &[usize], rank: usize) -> Result<Self> {
        if dims.is_empty() || rank == 0 {
            return Err(CpError::InvalidArgument(format!(
                "model needs at least one mode and rank >= 1, got dims {dims:?} rank {rank}"
            )));
        }
        Ok(CpModel {
            factors: dims.iter().map(|&d| Matrix::zeros(d, rank)).collect(),
            rank,
            errors: Vec::new(),
            iterations: 0,
        })
    }

    /// Model from explicit factor matrices (equal column counts required).
    pub fn from_factors(factors: Vec<Matrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(CpError::InvalidArgument(
                "model needs at least one factor".into(),
            ));
        }
        let rank = factors[0].cols();
        if rank == 0 || factors.iter().any(|f| f.cols() != rank) {
            return Err(CpError::DimensionMismatch(
                "factor matrices must share a positive column count".into(),
            ));
        }
        Ok(CpModel {
            factors,
            rank,
            errors: Vec::new(),
            iterations: 0,
        })
    }

    /// Deterministic random init: factors filled with i.i.d. uniform(0,1)
    /// draws from a seeded ChaCha8 stream, in mode order, column-major.
    pub fn init_random(dims: &[usize], rank: usize, seed: u64) -> Result<Self> {
        let mut model = CpModel::new(dims, rank)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for f in &mut model.factors {
            for x in f.data_mut() {
                *x = rng.gen::<f64>();
            }
        }
        Ok(model)
    }

    pub fn ndims(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    pub fn factor(&self, mode: usize) -> &Matrix {
        &self.factors[mode]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut Matrix {
        &mut self.factors[mode]
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn set_factor(&mut self, mode: usize, f: Matrix) -> Result<()> {
        if f.cols() != self.rank {
            return Err(CpError::DimensionMismatch(format!(
                "factor with {} columns in a rank-{} model",
                f.cols(),
                self.rank
            )));
        }
        self.factors[mode] = f;
        Ok(())
    }

    pub fn final_error(&self) -> Option<f64> {
        self.errors.last().copied()
    }

    /// Dense model tensor, evaluated as the naive sum of outer products:
    /// for each multi-index, sum over components (ascending) of the product
    /// of factor entries (ascending mode order). Kept deliberately literal so
    /// it can serve as ground truth for everything else.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let dims = self.dims();
        DenseTensor::from_fn(dims, |idx| {
            let mut sum = 0.0;
            for r in 0..self.rank {
                let mut prod = 1.0;
                for (n, f) in self.factors.iter().enumerate() {
                    prod *= f.at(idx[n], r);
                }
                sum += prod;
            }
            sum
        })
    }
}

/// Stopping rule and solver settings for an ALS fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Relative error-change threshold: stop when
    /// `|e_prev - e| / max(e_prev, eps) < tolerance`.
    pub tolerance: f64,
    /// Hard cap on sweeps when the tolerance never triggers.
    pub max_iterations: usize,
    /// Run exactly this many sweeps, ignoring both `tolerance` and
    /// `max_iterations`.
    pub force_iterations: Option<usize>,
    /// Relative eigenvalue cutoff for the pseudoinverse solves.
    pub rcond: f64,
    /// Column-chunk parallelism for the MTTKRP (1 = sequential).
    pub threads: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tolerance: 1e-6,
            max_iterations: 1000,
            force_iterations: None,
            rcond: DEFAULT_RCOND,
            threads: 1,
        }
    }
}

/// Scratch space reused across ALS sweeps: the Khatri-Rao buffer, cached
/// per-mode Gramians, and the last mode's `H`/`M` pair for the error formula.
#[derive(Debug)]
pub struct AlsWorkspace {
    krp: Vec<f64>,
    grams: Vec<Matrix>,
    h_last: Matrix,
    m_last: Matrix,
    rcond: f64,
    threads: usize,
    pub flops: FlopCounter,
}

impl AlsWorkspace {
    pub fn new(t: &DenseTensor, model: &CpModel, config: &FitConfig) -> Result<Self> {
        let dims = t.dims();
        if model.dims() != dims {
            return Err(CpError::DimensionMismatch(format!(
                "model dims {:?} do not match tensor dims {:?}",
                model.dims(),
                dims
            )));
        }
        let rank = model.rank();
        let max_rest = (0..dims.len())
            .map(|n| t.element_count() / dims[n])
            .max()
            .unwrap_or(0);
        Ok(AlsWorkspace {
            krp: vec![0.0; max_rest * rank],
            grams: model.factors().iter().map(gramian).collect(),
            h_last: Matrix::zeros(rank, rank),
            m_last: Matrix::zeros(*dims.last().unwrap(), rank),
            rcond: config.rcond,
            threads: config.threads.max(1),
            flops: FlopCounter::default(),
        })
    }

    /// Hadamard product of all other modes' cached Gramians and the MTTKRP
    /// result for the last updated mode, as used by the error formula.
    pub fn last_h(&self) -> &Matrix {
        &self.h_last
    }

    pub fn last_m(&self) -> &Matrix {
        &self.m_last
    }
}

/// One full ALS sweep over all modes of `model` against `t`. On return the
/// workspace holds the final mode's `H` and `M` for [`compute_error`].
pub fn cp_als_sweep(t: &DenseTensor, model: &mut CpModel, ws: &mut AlsWorkspace) -> Result<()> {
    let dims = t.dims().to_vec();
    let n_modes = dims.len();
    let rank = model.rank();
    for n in 0..n_modes {
        let rest = t.element_count() / dims[n];
        let krp_sizes: Vec<usize> = (0..n_modes).filter(|&m| m != n).map(|m| dims[m]).collect();
        krp_exclude_into(model.factors(), n, &mut ws.krp, rest, 0);
        let mut m = Matrix::zeros(dims[n], rank);
        unfolding_times_matrix(t, n, &ws.krp, rank, m.data_mut(), ws.threads);
        let h = hadamard_skip(&ws.grams, n);
        let updated = pinv_solve(&m, &h, ws.rcond)?;
        ws.grams[n] = gramian(&updated);
        model.set_factor(n, updated)?;
        if n + 1 == n_modes {
            ws.h_last = h;
            ws.m_last = m;
        }

        ws.flops.add_khatri_rao(&krp_sizes, rank);
        ws.flops.add_mttkrp(&dims, rank);
        ws.flops.add_hadamard(rank, n_modes - 1);
        ws.flops.add_gramian(dims[n], rank);
        ws.flops.add_solve(dims[n], rank);
    }
    ws.flops.add_error(*dims.last().unwrap(), rank);
    Ok(())
}

/// Squared residual `||T - model||^2` from cached quantities: `norm_sq` is
/// `||T||^2`, `last_factor` the mode-(N-1) factor, and `h_last`/`m_last` the
/// Hadamard-of-Gramians and MTTKRP for that mode from the same sweep.
///
/// Tiny negative results (roundoff) are clamped to zero; results below
/// `-ERROR_CLAMP_REL * norm_sq` indicate the caches and factors are
/// inconsistent and surface as `NumericalBreakdown`.
pub fn compute_error(
    norm_sq: f64,
    last_factor: &Matrix,
    h_last: &Matrix,
    m_last: &Matrix,
) -> Result<f64> {
    let g = gramian(last_factor);
    let t1 = h_last.dot_elementwise(&g);
    let t2 = last_factor.dot_elementwise(m_last);
    let e = norm_sq + t1 - 2.0 * t2;
    if !e.is_finite() {
        return Err(CpError::NonFinite(format!(
            "error formula produced {e} (norm_sq {norm_sq}, t1 {t1}, t2 {t2})"
        )));
    }
    if e < 0.0 {
        if e >= -ERROR_CLAMP_REL * norm_sq {
            return Ok(0.0);
        }
        return Err(CpError::NumericalBreakdown(format!(
            "squared residual {e} is negative beyond roundoff (norm_sq {norm_sq})"
        )));
    }
    Ok(e)
}

/// Fits `model` to `t` by repeated ALS sweeps, recording the squared residual
/// after each sweep. Returns the fitted model and the flop tally.
///
/// The previous-error seed for the first relative-change test is `||T||^2`,
/// so an arbitrarily large tolerance still performs exactly one sweep.
pub fn cp_als_fit_counted(
    t: &DenseTensor,
    mut model: CpModel,
    config: &FitConfig,
) -> Result<(CpModel, FlopCounter)> {
    let mut ws = AlsWorkspace::new(t, &model, config)?;
    let norm_sq = t.norm_sq();
    let n_last = t.ndims() - 1;
    let (sweeps, check_tol) = match config.force_iterations {
        Some(k) => (k, false),
        None => (config.max_iterations, true),
    };
    let mut prev = norm_sq;
    model.errors.clear();
    model.iterations = 0;
    for _ in 0..sweeps {
        cp_als_sweep(t, &mut model, &mut ws)?;
        let e = compute_error(norm_sq, model.factor(n_last), ws.last_h(), ws.last_m())?;
        model.errors.push(e);
        model.iterations += 1;
        if check_tol && (prev - e).abs() / prev.max(f64::MIN_POSITIVE) < config.tolerance {
            break;
        }
        prev = e;
    }
    Ok((model, ws.flops))
}

/// [`cp_als_fit_counted`] without the flop tally.
pub fn cp_als_fit(t: &DenseTensor, model: CpModel, config: &FitConfig) -> Result<CpModel> {
    cp_als_fit_counted(t, model, config).map(|(m, _)| m)
}
