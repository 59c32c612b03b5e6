//! Jackknife resampling of a fitted CP model.
//!
//! Delete-d jackknife along one mode: partition that mode's slices into
//! groups, refit the model once per group with the group's slices removed,
//! align every refit back to the overall model, and turn the spread of the
//! aligned factors into per-entry standard errors.
//!
//! Three drivers produce identical statistics by different routes:
//!
//! * [`jk_als`] — the reference: each submodel is fitted on a physically
//!   reduced copy of the tensor, one after another.
//! * [`jk_parallel`] — the same fits, run concurrently (one tensor copy per
//!   submodel, each fit single-threaded), bitwise equal to [`jk_als`].
//! * [`jk_cals`] — the fast path: all submodels are fitted against the FULL
//!   tensor in one lock-step concurrent run. Deleted slices are realized by
//!   pinning the corresponding rows of each submodel's sampled-mode factor to
//!   zero after every update, and each submodel's error target is adjusted to
//!   `||T||^2` minus the deleted slices' squared norms. Per sweep this fuses
//!   all g MTTKRPs into one wide product over the full tensor, trading
//!   `I/(I-d)` extra flops for a much better flop rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cals::{drive_lockstep, CalsSlot};
use crate::error::{CpError, Result};
use crate::flops::FlopCounter;
use crate::matrix::Matrix;
use crate::model::{cp_als_fit_counted, CpModel, FitConfig};
use crate::tensor::{remove_slice, slice_norms_sq, DenseTensor};

/// How the submodels are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JackknifeMethod {
    /// Sequential fits on physically reduced tensors (the reference).
    ReferenceAls,
    /// Reference fits run concurrently across submodels.
    ParallelAls,
    /// Fused lock-step fits against the full tensor with zero-padded rows.
    Cals,
}

impl JackknifeMethod {
    pub fn name(&self) -> &'static str {
        match self {
            JackknifeMethod::ReferenceAls => "reference_als",
            JackknifeMethod::ParallelAls => "parallel_als",
            JackknifeMethod::Cals => "cals",
        }
    }
}

impl std::str::FromStr for JackknifeMethod {
    type Err = CpError;

    /// Accepts both the short command-line spellings (`als`, `oals`,
    /// `cals`) and the full serialized names.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "als" | "reference_als" => Ok(JackknifeMethod::ReferenceAls),
            "oals" | "parallel_als" => Ok(JackknifeMethod::ParallelAls),
            "cals" => Ok(JackknifeMethod::Cals),
            _ => Err(CpError::InvalidArgument(format!(
                "unknown jackknife method {s:?}; expected als, oals, or cals"
            ))),
        }
    }
}

/// Settings for one jackknife run.
#[derive(Debug, Clone)]
pub struct JackknifeConfig {
    /// Mode whose slices are resampled.
    pub sampled_mode: usize,
    /// Slices removed per submodel; 1 = leave-one-out. Must satisfy
    /// `1 <= d <= I/2` for the sampled mode's size `I`.
    pub d: usize,
    pub fit: FitConfig,
    pub method: JackknifeMethod,
    /// Align each submodel to the overall model before the standard errors.
    pub alignment: bool,
    /// Fused-width cap for the cals method; 0 = unlimited.
    pub column_budget: usize,
}

impl JackknifeConfig {
    pub fn new(sampled_mode: usize, d: usize) -> Self {
        JackknifeConfig {
            sampled_mode,
            d,
            fit: FitConfig::default(),
            method: JackknifeMethod::Cals,
            alignment: true,
            column_budget: 0,
        }
    }
}

/// The fitted submodels of one run. `submodels[p]` corresponds to
/// `groups[p]`; fit failures are recorded in place without aborting the set.
/// A fitted submodel's sampled-mode factor has `I - |group|` rows (the kept
/// slices, in original order).
#[derive(Debug, Clone)]
pub struct SubmodelSet {
    pub sampled_mode: usize,
    pub d: usize,
    pub groups: Vec<Vec<usize>>,
    pub submodels: Vec<std::result::Result<CpModel, String>>,
}

impl SubmodelSet {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Successfully fitted submodels with their group indices.
    pub fn fitted(&self) -> impl Iterator<Item = (usize, &CpModel)> {
        self.submodels
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().ok().map(|m| (i, m)))
    }
}

/// How one submodel was mapped onto the overall model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentDiagnostics {
    /// Aligned component `k` came from submodel column `permutation[k]`.
    pub permutation: Vec<usize>,
    /// Components whose sampled-mode column was negated to compensate an odd
    /// number of sign flips in the other modes.
    pub sampled_mode_sign_flips: Vec<usize>,
    /// Per-component congruence with the overall model after alignment:
    /// the product over non-sampled modes of |cos| between matched columns.
    pub congruence: Vec<f64>,
}

impl AlignmentDiagnostics {
    pub fn total_congruence(&self) -> f64 {
        self.congruence.iter().sum()
    }
}

/// Standard-error estimates for every factor matrix except the sampled mode.
#[derive(Debug, Clone)]
pub struct UncertaintyResult {
    pub sampled_mode: usize,
    /// `stddev[n]` matches `U^(n)`'s shape for `n != sampled_mode`; the
    /// sampled mode's entry is `None` (its rows are not comparable across
    /// submodels).
    pub stddev: Vec<Option<Matrix>>,
    /// Per-submodel alignment diagnostics (`None` for failed or unaligned
    /// submodels).
    pub alignment: Vec<Option<AlignmentDiagnostics>>,
    /// The estimator that produced the values.
    pub convention: String,
}

impl UncertaintyResult {
    pub fn stddev_for(&self, mode: usize) -> Option<&Matrix> {
        self.stddev.get(mode).and_then(|m| m.as_ref())
    }
}

/// Everything one jackknife run produces.
#[derive(Debug, Clone)]
pub struct JackknifeOutput {
    pub submodels: SubmodelSet,
    pub uncertainty: UncertaintyResult,
    pub flops: FlopCounter,
}

/// Partitions `0..size` into ceil(size/d) contiguous groups of `d` indices
/// (the last group takes the remainder). Requires `1 <= d <= size/2`.
pub fn delete_d_groups(size: usize, d: usize) -> Result<Vec<Vec<usize>>> {
    if d == 0 || 2 * d > size {
        return Err(CpError::InvalidArgument(format!(
            "delete-d group size must satisfy 1 <= d <= {}/2, got {d}",
            size
        )));
    }
    Ok((0..size)
        .step_by(d)
        .map(|start| (start..(start + d).min(size)).collect())
        .collect())
}

/// Inserts zero rows so that the output has `u.rows() + row_indices.len()`
/// rows with zeros exactly at `row_indices` (positions in the OUTPUT) and the
/// original rows in order everywhere else.
pub fn pad_with_zero_rows(u: &Matrix, row_indices: &[usize]) -> Result<Matrix> {
    let out_rows = u.rows() + row_indices.len();
    let mut is_pad = vec![false; out_rows];
    for &r in row_indices {
        if r >= out_rows {
            return Err(CpError::IndexOutOfRange(format!(
                "pad row {r} out of range for {out_rows} output rows"
            )));
        }
        if is_pad[r] {
            return Err(CpError::InvalidArgument(format!("pad row {r} repeated")));
        }
        is_pad[r] = true;
    }
    let mut out = Matrix::zeros(out_rows, u.cols());
    for c in 0..u.cols() {
        let src = u.col(c);
        let dst = out.col_mut(c);
        let mut s = 0;
        for (r, d) in dst.iter_mut().enumerate() {
            if !is_pad[r] {
                *d = src[s];
                s += 1;
            }
        }
    }
    Ok(out)
}

/// Sets the listed rows to zero. Repeats are allowed (idempotent).
pub fn zero_rows_in_place(u: &mut Matrix, rows: &[usize]) -> Result<()> {
    let n_rows = u.rows();
    for &r in rows {
        if r >= n_rows {
            return Err(CpError::IndexOutOfRange(format!(
                "zero row {r} out of range for {n_rows} rows"
            )));
        }
    }
    for c in 0..u.cols() {
        let col = u.col_mut(c);
        for &r in rows {
            col[r] = 0.0;
        }
    }
    Ok(())
}

fn kept_indices(size: usize, group: &[usize]) -> Vec<usize> {
    let mut drop = vec![false; size];
    for &i in group {
        drop[i] = true;
    }
    (0..size).filter(|&i| !drop[i]).collect()
}

/// Cosine of the angle between two equal-length vectors; 0 if either is zero.
fn cos_angle(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Assignment `perm` maximizing `sum_k score[perm[k]][k]`. Exact (bitmask
/// dynamic program) up to 16 components; greedy beyond that. Ties break
/// toward the lowest source index.
fn optimal_assignment(score: &Matrix) -> Vec<usize> {
    let r = score.rows();
    if r == 0 {
        return Vec::new();
    }
    if r > 16 {
        // Greedy: targets in order take the best unused source.
        let mut used = vec![false; r];
        return (0..r)
            .map(|k| {
                let mut best = f64::NEG_INFINITY;
                let mut bj = 0;
                for (j, &taken) in used.iter().enumerate() {
                    if !taken && score.at(j, k) > best {
                        best = score.at(j, k);
                        bj = j;
                    }
                }
                used[bj] = true;
                bj
            })
            .collect();
    }
    let full = 1usize << r;
    let mut dp = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![0u8; full];
    dp[0] = 0.0;
    for mask in 1..full {
        let k = mask.count_ones() as usize - 1;
        let mut best = f64::NEG_INFINITY;
        let mut bj = 0;
        for j in 0..r {
            if mask & (1 << j) != 0 {
                let v = dp[mask ^ (1 << j)] + score.at(j, k);
                if v > best {
                    best = v;
                    bj = j;
                }
            }
        }
        dp[mask] = best;
        choice[mask] = bj as u8;
    }
    let mut perm = vec![0usize; r];
    let mut mask = full - 1;
    for k in (0..r).rev() {
        let j = choice[mask] as usize;
        perm[k] = j;
        mask ^= 1 << j;
    }
    perm
}

/// Aligns a refitted submodel to the overall model `p`:
///
/// 1. permute components by the assignment maximizing the total congruence
///    `sum_r prod_{n != sampled_mode} |cos(angle)|` between matched columns;
/// 2. flip column signs per non-sampled mode so each matched cosine is
///    nonnegative, with a compensating flip in the sampled mode whenever an
///    odd number of flips would change the component's sign;
/// 3. rescale every non-sampled column to unit 2-norm, absorbing the
///    magnitudes into the sampled mode (zero columns are left untouched).
///
/// None of the steps changes the tensor the model represents.
pub fn align_submodel(
    p_hat: &CpModel,
    p: &CpModel,
    sampled_mode: usize,
) -> Result<(CpModel, AlignmentDiagnostics)> {
    let n_modes = p.ndims();
    if p_hat.ndims() != n_modes || sampled_mode >= n_modes {
        return Err(CpError::InvalidMode {
            mode: sampled_mode,
            ndims: n_modes,
        });
    }
    if p_hat.rank() != p.rank() {
        return Err(CpError::DimensionMismatch(format!(
            "alignment needs equal ranks, got {} vs {}",
            p_hat.rank(),
            p.rank()
        )));
    }
    for n in 0..n_modes {
        if n != sampled_mode && p_hat.factor(n).rows() != p.factor(n).rows() {
            return Err(CpError::DimensionMismatch(format!(
                "mode {n} factors have {} vs {} rows",
                p_hat.factor(n).rows(),
                p.factor(n).rows()
            )));
        }
    }
    let rank = p.rank();
    let score = Matrix::from_fn(rank, rank, |j, k| {
        let mut prod = 1.0;
        for n in 0..n_modes {
            if n == sampled_mode {
                continue;
            }
            prod *= cos_angle(p_hat.factor(n).col(j), p.factor(n).col(k)).abs();
        }
        prod
    });
    let perm = optimal_assignment(&score);

    let mut factors: Vec<Matrix> = (0..n_modes)
        .map(|n| p_hat.factor(n).select_columns(&perm))
        .collect();
    let mut flipped = Vec::new();
    for k in 0..rank {
        let mut parity = false;
        for (n, f) in factors.iter_mut().enumerate() {
            if n == sampled_mode {
                continue;
            }
            if cos_angle(f.col(k), p.factor(n).col(k)) < 0.0 {
                f.scale_col(k, -1.0);
                parity = !parity;
            }
        }
        if parity {
            factors[sampled_mode].scale_col(k, -1.0);
            flipped.push(k);
        }
    }
    for k in 0..rank {
        let mut absorbed = 1.0;
        for (n, f) in factors.iter_mut().enumerate() {
            if n == sampled_mode {
                continue;
            }
            let norm = f.col_norm(k);
            if norm > 0.0 {
                f.scale_col(k, 1.0 / norm);
                absorbed *= norm;
            }
        }
        factors[sampled_mode].scale_col(k, absorbed);
    }

    let congruence: Vec<f64> = (0..rank).map(|k| score.at(perm[k], k)).collect();
    let mut aligned = CpModel::from_factors(factors)?;
    aligned.errors = p_hat.errors.clone();
    aligned.iterations = p_hat.iterations;
    Ok((
        aligned,
        AlignmentDiagnostics {
            permutation: perm,
            sampled_mode_sign_flips: flipped,
            congruence,
        },
    ))
}

/// Per-entry jackknife standard errors over the (aligned) fitted submodels:
///
/// ```text
/// S^(n)(i,r) = sqrt( (g-1)/g * sum_p (U_p^(n)(i,r) - mean(i,r))^2 )
/// ```
///
/// with `g` the number of fitted submodels (at least 2 required). No estimate
/// is produced for the sampled mode.
pub fn jackknife_std(
    set: &SubmodelSet,
    p: &CpModel,
    sampled_mode: usize,
) -> Result<UncertaintyResult> {
    let fitted: Vec<&CpModel> = set.fitted().map(|(_, m)| m).collect();
    let g = fitted.len();
    if g < 2 {
        return Err(CpError::InvalidArgument(format!(
            "jackknife standard errors need at least 2 fitted submodels, got {g}"
        )));
    }
    let n_modes = p.ndims();
    for m in &fitted {
        if m.ndims() != n_modes || m.rank() != p.rank() {
            return Err(CpError::DimensionMismatch(
                "submodel shape does not match the overall model".into(),
            ));
        }
    }
    let factor = (g as f64 - 1.0) / g as f64;
    let mut stddev: Vec<Option<Matrix>> = Vec::with_capacity(n_modes);
    for n in 0..n_modes {
        if n == sampled_mode {
            stddev.push(None);
            continue;
        }
        let rows = p.factor(n).rows();
        let cols = p.rank();
        for m in &fitted {
            if m.factor(n).rows() != rows {
                return Err(CpError::DimensionMismatch(format!(
                    "mode {n} submodel factor has {} rows, expected {rows}",
                    m.factor(n).rows()
                )));
            }
        }
        // Mean of deviations from the first submodel rather than of raw
        // values: identical submodels then yield an exactly zero spread
        // instead of picking up summation round-off.
        let base = fitted[0].factor(n).data();
        let mut mean = vec![0.0; rows * cols];
        for m in &fitted {
            for ((acc, &x), &b) in mean.iter_mut().zip(m.factor(n).data()).zip(base) {
                *acc += x - b;
            }
        }
        for (x, &b) in mean.iter_mut().zip(base) {
            *x = b + *x / g as f64;
        }
        let mut var = vec![0.0; rows * cols];
        for m in &fitted {
            for ((acc, &x), &mu) in var.iter_mut().zip(m.factor(n).data()).zip(&mean) {
                let d = x - mu;
                *acc += d * d;
            }
        }
        let s = Matrix::from_vec(
            rows,
            cols,
            var.into_iter().map(|v| (factor * v).sqrt()).collect(),
        )?;
        if !s.is_finite() {
            return Err(CpError::NonFinite(format!(
                "standard errors for mode {n} are not finite"
            )));
        }
        stddev.push(Some(s));
    }
    Ok(UncertaintyResult {
        sampled_mode,
        stddev,
        alignment: vec![None; set.n_groups()],
        convention: "sqrt(((g-1)/g) * sum_p (x_p - mean)^2)".to_string(),
    })
}

fn validate(t: &DenseTensor, p: &CpModel, cfg: &JackknifeConfig) -> Result<()> {
    if p.dims() != t.dims() {
        return Err(CpError::DimensionMismatch(format!(
            "model dims {:?} do not match tensor dims {:?}",
            p.dims(),
            t.dims()
        )));
    }
    if cfg.sampled_mode >= t.ndims() {
        return Err(CpError::InvalidMode {
            mode: cfg.sampled_mode,
            ndims: t.ndims(),
        });
    }
    Ok(())
}

/// Warm start for one group: the overall model with the group's rows removed
/// from the sampled-mode factor.
fn warm_start(p: &CpModel, sampled_mode: usize, group: &[usize]) -> Result<CpModel> {
    let kept = kept_indices(p.factor(sampled_mode).rows(), group);
    let mut factors: Vec<Matrix> = p.factors().to_vec();
    factors[sampled_mode] = p.factor(sampled_mode).select_rows(&kept);
    CpModel::from_factors(factors)
}

/// Alignment + standard errors + assembly, shared by all three drivers.
fn assemble(
    p: &CpModel,
    cfg: &JackknifeConfig,
    groups: Vec<Vec<usize>>,
    submodels: Vec<std::result::Result<CpModel, String>>,
    flops: FlopCounter,
) -> Result<JackknifeOutput> {
    let mut set = SubmodelSet {
        sampled_mode: cfg.sampled_mode,
        d: cfg.d,
        groups,
        submodels,
    };
    let mut diags: Vec<Option<AlignmentDiagnostics>> = vec![None; set.n_groups()];
    if cfg.alignment {
        for (slot, out_diag) in set.submodels.iter_mut().zip(diags.iter_mut()) {
            if let Ok(m) = slot {
                let (aligned, diag) = align_submodel(m, p, cfg.sampled_mode)?;
                *slot = Ok(aligned);
                *out_diag = Some(diag);
            }
        }
    }
    let mut uncertainty = jackknife_std(&set, p, cfg.sampled_mode)?;
    uncertainty.alignment = diags;
    Ok(JackknifeOutput {
        submodels: set,
        uncertainty,
        flops,
    })
}

fn fit_one_group(
    t: &DenseTensor,
    p: &CpModel,
    cfg: &JackknifeConfig,
    group: &[usize],
    fit: &FitConfig,
) -> Result<(std::result::Result<CpModel, String>, FlopCounter)> {
    let reduced = remove_slice(t, cfg.sampled_mode, group)?;
    let init = warm_start(p, cfg.sampled_mode, group)?;
    Ok(match cp_als_fit_counted(&reduced, init, fit) {
        Ok((m, fl)) => (Ok(m), fl),
        Err(e) => (Err(e.to_string()), FlopCounter::default()),
    })
}

/// Reference jackknife: sequential submodel fits, each on a physically
/// reduced copy of the tensor, warm-started from the overall model.
pub fn jk_als(t: &DenseTensor, p: &CpModel, cfg: &JackknifeConfig) -> Result<JackknifeOutput> {
    validate(t, p, cfg)?;
    let groups = delete_d_groups(t.dims()[cfg.sampled_mode], cfg.d)?;
    let mut flops = FlopCounter::default();
    let mut submodels = Vec::with_capacity(groups.len());
    for group in &groups {
        let (outcome, fl) = fit_one_group(t, p, cfg, group, &cfg.fit)?;
        flops.merge(&fl);
        submodels.push(outcome);
    }
    assemble(p, cfg, groups, submodels, flops)
}

/// [`jk_als`] with the per-group fits run concurrently. Every fit is forced
/// single-threaded so each submodel's arithmetic is identical to the
/// reference no matter how many worker threads run the loop.
pub fn jk_parallel(t: &DenseTensor, p: &CpModel, cfg: &JackknifeConfig) -> Result<JackknifeOutput> {
    validate(t, p, cfg)?;
    let groups = delete_d_groups(t.dims()[cfg.sampled_mode], cfg.d)?;
    let fit = FitConfig {
        threads: 1,
        ..cfg.fit.clone()
    };
    let results: Vec<Result<(std::result::Result<CpModel, String>, FlopCounter)>> = groups
        .par_iter()
        .map(|group| fit_one_group(t, p, cfg, group, &fit))
        .collect();
    let mut flops = FlopCounter::default();
    let mut submodels = Vec::with_capacity(groups.len());
    for r in results {
        let (outcome, fl) = r?;
        flops.merge(&fl);
        submodels.push(outcome);
    }
    assemble(p, cfg, groups, submodels, flops)
}

/// Accelerated jackknife: every submodel is fitted concurrently against the
/// full tensor in a fused lock-step run. Each submodel keeps zeros in its
/// group's rows of the sampled-mode factor (re-zeroed after every update of
/// that mode) and measures its error against
/// `||T||^2 - sum of the group's slice norms`, which equals the squared norm
/// of the physically reduced tensor. Returned sampled-mode factors have the
/// zero rows stripped.
pub fn jk_cals(t: &DenseTensor, p: &CpModel, cfg: &JackknifeConfig) -> Result<JackknifeOutput> {
    jk_cals_with_observer(t, p, cfg, |_, _| {})
}

/// [`jk_cals`] with a hook called after every completed sweep with the
/// in-flight padded submodels (group rows of the sampled-mode factors are
/// exactly zero at every call). Intended for instrumentation and tests.
pub fn jk_cals_with_observer<F>(
    t: &DenseTensor,
    p: &CpModel,
    cfg: &JackknifeConfig,
    observer: F,
) -> Result<JackknifeOutput>
where
    F: FnMut(usize, &[&CpModel]),
{
    validate(t, p, cfg)?;
    let sampled = cfg.sampled_mode;
    let size = t.dims()[sampled];
    let groups = delete_d_groups(size, cfg.d)?;
    let slice_norms = slice_norms_sq(t, sampled)?;
    let total = t.norm_sq();
    let slots: Vec<CalsSlot> = groups
        .iter()
        .map(|group| CalsSlot {
            model: p.clone(),
            norm_sq: total - group.iter().map(|&q| slice_norms[q]).sum::<f64>(),
            zero_rows: Some((sampled, group.clone())),
        })
        .collect();
    let out = drive_lockstep(t, slots, &cfg.fit, cfg.column_budget, observer)?;
    let mut submodels = Vec::with_capacity(groups.len());
    for ((mut m, failure), group) in out.models.into_iter().zip(out.failures).zip(&groups) {
        match failure {
            Some(msg) => submodels.push(Err(msg)),
            None => {
                let kept = kept_indices(size, group);
                let stripped = m.factor(sampled).select_rows(&kept);
                m.set_factor(sampled, stripped)?;
                submodels.push(Ok(m));
            }
        }
    }
    assemble(p, cfg, groups, submodels, out.flops)
}

/// [`jk_cals`] for a whole model set at once: the submodels of every input
/// model share one fused pool, so kernel fusion spans the entire workload
/// rather than restarting per model. Models may have different ranks but
/// must share the tensor's shape. Returns one output per model, in input
/// order, plus the pool-wide flop counter — fused kernel work has no
/// per-model attribution, so each per-model output carries a zeroed counter.
pub fn jk_cals_pooled(
    t: &DenseTensor,
    models: &[CpModel],
    cfg: &JackknifeConfig,
) -> Result<(Vec<JackknifeOutput>, FlopCounter)> {
    if models.is_empty() {
        return Err(CpError::InvalidArgument(
            "jackknife pool needs at least one model".into(),
        ));
    }
    for p in models {
        validate(t, p, cfg)?;
    }
    let sampled = cfg.sampled_mode;
    let size = t.dims()[sampled];
    let groups = delete_d_groups(size, cfg.d)?;
    let slice_norms = slice_norms_sq(t, sampled)?;
    let total = t.norm_sq();
    let mut slots = Vec::with_capacity(models.len() * groups.len());
    for p in models {
        for group in &groups {
            slots.push(CalsSlot {
                model: p.clone(),
                norm_sq: total - group.iter().map(|&q| slice_norms[q]).sum::<f64>(),
                zero_rows: Some((sampled, group.clone())),
            });
        }
    }
    let out = drive_lockstep(t, slots, &cfg.fit, cfg.column_budget, |_, _| {})?;
    let mut fitted = out.models.into_iter().zip(out.failures);
    let mut outputs = Vec::with_capacity(models.len());
    for p in models {
        let mut submodels = Vec::with_capacity(groups.len());
        for group in &groups {
            let (mut m, failure) = fitted.next().expect("one slot per model per group");
            match failure {
                Some(msg) => submodels.push(Err(msg)),
                None => {
                    let kept = kept_indices(size, group);
                    let stripped = m.factor(sampled).select_rows(&kept);
                    m.set_factor(sampled, stripped)?;
                    submodels.push(Ok(m));
                }
            }
        }
        outputs.push(assemble(
            p,
            cfg,
            groups.clone(),
            submodels,
            FlopCounter::default(),
        )?);
    }
    Ok((outputs, out.flops))
}

/// Runs the method selected in `cfg`.
pub fn jackknife(t: &DenseTensor, p: &CpModel, cfg: &JackknifeConfig) -> Result<JackknifeOutput> {
    match cfg.method {
        JackknifeMethod::ReferenceAls => jk_als(t, p, cfg),
        JackknifeMethod::ParallelAls => jk_parallel(t, p, cfg),
        JackknifeMethod::Cals => jk_cals(t, p, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cp_als_fit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = dims.iter().product();
        let data = (0..len).map(|_| rng.gen::<f64>() - 0.5).collect();
        DenseTensor::new(dims.to_vec(), data).unwrap()
    }

    /// Rescales a model into the gauge alignment produces: unit-norm columns
    /// in every mode except `sampled_mode`, magnitudes absorbed there.
    fn normalized_gauge(p: &CpModel, sampled_mode: usize) -> CpModel {
        let mut factors: Vec<Matrix> = p.factors().to_vec();
        for k in 0..p.rank() {
            let mut absorbed = 1.0;
            for (n, f) in factors.iter_mut().enumerate() {
                if n == sampled_mode {
                    continue;
                }
                let norm = f.col_norm(k);
                if norm > 0.0 {
                    f.scale_col(k, 1.0 / norm);
                    absorbed *= norm;
                }
            }
            factors[sampled_mode].scale_col(k, absorbed);
        }
        CpModel::from_factors(factors).unwrap()
    }

    fn max_rel_model_diff(a: &CpModel, b: &CpModel) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..a.ndims() {
            let scale = b
                .factor(n)
                .data()
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()));
            worst = worst.max(a.factor(n).max_abs_diff(b.factor(n)) / scale.max(1e-300));
        }
        worst
    }

    fn rel_tensor_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
        let num: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        (num / b.norm_sq().max(1e-300)).sqrt()
    }

    #[test]
    fn delete_d_groups_cover_the_contract_cases() {
        let g = delete_d_groups(6, 1).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![0]);
        assert_eq!(g[5], vec![5]);

        let g = delete_d_groups(6, 2).unwrap();
        assert_eq!(g, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);

        let g = delete_d_groups(7, 2).unwrap();
        assert_eq!(g, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6]]);
    }

    #[test]
    fn delete_d_groups_rejects_out_of_range_d() {
        assert!(delete_d_groups(6, 0).is_err());
        assert!(delete_d_groups(6, 4).is_err());
        assert!(delete_d_groups(7, 4).is_err());
        assert!(delete_d_groups(6, 3).is_ok());
    }

    #[test]
    fn pad_with_zero_rows_contract_cases() {
        let ones = Matrix::from_fn(2, 2, |_, _| 1.0);
        let padded = pad_with_zero_rows(&ones, &[1]).unwrap();
        assert_eq!(padded.rows(), 3);
        assert_eq!(padded.col(0), &[1.0, 0.0, 1.0]);
        assert_eq!(padded.col(1), &[1.0, 0.0, 1.0]);

        assert!(pad_with_zero_rows(&ones, &[0, 0]).is_err());
        assert!(pad_with_zero_rows(&ones, &[4]).is_err());
    }

    #[test]
    fn pad_then_extract_complement_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Matrix::from_fn(4, 3, |_, _| rng.gen::<f64>());
        let pads = [1usize, 3, 5];
        let padded = pad_with_zero_rows(&u, &pads).unwrap();
        assert_eq!(padded.rows(), 7);
        let kept = kept_indices(7, &pads);
        assert_eq!(padded.select_rows(&kept), u);
    }

    #[test]
    fn zero_rows_in_place_is_idempotent() {
        let mut m = Matrix::from_fn(4, 2, |i, j| (i + j) as f64 + 1.0);
        zero_rows_in_place(&mut m, &[1, 3]).unwrap();
        let once = m.clone();
        zero_rows_in_place(&mut m, &[1, 3, 3]).unwrap();
        assert_eq!(m, once);
        assert_eq!(m.col(0)[1], 0.0);
        assert_eq!(m.col(1)[3], 0.0);
        assert!(zero_rows_in_place(&mut m, &[4]).is_err());
    }

    #[test]
    fn jk_als_produces_the_contracted_shapes() {
        let t = random_tensor(&[5, 4, 3], 11);
        let p = cp_als_fit(
            &t,
            CpModel::init_random(t.dims(), 2, 12).unwrap(),
            &FitConfig {
                force_iterations: Some(5),
                ..FitConfig::default()
            },
        )
        .unwrap();
        let cfg = JackknifeConfig {
            fit: FitConfig {
                force_iterations: Some(5),
                ..FitConfig::default()
            },
            ..JackknifeConfig::new(0, 1)
        };
        let out = jk_als(&t, &p, &cfg).unwrap();
        assert_eq!(out.submodels.n_groups(), 5);
        for (_, m) in out.submodels.fitted() {
            assert_eq!(m.factor(0).rows(), 4);
            assert_eq!(m.factor(1).rows(), 4);
            assert_eq!(m.factor(2).rows(), 3);
            assert_eq!(m.iterations, 5);
        }
        assert!(out.uncertainty.stddev_for(0).is_none());
        for n in 1..3 {
            let s = out.uncertainty.stddev_for(n).unwrap();
            assert_eq!(s.rows(), t.dims()[n]);
            assert_eq!(s.cols(), 2);
            assert!(s.data().iter().all(|&x| x.is_finite() && x >= 0.0));
        }
    }

    #[test]
    fn noiseless_jackknife_is_self_consistent() {
        // T is exactly rank 2; the overall model is the exact solution, so
        // every leave-one-out refit lands on (a slice of) the same model and
        // the standard errors collapse to ~0.
        let truth = normalized_gauge(&CpModel::init_random(&[12, 6, 5], 2, 21).unwrap(), 0);
        let t = truth.reconstruct().unwrap();
        let cfg = JackknifeConfig {
            fit: FitConfig {
                tolerance: 1e-14,
                max_iterations: 50,
                ..FitConfig::default()
            },
            ..JackknifeConfig::new(0, 1)
        };
        let out = jk_als(&t, &truth, &cfg).unwrap();
        assert_eq!(out.submodels.n_groups(), 12);
        for (i, m) in out.submodels.fitted() {
            for n in 1..3 {
                let scale = truth
                    .factor(n)
                    .data()
                    .iter()
                    .fold(0.0f64, |a, x| a.max(x.abs()));
                assert!(
                    m.factor(n).max_abs_diff(truth.factor(n)) <= 1e-4 * scale,
                    "submodel {i} mode {n} drifted"
                );
            }
        }
        for n in 1..3 {
            let s = out.uncertainty.stddev_for(n).unwrap();
            let scale = truth
                .factor(n)
                .data()
                .iter()
                .fold(0.0f64, |a, x| a.max(x.abs()));
            assert!(s.data().iter().all(|&x| x <= 1e-4 * scale));
        }
    }

    #[test]
    fn jk_cals_matches_jk_als_for_all_modes_and_depths() {
        let t = random_tensor(&[8, 9, 7], 31);
        let p = cp_als_fit(
            &t,
            CpModel::init_random(t.dims(), 3, 32).unwrap(),
            &FitConfig {
                force_iterations: Some(5),
                ..FitConfig::default()
            },
        )
        .unwrap();
        for sampled_mode in [0usize, 2] {
            for d in [1usize, 2] {
                let cfg = JackknifeConfig {
                    fit: FitConfig {
                        force_iterations: Some(10),
                        ..FitConfig::default()
                    },
                    ..JackknifeConfig::new(sampled_mode, d)
                };
                let reference = jk_als(&t, &p, &cfg).unwrap();
                let fast = jk_cals(&t, &p, &cfg).unwrap();
                assert_eq!(reference.submodels.n_groups(), fast.submodels.n_groups());
                for ((_, a), (_, b)) in reference.submodels.fitted().zip(fast.submodels.fitted()) {
                    assert!(
                        max_rel_model_diff(b, a) < 1e-8,
                        "factors diverged (mode {sampled_mode}, d {d})"
                    );
                    assert_eq!(a.errors.len(), b.errors.len());
                    for (ea, eb) in a.errors.iter().zip(&b.errors) {
                        assert!(
                            (ea - eb).abs() <= 1e-8 * ea.max(1e-12),
                            "error history diverged (mode {sampled_mode}, d {d})"
                        );
                    }
                }
                for n in 0..3 {
                    match (
                        reference.uncertainty.stddev_for(n),
                        fast.uncertainty.stddev_for(n),
                    ) {
                        (Some(a), Some(b)) => {
                            let scale = a.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                            assert!(a.max_abs_diff(b) <= 1e-8 * scale.max(1e-12));
                        }
                        (None, None) => assert_eq!(n, sampled_mode),
                        _ => panic!("stddev presence mismatch"),
                    }
                }
            }
        }
    }

    #[test]
    fn long_forced_runs_stay_equivalent() {
        let t = random_tensor(&[10, 20, 20], 35);
        let p = cp_als_fit(
            &t,
            CpModel::init_random(t.dims(), 3, 36).unwrap(),
            &FitConfig {
                force_iterations: Some(5),
                ..FitConfig::default()
            },
        )
        .unwrap();
        let cfg = JackknifeConfig {
            fit: FitConfig {
                force_iterations: Some(100),
                ..FitConfig::default()
            },
            ..JackknifeConfig::new(0, 1)
        };
        let reference = jk_als(&t, &p, &cfg).unwrap();
        let fast = jk_cals(&t, &p, &cfg).unwrap();
        for ((_, a), (_, b)) in reference.submodels.fitted().zip(fast.submodels.fitted()) {
            assert_eq!(a.iterations, 100);
            assert!(max_rel_model_diff(b, a) < 1e-8);
            for (ea, eb) in a.errors.iter().zip(&b.errors) {
                assert!((ea - eb).abs() <= 1e-8 * ea.max(1e-300));
            }
        }
    }

    #[test]
    fn alignment_with_a_zero_column_is_deterministic() {
        let p = normalized_gauge(&CpModel::init_random(&[4, 5, 6], 3, 86).unwrap(), 0);
        let mut factors: Vec<Matrix> = p.factors().to_vec();
        for f in &mut factors {
            f.scale_col(1, 0.0);
        }
        let p_hat = CpModel::from_factors(factors).unwrap();
        let (aligned_a, diag_a) = align_submodel(&p_hat, &p, 0).unwrap();
        let (aligned_b, diag_b) = align_submodel(&p_hat, &p, 0).unwrap();
        assert_eq!(diag_a.permutation, diag_b.permutation);
        assert_eq!(aligned_a, aligned_b);
        // The dead column scores zero congruence everywhere and lands by the
        // lowest-index tie-break; the live columns still match themselves.
        let dead_target = diag_a.permutation.iter().position(|&s| s == 1).unwrap();
        assert_eq!(diag_a.congruence[dead_target], 0.0);
        for (k, &src) in diag_a.permutation.iter().enumerate() {
            if k != dead_target {
                assert_eq!(src, k);
                assert!(diag_a.congruence[k] > 0.99);
            }
        }
        // Zero columns stay zero: nothing to rescale.
        for n in 0..3 {
            assert!(aligned_a.factor(n).col(1).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn jk_parallel_is_bitwise_equal_to_jk_als() {
        let t = random_tensor(&[7, 6, 5], 41);
        let p = cp_als_fit(
            &t,
            CpModel::init_random(t.dims(), 2, 42).unwrap(),
            &FitConfig {
                force_iterations: Some(4),
                ..FitConfig::default()
            },
        )
        .unwrap();
        let cfg = JackknifeConfig {
            fit: FitConfig {
                force_iterations: Some(8),
                ..FitConfig::default()
            },
            ..JackknifeConfig::new(0, 2)
        };
        let a = jk_als(&t, &p, &cfg).unwrap();
        let b = jk_parallel(&t, &p, &cfg).unwrap();
        assert_eq!(a.submodels.groups, b.submodels.groups);
        for (ra, rb) in a.submodels.submodels.iter().zip(&b.submodels.submodels) {
            let (ma, mb) = (ra.as_ref().unwrap(), rb.as_ref().unwrap());
            assert_eq!(ma, mb);
        }
        assert_eq!(a.flops, b.flops);
        for n in 0..3 {
            match (a.uncertainty.stddev_for(n), b.uncertainty.stddev_for(n)) {
                (Some(sa), Some(sb)) => assert_eq!(sa, sb),
                (None, None) => {}
                _ => panic!("stddev presence mismatch"),
            }
        }
    }

    #[test]
    fn jk_cals_keeps_group_rows_bitwise_zero_every_sweep() {
        let t = random_tensor(&[7, 5, 6], 51);
        let p = CpModel::init_random(t.dims(), 2, 52).unwrap();
        let cfg = JackknifeConfig {
            fit: FitConfig {
                force_iterations: Some(6),
                ..FitConfig::default()
            },
            ..JackknifeConfig::new(0, 3)
        };
        let groups = delete_d_groups(7, 3).unwrap();
        let mut sweeps_seen = 0;
        jk_cals_with_observer(&t, &p, &cfg, |_, views| {
            sweeps_seen += 1;
            for (model, group) in views.iter().zip(&groups) {
                for &row in group {
                    for c in 0..model.rank() {
                        assert_eq!(model.factor(0).at(row, c).to_bits(), 0.0f64.to_bits());
                    }
                }
            }
        })
        .unwrap();
        assert_eq!(sweeps_seen, 6);
    }

    #[test]
    fn pooled_jackknife_matches_per_model_runs() {
        let t = random_tensor(&[6, 7, 5], 141);
        let models: Vec<CpModel> = [(2usize, 142u64), (3, 143), (2, 144)]
            .iter()
            .map(|&(r, seed)| {
                cp_als_fit(
                    &t,
                    CpModel::init_random(t.dims(), r, seed).unwrap(),
                    &FitConfig {
                        force_iterations: Some(4),
                        ..FitConfig::default()
                    },
                )
                .unwrap()
            })
            .collect();
        let cfg = JackknifeConfig {
            fit: FitConfig {
                force_iterations: Some(8),
                ..FitConfig::default()
            },
            ..JackknifeConfig::new(0, 2)
        };
        let (pooled, pool_flops) = jk_cals_pooled(&t, &models, &cfg).unwrap();
        assert_eq!(pooled.len(), 3);
        let mut solo_mttkrp = 0;
        for (p, pooled_out) in models.iter().zip(&pooled) {
            let solo = jk_cals(&t, p, &cfg).unwrap();
            solo_mttkrp += solo.flops.mttkrp;
            for ((_, a), (_, b)) in solo.submodels.fitted().zip(pooled_out.submodels.fitted()) {
                assert!(max_rel_model_diff(b, a) < 1e-12);
            }
            for n in 1..3 {
                let (sa, sb) = (
                    solo.uncertainty.stddev_for(n).unwrap(),
                    pooled_out.uncertainty.stddev_for(n).unwrap(),
                );
                let scale = sa.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(sa.max_abs_diff(sb) <= 1e-12 * scale.max(1e-12));
            }
            assert_eq!(pooled_out.flops, FlopCounter::default());
        }
        // Forced iterations keep every slot live for the same sweeps, so the
        // pooled kernel work equals the sum of the solo runs exactly.
        assert_eq!(pool_flops.mttkrp, solo_mttkrp);
    }

    #[test]
    fn mttkrp_flop_ratio_matches_group_count_identity() {
        let t = random_tensor(&[8, 6, 5], 61);
        let p = CpModel::init_random(t.dims(), 2, 62).unwrap();
        for d in [1usize, 2, 3, 4] {
            let cfg = JackknifeConfig {
                fit: FitConfig {
                    force_iterations: Some(4),
                    ..FitConfig::default()
                },
                ..JackknifeConfig::new(0, d)
            };
            let reference = jk_als(&t, &p, &cfg).unwrap();
            let fast = jk_cals(&t, &p, &cfg).unwrap();
            let g = reference.submodels.n_groups() as u64;
            // Fused sweeps run g submodels over the full tensor; reference
            // sweeps cover all groups' reduced tensors, summing to (g-1)
            // full-tensor equivalents. For d | I this is I/(I-d) exactly.
            assert_eq!(
                fast.flops.mttkrp * (g - 1),
                reference.flops.mttkrp * g,
                "d = {d}"
            );
            if 8 % d == 0 {
                assert_eq!(
                    fast.flops.mttkrp * (8 - d as u64),
                    reference.flops.mttkrp * 8,
                    "d = {d}"
                );
            }
        }
    }

    #[test]
    fn alignment_recovers_a_pure_permutation() {
        let p = normalized_gauge(&CpModel::init_random(&[5, 6, 4], 4, 71).unwrap(), 0);
        let shuffle = [2usize, 0, 3, 1];
        let factors: Vec<Matrix> = (0..3)
            .map(|n| p.factor(n).select_columns(&shuffle))
            .collect();
        let p_hat = CpModel::from_factors(factors).unwrap();
        let (aligned, diag) = align_submodel(&p_hat, &p, 0).unwrap();
        assert!(max_rel_model_diff(&aligned, &p) < 1e-12);
        // aligned column k = p_hat column perm[k] = p column shuffle[perm[k]]
        for (k, &src) in diag.permutation.iter().enumerate() {
            assert_eq!(shuffle[src], k);
        }
        assert!(diag.congruence.iter().all(|&c| c > 1.0 - 1e-10));
    }

    #[test]
    fn alignment_undoes_even_sign_flips_exactly() {
        let p = normalized_gauge(&CpModel::init_random(&[4, 5, 6], 3, 81).unwrap(), 0);
        let mut factors: Vec<Matrix> = p.factors().to_vec();
        factors[1].scale_col(1, -1.0);
        factors[2].scale_col(1, -1.0);
        let p_hat = CpModel::from_factors(factors).unwrap();
        let (aligned, diag) = align_submodel(&p_hat, &p, 0).unwrap();
        assert!(max_rel_model_diff(&aligned, &p) < 1e-12);
        assert!(diag.sampled_mode_sign_flips.is_empty());
    }

    #[test]
    fn alignment_compensates_odd_sign_flips_in_the_sampled_mode() {
        let p = normalized_gauge(&CpModel::init_random(&[4, 5, 6], 3, 82).unwrap(), 0);
        let mut factors: Vec<Matrix> = p.factors().to_vec();
        factors[1].scale_col(2, -1.0);
        let p_hat = CpModel::from_factors(factors).unwrap();
        let before = p_hat.reconstruct().unwrap();
        let (aligned, diag) = align_submodel(&p_hat, &p, 0).unwrap();
        assert_eq!(diag.sampled_mode_sign_flips, vec![2]);
        let after = aligned.reconstruct().unwrap();
        assert!(rel_tensor_diff(&after, &before) < 1e-12);
    }

    #[test]
    fn alignment_never_changes_the_reconstruction() {
        for seed in 0..10u64 {
            let p = CpModel::init_random(&[5, 4, 6], 3, 200 + seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let factors: Vec<Matrix> = p
                .factors()
                .iter()
                .map(|f| {
                    Matrix::from_fn(f.rows(), f.cols(), |i, j| {
                        f.at(i, j) + 0.3 * (rng.gen::<f64>() - 0.5)
                    })
                })
                .collect();
            let p_hat = CpModel::from_factors(factors).unwrap();
            let before = p_hat.reconstruct().unwrap();
            let (aligned, _) = align_submodel(&p_hat, &p, 1).unwrap();
            let after = aligned.reconstruct().unwrap();
            assert!(rel_tensor_diff(&after, &before) < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn alignment_rejects_rank_mismatch() {
        let a = CpModel::init_random(&[4, 5], 2, 1).unwrap();
        let b = CpModel::init_random(&[4, 5], 3, 2).unwrap();
        assert!(align_submodel(&a, &b, 0).is_err());
    }

    #[test]
    fn jackknife_std_handles_the_two_point_case() {
        let base = CpModel::init_random(&[3, 4, 5], 2, 91).unwrap();
        let delta = 0.125;
        let mut hi = base.clone();
        *hi.factor_mut(1).at_mut(2, 1) += delta;
        let mut lo = base.clone();
        *lo.factor_mut(1).at_mut(2, 1) -= delta;
        let set = SubmodelSet {
            sampled_mode: 0,
            d: 1,
            groups: vec![vec![0], vec![1]],
            submodels: vec![Ok(hi), Ok(lo)],
        };
        let unc = jackknife_std(&set, &base, 0).unwrap();
        let s = unc.stddev_for(1).unwrap();
        // g=2 and values mean±delta: S = sqrt((1/2)*(2*delta^2)) = delta.
        assert!((s.at(2, 1) - delta).abs() < 1e-15);
        for (i, &x) in s.data().iter().enumerate() {
            if i != 2 + s.rows() {
                assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn jackknife_std_is_zero_for_identical_submodels() {
        let m = CpModel::init_random(&[3, 4], 2, 92).unwrap();
        let set = SubmodelSet {
            sampled_mode: 0,
            d: 1,
            groups: vec![vec![0], vec![1], vec![2]],
            submodels: vec![Ok(m.clone()), Ok(m.clone()), Ok(m.clone())],
        };
        let unc = jackknife_std(&set, &m, 0).unwrap();
        assert!(unc.stddev_for(1).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn jackknife_std_requires_two_fitted_submodels() {
        let m = CpModel::init_random(&[3, 4], 2, 93).unwrap();
        let set = SubmodelSet {
            sampled_mode: 0,
            d: 1,
            groups: vec![vec![0], vec![1]],
            submodels: vec![Ok(m.clone()), Err("diverged".into())],
        };
        assert!(jackknife_std(&set, &m, 0).is_err());
    }

    #[test]
    fn standard_errors_grow_with_injected_noise() {
        let truth = CpModel::init_random(&[8, 5, 4], 2, 101).unwrap();
        let clean = truth.reconstruct().unwrap();
        let noise = random_tensor(clean.dims(), 102);
        let noise_scale = (clean.norm_sq() / noise.norm_sq()).sqrt();
        let mut means = Vec::new();
        for level in [0.01, 0.05, 0.25] {
            let data: Vec<f64> = clean
                .data()
                .iter()
                .zip(noise.data())
                .map(|(c, e)| c + level * noise_scale * e)
                .collect();
            let t = DenseTensor::new(clean.dims().to_vec(), data).unwrap();
            let p = cp_als_fit(
                &t,
                truth.clone(),
                &FitConfig {
                    tolerance: 1e-10,
                    max_iterations: 300,
                    ..FitConfig::default()
                },
            )
            .unwrap();
            let cfg = JackknifeConfig {
                fit: FitConfig {
                    tolerance: 1e-10,
                    max_iterations: 300,
                    ..FitConfig::default()
                },
                ..JackknifeConfig::new(0, 1)
            };
            let out = jk_cals(&t, &p, &cfg).unwrap();
            let mut total = 0.0;
            let mut count = 0;
            for n in 1..3 {
                let s = out.uncertainty.stddev_for(n).unwrap();
                assert!(s.data().iter().all(|&x| x.is_finite() && x >= 0.0));
                total += s.data().iter().sum::<f64>();
                count += s.data().len();
            }
            means.push(total / count as f64);
        }
        assert!(means[0] > 0.0);
        assert!(means[1] > means[0], "{means:?}");
        assert!(means[2] > means[1], "{means:?}");
    }

    #[test]
    fn disabling_alignment_skips_diagnostics() {
        let t = random_tensor(&[6, 4, 4], 111);
        let p = cp_als_fit(
            &t,
            CpModel::init_random(t.dims(), 2, 112).unwrap(),
            &FitConfig {
                force_iterations: Some(3),
                ..FitConfig::default()
            },
        )
        .unwrap();
        let cfg = JackknifeConfig {
            alignment: false,
            fit: FitConfig {
                force_iterations: Some(3),
                ..FitConfig::default()
            },
            ..JackknifeConfig::new(0, 1)
        };
        let out = jk_als(&t, &p, &cfg).unwrap();
        assert!(out.uncertainty.alignment.iter().all(|d| d.is_none()));
        let aligned_cfg = JackknifeConfig {
            alignment: true,
            ..cfg
        };
        let out2 = jk_als(&t, &p, &aligned_cfg).unwrap();
        assert!(out2.uncertainty.alignment.iter().all(|d| d.is_some()));
    }

    #[test]
    fn jackknife_validates_inputs() {
        let t = random_tensor(&[6, 4, 4], 121);
        let p = CpModel::init_random(&[6, 4, 4], 2, 122).unwrap();
        let bad_mode = JackknifeConfig::new(3, 1);
        assert!(jackknife(&t, &p, &bad_mode).is_err());
        let bad_d = JackknifeConfig::new(0, 4);
        assert!(jackknife(&t, &p, &bad_d).is_err());
        let wrong_model = CpModel::init_random(&[5, 4, 4], 2, 123).unwrap();
        assert!(jackknife(&t, &wrong_model, &JackknifeConfig::new(0, 1)).is_err());
    }
}
