//! Concurrent ALS: fitting many CP models to the same tensor in lock step.
//!
//! Per mode, the MTTKRPs of all active models are fused into a single wide
//! matrix product: the per-model Khatri-Rao products are stacked side by side
//! (total width = sum of ranks) and multiplied against the unfolding once.
//! Everything rank-dependent and cheap — Hadamard products, normal-equation
//! solves, error evaluation — stays per model, so each model's trajectory is
//! exactly the trajectory it would follow when fitted alone.
//!
//! Models converge individually: once a model passes the tolerance test it is
//! frozen at the end of that sweep and later sweeps fuse only the survivors,
//! shrinking the fused width. An optional column budget caps the fused width
//! per product, bounding workspace memory without changing any result.

use crate::error::{CpError, Result};
use crate::flops::FlopCounter;
use crate::matrix::{gramian, hadamard_skip, krp_exclude_into, pinv_solve, Matrix};
use crate::model::{compute_error, CpModel, FitConfig};
use crate::tensor::{unfolding_times_matrix, DenseTensor};

/// Settings for a concurrent fit.
#[derive(Debug, Clone, Default)]
pub struct CalsConfig {
    pub fit: FitConfig,
    /// Maximum fused width per matrix product; 0 means unlimited. Models are
    /// split into batches that respect the budget (a single model wider than
    /// the budget still runs, alone). Results do not depend on the budget.
    pub column_budget: usize,
}

/// Result of a concurrent fit: the fitted models in input order plus the
/// aggregate flop tally.
#[derive(Debug, Clone)]
pub struct CalsOutput {
    pub models: Vec<CpModel>,
    pub flops: FlopCounter,
}

/// The mode-`mode` factors of several models stacked side by side: column
/// block `i` is model `i`'s factor, at `offsets[i]..offsets[i+1]`.
#[derive(Debug, Clone)]
pub struct MultiFactor {
    mode: usize,
    offsets: Vec<usize>,
    data: Matrix,
}

impl MultiFactor {
    pub fn mode(&self) -> usize {
        self.mode
    }

    /// Total fused width, the sum of the model ranks.
    pub fn width(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn n_models(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    /// Column range of model `i` inside the fused width.
    pub fn block_columns(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Copy of model `i`'s factor block.
    pub fn block(&self, i: usize) -> Matrix {
        let range = self.block_columns(i);
        self.data.select_columns(&range.collect::<Vec<_>>())
    }
}

/// Stacks the mode-`mode` factors of `models` into one wide matrix.
pub fn fuse(models: &[CpModel], mode: usize) -> Result<MultiFactor> {
    let first = models
        .first()
        .ok_or_else(|| CpError::InvalidArgument("fuse needs at least one model".into()))?;
    if mode >= first.ndims() {
        return Err(CpError::InvalidMode {
            mode,
            ndims: first.ndims(),
        });
    }
    let rows = first.factor(mode).rows();
    if models
        .iter()
        .any(|m| m.ndims() != first.ndims() || m.factor(mode).rows() != rows)
    {
        return Err(CpError::DimensionMismatch(
            "fused models must share the mode's row count".into(),
        ));
    }
    let mut offsets = Vec::with_capacity(models.len() + 1);
    let mut w = 0;
    for m in models {
        offsets.push(w);
        w += m.rank();
    }
    offsets.push(w);
    let mut data = Matrix::zeros(rows, w);
    for (m, &off) in models.iter().zip(&offsets) {
        let f = m.factor(mode);
        data.data_mut()[off * rows..(off + f.cols()) * rows].copy_from_slice(f.data());
    }
    Ok(MultiFactor {
        mode,
        offsets,
        data,
    })
}

/// Fused MTTKRP for `mode`: ONE wide matrix product of the mode-`mode`
/// unfolding against the horizontally-stacked per-model Khatri-Rao products.
/// Column block `i` of the result equals the stand-alone MTTKRP of model `i`.
///
/// `multis` must hold one [`MultiFactor`] per mode, with identical block
/// structure across modes.
pub fn fused_mttkrp(t: &DenseTensor, multis: &[MultiFactor], mode: usize) -> Result<Matrix> {
    let dims = t.dims();
    if mode >= dims.len() {
        return Err(CpError::InvalidMode {
            mode,
            ndims: dims.len(),
        });
    }
    if multis.len() != dims.len() {
        return Err(CpError::DimensionMismatch(format!(
            "{} multifactors for a {}-mode tensor",
            multis.len(),
            dims.len()
        )));
    }
    let offsets = &multis[0].offsets;
    for (n, mf) in multis.iter().enumerate() {
        if mf.mode != n || mf.data.rows() != dims[n] || &mf.offsets != offsets {
            return Err(CpError::DimensionMismatch(
                "multifactors must cover modes 0..N with one consistent block structure".into(),
            ));
        }
    }
    let w = multis[0].width();
    let rest = t.element_count() / dims[mode];
    let mut krp = Matrix::zeros(rest, w);
    for (i, &off) in offsets.iter().enumerate().take(multis[0].n_models()) {
        let factors: Vec<Matrix> = multis.iter().map(|mf| mf.block(i)).collect();
        krp_exclude_into(&factors, mode, krp.data_mut(), rest, off);
    }
    let mut out = Matrix::zeros(dims[mode], w);
    unfolding_times_matrix(t, mode, krp.data(), w, out.data_mut(), 1);
    Ok(out)
}

/// One model in the lock-step driver, with its private error target and an
/// optional set of factor rows pinned to zero in one mode (zero-padded
/// jackknife submodels).
#[derive(Debug, Clone)]
pub(crate) struct CalsSlot {
    pub model: CpModel,
    /// `||T||^2` target for the error formula; differs from the tensor's own
    /// norm when the slot models a tensor with slices deleted.
    pub norm_sq: f64,
    /// `(mode, rows)` re-zeroed after every update of that mode.
    pub zero_rows: Option<(usize, Vec<usize>)>,
}

impl CalsSlot {
    pub fn plain(model: CpModel, norm_sq: f64) -> CalsSlot {
        CalsSlot {
            model,
            norm_sq,
            zero_rows: None,
        }
    }
}

/// Lock-step outcome: every model in input order (failed ones frozen in their
/// last consistent state, with the failure message alongside) plus the flop
/// tally.
pub(crate) struct DriveOutput {
    pub models: Vec<CpModel>,
    pub failures: Vec<Option<String>>,
    pub flops: FlopCounter,
}

struct SlotState {
    slot: CalsSlot,
    grams: Vec<Matrix>,
    h_last: Matrix,
    m_last: Matrix,
    prev: f64,
    active: bool,
    failure: Option<String>,
}

/// Lock-step ALS over all slots. A numerical failure in one slot freezes that
/// slot and leaves the others running. `observe(sweep, models)` runs after
/// every completed sweep with all models in input order (frozen included).
pub(crate) fn drive_lockstep<F>(
    t: &DenseTensor,
    slots: Vec<CalsSlot>,
    fit: &FitConfig,
    column_budget: usize,
    mut observe: F,
) -> Result<DriveOutput>
where
    F: FnMut(usize, &[&CpModel]),
{
    if slots.is_empty() {
        return Err(CpError::InvalidArgument(
            "concurrent fit needs at least one model".into(),
        ));
    }
    let dims = t.dims().to_vec();
    let n_modes = dims.len();
    for s in &slots {
        if s.model.dims() != dims {
            return Err(CpError::DimensionMismatch(format!(
                "model dims {:?} do not match tensor dims {:?}",
                s.model.dims(),
                dims
            )));
        }
        if let Some((zm, rows)) = &s.zero_rows {
            if *zm >= n_modes {
                return Err(CpError::InvalidMode {
                    mode: *zm,
                    ndims: n_modes,
                });
            }
            if rows.iter().any(|&r| r >= dims[*zm]) {
                return Err(CpError::IndexOutOfRange(
                    "zero-row index outside its mode".into(),
                ));
            }
        }
    }

    let max_rank = slots.iter().map(|s| s.model.rank()).max().unwrap();
    let total_width: usize = slots.iter().map(|s| s.model.rank()).sum();
    let budget = if column_budget == 0 {
        total_width
    } else {
        column_budget.max(max_rank)
    };
    let buf_width = budget.min(total_width);
    let max_rest = (0..n_modes)
        .map(|n| t.element_count() / dims[n])
        .max()
        .unwrap();
    let max_dim = *dims.iter().max().unwrap();
    let mut krp = vec![0.0; max_rest * buf_width];
    let mut m_wide = vec![0.0; max_dim * buf_width];

    let mut states: Vec<SlotState> = slots
        .into_iter()
        .map(|mut slot| {
            zero_slot_rows(&mut slot);
            let grams = slot.model.factors().iter().map(gramian).collect();
            let rank = slot.model.rank();
            let prev = slot.norm_sq;
            slot.model.errors.clear();
            slot.model.iterations = 0;
            SlotState {
                grams,
                h_last: Matrix::zeros(rank, rank),
                m_last: Matrix::zeros(max_dim, rank),
                prev,
                slot,
                active: true,
                failure: None,
            }
        })
        .collect();

    let mut flops = FlopCounter::default();
    let (sweeps, check_tol) = match fit.force_iterations {
        Some(k) => (k, false),
        None => (fit.max_iterations, true),
    };
    let threads = fit.threads.max(1);

    for sweep in 1..=sweeps {
        // Compact: fuse only the models still running, in batches that keep
        // the fused width within the budget.
        let active: Vec<usize> = (0..states.len()).filter(|&i| states[i].active).collect();
        if active.is_empty() {
            break;
        }
        let mut batches: Vec<Vec<usize>> = Vec::new();
        let mut cur: Vec<usize> = Vec::new();
        let mut cur_w = 0;
        for &i in &active {
            let r = states[i].slot.model.rank();
            if !cur.is_empty() && cur_w + r > budget {
                batches.push(std::mem::take(&mut cur));
                cur_w = 0;
            }
            cur.push(i);
            cur_w += r;
        }
        if !cur.is_empty() {
            batches.push(cur);
        }

        for n in 0..n_modes {
            let rest = t.element_count() / dims[n];
            let krp_sizes: Vec<usize> = (0..n_modes).filter(|&m| m != n).map(|m| dims[m]).collect();
            for batch in &batches {
                let mut off = 0;
                let mut live = Vec::with_capacity(batch.len());
                for &i in batch {
                    if !states[i].active {
                        continue;
                    }
                    krp_exclude_into(states[i].slot.model.factors(), n, &mut krp, rest, off);
                    live.push((i, off));
                    off += states[i].slot.model.rank();
                }
                let width = off;
                if width == 0 {
                    continue;
                }
                unfolding_times_matrix(t, n, &krp, width, &mut m_wide, threads);
                flops.add_mttkrp(&dims, width);

                for &(i, off) in &live {
                    let st = &mut states[i];
                    let rank = st.slot.model.rank();
                    let mut m = Matrix::zeros(dims[n], rank);
                    m.data_mut()
                        .copy_from_slice(&m_wide[off * dims[n]..(off + rank) * dims[n]]);
                    let h = hadamard_skip(&st.grams, n);
                    let mut u = match pinv_solve(&m, &h, fit.rcond) {
                        Ok(u) => u,
                        Err(e) => {
                            st.failure = Some(e.to_string());
                            st.active = false;
                            continue;
                        }
                    };
                    if let Some((zm, rows)) = &st.slot.zero_rows {
                        if *zm == n {
                            for &row in rows {
                                for c in 0..rank {
                                    *u.at_mut(row, c) = 0.0;
                                }
                            }
                        }
                    }
                    st.grams[n] = gramian(&u);
                    st.slot.model.set_factor(n, u)?;
                    if n + 1 == n_modes {
                        st.h_last = h;
                        st.m_last = m;
                    }
                    flops.add_khatri_rao(&krp_sizes, rank);
                    flops.add_hadamard(rank, n_modes - 1);
                    flops.add_gramian(dims[n], rank);
                    flops.add_solve(dims[n], rank);
                }
            }
        }

        for &i in &active {
            let st = &mut states[i];
            if !st.active && st.failure.is_some() {
                continue;
            }
            let rank = st.slot.model.rank();
            let e = match compute_error(
                st.slot.norm_sq,
                st.slot.model.factor(n_modes - 1),
                &st.h_last,
                &st.m_last,
            ) {
                Ok(e) => e,
                Err(err) => {
                    st.failure = Some(err.to_string());
                    st.active = false;
                    continue;
                }
            };
            flops.add_error(dims[n_modes - 1], rank);
            st.slot.model.errors.push(e);
            st.slot.model.iterations += 1;
            if check_tol && (st.prev - e).abs() / st.prev.max(f64::MIN_POSITIVE) < fit.tolerance {
                st.active = false;
            }
            st.prev = e;
        }

        let views: Vec<&CpModel> = states.iter().map(|s| &s.slot.model).collect();
        observe(sweep, &views);
    }

    let mut models = Vec::with_capacity(states.len());
    let mut failures = Vec::with_capacity(states.len());
    for s in states {
        models.push(s.slot.model);
        failures.push(s.failure);
    }
    Ok(DriveOutput {
        models,
        failures,
        flops,
    })
}

fn zero_slot_rows(slot: &mut CalsSlot) {
    if let Some((zm, rows)) = &slot.zero_rows {
        let mode = *zm;
        let rank = slot.model.rank();
        let rows = rows.clone();
        let f = slot.model.factor_mut(mode);
        for &row in &rows {
            for c in 0..rank {
                *f.at_mut(row, c) = 0.0;
            }
        }
    }
}

/// Fits all `models` to `t` concurrently. Each model keeps its own error
/// history, iteration count, and convergence decision, exactly as in a
/// stand-alone [`crate::model::cp_als_fit`]; only the MTTKRP work is shared.
pub fn cals_fit(t: &DenseTensor, models: Vec<CpModel>, config: &CalsConfig) -> Result<CalsOutput> {
    let norm = t.norm_sq();
    let slots = models
        .into_iter()
        .map(|m| CalsSlot::plain(m, norm))
        .collect();
    let out = drive_lockstep(t, slots, &config.fit, config.column_budget, |_, _| {})?;
    if let Some((i, msg)) = out
        .failures
        .iter()
        .enumerate()
        .find_map(|(i, f)| f.as_ref().map(|m| (i, m.clone())))
    {
        return Err(CpError::NumericalBreakdown(format!("model {i}: {msg}")));
    }
    Ok(CalsOutput {
        models: out.models,
        flops: out.flops,
    })
}
