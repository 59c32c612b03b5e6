//! Dense CP tensor decomposition with concurrent ALS and an accelerated
//! jackknife for factor-level uncertainty estimates.
//!
//! A CP model approximates an N-mode tensor as a sum of R rank-one outer
//! products. Fitting one model by alternating least squares (ALS) is
//! dominated by a single kernel — the matricized tensor times Khatri-Rao
//! product (MTTKRP) — whose arithmetic intensity at small R is too low to
//! run anywhere near machine peak. This crate exploits that: many models
//! (or many jackknife submodels) fitted to the *same* tensor can share one
//! fused MTTKRP whose width is the sum of their ranks, turning a pile of
//! memory-bound products into a single compute-bound one.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`]: dense tensors in generalized column-major order, mode-n
//!   unfoldings, the MTTKRP kernel (plus an independent reference
//!   implementation used as a test oracle), slice removal and slice norms.
//! - [`matrix`]: the small dense-matrix layer (GEMM wrappers, Gramians,
//!   Khatri-Rao products, a Jacobi-eigendecomposition pseudoinverse).
//! - [`model`]: single-model CP-ALS with a fast Gramian-based error
//!   formula, convergence control, and exact flop accounting.
//! - [`cals`]: concurrent ALS — K independent models advance in lock-step
//!   sweeps, their per-mode Khatri-Rao blocks fused into one wide MTTKRP;
//!   converged models drop out of the batch without disturbing the rest.
//! - [`jackknife`]: delete-d jackknife resampling three ways — a sequential
//!   reference on physically reduced tensors, the same fits run in
//!   parallel, and the fused driver that pins deleted rows to zero so every
//!   submodel can run against the full tensor concurrently. Plus submodel
//!   alignment (permutation/sign/scale) and standard-error estimation.
//! - [`flops`]: closed-form flop counters, exact in `u64`.
//! - [`bench`]: synthetic tensor generation, kernel timing sweeps, run
//!   records, and comparison tables.
//! - [`io`]: file formats — tensors (text and binary), matrices, model
//!   directories, and jackknife results bundles.
//!
//! # Examples
//!
//! Each major capability has a runnable example (`cargo run --release
//! --example <name>`):
//!
//! - `fit_basic` — fit one model, watch the error trajectory and flops.
//! - `concurrent_fit` — several ranks fitted in one fused lock-step run,
//!   checked against solo fits.
//! - `jackknife_loo` — leave-one-out standard errors for every factor
//!   entry.
//! - `jackknife_delete_d` — delete-d grouping and the exact I/(I-d)
//!   kernel-cost identity.
//! - `method_comparison` — the three jackknife drivers on one problem:
//!   same estimates, different wall time.
//! - `mttkrp_efficiency` — kernel throughput versus rank, the effect that
//!   makes fusion pay.
//! - `alignment` — undoing CP's permutation/sign/scale indeterminacy.
//!
//! The thin `cpjack` binary wraps the same entry points for shell use
//! (`gen`, `fit`, `jackknife`, `bench mttkrp`, `report`).
//!
//! ```
//! use cpjack::{jk_cals, CpModel, FitConfig, JackknifeConfig};
//! use cpjack::bench::SyntheticSpec;
//! use cpjack::model::cp_als_fit;
//!
//! let t = SyntheticSpec {
//!     dims: vec![12, 10, 8],
//!     true_rank: 2,
//!     noise_level: 0.1,
//!     seed: 1,
//! }
//! .generate()?;
//! let overall = cp_als_fit(&t, CpModel::init_random(t.dims(), 2, 2)?, &FitConfig::default())?;
//! let out = jk_cals(&t, &overall, &JackknifeConfig::new(0, 1))?;
//! let stddev = out.uncertainty.stddev_for(1).expect("non-sampled mode");
//! assert_eq!((stddev.rows(), stddev.cols()), (10, 2));
//! # Ok::<(), cpjack::CpError>(())
//! ```

pub mod bench;
pub mod cals;
pub mod error;
pub mod flops;
pub mod io;
pub mod jackknife;
pub mod matrix;
pub mod model;
pub mod tensor;

pub use error::{CpError, Result};
pub use flops::FlopCounter;
pub use jackknife::{
    jackknife, jk_als, jk_cals, jk_parallel, JackknifeConfig, JackknifeMethod, JackknifeOutput,
    SubmodelSet, UncertaintyResult,
};
pub use matrix::Matrix;
pub use model::{CpModel, FitConfig};
pub use tensor::DenseTensor;
