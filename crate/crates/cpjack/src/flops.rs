//! Exact floating-point operation accounting for the ALS kernels.
//!
//! Counters are integer (`u64`) and derived from closed-form formulas, so
//! ratios between runs are exact rational numbers rather than timer noise.
//! The MTTKRP count is the load-bearing one: a matricized-tensor times
//! Khatri-Rao product of width `W` against a tensor with `E` elements costs
//! exactly `2 * W * E` flops (one multiply and one add per element per
//! column), regardless of how the product is blocked.

use serde::{Deserialize, Serialize};

/// Per-category flop tally for one run.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounter {
    /// Matricized tensor times Khatri-Rao products, `2 * W * prod(dims)` each.
    pub mttkrp: u64,
    /// Khatri-Rao expansions feeding the MTTKRP, one multiply per element of
    /// every intermediate and final product in the chained expansion.
    pub khatri_rao: u64,
    /// Gramians `U^T U` and their Hadamard products.
    pub gramian: u64,
    /// Pseudoinverse-based least-squares solves (eigendecomposition modeled
    /// at a nominal Jacobi cost plus the two dense applications).
    pub solve: u64,
    /// Fast error-formula evaluations.
    pub error_eval: u64,
}

impl FlopCounter {
    /// Exact MTTKRP cost for a tensor with dimensions `dims` and a product of
    /// `width` columns.
    pub fn count_mttkrp(dims: &[usize], width: usize) -> u64 {
        2 * width as u64 * dims.iter().map(|&d| d as u64).product::<u64>()
    }

    /// Multiplies performed by the chained Khatri-Rao expansion of factors
    /// with row counts `sizes` (in expansion order) and `width` columns:
    /// every pairwise product materializes its elements once.
    pub fn count_khatri_rao(sizes: &[usize], width: usize) -> u64 {
        let mut rows = match sizes.first() {
            Some(&s) => s as u64,
            None => return 0,
        };
        let mut mults = 0u64;
        for &s in &sizes[1..] {
            rows *= s as u64;
            mults += rows;
        }
        mults * width as u64
    }

    /// Symmetric Gramian of an `rows x cols` factor: `cols*(cols+1)/2` dot
    /// products of length `rows`, two flops per term.
    pub fn count_gramian(rows: usize, cols: usize) -> u64 {
        rows as u64 * cols as u64 * (cols as u64 + 1)
    }

    /// Hadamard product chain over `n_matrices` square `cols x cols` factors.
    pub fn count_hadamard(cols: usize, n_matrices: usize) -> u64 {
        if n_matrices < 2 {
            return 0;
        }
        (n_matrices as u64 - 1) * (cols as u64) * (cols as u64)
    }

    /// Least-squares solve of an `rows x cols` right-hand side against a
    /// `cols x cols` Gramian: two dense applications of the eigenbasis plus a
    /// nominal `30 * cols^3` for the Jacobi eigendecomposition itself.
    pub fn count_solve(rows: usize, cols: usize) -> u64 {
        let (r, c) = (rows as u64, cols as u64);
        4 * r * c * c + 30 * c * c * c
    }

    /// Fast error formula from cached Gramian/MTTKRP results: two `cols^2`
    /// reductions plus one `rows x cols` elementwise dot.
    pub fn count_error(rows: usize, cols: usize) -> u64 {
        let (r, c) = (rows as u64, cols as u64);
        4 * c * c + 2 * r * c
    }

    pub fn add_mttkrp(&mut self, dims: &[usize], width: usize) {
        self.mttkrp += Self::count_mttkrp(dims, width);
    }

    pub fn add_khatri_rao(&mut self, sizes: &[usize], width: usize) {
        self.khatri_rao += Self::count_khatri_rao(sizes, width);
    }

    pub fn add_gramian(&mut self, rows: usize, cols: usize) {
        self.gramian += Self::count_gramian(rows, cols);
    }

    pub fn add_hadamard(&mut self, cols: usize, n_matrices: usize) {
        self.gramian += Self::count_hadamard(cols, n_matrices);
    }

    pub fn add_solve(&mut self, rows: usize, cols: usize) {
        self.solve += Self::count_solve(rows, cols);
    }

    pub fn add_error(&mut self, rows: usize, cols: usize) {
        self.error_eval += Self::count_error(rows, cols);
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        self.mttkrp += other.mttkrp;
        self.khatri_rao += other.khatri_rao;
        self.gramian += other.gramian;
        self.solve += other.solve;
        self.error_eval += other.error_eval;
    }

    pub fn total(&self) -> u64 {
        self.mttkrp + self.khatri_rao + self.gramian + self.solve + self.error_eval
    }
}
