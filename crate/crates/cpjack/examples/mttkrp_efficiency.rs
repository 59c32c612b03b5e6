//! Throughput of the MTTKRP kernel as the number of components grows.
//!
//! At rank 1 the product is effectively a matrix-vector sweep and runs at
//! memory speed; as the Khatri-Rao block widens the same tensor traffic is
//! shared by more columns and throughput climbs toward a plateau. This is
//! the effect that makes jackknife fusion pay off: many narrow submodels
//! become one wide product.
//!
//! Run with: cargo run --release --example mttkrp_efficiency

use cpjack::bench::{bench_mttkrp, log_spaced_ranks, mttkrp_rows_to_csv, SyntheticSpec};

fn main() -> cpjack::Result<()> {
    let t = SyntheticSpec {
        dims: vec![50, 120, 120],
        true_rank: 1,
        noise_level: 1.0,
        seed: 3,
    }
    .generate()?;
    let ranks = log_spaced_ranks(1, 200, 10)?;
    let rows = bench_mttkrp(&t, &ranks, 1, 3, None, 4)?;
    print!("{}", mttkrp_rows_to_csv(&rows));

    let first = rows.first().unwrap().throughput_flops_per_second;
    let last = rows.last().unwrap().throughput_flops_per_second;
    println!(
        "# throughput grew {:.1}x from rank {} to rank {}",
        last / first,
        rows.first().unwrap().rank,
        rows.last().unwrap().rank
    );
    Ok(())
}
