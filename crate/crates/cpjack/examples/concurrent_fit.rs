//! Fit several CP models of different ranks to the same tensor in one fused
//! lock-step run, and check the results against solo fits.
//!
//! The fused driver packs every model's Khatri-Rao columns side by side and
//! issues one wide MTTKRP per mode, so kernel width no longer depends on any
//! single model's rank. Converged models drop out of the batch at sweep
//! boundaries; results are unchanged.
//!
//! Run with: cargo run --release --example concurrent_fit

use std::time::Instant;

use cpjack::bench::SyntheticSpec;
use cpjack::cals::{cals_fit, CalsConfig};
use cpjack::model::cp_als_fit_counted;
use cpjack::{CpModel, FitConfig, FlopCounter};

fn main() -> cpjack::Result<()> {
    let t = SyntheticSpec {
        dims: vec![40, 50, 30],
        true_rank: 5,
        noise_level: 0.1,
        seed: 1,
    }
    .generate()?;
    let fit = FitConfig {
        tolerance: 1e-7,
        max_iterations: 100,
        ..FitConfig::default()
    };
    let ranks = [1usize, 3, 5, 8, 12];
    let inits: Vec<CpModel> = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| CpModel::init_random(t.dims(), r, 100 + i as u64))
        .collect::<cpjack::Result<_>>()?;

    let start = Instant::now();
    let fused = cals_fit(
        &t,
        inits.clone(),
        &CalsConfig {
            fit: fit.clone(),
            column_budget: 0,
        },
    )?;
    let fused_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut solo_flops = FlopCounter::default();
    let mut solo = Vec::new();
    for init in inits {
        let (m, fl) = cp_als_fit_counted(&t, init, &fit)?;
        solo_flops.merge(&fl);
        solo.push(m);
    }
    let solo_secs = start.elapsed().as_secs_f64();

    println!("rank  sweeps  final error    max |fused - solo|");
    for ((r, a), b) in ranks.iter().zip(&fused.models).zip(&solo) {
        let diff = (0..a.ndims())
            .map(|n| a.factor(n).max_abs_diff(b.factor(n)))
            .fold(0.0f64, f64::max);
        println!(
            "{r:>4}  {:>6}  {:.6e}   {diff:.3e}",
            a.iterations,
            a.final_error().unwrap()
        );
    }
    println!(
        "fused: {fused_secs:.3} s, {} mttkrp flops; solo: {solo_secs:.3} s, {} mttkrp flops",
        fused.flops.mttkrp, solo_flops.mttkrp
    );
    Ok(())
}
