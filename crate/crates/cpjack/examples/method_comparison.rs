//! The three jackknife drivers on one problem: sequential reference,
//! group-parallel reference, and the fused lock-step accelerator.
//!
//! All three produce the same standard errors (the parallel driver is
//! bitwise identical to the sequential one; the fused driver agrees to
//! floating-point noise). Only the wall time differs.
//!
//! Run with: cargo run --release --example method_comparison

use std::time::Instant;

use cpjack::bench::SyntheticSpec;
use cpjack::model::cp_als_fit;
use cpjack::{jackknife, CpModel, FitConfig, JackknifeConfig, JackknifeMethod, JackknifeOutput};

fn main() -> cpjack::Result<()> {
    let t = SyntheticSpec {
        dims: vec![40, 60, 50],
        true_rank: 4,
        noise_level: 0.1,
        seed: 11,
    }
    .generate()?;
    let fit = FitConfig {
        force_iterations: Some(25),
        ..FitConfig::default()
    };
    let overall = cp_als_fit(&t, CpModel::init_random(t.dims(), 4, 12)?, &fit)?;

    let mut results: Vec<(JackknifeMethod, f64, JackknifeOutput)> = Vec::new();
    for method in [
        JackknifeMethod::ReferenceAls,
        JackknifeMethod::ParallelAls,
        JackknifeMethod::Cals,
    ] {
        let cfg = JackknifeConfig {
            fit: fit.clone(),
            method,
            ..JackknifeConfig::new(0, 1)
        };
        let start = Instant::now();
        let out = jackknife(&t, &overall, &cfg)?;
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{:<13} {:>7.3} s   mttkrp flops {}",
            method.name(),
            secs,
            out.flops.mttkrp
        );
        results.push((method, secs, out));
    }

    let (_, ref_secs, reference) = &results[0];
    for (method, secs, out) in &results[1..] {
        let mut max_diff = 0.0f64;
        for n in 1..3 {
            let a = reference.uncertainty.stddev_for(n).unwrap();
            let b = out.uncertainty.stddev_for(n).unwrap();
            max_diff = max_diff.max(a.max_abs_diff(b));
        }
        println!(
            "{:<13} speedup {:.2}x, max |stddev difference| {max_diff:.3e}",
            method.name(),
            ref_secs / secs
        );
    }
    Ok(())
}
