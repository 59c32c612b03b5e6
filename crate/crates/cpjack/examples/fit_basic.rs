//! Fit a single CP model to a noisy synthetic tensor and watch the error
//! trajectory.
//!
//! Run with: cargo run --release --example fit_basic

use cpjack::bench::SyntheticSpec;
use cpjack::model::cp_als_fit_counted;
use cpjack::{CpModel, FitConfig};

fn main() -> cpjack::Result<()> {
    let spec = SyntheticSpec {
        dims: vec![30, 40, 20],
        true_rank: 4,
        noise_level: 0.05,
        seed: 42,
    };
    let t = spec.generate()?;
    println!(
        "tensor {:?}, planted rank {}, noise {}",
        t.dims(),
        spec.true_rank,
        spec.noise_level
    );

    let init = CpModel::init_random(t.dims(), 4, 7)?;
    let fit = FitConfig {
        tolerance: 1e-8,
        max_iterations: 200,
        ..FitConfig::default()
    };
    let (model, flops) = cp_als_fit_counted(&t, init, &fit)?;

    println!("converged after {} sweeps", model.iterations);
    for (i, e) in model.errors.iter().enumerate() {
        if i < 5 || i + 3 > model.errors.len() {
            println!(
                "  sweep {:>3}: error {:.6e} (relative {:.3e})",
                i + 1,
                e,
                e / t.norm_sq()
            );
        } else if i == 5 {
            println!("  ...");
        }
    }
    // The squared noise floor is noise^2 / (1 + noise^2) of ||T||^2.
    let floor = spec.noise_level * spec.noise_level / (1.0 + spec.noise_level * spec.noise_level);
    println!(
        "final relative error {:.3e}, noise floor {:.3e}",
        model.final_error().unwrap() / t.norm_sq(),
        floor
    );
    println!(
        "flops: mttkrp {} ({:.1}% of total {})",
        flops.mttkrp,
        100.0 * flops.mttkrp as f64 / flops.total() as f64,
        flops.total()
    );
    Ok(())
}
