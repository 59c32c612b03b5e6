//! Leave-one-out jackknife of a fitted CP model: per-entry standard errors
//! for every factor matrix except the sampled mode's.
//!
//! Run with: cargo run --release --example jackknife_loo

use cpjack::bench::SyntheticSpec;
use cpjack::model::cp_als_fit;
use cpjack::{jk_cals, CpModel, FitConfig, JackknifeConfig};

fn main() -> cpjack::Result<()> {
    let t = SyntheticSpec {
        dims: vec![25, 30, 20],
        true_rank: 3,
        noise_level: 0.15,
        seed: 5,
    }
    .generate()?;
    let fit = FitConfig {
        tolerance: 1e-7,
        max_iterations: 300,
        ..FitConfig::default()
    };
    let overall = cp_als_fit(&t, CpModel::init_random(t.dims(), 3, 6)?, &fit)?;
    println!(
        "overall model: rank 3, {} sweeps, relative error {:.3e}",
        overall.iterations,
        overall.final_error().unwrap() / t.norm_sq()
    );

    // Leave one slice of mode 0 out at a time: 25 submodels, all fitted
    // concurrently against the full tensor with zero-pinned rows.
    let cfg = JackknifeConfig {
        fit,
        ..JackknifeConfig::new(0, 1)
    };
    let out = jk_cals(&t, &overall, &cfg)?;
    println!(
        "{} submodels, {} fitted",
        out.submodels.n_groups(),
        out.submodels.fitted().count()
    );

    for n in 1..3 {
        let s = out.uncertainty.stddev_for(n).expect("non-sampled mode");
        let u = overall.factor(n);
        let max_u = u.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let (mut max_s, mut mean_s) = (0.0f64, 0.0);
        for &x in s.data() {
            max_s = max_s.max(x);
            mean_s += x;
        }
        mean_s /= s.data().len() as f64;
        println!("mode {n}: stddev mean {mean_s:.3e}, max {max_s:.3e} (max |loading| {max_u:.3e})");
    }
    println!("estimator: {}", out.uncertainty.convention);
    Ok(())
}
