//! Delete-d jackknife: remove d slices per group instead of one, trading
//! resolution for fewer (and cheaper) refits.
//!
//! Also demonstrates the kernel-cost identity that makes the fused jackknife
//! attractive: its MTTKRPs run over the full tensor instead of the reduced
//! one, so the counted-flop overhead is exactly I/(I-d) per group when d
//! divides I — at most 2x, and tiny for leave-one-out.
//!
//! Run with: cargo run --release --example jackknife_delete_d

use cpjack::bench::SyntheticSpec;
use cpjack::jackknife::delete_d_groups;
use cpjack::model::cp_als_fit;
use cpjack::{jk_als, jk_cals, CpModel, FitConfig, JackknifeConfig};

fn main() -> cpjack::Result<()> {
    let t = SyntheticSpec {
        dims: vec![20, 15, 12],
        true_rank: 2,
        noise_level: 0.1,
        seed: 8,
    }
    .generate()?;
    let fit = FitConfig {
        force_iterations: Some(10),
        ..FitConfig::default()
    };
    let overall = cp_als_fit(&t, CpModel::init_random(t.dims(), 2, 9)?, &fit)?;

    println!("sampled mode 0 has {} slices", t.dims()[0]);
    println!("   d  groups  fused/reference mttkrp flops");
    for d in [1usize, 2, 5] {
        let groups = delete_d_groups(t.dims()[0], d)?;
        let cfg = JackknifeConfig {
            fit: fit.clone(),
            ..JackknifeConfig::new(0, d)
        };
        let fused = jk_cals(&t, &overall, &cfg)?;
        let reference = jk_als(&t, &overall, &cfg)?;
        let ratio = fused.flops.mttkrp as f64 / reference.flops.mttkrp as f64;
        println!(
            "{d:>4}  {:>6}  {}/{} = {ratio:.4} (I/(I-d) = {:.4})",
            groups.len(),
            fused.flops.mttkrp,
            reference.flops.mttkrp,
            t.dims()[0] as f64 / (t.dims()[0] - d) as f64
        );

        let s_fused = fused.uncertainty.stddev_for(1).unwrap();
        let s_ref = reference.uncertainty.stddev_for(1).unwrap();
        let max_diff = s_fused.max_abs_diff(s_ref);
        println!("      max |stddev difference| vs reference: {max_diff:.3e}");
    }
    Ok(())
}
