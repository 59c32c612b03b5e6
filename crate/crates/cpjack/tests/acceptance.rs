//! End-to-end acceptance checks, one test per criterion. Each prints a
//! `criterion N PASS` line on success (visible with `--nocapture`); a failed
//! assertion marks the criterion failed.
//!
//! Run serially for trustworthy timings:
//! `cargo test --test acceptance -- --test-threads=1 --nocapture`

use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpjack::bench::{bench_mttkrp, log_spaced_ranks, SyntheticSpec};
use cpjack::cals::{fuse, fused_mttkrp};
use cpjack::jackknife::{align_submodel, jk_cals_with_observer};
use cpjack::model::cp_als_fit;
use cpjack::tensor::mttkrp;
use cpjack::{jk_als, jk_cals, CpModel, DenseTensor, FitConfig, JackknifeConfig, Matrix};

/// One criterion at a time: several criteria time real kernel work on what
/// may be a single core.
static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = dims.iter().product();
    let data = (0..len).map(|_| rng.gen::<f64>() - 0.5).collect();
    DenseTensor::new(dims.to_vec(), data).unwrap()
}

fn rel_frobenius_diff(a: &Matrix, b: &Matrix) -> f64 {
    let num: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let den: f64 = b.data().iter().map(|x| x * x).sum();
    (num / den.max(1e-300)).sqrt()
}

#[test]
fn criterion_01_fused_jackknife_matches_the_reference() {
    let _g = gate();
    let start = Instant::now();

    let t = random_tensor(&[10, 12, 14], 101);
    let overall = cp_als_fit(
        &t,
        CpModel::init_random(t.dims(), 3, 102).unwrap(),
        &FitConfig {
            force_iterations: Some(10),
            ..FitConfig::default()
        },
    )
    .unwrap();
    let cfg = JackknifeConfig {
        fit: FitConfig {
            force_iterations: Some(20),
            ..FitConfig::default()
        },
        ..JackknifeConfig::new(0, 1)
    };
    let reference = jk_als(&t, &overall, &cfg).unwrap();
    let fused = jk_cals(&t, &overall, &cfg).unwrap();

    assert_eq!(reference.submodels.n_groups(), 10);
    assert_eq!(fused.submodels.n_groups(), 10);
    let mut worst_factor = 0.0f64;
    let mut worst_error = 0.0f64;
    for ((_, a), (_, b)) in reference.submodels.fitted().zip(fused.submodels.fitted()) {
        assert_eq!(a.iterations, 20);
        assert_eq!(b.iterations, 20);
        for n in 0..3 {
            worst_factor = worst_factor.max(rel_frobenius_diff(b.factor(n), a.factor(n)));
        }
        assert_eq!(a.errors.len(), b.errors.len());
        for (ea, eb) in a.errors.iter().zip(&b.errors) {
            worst_error = worst_error.max((ea - eb).abs() / ea.max(1e-300));
        }
    }
    assert!(worst_factor < 1e-8, "factor drift {worst_factor:e}");
    assert!(worst_error < 1e-8, "error-history drift {worst_error:e}");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "took {secs:.1} s, budget 10 s");
    println!(
        "criterion 1 PASS: max factor diff {worst_factor:.2e}, max error diff {worst_error:.2e}, {secs:.2} s"
    );
}

#[test]
fn criterion_02_mttkrp_flop_ratio_is_integer_exact() {
    let _g = gate();
    let t = random_tensor(&[50, 30, 30], 201);
    let overall = CpModel::init_random(t.dims(), 3, 202).unwrap();
    for d in [1usize, 10] {
        let cfg = JackknifeConfig {
            fit: FitConfig {
                force_iterations: Some(2),
                ..FitConfig::default()
            },
            ..JackknifeConfig::new(0, d)
        };
        let reference = jk_als(&t, &overall, &cfg).unwrap();
        let fused = jk_cals(&t, &overall, &cfg).unwrap();
        // fused/reference == 50/(50-d), cross-multiplied to stay in integers
        assert_eq!(
            fused.flops.mttkrp * (50 - d as u64),
            reference.flops.mttkrp * 50,
            "d = {d}"
        );
        assert!(fused.flops.mttkrp <= 2 * reference.flops.mttkrp);
        println!(
            "criterion 2 PASS (d={d}): {}/{} = 50/{}",
            fused.flops.mttkrp,
            reference.flops.mttkrp,
            50 - d
        );
    }
}

#[test]
fn criterion_03_fused_mttkrp_blocks_match_solo_products() {
    let _g = gate();
    let t = random_tensor(&[8, 9, 10], 301);
    let models: Vec<CpModel> = (0..5)
        .map(|i| CpModel::init_random(t.dims(), 2 + (i % 3), 310 + i as u64).unwrap())
        .collect();
    let mut worst = 0.0f64;
    for mode in 0..3 {
        let multis: Vec<_> = (0..3).map(|n| fuse(&models, n).unwrap()).collect();
        let wide = fused_mttkrp(&t, &multis, mode).unwrap();
        for (i, model) in models.iter().enumerate() {
            let solo = mttkrp(&t, model.factors(), mode).unwrap();
            let block = multis[mode].block_columns(i);
            let fused_block = wide.select_columns(&block.collect::<Vec<_>>());
            worst = worst.max(rel_frobenius_diff(&fused_block, &solo));
        }
    }
    assert!(worst < 1e-12, "block drift {worst:e}");
    println!("criterion 3 PASS: max block diff {worst:.2e} over 5 models x 3 modes");
}

#[test]
fn criterion_04_fast_error_formula_is_consistent() {
    let _g = gate();
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let dims = [
            2 + rng.gen_range(0..15usize),
            2 + rng.gen_range(0..15usize),
            2 + rng.gen_range(0..15usize),
        ];
        let rank = 1 + rng.gen_range(0..8usize);
        let t = random_tensor(&dims, 410 + i);
        let fitted = cp_als_fit(
            &t,
            CpModel::init_random(&dims, rank, 470 + i).unwrap(),
            &FitConfig {
                force_iterations: Some(3 + (i % 4) as usize),
                ..FitConfig::default()
            },
        )
        .unwrap();

        let recon = fitted.reconstruct().unwrap();
        let explicit: f64 = t
            .data()
            .iter()
            .zip(recon.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let fast = fitted.final_error().unwrap();
        worst = worst.max((fast - explicit).abs() / explicit.max(1e-300));

        for w in fitted.errors.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12 * t.norm_sq(),
                "error increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }
    assert!(worst < 1e-8, "formula drift {worst:e}");
    println!("criterion 4 PASS: max relative error-formula drift {worst:.2e} over 50 instances");
}

#[test]
fn criterion_05_noiseless_rank_two_tensor_is_recovered() {
    let _g = gate();
    let truth = CpModel::init_random(&[10, 12, 14], 2, 501).unwrap();
    let t = truth.reconstruct().unwrap();

    // Warm-ish start: the truth with 5% relative perturbation.
    let mut rng = ChaCha8Rng::seed_from_u64(502);
    let factors: Vec<Matrix> = truth
        .factors()
        .iter()
        .map(|f| {
            Matrix::from_fn(f.rows(), f.cols(), |r, c| {
                f.at(r, c) * (1.0 + 0.05 * (rng.gen::<f64>() - 0.5))
            })
        })
        .collect();
    let init = CpModel::from_factors(factors).unwrap();

    let fitted = cp_als_fit(
        &t,
        init,
        &FitConfig {
            tolerance: 1e-16,
            max_iterations: 200,
            ..FitConfig::default()
        },
    )
    .unwrap();
    let final_error = fitted.final_error().unwrap();
    assert!(fitted.iterations <= 200);
    assert!(
        final_error < 1e-6 * t.norm_sq(),
        "final error {final_error:e} vs bound {:e}",
        1e-6 * t.norm_sq()
    );
    println!(
        "criterion 5 PASS: relative error {:.2e} after {} sweeps",
        final_error / t.norm_sq(),
        fitted.iterations
    );
}

#[test]
fn criterion_06_group_rows_stay_bitwise_zero() {
    let _g = gate();
    for size in [6usize, 7] {
        for d in [1usize, 2, 3] {
            let t = random_tensor(&[size, 5, 4], 601 + size as u64);
            let overall = CpModel::init_random(t.dims(), 2, 610 + d as u64).unwrap();
            let cfg = JackknifeConfig {
                fit: FitConfig {
                    force_iterations: Some(4),
                    ..FitConfig::default()
                },
                ..JackknifeConfig::new(0, d)
            };
            let groups = cpjack::jackknife::delete_d_groups(size, d).unwrap();
            let mut sweeps = 0;
            jk_cals_with_observer(&t, &overall, &cfg, |_, views| {
                sweeps += 1;
                for (model, group) in views.iter().zip(&groups) {
                    for &row in group {
                        for c in 0..model.rank() {
                            assert_eq!(
                                model.factor(0).at(row, c).to_bits(),
                                0u64,
                                "nonzero padded row {row} (size {size}, d {d})"
                            );
                        }
                    }
                }
            })
            .unwrap();
            assert_eq!(sweeps, 4);
        }
    }
    println!("criterion 6 PASS: padded rows bitwise zero after every sweep, I in {{6,7}}, d in {{1,2,3}}");
}

#[test]
fn criterion_07_alignment_is_gauge_only_and_recovers_permutations() {
    let _g = gate();
    let mut rng = ChaCha8Rng::seed_from_u64(701);
    let mut worst_recon = 0.0f64;
    for case in 0..100u64 {
        let rank = 2 + (case % 5) as usize; // up to 6
        let mut p = CpModel::init_random(&[5, 6, 4], rank, 710 + case).unwrap();
        // Normalized gauge: unit columns off the sampled mode.
        for k in 0..rank {
            let mut absorbed = 1.0;
            for n in 1..3 {
                let norm = p.factor(n).col_norm(k);
                p.factor_mut(n).scale_col(k, 1.0 / norm);
                absorbed *= norm;
            }
            p.factor_mut(0).scale_col(k, absorbed);
        }

        // Random permutation plus tensor-preserving sign/scale smear.
        let mut shuffle: Vec<usize> = (0..rank).collect();
        for i in (1..rank).rev() {
            shuffle.swap(i, rng.gen_range(0..=i));
        }
        let mut factors: Vec<Matrix> = (0..3)
            .map(|n| p.factor(n).select_columns(&shuffle))
            .collect();
        for k in 0..rank {
            let s = 0.25 + 2.0 * rng.gen::<f64>();
            let s1 = if rng.gen::<bool>() { -1.0 } else { 1.0 };
            let s2 = if rng.gen::<bool>() { -1.0 } else { 1.0 };
            factors[0].scale_col(k, s1 * s2);
            factors[1].scale_col(k, s * s1);
            factors[2].scale_col(k, s2 / s);
        }
        let scrambled = CpModel::from_factors(factors).unwrap();

        let before = scrambled.reconstruct().unwrap();
        let (_aligned, diag) = align_submodel(&scrambled, &p, 0).unwrap();
        let after = _aligned.reconstruct().unwrap();
        let num: f64 = before
            .data()
            .iter()
            .zip(after.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rel = (num / before.norm_sq().max(1e-300)).sqrt();
        worst_recon = worst_recon.max(rel);
        assert!(
            rel < 1e-12,
            "case {case}: reconstruction changed by {rel:e}"
        );

        for (k, &src) in diag.permutation.iter().enumerate() {
            assert_eq!(shuffle[src], k, "case {case}: permutation not recovered");
        }
    }
    println!(
        "criterion 7 PASS: 100 scrambles, max reconstruction change {worst_recon:.2e}, all permutations recovered"
    );
}

#[test]
fn criterion_08_fused_jackknife_is_faster_single_threaded() {
    let _g = gate();
    let t = SyntheticSpec {
        dims: vec![50, 200, 200],
        true_rank: 5,
        noise_level: 0.1,
        seed: 801,
    }
    .generate()
    .unwrap();
    let overall = cp_als_fit(
        &t,
        CpModel::init_random(t.dims(), 5, 802).unwrap(),
        &FitConfig {
            force_iterations: Some(5),
            ..FitConfig::default()
        },
    )
    .unwrap();
    let cfg = JackknifeConfig {
        fit: FitConfig {
            force_iterations: Some(100),
            threads: 1,
            ..FitConfig::default()
        },
        ..JackknifeConfig::new(0, 1)
    };

    let start = Instant::now();
    let reference = jk_als(&t, &overall, &cfg).unwrap();
    let reference_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let fused = jk_cals(&t, &overall, &cfg).unwrap();
    let fused_secs = start.elapsed().as_secs_f64();

    assert_eq!(reference.submodels.fitted().count(), 50);
    assert_eq!(fused.submodels.fitted().count(), 50);
    let speedup = reference_secs / fused_secs;
    assert!(
        fused_secs < reference_secs && speedup >= 1.2,
        "fused {fused_secs:.1} s vs reference {reference_secs:.1} s (speedup {speedup:.2}x, need >= 1.2x)"
    );
    println!(
        "criterion 8 PASS: reference {reference_secs:.1} s, fused {fused_secs:.1} s, speedup {speedup:.2}x"
    );
}

#[test]
fn criterion_09_mttkrp_throughput_grows_with_rank() {
    let _g = gate();
    let t = SyntheticSpec {
        dims: vec![50, 200, 200],
        true_rank: 1,
        noise_level: 1.0,
        seed: 901,
    }
    .generate()
    .unwrap();
    let ranks = log_spaced_ranks(1, 400, 12).unwrap();
    let rows = bench_mttkrp(&t, &ranks, 1, 3, None, 902).unwrap();
    let q = (rows.len() / 4).max(1);
    let mean = |slice: &[cpjack::bench::MttkrpBenchRow]| {
        slice
            .iter()
            .map(|r| r.throughput_flops_per_second)
            .sum::<f64>()
            / slice.len() as f64
    };
    let first = mean(&rows[..q]);
    let last = mean(&rows[rows.len() - q..]);
    assert!(
        last >= 2.0 * first,
        "final-quartile mean {last:.3e} vs first-quartile mean {first:.3e}"
    );
    println!(
        "criterion 9 PASS: throughput quartile means {:.2e} -> {:.2e} flops/s ({:.1}x) over ranks {:?}",
        first,
        last,
        last / first,
        ranks
    );
}

#[test]
fn criterion_10_jackknife_command_defaults_match_the_protocol() {
    let _g = gate();
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_cpjack");
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin)
            .args(args)
            .current_dir(dir.path())
            .output()
            .expect("spawn cpjack");
        assert!(
            out.status.success(),
            "cpjack {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "gen", "--dims", "6,5,4", "--rank", "2", "--noise", "0.1", "--seed", "7", "--out", "t.txt",
    ]);
    run(&[
        "fit",
        "--tensor",
        "t.txt",
        "--rank",
        "2",
        "--seed",
        "1",
        "--force-iters",
        "5",
        "--out",
        "model",
    ]);
    // No tolerance flags: the run manifest must record the defaults.
    run(&[
        "jackknife",
        "--tensor",
        "t.txt",
        "--model",
        "model",
        "--mode",
        "0",
        "--d",
        "1",
        "--method",
        "cals",
        "--out",
        "jk",
    ]);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("jk/manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["fit"]["tolerance"].as_f64(), Some(1e-6));
    assert_eq!(manifest["fit"]["max_iterations"].as_u64(), Some(1000));
    assert_eq!(manifest["fit"]["force_iterations"], serde_json::Value::Null);
    println!(
        "criterion 10 PASS: manifest records tolerance {} and max_iterations {}",
        manifest["fit"]["tolerance"], manifest["fit"]["max_iterations"]
    );
}
