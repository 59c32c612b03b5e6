//! Synthetic tensor generation, kernel timing sweeps, and run reporting.
//!
//! Timings use the monotonic [`Instant`] clock. Kernel benchmarks take the
//! median of several repetitions; full jackknife jobs are long enough that a
//! single run is recorded as-is. Efficiency is only reported when the
//! machine's theoretical peak (TPP, in GFLOP/s) is supplied by the user —
//! it is a hardware datum this library cannot measure honestly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CpError, Result};
use crate::flops::FlopCounter;
use crate::matrix::Matrix;
use crate::model::CpModel;
use crate::tensor::{mttkrp_threaded, DenseTensor};

// ---------------------------------------------------------------------------
// Synthetic tensors

/// Recipe for a reproducible synthetic tensor: a random rank-`true_rank`
/// model plus relative Gaussian noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dims: Vec<usize>,
    pub true_rank: usize,
    /// Noise magnitude relative to the clean tensor's Frobenius norm.
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `T = T0 + noise_level * (||T0|| / ||E||) * E` with `T0` the
    /// reconstruction of a seeded random model and `E` i.i.d. standard
    /// normal. Deterministic per seed; `noise_level = 0` returns the exact
    /// low-rank tensor.
    pub fn generate(&self) -> Result<DenseTensor> {
        if self.noise_level < 0.0 {
            return Err(CpError::InvalidArgument(format!(
                "noise_level must be >= 0, got {}",
                self.noise_level
            )));
        }
        let model = CpModel::init_random(&self.dims, self.true_rank, self.seed)?;
        let mut t = model.reconstruct()?;
        if self.noise_level > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6e6f_6973_655f_7631);
            let noise: Vec<f64> = (0..t.element_count())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let noise_norm_sq: f64 = noise.iter().map(|x| x * x).sum();
            let scale = self.noise_level * (t.norm_sq() / noise_norm_sq).sqrt();
            let data = t.data_mut();
            for (x, e) in data.iter_mut().zip(&noise) {
                *x += scale * e;
            }
        }
        Ok(t)
    }
}

// ---------------------------------------------------------------------------
// MTTKRP timing sweep

/// One row of a kernel sweep: timing and exact flop count for one width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MttkrpBenchRow {
    pub rank: usize,
    pub repetitions: usize,
    pub median_time_seconds: f64,
    pub flops: u64,
    pub throughput_flops_per_second: f64,
    /// `throughput / (tpp_gflops * 1e9)`, present only when TPP was given.
    pub efficiency: Option<f64>,
}

/// Strictly increasing, duplicate-free log-spaced integers spanning
/// `[lo, hi]` with at most `count` entries (fewer when the span is short).
pub fn log_spaced_ranks(lo: usize, hi: usize, count: usize) -> Result<Vec<usize>> {
    if lo == 0 || hi < lo || count == 0 {
        return Err(CpError::InvalidArgument(format!(
            "log spacing needs 1 <= lo <= hi and count > 0, got {lo}..{hi} x{count}"
        )));
    }
    if count == 1 {
        return Ok(vec![hi]);
    }
    let (llo, lhi) = ((lo as f64).ln(), (hi as f64).ln());
    let mut ranks = Vec::with_capacity(count);
    for i in 0..count {
        let x = llo + (lhi - llo) * i as f64 / (count - 1) as f64;
        let r = x.exp().round().clamp(lo as f64, hi as f64) as usize;
        if ranks.last() != Some(&r) {
            ranks.push(r);
        }
    }
    Ok(ranks)
}

/// Times the full-tensor MTTKRP (Khatri-Rao formation included) per rank,
/// cycling through the modes across repetitions and taking the median.
/// Factors are seeded random; a warm-up call per rank is excluded.
pub fn bench_mttkrp(
    t: &DenseTensor,
    ranks: &[usize],
    threads: usize,
    repetitions: usize,
    tpp_gflops: Option<f64>,
    seed: u64,
) -> Result<Vec<MttkrpBenchRow>> {
    if repetitions == 0 {
        return Err(CpError::InvalidArgument("repetitions must be > 0".into()));
    }
    let mut rows = Vec::with_capacity(ranks.len());
    for (ri, &rank) in ranks.iter().enumerate() {
        if rank == 0 {
            return Err(CpError::InvalidArgument("rank 0 in sweep".into()));
        }
        let model = CpModel::init_random(t.dims(), rank, seed.wrapping_add(ri as u64))?;
        let factors: Vec<Matrix> = model.factors().to_vec();
        mttkrp_threaded(t, &factors, 0, threads)?;
        let mut times = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let mode = rep % t.ndims();
            let start = Instant::now();
            let out = mttkrp_threaded(t, &factors, mode, threads)?;
            times.push(start.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        times.sort_by(|a, b| a.total_cmp(b));
        let median = if times.len() % 2 == 1 {
            times[times.len() / 2]
        } else {
            0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
        };
        let flops = FlopCounter::count_mttkrp(t.dims(), rank);
        let throughput = flops as f64 / median.max(f64::MIN_POSITIVE);
        rows.push(MttkrpBenchRow {
            rank,
            repetitions,
            median_time_seconds: median,
            flops,
            throughput_flops_per_second: throughput,
            efficiency: tpp_gflops.map(|tpp| throughput / (tpp * 1e9)),
        });
    }
    Ok(rows)
}

pub fn mttkrp_rows_to_csv(rows: &[MttkrpBenchRow]) -> String {
    let mut out = String::from(
        "rank,repetitions,median_time_seconds,flops,throughput_flops_per_second,efficiency\n",
    );
    for r in rows {
        let eff = r.efficiency.map(|e| e.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.rank,
            r.repetitions,
            r.median_time_seconds,
            r.flops,
            r.throughput_flops_per_second,
            eff
        )
        .unwrap();
    }
    out
}

// ---------------------------------------------------------------------------
// Run records and reports

/// One recorded run of a fit, jackknife, or kernel job.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub dims: Vec<usize>,
    /// Rank per fitted model (one entry for single-model runs, the full
    /// rank set for pooled runs).
    pub ranks: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub mttkrp_flops: u64,
    pub total_flops: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
}

/// User-supplied machine description: theoretical peak in GFLOP/s keyed by
/// thread count.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MachineConfig {
    pub tpp_gflops: BTreeMap<usize, f64>,
}

/// An append-only collection of run records plus the machine description.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BenchReport {
    #[serde(default)]
    pub machine: MachineConfig,
    #[serde(default)]
    pub runs: Vec<RunRecord>,
}

impl BenchReport {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| CpError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| CpError::Parse(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    /// Loads the report at `path` if it exists (an absent file is an empty
    /// report), appends `record`, and writes it back. Records are never
    /// rewritten or removed.
    pub fn append_record(path: &std::path::Path, record: RunRecord) -> Result<()> {
        let mut report = if path.exists() {
            Self::load(path)?
        } else {
            Self::default()
        };
        report.runs.push(record);
        report.save(path)
    }

    /// Efficiency of a run under this machine's peak for `threads`, if known.
    pub fn efficiency(&self, threads: usize, flops: u64, seconds: f64) -> Option<f64> {
        self.machine
            .tpp_gflops
            .get(&threads)
            .map(|tpp| flops as f64 / seconds.max(f64::MIN_POSITIVE) / (tpp * 1e9))
    }
}

/// Comparison table over run records: one row per record, grouped by
/// (dims, ranks, d), with a speedup column relative to the `reference_als`
/// record of the same group. Groups without a reference run leave the
/// speedup blank.
pub struct ComparisonTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl ComparisonTable {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let key = |r: &RunRecord| (r.dims.clone(), r.ranks.clone(), r.d);
        let mut reference: BTreeMap<_, f64> = BTreeMap::new();
        for r in records {
            if r.method == "reference_als" {
                reference.entry(key(r)).or_insert(r.wall_time_seconds);
            }
        }
        let fmt_usizes = |v: &[usize], sep: &str| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(sep)
        };
        let rows = records
            .iter()
            .map(|r| {
                let speedup = reference
                    .get(&key(r))
                    .map(|ref_time| format!("{:.3}", ref_time / r.wall_time_seconds))
                    .unwrap_or_default();
                vec![
                    fmt_usizes(&r.dims, "x"),
                    fmt_usizes(&r.ranks, "+"),
                    r.d.map(|d| d.to_string()).unwrap_or_default(),
                    r.method.clone(),
                    r.threads.to_string(),
                    format!("{:.6}", r.wall_time_seconds),
                    r.mttkrp_flops.to_string(),
                    r.total_flops.to_string(),
                    r.efficiency.map(|e| format!("{e:.4}")).unwrap_or_default(),
                    speedup,
                ]
            })
            .collect();
        ComparisonTable {
            header: vec![
                "tensor",
                "ranks",
                "d",
                "method",
                "threads",
                "wall_time_seconds",
                "mttkrp_flops",
                "total_flops",
                "efficiency",
                "speedup_vs_reference_als",
            ],
            rows,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Fixed-width rendering for terminals.
    pub fn to_pretty(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let render = |cells: Vec<&str>| {
            let mut line = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    line.push_str("  ");
                }
                let _ = write!(line, "{cell:>w$}", w = w);
            }
            line.push('\n');
            line
        };
        let mut out = render(self.header.to_vec());
        out.push_str(&"-".repeat(out.len().saturating_sub(1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&render(row.iter().map(|s| s.as_str()).collect()));
        }
        out
    }
}
