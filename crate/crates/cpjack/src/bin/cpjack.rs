//! Command-line harness: synthetic tensor generation, model fitting,
//! jackknife runs, MTTKRP sweeps, and run comparison tables.
//!
//! Exit codes: 0 success, 2 usage or malformed input, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cpjack::bench::{
    bench_mttkrp, log_spaced_ranks, mttkrp_rows_to_csv, BenchReport, ComparisonTable, RunRecord,
    SyntheticSpec,
};
use cpjack::io::{load_model, read_tensor, save_model, save_results, write_tensor};
use cpjack::jackknife::{jackknife, jk_cals_pooled, JackknifeConfig, JackknifeMethod};
use cpjack::model::cp_als_fit_counted;
use cpjack::{CpError, CpModel, DenseTensor, FitConfig, FlopCounter, Result};

#[derive(Parser)]
#[command(
    name = "cpjack",
    version,
    about = "CP tensor decomposition: fitting, concurrent ALS, accelerated jackknife"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic low-rank tensor with optional noise
    Gen(GenArgs),
    /// Fit one CP model and save it as a model directory
    Fit(FitArgs),
    /// Jackknife a fitted model (or a directory of models) over one mode
    Jackknife(JackknifeArgs),
    /// Kernel benchmarks
    Bench(BenchArgs),
    /// Render a comparison table from recorded runs
    Report(ReportArgs),
}

#[derive(Args)]
struct FitFlags {
    /// Relative error-change stopping tolerance
    #[arg(long = "tol", default_value_t = 1e-6)]
    tolerance: f64,
    /// Hard cap on ALS sweeps
    #[arg(long = "max-iters", default_value_t = 1000)]
    max_iterations: usize,
    /// Run exactly this many sweeps, ignoring --tol and --max-iters
    #[arg(long = "force-iters")]
    force_iterations: Option<usize>,
    /// MTTKRP worker threads (overrides CPJACK_THREADS; default 1)
    #[arg(long)]
    threads: Option<usize>,
}

impl FitFlags {
    fn to_config(&self) -> Result<FitConfig> {
        Ok(FitConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            force_iterations: self.force_iterations,
            threads: resolve(self.threads, "CPJACK_THREADS")?.unwrap_or(1).max(1),
            ..FitConfig::default()
        })
    }
}

/// Flag beats environment beats default.
fn resolve(flag: Option<usize>, env: &str) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(env) {
        Ok(v) => v
            .parse()
            .map(Some)
            .map_err(|e| CpError::InvalidArgument(format!("{env}={v:?}: {e}"))),
        Err(_) => Ok(None),
    }
}

#[derive(Args)]
struct GenArgs {
    /// Comma-separated mode sizes, e.g. 50,100,100
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    /// Rank of the planted model
    #[arg(long)]
    rank: usize,
    /// Gaussian noise level relative to the clean tensor's norm
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (.bin or .dtnsr for binary, anything else for text)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Tensor file (text or binary)
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    rank: usize,
    /// Seed for the random initial factors
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fit: FitFlags,
    /// Output model directory
    #[arg(long)]
    out: PathBuf,
    /// Append a run record to this report file
    #[arg(long)]
    report: Option<PathBuf>,
    /// Machine peak in GFLOP/s, enables the efficiency column
    #[arg(long)]
    tpp: Option<f64>,
}

#[derive(Args)]
struct JackknifeArgs {
    #[arg(long)]
    tensor: PathBuf,
    /// A model directory, or a directory of model directories (a model set
    /// is jackknifed as one shared fused pool under --method cals)
    #[arg(long)]
    model: PathBuf,
    /// Sampled mode index (0-based)
    #[arg(long)]
    mode: usize,
    /// Slices removed per group
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// als (sequential reference), oals (reference fits in parallel),
    /// or cals (fused lock-step)
    #[arg(long, default_value = "cals")]
    method: String,
    #[command(flatten)]
    fit: FitFlags,
    /// Cap on fused MTTKRP columns per batch (overrides
    /// CPJACK_COLUMN_BUDGET; 0 = unlimited)
    #[arg(long)]
    column_budget: Option<usize>,
    /// Skip the permutation/sign/scale alignment pass
    #[arg(long)]
    no_align: bool,
    /// Output bundle directory (per-model subdirectories for a model set)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    tpp: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    which: BenchCmd,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Time the MTTKRP kernel over a rank sweep
    Mttkrp(MttkrpArgs),
}

#[derive(Args)]
struct MttkrpArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    /// Explicit comma-separated ranks
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    /// Log-spaced rank sweep as lo:hi:count, e.g. 1:400:12
    #[arg(long)]
    log_ranks: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// Timed repetitions per rank (median is reported)
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tpp: Option<f64>,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files ({machine, runs} JSON) or single-record JSONs
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Also write the table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CpError::NumericalBreakdown(_) | CpError::NonFinite(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Jackknife(a) => cmd_jackknife(a),
        Cmd::Bench(BenchArgs {
            which: BenchCmd::Mttkrp(a),
        }) => cmd_bench_mttkrp(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        dims: a.dims,
        true_rank: a.rank,
        noise_level: a.noise,
        seed: a.seed,
    };
    let t = spec.generate()?;
    write_tensor(&a.out, &t)?;
    println!(
        "wrote {} ({} elements, rank {} + noise {}, seed {})",
        a.out.display(),
        t.element_count(),
        spec.true_rank,
        spec.noise_level,
        spec.seed
    );
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let t = read_tensor(&a.tensor)?;
    let fit = a.fit.to_config()?;
    let init = CpModel::init_random(t.dims(), a.rank, a.seed)?;
    let start = Instant::now();
    let (model, flops) = cp_als_fit_counted(&t, init, &fit)?;
    let secs = start.elapsed().as_secs_f64();
    save_model(&a.out, &model)?;
    println!(
        "fit rank {} in {} sweeps, {:.3} s; final error {:.6e} (relative {:.6e})",
        a.rank,
        model.iterations,
        secs,
        model.final_error().unwrap_or(f64::NAN),
        model.final_error().unwrap_or(f64::NAN) / t.norm_sq()
    );
    println!("model saved to {}", a.out.display());
    if let Some(report) = &a.report {
        let record = run_record(
            "fit_als",
            &t,
            vec![a.rank],
            None,
            fit.threads,
            secs,
            &flops,
            a.tpp,
        );
        BenchReport::append_record(report, record)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_record(
    method: &str,
    t: &DenseTensor,
    ranks: Vec<usize>,
    d: Option<usize>,
    threads: usize,
    secs: f64,
    flops: &FlopCounter,
    tpp: Option<f64>,
) -> RunRecord {
    RunRecord {
        method: method.into(),
        dims: t.dims().to_vec(),
        ranks,
        d,
        threads,
        wall_time_seconds: secs,
        mttkrp_flops: flops.mttkrp,
        total_flops: flops.total(),
        efficiency: tpp.map(|tpp| flops.total() as f64 / secs.max(f64::MIN_POSITIVE) / (tpp * 1e9)),
    }
}

/// Either a single model directory or a directory of model directories.
fn load_model_or_set(path: &Path) -> Result<Vec<(String, CpModel)>> {
    if path.join("model.json").is_file() {
        return Ok(vec![(String::new(), load_model(path)?)]);
    }
    let mut names: Vec<String> = Vec::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        if entry.path().join("model.json").is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    if names.is_empty() {
        return Err(CpError::InvalidArgument(format!(
            "{}: neither a model directory nor a directory of model directories",
            path.display()
        )));
    }
    names.sort();
    names
        .into_iter()
        .map(|name| Ok((name.clone(), load_model(&path.join(&name))?)))
        .collect()
}

fn cmd_jackknife(a: JackknifeArgs) -> Result<()> {
    let t = read_tensor(&a.tensor)?;
    let method: JackknifeMethod = a.method.parse()?;
    let fit = a.fit.to_config()?;
    let cfg = JackknifeConfig {
        sampled_mode: a.mode,
        d: a.d,
        fit: fit.clone(),
        method,
        alignment: !a.no_align,
        column_budget: resolve(a.column_budget, "CPJACK_COLUMN_BUDGET")?.unwrap_or(0),
    };
    let models = load_model_or_set(&a.model)?;
    let ranks: Vec<usize> = models.iter().map(|(_, m)| m.rank()).collect();

    let start = Instant::now();
    let (outputs, flops) = if models.len() == 1 {
        let out = jackknife(&t, &models[0].1, &cfg)?;
        let flops = out.flops;
        (vec![out], flops)
    } else if method == JackknifeMethod::Cals {
        // A model set shares one fused pool.
        let model_refs: Vec<CpModel> = models.iter().map(|(_, m)| m.clone()).collect();
        jk_cals_pooled(&t, &model_refs, &cfg)?
    } else {
        let mut outputs = Vec::with_capacity(models.len());
        let mut flops = FlopCounter::default();
        for (_, m) in &models {
            let out = jackknife(&t, m, &cfg)?;
            flops.merge(&out.flops);
            outputs.push(out);
        }
        (outputs, flops)
    };
    let secs = start.elapsed().as_secs_f64();

    for ((name, model), out) in models.iter().zip(&outputs) {
        let dir = if name.is_empty() {
            a.out.clone()
        } else {
            a.out.join(name)
        };
        save_results(&dir, model, method, &fit, out)?;
        let fitted = out.submodels.fitted().count();
        let failed = out.submodels.n_groups() - fitted;
        println!(
            "{}: {} groups (d={}), {} fitted, {} failed; bundle at {}",
            if name.is_empty() { "model" } else { name },
            out.submodels.n_groups(),
            out.submodels.d,
            fitted,
            failed,
            dir.display()
        );
        for n in 0..model.ndims() {
            if let Some(s) = out.uncertainty.stddev_for(n) {
                let max = s.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                println!("  mode {n}: max stddev {max:.6e}");
            }
        }
    }
    println!(
        "method {} took {:.3} s; mttkrp flops {}",
        method.name(),
        secs,
        flops.mttkrp
    );
    if let Some(report) = &a.report {
        let record = run_record(
            method.name(),
            &t,
            ranks,
            Some(a.d),
            fit.threads,
            secs,
            &flops,
            a.tpp,
        );
        BenchReport::append_record(report, record)?;
    }
    Ok(())
}

fn cmd_bench_mttkrp(a: MttkrpArgs) -> Result<()> {
    let mut ranks = a.ranks.clone();
    if let Some(spec) = &a.log_ranks {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(CpError::InvalidArgument(format!(
                "--log-ranks expects lo:hi:count, got {spec:?}"
            )));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| CpError::InvalidArgument(format!("--log-ranks {spec:?}: {e}")))
        };
        ranks.extend(log_spaced_ranks(
            parse(parts[0])?,
            parse(parts[1])?,
            parse(parts[2])?,
        )?);
    }
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.is_empty() {
        return Err(CpError::InvalidArgument(
            "no ranks given; use --ranks or --log-ranks".into(),
        ));
    }
    let t = SyntheticSpec {
        dims: a.dims.clone(),
        true_rank: 1,
        noise_level: 1.0,
        seed: a.seed,
    }
    .generate()?;
    let threads = resolve(a.threads, "CPJACK_THREADS")?.unwrap_or(1).max(1);
    let rows = bench_mttkrp(&t, &ranks, threads, a.reps.max(1), a.tpp, a.seed)?;
    let csv = mttkrp_rows_to_csv(&rows);
    match &a.out {
        Some(path) => {
            fs::write(path, csv)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &a.runs {
        let s = fs::read_to_string(path)?;
        if let Ok(report) = serde_json::from_str::<BenchReport>(&s) {
            if !report.runs.is_empty() {
                records.extend(report.runs);
                continue;
            }
        }
        if let Ok(record) = serde_json::from_str::<RunRecord>(&s) {
            records.push(record);
            continue;
        }
        match serde_json::from_str::<Vec<RunRecord>>(&s) {
            Ok(batch) => records.extend(batch),
            Err(e) => return Err(CpError::Parse(format!("{}: {e}", path.display()))),
        }
    }
    if records.is_empty() {
        return Err(CpError::InvalidArgument("no run records found".into()));
    }
    let table = ComparisonTable::from_records(&records);
    print!("{}", table.to_pretty());
    if let Some(path) = &a.csv {
        fs::write(path, table.to_csv())?;
        println!("csv written to {}", path.display());
    }
    Ok(())
}
