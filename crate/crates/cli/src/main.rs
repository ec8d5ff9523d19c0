//! rankscope: synthetic data generation, training, noise sweeps, checkpoint
//! analysis, lemma validation and the image-data prep path, driven by one
//! strict JSON config.
//!
//! Every command is deterministic given identical inputs and seeds; the only
//! nondeterministic output field is `wall_time_secs` in run manifests. Exit
//! codes: 0 success, 2 validation, 3 I/O, 4 divergence, 5 lemma violation.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use rankscope_core::analysis::{
    alignment_distance, decompose_filters, filter_matrix_spectrum_with_ratio, fit_growth_law,
    fit_loss_rate, noise_projection_norms, rank_gap_report,
};
use rankscope_core::cnn::{load_checkpoint, save_checkpoint};
use rankscope_core::data::{
    assemble_data_matrix, classify_noise_regime_default, load_dataset, make_basis, sample_dataset,
    save_dataset, BasisSystem, PatchedDataset,
};
use rankscope_core::ingest::{
    pad_with_noise, parse_idx, pca_reduce, select_classes, synthetic_fixture, to_patched_dataset,
};
use rankscope_core::spectral::spectrum_report_via_gram;
use rankscope_core::theory::{run_lemma_suite, run_lemma_suite_corrupted, LemmaSuiteReport};
use rankscope_core::train::{
    init_params, resume, trace_to_csv, train, CheckpointSpec, TrainTrace,
};
use rankscope_core::{Error as CoreError, DEFAULT_THRESHOLD_RATIO};

use config::{ExperimentConfig, RunSeeds, PAD_SALT};

const EXIT_VALIDATION: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;
const EXIT_LEMMA: u8 = 5;

#[derive(Parser)]
#[command(
    name = "rankscope",
    version,
    about = "Rank dynamics of a two-layer patch CNN under background noise"
)]
struct Cli {
    /// Worker threads for parallel sweeps. Fallback: RANKSCOPE_JOBS, then all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic dataset and write it plus a spectrum manifest.
    GenData(GenDataArgs),
    /// Train on an existing dataset; emits trace CSV, checkpoint and manifest.
    Train(TrainArgs),
    /// One training run per (sigma, repeat); combined CSV sorted by sigma then repeat.
    Sweep(SweepArgs),
    /// Spectra, ranks, alignment and law fits for a trained checkpoint.
    Analyze(AnalyzeArgs),
    /// Run the lemma validator suite and emit its JSON report.
    TheoryCheck(TheoryCheckArgs),
    /// Build a patch dataset from IDX digit files or the built-in fixture.
    MnistPrep(MnistPrepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Experiment config (strict JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threshold-rank ratio.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_RATIO)]
    threshold_ratio: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_RATIO)]
    threshold_ratio: f64,
    /// Dataset directory written by gen-data or mnist-prep.
    #[arg(long)]
    data: PathBuf,
    /// Continue from this checkpoint; its resume sidecar must sit next to it.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write a resumable mid-run checkpoint when reaching this step.
    #[arg(long)]
    checkpoint_at: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_RATIO)]
    threshold_ratio: f64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trace CSV; enables the growth-law and loss-rate fits (needs --config).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Config of the original run; enables init-dependent metrics.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_RATIO)]
    threshold_ratio: f64,
}

#[derive(Args)]
struct TheoryCheckArgs {
    /// Optional config; validated before the suite runs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corrupt every checked iterate by eps*t (negative control hook).
    #[arg(long, hide = true)]
    corrupt_drift: Option<f64>,
}

#[derive(Args)]
struct MnistPrepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_RATIO)]
    threshold_ratio: f64,
}

// ---------------------------------------------------------------------------
// failure plumbing

#[derive(Debug, Clone)]
struct Failure {
    code: u8,
    message: String,
}

type CmdResult<T> = Result<T, Failure>;

fn validation(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Failure {
        let code = match &e {
            CoreError::Io(_) | CoreError::Json(_) => EXIT_IO,
            CoreError::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_VALIDATION,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(context: &str, path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{context} {}: {e}", path.display()),
    }
}

// ---------------------------------------------------------------------------
// shared helpers

fn load_config(path: &Path) -> CmdResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_failure("cannot read config", path, e))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| validation(format!("invalid config {}: {e}", path.display())))?;
    cfg.validate()
        .map_err(|m| validation(format!("invalid config {}: {m}", path.display())))?;
    Ok(cfg)
}

fn resolve_out(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> CmdResult<PathBuf> {
    flag.or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| validation("an output directory is required: pass --out or set out_dir"))
}

fn check_ratio(ratio: f64) -> CmdResult<f64> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(ratio)
    } else {
        Err(validation(format!(
            "--threshold-ratio must lie in (0, 1], got {ratio}"
        )))
    }
}

fn ensure_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_failure("cannot create directory", dir, e))
}

fn write_text(path: &Path, text: &str) -> CmdResult<()> {
    fs::write(path, text).map_err(|e| io_failure("cannot write", path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CmdResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| validation(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

/// One CSV field; commas and newlines would break the row.
fn csv_safe(message: &str) -> String {
    message.replace([',', '\n', '\r'], ";")
}

fn init_thread_pool(flag: Option<usize>) -> CmdResult<()> {
    let jobs = match flag {
        Some(n) => Some(n),
        None => match std::env::var("RANKSCOPE_JOBS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                validation(format!("RANKSCOPE_JOBS must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = jobs {
        if n == 0 {
            return Err(validation("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| validation(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

fn final_metrics(trace: &TrainTrace, target_loss: Option<f64>) -> serde_json::Value {
    match trace.final_row() {
        Some(r) => json!({
            "final_step": r.step,
            "train_loss": r.train_loss,
            "test_loss": r.test_loss,
            "test_loss_stderr": r.test_loss_stderr,
            "filter_stable_rank": r.stable_rank,
            "filter_threshold_rank": r.threshold_rank,
            "noise_norm_max": r.noise_norm_max,
            "align_dist": r.align_dist,
            "target_hit": target_loss.map(|tl| r.train_loss <= tl),
        }),
        None => json!(null),
    }
}

// ---------------------------------------------------------------------------
// gen-data

fn cmd_gen_data(args: GenDataArgs) -> CmdResult<()> {
    let ratio = check_ratio(args.threshold_ratio)?;
    let cfg = load_config(&args.config)?;
    let out = resolve_out(args.out, &cfg)?;
    ensure_dir(&out)?;
    let t0 = Instant::now();

    let seeds = cfg.resolve_seeds(args.seed, 0);
    let sigma = cfg.data.sigma_grid[0];
    let basis = make_basis(cfg.data.d, cfg.data.k, cfg.data.basis_mode, seeds.basis_seed)?;
    let data = sample_dataset(
        &basis,
        cfg.data.n,
        cfg.data.p,
        cfg.data.s_policy,
        sigma,
        seeds.data_seed,
    )?;
    save_dataset(&data, Some(&basis), &out)?;

    let spectrum = spectrum_report_via_gram(&assemble_data_matrix(&data), ratio)?;
    let manifest = json!({
        "command": "gen-data",
        "seeds": seeds,
        "params": cfg.data,
        "sigma_noise": sigma,
        "metrics": {
            "stable_rank": spectrum.stable_rank,
            "threshold_rank": spectrum.threshold_rank,
            "threshold_ratio": ratio,
            "operator_norm": spectrum.operator_norm,
            "frobenius_norm": spectrum.frobenius_norm,
        },
        "wall_time_secs": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("run_manifest.json"), &manifest)?;
    println!(
        "wrote dataset to {} (sigma {}, sr {:.4}, threshold rank {})",
        out.display(),
        sigma,
        spectrum.stable_rank,
        spectrum.threshold_rank
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(args: TrainArgs) -> CmdResult<()> {
    let ratio = check_ratio(args.threshold_ratio)?;
    let cfg = load_config(&args.config)?;
    let out = resolve_out(args.out, &cfg)?;
    ensure_dir(&out)?;
    let t0 = Instant::now();

    let seeds = cfg.resolve_seeds(args.seed, 0);
    let (basis, data) = load_dataset(&args.data)?;
    let checkpoint_at = args.checkpoint_at.map(|step| CheckpointSpec {
        step,
        path: out.join(format!("checkpoint_at_{step}.bin")),
    });
    let tc = cfg.to_train_config(&seeds, ratio, checkpoint_at);
    tc.validate()?;

    let (params, trace) = match &args.resume {
        Some(ckpt) => resume(ckpt, &data, &tc, basis.as_ref())?,
        None => {
            let params = init_params(
                data.d,
                cfg.model.m,
                cfg.model.q,
                cfg.model.kappa,
                cfg.model.sigma0,
                seeds.init_seed,
            )?;
            train(params, &data, &tc, basis.as_ref())?
        }
    };

    write_text(&out.join("trace.csv"), &trace_to_csv(&trace))?;
    let final_step = trace.final_row().map(|r| r.step).unwrap_or(0);
    save_checkpoint(&params, final_step, seeds.init_seed, &out.join("checkpoint.bin"))?;

    let manifest = json!({
        "command": "train",
        "seeds": seeds,
        "data_dir": args.data.display().to_string(),
        "resumed_from": args.resume.as_ref().map(|p| p.display().to_string()),
        "model": cfg.model,
        "training": cfg.training,
        "threshold_ratio": ratio,
        "metrics": final_metrics(&trace, tc.target_loss),
        "wall_time_secs": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("run_manifest.json"), &manifest)?;
    let loss = trace.final_row().map(|r| r.train_loss).unwrap_or(f64::NAN);
    println!(
        "trained to step {final_step} (loss {loss:.6}); artifacts in {}",
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Serialize)]
struct SweepMetrics {
    final_step: u64,
    train_loss: f64,
    test_loss: Option<f64>,
    data_stable_rank: f64,
    data_threshold_rank: usize,
    filter_stable_rank: f64,
    filter_threshold_rank: usize,
    target_hit: Option<bool>,
}

struct SweepRun {
    sigma: f64,
    repeat: usize,
    dir_name: String,
    outcome: CmdResult<SweepMetrics>,
}

fn sweep_one(
    cfg: &ExperimentConfig,
    seeds: &RunSeeds,
    sigma: f64,
    ratio: f64,
    run_dir: &Path,
) -> CmdResult<SweepMetrics> {
    ensure_dir(run_dir)?;
    let t0 = Instant::now();
    let basis = make_basis(cfg.data.d, cfg.data.k, cfg.data.basis_mode, seeds.basis_seed)?;
    let data = sample_dataset(
        &basis,
        cfg.data.n,
        cfg.data.p,
        cfg.data.s_policy,
        sigma,
        seeds.data_seed,
    )?;

    let tc = cfg.to_train_config(seeds, ratio, None);
    tc.validate()?;
    let params = init_params(
        data.d,
        cfg.model.m,
        cfg.model.q,
        cfg.model.kappa,
        cfg.model.sigma0,
        seeds.init_seed,
    )?;
    // train first: a failed run ends here with the informative error and
    // never pays for the spectra
    let (params, trace) = train(params, &data, &tc, Some(&basis))?;
    let data_spectrum = spectrum_report_via_gram(&assemble_data_matrix(&data), ratio)?;
    let filter_spectrum = filter_matrix_spectrum_with_ratio(&params, ratio)?;

    write_text(&run_dir.join("trace.csv"), &trace_to_csv(&trace))?;
    let row = trace
        .final_row()
        .ok_or_else(|| validation("empty trace"))?;
    let metrics = SweepMetrics {
        final_step: row.step,
        train_loss: row.train_loss,
        test_loss: row.test_loss,
        data_stable_rank: data_spectrum.stable_rank,
        data_threshold_rank: data_spectrum.threshold_rank,
        filter_stable_rank: filter_spectrum.stable_rank,
        filter_threshold_rank: filter_spectrum.threshold_rank,
        target_hit: tc.target_loss.map(|tl| row.train_loss <= tl),
    };
    let manifest = json!({
        "command": "sweep-run",
        "sigma_noise": sigma,
        "seeds": seeds,
        "threshold_ratio": ratio,
        "metrics": metrics,
        "data_regime": classify_noise_regime_default(sigma, data.d, data.n, data.k),
        "wall_time_secs": t0.elapsed().as_secs_f64(),
    });
    write_json(&run_dir.join("run_manifest.json"), &manifest)?;
    Ok(metrics)
}

fn cmd_sweep(args: SweepArgs) -> CmdResult<()> {
    let ratio = check_ratio(args.threshold_ratio)?;
    let cfg = load_config(&args.config)?;
    let out = resolve_out(args.out, &cfg)?;
    ensure_dir(&out)?;
    let t0 = Instant::now();

    let tasks: Vec<(usize, f64, usize)> = cfg
        .data
        .sigma_grid
        .iter()
        .enumerate()
        .flat_map(|(si, &sigma)| (0..cfg.seeds.repeats).map(move |r| (si, sigma, r)))
        .collect();

    // parallel execution, deterministic order: collect preserves task order
    let runs: Vec<SweepRun> = tasks
        .par_iter()
        .map(|&(si, sigma, r)| {
            let dir_name = format!("run-{si:02}-{r:02}");
            let seeds = cfg.resolve_seeds(args.seed, r);
            let outcome = sweep_one(&cfg, &seeds, sigma, ratio, &out.join(&dir_name));
            SweepRun {
                sigma,
                repeat: r,
                dir_name,
                outcome,
            }
        })
        .collect();

    let mut csv = String::from(
        "sigma,repeat,status,final_step,train_loss,test_loss,\
         data_stable_rank,data_threshold_rank,filter_stable_rank,filter_threshold_rank,error\n",
    );
    for run in &runs {
        match &run.outcome {
            Ok(m) => {
                let test = m.test_loss.map(|v| v.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},ok,{},{},{},{},{},{},{},\n",
                    run.sigma,
                    run.repeat,
                    m.final_step,
                    m.train_loss,
                    test,
                    m.data_stable_rank,
                    m.data_threshold_rank,
                    m.filter_stable_rank,
                    m.filter_threshold_rank,
                ));
            }
            Err(f) => {
                csv.push_str(&format!(
                    "{},{},error,,,,,,,,{}\n",
                    run.sigma,
                    run.repeat,
                    csv_safe(&f.message)
                ));
            }
        }
    }
    write_text(&out.join("sweep.csv"), &csv)?;

    let run_records: Vec<serde_json::Value> = runs
        .iter()
        .map(|run| {
            json!({
                "sigma_noise": run.sigma,
                "repeat": run.repeat,
                "dir": run.dir_name,
                "status": if run.outcome.is_ok() { "ok" } else { "error" },
                "error": run.outcome.as_ref().err().map(|f| f.message.clone()),
            })
        })
        .collect();
    let manifest = json!({
        "command": "sweep",
        "sigma_grid": cfg.data.sigma_grid,
        "repeats": cfg.seeds.repeats,
        "base_seed": cfg.resolve_seeds(args.seed, 0).base,
        "threshold_ratio": ratio,
        "runs": run_records,
        "wall_time_secs": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("run_manifest.json"), &manifest)?;

    let failures: Vec<&SweepRun> = runs.iter().filter(|r| r.outcome.is_err()).collect();
    println!(
        "sweep finished: {} ok, {} failed; combined CSV at {}",
        runs.len() - failures.len(),
        failures.len(),
        out.join("sweep.csv").display()
    );
    if let Some(first) = failures.first() {
        let f = first.outcome.as_ref().err().unwrap();
        return Err(Failure {
            code: f.code,
            message: format!(
                "{} of {} sweep runs failed; first (sigma {}, repeat {}): {}",
                failures.len(),
                runs.len(),
                first.sigma,
                first.repeat,
                f.message
            ),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

fn analyze_doc(
    args: &AnalyzeArgs,
    cfg: Option<&ExperimentConfig>,
    basis: Option<&BasisSystem>,
    data: &PatchedDataset,
    ratio: f64,
) -> CmdResult<serde_json::Value> {
    let (params, step, ckpt_seed) = load_checkpoint(&args.checkpoint)?;
    if params.d != data.d {
        return Err(validation(format!(
            "checkpoint dimension {} does not match dataset dimension {}",
            params.d, data.d
        )));
    }
    let filter_spectrum = filter_matrix_spectrum_with_ratio(&params, ratio)?;
    let data_spectrum = spectrum_report_via_gram(&assemble_data_matrix(data), ratio)?;
    let regime = classify_noise_regime_default(data.sigma_noise, data.d, data.n, data.k);
    let gap = rank_gap_report(&data_spectrum, &filter_spectrum, data.k, step, regime);

    let mut doc = json!({
        "command": "analyze",
        "checkpoint_step": step,
        "data": {
            "d": data.d, "n": data.n, "p": data.p, "k": data.k,
            "sigma_noise": data.sigma_noise,
        },
        "threshold_ratio": ratio,
        "filter_spectrum": filter_spectrum,
        "data_spectrum": data_spectrum,
        "rank_gap": gap,
    });

    if let Some(b) = basis {
        doc["alignment"] = serde_json::to_value(alignment_distance(&params, b)?)
            .map_err(|e| validation(e.to_string()))?;
        if let Some(c) = cfg {
            // the init weights are a pure function of (shape, sigma0, seed);
            // the checkpoint stores the seed, the config supplies sigma0
            let init = init_params(
                params.d,
                params.m,
                params.q,
                params.kappa,
                c.model.sigma0,
                ckpt_seed,
            )?;
            let norms = noise_projection_norms(&params, &init, b)?;
            doc["noise_projection_max"] = json!(norms.iter().cloned().fold(0.0_f64, f64::max));
            let dec = decompose_filters(&params, &init, b, data)?;
            let max_residual = dec
                .residuals
                .iter()
                .flat_map(|v| v.iter().cloned())
                .fold(0.0_f64, f64::max);
            let max_xi = dec
                .xi_norms
                .iter()
                .flat_map(|v| v.iter().cloned())
                .fold(0.0_f64, f64::max);
            doc["decomposition"] = json!({
                "atoms": dec.atoms.len(),
                "gram_condition": dec.gram_condition,
                "max_xi_norm": max_xi,
                "max_residual": max_residual,
            });
        }
    }

    if let Some(trace_path) = &args.trace {
        let c = cfg.ok_or_else(|| {
            validation("--trace analysis needs --config for kappa, eta and m")
        })?;
        let text = fs::read_to_string(trace_path)
            .map_err(|e| io_failure("cannot read trace", trace_path, e))?;
        let trace = rankscope_core::train::trace_from_csv(&text, c.model.kappa)?;
        doc["growth_fit"] = serde_json::to_value(fit_growth_law(&trace, c.model.m)?)
            .map_err(|e| validation(e.to_string()))?;
        doc["loss_rate"] = serde_json::to_value(fit_loss_rate(&trace, c.training.eta, c.model.m)?)
            .map_err(|e| validation(e.to_string()))?;
    }
    Ok(doc)
}

fn cmd_analyze(args: AnalyzeArgs) -> CmdResult<()> {
    let ratio = check_ratio(args.threshold_ratio)?;
    let cfg = match &args.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let (basis, data) = load_dataset(&args.data)?;
    let doc = analyze_doc(&args, cfg.as_ref(), basis.as_ref(), &data, ratio)?;
    match &args.out {
        Some(path) => write_json(path, &doc)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&doc).map_err(|e| validation(e.to_string()))?
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// theory-check

fn cmd_theory_check(args: TheoryCheckArgs) -> CmdResult<()> {
    if let Some(path) = &args.config {
        load_config(path)?;
    }
    let report: LemmaSuiteReport = match args.corrupt_drift {
        Some(eps) => run_lemma_suite_corrupted(eps)?,
        None => run_lemma_suite()?,
    };
    let checks: Vec<serde_json::Value> = report
        .checks
        .iter()
        .map(|c| {
            json!({
                "lemma": c.lemma,
                "instances": c.instances,
                "violations": c.violations,
                "max_violation": c.worst,
                "pass": c.violations == 0,
            })
        })
        .collect();
    let doc = json!({
        "command": "theory-check",
        "all_ok": report.all_ok,
        "checks": checks,
    });
    match &args.out {
        Some(path) => write_json(path, &doc)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&doc).map_err(|e| validation(e.to_string()))?
        ),
    }
    if report.all_ok {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_LEMMA,
            message: format!("lemma violations: {}", report.violated_lemmas().join(", ")),
        })
    }
}

// ---------------------------------------------------------------------------
// mnist-prep

fn cmd_mnist_prep(args: MnistPrepArgs) -> CmdResult<()> {
    let ratio = check_ratio(args.threshold_ratio)?;
    let cfg = load_config(&args.config)?;
    let out = resolve_out(args.out, &cfg)?;
    ensure_dir(&out)?;
    let t0 = Instant::now();

    let seeds = cfg.resolve_seeds(args.seed, 0);
    let m = cfg.mnist.clone().unwrap_or_default();
    let (raw, source) = match (&m.images, &m.labels) {
        (Some(ip), Some(lp)) => {
            let image_bytes = fs::read(ip).map_err(|e| io_failure("cannot read images", ip, e))?;
            let label_bytes = fs::read(lp).map_err(|e| io_failure("cannot read labels", lp, e))?;
            (parse_idx(&image_bytes, &label_bytes)?, ip.display().to_string())
        }
        _ => (
            synthetic_fixture(m.fixture_count, 28, 28, seeds.data_seed),
            "synthetic-fixture".to_string(),
        ),
    };

    let picked = select_classes(&raw, m.classes)?;
    let reduced = pca_reduce(&picked.to_matrix(), m.pca_rank, m.center)?;
    let reduced_spectrum = spectrum_report_via_gram(&reduced, ratio)?;
    let reduced_images = picked.with_pixels_from(&reduced)?;
    let padded = pad_with_noise(&reduced_images, m.pad, m.pad_sigma, seeds.data_seed ^ PAD_SALT);
    let dataset = to_patched_dataset(&padded, m.grid, m.classes, m.pad_sigma, &source)?;
    save_dataset(&dataset, None, &out)?;
    let data_spectrum = spectrum_report_via_gram(&assemble_data_matrix(&dataset), ratio)?;

    let manifest = json!({
        "command": "mnist-prep",
        "seeds": seeds,
        "params": m,
        "source": source,
        "images_selected": picked.count,
        "patch_dim": dataset.d,
        "metrics": {
            "threshold_ratio": ratio,
            "reduced_stable_rank": reduced_spectrum.stable_rank,
            "reduced_threshold_rank": reduced_spectrum.threshold_rank,
            "data_stable_rank": data_spectrum.stable_rank,
            "data_threshold_rank": data_spectrum.threshold_rank,
        },
        "wall_time_secs": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("run_manifest.json"), &manifest)?;
    println!(
        "prepared {} images from {} (patch dim {}, data threshold rank {})",
        picked.count,
        source,
        dataset.d,
        data_spectrum.threshold_rank
    );
    Ok(())
}

// ---------------------------------------------------------------------------

fn run(cli: Cli) -> CmdResult<()> {
    init_thread_pool(cli.jobs)?;
    match cli.command {
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::TheoryCheck(a) => cmd_theory_check(a),
        Cmd::MnistPrep(a) => cmd_mnist_prep(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
