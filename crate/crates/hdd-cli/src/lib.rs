//! Command-line driver for hyperbolic dataset distillation.
//!
//! The binary wraps the library pipeline behind six subcommands — distill a
//! dataset, sweep pruning fractions, analyze a recorded run, export the
//! Poincare chart, verify the analytic gradients, and generate toy data.
//! [`run_cli`] takes an argument vector and returns the process exit code,
//! so integration tests can drive the full surface in process:
//!
//! * `0` — success
//! * `1` — usage or configuration errors
//! * `2` — data errors (missing/corrupt files, inconsistent datasets)
//! * `3` — numerical failures (non-finite losses, failed verification)

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use hdd_core::centroid::EmbeddedSet;
use hdd_core::config::{load_config, render_config, FileConfig};
use hdd_core::encoder::sample_encoder;
use hdd_core::engine::{distill_monitored, encode_capped, evaluate, RunRecord};
use hdd_core::error::{HddError, Result};
use hdd_core::gradcheck::{centroid_loss_suite, encoder_suite};
use hdd_core::io::{
    load_dataset, read_run_record, save_dataset, save_dataset_csv, save_synthetic,
    write_manifest, write_run_record, MANIFEST_FILE,
};
use hdd_core::pruning::{compute_radii, loss_tail_std, prune, weight_curve};
use hdd_core::toy::{bars_and_stripes, gaussian_blobs};

#[derive(Parser)]
#[command(
    name = "hdd",
    version,
    about = "Dataset distillation by hyperbolic centroid matching",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill a dataset into a small synthetic set.
    Distill(DistillArgs),
    /// Distill at several pruning fractions and tabulate the outcomes.
    PruneStudy(PruneStudyArgs),
    /// Summarize a recorded run; optionally export the hierarchy-weight curve.
    Analyze(AnalyzeArgs),
    /// Chart an embedded dataset in the Poincare ball as CSV.
    ExportPoincare(ExportPoincareArgs),
    /// Verify the analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a toy dataset.
    ToyGen(ToyGenArgs),
}

#[derive(Args)]
struct DistillArgs {
    /// Dataset directory (tensor pair or CSV fallback).
    #[arg(long)]
    data: PathBuf,
    /// Run configuration file (flat key=value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the synthetic set, run record, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Held-out dataset directory for periodic evaluation (used when the
    /// config sets eval_every > 0).
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Seed of the frozen evaluation encoder.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
}

#[derive(Args)]
struct PruneStudyArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Run configuration file; its prune.scope applies to every fraction.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the study table and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated pruning fractions, e.g. 0.0,0.1,0.3.
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    /// Tail length for the loss-stability statistic.
    #[arg(long, default_value_t = 50)]
    tail: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directory containing run_record.csv.
    #[arg(long)]
    run: PathBuf,
    /// Tail length for the loss-stability statistic.
    #[arg(long, default_value_t = 50)]
    tail: usize,
    /// Also write the hierarchy-weight curve to this CSV file.
    #[arg(long)]
    curve_out: Option<PathBuf>,
    /// Curvature magnitude of the weight curve.
    #[arg(long, default_value_t = 1.0)]
    curvature_magnitude: f64,
    /// Largest radius of the weight curve.
    #[arg(long, default_value_t = 3.0)]
    max_radius: f64,
    /// Number of samples on the weight curve.
    #[arg(long, default_value_t = 50)]
    points: usize,
}

#[derive(Args)]
struct ExportPoincareArgs {
    /// Dataset directory to embed and chart.
    #[arg(long)]
    data: PathBuf,
    /// Run configuration (encoder, curvature, norm cap); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random configurations per suite.
    #[arg(long, default_value_t = 100)]
    configs: usize,
    /// Base seed of the random configurations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ToyGenArgs {
    /// Generator: gaussian_blobs or bars_and_stripes.
    #[arg(long)]
    kind: String,
    /// Number of classes (gaussian_blobs only; bars_and_stripes has 2).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Images per class.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Image side length (square images).
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Pixel noise level.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write the CSV fallback format instead of the tensor pair.
    #[arg(long)]
    csv: bool,
}

/// Parses the argument vector, runs the selected subcommand, and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Distill(a) => cmd_distill(a),
        Command::PruneStudy(a) => cmd_prune_study(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::ExportPoincare(a) => cmd_export_poincare(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ToyGen(a) => cmd_toy_gen(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Maps library errors onto the documented exit codes.
pub fn exit_code(err: &HddError) -> i32 {
    match err {
        HddError::Config(_) | HddError::InvalidArgument(_) => 1,
        HddError::Data(_)
        | HddError::Io(_)
        | HddError::Domain(_)
        | HddError::DimensionMismatch(_) => 2,
        HddError::Numerical(_) | HddError::Convergence { .. } => 3,
    }
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(FileConfig::default()),
    }
}

/// Manifest entries shared by every run flavor: the full configuration plus
/// the reproducibility counters of the finished run.
fn run_manifest_entries(
    cfg: &FileConfig,
    data: &Path,
    record: &RunRecord,
) -> Vec<(String, String)> {
    let mut entries: Vec<(String, String)> = render_config(cfg)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    entries.push(("data".into(), data.display().to_string()));
    entries.push(("batch_digest".into(), format!("{:016x}", record.batch_digest)));
    entries.push(("cap_hits".into(), record.cap_hits.to_string()));
    entries.push(("clamp_hits".into(), record.clamp_hits.to_string()));
    if let Some(last) = record.losses.last() {
        entries.push(("final_total".into(), format!("{:.16e}", last.total)));
    }
    entries
}

fn cmd_distill(args: DistillArgs) -> Result<()> {
    let cfg = load_file_config(&args.config)?;
    let data = load_dataset(&args.data)?;
    let eval_data = match &args.eval_data {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    // Apply the configured pruning fraction before distilling.
    let (kept, retained) = if cfg.prune.alpha > 0.0 {
        let radii = compute_radii(&data, &cfg.distill)?;
        let retained = prune(&data, &radii, &cfg.prune)?;
        (data.subset(&retained)?, retained.len())
    } else {
        let n = data.len();
        (data, n)
    };
    let eval = eval_data.as_ref().map(|d| (d, args.eval_seed));
    let (syn, record) = distill_monitored(&kept, &cfg.distill, eval)?;
    std::fs::create_dir_all(&args.out)?;
    save_synthetic(&args.out, &syn.to_labeled()?)?;
    write_run_record(&args.out, &record)?;
    let mut entries = run_manifest_entries(&cfg, &args.data, &record);
    entries.push(("retained".into(), retained.to_string()));
    write_manifest(&args.out.join(MANIFEST_FILE), &entries)?;
    if let Some(test) = &eval_data {
        let acc = evaluate(&syn, test, args.eval_seed)?;
        println!("held-out accuracy: {acc:.4}");
    }
    let final_total = record.losses.last().map(|l| l.total).unwrap_or(0.0);
    println!(
        "distilled {} images/class x {} classes in {} iterations (final loss {final_total:.6e})",
        syn.ipc(),
        syn.num_classes(),
        record.losses.len()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_prune_study(args: PruneStudyArgs) -> Result<()> {
    let cfg = load_file_config(&args.config)?;
    let data = load_dataset(&args.data)?;
    if args.alphas.is_empty() {
        return Err(HddError::InvalidArgument("need at least one pruning fraction".into()));
    }
    let radii = compute_radii(&data, &cfg.distill)?;
    let mut table = String::from("alpha,retained,final_total,tail_std\n");
    println!("alpha  retained  final_total   tail_std");
    for &alpha in &args.alphas {
        let spec = hdd_core::pruning::PruneSpec { alpha, ..cfg.prune };
        spec.validate()?;
        let retained = prune(&data, &radii, &spec)?;
        let kept = data.subset(&retained)?;
        let (_, record) = distill_monitored(&kept, &cfg.distill, None)?;
        let tail = args.tail.min(record.losses.len()).max(2);
        let std = loss_tail_std(&record.losses, tail)?;
        let final_total = record.losses.last().map(|l| l.total).unwrap_or(0.0);
        table.push_str(&format!(
            "{alpha},{},{final_total:.16e},{std:.16e}\n",
            retained.len()
        ));
        println!("{alpha:<6} {:<9} {final_total:<13.6e} {std:.6e}", retained.len());
    }
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("prune_study.csv"), &table)?;
    let mut entries: Vec<(String, String)> = render_config(&cfg)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    entries.push(("data".into(), args.data.display().to_string()));
    entries.push((
        "alphas".into(),
        args.alphas.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    ));
    write_manifest(&args.out.join(MANIFEST_FILE), &entries)?;
    println!("wrote {}", args.out.join("prune_study.csv").display());
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let losses = read_run_record(&args.run)?;
    if losses.is_empty() {
        return Err(HddError::Data(format!(
            "run record in {} has no iterations",
            args.run.display()
        )));
    }
    let classes = losses[0].per_class.len();
    let first = losses.first().expect("nonempty");
    let last = losses.last().expect("nonempty");
    let (min_iter, min_loss) = losses
        .iter()
        .map(|l| (l.iteration, l.total))
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite losses"))
        .expect("nonempty");
    println!("iterations: {}", losses.len());
    println!("classes:    {classes}");
    println!("first total: {:.6e}", first.total);
    println!("final total: {:.6e}", last.total);
    println!("minimum:     {min_loss:.6e} at iteration {min_iter}");
    let tail = args.tail.min(losses.len()).max(2);
    if losses.len() >= 2 {
        println!("tail std ({tail}): {:.6e}", loss_tail_std(&losses, tail)?);
    }
    if let Some(curve_path) = &args.curve_out {
        let curv = hdd_core::lorentz::Curvature::from_magnitude(args.curvature_magnitude)?;
        let curve = weight_curve(&curv, args.max_radius, args.points)?;
        let mut csv = String::from("radius,weight\n");
        for (d, w) in curve {
            csv.push_str(&format!("{d:.16e},{w:.16e}\n"));
        }
        std::fs::write(curve_path, csv)?;
        println!("wrote {}", curve_path.display());
    }
    Ok(())
}

fn cmd_export_poincare(args: ExportPoincareArgs) -> Result<()> {
    let cfg = load_file_config(&args.config)?;
    let data = load_dataset(&args.data)?;
    let spec = cfg.distill.encoder_spec(data.shape())?;
    let enc = sample_encoder(&spec, 0)?;
    let (feats, capped) =
        encode_capped(&enc, data.images().view(), cfg.distill.feature_norm_cap)?;
    if capped > 0 {
        log::info!("{capped} feature rows hit the norm cap during export");
    }
    let curv = cfg.distill.curvature()?;
    let set = EmbeddedSet::from_features(curv, feats.view(), data.labels())?;
    let csv = hdd_core::pruning::poincare_csv(&set)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, csv)?;
    println!(
        "charted {} points ({} classes) into {}",
        data.len(),
        data.num_classes(),
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    println!("verifying the centroid-loss gradient over {} configurations...", args.configs);
    let loss_report = centroid_loss_suite(args.configs, args.seed)?;
    println!("  {}", loss_report.summary());
    println!("verifying the encoder gradients over {} configurations...", args.configs);
    let enc_report = encoder_suite(args.configs, args.seed)?;
    println!("  {}", enc_report.summary());
    if !loss_report.passed() || !enc_report.passed() {
        return Err(HddError::Numerical(
            "analytic gradients disagree with finite differences".into(),
        ));
    }
    Ok(())
}

fn cmd_toy_gen(args: ToyGenArgs) -> Result<()> {
    let data = match args.kind.as_str() {
        "gaussian_blobs" => {
            gaussian_blobs(args.classes, args.per_class, args.size, args.noise, args.seed)?
        }
        "bars_and_stripes" => bars_and_stripes(args.per_class, args.size, args.noise, args.seed)?,
        other => {
            return Err(HddError::InvalidArgument(format!(
                "unknown toy kind {other:?} (expected gaussian_blobs or bars_and_stripes)"
            )))
        }
    };
    std::fs::create_dir_all(&args.out)?;
    if args.csv {
        save_dataset_csv(&args.out.join(hdd_core::io::DATASET_CSV_FILE), &data)?;
    } else {
        save_dataset(&args.out, &data)?;
    }
    println!(
        "generated {} images ({} classes, {}x{}) into {}",
        data.len(),
        data.num_classes(),
        args.size,
        args.size,
        args.out.display()
    );
    Ok(())
}
