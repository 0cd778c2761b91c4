//! `treebma` command line: generate data, sample tree ensembles, profile
//! attribute usage, refine ensembles, evaluate, and run threshold sweeps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use treebma::bma::evaluate;
use treebma::dataset::{build_rule_catalog, generate_synthetic, load_csv, write_csv};
use treebma::error::{Error, Result};
use treebma::harness::{
    build_spec, emit_reports, format_sig4, parse_config_file, threshold_sweep, SweepRow,
};
use treebma::refine::{refine_ensemble, usage_profile, weak_attributes};
use treebma::sampler::{run_chain, stationarity_summary, Ensemble};

#[derive(Parser)]
#[command(
    name = "treebma",
    version,
    about = "Bayesian model averaging over classification trees with posterior attribute-usage refinement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic classification dataset as CSV.
    GenData(GenDataArgs),
    /// Sample a tree ensemble from a dataset with the RJ-MCMC chain.
    Sample(SampleArgs),
    /// Print (or write) the posterior attribute-usage table of an ensemble.
    Profile(ProfileArgs),
    /// Discard the trees of an ensemble that use weak attributes.
    Refine(RefineArgs),
    /// Run a cross-validated threshold sweep and write the report set.
    Sweep(SweepArgs),
    /// Evaluate an ensemble's accuracy and entropy on a dataset.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 686)]
    n: usize,
    /// Number of attributes.
    #[arg(long, default_value_t = 72)]
    m: usize,
    /// Number of classes.
    #[arg(long, default_value_t = 6)]
    classes: usize,
    /// How many leading attributes carry class signal.
    #[arg(long, default_value_t = 12)]
    informative: usize,
    /// Class-mean spacing of the informative attributes.
    #[arg(long, default_value_t = 0.5)]
    effect: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct ChainFlags {
    /// Flat key-value config file (chain and experiment keys).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    post_burn_in: Option<u64>,
    #[arg(long)]
    thinning: Option<u64>,
    #[arg(long)]
    min_node_size: Option<usize>,
    /// birth,death,change_split,change_rule
    #[arg(long)]
    move_probs: Option<String>,
    #[arg(long)]
    proposal_variance: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    trace_stride: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ChainFlags {
    fn layer(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                map.insert(key.to_string(), v);
            }
        };
        put("burn_in", self.burn_in.map(|v| v.to_string()));
        put("post_burn_in", self.post_burn_in.map(|v| v.to_string()));
        put("thinning", self.thinning.map(|v| v.to_string()));
        put("min_node_size", self.min_node_size.map(|v| v.to_string()));
        put("move_probs", self.move_probs.clone());
        put(
            "proposal_variance",
            self.proposal_variance.map(|v| v.to_string()),
        );
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("trace_stride", self.trace_stride.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        map
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Training dataset (CSV).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    chain: ChainFlags,
    /// Output ensemble file; diagnostics go to `<out>.diagnostics.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    ensemble: PathBuf,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Unused; accepted for interface uniformity.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    ensemble: PathBuf,
    /// Usage-probability threshold T; attributes with usage < T are weak.
    #[arg(long)]
    threshold: f64,
    /// Output ensemble file.
    #[arg(long)]
    out: PathBuf,
    /// Unused; accepted for interface uniformity.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    chain: ChainFlags,
    /// Training dataset (CSV); alternative to synthetic keys.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    informative: Option<usize>,
    #[arg(long)]
    effect: Option<f64>,
    #[arg(long)]
    k_folds: Option<usize>,
    /// Comma-separated threshold grid.
    #[arg(long)]
    thresholds: Option<String>,
    /// refine, rerun, or both.
    #[arg(long)]
    techniques: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for the report set.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ensemble: PathBuf,
    /// Test dataset (CSV) with the same attribute layout as the ensemble.
    #[arg(long)]
    data: PathBuf,
    /// Smoothing parameter; defaults to the ensemble's own alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Optional JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Unused; accepted for interface uniformity.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Sample(args) => sample(args),
        Command::Profile(args) => profile(args),
        Command::Refine(args) => refine(args),
        Command::Sweep(args) => sweep(args),
        Command::Evaluate(args) => evaluate_cmd(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let data = generate_synthetic(
        args.n,
        args.m,
        args.classes,
        args.informative,
        args.effect,
        args.seed,
    )?;
    write_csv(&data, &args.out)?;
    println!(
        "wrote {} x {} dataset with {} classes to {}",
        data.n_samples(),
        data.n_attributes(),
        data.class_count(),
        args.out.display()
    );
    Ok(())
}

/// Builds a chain config from the config file plus flag overrides, using
/// the dataset path as the spec's data source.
fn chain_config_from(flags: &ChainFlags, data: &Path) -> Result<treebma::ChainConfig> {
    let file_layer = match &flags.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut flag_layer = flags.layer();
    flag_layer.insert("data".into(), data.display().to_string());
    let spec = build_spec(&[&file_layer, &flag_layer])?;
    Ok(spec.chain)
}

fn sample(args: SampleArgs) -> Result<()> {
    let config = chain_config_from(&args.chain, &args.data)?;
    let data = load_csv(&args.data)?;
    let catalog = build_rule_catalog(&data);
    let (ensemble, diagnostics) = run_chain(&data, &catalog, &config)?;
    ensemble.write_file(&args.out)?;

    let diag_path = args.out.with_extension("diagnostics.json");
    let summary = stationarity_summary(&diagnostics).ok();
    let json = serde_json::json!({
        "diagnostics": diagnostics,
        "stationarity": summary,
        "overall_acceptance": diagnostics.overall_acceptance(),
    });
    std::fs::write(
        &diag_path,
        serde_json::to_string_pretty(&json).expect("serializable") + "\n",
    )
    .map_err(|source| Error::Io {
        path: diag_path.clone(),
        source,
    })?;

    match &summary {
        Some(s) => println!(
            "collected {} trees (acceptance {:.3}, post-burn-in mean size {:.1} splits)",
            ensemble.len(),
            diagnostics.overall_acceptance(),
            s.mean_size_post_burn_in
        ),
        None => println!(
            "collected {} trees (acceptance {:.3}; trace too sparse for a stationarity summary)",
            ensemble.len(),
            diagnostics.overall_acceptance()
        ),
    }
    println!("ensemble: {}", args.out.display());
    println!("diagnostics: {}", diag_path.display());
    Ok(())
}

fn profile(args: ProfileArgs) -> Result<()> {
    let ensemble = Ensemble::read_file(&args.ensemble)?;
    let profile = usage_profile(&ensemble)?;
    let mut table = String::from("attribute,usage\n");
    for (name, usage) in ensemble
        .provenance
        .attribute_names
        .iter()
        .zip(profile.usage())
    {
        table.push_str(&format!("{name},{usage}\n"));
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &table).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            println!(
                "wrote usage profile over {} splits to {}",
                profile.total_splits(),
                path.display()
            );
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn refine(args: RefineArgs) -> Result<()> {
    let ensemble = Ensemble::read_file(&args.ensemble)?;
    let profile = usage_profile(&ensemble)?;
    let weak = weak_attributes(&profile, args.threshold);
    let refined = refine_ensemble(&ensemble, &weak)?;
    refined.write_file(&args.out)?;
    println!(
        "T={}: {} weak attributes, kept {}/{} trees -> {}",
        args.threshold,
        weak.n_weak(),
        refined.len(),
        ensemble.len(),
        args.out.display()
    );
    Ok(())
}

fn print_row(row: &SweepRow) {
    let opt = |v: Option<f64>| v.map_or("exhausted".to_string(), format_sig4);
    println!(
        "  T={:<7} {:<9} n_weak={:<6} P={} ± {}  E={} ± {}",
        row.threshold,
        row.technique,
        format_sig4(row.n_weak_mean),
        opt(row.accuracy_mean),
        opt(row.accuracy_2sigma),
        opt(row.entropy_mean),
        opt(row.entropy_2sigma),
    );
}

fn sweep(args: SweepArgs) -> Result<()> {
    let file_layer = match &args.chain.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut flag_layer = args.chain.layer();
    let mut put = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            flag_layer.insert(key.to_string(), v);
        }
    };
    put("data", args.data.as_ref().map(|p| p.display().to_string()));
    put("n", args.n.map(|v| v.to_string()));
    put("m", args.m.map(|v| v.to_string()));
    put("classes", args.classes.map(|v| v.to_string()));
    put("informative", args.informative.map(|v| v.to_string()));
    put("effect", args.effect.map(|v| v.to_string()));
    put("k_folds", args.k_folds.map(|v| v.to_string()));
    put("thresholds", args.thresholds.clone());
    put("techniques", args.techniques.clone());
    put("repeats", args.repeats.map(|v| v.to_string()));
    put("workers", args.workers.map(|v| v.to_string()));
    put("out_dir", args.out.as_ref().map(|p| p.display().to_string()));
    let spec = build_spec(&[&file_layer, &flag_layer])?;

    let output = threshold_sweep(&spec)?;
    let files = emit_reports(&output, &spec.out_dir)?;

    println!("sweep over {} ({} cells):", spec.data.describe(), output.cells.len());
    print_row(&output.baseline);
    for row in &output.rows {
        print_row(row);
    }
    println!(
        "entropy: Shannon entropy in bits of the averaged predictive, summed over test samples"
    );
    println!("wrote {} files under {}", files.len(), spec.out_dir.display());
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let ensemble = Ensemble::read_file(&args.ensemble)?;
    let data = load_csv(&args.data)?;
    let alpha = args.alpha.unwrap_or(ensemble.config.alpha);
    let (p, e) = evaluate(&ensemble, &data, alpha)?;
    println!("P = {} %", format_sig4(p));
    println!(
        "E = {} bits (Shannon entropy of the averaged predictive, summed over {} test samples)",
        format_sig4(e),
        data.n_samples()
    );
    if let Some(path) = &args.out {
        let json = serde_json::json!({
            "accuracy_percent": p,
            "entropy_bits": e,
            "n_test": data.n_samples(),
            "alpha": alpha,
            "entropy_convention":
                "Shannon entropy in bits of the averaged predictive distribution, summed over test samples",
        });
        std::fs::write(
            path,
            serde_json::to_string_pretty(&json).expect("serializable") + "\n",
        )
        .map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}
