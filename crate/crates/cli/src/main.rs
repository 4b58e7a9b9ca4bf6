use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ampgnn::complexity::{node_pair_count, FlopReport};
use ampgnn::detect::Variant;
use ampgnn::gnn::GraphMode;
use ampgnn::rng::{derive_seed, tag};
use ampgnn::sweep::{gen_fixtures, run_sweep_with_workers, sweep_sidecar, worker_count, FixtureSpec, SweepSpec, WORKERS_ENV};
use ampgnn::train::{train, train_from, write_curve_csv, TrainConfig};
use ampgnn::{sample_channel, Constellation, GnnHyper, GnnParams, OtfsConfig};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;

/// AMP-aided graph neural network detection for OTFS.
#[derive(Parser)]
#[command(name = "ampgnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo BER sweep over detectors and SNR points.
    Sweep(SweepArgs),
    /// Train a learned detector and write its checkpoint.
    Train(TrainArgs),
    /// Per-stage operation counts.
    Flops(FlopsArgs),
    /// Reproducible channel and frame fixtures.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct Common {
    /// JSON file with base settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// System preset: tiny, small or paper.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    trials: Option<usize>,
    /// SNR grid in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Vec<f64>,
    /// Detector names, comma separated.
    #[arg(long, value_delimiter = ',')]
    detector: Vec<Variant>,
    #[arg(long, allow_hyphen_values = true)]
    csi_error_db: Option<f64>,
    /// Checkpoint for a learned detector as NAME=PATH.
    #[arg(long, value_parser = parse_checkpoint)]
    checkpoint: Vec<(Variant, PathBuf)>,
    /// Outer iterations for every detector.
    #[arg(short = 'T', long)]
    iterations: Option<usize>,
    /// Write per-trial diagnostics as JSON lines next to the CSV.
    #[arg(long)]
    dump_diagnostics: bool,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    detector: Option<Variant>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training noise variance in dB.
    #[arg(long, allow_hyphen_values = true)]
    sigma_train_db: Option<f64>,
    #[arg(short = 'T', long)]
    iterations: Option<usize>,
    #[arg(short = 'L', long)]
    rounds: Option<usize>,
    /// Resume from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training curve CSV; defaults to `<out>.curve.csv`.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(short = 'T', long)]
    iterations: Option<usize>,
    /// Use this `N_g` instead of the worst case.
    #[arg(long)]
    n_g: Option<u64>,
    /// Estimate `N_g` as the mean over this many sampled channels.
    #[arg(long)]
    channels: Option<usize>,
    /// Count the graph without the IDI approximation.
    #[arg(long)]
    no_idi_approx: bool,
}

#[derive(Args)]
struct FixturesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainJob {
    otfs: OtfsConfig,
    train: TrainConfig,
    resume: Option<PathBuf>,
    out: Option<PathBuf>,
    curve: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct FlopsJob {
    otfs: OtfsConfig,
    hyper: Option<GnnHyper>,
    n_g: Option<u64>,
    channels: Option<usize>,
    idi_approx: bool,
    seed: u64,
}

impl Default for FlopsJob {
    fn default() -> Self {
        Self { otfs: OtfsConfig::paper(), hyper: None, n_g: None, channels: None, idi_approx: true, seed: 0 }
    }
}

fn parse_checkpoint(s: &str) -> Result<(Variant, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected NAME=PATH")?;
    Ok((name.parse().map_err(|e| format!("{e}"))?, PathBuf::from(path)))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn preset(name: &str) -> Result<OtfsConfig> {
    OtfsConfig::preset(name).ok_or_else(|| anyhow!("unknown preset {name:?}"))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut spec: SweepSpec = load_config(a.common.config.as_deref())?;
    if let Some(p) = &a.common.preset {
        spec.otfs = preset(p)?;
    }
    if let Some(s) = a.common.seed {
        spec.seed = s;
    }
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if !a.snr.is_empty() {
        spec.snr_db = a.snr;
    }
    if !a.detector.is_empty() {
        spec.detectors = a.detector;
    }
    if a.csi_error_db.is_some() {
        spec.csi_error_db = a.csi_error_db;
    }
    if a.iterations.is_some() {
        spec.iterations = a.iterations;
    }
    for (v, p) in a.checkpoint {
        spec.checkpoints.insert(v.name().to_string(), p);
    }
    if a.common.out.is_some() {
        spec.output = a.common.out;
    }
    spec.dump_diagnostics |= a.dump_diagnostics;
    if spec.dump_diagnostics && spec.output.is_none() {
        bail!("--dump-diagnostics needs --out");
    }
    let workers = a.workers.filter(|&w| w > 0).unwrap_or_else(worker_count);
    let models = spec.load_models()?;
    let report = run_sweep_with_workers(&spec, &models, workers)?;
    let csv = report.to_csv();
    match &spec.output {
        Some(out) => {
            fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
            write_json(&with_suffix(out, ".json"), &sweep_sidecar(&spec, workers))?;
            if let Some(diags) = &report.diagnostics {
                let lines: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
                fs::write(with_suffix(out, ".diagnostics.jsonl"), lines.join("\n") + "\n")?;
            }
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut job: TrainJob = load_config(a.common.config.as_deref())?;
    if let Some(p) = &a.common.preset {
        job.otfs = preset(p)?;
    }
    let tc = &mut job.train;
    if let Some(v) = a.detector {
        tc.variant = v;
    }
    if let Some(s) = a.common.seed {
        tc.seed = s;
    }
    if let Some(s) = a.steps {
        tc.steps = s;
    }
    if let Some(b) = a.batch_size {
        tc.batch_size = b;
    }
    if let Some(d) = a.sigma_train_db {
        tc.sigma_train_sq_db = d;
    }
    if let Some(t) = a.iterations {
        tc.t = t;
    }
    if let Some(l) = a.rounds {
        tc.l = l;
    }
    if a.checkpoint.is_some() {
        job.resume = a.checkpoint;
    }
    if a.common.out.is_some() {
        job.out = a.common.out;
    }
    if a.curve.is_some() {
        job.curve = a.curve;
    }
    let out = job.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.json", job.train.variant)));
    let curve_path = job.curve.clone().unwrap_or_else(|| with_suffix(&out, ".curve.csv"));
    let outcome = match &job.resume {
        Some(p) => train_from(GnnParams::<f64>::load(p)?, &job.train, &job.otfs)?,
        None => train::<f64>(&job.train, &job.otfs)?,
    };
    outcome.params.save(&out)?;
    let mut buf = Vec::new();
    write_curve_csv(&outcome.curve, &mut buf)?;
    fs::write(&curve_path, buf)?;
    write_json(&with_suffix(&curve_path, ".json"), &json!({ "config": job, "skipped_steps": outcome.skipped_steps }))?;
    if let Some(last) = outcome.curve.last() {
        eprintln!("step {} loss {:.6}", last.step, last.loss);
    }
    Ok(())
}

fn flops(a: FlopsArgs) -> Result<()> {
    let mut job: FlopsJob = load_config(a.common.config.as_deref())?;
    if let Some(p) = &a.common.preset {
        job.otfs = preset(p)?;
    }
    if let Some(p) = a.paths {
        job.otfs.paths = p;
    }
    if let Some(s) = a.common.seed {
        job.seed = s;
    }
    if a.n_g.is_some() {
        job.n_g = a.n_g;
    }
    if a.channels.is_some() {
        job.channels = a.channels;
    }
    job.idi_approx &= !a.no_idi_approx;
    job.otfs.validate()?;
    let qr = Constellation::new(job.otfs.qam_order)?.real_alphabet.len();
    let mut hyper = job.hyper.unwrap_or_else(|| GnnHyper::standard(qr));
    if let Some(t) = a.iterations {
        hyper.t = t;
    }
    job.hyper = Some(hyper);
    let n_g = match (job.n_g, job.channels) {
        (Some(n), _) => Some(n),
        (None, Some(k)) if k > 0 => {
            let mode = if job.idi_approx { GraphMode::IdiApprox } else { GraphMode::Full };
            let mut sum = 0u64;
            for i in 0..k {
                let real = sample_channel(&job.otfs, derive_seed(job.seed, &[tag("flops"), i as u64]))?;
                sum += node_pair_count(&real, &job.otfs, mode);
            }
            Some(((sum as f64 / k as f64) * hyper.t as f64).round() as u64)
        }
        _ => None,
    };
    let report = FlopReport::analytic(&job.otfs, &hyper, n_g, job.idi_approx)?;
    print!("{}", report.to_table());
    println!();
    print!("{}", report.to_csv());
    if let Some(out) = &a.common.out {
        fs::write(out, report.to_csv())?;
        write_json(&with_suffix(out, ".json"), &json!({ "config": job, "n_g": report.n_g }))?;
    }
    Ok(())
}

fn fixtures(a: FixturesArgs) -> Result<()> {
    let mut spec: FixtureSpec = load_config(a.common.config.as_deref())?;
    if let Some(p) = &a.common.preset {
        spec.otfs = preset(p)?;
    }
    if let Some(s) = a.common.seed {
        spec.seed = s;
    }
    if let Some(c) = a.count {
        spec.count = c;
    }
    if let Some(s) = a.snr {
        spec.snr_db = s;
    }
    let dir = a.common.out.unwrap_or_else(|| PathBuf::from("fixtures"));
    for p in gen_fixtures(&spec, &dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Train(a) => train_cmd(a),
        Command::Flops(a) => flops(a),
        Command::Fixtures(a) => fixtures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
