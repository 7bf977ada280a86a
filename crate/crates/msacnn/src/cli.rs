//! Command-line interface. [`run`] returns the process exit code: 0 on
//! success, 1 on configuration, data or usage errors, 2 on invariant
//! violations.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use msacnn_core::dataset::{generate_synthetic, n2_probe_epoch};
use msacnn_core::model::{flop_estimate, param_count, param_specs, ModelConfig};

use crate::checkpoint::{load_checkpoint, parse_mode, parse_size};
use crate::error::{write, Error, Result};
use crate::ingest::ingest_csv;
use crate::preprocess::preprocess;
use crate::report::attention_csv;
use crate::runconfig::{parse_variant, RunConfig};
use crate::runner::{self, sha256_hex};
use crate::store::{load_epochset, save_epochset, to_bytes};

#[derive(Parser, Debug)]
#[command(name = "msacnn", version, about = "Multi-scale CNN with attention for sleep staging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic epoch store.
    GenData(GenArgs),
    /// Build an epoch store from per-subject CSV recordings.
    Ingest(IngestArgs),
    /// Low-pass filter (and optionally resample) an epoch store.
    Preprocess(PreprocessArgs),
    /// Train one model on the whole dataset.
    Train(RunArgs),
    /// Repeated subject-wise cross-validation.
    Cv(RunArgs),
    /// Cross-validate the base model and a variant on the same folds.
    Ablate(RunArgs),
    /// Cross-validate on the first 1, 2, ... channels of an ordered list.
    SweepChannels(RunArgs),
    /// Cross-validate contiguous runs of scales.
    SweepScales(RunArgs),
    /// Print the parameter count of a configuration.
    Params(ModelArgs),
    /// Print the multiply-accumulate estimate in millions.
    Flops(FlopArgs),
    /// Export the incoming/outgoing attention trace of one epoch.
    Attention(AttentionArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    subjects: usize,
    #[arg(long, default_value_t = 30)]
    epochs_per_subject: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 100.0)]
    sample_rate: f64,
    #[arg(long, default_value = "synthetic.eps")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// One CSV per subject.
    #[arg(long, num_args = 1.., required = true)]
    signals: Vec<PathBuf>,
    /// `subject,stage` rows, one per epoch.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    sample_rate: f64,
    #[arg(long, default_value_t = 30.0)]
    epoch_seconds: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40.0)]
    cutoff: f64,
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Output sample rate; unchanged when absent.
    #[arg(long)]
    resample: Option<f64>,
}

/// Flags override values read from `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// `key=value` run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Epoch store; synthetic data when absent.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    epochs_per_subject: Option<usize>,
    /// Channel count of the synthetic data.
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Ordered channel names or indices, comma separated.
    #[arg(long, alias = "order")]
    select: Option<String>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// none, rescaled, multimodal, univariate, no_tcm or no_msm:<I..IV>.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    fold_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    head_lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    decoupled_decay: Option<bool>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scale runs for sweep-scales, e.g. `I,I-II,II-IV`.
    #[arg(long)]
    scales: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for fold jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value = "small")]
    size: String,
    #[arg(long, default_value = "multivariate")]
    mode: String,
    #[arg(long, default_value_t = 9)]
    channels: usize,
    #[arg(long, default_value = "none")]
    variant: String,
    /// Scale run such as `I-IV` (default) or `II-III`.
    #[arg(long)]
    scales: Option<String>,
    /// Also list every parameter tensor.
    #[arg(long)]
    breakdown: bool,
}

#[derive(Args, Debug)]
struct FlopArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Samples per epoch.
    #[arg(long, default_value_t = 3000)]
    samples: usize,
}

#[derive(Args, Debug)]
struct AttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Epoch store to take the epoch from.
    #[arg(long, conflicts_with = "probe_seed")]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Use a generated N2 epoch with one known K-complex and spindle.
    #[arg(long)]
    probe_seed: Option<u64>,
    #[arg(long, default_value_t = 100.0)]
    sample_rate: f64,
    /// Attention block, 0 = first.
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Head index or `mean`.
    #[arg(long, default_value = "0")]
    head: String,
    #[arg(long, default_value = "attention.csv")]
    out: PathBuf,
}

fn grouped(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn model_config(a: &ModelArgs) -> Result<ModelConfig> {
    let rc = RunConfig {
        size: parse_size(&a.size)?,
        mode: parse_mode(&a.mode)?,
        variant: parse_variant(&a.variant)?,
        ..RunConfig::new("params")
    };
    match &a.scales {
        None => rc.model_config(a.channels),
        Some(s) => {
            if rc.variant.is_some() {
                return Err(Error::config("--scales and --variant cannot be combined"));
            }
            let run = crate::runconfig::parse_scale_run(s)?;
            Ok(ModelConfig::with_scales(rc.size, rc.mode, a.channels, &run)?)
        }
    }
}

fn resolve(command: &str, a: &RunArgs) -> Result<RunConfig> {
    let mut rc = RunConfig::new(command);
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        rc.apply_text(&text)?;
        rc.command = command.to_string();
    }
    let flags: [(&str, Option<String>); 23] = [
        ("data", a.data.clone()),
        ("synth_seed", a.synth_seed.map(|v| v.to_string())),
        ("subjects", a.subjects.map(|v| v.to_string())),
        ("epochs_per_subject", a.epochs_per_subject.map(|v| v.to_string())),
        ("synth_channels", a.channels.map(|v| v.to_string())),
        ("sample_rate", a.sample_rate.map(|v| v.to_string())),
        ("channels", a.select.clone()),
        ("size", a.size.clone()),
        ("mode", a.mode.clone()),
        ("variant", a.variant.clone()),
        ("folds", a.folds.map(|v| v.to_string())),
        ("repetitions", a.repetitions.map(|v| v.to_string())),
        ("fold_seed", a.fold_seed.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("head_lr", a.head_lr.map(|v| v.to_string())),
        ("weight_decay", a.weight_decay.map(|v| v.to_string())),
        ("decoupled_decay", a.decoupled_decay.map(|v| v.to_string())),
        ("dropout", a.dropout.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("scale_runs", a.scales.clone()),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            rc.set(k, &v)?;
        }
    }
    Ok(rc)
}

fn print_summary(r: &runner::CvResult) {
    let (m, s) = (&r.aggregate.mean, &r.aggregate.std);
    println!("accuracy {:.4} ± {:.4}", m.accuracy, s.accuracy);
    println!("macro_f1 {:.4} ± {:.4}", m.macro_f1, s.macro_f1);
    println!("kappa    {:.4} ± {:.4}", m.kappa, s.kappa);
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => {
            let set = generate_synthetic(a.seed, a.subjects, a.epochs_per_subject, a.channels, a.sample_rate);
            save_epochset(&set, &a.out)?;
            println!("{}  {}", sha256_hex(&to_bytes(&set)), a.out.display());
        }
        Command::Ingest(a) => {
            let set = ingest_csv(&a.signals, &a.labels, a.sample_rate, a.epoch_seconds)?;
            save_epochset(&set, &a.out)?;
            println!("{} epochs, {} channels, {} subjects -> {}", set.len(), set.n_channels(), set.n_subjects(), a.out.display());
        }
        Command::Preprocess(a) => {
            let set = preprocess(&load_epochset(&a.data)?, a.cutoff, a.order, a.resample)?;
            save_epochset(&set, &a.out)?;
            println!("{} epochs at {} Hz -> {}", set.len(), set.sample_rate_hz(), a.out.display());
        }
        Command::Train(a) => {
            let rc = resolve("train", &a)?;
            let r = runner::run_train(&rc)?;
            if let Some(last) = r.history.epochs.last() {
                println!("epoch {} loss {:.4} train accuracy {:.4}", last.epoch, last.mean_loss, last.train_accuracy);
            }
            println!("run directory {}", rc.out.display());
        }
        Command::Cv(a) => {
            let rc = resolve("cv", &a)?;
            let r = runner::run_cv(&rc, a.jobs)?;
            print_summary(&r);
            println!("run directory {}", rc.out.display());
        }
        Command::Ablate(a) => {
            let rc = resolve("ablate", &a)?;
            let variant = rc.variant.ok_or_else(|| Error::config("ablate needs --variant"))?;
            let n_ch = runner::channel_count(&rc)?;
            let base = RunConfig { variant: None, ..rc.clone() }.model_config(n_ch)?;
            println!(
                "{}: {} parameters (base {})",
                crate::runconfig::variant_name(Some(variant)),
                grouped(param_count(&rc.model_config(n_ch)?)),
                grouped(param_count(&base))
            );
            let r = runner::run_ablation(&rc, a.jobs)?;
            println!("base");
            print_summary(&r.base);
            println!("variant");
            print_summary(&r.variant);
            println!("run directory {}", rc.out.display());
        }
        Command::SweepChannels(a) => {
            let rc = resolve("sweep-channels", &a)?;
            for r in runner::run_channel_sweep(&rc, a.jobs)? {
                println!("{} channels: accuracy {:.4}", r.config.n_ch, r.aggregate.mean.accuracy);
            }
        }
        Command::SweepScales(a) => {
            let rc = resolve("sweep-scales", &a)?;
            for r in runner::run_scale_sweep(&rc, a.jobs)? {
                let run: Vec<usize> = r.config.scale_plan.scales.iter().map(|s| s.scale).collect();
                println!("scales {}: accuracy {:.4}", crate::runconfig::scale_run_name(&run), r.aggregate.mean.accuracy);
            }
        }
        Command::Params(a) => {
            let cfg = model_config(&a)?;
            if a.breakdown {
                for s in param_specs(&cfg) {
                    println!("{} {:?} {}", s.name, s.shape, s.shape.iter().product::<usize>());
                }
            }
            println!("{}", grouped(param_count(&cfg)));
        }
        Command::Flops(a) => {
            let cfg = model_config(&a.model)?;
            println!("{:.2}", flop_estimate(&cfg, a.samples) as f64 / 1e6);
        }
        Command::Attention(a) => {
            let model = load_checkpoint(&a.checkpoint)?;
            let head = match a.head.as_str() {
                "mean" => None,
                h => Some(h.parse().map_err(|_| Error::config(format!("--head takes an index or 'mean', got '{}'", h)))?),
            };
            let (epoch, fs, event) = match (&a.data, a.probe_seed) {
                (Some(p), _) => {
                    let set = load_epochset(p)?;
                    if a.index >= set.len() {
                        return Err(Error::config(format!("epoch {} out of range ({} epochs)", a.index, set.len())));
                    }
                    (set.epoch_tensor(a.index), set.sample_rate_hz() as f64, None)
                }
                (None, Some(seed)) => {
                    let probe = n2_probe_epoch(seed, model.config.n_ch, a.sample_rate);
                    (probe.epoch, a.sample_rate, Some(probe.event))
                }
                (None, None) => return Err(Error::config("attention needs --data or --probe-seed")),
            };
            let trace = runner::attention_trace(&model, &epoch, a.layer, head)?;
            let p_tot = model.config.scale_plan.p_tot;
            write(&a.out, attention_csv(&trace, p_tot, fs).as_bytes())?;
            println!(
                "most attended token {} at {:.2} s",
                trace.argmax_incoming,
                (trace.argmax_incoming * p_tot) as f64 / fs
            );
            if let Some(ev) = event {
                println!("event tokens {}..{}", ev.start / p_tot, ev.end.div_ceil(p_tot));
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
