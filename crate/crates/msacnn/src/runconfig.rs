//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use msacnn_core::model::{apply_variant, InputMode, ModelConfig, ModelSize, Variant};
use msacnn_core::msm::SCALE_NAMES;
use msacnn_core::trainer::TrainConfig;

use crate::checkpoint::{mode_name, parse_mode, parse_scale, parse_size, size_name};
use crate::error::{Error, Result};

/// Everything that determines the outputs of a run. Thread count is not
/// part of it: results do not depend on it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    /// Epoch store; synthetic data is generated when absent.
    pub data: Option<PathBuf>,
    pub synth_seed: u64,
    pub subjects: usize,
    pub epochs_per_subject: usize,
    pub synth_channels: usize,
    pub sample_rate: f64,
    /// Ordered channel selection (names or indices); all channels when empty.
    pub channels: Vec<String>,
    pub size: ModelSize,
    pub mode: InputMode,
    pub variant: Option<Variant>,
    pub folds: usize,
    pub repetitions: usize,
    pub fold_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Size-dependent default when absent.
    pub lr: Option<f64>,
    pub head_lr: Option<f64>,
    pub weight_decay: f64,
    pub decoupled_decay: bool,
    pub dropout: f64,
    pub seed: u64,
    /// Scale runs for `sweep-scales`, e.g. `I-II`. All contiguous runs when empty.
    pub scale_runs: Vec<String>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            data: None,
            synth_seed: 7,
            subjects: 6,
            epochs_per_subject: 30,
            synth_channels: 4,
            sample_rate: 100.0,
            channels: Vec::new(),
            size: ModelSize::Small,
            mode: InputMode::Multivariate,
            variant: None,
            folds: 3,
            repetitions: 2,
            fold_seed: 7,
            epochs: 100,
            batch_size: 64,
            lr: None,
            head_lr: None,
            weight_decay: 1e-4,
            decoupled_decay: false,
            dropout: 0.1,
            seed: 0,
            scale_runs: Vec::new(),
            out: PathBuf::from("runs").join(command),
        }
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("default".to_string(), |x| x.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{}={}", k, v).unwrap();
        kv("command", self.command.clone());
        kv("data", self.data.as_ref().map_or("synthetic".into(), |p| p.display().to_string()));
        kv("synth_seed", self.synth_seed.to_string());
        kv("subjects", self.subjects.to_string());
        kv("epochs_per_subject", self.epochs_per_subject.to_string());
        kv("synth_channels", self.synth_channels.to_string());
        kv("sample_rate", self.sample_rate.to_string());
        kv("channels", self.channels.join(","));
        kv("size", size_name(self.size).into());
        kv("mode", mode_name(self.mode).into());
        kv("variant", variant_name(self.variant));
        kv("folds", self.folds.to_string());
        kv("repetitions", self.repetitions.to_string());
        kv("fold_seed", self.fold_seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", opt(self.lr));
        kv("head_lr", opt(self.head_lr));
        kv("weight_decay", self.weight_decay.to_string());
        kv("decoupled_decay", self.decoupled_decay.to_string());
        kv("dropout", self.dropout.to_string());
        kv("seed", self.seed.to_string());
        kv("scale_runs", self.scale_runs.join(","));
        kv("out", self.out.display().to_string());
        s
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value, got '{}'", n + 1, line)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::config(format!("line {}: {}", n + 1, strip(&e))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::new("");
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::config(format!("invalid value '{}' for {}", v, k)))
        }
        let list = |v: &str| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        let opt = |v: &str| -> Result<Option<f64>> { if v == "default" { Ok(None) } else { num(key, v).map(Some) } };
        match key {
            "command" => self.command = v.to_string(),
            "data" => self.data = (v != "synthetic" && !v.is_empty()).then(|| PathBuf::from(v)),
            "synth_seed" => self.synth_seed = num(key, v)?,
            "subjects" => self.subjects = num(key, v)?,
            "epochs_per_subject" => self.epochs_per_subject = num(key, v)?,
            "synth_channels" => self.synth_channels = num(key, v)?,
            "sample_rate" => self.sample_rate = num(key, v)?,
            "channels" => self.channels = list(v),
            "size" => self.size = parse_size(v)?,
            "mode" => self.mode = parse_mode(v)?,
            "variant" => self.variant = parse_variant(v)?,
            "folds" => self.folds = num(key, v)?,
            "repetitions" => self.repetitions = num(key, v)?,
            "fold_seed" => self.fold_seed = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr" => self.lr = opt(v)?,
            "head_lr" => self.head_lr = opt(v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "decoupled_decay" => self.decoupled_decay = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "scale_runs" => self.scale_runs = list(v),
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::config(format!("unknown key '{}'", key))),
        }
        Ok(())
    }

    /// Model configuration for `n_ch` input channels, variant applied.
    pub fn model_config(&self, n_ch: usize) -> Result<ModelConfig> {
        let base = ModelConfig::new(self.size, self.mode, n_ch)?;
        let mut cfg = match self.variant {
            Some(v) => apply_variant(&base, v)?,
            None => base,
        };
        cfg.tcm.dropout = self.dropout;
        Ok(cfg)
    }

    pub fn train_config(&self, model: &ModelConfig) -> TrainConfig {
        let mut tc = TrainConfig::for_model(model, self.seed);
        tc.epochs = self.epochs;
        tc.batch_size = self.batch_size;
        if let Some(lr) = self.lr {
            tc.base_lr = lr;
        }
        if self.head_lr.is_some() {
            tc.head_lr = self.head_lr;
        }
        tc.weight_decay = self.weight_decay;
        tc.decoupled_decay = self.decoupled_decay;
        tc.dropout = self.dropout;
        tc
    }
}

fn strip(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("configuration error: ").unwrap_or(&s).to_string()
}

pub fn variant_name(v: Option<Variant>) -> String {
    match v {
        None => "none".into(),
        Some(Variant::Rescaled) => "rescaled".into(),
        Some(Variant::Multimodal) => "multimodal".into(),
        Some(Variant::Univariate) => "univariate".into(),
        Some(Variant::NoTcm) => "no_tcm".into(),
        Some(Variant::NoMsm(s)) => format!("no_msm:{}", SCALE_NAMES[s]),
    }
}

/// `none`, `rescaled`, `multimodal`, `univariate`, `no_tcm` or
/// `no_msm:<scale>` (scale I..IV, default II).
pub fn parse_variant(s: &str) -> Result<Option<Variant>> {
    Ok(Some(match s {
        "none" | "" => return Ok(None),
        "rescaled" => Variant::Rescaled,
        "multimodal" => Variant::Multimodal,
        "univariate" => Variant::Univariate,
        "no_tcm" => Variant::NoTcm,
        "no_msm" => Variant::NoMsm(1),
        _ => match s.strip_prefix("no_msm:") {
            Some(scale) => Variant::NoMsm(parse_scale(scale)?),
            None => return Err(Error::config(format!("unknown variant '{}'", s))),
        },
    }))
}

/// `I-III` style run of scales, or a single scale.
pub fn parse_scale_run(s: &str) -> Result<Vec<usize>> {
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let (a, b) = (parse_scale(a.trim())?, parse_scale(b.trim())?);
    if a > b {
        return Err(Error::config(format!("scale run '{}' is descending", s)));
    }
    Ok((a..=b).collect())
}

pub fn scale_run_name(run: &[usize]) -> String {
    match run {
        [one] => SCALE_NAMES[*one].to_string(),
        _ => format!("{}-{}", SCALE_NAMES[run[0]], SCALE_NAMES[run[run.len() - 1]]),
    }
}
