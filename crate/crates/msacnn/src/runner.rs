//! Experiment drivers: data preparation, parallel fold jobs and run
//! directories with hashed manifests.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use msacnn_core::dataset::{generate_synthetic, EpochSet};
use msacnn_core::eval::{aggregate, fold_accuracy_means, make_fold_plan, paired_t_test, run_fold, AggregateReport, FoldOutcome, FoldPlan, FoldReport};
use msacnn_core::model::{build, param_count, InputMode, ModelConfig, MsaCnnModel};
use msacnn_core::rng::{streams, Rng};
use msacnn_core::tcm::AttentionTrace;
use msacnn_core::tensor::{Tape, Tensor};
use msacnn_core::trainer::{train, History, TrainConfig};
use sha2::{Digest, Sha256};

use crate::checkpoint::{manifest as checkpoint_manifest, to_bytes as checkpoint_bytes};
use crate::error::{read, write, Error, Result};
use crate::report;
use crate::runconfig::{parse_scale_run, scale_run_name, variant_name, RunConfig};
use crate::store::{load_epochset, to_bytes as store_bytes};

pub const MANIFEST: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

/// Hash of the canonical epoch-store serialization.
pub fn fingerprint(set: &EpochSet) -> String {
    sha256_hex(&store_bytes(set))
}

/// Channels by name or index, in the given order.
pub fn select_channels(set: &EpochSet, wanted: &[String]) -> Result<EpochSet> {
    if wanted.is_empty() {
        return Ok(set.clone());
    }
    let idx = wanted
        .iter()
        .map(|w| {
            set.channel_names()
                .iter()
                .position(|n| n == w)
                .or_else(|| w.parse::<usize>().ok().filter(|&i| i < set.n_channels()))
                .ok_or_else(|| Error::config(format!("no channel '{}' (have {:?})", w, set.channel_names())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(set.select_channels(&idx)?)
}

/// The dataset a run refers to, before channel selection.
pub fn source_data(rc: &RunConfig) -> Result<EpochSet> {
    match &rc.data {
        Some(p) => load_epochset(p),
        None => {
            if rc.subjects == 0 || rc.epochs_per_subject == 0 || rc.synth_channels == 0 {
                return Err(Error::config("synthetic data needs at least one subject, epoch and channel"));
            }
            Ok(generate_synthetic(rc.synth_seed, rc.subjects, rc.epochs_per_subject, rc.synth_channels, rc.sample_rate))
        }
    }
}

pub fn load_data(rc: &RunConfig) -> Result<EpochSet> {
    select_channels(&source_data(rc)?, &rc.channels)
}

/// Input channel count of a run, without generating synthetic data.
pub fn channel_count(rc: &RunConfig) -> Result<usize> {
    match (&rc.data, rc.channels.len()) {
        (None, 0) => Ok(rc.synth_channels),
        (None, n) => Ok(n),
        (Some(_), _) => Ok(load_data(rc)?.n_channels()),
    }
}

/// Univariate models see the first channel only.
pub fn data_for(cfg: &ModelConfig, set: &EpochSet) -> Result<EpochSet> {
    if cfg.mode == InputMode::Univariate && set.n_channels() > 1 {
        Ok(set.select_channels(&[0])?)
    } else {
        Ok(set.clone())
    }
}

/// Runs `f(0..n)` on up to `jobs` threads. Results come back in index
/// order; the lowest-index error wins.
pub fn parallel_map<T: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Output directory whose files are recorded in a manifest on completion.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        write(&self.path.join(rel), bytes)
    }

    /// Writes `manifest.txt`: one `sha256 size path` line per file below
    /// the directory, sorted by path.
    pub fn finish(&self) -> Result<String> {
        let text = manifest_text(&self.path)?;
        self.write(MANIFEST, text.as_bytes())?;
        Ok(text)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            if rel != MANIFEST {
                out.push(rel);
            }
        }
    }
    Ok(())
}

pub fn manifest_text(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut out = String::new();
    for f in files {
        let bytes = read(&dir.join(&f))?;
        out.push_str(&format!("{} {} {}\n", sha256_hex(&bytes), bytes.len(), f));
    }
    Ok(out)
}

/// Checks that the manifest matches the directory and that the required
/// run files are present.
pub fn verify_manifest(dir: &Path, required: &[&str]) -> Result<()> {
    let stored = String::from_utf8(read(&dir.join(MANIFEST))?).map_err(|_| Error::data("manifest is not UTF-8"))?;
    let actual = manifest_text(dir)?;
    if stored != actual {
        return Err(Error::Core(msacnn_core::Error::Invariant(format!("{} does not match the files in {}", MANIFEST, dir.display()))));
    }
    for r in required {
        if !stored.lines().any(|l| l.rsplit(' ').next() == Some(*r)) {
            return Err(Error::Core(msacnn_core::Error::Invariant(format!("run directory {} lacks {}", dir.display(), r))));
        }
    }
    Ok(())
}

fn write_header(dir: &RunDir, rc: &RunConfig, set: &EpochSet) -> Result<()> {
    dir.write("run.conf", rc.to_text().as_bytes())?;
    let fp = format!(
        "sha256={}\nepochs={}\nchannels={}\nsubjects={}\nsample_rate_hz={}\nchannel_names={}\n",
        fingerprint(set),
        set.len(),
        set.n_channels(),
        set.n_subjects(),
        set.sample_rate_hz(),
        set.channel_names().join(",")
    );
    dir.write("dataset.txt", fp.as_bytes())
}

fn log(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

/// Every (repetition, fold) job of a plan, run on `jobs` threads.
pub fn cross_validate(cfg: &ModelConfig, set: &EpochSet, plan: &FoldPlan, tc: &TrainConfig, jobs: usize) -> Result<Vec<FoldOutcome>> {
    let n = plan.k * plan.repetitions;
    parallel_map(jobs, n, |i| {
        let (rep, fold) = (i / plan.k, i % plan.k);
        let o = run_fold(cfg, set, plan, tc, rep, fold)?;
        log(format!("  repetition {} fold {}: accuracy {:.4}", rep, fold, o.report.metrics.accuracy));
        Ok(o)
    })
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub config: ModelConfig,
    pub reports: Vec<FoldReport>,
    pub aggregate: AggregateReport,
}

/// Cross-validates `cfg` and writes fold reports, summary, per-fold
/// checkpoints and histories into `dir/prefix`.
pub fn cv_into(dir: &RunDir, prefix: &str, cfg: &ModelConfig, set: &EpochSet, rc: &RunConfig, jobs: usize) -> Result<CvResult> {
    let data = data_for(cfg, set)?;
    let plan = make_fold_plan(data.subject_ids(), rc.folds, rc.repetitions, rc.fold_seed)?;
    let tc = rc.train_config(cfg);
    let outcomes = cross_validate(cfg, &data, &plan, &tc, jobs)?;
    let reports: Vec<FoldReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let agg = aggregate(&reports)?;
    let p = |name: &str| if prefix.is_empty() { name.to_string() } else { format!("{}/{}", prefix, name) };
    dir.write(&p("folds.csv"), report::folds_csv(&reports).as_bytes())?;
    dir.write(&p("summary.txt"), report::summary(&agg, plan.k).as_bytes())?;
    for o in &outcomes {
        let stem = format!("r{}_f{}", o.report.repetition, o.report.fold);
        dir.write(&p(&format!("checkpoints/{}.msc", stem)), &checkpoint_bytes(&o.model))?;
        dir.write(&p(&format!("histories/{}.csv", stem)), report::history_csv(&o.history).as_bytes())?;
    }
    if let Some(o) = outcomes.first() {
        dir.write(&p("checkpoints/manifest.txt"), checkpoint_manifest(&o.model).as_bytes())?;
    }
    Ok(CvResult { config: cfg.clone(), reports, aggregate: agg })
}

pub struct TrainResult {
    pub model: MsaCnnModel,
    pub history: History,
}

/// `train`: one model on the whole dataset.
pub fn run_train(rc: &RunConfig) -> Result<TrainResult> {
    let set = load_data(rc)?;
    let cfg = rc.model_config(set.n_channels())?;
    let data = data_for(&cfg, &set)?;
    let dir = RunDir::create(&rc.out)?;
    write_header(&dir, rc, &data)?;
    let mut model = build(&cfg, rc.seed)?;
    let history = train(&mut model, &data, &rc.train_config(&cfg))?;
    dir.write("model.msc", &checkpoint_bytes(&model))?;
    dir.write("model.manifest.txt", checkpoint_manifest(&model).as_bytes())?;
    dir.write("history.csv", report::history_csv(&history).as_bytes())?;
    dir.finish()?;
    Ok(TrainResult { model, history })
}

/// `cv`: cross-validation of the configured model.
pub fn run_cv(rc: &RunConfig, jobs: usize) -> Result<CvResult> {
    let set = load_data(rc)?;
    let cfg = rc.model_config(set.n_channels())?;
    let dir = RunDir::create(&rc.out)?;
    write_header(&dir, rc, &set)?;
    let r = cv_into(&dir, "", &cfg, &set, rc, jobs)?;
    dir.finish()?;
    Ok(r)
}

pub struct AblationResult {
    pub base: CvResult,
    pub variant: CvResult,
    pub fold_means: (Vec<f64>, Vec<f64>),
}

/// `ablate`: the base model and its variant on the same folds and seeds,
/// compared with a paired t-test on repetition-averaged fold accuracies.
pub fn run_ablation(rc: &RunConfig, jobs: usize) -> Result<AblationResult> {
    let variant = rc.variant.ok_or_else(|| Error::config("ablate needs a variant"))?;
    let set = load_data(rc)?;
    let base_rc = RunConfig { variant: None, ..rc.clone() };
    let base_cfg = base_rc.model_config(set.n_channels())?;
    let var_cfg = rc.model_config(set.n_channels())?;
    let dir = RunDir::create(&rc.out)?;
    write_header(&dir, rc, &set)?;
    log("base model");
    let base = cv_into(&dir, "base", &base_cfg, &set, &base_rc, jobs)?;
    let name = variant_name(Some(variant)).replace(':', "_");
    log(format!("variant {}", name));
    let var = cv_into(&dir, &name, &var_cfg, &set, rc, jobs)?;
    let a = fold_accuracy_means(&base.reports, rc.folds);
    let b = fold_accuracy_means(&var.reports, rc.folds);
    let mut text = format!(
        "base.parameters={}\n{}.parameters={}\nbase.accuracy={:.4}\n{}.accuracy={:.4}\n",
        param_count(&base_cfg),
        name,
        param_count(&var_cfg),
        base.aggregate.mean.accuracy,
        name,
        var.aggregate.mean.accuracy
    );
    match paired_t_test(&a, &b) {
        Ok(t) => text.push_str(&report::t_test_text("base", &name, &a, &b, &t)),
        Err(e) => text.push_str(&format!("t_test=unavailable ({})\n", e)),
    }
    dir.write("comparison.txt", text.as_bytes())?;
    dir.finish()?;
    Ok(AblationResult { base, variant: var, fold_means: (a, b) })
}

fn sweep_row(label: &str, r: &CvResult) -> String {
    let (m, s) = (&r.aggregate.mean, &r.aggregate.std);
    format!(
        "{},{},{},{},{},{},{},{}\n",
        label,
        param_count(&r.config),
        m.accuracy,
        s.accuracy,
        m.macro_f1,
        s.macro_f1,
        m.kappa,
        s.kappa
    )
}

const SWEEP_HEADER: &str = "setting,parameters,accuracy,accuracy_std,macro_f1,macro_f1_std,kappa,kappa_std\n";

/// `sweep-channels`: the first 1, 2, … channels of the ordered selection.
pub fn run_channel_sweep(rc: &RunConfig, jobs: usize) -> Result<Vec<CvResult>> {
    let set = load_data(rc)?;
    let dir = RunDir::create(&rc.out)?;
    write_header(&dir, rc, &set)?;
    let mut csv = String::from(SWEEP_HEADER);
    let mut out = Vec::new();
    for n in 1..=set.n_channels() {
        let subset = set.select_channels(&(0..n).collect::<Vec<_>>())?;
        let cfg = rc.model_config(n)?;
        let label = subset.channel_names().join("+");
        log(format!("channels {}", label));
        let r = cv_into(&dir, &format!("channels_{}", n), &cfg, &subset, rc, jobs)?;
        csv.push_str(&sweep_row(&label, &r));
        out.push(r);
    }
    dir.write("sweep.csv", csv.as_bytes())?;
    dir.finish()?;
    Ok(out)
}

/// Every contiguous run of the four scales, shortest first.
pub fn all_scale_runs() -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    for len in 1..=4 {
        for start in 0..=4 - len {
            runs.push((start..start + len).collect());
        }
    }
    runs
}

/// `sweep-scales`: contiguous scale runs with the total filter count fixed.
pub fn run_scale_sweep(rc: &RunConfig, jobs: usize) -> Result<Vec<CvResult>> {
    let runs = if rc.scale_runs.is_empty() {
        all_scale_runs()
    } else {
        rc.scale_runs.iter().map(|s| parse_scale_run(s)).collect::<Result<Vec<_>>>()?
    };
    let set = load_data(rc)?;
    let dir = RunDir::create(&rc.out)?;
    write_header(&dir, rc, &set)?;
    let mut csv = String::from(SWEEP_HEADER);
    let mut out = Vec::new();
    for run in runs {
        let mut cfg = ModelConfig::with_scales(rc.size, rc.mode, set.n_channels(), &run)?;
        cfg.tcm.dropout = rc.dropout;
        let label = scale_run_name(&run);
        log(format!("scales {}", label));
        let r = cv_into(&dir, &format!("scales_{}", label), &cfg, &set, rc, jobs)?;
        csv.push_str(&sweep_row(&label, &r));
        out.push(r);
    }
    dir.write("sweep.csv", csv.as_bytes())?;
    dir.finish()?;
    Ok(out)
}

/// Attention trace of one epoch at `layer` (0 = first attention block);
/// `head` of `None` averages over heads.
pub fn attention_trace(model: &MsaCnnModel, epoch: &Tensor, layer: usize, head: Option<usize>) -> Result<AttentionTrace> {
    let mut tape = Tape::new();
    let g = model.graph(&mut tape, epoch, &mut Rng::new(0, streams::DROPOUT), false)?;
    let att = *g.attention.get(layer).ok_or_else(|| {
        Error::Core(msacnn_core::Error::Usage(format!("attention layer {} out of range ({} layers)", layer, g.attention.len())))
    })?;
    Ok(AttentionTrace::from_tape(&tape, att, head)?)
}
