//! CSV recordings to an [`EpochSet`].
//!
//! Each signal file holds one subject: a header row of channel names, then
//! one row per sample. The label file has a `subject,stage` header and one
//! row per epoch in recording order; `subject` is the signal file stem or
//! its 0-based position in the argument list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use msacnn_core::dataset::{samples_per_epoch, EpochSet, Stage, EPOCH_SECONDS};
use msacnn_core::sigproc::{design_butterworth_lowpass, filter_forward};

use crate::error::{Error, Result};

pub const LOWPASS_HZ: f64 = 40.0;
pub const LOWPASS_ORDER: usize = 4;

struct Recording {
    names: Vec<String>,
    /// Channel-major samples.
    channels: Vec<Vec<f64>>,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))
}

fn read_signals(path: &Path) -> Result<Recording> {
    let mut rdr = reader(path)?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::data(format!("{}: missing channel header", path.display())));
    }
    let mut channels = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = row + 2;
        let rec = rec.map_err(|e| Error::data(format!("{}: row {}: {}", path.display(), line, e)))?;
        for (col, (cell, ch)) in rec.iter().zip(channels.iter_mut()).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::data(format!("{}: row {}, column {}: '{}' is not a number", path.display(), line, col + 1, cell))
            })?;
            ch.push(v);
        }
    }
    Ok(Recording { names, channels })
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut rdr = reader(path)?;
    let mut out: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::data(format!("{}: row {}: {}", path.display(), line, e)))?;
        if rec.len() != 2 {
            return Err(Error::data(format!("{}: row {} has {} columns, expected subject,stage", path.display(), line, rec.len())));
        }
        let stage = Stage::parse(&rec[1])
            .ok_or_else(|| Error::data(format!("{}: row {}, column 2: unknown stage '{}'", path.display(), line, &rec[1])))?;
        out.entry(rec[0].to_string()).or_default().push(stage.index() as u8);
    }
    Ok(out)
}

fn subject_key(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Reads, low-pass filters and segments the recordings. A trailing partial
/// epoch is dropped. The 40 Hz low-pass is skipped when it would sit at or
/// above the Nyquist frequency.
pub fn ingest_csv<P: AsRef<Path>>(signal_files: &[P], label_file: &Path, sample_rate_hz: f64, epoch_seconds: f64) -> Result<EpochSet> {
    if signal_files.is_empty() {
        return Err(Error::config("no signal files given"));
    }
    if epoch_seconds != EPOCH_SECONDS {
        return Err(Error::config(format!("epochs must be {} s long, got {}", EPOCH_SECONDS, epoch_seconds)));
    }
    if !(sample_rate_hz > 0.0) {
        return Err(Error::config(format!("sample rate must be positive, got {}", sample_rate_hz)));
    }
    let t = samples_per_epoch(sample_rate_hz);
    let filter = if LOWPASS_HZ < sample_rate_hz / 2.0 {
        Some(design_butterworth_lowpass(LOWPASS_ORDER, LOWPASS_HZ, sample_rate_hz)?)
    } else {
        None
    };
    let mut labels_by_subject = read_labels(label_file)?;
    let mut names: Option<Vec<String>> = None;
    let (mut data, mut labels, mut subject_ids) = (Vec::new(), Vec::new(), Vec::new());
    for (s, file) in signal_files.iter().enumerate() {
        let path: PathBuf = file.as_ref().to_path_buf();
        let rec = read_signals(&path)?;
        match &names {
            None => names = Some(rec.names.clone()),
            Some(n) if *n != rec.names => {
                return Err(Error::data(format!("{}: channels {:?} differ from {:?}", path.display(), rec.names, n)));
            }
            _ => {}
        }
        let key = subject_key(&path);
        let subject_labels = labels_by_subject
            .remove(&key)
            .or_else(|| labels_by_subject.remove(&s.to_string()))
            .ok_or_else(|| Error::data(format!("no labels for subject '{}'", key)))?;
        let n_epochs = rec.channels[0].len() / t;
        if subject_labels.len() != n_epochs {
            return Err(Error::data(format!(
                "subject '{}': {} labels for {} complete epochs",
                key,
                subject_labels.len(),
                n_epochs
            )));
        }
        let filtered: Vec<Vec<f64>> = rec
            .channels
            .iter()
            .map(|x| match &filter {
                Some(f) => filter_forward(f, x),
                None => x.clone(),
            })
            .collect();
        for e in 0..n_epochs {
            for ch in &filtered {
                data.extend(ch[e * t..(e + 1) * t].iter().map(|&v| v as f32));
            }
        }
        labels.extend(subject_labels);
        subject_ids.extend(std::iter::repeat_n(s as u32, n_epochs));
    }
    if let Some(extra) = labels_by_subject.keys().next() {
        return Err(Error::data(format!("labels given for unknown subject '{}'", extra)));
    }
    EpochSet::new(data, labels, subject_ids, names.unwrap_or_default(), sample_rate_hz as f32).map_err(Error::from)
}
