//! Low-pass filtering and resampling of a stored epoch set.

use msacnn_core::dataset::{samples_per_epoch, EpochSet};
use msacnn_core::sigproc::{design_butterworth_lowpass, filter_forward, resample_to};

use crate::error::{Error, Result};

/// Filters every channel of every subject as one continuous recording
/// (epochs of a subject in set order), then optionally resamples to
/// `target_hz`.
pub fn preprocess(set: &EpochSet, cutoff_hz: f64, order: usize, target_hz: Option<f64>) -> Result<EpochSet> {
    let fs = set.sample_rate_hz() as f64;
    let out_fs = target_hz.unwrap_or(fs);
    if cutoff_hz >= out_fs / 2.0 {
        return Err(Error::config(format!("cutoff {} Hz is not below the output Nyquist frequency {} Hz", cutoff_hz, out_fs / 2.0)));
    }
    let spec = design_butterworth_lowpass(order, cutoff_hz, fs)?;
    let (t, n_ch) = (set.samples_per_epoch(), set.n_channels());
    let t_out = samples_per_epoch(out_fs);
    let mut epochs_out: Vec<Vec<f32>> = vec![Vec::new(); set.len()];
    for s in 0..set.n_subjects() as u32 {
        let idx: Vec<usize> = (0..set.len()).filter(|&i| set.subject_ids()[i] == s).collect();
        for c in 0..n_ch {
            let mut x: Vec<f64> = Vec::with_capacity(idx.len() * t);
            for &i in &idx {
                x.extend(set.epoch(i)[c * t..(c + 1) * t].iter().map(|&v| v as f64));
            }
            let mut y = filter_forward(&spec, &x);
            if out_fs != fs {
                // hold the last value one step so the grid covers every epoch
                y.push(*y.last().unwrap());
                y = resample_to(&y, fs, out_fs)?;
            }
            for (k, &i) in idx.iter().enumerate() {
                epochs_out[i].extend(y[k * t_out..(k + 1) * t_out].iter().map(|&v| v as f32));
            }
        }
    }
    let data = epochs_out.concat();
    Ok(EpochSet::new(
        data,
        set.labels().to_vec(),
        set.subject_ids().to_vec(),
        set.channel_names().to_vec(),
        out_fs as f32,
    )?)
}
