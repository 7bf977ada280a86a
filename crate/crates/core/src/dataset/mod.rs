//! Labelled 30-second multichannel epochs, class statistics and the
//! synthetic polysomnography generator.

mod synth;

pub use synth::{generate_synthetic, n2_probe_epoch, ChannelRole, EventSpan, ProbeEpoch, STAGE_TARGETS};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{data_err, Result};
use crate::tensor::Tensor;

pub const N_CLASSES: usize = 5;
pub const EPOCH_SECONDS: f64 = 30.0;

/// AASM sleep stages with their fixed label codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Stage {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl Stage {
    pub const ALL: [Stage; N_CLASSES] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    pub fn from_index(i: usize) -> Option<Stage> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::W => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "REM",
        }
    }

    /// Accepts either the numeric code or the stage name (case-insensitive).
    pub fn parse(s: &str) -> Option<Stage> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return Self::from_index(i);
        }
        Self::ALL.iter().copied().find(|st| st.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("R") && *st == Stage::Rem))
    }
}

/// Expected samples per epoch for a sampling rate.
pub fn samples_per_epoch(sample_rate_hz: f64) -> usize {
    crate::math::round(EPOCH_SECONDS * sample_rate_hz) as usize
}

/// `N_s` epochs of `N_ch × T` samples with labels and subject ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    n_channels: usize,
    samples: usize,
    data: Vec<f32>,
    labels: Vec<u8>,
    subject_ids: Vec<u32>,
    channel_names: Vec<String>,
    sample_rate_hz: f32,
}

impl EpochSet {
    /// Validates every invariant: 30-second epochs, labels below 5, subject
    /// ids covering `0..S` without gaps, at least one channel and one epoch.
    pub fn new(
        data: Vec<f32>,
        labels: Vec<u8>,
        subject_ids: Vec<u32>,
        channel_names: Vec<String>,
        sample_rate_hz: f32,
    ) -> Result<Self> {
        let n = labels.len();
        let n_channels = channel_names.len();
        if n == 0 {
            return Err(data_err!("an epoch set needs at least one epoch"));
        }
        if n_channels == 0 {
            return Err(data_err!("an epoch set needs at least one channel"));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(data_err!("sample rate must be positive, got {}", sample_rate_hz));
        }
        let samples = samples_per_epoch(sample_rate_hz as f64);
        if samples == 0 || data.len() != n * n_channels * samples {
            return Err(data_err!(
                "payload has {} values, expected {} epochs × {} channels × {} samples",
                data.len(),
                n,
                n_channels,
                samples
            ));
        }
        if subject_ids.len() != n {
            return Err(data_err!("{} subject ids for {} epochs", subject_ids.len(), n));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= N_CLASSES) {
            return Err(data_err!("label {} of epoch {} is out of range", l, i));
        }
        let n_subjects = subject_ids.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = alloc::vec![false; n_subjects];
        for &s in &subject_ids {
            seen[s as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(data_err!("subject ids must cover 0..{} but {} is missing", n_subjects, missing));
        }
        Ok(Self { n_channels, samples, data, labels, subject_ids, channel_names, sample_rate_hz })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn samples_per_epoch(&self) -> usize {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f32 {
        self.sample_rate_hz
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.iter().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn subject_ids(&self) -> &[u32] {
        &self.subject_ids
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// Flat payload, `[N_s × N_ch × T]` row-major.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Samples of epoch `i`, `[N_ch × T]` row-major.
    pub fn epoch(&self, i: usize) -> &[f32] {
        let sz = self.n_channels * self.samples;
        &self.data[i * sz..(i + 1) * sz]
    }

    pub fn epoch_tensor(&self, i: usize) -> Tensor {
        let data = self.epoch(i).iter().map(|&v| v as f64).collect();
        Tensor::new(&[self.n_channels, self.samples], data).expect("epoch shape")
    }

    /// Indices of epochs belonging to any of `subjects`.
    pub fn indices_for_subjects(&self, subjects: &[u32]) -> Vec<usize> {
        (0..self.len()).filter(|&i| subjects.contains(&self.subject_ids[i])).collect()
    }

    /// New set restricted to the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<EpochSet> {
        if channels.is_empty() {
            return Err(data_err!("channel selection is empty"));
        }
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.n_channels) {
            return Err(data_err!("channel {} does not exist ({} channels)", bad, self.n_channels));
        }
        let mut data = Vec::with_capacity(self.len() * channels.len() * self.samples);
        for i in 0..self.len() {
            let e = self.epoch(i);
            for &c in channels {
                data.extend_from_slice(&e[c * self.samples..(c + 1) * self.samples]);
            }
        }
        let names = channels.iter().map(|&c| self.channel_names[c].clone()).collect();
        EpochSet::new(data, self.labels.clone(), self.subject_ids.clone(), names, self.sample_rate_hz)
    }
}

/// Per-class counts and proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub counts: [usize; N_CLASSES],
    pub proportions: [f64; N_CLASSES],
}

impl ClassDistribution {
    pub fn from_counts(counts: [usize; N_CLASSES]) -> Self {
        let total: usize = counts.iter().sum();
        let mut proportions = [0.0; N_CLASSES];
        if total > 0 {
            for (p, &c) in proportions.iter_mut().zip(&counts) {
                *p = c as f64 / total as f64;
            }
        }
        Self { counts, proportions }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn class_distribution(set: &EpochSet) -> ClassDistribution {
    let mut counts = [0usize; N_CLASSES];
    for &l in set.labels() {
        counts[l as usize] += 1;
    }
    ClassDistribution::from_counts(counts)
}
