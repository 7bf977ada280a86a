//! Synthetic polysomnography.
//!
//! Every channel carries a role. EEG channels hold the stage-defining
//! rhythms and transients, EOG channels eye movements plus EEG leakage, and
//! EMG channels broadband muscle tone. Channel roles cycle
//! EEG, EOG, EMG, EEG.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{samples_per_epoch, EpochSet, Stage, N_CLASSES};
use crate::math::{exp, sin, sqrt};
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

/// Target class proportions for generated labels (W, N1, N2, N3, REM).
pub const STAGE_TARGETS: [f64; N_CLASSES] = [0.195, 0.142, 0.305, 0.235, 0.124];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    Eeg,
    Eog,
    Emg,
}

impl ChannelRole {
    pub fn of_channel(c: usize) -> ChannelRole {
        match c % 4 {
            1 => ChannelRole::Eog,
            2 => ChannelRole::Emg,
            _ => ChannelRole::Eeg,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            ChannelRole::Eeg => "EEG",
            ChannelRole::Eog => "EOG",
            ChannelRole::Emg => "EMG",
        }
    }
}

fn channel_names(n_ch: usize) -> Vec<String> {
    let mut counts = [0usize; 3];
    (0..n_ch)
        .map(|c| {
            let role = ChannelRole::of_channel(c);
            let slot = role as usize;
            counts[slot] += 1;
            format!("{}{}", role.prefix(), counts[slot])
        })
        .collect()
}

/// Sample interval `[start, end)` of an injected event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSpan {
    pub start: usize,
    pub end: usize,
}

/// A single N2 epoch with one K-complex followed by one spindle.
#[derive(Debug, Clone)]
pub struct ProbeEpoch {
    pub epoch: Tensor,
    pub event: EventSpan,
    pub channel_names: Vec<String>,
}

struct Subject {
    amplitude: f64,
    gains: Vec<f64>,
    offsets: Vec<f64>,
    alpha_hz: f64,
}

impl Subject {
    fn draw(seed: u64, index: usize, n_ch: usize) -> Subject {
        let mut rng = Rng::at(seed, streams::SYNTH, 1 + index as u64);
        Subject {
            amplitude: rng.uniform_in(0.75, 1.25),
            gains: (0..n_ch).map(|_| rng.uniform_in(0.8, 1.2)).collect(),
            offsets: (0..n_ch).map(|_| 0.3 * rng.normal()).collect(),
            alpha_hz: rng.uniform_in(9.0, 11.0),
        }
    }

    fn neutral(n_ch: usize) -> Subject {
        Subject { amplitude: 1.0, gains: vec![1.0; n_ch], offsets: vec![0.0; n_ch], alpha_hz: 10.0 }
    }
}

/// Adds a band-limited rhythm: a few sinusoids with random frequency in
/// `[lo, hi]`, random phase and slow amplitude waxing.
fn add_rhythm(x: &mut [f64], fs: f64, lo: f64, hi: f64, amp: f64, rng: &mut Rng) {
    const PARTS: usize = 3;
    let per = amp * sqrt(2.0 / PARTS as f64);
    for _ in 0..PARTS {
        let f = rng.uniform_in(lo, hi);
        let ph = rng.uniform_in(0.0, 2.0 * PI);
        let fm = rng.uniform_in(0.05, 0.3);
        let pm = rng.uniform_in(0.0, 2.0 * PI);
        let w = 2.0 * PI * f / fs;
        let wm = 2.0 * PI * fm / fs;
        for (n, v) in x.iter_mut().enumerate() {
            let t = n as f64;
            *v += per * (1.0 + 0.3 * sin(wm * t + pm)) * sin(w * t + ph);
        }
    }
}

fn add_noise(x: &mut [f64], amp: f64, rng: &mut Rng) {
    for v in x.iter_mut() {
        *v += amp * rng.normal();
    }
}

/// First-differenced white noise, concentrated at high frequencies.
fn add_muscle(x: &mut [f64], amp: f64, rng: &mut Rng) {
    let mut prev = rng.normal();
    for v in x.iter_mut() {
        let cur = rng.normal();
        *v += amp * (cur - prev) / core::f64::consts::SQRT_2;
        prev = cur;
    }
}

/// 12–14 Hz burst under a Hann envelope starting at sample `at`.
fn add_spindle(x: &mut [f64], fs: f64, at: usize, dur_s: f64, amp: f64, rng: &mut Rng) -> usize {
    let f = rng.uniform_in(12.0, 14.0);
    let len = (dur_s * fs) as usize;
    let ph = rng.uniform_in(0.0, 2.0 * PI);
    for i in 0..len.min(x.len().saturating_sub(at)) {
        let env = 0.5 - 0.5 * crate::math::cos(2.0 * PI * i as f64 / len as f64);
        x[at + i] += amp * env * sin(2.0 * PI * f * i as f64 / fs + ph);
    }
    at + len
}

/// Biphasic K-complex: sharp negative deflection then slower positive wave,
/// spanning about 0.9 s from `at`.
fn add_k_complex(x: &mut [f64], fs: f64, at: usize, amp: f64) -> usize {
    let len = (0.9 * fs) as usize;
    for i in 0..len.min(x.len().saturating_sub(at)) {
        let t = i as f64 / fs;
        let neg = (t - 0.2) / 0.08;
        let pos = (t - 0.5) / 0.14;
        x[at + i] += amp * (-exp(-neg * neg) + 0.6 * exp(-pos * pos));
    }
    at + len
}

/// K-complex followed half a second later by a spindle. Returns the span.
fn add_event_pair(x: &mut [f64], fs: f64, at: usize, amp: f64, rng: &mut Rng) -> EventSpan {
    add_k_complex(x, fs, at, 3.5 * amp);
    let sp = at + (0.5 * fs) as usize;
    let end = add_spindle(x, fs, sp, 1.0, 2.2 * amp, rng);
    EventSpan { start: at, end: end.min(x.len()) }
}

/// Theta background shared by N1, N2 and REM. Sigma and delta activity of
/// varying strength keeps whole-epoch band power from telling the two apart;
/// only the transients of N2 do.
fn light_sleep_background(x: &mut [f64], fs: f64, a: f64, rng: &mut Rng) {
    add_rhythm(x, fs, 4.0, 7.0, rng.uniform_in(0.85, 1.2) * a, rng);
    add_rhythm(x, fs, 11.0, 15.0, rng.uniform_in(0.1, 0.45) * a, rng);
    add_rhythm(x, fs, 0.8, 2.0, rng.uniform_in(0.1, 0.6) * a, rng);
    add_noise(x, 0.3 * a, rng);
}

fn eeg(stage: Stage, x: &mut [f64], fs: f64, s: &Subject, rng: &mut Rng) {
    let a = s.amplitude;
    match stage {
        Stage::W => {
            add_rhythm(x, fs, s.alpha_hz - 1.0, s.alpha_hz + 1.0, 1.4 * a, rng);
            add_noise(x, 0.6 * a, rng);
        }
        Stage::N1 | Stage::N2 => {
            light_sleep_background(x, fs, a, rng);
            if stage == Stage::N2 {
                let n = x.len();
                let at = rng.below((n - (2.0 * fs) as usize).max(1));
                add_event_pair(x, fs, at, a, rng);
                if rng.uniform() < 0.3 {
                    let at = rng.below((n - (1.5 * fs) as usize).max(1));
                    add_spindle(x, fs, at, rng.uniform_in(0.6, 1.2), 1.5 * a, rng);
                }
            }
        }
        Stage::N3 => {
            add_rhythm(x, fs, 0.5, 2.0, 3.5 * a, rng);
            add_rhythm(x, fs, 4.0, 7.0, 0.3 * a, rng);
            add_noise(x, 0.2 * a, rng);
        }
        // REM EEG is indistinguishable from N1 on its own; eye movements
        // and muscle atonia are what set it apart
        Stage::Rem => light_sleep_background(x, fs, a, rng),
    }
}

fn eog(stage: Stage, x: &mut [f64], fs: f64, leak: &[f64], a: f64, rng: &mut Rng) {
    for (v, l) in x.iter_mut().zip(leak) {
        *v += 0.3 * l;
    }
    add_noise(x, 0.2 * a, rng);
    let n = x.len();
    match stage {
        Stage::W => {
            // blinks
            for _ in 0..2 + rng.below(4) {
                let c = rng.below(n) as f64;
                let w = 0.15 * fs;
                for (i, v) in x.iter_mut().enumerate() {
                    let z = (i as f64 - c) / w;
                    *v += 2.5 * a * exp(-z * z);
                }
            }
        }
        // slow rolling movements, common at sleep onset and rarer later
        Stage::N1 | Stage::N2 => {
            if rng.uniform() < if stage == Stage::N1 { 0.5 } else { 0.2 } {
                add_rhythm(x, fs, 0.2, 0.5, 1.5 * a, rng);
            }
        }
        Stage::Rem => {
            // rapid saccades: smoothed steps of alternating sign
            let mut level = 0.0;
            let mut target = 0.0;
            let mut next = rng.below(((fs * 1.5) as usize).max(1));
            for (i, v) in x.iter_mut().enumerate() {
                if i == next {
                    target = if target > 0.0 { -1.0 } else { 1.0 } * rng.uniform_in(1.5, 2.5) * a;
                    next = i + (fs * rng.uniform_in(0.3, 2.0)) as usize;
                }
                level += (target - level) * 0.25;
                *v += level;
            }
        }
        Stage::N3 => {}
    }
}

fn emg(stage: Stage, x: &mut [f64], a: f64, rng: &mut Rng) {
    let tone = match stage {
        Stage::W => 2.0,
        Stage::N1 => 1.0 * rng.uniform_in(0.8, 1.2),
        Stage::N2 => 0.85 * rng.uniform_in(0.8, 1.2),
        Stage::N3 => 0.6,
        Stage::Rem => 0.15,
    };
    add_muscle(x, tone * a, rng);
}

fn render_epoch(stage: Stage, n_ch: usize, t: usize, fs: f64, subject: &Subject, rng: &mut Rng, out: &mut Vec<f32>) {
    let mut lead = vec![0.0; t];
    eeg(stage, &mut lead, fs, subject, rng);
    for c in 0..n_ch {
        let mut x = vec![0.0; t];
        match ChannelRole::of_channel(c) {
            ChannelRole::Eeg if c == 0 => x.copy_from_slice(&lead),
            ChannelRole::Eeg => {
                // further EEG derivations share most of the lead signal
                eeg(stage, &mut x, fs, subject, rng);
                for (v, l) in x.iter_mut().zip(&lead) {
                    *v = 0.6 * l + 0.4 * *v;
                }
            }
            ChannelRole::Eog => eog(stage, &mut x, fs, &lead, subject.amplitude, rng),
            ChannelRole::Emg => emg(stage, &mut x, subject.amplitude, rng),
        }
        let (g, o) = (subject.gains[c], subject.offsets[c]);
        out.extend(x.iter().map(|&v| (g * v + o) as f32));
    }
}

/// Largest-remainder allocation of `n` labels to the target proportions.
fn label_quota(n: usize) -> [usize; N_CLASSES] {
    let mut counts = [0usize; N_CLASSES];
    let mut rem = [0.0f64; N_CLASSES];
    // the published proportions are rounded and sum to 100.1 %
    let total: f64 = STAGE_TARGETS.iter().sum();
    for k in 0..N_CLASSES {
        let q = STAGE_TARGETS[k] / total * n as f64;
        counts[k] = q as usize;
        rem[k] = q - counts[k] as f64;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..N_CLASSES).collect();
    order.sort_by(|&a, &b| rem[b].partial_cmp(&rem[a]).unwrap().then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Deterministic synthetic recording set.
///
/// Counts of zero are clamped to one. Labels follow [`STAGE_TARGETS`]
/// over the whole set and are shuffled before being split into subjects.
pub fn generate_synthetic(seed: u64, n_subjects: usize, epochs_per_subject: usize, n_ch: usize, sample_rate_hz: f64) -> EpochSet {
    let n_subjects = n_subjects.max(1);
    let per = epochs_per_subject.max(1);
    let n_ch = n_ch.max(1);
    let n = n_subjects * per;
    let t = samples_per_epoch(sample_rate_hz);

    let mut labels: Vec<u8> = Vec::with_capacity(n);
    for (k, c) in label_quota(n).iter().enumerate() {
        labels.extend(core::iter::repeat(k as u8).take(*c));
    }
    Rng::new(seed, streams::SYNTH).shuffle(&mut labels);

    let mut data = Vec::with_capacity(n * n_ch * t);
    let mut subject_ids = Vec::with_capacity(n);
    for s in 0..n_subjects {
        let subject = Subject::draw(seed, s, n_ch);
        for e in 0..per {
            let i = s * per + e;
            let mut rng = Rng::at(seed, streams::SYNTH, ((s as u64 + 1) << 24) + e as u64);
            let stage = Stage::from_index(labels[i] as usize).unwrap();
            render_epoch(stage, n_ch, t, sample_rate_hz, &subject, &mut rng, &mut data);
            subject_ids.push(s as u32);
        }
    }
    EpochSet::new(data, labels, subject_ids, channel_names(n_ch), sample_rate_hz as f32)
        .expect("generator output satisfies epoch set invariants")
}

/// An N2 epoch containing exactly one K-complex + spindle pair on the EEG
/// channels and no other transients.
pub fn n2_probe_epoch(seed: u64, n_ch: usize, sample_rate_hz: f64) -> ProbeEpoch {
    let n_ch = n_ch.max(1);
    let fs = sample_rate_hz;
    let t = samples_per_epoch(fs);
    let subject = Subject::neutral(n_ch);
    let mut rng = Rng::at(seed, streams::SYNTH, u64::MAX >> 8);
    let mut lead = vec![0.0; t];
    light_sleep_background(&mut lead, fs, 1.0, &mut rng);
    let lo = (5.0 * fs) as usize;
    let hi = t - (7.0 * fs) as usize;
    let at = lo + rng.below((hi - lo).max(1));
    let event = add_event_pair(&mut lead, fs, at, 1.0, &mut rng);

    let mut data = Vec::with_capacity(n_ch * t);
    for c in 0..n_ch {
        let mut x = vec![0.0; t];
        match ChannelRole::of_channel(c) {
            ChannelRole::Eeg => {
                add_noise(&mut x, 0.1, &mut rng);
                for (v, l) in x.iter_mut().zip(&lead) {
                    *v += l;
                }
            }
            ChannelRole::Eog => eog(Stage::N2, &mut x, fs, &lead, 1.0, &mut rng),
            ChannelRole::Emg => emg(Stage::N2, &mut x, 1.0, &mut rng),
        }
        data.extend(x.iter().map(|&v| (subject.gains[c] * v + subject.offsets[c]) as f32 as f64));
    }
    ProbeEpoch {
        epoch: Tensor::new(&[n_ch, t], data).expect("probe shape"),
        event,
        channel_names: channel_names(n_ch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quota_matches_targets_and_total() {
        for n in [1, 6, 97, 1000] {
            let q = label_quota(n);
            assert_eq!(q.iter().sum::<usize>(), n);
        }
        assert_eq!(label_quota(1000), [195, 142, 304, 235, 124]);
    }

    #[test]
    fn channel_naming() {
        assert_eq!(channel_names(5), ["EEG1", "EOG1", "EMG1", "EEG2", "EEG3"]);
    }
}
