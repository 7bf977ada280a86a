//! Butterworth low-pass design (bilinear transform with prewarping, realised
//! as cascaded second-order sections) and linear-interpolation resampling.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{config_err, data_err, Result};
use crate::math::{cos, sin, sqrt, tan};

/// One biquad, `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Section {
    /// Both poles strictly inside the unit circle (Jury conditions).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    fn response(&self, omega: f64) -> (f64, f64) {
        let (c1, s1) = (cos(omega), -sin(omega));
        let (c2, s2) = (cos(2.0 * omega), -sin(2.0 * omega));
        let num = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub sections: Vec<Section>,
}

/// Digital Butterworth low-pass of even `order` (2, 4, 6 or 8).
///
/// The analog prototype is prewarped so the digital magnitude at
/// `cutoff_hz` is exactly `1/√2`.
pub fn design_butterworth_lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<FilterSpec> {
    if !matches!(order, 2 | 4 | 6 | 8) {
        return Err(config_err!("filter order must be 2, 4, 6 or 8, got {}", order));
    }
    if !(sample_rate_hz > 0.0) {
        return Err(config_err!("sample rate must be positive, got {}", sample_rate_hz));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(config_err!(
            "cutoff {} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            cutoff_hz,
            sample_rate_hz / 2.0
        ));
    }
    let kk = tan(PI * cutoff_hz / sample_rate_hz);
    let k2 = kk * kk;
    let sections = (0..order / 2)
        .map(|i| {
            // s² + a·s + 1 for the i-th conjugate pole pair of the normalised prototype
            let a = 2.0 * sin(PI * (2 * i + 1) as f64 / (2 * order) as f64);
            let a0 = 1.0 + a * kk + k2;
            Section {
                b0: k2 / a0,
                b1: 2.0 * k2 / a0,
                b2: k2 / a0,
                a1: 2.0 * (k2 - 1.0) / a0,
                a2: (1.0 - a * kk + k2) / a0,
            }
        })
        .collect();
    Ok(FilterSpec { order, cutoff_hz, sample_rate_hz, sections })
}

impl FilterSpec {
    /// `|H(e^{jω})|` at `freq_hz`, evaluated from the section coefficients.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let (mut re, mut im) = (1.0, 0.0);
        for s in &self.sections {
            let (r, i) = s.response(omega);
            (re, im) = (re * r - im * i, re * i + im * r);
        }
        sqrt(re * re + im * im)
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Section::is_stable)
    }
}

/// Causal direct-form-II-transposed cascade from zero initial state.
pub fn filter_forward(spec: &FilterSpec, signal: &[f64]) -> Vec<f64> {
    let mut out = signal.to_vec();
    for s in &spec.sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in out.iter_mut() {
            let x = *v;
            let y = s.b0 * x + z1;
            z1 = s.b1 * x - s.a1 * y + z2;
            z2 = s.b2 * x - s.a2 * y;
            *v = y;
        }
    }
    out
}

/// Linear interpolation onto a uniform `to_hz` grid covering the same
/// duration as the input (first to last sample).
pub fn resample_to(signal: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>> {
    if !(from_hz > 0.0 && to_hz > 0.0) {
        return Err(config_err!("sample rates must be positive ({} → {})", from_hz, to_hz));
    }
    if signal.is_empty() {
        return Err(data_err!("cannot resample an empty signal"));
    }
    if from_hz == to_hz {
        return Ok(signal.to_vec());
    }
    let n = signal.len();
    let m = crate::math::round((n - 1) as f64 * to_hz / from_hz) as usize + 1;
    let ratio = from_hz / to_hz;
    Ok((0..m)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = (crate::math::floor(pos) as usize).min(n - 1);
            let frac = pos - lo as f64;
            if lo + 1 < n {
                signal[lo] + frac * (signal[lo + 1] - signal[lo])
            } else {
                signal[n - 1]
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_bad_designs() {
        assert!(design_butterworth_lowpass(4, 50.0, 100.0).is_err());
        assert!(design_butterworth_lowpass(3, 10.0, 100.0).is_err());
        assert!(design_butterworth_lowpass(4, 0.0, 100.0).is_err());
    }

    #[test]
    fn resample_examples() {
        assert_eq!(resample_to(&[0.0, 1.0], 1.0, 2.0).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(resample_to(&[3.0, 1.0, 2.0], 5.0, 5.0).unwrap(), vec![3.0, 1.0, 2.0]);
        assert!(matches!(resample_to(&[], 1.0, 2.0), Err(crate::Error::Data(_))));
        assert!(matches!(resample_to(&[1.0], 0.0, 2.0), Err(crate::Error::Config(_))));
    }
}
