//! Multi-scale module: per-scale input pooling, temporal convolution and
//! complementary max pooling, merged and integrated by a second convolution.

use alloc::vec::Vec;

use crate::error::{config_err, data_err, Result};
use crate::tensor::{PoolMode, Tape, Var};

/// Input pooling of scale I..IV.
pub const SCALE_POOLING: [usize; 4] = [1, 2, 4, 8];
pub const SCALE_NAMES: [&str; 4] = ["I", "II", "III", "IV"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// One filter bank shared by all channels.
    Unimodal,
    /// A separate bank per channel.
    Multimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleEntry {
    /// Index into the scale ladder (0 = scale I).
    pub scale: usize,
    pub p_in: usize,
    pub p_comp: usize,
    /// Filters of the first convolution at this scale (per channel when multimodal).
    pub filters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalePlan {
    pub scales: Vec<ScaleEntry>,
    pub p_tot: usize,
    pub kernel_msm1: usize,
    pub kernel_msm2: usize,
    /// Nominal filters per scale with all four scales present.
    pub filters_per_scale: usize,
    pub filters_msm2: usize,
    pub mode: FilterMode,
}

impl ScalePlan {
    /// Plan over the given contiguous scale indices (0 = scale I). The total
    /// filter count `4 · filters_per_scale` is kept; when it does not split
    /// evenly the lower scales receive the extra filters.
    pub fn with_scales(scales: &[usize], filters_per_scale: usize, filters_msm2: usize, mode: FilterMode) -> Result<ScalePlan> {
        if scales.is_empty() || scales.len() > 4 {
            return Err(config_err!("a scale plan needs between 1 and 4 scales, got {}", scales.len()));
        }
        if scales.iter().any(|&s| s >= 4) {
            return Err(config_err!("scale indices must be below 4, got {:?}", scales));
        }
        if scales.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(config_err!("scales {:?} are not a contiguous ascending run", scales));
        }
        if filters_per_scale == 0 || filters_msm2 == 0 {
            return Err(config_err!("filter counts must be positive"));
        }
        let p_tot = SCALE_POOLING[3];
        let total = 4 * filters_per_scale;
        let n = scales.len();
        let entries = scales
            .iter()
            .enumerate()
            .map(|(i, &s)| ScaleEntry {
                scale: s,
                p_in: SCALE_POOLING[s],
                p_comp: p_tot / SCALE_POOLING[s],
                filters: total / n + usize::from(i < total % n),
            })
            .collect();
        Ok(ScalePlan { scales: entries, p_tot, kernel_msm1: 15, kernel_msm2: 5, filters_per_scale, filters_msm2, mode })
    }

    /// Filters entering the integration convolution (per channel when multimodal).
    pub fn merged_filters(&self) -> usize {
        self.scales.iter().map(|s| s.filters).sum()
    }

    pub fn scale_indices(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.scale).collect()
    }
}

/// The `n_scales` lowest scales with 8 filters per scale and 16 integration
/// filters, shared across channels.
pub fn default_scale_plan(n_scales: usize) -> Result<ScalePlan> {
    let scales: Vec<usize> = (0..n_scales).collect();
    ScalePlan::with_scales(&scales, 8, 16, FilterMode::Unimodal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSummary {
    pub receptive_field_ms: f64,
    pub freq_range_hz: [f64; 2],
    pub freq_spacing_hz: f64,
}

pub fn scale_summary(entry: &ScaleEntry, kernel: usize, sample_rate_hz: f64) -> ScaleSummary {
    let span = (kernel * entry.p_in) as f64;
    let spacing = sample_rate_hz / span;
    ScaleSummary {
        receptive_field_ms: 1000.0 * span / sample_rate_hz,
        freq_range_hz: [0.0, (kernel / 2) as f64 * spacing],
        freq_spacing_hz: spacing,
    }
}

/// Parameter handles of one MSM. Unimodal weights are `[F, 1, k]`,
/// multimodal weights `[n_ch, F, 1, k]` with biases `[n_ch, F]`.
#[derive(Debug, Clone)]
pub struct MsmVars {
    pub scales: Vec<(Var, Var)>,
    pub integrate: (Var, Var),
}

/// Shapes of the MSM parameters, in the order `scale weights/biases..., integration weight/bias`.
pub fn msm_param_shapes(plan: &ScalePlan, n_ch: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let k1 = plan.kernel_msm1;
    let merged = plan.merged_filters();
    let bank = |c_out: usize, c_in: usize, k: usize| match plan.mode {
        FilterMode::Unimodal => (alloc::vec![c_out, c_in, k], alloc::vec![c_out]),
        FilterMode::Multimodal => (alloc::vec![n_ch, c_out, c_in, k], alloc::vec![n_ch, c_out]),
    };
    let mut shapes: Vec<_> = plan.scales.iter().map(|s| bank(s.filters, 1, k1)).collect();
    shapes.push(bank(plan.filters_msm2, merged, plan.kernel_msm2));
    shapes
}

/// `x [n_ch, T]` to `[n_ch, filters_msm2, T / p_tot]`.
pub fn msm_forward(tape: &mut Tape, plan: &ScalePlan, x: Var, params: &MsmVars) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 2 {
        return Err(data_err!("MSM input must be [channels, samples], got {:?}", s));
    }
    let (n_ch, t) = (s[0], s[1]);
    if t % plan.p_tot != 0 {
        return Err(data_err!("{} samples are not divisible by the total pooling {}", t, plan.p_tot));
    }
    if params.scales.len() != plan.scales.len() {
        return Err(config_err!("{} scale parameter sets for {} scales", params.scales.len(), plan.scales.len()));
    }
    let x = tape.reshape(x, &[n_ch, 1, t])?;
    let mut outs = Vec::with_capacity(plan.scales.len());
    for (entry, &(w, b)) in plan.scales.iter().zip(&params.scales) {
        let pooled = tape.pool(x, entry.p_in, PoolMode::Average)?;
        let conv = tape.conv1d(pooled, w, b)?;
        let comp = tape.pool(conv, entry.p_comp, PoolMode::Max)?;
        outs.push(tape.relu(comp));
    }
    let merged = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    let integ = tape.conv1d(merged, params.integrate.0, params.integrate.1)?;
    Ok(tape.relu(integ))
}
