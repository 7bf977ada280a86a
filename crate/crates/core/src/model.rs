//! The assembled classifier: channel scaling, multi-scale module, spatial
//! convolution, temporal context module, time average and softmax head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::N_CLASSES;
use crate::error::{config_err, data_err, usage_err, Result};
use crate::msm::{msm_forward, msm_param_shapes, FilterMode, MsmVars, ScalePlan};
use crate::rng::{streams, Rng};
use crate::tcm::{tcm_forward, TcmConfig, TcmVars};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSize {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Univariate,
    Multivariate,
    Multimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Swap small and large.
    Rescaled,
    Multimodal,
    Univariate,
    /// Single-scale module at the given scale index (0 = scale I).
    NoMsm(usize),
    NoTcm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VariantFlags {
    pub no_msm: Option<usize>,
    pub no_tcm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub size: ModelSize,
    pub mode: InputMode,
    pub n_ch: usize,
    pub n_classes: usize,
    pub scale_plan: ScalePlan,
    pub spatial_filters: usize,
    /// 1 for the channel-collapsing convolution, 5 for the univariate temporal one.
    pub spatial_kernel: usize,
    pub tcm: TcmConfig,
    pub flags: VariantFlags,
}

impl ModelConfig {
    /// Reference configuration with all four scales.
    pub fn new(size: ModelSize, mode: InputMode, n_ch: usize) -> Result<Self> {
        Self::with_scales(size, mode, n_ch, &[0, 1, 2, 3])
    }

    /// Configuration over a contiguous run of scale indices.
    pub fn with_scales(size: ModelSize, mode: InputMode, n_ch: usize, scales: &[usize]) -> Result<Self> {
        if n_ch == 0 {
            return Err(config_err!("at least one channel is required"));
        }
        if mode == InputMode::Univariate && n_ch != 1 {
            return Err(config_err!("univariate mode takes exactly one channel, got {}", n_ch));
        }
        let (fmode, per_scale, msm2_uni, msm2_multi) = match (mode, size) {
            (InputMode::Multimodal, ModelSize::Small) => (FilterMode::Multimodal, 4, 0, 8),
            (InputMode::Multimodal, ModelSize::Large) => (FilterMode::Multimodal, 4, 0, 16),
            (_, ModelSize::Small) => (FilterMode::Unimodal, 8, 16, 0),
            (_, ModelSize::Large) => (FilterMode::Unimodal, 8, 32, 0),
        };
        let plan = ScalePlan::with_scales(scales, per_scale, msm2_uni.max(msm2_multi), fmode)?;
        let (spatial_filters, d_emb, heads, layers) = match size {
            ModelSize::Small => (32, 16, 2, 1),
            ModelSize::Large => (64, 32, 4, 2),
        };
        let cfg = ModelConfig {
            size,
            mode,
            n_ch,
            n_classes: N_CLASSES,
            scale_plan: plan,
            spatial_filters,
            spatial_kernel: if mode == InputMode::Univariate { 5 } else { 1 },
            tcm: TcmConfig::new(spatial_filters, d_emb, heads, layers, 0.1)?,
            flags: VariantFlags::default(),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes != N_CLASSES {
            return Err(config_err!("the classifier has {} classes, not {}", N_CLASSES, self.n_classes));
        }
        if self.mode == InputMode::Univariate && self.n_ch != 1 {
            return Err(config_err!("univariate mode takes exactly one channel"));
        }
        let expect_mode = if self.mode == InputMode::Multimodal { FilterMode::Multimodal } else { FilterMode::Unimodal };
        if self.scale_plan.mode != expect_mode {
            return Err(config_err!("scale plan filter mode does not match the input mode"));
        }
        if self.tcm.d_in != self.spatial_filters {
            return Err(config_err!("TCM input width {} differs from {} spatial filters", self.tcm.d_in, self.spatial_filters));
        }
        self.tcm.validate()
    }

    /// Width of the time-averaged feature vector entering the head.
    pub fn head_input(&self) -> usize {
        if self.flags.no_tcm {
            self.spatial_filters
        } else {
            self.tcm.d_emb
        }
    }

    /// Features per channel leaving the multi-scale module.
    pub fn msm_features(&self) -> usize {
        self.scale_plan.filters_msm2
    }

    pub fn tokens(&self, samples: usize) -> usize {
        samples / self.scale_plan.p_tot
    }
}

/// Transforms a configuration into one of the studied variants.
pub fn apply_variant(config: &ModelConfig, variant: Variant) -> Result<ModelConfig> {
    let rebuild = |size, mode, n_ch| -> Result<ModelConfig> {
        let mut c = ModelConfig::with_scales(size, mode, n_ch, &config.scale_plan.scale_indices())?;
        c.flags = config.flags;
        c.tcm.dropout = config.tcm.dropout;
        Ok(c)
    };
    match variant {
        Variant::Rescaled => {
            let size = if config.size == ModelSize::Small { ModelSize::Large } else { ModelSize::Small };
            rebuild(size, config.mode, config.n_ch)
        }
        Variant::Multimodal => match config.mode {
            InputMode::Multivariate => rebuild(config.size, InputMode::Multimodal, config.n_ch),
            m => Err(config_err!("the multimodal variant needs a multivariate model, not {:?}", m)),
        },
        Variant::Univariate => match config.mode {
            InputMode::Multivariate => rebuild(config.size, InputMode::Univariate, 1),
            m => Err(config_err!("the univariate variant needs a multivariate model, not {:?}", m)),
        },
        Variant::NoMsm(scale) => {
            if config.flags.no_msm.is_some() || config.scale_plan.scales.len() != 4 {
                return Err(config_err!("the single-scale variant needs the full four-scale module"));
            }
            let mut c = ModelConfig::with_scales(config.size, config.mode, config.n_ch, &[scale])?;
            c.flags = VariantFlags { no_msm: Some(scale), ..config.flags };
            c.tcm.dropout = config.tcm.dropout;
            Ok(c)
        }
        Variant::NoTcm => {
            if config.flags.no_tcm {
                return Err(config_err!("the temporal context module is already removed"));
            }
            let mut c = config.clone();
            c.flags.no_tcm = true;
            Ok(c)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Channel scaling, multi-scale module and spatial convolution.
    Backbone,
    /// Temporal context module and output layer.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±√(1/fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub init: Init,
}

fn conv_fan_in(shape: &[usize]) -> usize {
    shape[shape.len() - 2] * shape[shape.len() - 1]
}

/// Every parameter of a configuration in build order.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let spec = |name: String, shape: Vec<usize>, group, init| ParamSpec { name, shape, group, init };
    let mut out = Vec::new();
    if config.mode != InputMode::Univariate {
        out.push(spec("input.gain".into(), vec![config.n_ch], ParamGroup::Backbone, Init::Ones));
        out.push(spec("input.offset".into(), vec![config.n_ch], ParamGroup::Backbone, Init::Zeros));
    }
    let shapes = msm_param_shapes(&config.scale_plan, config.n_ch);
    let n_scales = config.scale_plan.scales.len();
    for (i, (w, b)) in shapes.into_iter().enumerate() {
        let stem = if i < n_scales {
            format!("msm.scale{}", crate::msm::SCALE_NAMES[config.scale_plan.scales[i].scale])
        } else {
            "msm.integrate".into()
        };
        let fan = conv_fan_in(&w);
        out.push(spec(format!("{}.weight", stem), w, ParamGroup::Backbone, Init::FanIn(fan)));
        out.push(spec(format!("{}.bias", stem), b, ParamGroup::Backbone, Init::Zeros));
    }
    let c_in = if config.mode == InputMode::Univariate {
        config.msm_features()
    } else {
        config.n_ch * config.msm_features()
    };
    let sw = vec![config.spatial_filters, c_in, config.spatial_kernel];
    out.push(spec("spatial.weight".into(), sw, ParamGroup::Backbone, Init::FanIn(c_in * config.spatial_kernel)));
    out.push(spec("spatial.bias".into(), vec![config.spatial_filters], ParamGroup::Backbone, Init::Zeros));
    if !config.flags.no_tcm {
        for (name, shape) in config.tcm.param_shapes() {
            let init = if name.ends_with(".gain") {
                Init::Ones
            } else if name.ends_with(".weight") {
                Init::FanIn(shape[0])
            } else {
                Init::Zeros
            };
            out.push(spec(name, shape, ParamGroup::Head, init));
        }
    }
    let d = config.head_input();
    out.push(spec("head.weight".into(), vec![d, config.n_classes], ParamGroup::Head, Init::FanIn(d)));
    out.push(spec("head.bias".into(), vec![config.n_classes], ParamGroup::Head, Init::Zeros));
    out
}

/// Closed-form layerwise parameter total.
pub fn param_count(config: &ModelConfig) -> usize {
    let plan = &config.scale_plan;
    let banks = if plan.mode == FilterMode::Multimodal { config.n_ch } else { 1 };
    let merged = plan.merged_filters();
    let f2 = plan.filters_msm2;
    let scaling = if config.mode == InputMode::Univariate { 0 } else { 2 * config.n_ch };
    let msm1 = banks * (merged * plan.kernel_msm1 + merged);
    let msm2 = banks * (merged * f2 * plan.kernel_msm2 + f2);
    let c_in = if config.mode == InputMode::Univariate { f2 } else { config.n_ch * f2 };
    let spatial = config.spatial_filters * c_in * config.spatial_kernel + config.spatial_filters;
    let tcm = if config.flags.no_tcm {
        0
    } else {
        let (d, h) = (config.tcm.d_emb, config.tcm.ff_hidden());
        let layer = (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) + (h * d + d) + 2 * d;
        config.tcm.d_in * d + d + config.tcm.layers * layer
    };
    let head = config.head_input() * config.n_classes + config.n_classes;
    scaling + msm1 + msm2 + spatial + tcm + head
}

/// Multiply-accumulate operations of one forward pass over `samples` samples.
pub fn flop_estimate(config: &ModelConfig, samples: usize) -> u64 {
    let plan = &config.scale_plan;
    let n_ch = config.n_ch as u64;
    let t_tok = (samples / plan.p_tot) as u64;
    let mut macs = if config.mode == InputMode::Univariate { 0 } else { n_ch * samples as u64 };
    for s in &plan.scales {
        macs += n_ch * (s.filters * plan.kernel_msm1) as u64 * (samples / s.p_in) as u64;
    }
    macs += n_ch * (plan.filters_msm2 * plan.merged_filters() * plan.kernel_msm2) as u64 * t_tok;
    let c_in = if config.mode == InputMode::Univariate { plan.filters_msm2 } else { config.n_ch * plan.filters_msm2 };
    macs += (config.spatial_filters * c_in * config.spatial_kernel) as u64 * t_tok;
    if !config.flags.no_tcm {
        let c = &config.tcm;
        let (d, h) = (c.d_emb as u64, c.ff_hidden() as u64);
        macs += t_tok * c.d_in as u64 * d;
        let attention = 2 * c.heads as u64 * t_tok * t_tok * c.d_k() as u64;
        let dense = t_tok * (d * 3 * d + d * d + 2 * d * h);
        macs += c.layers as u64 * (attention + dense);
    }
    macs + (config.head_input() * config.n_classes) as u64
}

/// Named parameter tensors of a built model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count over all tensors.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }
}

/// Handles and outputs of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Graph {
    pub params: Vec<Var>,
    pub input: Var,
    /// `[1, n_classes]`.
    pub logits: Var,
    pub probs: Var,
    /// Attention nodes, first layer first. Empty without a TCM.
    pub attention: Vec<Var>,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsaCnnModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Initialises a model deterministically from `seed`.
pub fn build(config: &ModelConfig, seed: u64) -> Result<MsaCnnModel> {
    config.validate()?;
    let specs = param_specs(config);
    let mut rng = Rng::new(seed, streams::INIT);
    let values = specs
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::FanIn(f) => {
                    let a = crate::math::sqrt(1.0 / f as f64);
                    (0..n).map(|_| rng.uniform_in(-a, a)).collect()
                }
            };
            Tensor::new(&s.shape, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MsaCnnModel { config: config.clone(), params: ParamStore { specs, values } })
}

/// Records the forward graph for `x [n_ch, T]` using parameter handles laid
/// out in [`param_specs`] order.
pub fn forward_graph(config: &ModelConfig, tape: &mut Tape, params: &[Var], x: Var, rng: &mut Rng, train: bool) -> Result<Graph> {
    let specs_len = param_specs(config).len();
    if params.len() != specs_len {
        return Err(usage_err!("{} parameter handles for {} parameters", params.len(), specs_len));
    }
    let s = tape.shape(x).to_vec();
    if s.len() != 2 || s[0] != config.n_ch {
        return Err(data_err!("expected an epoch of {} channels, got shape {:?}", config.n_ch, s));
    }
    let mut next = 0;
    let mut take = |n: usize| {
        let r = &params[next..next + n];
        next += n;
        r
    };
    let mut h = x;
    if config.mode != InputMode::Univariate {
        let p = take(2);
        h = tape.scale_shift(h, p[0], p[1])?;
    }
    let n_scales = config.scale_plan.scales.len();
    let p = take(2 * n_scales + 2);
    let msm = MsmVars {
        scales: p[..2 * n_scales].chunks(2).map(|c| (c[0], c[1])).collect(),
        integrate: (p[2 * n_scales], p[2 * n_scales + 1]),
    };
    let m = msm_forward(tape, &config.scale_plan, h, &msm)?;
    let ms = tape.shape(m).to_vec();
    let tokens = ms[2];
    let flat = tape.reshape(m, &[ms[0] * ms[1], tokens])?;
    let p = take(2);
    let sp = tape.conv1d(flat, p[0], p[1])?;
    let sp = tape.relu(sp);
    let mut feats = tape.transpose(sp)?;
    let mut attention = Vec::new();
    if !config.flags.no_tcm {
        let n_tcm = 2 + 12 * config.tcm.layers;
        let tv = TcmVars::from_slice(take(n_tcm))?;
        let (out, atts) = tcm_forward(tape, feats, &tv, &config.tcm, rng, train)?;
        feats = out;
        attention = atts;
    }
    let pooled = tape.mean_rows(feats)?;
    let width = tape.shape(pooled)[0];
    let pooled = tape.reshape(pooled, &[1, width])?;
    let p = take(2);
    let logits = tape.dense(pooled, p[0], p[1])?;
    let probs = tape.softmax_rows(logits)?;
    Ok(Graph { params: params.to_vec(), input: x, logits, probs, attention, tokens })
}

impl MsaCnnModel {
    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    /// Places parameters and the epoch on `tape` and records the forward pass.
    pub fn graph(&self, tape: &mut Tape, epoch: &Tensor, rng: &mut Rng, train: bool) -> Result<Graph> {
        let params: Vec<Var> = self.params.values.iter().map(|v| tape.param(v.clone())).collect();
        let x = tape.constant(epoch.clone());
        forward_graph(&self.config, tape, &params, x, rng, train)
    }

    /// Class probabilities. Evaluation mode unless `train` is set, in which
    /// case `rng` drives dropout.
    pub fn forward_with(&self, epoch: &Tensor, rng: &mut Rng, train: bool) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let g = self.graph(&mut tape, epoch, rng, train)?;
        Ok(tape.value(g.probs).data().to_vec())
    }

    /// Evaluation-mode class probabilities.
    pub fn forward(&self, epoch: &Tensor) -> Result<Vec<f64>> {
        self.forward_with(epoch, &mut Rng::new(0, streams::DROPOUT), false)
    }

    /// Most probable class, lowest index on ties.
    pub fn predict(&self, epoch: &Tensor) -> Result<usize> {
        Ok(argmax(&self.forward(epoch)?))
    }
}

/// Index of the largest value, first on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
