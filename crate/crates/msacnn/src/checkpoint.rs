//! `MSC1` model checkpoints.
//!
//! Layout (little-endian): magic `MSC1`, u16 version, u32 length + UTF-8
//! config record (`key=value` lines), u32 tensor count, then per tensor a
//! u16 length + UTF-8 name, u8 rank, u32 dims and f32 values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use msacnn_core::model::{build, param_specs, InputMode, ModelConfig, ModelSize, MsaCnnModel};
use msacnn_core::msm::SCALE_NAMES;
use msacnn_core::tensor::Tensor;

use crate::error::{read, write, Error, Result};

pub const MAGIC: &[u8; 4] = b"MSC1";
pub const VERSION: u16 = 1;

pub fn size_name(s: ModelSize) -> &'static str {
    match s {
        ModelSize::Small => "small",
        ModelSize::Large => "large",
    }
}

pub fn parse_size(s: &str) -> Result<ModelSize> {
    match s {
        "small" => Ok(ModelSize::Small),
        "large" => Ok(ModelSize::Large),
        _ => Err(Error::config(format!("unknown model size '{}'", s))),
    }
}

pub fn mode_name(m: InputMode) -> &'static str {
    match m {
        InputMode::Univariate => "univariate",
        InputMode::Multivariate => "multivariate",
        InputMode::Multimodal => "multimodal",
    }
}

pub fn parse_mode(s: &str) -> Result<InputMode> {
    match s {
        "univariate" => Ok(InputMode::Univariate),
        "multivariate" => Ok(InputMode::Multivariate),
        "multimodal" => Ok(InputMode::Multimodal),
        _ => Err(Error::config(format!("unknown input mode '{}'", s))),
    }
}

/// Scale index from a roman numeral or 0-based digit.
pub fn parse_scale(s: &str) -> Result<usize> {
    SCALE_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(s))
        .or_else(|| s.parse::<usize>().ok().filter(|&i| i < 4))
        .ok_or_else(|| Error::config(format!("unknown scale '{}'", s)))
}

/// `key=value` description from which [`parse_config_record`] rebuilds the
/// configuration exactly.
pub fn config_record(c: &ModelConfig) -> String {
    let scales: Vec<&str> = c.scale_plan.scales.iter().map(|s| SCALE_NAMES[s.scale]).collect();
    let mut out = String::new();
    writeln!(out, "size={}", size_name(c.size)).unwrap();
    writeln!(out, "mode={}", mode_name(c.mode)).unwrap();
    writeln!(out, "channels={}", c.n_ch).unwrap();
    writeln!(out, "scales={}", scales.join(",")).unwrap();
    writeln!(out, "no_msm={}", c.flags.no_msm.map_or("none", |s| SCALE_NAMES[s])).unwrap();
    writeln!(out, "no_tcm={}", c.flags.no_tcm).unwrap();
    writeln!(out, "dropout={}", c.tcm.dropout).unwrap();
    out
}

pub fn parse_config_record(text: &str) -> Result<ModelConfig> {
    let mut kv = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::data(format!("config record line '{}' lacks '='", line)))?;
        kv.insert(k.trim(), v.trim());
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::data(format!("config record lacks '{}'", k)));
    let bad = |k: &str| Error::data(format!("config record has an invalid '{}'", k));
    let scales = get("scales")?.split(',').map(parse_scale).collect::<Result<Vec<_>>>()?;
    let n_ch: usize = get("channels")?.parse().map_err(|_| bad("channels"))?;
    let mut c = ModelConfig::with_scales(parse_size(get("size")?)?, parse_mode(get("mode")?)?, n_ch, &scales)?;
    c.flags.no_msm = match get("no_msm")? {
        "none" => None,
        s => Some(parse_scale(s)?),
    };
    c.flags.no_tcm = get("no_tcm")?.parse().map_err(|_| bad("no_tcm"))?;
    c.tcm.dropout = get("dropout")?.parse().map_err(|_| bad("dropout"))?;
    c.validate()?;
    Ok(c)
}

pub fn to_bytes(model: &MsaCnnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let rec = config_record(&model.config);
    out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
    out.extend_from_slice(rec.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (spec, value) in model.params.specs.iter().zip(&model.params.values) {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(value.shape().len() as u8);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() - *pos < n {
        return Err(Error::data(format!("truncated checkpoint at byte {}: {} needs {} bytes", pos, what, n)));
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn u32_at(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    Ok(u32::from_le_bytes(take(bytes, pos, 4, what)?.try_into().unwrap()) as usize)
}

/// Rebuilds the model; names and shapes must match the configuration.
pub fn from_bytes(bytes: &[u8]) -> Result<MsaCnnModel> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::data("bad magic at byte 0: not an MSC1 checkpoint"));
    }
    let mut pos = 4;
    let version = u16::from_le_bytes(take(bytes, &mut pos, 2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::data(format!("unsupported checkpoint version {}", version)));
    }
    let len = u32_at(bytes, &mut pos, "config length")?;
    let rec = std::str::from_utf8(take(bytes, &mut pos, len, "config record")?).map_err(|_| Error::data("config record is not UTF-8"))?;
    let config = parse_config_record(rec)?;
    let mut model = build(&config, 0)?;
    let count = u32_at(bytes, &mut pos, "tensor count")?;
    let specs = param_specs(&config);
    if count != specs.len() {
        return Err(Error::data(format!("checkpoint has {} tensors, the configuration needs {}", count, specs.len())));
    }
    for (i, spec) in specs.iter().enumerate() {
        let at = pos;
        let nlen = u16::from_le_bytes(take(bytes, &mut pos, 2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(bytes, &mut pos, nlen, "name")?).map_err(|_| Error::data(format!("tensor name at byte {} is not UTF-8", at)))?;
        let rank = take(bytes, &mut pos, 1, "rank")?[0] as usize;
        let shape = (0..rank).map(|_| u32_at(bytes, &mut pos, "dimension")).collect::<Result<Vec<_>>>()?;
        if name != spec.name || shape != spec.shape {
            return Err(Error::data(format!(
                "tensor at byte {} is {} {:?}, expected {} {:?}",
                at, name, shape, spec.name, spec.shape
            )));
        }
        let n: usize = shape.iter().product();
        let values = take(bytes, &mut pos, 4 * n, "tensor values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        model.params.values[i] = Tensor::new(&shape, values)?;
    }
    if pos != bytes.len() {
        return Err(Error::data(format!("{} trailing bytes in checkpoint at byte {}", bytes.len() - pos, pos)));
    }
    Ok(model)
}

/// Human-readable list of tensor shapes and the parameter total.
pub fn manifest(model: &MsaCnnModel) -> String {
    let mut out = config_record(&model.config);
    out.push('\n');
    for (spec, v) in model.params.specs.iter().zip(&model.params.values) {
        let dims: Vec<String> = v.shape().iter().map(usize::to_string).collect();
        writeln!(out, "{} [{}] {}", spec.name, dims.join("x"), v.numel()).unwrap();
    }
    writeln!(out, "\ntotal_parameters={}", model.parameter_count()).unwrap();
    out
}

pub fn save_checkpoint(model: &MsaCnnModel, path: &Path) -> Result<()> {
    write(path, &to_bytes(model))
}

pub fn load_checkpoint(path: &Path) -> Result<MsaCnnModel> {
    from_bytes(&read(path)?)
}
