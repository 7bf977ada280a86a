//! Temporal context module: token embedding, sinusoidal positions and a
//! stack of post-norm self-attention and feed-forward blocks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, usage_err, Result};
use crate::math::{cos, powf, sin};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcmConfig {
    pub d_in: usize,
    pub d_emb: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl TcmConfig {
    pub fn new(d_in: usize, d_emb: usize, heads: usize, layers: usize, dropout: f64) -> Result<Self> {
        let c = Self { d_in, d_emb, heads, layers, dropout };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_emb == 0 || self.heads == 0 {
            return Err(config_err!("TCM dimensions must be positive"));
        }
        if self.d_emb % self.heads != 0 {
            return Err(config_err!("embedding width {} is not divisible by {} heads", self.d_emb, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout rate {} is outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_emb / self.heads
    }

    pub fn ff_hidden(&self) -> usize {
        2 * self.d_emb
    }

    /// Named parameter shapes in build order.
    pub fn param_shapes(&self) -> Vec<(alloc::string::String, Vec<usize>)> {
        use alloc::format;
        let (d, h) = (self.d_emb, self.ff_hidden());
        let mut out = vec![
            ("tcm.embed.weight".into(), vec![self.d_in, d]),
            ("tcm.embed.bias".into(), vec![d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("tcm.layer{}.{}", l, s);
            out.extend([
                (p("qkv.weight"), vec![d, 3 * d]),
                (p("qkv.bias"), vec![3 * d]),
                (p("out.weight"), vec![d, d]),
                (p("out.bias"), vec![d]),
                (p("norm1.gain"), vec![d]),
                (p("norm1.shift"), vec![d]),
                (p("ffn1.weight"), vec![d, h]),
                (p("ffn1.bias"), vec![h]),
                (p("ffn2.weight"), vec![h, d]),
                (p("ffn2.bias"), vec![d]),
                (p("norm2.gain"), vec![d]),
                (p("norm2.shift"), vec![d]),
            ]);
        }
        out
    }
}

/// `PE(t, i) = sin(t / 10000^(i/d))` for even `i`, `cos(t / 10000^((i-1)/d))` for odd `i`.
pub fn positional_encoding(tokens: usize, d_emb: usize) -> Tensor {
    let (tokens, d_emb) = (tokens.max(1), d_emb.max(1));
    let mut data = vec![0.0; tokens * d_emb];
    for t in 0..tokens {
        for i in 0..d_emb {
            let e = (i - i % 2) as f64 / d_emb as f64;
            let a = t as f64 / powf(10000.0, e);
            data[t * d_emb + i] = if i % 2 == 0 { sin(a) } else { cos(a) };
        }
    }
    Tensor::new(&[tokens, d_emb], data).expect("positional encoding shape")
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub qkv: (Var, Var),
    pub out: (Var, Var),
    pub norm: (Var, Var),
}

#[derive(Debug, Clone, Copy)]
pub struct FfnVars {
    pub hidden: (Var, Var),
    pub out: (Var, Var),
    pub norm: (Var, Var),
}

#[derive(Debug, Clone)]
pub struct TcmVars {
    pub embed: (Var, Var),
    pub layers: Vec<(AttentionVars, FfnVars)>,
}

impl TcmVars {
    /// Groups handles laid out in [`TcmConfig::param_shapes`] order.
    pub fn from_slice(vars: &[Var]) -> Result<Self> {
        if vars.len() < 2 || (vars.len() - 2) % 12 != 0 {
            return Err(usage_err!("{} handles do not form a TCM parameter set", vars.len()));
        }
        let layers = vars[2..]
            .chunks(12)
            .map(|c| {
                (
                    AttentionVars { qkv: (c[0], c[1]), out: (c[2], c[3]), norm: (c[4], c[5]) },
                    FfnVars { hidden: (c[6], c[7]), out: (c[8], c[9]), norm: (c[10], c[11]) },
                )
            })
            .collect();
        Ok(Self { embed: (vars[0], vars[1]), layers })
    }
}

/// Self-attention sub-block. Returns the block output and the attention node
/// holding the head weights.
pub fn mha_forward(tape: &mut Tape, tokens: Var, p: &AttentionVars, config: &TcmConfig) -> Result<(Var, Var)> {
    config.validate()?;
    let qkv = tape.dense(tokens, p.qkv.0, p.qkv.1)?;
    let att = tape.attention(qkv, config.heads)?;
    let proj = tape.dense(att, p.out.0, p.out.1)?;
    let res = tape.add(tokens, proj)?;
    Ok((tape.layer_norm(res, p.norm.0, p.norm.1, LAYER_NORM_EPS)?, att))
}

/// Feed-forward sub-block with dropout after each activation.
pub fn ffn_forward(tape: &mut Tape, tokens: Var, p: &FfnVars, config: &TcmConfig, rng: &mut Rng, train: bool) -> Result<Var> {
    let h = tape.dense(tokens, p.hidden.0, p.hidden.1)?;
    let h = tape.relu(h);
    let h = tape.dropout(h, config.dropout, rng, train)?;
    let o = tape.dense(h, p.out.0, p.out.1)?;
    let o = tape.relu(o);
    let o = tape.dropout(o, config.dropout, rng, train)?;
    let res = tape.add(tokens, o)?;
    tape.layer_norm(res, p.norm.0, p.norm.1, LAYER_NORM_EPS)
}

/// `features [T_tok, d_in]` to `[T_tok, d_emb]`. The second value lists the
/// attention nodes of every layer in order.
pub fn tcm_forward(
    tape: &mut Tape,
    features: Var,
    p: &TcmVars,
    config: &TcmConfig,
    rng: &mut Rng,
    train: bool,
) -> Result<(Var, Vec<Var>)> {
    config.validate()?;
    if p.layers.len() != config.layers {
        return Err(config_err!("{} layer parameter sets for {} layers", p.layers.len(), config.layers));
    }
    let emb = tape.dense(features, p.embed.0, p.embed.1)?;
    let tokens = tape.shape(emb)[0];
    let pe = tape.constant(positional_encoding(tokens, config.d_emb));
    let mut x = tape.add(emb, pe)?;
    let mut atts = Vec::with_capacity(config.layers);
    for (a, f) in &p.layers {
        let (y, att) = mha_forward(tape, x, a, config)?;
        atts.push(att);
        x = ffn_forward(tape, y, f, config, rng, train)?;
    }
    Ok((x, atts))
}

/// Incoming and outgoing attention of one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// Head index, or `None` for the mean over heads.
    pub head: Option<usize>,
    pub tokens: usize,
    /// Row-major `[T_tok × T_tok]`.
    pub weights: Vec<f64>,
    pub incoming: Vec<f64>,
    pub outgoing: Vec<f64>,
    pub argmax_incoming: usize,
}

impl AttentionTrace {
    /// Builds a trace from row-stochastic weights `[t × t]`.
    pub fn from_weights(head: Option<usize>, tokens: usize, weights: Vec<f64>) -> Result<Self> {
        if tokens == 0 || weights.len() != tokens * tokens {
            return Err(usage_err!("attention weights of length {} do not form a {}×{} matrix", weights.len(), tokens, tokens));
        }
        let mut incoming = vec![0.0; tokens];
        for row in weights.chunks(tokens) {
            for (acc, w) in incoming.iter_mut().zip(row) {
                *acc += w;
            }
        }
        for v in incoming.iter_mut() {
            *v /= tokens as f64;
        }
        let mut argmax = 0;
        for (j, &v) in incoming.iter().enumerate() {
            if v > incoming[argmax] {
                argmax = j;
            }
        }
        let outgoing = weights[argmax * tokens..(argmax + 1) * tokens].to_vec();
        Ok(Self { head, tokens, weights, incoming, outgoing, argmax_incoming: argmax })
    }

    /// Trace of `head` (or the head mean) from an attention node.
    pub fn from_tape(tape: &Tape, att: Var, head: Option<usize>) -> Result<Self> {
        let (probs, heads, t) = tape.attention_weights(att).ok_or_else(|| usage_err!("variable is not an attention node"))?;
        let weights = match head {
            Some(h) if h >= heads => return Err(usage_err!("head {} out of range ({} heads)", h, heads)),
            Some(h) => probs[h * t * t..(h + 1) * t * t].to_vec(),
            None => {
                let mut m = vec![0.0; t * t];
                for hp in probs.chunks(t * t) {
                    for (a, b) in m.iter_mut().zip(hp) {
                        *a += b / heads as f64;
                    }
                }
                m
            }
        };
        Self::from_weights(head, t, weights)
    }
}
