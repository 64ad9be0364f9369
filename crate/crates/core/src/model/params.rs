use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::LMConfig;
use crate::rng;
use crate::{Error, Result};

/// SHA-256 over the configuration and every weight.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fingerprint(pub [u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

/// One named weight tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f32),
    Zeros,
    Ones,
}

/// Per-layer tensor order inside the flat buffer.
pub(crate) mod slot {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const W_QKV: usize = 2;
    pub const B_QKV: usize = 3;
    pub const W_O: usize = 4;
    pub const B_O: usize = 5;
    pub const LN2_G: usize = 6;
    pub const LN2_B: usize = 7;
    pub const W_FC: usize = 8;
    pub const B_FC: usize = 9;
    pub const W_PROJ: usize = 10;
    pub const B_PROJ: usize = 11;
    pub const PER_LAYER: usize = 12;
}

/// Global tensor indices; per-layer tensors follow `POS_EMB`.
pub(crate) const TOK_EMB: usize = 0;
pub(crate) const POS_EMB: usize = 1;

/// All model weights in one flat buffer.
///
/// Storage order (also the checkpoint order): `tok_emb [V, d]`,
/// `pos_emb [P, d]`, then for each layer `ln1_g, ln1_b, w_qkv [d, 3d],
/// b_qkv, w_o [d, d], b_o, ln2_g, ln2_b, w_fc [d, 4d], b_fc,
/// w_proj [4d, d], b_proj`, then `lnf_g, lnf_b, w_out [d, V], b_out`.
/// Matrices are `[in, out]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: LMConfig,
    specs: Vec<ParamSpec>,
    data: Vec<f32>,
}

fn layout(cfg: &LMConfig) -> Vec<(String, usize, usize, Init)> {
    let d = cfg.d_model;
    let ff = cfg.d_ff();
    let std = 0.02f32;
    let resid_std = std / libm::sqrtf(2.0 * cfg.n_layers as f32);
    let mut v = Vec::new();
    v.push((String::from("tok_emb"), cfg.vocab_size, d, Init::Normal(std)));
    v.push((String::from("pos_emb"), cfg.max_seq_len, d, Init::Normal(std)));
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        v.push((p("ln1_g"), 1, d, Init::Ones));
        v.push((p("ln1_b"), 1, d, Init::Zeros));
        v.push((p("w_qkv"), d, 3 * d, Init::Normal(std)));
        v.push((p("b_qkv"), 1, 3 * d, Init::Zeros));
        v.push((p("w_o"), d, d, Init::Normal(resid_std)));
        v.push((p("b_o"), 1, d, Init::Zeros));
        v.push((p("ln2_g"), 1, d, Init::Ones));
        v.push((p("ln2_b"), 1, d, Init::Zeros));
        v.push((p("w_fc"), d, ff, Init::Normal(std)));
        v.push((p("b_fc"), 1, ff, Init::Zeros));
        v.push((p("w_proj"), ff, d, Init::Normal(resid_std)));
        v.push((p("b_proj"), 1, d, Init::Zeros));
    }
    v.push((String::from("lnf_g"), 1, d, Init::Ones));
    v.push((String::from("lnf_b"), 1, d, Init::Zeros));
    v.push((String::from("w_out"), d, cfg.vocab_size, Init::Normal(std)));
    v.push((String::from("b_out"), 1, cfg.vocab_size, Init::Zeros));
    v
}

fn specs_for(cfg: &LMConfig) -> (Vec<ParamSpec>, Vec<Init>, usize) {
    let mut specs = Vec::new();
    let mut inits = Vec::new();
    let mut off = 0;
    for (name, rows, cols, init) in layout(cfg) {
        specs.push(ParamSpec { name, rows, cols, range: off..off + rows * cols });
        inits.push(init);
        off += rows * cols;
    }
    (specs, inits, off)
}

impl LMConfig {
    /// Number of weights a model with this configuration holds.
    pub fn n_params(&self) -> usize {
        specs_for(self).2
    }
}

impl ModelParams {
    /// Freshly initialized weights drawn from `config.seed`.
    pub fn init(config: LMConfig) -> Result<Self> {
        config.validate()?;
        let (specs, inits, total) = specs_for(&config);
        let mut data = alloc::vec![0.0f32; total];
        let mut rng = rng::rng(rng::substream(config.seed, "init"));
        for (spec, init) in specs.iter().zip(inits) {
            let slice = &mut data[spec.range.clone()];
            match init {
                Init::Zeros => slice.fill(0.0),
                Init::Ones => slice.fill(1.0),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0f32, std).map_err(|_| Error::invalid("bad init std"))?;
                    for x in slice.iter_mut() {
                        *x = dist.sample(&mut rng);
                    }
                }
            }
        }
        Ok(ModelParams { config, specs, data })
    }

    /// Wraps an existing flat buffer (e.g. read from a checkpoint).
    pub fn from_flat(config: LMConfig, data: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let (specs, _, total) = specs_for(&config);
        if data.len() != total {
            return Err(Error::invalid(format!(
                "configuration needs {total} weights, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        Ok(ModelParams { config, specs, data })
    }

    pub fn config(&self) -> &LMConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn flat(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn flat_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn slice(&self, idx: usize) -> &[f32] {
        &self.data[self.specs[idx].range.clone()]
    }

    pub(crate) fn layer_slot(&self, layer: usize, s: usize) -> usize {
        2 + layer * slot::PER_LAYER + s
    }

    pub(crate) fn final_slot(&self, k: usize) -> usize {
        2 + self.config.n_layers * slot::PER_LAYER + k
    }

    /// Row `id` of the token-embedding matrix.
    pub fn token_embedding(&self, id: usize) -> Option<&[f32]> {
        let d = self.config.d_model;
        (id < self.config.vocab_size).then(|| &self.slice(TOK_EMB)[id * d..(id + 1) * d])
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.range.clone()])
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update(self.config.to_bytes());
        for chunk in self.data.chunks(4096) {
            let mut buf = [0u8; 4 * 4096];
            for (i, v) in chunk.iter().enumerate() {
                buf[4 * i..4 * i + 4].copy_from_slice(&v.to_le_bytes());
            }
            h.update(&buf[..4 * chunk.len()]);
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        Fingerprint(out)
    }
}
