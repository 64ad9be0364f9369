use alloc::vec;
use alloc::vec::Vec;

use super::params::{slot, POS_EMB, TOK_EMB};
use super::{InputItem, InputSequence, ModelParams};
use crate::distill::EmbeddingBank;
use crate::numerics::kernels::{self, axpy, vecmat};
use crate::vocab::TokenId;
use crate::{Error, Result};

/// Incremental forward pass with cached keys and values. Produces the same
/// logits, bit for bit, as the full tape forward pass.
pub struct Decoder<'a> {
    params: &'a ModelParams,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
    // scratch
    x: Vec<f32>,
    h: Vec<f32>,
    qkv: Vec<f32>,
    att: Vec<f32>,
    proj: Vec<f32>,
    ff: Vec<f32>,
    probs: Vec<f32>,
}

impl<'a> Decoder<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let c = params.config();
        let d = c.d_model;
        Decoder {
            params,
            keys: (0..c.n_layers).map(|_| Vec::with_capacity(c.max_seq_len * d)).collect(),
            values: (0..c.n_layers).map(|_| Vec::with_capacity(c.max_seq_len * d)).collect(),
            len: 0,
            x: vec![0.0; d],
            h: vec![0.0; d],
            qkv: vec![0.0; 3 * d],
            att: vec![0.0; d],
            proj: vec![0.0; d],
            ff: vec![0.0; c.d_ff()],
            probs: vec![0.0; c.n_heads * c.max_seq_len],
        }
    }

    /// Positions consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds a whole sequence; returns the logits after its last item.
    pub fn feed(&mut self, seq: &InputSequence, bank: &EmbeddingBank) -> Result<Vec<f32>> {
        if seq.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        let mut logits = Vec::new();
        for (i, item) in seq.items().iter().enumerate() {
            let last = i + 1 == seq.len();
            logits = match item {
                InputItem::Token(t) => self.step_inner(Row::Token(*t), last)?,
                InputItem::Embedding(name) => {
                    let v = bank.require(name)?;
                    if v.len() != self.params.config().d_model {
                        return Err(Error::invalid("bank dimension differs from d_model"));
                    }
                    self.step_inner(Row::Vector(v), last)?
                }
            };
        }
        Ok(logits)
    }

    pub fn step_token(&mut self, t: TokenId) -> Result<Vec<f32>> {
        self.step_inner(Row::Token(t), true)
    }

    fn step_inner(&mut self, row: Row<'_>, want_logits: bool) -> Result<Vec<f32>> {
        let p = self.params;
        let c = *p.config();
        let d = c.d_model;
        let t = self.len;
        if t >= c.max_seq_len {
            return Err(Error::Length { len: t + 1, max: c.max_seq_len });
        }
        match row {
            Row::Token(id) => {
                let id = id as usize;
                if id >= c.vocab_size {
                    return Err(Error::invalid("token id outside vocabulary"));
                }
                self.x.copy_from_slice(&p.slice(TOK_EMB)[id * d..(id + 1) * d]);
            }
            Row::Vector(v) => self.x.copy_from_slice(v),
        }
        axpy(&mut self.x, 1.0, &p.slice(POS_EMB)[t * d..(t + 1) * d]);

        for l in 0..c.n_layers {
            let w = |k: usize| p.slice(p.layer_slot(l, k));
            kernels::layer_norm_row(&self.x, w(slot::LN1_G), w(slot::LN1_B), &mut self.h);
            vecmat(&self.h, w(slot::W_QKV), Some(w(slot::B_QKV)), &mut self.qkv);
            self.keys[l].extend_from_slice(&self.qkv[d..2 * d]);
            self.values[l].extend_from_slice(&self.qkv[2 * d..]);
            kernels::attend_row(
                &self.qkv[..d],
                &self.keys[l],
                &self.values[l],
                t,
                d,
                c.n_heads,
                &mut self.probs[..c.n_heads * (t + 1)],
                &mut self.att,
            );
            vecmat(&self.att, w(slot::W_O), Some(w(slot::B_O)), &mut self.proj);
            for (x, y) in self.x.iter_mut().zip(&self.proj) {
                *x += y;
            }
            kernels::layer_norm_row(&self.x, w(slot::LN2_G), w(slot::LN2_B), &mut self.h);
            vecmat(&self.h, w(slot::W_FC), Some(w(slot::B_FC)), &mut self.ff);
            for f in self.ff.iter_mut() {
                *f = kernels::gelu(*f);
            }
            vecmat(&self.ff, w(slot::W_PROJ), Some(w(slot::B_PROJ)), &mut self.proj);
            for (x, y) in self.x.iter_mut().zip(&self.proj) {
                *x += y;
            }
        }
        self.len += 1;
        if !want_logits {
            return Ok(Vec::new());
        }
        kernels::layer_norm_row(&self.x, p.slice(p.final_slot(0)), p.slice(p.final_slot(1)), &mut self.h);
        let mut logits = vec![0.0f32; c.vocab_size];
        vecmat(&self.h, p.slice(p.final_slot(2)), Some(p.slice(p.final_slot(3))), &mut logits);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(logits)
    }
}

enum Row<'v> {
    Token(TokenId),
    Vector(&'v [f32]),
}
