use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::params::{slot, POS_EMB, TOK_EMB};
use super::{InputItem, InputSequence, ModelParams};
use crate::distill::EmbeddingBank;
use crate::numerics::{EmbedSource, GradTape, Var};
use crate::{Error, Result};

/// Tape handles for every weight tensor, in [`ModelParams::specs`] order.
pub(crate) struct ParamVars {
    pub vars: Vec<Var>,
}

pub(crate) fn register_params<'a>(tape: &mut GradTape<'a>, params: &'a ModelParams, trainable: bool) -> ParamVars {
    let vars = params
        .specs()
        .iter()
        .map(|s| tape.leaf(&params.flat()[s.range.clone()], s.rows, s.cols, trainable))
        .collect();
    ParamVars { vars }
}

/// Input rows for a sequence plus the tape leaf of every distinct bank entry it uses.
pub(crate) struct Spliced {
    pub sources: Vec<EmbedSource>,
    pub leaves: BTreeMap<String, Var>,
}

/// Resolves named items against `bank`. Entries listed in `trainable` become
/// trainable leaves; each distinct name gets exactly one leaf so repeated
/// uses accumulate into one gradient.
pub(crate) fn splice<'a>(
    tape: &mut GradTape<'a>,
    seq: &InputSequence,
    bank: &'a EmbeddingBank,
    trainable: &[&str],
) -> Result<Spliced> {
    let mut leaves: BTreeMap<String, Var> = BTreeMap::new();
    let mut sources = Vec::with_capacity(seq.len());
    for item in seq.items() {
        match item {
            InputItem::Token(t) => sources.push(EmbedSource::Token(*t as usize)),
            InputItem::Embedding(name) => {
                let var = match leaves.get(name) {
                    Some(v) => *v,
                    None => {
                        let vector = bank
                            .get(name)
                            .ok_or_else(|| Error::MissingEmbedding(name.clone()))?;
                        let v = tape.leaf(vector, 1, bank.d(), trainable.contains(&name.as_str()));
                        leaves.insert(name.clone(), v);
                        v
                    }
                };
                sources.push(EmbedSource::Vector(var));
            }
        }
    }
    Ok(Spliced { sources, leaves })
}

/// Full forward pass to `[L, vocab]` logits.
pub(crate) fn build_logits(
    tape: &mut GradTape<'_>,
    params: &ModelParams,
    pv: &ParamVars,
    sources: Vec<EmbedSource>,
) -> Result<Var> {
    let cfg = params.config();
    if sources.len() > cfg.max_seq_len {
        return Err(Error::Length { len: sources.len(), max: cfg.max_seq_len });
    }
    if sources.is_empty() {
        return Err(Error::invalid("empty input sequence"));
    }
    let p = |i: usize| pv.vars[i];
    let mut x = tape.embed(p(TOK_EMB), p(POS_EMB), sources)?;
    for l in 0..cfg.n_layers {
        let s = |k: usize| p(params.layer_slot(l, k));
        let h = tape.layer_norm(x, s(slot::LN1_G), s(slot::LN1_B))?;
        let qkv = tape.linear(h, s(slot::W_QKV), Some(s(slot::B_QKV)))?;
        let att = tape.causal_attention(qkv, cfg.n_heads)?;
        let proj = tape.linear(att, s(slot::W_O), Some(s(slot::B_O)))?;
        x = tape.add(x, proj)?;
        let h2 = tape.layer_norm(x, s(slot::LN2_G), s(slot::LN2_B))?;
        let f = tape.linear(h2, s(slot::W_FC), Some(s(slot::B_FC)))?;
        let f = tape.gelu(f);
        let m = tape.linear(f, s(slot::W_PROJ), Some(s(slot::B_PROJ)))?;
        x = tape.add(x, m)?;
    }
    let hf = tape.layer_norm(x, p(params.final_slot(0)), p(params.final_slot(1)))?;
    tape.linear(hf, p(params.final_slot(2)), Some(p(params.final_slot(3))))
}
