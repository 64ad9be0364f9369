//! Compact pre-norm decoder-only transformer.
//!
//! Inputs are sequences whose items are either token ids or named vectors
//! from an [`EmbeddingBank`]; named vectors replace the token-embedding row
//! at their position and nothing else. Positional embeddings are learned
//! and absolute.

mod decode;
mod graph;
mod params;
mod pretrain;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::distill::EmbeddingBank;
use crate::numerics::{self, Tensor};
use crate::vocab::{self, TokenId};
use crate::{Error, Result};

pub use decode::Decoder;
pub(crate) use graph::{build_logits, register_params, splice};
pub use params::{Fingerprint, ModelParams, ParamSpec};
pub use pretrain::{instruction_accuracy, pretrain, PretrainConfig, PretrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LMConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl LMConfig {
    /// The desk-scale default over the toy vocabulary.
    pub fn toy(seed: u64) -> Self {
        LMConfig {
            vocab_size: vocab::Vocab::toy().len(),
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            max_seq_len: 128,
            seed,
        }
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 5 || self.n_layers == 0 || self.max_seq_len == 0 {
            return Err(Error::invalid("vocabulary, depth and context must be non-trivial"));
        }
        Ok(())
    }

    pub(crate) fn to_bytes(&self) -> [u8; 28] {
        let mut b = [0u8; 28];
        for (i, v) in [self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.max_seq_len]
            .into_iter()
            .enumerate()
        {
            b[4 * i..4 * i + 4].copy_from_slice(&(v as u32).to_le_bytes());
        }
        b[20..].copy_from_slice(&self.seed.to_le_bytes());
        b
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputItem {
    Token(TokenId),
    /// Reference to a bank entry by name.
    Embedding(String),
}

/// Ordered model input mixing token ids and named embeddings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InputSequence {
    items: Vec<InputItem>,
}

impl InputSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: &[TokenId]) -> Self {
        InputSequence { items: tokens.iter().map(|&t| InputItem::Token(t)).collect() }
    }

    pub fn push_token(&mut self, t: TokenId) {
        self.items.push(InputItem::Token(t));
    }

    pub fn push_tokens(&mut self, ts: &[TokenId]) {
        self.items.extend(ts.iter().map(|&t| InputItem::Token(t)));
    }

    pub fn push_embedding(&mut self, name: &str) {
        self.items.push(InputItem::Embedding(name.into()));
    }

    pub fn items(&self) -> &[InputItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of named-embedding items.
    pub fn embedding_count(&self) -> usize {
        self.items.iter().filter(|i| matches!(i, InputItem::Embedding(_))).count()
    }

    pub fn embedding_names(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter_map(|i| match i {
            InputItem::Embedding(n) => Some(n.as_str()),
            InputItem::Token(_) => None,
        })
    }
}

/// `<bos> prompt <sep>` — the part shared by every input layout.
pub fn prompt_prefix(prompt: &[TokenId]) -> InputSequence {
    let mut s = InputSequence::new();
    s.push_token(vocab::BOS);
    s.push_tokens(prompt);
    s.push_token(vocab::SEP);
    s
}

/// `<bos> prompt <sep> I_1 I_2 ... <ans>`
pub fn instructed_prefix(prompt: &[TokenId], instructions: &[Vec<TokenId>]) -> InputSequence {
    let mut s = prompt_prefix(prompt);
    for ins in instructions {
        s.push_tokens(ins);
    }
    s.push_token(vocab::ANS);
    s
}

/// `<bos> prompt <sep> e_1 ... e_n <ans>` for the given bank names.
pub fn steered_prefix(prompt: &[TokenId], names: &[&str]) -> InputSequence {
    let mut s = prompt_prefix(prompt);
    for n in names {
        s.push_embedding(n);
    }
    s.push_token(vocab::ANS);
    s
}

fn check_bank(params: &ModelParams, bank: &EmbeddingBank) -> Result<()> {
    if bank.d() != params.config().d_model {
        return Err(Error::invalid(format!(
            "bank dimension {} differs from d_model {}",
            bank.d(),
            params.config().d_model
        )));
    }
    Ok(())
}

impl ModelParams {
    /// Per-position logits `[len(seq), vocab_size]`.
    pub fn forward(&self, seq: &InputSequence, bank: &EmbeddingBank) -> Result<Tensor> {
        check_bank(self, bank)?;
        let mut tape = numerics::GradTape::new();
        let pv = register_params(&mut tape, self, false);
        let sp = splice(&mut tape, seq, bank, &[])?;
        let logits = build_logits(&mut tape, self, &pv, sp.sources)?;
        let v = self.config().vocab_size;
        let data = tape.value(logits).to_vec();
        let out = Tensor::new(alloc::vec![seq.len(), v], data)?;
        if !out.all_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(out)
    }

    /// Temperature-`t` log-probabilities of each answer position: row `i` is
    /// the distribution predicting `answer[i]` given `prefix ⊕ answer[..i]`.
    pub fn answer_log_probs(
        &self,
        prefix: &InputSequence,
        bank: &EmbeddingBank,
        answer: &[TokenId],
        t: f32,
    ) -> Result<Tensor> {
        let logits = self.answer_logits(prefix, bank, answer)?;
        numerics::log_softmax_temperature(&logits, t)
    }

    /// Raw logits at the positions predicting each answer token.
    pub fn answer_logits(&self, prefix: &InputSequence, bank: &EmbeddingBank, answer: &[TokenId]) -> Result<Tensor> {
        if answer.is_empty() {
            return Err(Error::invalid("empty answer"));
        }
        if prefix.is_empty() {
            return Err(Error::invalid("empty prefix"));
        }
        let total = prefix.len() + answer.len();
        if total > self.config().max_seq_len {
            return Err(Error::Length { len: total, max: self.config().max_seq_len });
        }
        let mut seq = prefix.clone();
        // The last answer token is never an input.
        seq.push_tokens(&answer[..answer.len() - 1]);
        let all = self.forward(&seq, bank)?;
        let v = self.config().vocab_size;
        let start = prefix.len() - 1;
        let data = all.data()[start * v..(start + answer.len()) * v].to_vec();
        Tensor::new(alloc::vec![answer.len(), v], data)
    }

    /// Argmax decoding until `<eos>` (included in the output) or `max_new` tokens.
    pub fn greedy_decode(&self, prefix: &InputSequence, bank: &EmbeddingBank, max_new: usize) -> Result<Vec<TokenId>> {
        if max_new == 0 {
            return Err(Error::invalid("max_new must be at least 1"));
        }
        check_bank(self, bank)?;
        let mut dec = Decoder::new(self);
        let mut logits = dec.feed(prefix, bank)?;
        let mut out = Vec::new();
        for step in 0..max_new {
            let next = numerics::kernels::argmax(&logits) as TokenId;
            out.push(next);
            if next == vocab::EOS || step + 1 == max_new || dec.len() >= self.config().max_seq_len {
                break;
            }
            logits = dec.step_token(next)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
