//! Self-distillation of steering embeddings against a frozen model.
//!
//! Stage one learns one embedding per behavior so that `prompt ⊕ e_b`
//! reproduces the model's answer distribution under `prompt ⊕ instruction`.
//! Stage two learns a single composition embedding `<and>` from
//! two-behavior data with every behavior embedding frozen, plus a penalty on
//! its squared cosine similarity to those embeddings.

mod bank;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

pub use bank::{BankEntry, EmbeddingBank, AND_TOKEN};

use crate::behaviors::{mean_embedding, Behavior};
use crate::datagen::Example;
use crate::model::{build_logits, instructed_prefix, prompt_prefix, register_params, splice, InputSequence, ModelParams};
use crate::numerics::{self, GradTape, Tensor};
use crate::optim::{clip_grad_norm, AdamW, AdamWConfig, LinearSchedule};
use crate::rng;
use crate::vocab::{self, TokenId};
use crate::{Error, Result};

/// Initial value of the composition embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AndInit {
    Zero,
    /// The token embedding of the instruction word `and`.
    AndWord,
    /// Mean of the behavior embeddings it is trained against.
    AvgTokens,
}

impl AndInit {
    pub fn as_str(self) -> &'static str {
        match self {
            AndInit::Zero => "zero",
            AndInit::AndWord => "and_word",
            AndInit::AvgTokens => "avg_tokens",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(AndInit::Zero),
            "and_word" => Some(AndInit::AndWord),
            "avg_tokens" => Some(AndInit::AvgTokens),
            _ => None,
        }
    }
}

/// Placement of `<and>` among three or more steering items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AndLayout {
    /// `e1 <and> e2 <and> e3`
    Interleaved,
    /// `e1 e2 <and> e3`
    Single,
}

impl AndLayout {
    pub fn as_str(self) -> &'static str {
        match self {
            AndLayout::Interleaved => "interleaved",
            AndLayout::Single => "single",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "interleaved" => Some(AndLayout::Interleaved),
            "single" => Some(AndLayout::Single),
            _ => None,
        }
    }
}

/// Steering item names for behaviors `ids`, with `<and>` placed per `layout`.
pub fn steering_items<'a>(ids: &[&'a str], layout: AndLayout) -> Vec<&'a str> {
    let mut out = Vec::with_capacity(2 * ids.len());
    for (i, id) in ids.iter().enumerate() {
        let join = match layout {
            AndLayout::Interleaved => i > 0,
            AndLayout::Single => i > 0 && i + 1 == ids.len(),
        };
        if join {
            out.push(AND_TOKEN);
        }
        out.push(*id);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub temperature: f32,
    pub lambda_orth: f32,
    pub lr: f32,
    pub weight_decay: f32,
    pub clip_norm: f32,
    pub epochs: usize,
    pub warmup_frac: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub and_init: AndInit,
    pub orth_enabled: bool,
    pub order_shuffle: bool,
    pub and_layout: AndLayout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 10.0,
            lambda_orth: 0.5,
            lr: 1e-4,
            weight_decay: 1e-3,
            clip_norm: 1.0,
            epochs: 2,
            warmup_frac: 0.1,
            batch_size: 16,
            seed: 0,
            and_init: AndInit::Zero,
            orth_enabled: true,
            order_shuffle: true,
            and_layout: AndLayout::Interleaved,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.lambda_orth >= 0.0 && self.lambda_orth.is_finite()) {
            return Err(Error::invalid("lambda_orth must be non-negative"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::invalid("lr, weight decay and warmup fraction must be in range"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }

    /// Effective orthogonality weight.
    pub fn lambda(&self) -> f32 {
        if self.orth_enabled {
            self.lambda_orth
        } else {
            0.0
        }
    }
}

/// `T² · mean_r KL(softmax(teacher_r / T) ‖ softmax(student_r / T))` over logit rows.
pub fn loss_distill(teacher: &Tensor, student: &Tensor, t: f32) -> Result<f32> {
    if teacher.shape() != student.shape() {
        return Err(Error::invalid(format!(
            "teacher rows {:?} and student rows {:?} differ",
            teacher.shape(),
            student.shape()
        )));
    }
    let p = numerics::softmax_temperature(teacher, t)?;
    let q = numerics::softmax_temperature(student, t)?;
    Ok(t * t * numerics::kl_divergence(&p, &q)?)
}

/// Sum of squared cosine similarities between `and_vec` and each behavior
/// vector. A zero `and_vec` contributes 0.
pub fn loss_orth(and_vec: &[f32], behaviors: &[&[f32]]) -> Result<f32> {
    Ok(loss_orth_grad(and_vec, behaviors)?.0)
}

/// [`loss_orth`] and its gradient with respect to `and_vec`.
pub fn loss_orth_grad(and_vec: &[f32], behaviors: &[&[f32]]) -> Result<(f32, Vec<f32>)> {
    let mut grad = vec![0.0f32; and_vec.len()];
    if and_vec.iter().all(|&v| v == 0.0) {
        for b in behaviors {
            if b.len() != and_vec.len() {
                return Err(Error::invalid("dimension mismatch in orthogonality loss"));
            }
        }
        return Ok((0.0, grad));
    }
    let mut total = 0.0f32;
    for b in behaviors {
        let (c, g) = numerics::cosine_sq_grad(and_vec, b)?;
        total += c;
        for (a, x) in grad.iter_mut().zip(&g) {
            *a += x;
        }
    }
    Ok((total, grad))
}

/// Largest squared cosine between `and_vec` and any behavior vector.
pub fn max_cosine_sq(and_vec: &[f32], behaviors: &[&[f32]]) -> Result<f32> {
    if and_vec.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut m = 0.0f32;
    for b in behaviors {
        m = m.max(numerics::cosine_sq(and_vec, b)?);
    }
    Ok(m)
}

/// One teacher-forced distillation target.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillItem {
    /// Student prefix ending in `<ans>`.
    pub student: InputSequence,
    /// Reference answer ending in `<eos>`.
    pub answer: Vec<TokenId>,
    /// Teacher probabilities at temperature `T`, `[answer.len(), vocab]`.
    pub target: Vec<f32>,
}

/// Teacher distribution over the answer positions of `prefix ⊕ answer`.
pub fn teacher_target(params: &ModelParams, prefix: &InputSequence, answer: &[TokenId], t: f32) -> Result<Vec<f32>> {
    let empty = EmbeddingBank::new(params.config().d_model, Default::default());
    let logits = params.answer_logits(prefix, &empty, answer)?;
    Ok(numerics::softmax_temperature(&logits, t)?.into_data())
}

/// Components of one evaluation of the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f32,
    /// `loss` before rounding to f32.
    pub loss_wide: f64,
    pub distill: f32,
    pub orth: f32,
    /// Gradient with respect to the trained bank entry.
    pub grad: Vec<f32>,
}

/// `mean_i L_dist(item_i) + λ · L_orth(trained, orth_against)` and its
/// gradient with respect to bank entry `trained`.
pub fn objective(
    params: &ModelParams,
    bank: &EmbeddingBank,
    items: &[DistillItem],
    trained: &str,
    orth_against: &[&str],
    lambda: f32,
    t: f32,
) -> Result<Objective> {
    if items.is_empty() {
        return Err(Error::invalid("objective needs at least one item"));
    }
    let d = bank.d();
    let mut grad = vec![0.0f32; d];
    let mut dist = 0.0f64;
    let scale = 1.0 / items.len() as f32;
    for item in items {
        let mut seq = item.student.clone();
        if item.answer.is_empty() {
            return Err(Error::invalid("empty answer"));
        }
        seq.push_tokens(&item.answer[..item.answer.len() - 1]);
        let mut tape = GradTape::new();
        let pv = register_params(&mut tape, params, false);
        let sp = splice(&mut tape, &seq, bank, &[trained])?;
        let leaf = *sp.leaves.get(trained).ok_or_else(|| {
            Error::invalid(format!("student input does not contain `{trained}`"))
        })?;
        let logits = build_logits(&mut tape, params, &pv, sp.sources)?;
        let start = item.student.len() - 1;
        let rows: Vec<usize> = (start..start + item.answer.len()).collect();
        let loss = tape.kl_to_target(logits, rows, item.target.clone(), t)?;
        dist += tape.value_f64(loss) / items.len() as f64;
        let grads = tape.backward(loss)?;
        if let Some(g) = grads.get(leaf) {
            numerics::kernels::axpy(&mut grad, scale, g);
        }
    }
    let mut orth = 0.0f32;
    if lambda > 0.0 && !orth_against.is_empty() {
        let vecs = orth_against
            .iter()
            .map(|n| bank.require(n))
            .collect::<Result<Vec<_>>>()?;
        let (o, g) = loss_orth_grad(bank.require(trained)?, &vecs)?;
        orth = o;
        numerics::kernels::axpy(&mut grad, lambda, &g);
    }
    let wide = dist + lambda as f64 * orth as f64;
    if !wide.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite distillation objective".into()));
    }
    Ok(Objective { loss: wide as f32, loss_wide: wide, distill: dist as f32, orth, grad })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: usize,
    /// Total objective per step.
    pub losses: Vec<f32>,
    pub distill_losses: Vec<f32>,
    pub orth_losses: Vec<f32>,
    /// Max squared cosine to the frozen behavior embeddings after training (stage two).
    pub final_max_cos_sq: Option<f32>,
}

impl TrainLog {
    /// Mean of the first and last `w` step losses.
    pub fn smoothed_ends(&self, w: usize) -> Option<(f32, f32)> {
        if self.losses.is_empty() || w == 0 {
            return None;
        }
        let w = w.min(self.losses.len());
        let mean = |s: &[f32]| s.iter().sum::<f32>() / s.len() as f32;
        Some((mean(&self.losses[..w]), mean(&self.losses[self.losses.len() - w..])))
    }
}

/// Shared optimization loop over one bank entry.
fn optimize(
    params: &ModelParams,
    bank: &mut EmbeddingBank,
    items: &[DistillItem],
    trained: &str,
    orth_against: &[&str],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let fp = params.fingerprint();
    let snapshot = bank.frozen_snapshot();
    let per_epoch = items.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let sched = LinearSchedule::new(cfg.lr, total, cfg.warmup_frac);
    let mut opt = AdamW::new(
        AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() },
        bank.d(),
    );
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut r = rng::rng(rng::substream(cfg.seed, "train-order"));
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let mut batch: Vec<DistillItem> = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| items[i].clone()));
            let mut obj = objective(params, bank, &batch, trained, orth_against, cfg.lambda(), cfg.temperature)?;
            clip_grad_norm(&mut obj.grad, cfg.clip_norm);
            let v = bank.vector_mut(trained)?;
            opt.step(v, &obj.grad, sched.lr(step))?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("`{trained}` diverged at step {step}")));
            }
            log.losses.push(obj.loss);
            log.distill_losses.push(obj.distill);
            log.orth_losses.push(obj.orth);
            step += 1;
        }
    }
    log.steps = step;
    if params.fingerprint() != fp {
        return Err(Error::FrozenModelViolation);
    }
    bank.check_snapshot(&snapshot)?;
    Ok(log)
}

fn example_target(params: &ModelParams, e: &Example, t: f32) -> Result<Vec<f32>> {
    teacher_target(params, &instructed_prefix(&e.prompt, &e.instructions), &e.answer, t)
}

/// Stage one: trains (or retrains) the embedding of `b` from its semantic
/// initialization. Only examples whose sole behavior is `b` are used. The
/// entry is left frozen.
pub fn train_behavior_token(
    b: &Behavior,
    params: &ModelParams,
    bank: &mut EmbeddingBank,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    bank.check_model(params)?;
    if bank.entry(&b.id).is_some_and(|e| e.frozen) {
        return Err(Error::FrozenTokenViolation(format!("`{}` is frozen; unfreeze it to retrain", b.id)));
    }
    let items = data
        .iter()
        .filter(|e| e.behavior_ids.len() == 1 && e.behavior_ids[0] == b.id)
        .map(|e| {
            Ok(DistillItem {
                student: crate::model::steered_prefix(&e.prompt, &[b.id.as_str()]),
                answer: e.answer.clone(),
                target: example_target(params, e, cfg.temperature)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() && cfg.epochs > 0 {
        return Err(Error::invalid(format!("no training examples for `{}`", b.id)));
    }
    bank.insert(&b.id, b.semantic_init(params)?, false)?;
    let log = optimize(params, bank, &items, &b.id, &[], cfg)?;
    bank.set_frozen(&b.id, true)?;
    Ok(log)
}

/// Student prefix `prompt ⊕ steering items ⊕ <ans>`.
pub fn composed_prefix(prompt: &[TokenId], ids: &[&str], layout: AndLayout) -> InputSequence {
    let mut s = prompt_prefix(prompt);
    for n in steering_items(ids, layout) {
        s.push_embedding(n);
    }
    s.push_token(vocab::ANS);
    s
}

/// Stage two: trains `<and>` on multi-behavior examples. Every behavior in
/// the data must already be in the bank and frozen; the orthogonality
/// penalty is taken against exactly those behaviors.
pub fn train_and_token(
    params: &ModelParams,
    bank: &mut EmbeddingBank,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    bank.check_model(params)?;
    let mut seen: Vec<String> = Vec::new();
    for e in data {
        if e.behavior_ids.len() < 2 {
            return Err(Error::invalid("composition training needs multi-behavior examples"));
        }
        for id in &e.behavior_ids {
            let entry = bank.entry(id).ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
            if !entry.frozen {
                return Err(Error::invalid(format!("behavior embedding `{id}` must be frozen")));
            }
            if !seen.contains(id) {
                seen.push(id.clone());
            }
        }
    }
    let against: Vec<&str> = seen.iter().map(String::as_str).collect();
    let init = match cfg.and_init {
        AndInit::Zero => vec![0.0; bank.d()],
        AndInit::AndWord => {
            let id = vocab::Vocab::toy()
                .id("and")
                .ok_or_else(|| Error::invalid("vocabulary has no `and` word"))?;
            mean_embedding(params, &[id])?
        }
        AndInit::AvgTokens => {
            if against.is_empty() {
                return Err(Error::invalid("avg_tokens initialization needs behavior embeddings"));
            }
            let mut acc = vec![0.0f32; bank.d()];
            for n in &against {
                numerics::kernels::axpy(&mut acc, 1.0, bank.require(n)?);
            }
            acc.iter_mut().for_each(|a| *a /= against.len() as f32);
            acc
        }
    };
    let mut r = rng::rng(rng::substream(cfg.seed, "pair-order"));
    let mut items = Vec::with_capacity(data.len());
    for e in data {
        let mut idx: Vec<usize> = (0..e.behavior_ids.len()).collect();
        if cfg.order_shuffle {
            idx.shuffle(&mut r);
        }
        let ids: Vec<&str> = idx.iter().map(|&i| e.behavior_ids[i].as_str()).collect();
        let instructions: Vec<Vec<TokenId>> = idx.iter().map(|&i| e.instructions[i].clone()).collect();
        let target = teacher_target(params, &instructed_prefix(&e.prompt, &instructions), &e.answer, cfg.temperature)?;
        items.push(DistillItem {
            student: composed_prefix(&e.prompt, &ids, cfg.and_layout),
            answer: e.answer.clone(),
            target,
        });
    }
    bank.insert(AND_TOKEN, init, false)?;
    let mut log = optimize(params, bank, &items, AND_TOKEN, &against, cfg)?;
    let vecs = against.iter().map(|n| bank.require(n)).collect::<Result<Vec<_>>>()?;
    log.final_max_cos_sq = Some(max_cosine_sq(bank.require(AND_TOKEN)?, &vecs)?);
    Ok(log)
}
