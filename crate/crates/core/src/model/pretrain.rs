//! Supervised pretraining of the toy model on instruction-following data.

use alloc::vec;
use alloc::vec::Vec;

use super::{build_logits, instructed_prefix, register_params, splice, ModelParams};
use crate::behaviors::BehaviorSet;
use crate::datagen::{self, CorpusSpec, Example};
use crate::distill::EmbeddingBank;
use crate::numerics::GradTape;
use crate::optim::{clip_grad_norm, AdamW, AdamWConfig, LinearSchedule};
use crate::eval;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub warmup_frac: f32,
    pub clip_norm: f32,
    pub seed: u64,
    /// Probabilities of 0..=3 simultaneous instructions per example.
    pub mixture: [f64; 4],
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 3000,
            batch_size: 16,
            lr: 3e-3,
            weight_decay: 1e-2,
            warmup_frac: 0.05,
            clip_norm: 1.0,
            seed: 0,
            mixture: [0.1, 0.4, 0.3, 0.2],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainLog {
    /// Mean batch loss per step.
    pub losses: Vec<f32>,
}

/// Cross-entropy over the answer (and `<eos>`) positions of one example;
/// gradients are added into `grad`, scaled by `scale`.
pub(crate) fn example_loss_grad(params: &ModelParams, e: &Example, scale: f32, grad: &mut [f32]) -> Result<f32> {
    let prefix = instructed_prefix(&e.prompt, &e.instructions);
    let mut seq = prefix.clone();
    seq.push_tokens(&e.answer[..e.answer.len() - 1]);
    let empty = EmbeddingBank::new(params.config().d_model, Default::default());
    let mut tape = GradTape::new();
    let pv = register_params(&mut tape, params, true);
    let sp = splice(&mut tape, &seq, &empty, &[])?;
    let logits = build_logits(&mut tape, params, &pv, sp.sources)?;
    let start = prefix.len() - 1;
    let rows: Vec<usize> = (start..start + e.answer.len()).collect();
    let targets: Vec<usize> = e.answer.iter().map(|&t| t as usize).collect();
    let loss = tape.cross_entropy(logits, rows, targets)?;
    let grads = tape.backward(loss)?;
    for (spec, var) in params.specs().iter().zip(&pv.vars) {
        if let Some(g) = grads.get(*var) {
            crate::numerics::kernels::axpy(&mut grad[spec.range.clone()], scale, g);
        }
    }
    Ok(tape.value(loss)[0])
}

/// Trains every weight with AdamW under a warmup-then-linear-decay schedule.
/// `on_step(step, loss)` is called after each update.
pub fn pretrain(
    params: &mut ModelParams,
    set: &BehaviorSet,
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(usize, f32),
) -> Result<PretrainLog> {
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("pretraining needs at least one step and one example per batch"));
    }
    let mut spec = CorpusSpec::new(cfg.steps * cfg.batch_size, rng::substream(cfg.seed, "pretrain-data"));
    spec.mixture = cfg.mixture;
    let corpus = datagen::gen_pretrain_corpus(set, &spec)?;
    let sched = LinearSchedule::new(cfg.lr, cfg.steps, cfg.warmup_frac);
    let mut opt = AdamW::new(
        AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamWConfig::default() },
        params.n_params(),
    );
    let mut grad = vec![0.0f32; params.n_params()];
    let mut log = PretrainLog::default();
    let mut examples = corpus;
    let scale = 1.0 / cfg.batch_size as f32;
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0f32;
        for _ in 0..cfg.batch_size {
            let e = examples.next().expect("corpus sized to steps × batch")?;
            total += example_loss_grad(params, &e, scale, &mut grad)?;
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::Numeric(alloc::format!("pretraining loss diverged at step {step}")));
        }
        clip_grad_norm(&mut grad, cfg.clip_norm);
        opt.step(params.flat_mut(), &grad, sched.lr(step))?;
        log.losses.push(loss);
        on_step(step, loss);
    }
    Ok(log)
}

/// Share of held-out prompts on which greedy decoding under plain-text
/// instructions satisfies every behavior in `ids` (and stops within budget).
pub fn instruction_accuracy<S: AsRef<str>>(
    params: &ModelParams,
    set: &BehaviorSet,
    ids: &[S],
    n_prompts: usize,
    seed: u64,
) -> Result<f64> {
    if n_prompts == 0 {
        return Err(Error::invalid("need at least one prompt"));
    }
    let ids: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
    let prompts = datagen::held_out_prompts(n_prompts, rng::substream(seed, "eval-prompts"));
    let case = eval::CompositionCase::single(set, &ids, prompts)?;
    let cond = eval::Condition::new(eval::Method::Instruction, rng::substream(seed, "eval-paraphrases"));
    let report = eval::run_suite(params, set, None, &[case], &cond, eval::decode_budget(set))?;
    Ok(report.orders[0].accuracy())
}
