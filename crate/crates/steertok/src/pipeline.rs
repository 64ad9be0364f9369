//! Pipeline steps shared by the command line and the acceptance suite.
//!
//! Every step takes its seeds from the run's root seed through named
//! sub-streams, so a step can be rerun on its own and give the same bytes.

use steertok_core::behaviors::{BehaviorSet, Family, Split};
use steertok_core::datagen::{gen_distill_pairs, held_out_prompts, CorpusSpec, Example, Stage};
use steertok_core::distill::{train_and_token, train_behavior_token, EmbeddingBank, TrainConfig, TrainLog, AND_TOKEN as AND};
use steertok_core::eval::{
    decode_budget, enumerate_cases, run_suite, CompositionCase, Condition, EvalReport, Method, SuitePolicy,
};
use steertok_core::model::{instruction_accuracy, pretrain, ModelParams, PretrainLog};
use steertok_core::rng::substream;
use steertok_core::Error as CoreError;

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Held-out instruction-following accuracy per single behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub threshold: f64,
    pub accuracies: Vec<(String, f64)>,
}

impl GateReport {
    pub fn min(&self) -> f64 {
        self.accuracies.iter().map(|a| a.1).fold(1.0, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.min() >= self.threshold
    }

    pub fn failures(&self) -> Vec<&(String, f64)> {
        self.accuracies.iter().filter(|a| a.1 < self.threshold).collect()
    }
}

pub fn require_token_family(set: &BehaviorSet) -> Result<()> {
    if set.family() != Family::Token {
        return Err(Error::Usage("this step needs a token catalog (the text catalog is for `score` only)".into()));
    }
    Ok(())
}

/// Initializes and pretrains the stand-in instruction-following model.
pub fn pretrain_model(
    cfg: &RunConfig,
    set: &BehaviorSet,
    on_step: impl FnMut(usize, f32),
) -> Result<(ModelParams, PretrainLog)> {
    require_token_family(set)?;
    let mut params = ModelParams::init(cfg.lm_config())?;
    let log = pretrain(&mut params, set, &cfg.pretrain_config(), on_step)?;
    Ok((params, log))
}

pub fn gate(params: &ModelParams, set: &BehaviorSet, cfg: &RunConfig) -> Result<GateReport> {
    let seed = substream(cfg.seed, "gate");
    let accuracies = set
        .iter()
        .map(|b| Ok((b.id.clone(), instruction_accuracy(params, set, &[b.id.as_str()], cfg.gate_prompts, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GateReport { threshold: cfg.gate, accuracies })
}

pub fn stage_one_corpus(set: &BehaviorSet, id: &str, n: usize, seed: u64) -> Result<Vec<Example>> {
    let mut spec = CorpusSpec::new(n, substream(seed, &format!("stage1/{id}")));
    spec.behaviors = Some(vec![id.to_string()]);
    Ok(gen_distill_pairs(set, &spec, Stage::One)?.collect::<Result<Vec<_>, _>>()?)
}

pub fn stage_two_corpus(set: &BehaviorSet, n: usize, seed: u64) -> Result<Vec<Example>> {
    let spec = CorpusSpec::new(n, substream(seed, "stage2"));
    Ok(gen_distill_pairs(set, &spec, Stage::Two)?.collect::<Result<Vec<_>, _>>()?)
}

/// Stage one for each of `ids`, in the given order.
pub fn train_behaviors(
    params: &ModelParams,
    bank: &mut EmbeddingBank,
    set: &BehaviorSet,
    ids: &[&str],
    cfg: &RunConfig,
    train: &TrainConfig,
) -> Result<Vec<(String, TrainLog)>> {
    require_token_family(set)?;
    let mut logs = Vec::with_capacity(ids.len());
    for id in ids {
        let b = set.require(id)?;
        let data = stage_one_corpus(set, id, cfg.stage1_examples, cfg.seed)?;
        let log = train_behavior_token(b, params, bank, &data, train)?;
        logs.push((id.to_string(), log));
    }
    Ok(logs)
}

/// Stage two. Every seen behavior must already have a frozen embedding.
pub fn train_and(
    params: &ModelParams,
    bank: &mut EmbeddingBank,
    set: &BehaviorSet,
    cfg: &RunConfig,
    train: &TrainConfig,
) -> Result<TrainLog> {
    require_token_family(set)?;
    for b in set.seen() {
        if bank.entry(&b.id).is_none() {
            return Err(CoreError::MissingEmbedding(b.id.clone()).into());
        }
    }
    let data = stage_two_corpus(set, cfg.stage2_examples, cfg.seed)?;
    Ok(train_and_token(params, bank, &data, train)?)
}

/// The evaluation prompts of a run.
pub fn eval_prompts(n: usize, seed: u64) -> Vec<Vec<steertok_core::vocab::TokenId>> {
    held_out_prompts(n, substream(seed, "eval-prompts"))
}

/// Cases of size `k` admitted by `policy`. Size 1 gives one case per behavior.
pub fn cases(
    set: &BehaviorSet,
    k: usize,
    policy: SuitePolicy,
    prompts: &[Vec<steertok_core::vocab::TokenId>],
) -> Result<Vec<CompositionCase>> {
    if k != 1 {
        return Ok(enumerate_cases(set, k, policy, prompts)?);
    }
    set.iter()
        .filter(|b| match policy {
            SuitePolicy::All => true,
            SuitePolicy::SeenOnly => b.split == Split::Seen,
            SuitePolicy::UnseenOnly => b.split == Split::Unseen,
        })
        .map(|b| Ok(CompositionCase::single(set, &[b.id.as_str()], prompts.to_vec())?))
        .collect()
}

pub fn condition(cfg: &RunConfig, method: Method) -> Result<Condition> {
    Ok(Condition {
        method,
        and_layout: cfg.and_layout()?,
        paraphrase_seed: substream(cfg.seed, "eval-paraphrases"),
    })
}

/// Runs `method` over every size in `cfg.k` under `cfg.suite`.
pub fn evaluate(
    params: &ModelParams,
    set: &BehaviorSet,
    bank: Option<&EmbeddingBank>,
    cfg: &RunConfig,
    method: Method,
) -> Result<EvalReport> {
    require_token_family(set)?;
    let prompts = eval_prompts(cfg.n_prompts, cfg.seed);
    let cond = condition(cfg, method)?;
    let mut report = EvalReport::default();
    for &k in &cfg.k {
        let cs = cases(set, k, cfg.suite()?, &prompts)?;
        report = report.merge(run_suite(params, set, bank, &cs, &cond, decode_budget(set))?);
    }
    Ok(report)
}

/// Largest cos² between `<and>` and any behavior embedding in the bank.
pub fn and_max_cos_sq(bank: &EmbeddingBank) -> Result<Option<f32>> {
    let Some(and) = bank.get(AND) else { return Ok(None) };
    let others: Vec<&[f32]> =
        bank.entries().iter().filter(|e| e.name != AND).map(|e| e.vector.as_slice()).collect();
    if others.is_empty() {
        return Ok(None);
    }
    Ok(Some(steertok_core::distill::max_cosine_sq(and, &others)?))
}
