//! Synthetic toy data: prompts, behavior-satisfying answers, pretraining
//! corpora and distillation example streams.
//!
//! Every example is generated from its own sub-stream `indexed(seed, i)`, so
//! a corpus can be regenerated, sliced or extended without changing earlier
//! examples.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::behaviors::{Behavior, BehaviorSet, Category, Family, Split, TokenRule, VerifierSpec};
use crate::rng::{self, Rng};
use crate::vocab::{self, Alphabet, Form, TokenId};
use crate::{Error, Result};

/// Longest answer, in words, that the generator produces.
pub const MAX_WORDS: usize = 12;
pub const PROMPT_MIN: usize = 3;
pub const PROMPT_MAX: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub prompt: Vec<TokenId>,
    pub behavior_ids: Vec<String>,
    /// One paraphrase per behavior, aligned with `behavior_ids`.
    pub instructions: Vec<Vec<TokenId>>,
    /// Answer tokens ending in `<eos>`.
    pub answer: Vec<TokenId>,
}

/// Prompts are split by content hash so that training and evaluation never share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptSplit {
    Train,
    HeldOut,
}

pub fn prompt_split(prompt: &[TokenId]) -> PromptSplit {
    let bytes: Vec<u8> = prompt.iter().flat_map(|t| t.to_le_bytes()).collect();
    if rng::hash64(&bytes) & 1 == 0 {
        PromptSplit::Train
    } else {
        PromptSplit::HeldOut
    }
}

pub fn sample_prompt(r: &mut Rng, split: PromptSplit) -> Vec<TokenId> {
    loop {
        let n = r.random_range(PROMPT_MIN..=PROMPT_MAX);
        let p: Vec<TokenId> = (0..n).map(|_| vocab::topic_id(r.random_range(0..vocab::N_TOPICS))).collect();
        if prompt_split(&p) == split {
            return p;
        }
    }
}

/// `n` distinct held-out prompts.
pub fn held_out_prompts(n: usize, seed: u64) -> Vec<Vec<TokenId>> {
    let mut r = rng::rng(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = sample_prompt(&mut r, PromptSplit::HeldOut);
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    out
}

#[derive(Default)]
struct Constraints {
    alphabet: Option<Alphabet>,
    form: Option<Form>,
    min_words: usize,
    max_words: usize,
    sentences: Option<usize>,
}

fn constraints(behaviors: &[&Behavior]) -> Result<Constraints> {
    let mut c = Constraints { min_words: 1, max_words: MAX_WORDS, ..Default::default() };
    let conflict = |b: &Behavior| Error::Generation(format!("behavior `{}` conflicts with the others", b.id));
    for b in behaviors {
        let rule = match &b.verifier {
            VerifierSpec::Token(r) => *r,
            VerifierSpec::Text(_) => {
                return Err(Error::Unsupported(format!("cannot generate answers for text behavior `{}`", b.id)))
            }
        };
        match rule {
            TokenRule::Alphabet(a) => {
                if c.alphabet.is_some_and(|x| x != a) {
                    return Err(conflict(b));
                }
                c.alphabet = Some(a);
            }
            TokenRule::Form(f) => {
                if c.form.is_some_and(|x| x != f) {
                    return Err(conflict(b));
                }
                c.form = Some(f);
            }
            TokenRule::WordCount { min, max } => {
                c.min_words = c.min_words.max(min);
                c.max_words = c.max_words.min(max);
            }
            TokenRule::Separators(n) => {
                if c.sentences.is_some_and(|x| x != n) {
                    return Err(conflict(b));
                }
                c.sentences = Some(n);
            }
        }
    }
    if let Some(s) = c.sentences {
        if s == 0 {
            return Err(Error::Generation("answers have at least one sentence".into()));
        }
        c.min_words = c.min_words.max(s);
    }
    if c.min_words > c.max_words {
        return Err(Error::Generation("no answer length satisfies every behavior".into()));
    }
    Ok(c)
}

/// Builds an answer (ending in `<eos>`) for `prompt` that satisfies every
/// behavior.
///
/// Only the word count is random (uniform over the allowed window); every
/// other choice is a fixed function of the prompt and the constraints, so a
/// greedy decoder can reproduce it:
/// - stems run consecutively from the first prompt topic;
/// - a free alphabet alternates A, B, A, …; a free decoration alternates
///   marked, plain, …;
/// - with `s` sentences the first `s - 1` are one word long and the last
///   takes the rest. Without a structure behavior there is one sentence.
pub fn sample_answer(prompt: &[TokenId], behaviors: &[&Behavior], r: &mut Rng) -> Result<Vec<TokenId>> {
    let c = constraints(behaviors)?;
    let n = r.random_range(c.min_words..=c.max_words);
    let s = c.sentences.unwrap_or(1);
    let start = prompt.first().map_or(0, |&t| t.wrapping_sub(vocab::topic_id(0)) as usize);
    let mut out = Vec::with_capacity(n + s + 1);
    for i in 0..n {
        let a = c.alphabet.unwrap_or(Alphabet::ALL[i % 2]);
        let f = c.form.unwrap_or(if i % 2 == 0 { Form::Marked } else { Form::Plain });
        out.push(vocab::word_id(a, f, (start + i) % vocab::STEMS));
        if i + 1 < s {
            out.push(vocab::PERIOD);
        }
    }
    out.push(vocab::PERIOD);
    out.push(vocab::EOS);
    Ok(out)
}

/// Corpus request shared by the pretraining and distillation generators.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_examples: usize,
    pub seed: u64,
    /// Restrict to these behavior ids (all behaviors when `None`).
    pub behaviors: Option<Vec<String>>,
    /// Behavior ids never to use.
    pub exclude: Vec<String>,
    /// Pretraining: probabilities of 0, 1, 2 and 3 simultaneous instructions.
    pub mixture: [f64; 4],
    /// Stage two: also emit three-behavior compositions.
    pub include_triples: bool,
}

impl CorpusSpec {
    pub fn new(n_examples: usize, seed: u64) -> Self {
        CorpusSpec {
            n_examples,
            seed,
            behaviors: None,
            exclude: Vec::new(),
            mixture: [0.1, 0.4, 0.3, 0.2],
            include_triples: false,
        }
    }

    fn pool<'s>(&self, set: &'s BehaviorSet) -> Result<Vec<&'s Behavior>> {
        if set.family() != Family::Token {
            return Err(Error::Unsupported("data generation needs a token catalog".into()));
        }
        let chosen: Vec<&Behavior> = match &self.behaviors {
            Some(ids) => set.resolve(ids)?,
            None => set.iter().collect(),
        };
        for id in &self.exclude {
            set.require(id)?;
        }
        let pool: Vec<_> = chosen.into_iter().filter(|b| !self.exclude.contains(&b.id)).collect();
        if pool.is_empty() {
            return Err(Error::Generation("no behaviors left after filtering".into()));
        }
        Ok(pool)
    }
}

/// Distillation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// One behavior per example.
    One,
    /// Cross-category compositions of seen behaviors.
    Two,
}

fn make_example(behaviors: &[&Behavior], r: &mut Rng) -> Result<Example> {
    let prompt = sample_prompt(r, PromptSplit::Train);
    let instructions = behaviors
        .iter()
        .map(|b| {
            b.sample_with(r)
                .tokens()
                .map(<[TokenId]>::to_vec)
                .ok_or_else(|| Error::Unsupported("text paraphrase in a token catalog".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let answer = sample_answer(&prompt, behaviors, r)?;
    Ok(Example {
        prompt,
        behavior_ids: behaviors.iter().map(|b| b.id.clone()).collect(),
        instructions,
        answer,
    })
}

/// Lazily generated examples.
pub struct Corpus<'s> {
    plan: Plan<'s>,
    seed: u64,
    next: usize,
    n: usize,
}

enum Plan<'s> {
    Mixture { pool: Vec<&'s Behavior>, cumulative: [f64; 4] },
    Cycle(Vec<Vec<&'s Behavior>>),
}

impl<'s> Corpus<'s> {
    fn example(&self, i: usize) -> Result<Example> {
        let mut r = rng::rng(rng::indexed(self.seed, i as u64));
        match &self.plan {
            Plan::Cycle(groups) => make_example(&groups[i % groups.len()], &mut r),
            Plan::Mixture { pool, cumulative } => {
                let u: f64 = r.random();
                let k = cumulative.iter().position(|&c| u < c).unwrap_or(3);
                let mut cats: Vec<Category> = Category::ALL
                    .into_iter()
                    .filter(|c| pool.iter().any(|b| b.category == *c))
                    .collect();
                cats.shuffle(&mut r);
                cats.truncate(k);
                let chosen: Vec<&Behavior> = cats
                    .iter()
                    .map(|c| {
                        let options: Vec<&Behavior> = pool.iter().copied().filter(|b| b.category == *c).collect();
                        options[r.random_range(0..options.len())]
                    })
                    .collect();
                make_example(&chosen, &mut r)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Example `i`, independent of iteration state.
    pub fn get(&self, i: usize) -> Result<Example> {
        if i >= self.n {
            return Err(Error::invalid(format!("example {i} out of range")));
        }
        self.example(i)
    }
}

impl Iterator for Corpus<'_> {
    type Item = Result<Example>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.n {
            return None;
        }
        let e = self.example(self.next);
        self.next += 1;
        Some(e)
    }
}

/// Instruction-following corpus covering every behavior in the pool,
/// including ones held out from composition training.
pub fn gen_pretrain_corpus<'s>(set: &'s BehaviorSet, spec: &CorpusSpec) -> Result<Corpus<'s>> {
    let pool = spec.pool(set)?;
    let total: f64 = spec.mixture.iter().sum();
    if spec.mixture.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || total <= 0.0 {
        return Err(Error::invalid("mixture weights must be non-negative with a positive sum"));
    }
    let mut cumulative = [0.0; 4];
    let mut acc = 0.0;
    for (c, w) in cumulative.iter_mut().zip(spec.mixture) {
        acc += w / total;
        *c = acc;
    }
    Ok(Corpus { plan: Plan::Mixture { pool, cumulative }, seed: spec.seed, next: 0, n: spec.n_examples })
}

/// All cross-category combinations of `size` behaviors, in catalog order.
pub fn cross_category_groups<'s>(pool: &[&'s Behavior], size: usize) -> Vec<Vec<&'s Behavior>> {
    fn rec<'s>(pool: &[&'s Behavior], start: usize, size: usize, cur: &mut Vec<&'s Behavior>, out: &mut Vec<Vec<&'s Behavior>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..pool.len() {
            if cur.iter().any(|b| b.category == pool[i].category) {
                continue;
            }
            cur.push(pool[i]);
            rec(pool, i + 1, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(pool, 0, size, &mut Vec::new(), &mut out);
    out
}

/// Teacher examples for distillation. Stage one cycles through single
/// behaviors; stage two cycles through cross-category compositions of seen
/// behaviors and rejects unseen ones.
pub fn gen_distill_pairs<'s>(set: &'s BehaviorSet, spec: &CorpusSpec, stage: Stage) -> Result<Corpus<'s>> {
    let groups = match stage {
        Stage::One => spec.pool(set)?.into_iter().map(|b| alloc::vec![b]).collect::<Vec<_>>(),
        Stage::Two => {
            let pool: Vec<&Behavior> = match &spec.behaviors {
                Some(_) => {
                    let p = spec.pool(set)?;
                    if let Some(b) = p.iter().find(|b| b.split == Split::Unseen) {
                        return Err(Error::Generation(format!(
                            "unseen behavior `{}` requested for composition training",
                            b.id
                        )));
                    }
                    p
                }
                None => spec.pool(set)?.into_iter().filter(|b| b.split == Split::Seen).collect(),
            };
            let mut g = cross_category_groups(&pool, 2);
            if spec.include_triples {
                g.extend(cross_category_groups(&pool, 3));
            }
            if g.is_empty() {
                return Err(Error::Generation("no cross-category compositions of seen behaviors".into()));
            }
            g
        }
    };
    Ok(Corpus { plan: Plan::Cycle(groups), seed: spec.seed, next: 0, n: spec.n_examples })
}
