//! Composition suites, steering conditions and order-sensitivity metrics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::behaviors::{verify_all, Behavior, BehaviorSet, Family, Output, Split, TextRule, TokenRule, VerifierSpec};
use crate::datagen::cross_category_groups;
use crate::distill::{steering_items, AndLayout, EmbeddingBank};
use crate::model::{prompt_prefix, InputSequence, ModelParams};
use crate::rng;
use crate::vocab::{self, TokenId};
use crate::{Error, Result};

/// Decode margin beyond the longest allowed answer.
pub const DECODE_MARGIN: usize = 8;

/// `max_new` for greedy decoding: the longest length window's maximum plus a margin.
pub fn decode_budget(set: &BehaviorSet) -> usize {
    let longest = set
        .iter()
        .filter_map(|b| match b.verifier {
            VerifierSpec::Token(TokenRule::WordCount { max, .. }) => Some(max),
            VerifierSpec::Text(TextRule::WordCount { max, .. }) => Some(max),
            _ => None,
        })
        .max()
        .unwrap_or(crate::datagen::MAX_WORDS);
    longest + DECODE_MARGIN
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Plain-text instructions only.
    Instruction,
    /// Steering embeddings joined by `<and>`.
    Steering,
    /// Steering embeddings without `<and>`.
    Concat,
    /// Instructions followed by steering embeddings with `<and>`.
    Hybrid,
    /// Ablation name for [`Method::Concat`]; builds identical inputs.
    NoAnd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Instruction, Method::Steering, Method::Concat, Method::Hybrid, Method::NoAnd];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Instruction => "instruction",
            Method::Steering => "steering",
            Method::Concat => "concat",
            Method::Hybrid => "hybrid",
            Method::NoAnd => "no_and",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn needs_bank(self) -> bool {
        self != Method::Instruction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition {
    pub method: Method,
    pub and_layout: AndLayout,
    /// Seeds the paraphrase chosen for each (prompt, behavior).
    pub paraphrase_seed: u64,
}

impl Condition {
    pub fn new(method: Method, paraphrase_seed: u64) -> Self {
        Condition { method, and_layout: AndLayout::Interleaved, paraphrase_seed }
    }
}

/// Which combinations a suite contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuitePolicy {
    All,
    SeenOnly,
    UnseenOnly,
}

/// One ordering of one behavior combination, with its evaluation prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionCase {
    /// Behaviors in catalog order; identifies the combination.
    pub combo: Vec<String>,
    /// Behaviors in the order presented to the model.
    pub behavior_ids: Vec<String>,
    pub split_class: Split,
    /// Index of this ordering among the lexicographic permutations of `combo`.
    pub order: usize,
    pub prompts: Vec<Vec<TokenId>>,
}

impl CompositionCase {
    /// A single ordering with an explicit behavior order.
    pub fn single(set: &BehaviorSet, ids: &[&str], prompts: Vec<Vec<TokenId>>) -> Result<Self> {
        let bs = set.resolve(ids)?;
        let split_class = split_of(&bs);
        Ok(CompositionCase {
            combo: ids.iter().map(|s| String::from(*s)).collect(),
            behavior_ids: ids.iter().map(|s| String::from(*s)).collect(),
            split_class,
            order: 0,
            prompts,
        })
    }

    pub fn k(&self) -> usize {
        self.behavior_ids.len()
    }
}

/// Seen iff every behavior is seen; any unseen behavior makes the combination unseen.
fn split_of(bs: &[&Behavior]) -> Split {
    if bs.iter().all(|b| b.split == Split::Seen) {
        Split::Seen
    } else {
        Split::Unseen
    }
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Every cross-category `k`-combination admitted by `policy`, expanded to all `k!` orders.
pub fn enumerate_cases(
    set: &BehaviorSet,
    k: usize,
    policy: SuitePolicy,
    prompts: &[Vec<TokenId>],
) -> Result<Vec<CompositionCase>> {
    if !(2..=3).contains(&k) {
        return Err(Error::Unsupported(format!("compositions of {k} behaviors")));
    }
    let pool: Vec<&Behavior> = set.iter().collect();
    let mut out = Vec::new();
    for combo in cross_category_groups(&pool, k) {
        let split_class = split_of(&combo);
        let keep = match policy {
            SuitePolicy::All => true,
            SuitePolicy::SeenOnly => split_class == Split::Seen,
            SuitePolicy::UnseenOnly => split_class == Split::Unseen,
        };
        if !keep {
            continue;
        }
        let ids: Vec<String> = combo.iter().map(|b| b.id.clone()).collect();
        for (order, perm) in permutations(k).into_iter().enumerate() {
            out.push(CompositionCase {
                combo: ids.clone(),
                behavior_ids: perm.iter().map(|&i| ids[i].clone()).collect(),
                split_class,
                order,
                prompts: prompts.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Paraphrase for `behavior` on `prompt`; independent of presentation order.
fn paraphrase<'b>(b: &'b Behavior, prompt: &[TokenId], seed: u64) -> Result<&'b [TokenId]> {
    let mut key: Vec<u8> = prompt.iter().flat_map(|t| t.to_le_bytes()).collect();
    key.extend_from_slice(b.id.as_bytes());
    let s = rng::substream(seed ^ rng::hash64(&key), "paraphrase");
    b.sample_instruction(s)
        .tokens()
        .ok_or_else(|| Error::Unsupported("text paraphrases cannot drive the toy model".into()))
}

/// Model input for one prompt of `case` under `condition`.
pub fn build_input(
    set: &BehaviorSet,
    case: &CompositionCase,
    condition: &Condition,
    prompt: &[TokenId],
    bank: Option<&EmbeddingBank>,
) -> Result<InputSequence> {
    let bs = set.resolve(&case.behavior_ids)?;
    let ids: Vec<&str> = case.behavior_ids.iter().map(String::as_str).collect();
    let mut s = prompt_prefix(prompt);
    let instructions = matches!(condition.method, Method::Instruction | Method::Hybrid);
    if instructions {
        for b in &bs {
            s.push_tokens(paraphrase(b, prompt, condition.paraphrase_seed)?);
        }
    }
    let items: Vec<&str> = match condition.method {
        Method::Instruction => Vec::new(),
        Method::Steering | Method::Hybrid => steering_items(&ids, condition.and_layout),
        Method::Concat | Method::NoAnd => ids.clone(),
    };
    if !items.is_empty() {
        let bank = bank.ok_or_else(|| Error::invalid(format!("method `{}` needs a bank", condition.method.as_str())))?;
        for n in &items {
            bank.require(n)?;
            s.push_embedding(n);
        }
    }
    s.push_token(vocab::ANS);
    Ok(s)
}

/// Accuracy statistics over the orders of one combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderStats {
    pub mean: f64,
    pub best: f64,
    pub delta_max: f64,
}

pub fn mean_accuracy(a: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().sum::<f64>() / a.len() as f64
}

pub fn best_accuracy(a: &[f64]) -> f64 {
    a.iter().copied().fold(0.0, f64::max)
}

/// `max_{i,j} |a_i − a_j|`, i.e. the range of `a`.
pub fn delta_max(a: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

pub fn order_stats(a: &[f64]) -> OrderStats {
    OrderStats { mean: mean_accuracy(a), best: best_accuracy(a), delta_max: delta_max(a) }
}

/// Result of one (combination, order).
#[derive(Debug, Clone, PartialEq)]
pub struct OrderResult {
    pub combo: Vec<String>,
    pub behavior_ids: Vec<String>,
    pub split_class: Split,
    pub order: usize,
    pub n: usize,
    pub correct: usize,
    /// Outputs that hit the decode budget without `<eos>` (counted as failures).
    pub truncated: usize,
}

impl OrderResult {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }

    pub fn k(&self) -> usize {
        self.combo.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSummary {
    pub combo: Vec<String>,
    pub split_class: Split,
    /// Accuracy per order index.
    pub accuracies: Vec<f64>,
    pub stats: OrderStats,
}

/// Averages over the cases of one (split, k) bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub split_class: Split,
    pub k: usize,
    pub n_cases: usize,
    pub mean: f64,
    pub best: f64,
    pub delta_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub orders: Vec<OrderResult>,
}

impl EvalReport {
    pub fn from_orders(orders: Vec<OrderResult>) -> Self {
        EvalReport { orders }
    }

    /// Concatenates reports; summaries are recomputed from the union.
    pub fn merge(mut self, other: EvalReport) -> Self {
        self.orders.extend(other.orders);
        self
    }

    /// One summary per combination, in order of first appearance.
    pub fn cases(&self) -> Vec<CaseSummary> {
        let mut index: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        let mut out: Vec<(CaseSummary, Vec<(usize, f64)>)> = Vec::new();
        for o in &self.orders {
            let i = *index.entry(o.combo.clone()).or_insert_with(|| {
                out.push((
                    CaseSummary {
                        combo: o.combo.clone(),
                        split_class: o.split_class,
                        accuracies: Vec::new(),
                        stats: order_stats(&[]),
                    },
                    Vec::new(),
                ));
                out.len() - 1
            });
            out[i].1.push((o.order, o.accuracy()));
        }
        out.into_iter()
            .map(|(mut c, mut acc)| {
                acc.sort_by_key(|&(order, _)| order);
                c.accuracies = acc.into_iter().map(|(_, a)| a).collect();
                c.stats = order_stats(&c.accuracies);
                c
            })
            .collect()
    }

    /// Case-averaged metrics per (split, k), sorted by split then k.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut buckets: BTreeMap<(Split, usize), Vec<OrderStats>> = BTreeMap::new();
        for c in self.cases() {
            buckets.entry((c.split_class, c.combo.len())).or_default().push(c.stats);
        }
        buckets
            .into_iter()
            .map(|((split_class, k), s)| {
                let n = s.len() as f64;
                Aggregate {
                    split_class,
                    k,
                    n_cases: s.len(),
                    mean: s.iter().map(|x| x.mean).sum::<f64>() / n,
                    best: s.iter().map(|x| x.best).sum::<f64>() / n,
                    delta_max: s.iter().map(|x| x.delta_max).sum::<f64>() / n,
                }
            })
            .collect()
    }

    /// Mean of case means over every case (0 when empty).
    pub fn overall_mean(&self) -> f64 {
        let cases = self.cases();
        mean_accuracy(&cases.iter().map(|c| c.stats.mean).collect::<Vec<_>>())
    }

    /// Mean of case Δ_max over every case.
    pub fn overall_delta_max(&self) -> f64 {
        let cases = self.cases();
        mean_accuracy(&cases.iter().map(|c| c.stats.delta_max).collect::<Vec<_>>())
    }
}

/// Greedy-decodes every (case, prompt) under `condition` and scores the
/// output with `judge`.
pub fn run_suite_with<F>(
    params: &ModelParams,
    set: &BehaviorSet,
    bank: Option<&EmbeddingBank>,
    cases: &[CompositionCase],
    condition: &Condition,
    decode_budget: usize,
    mut judge: F,
) -> Result<EvalReport>
where
    F: FnMut(&[&Behavior], &[TokenId]) -> Result<bool>,
{
    if set.family() != Family::Token {
        return Err(Error::Unsupported("decoding suites need a token catalog".into()));
    }
    if let Some(b) = bank {
        b.check_model(params)?;
    } else if condition.method.needs_bank() {
        return Err(Error::invalid(format!("method `{}` needs a bank", condition.method.as_str())));
    }
    let empty;
    let bank_ref = match bank {
        Some(b) => b,
        None => {
            empty = EmbeddingBank::for_model(params);
            &empty
        }
    };
    let mut orders = Vec::with_capacity(cases.len());
    for case in cases {
        if case.prompts.is_empty() {
            return Err(Error::invalid("every case needs at least one prompt"));
        }
        let bs = set.resolve(&case.behavior_ids)?;
        let mut correct = 0usize;
        let mut truncated = 0usize;
        for p in &case.prompts {
            let input = build_input(set, case, condition, p, condition.method.needs_bank().then_some(bank_ref))?;
            let out = params.greedy_decode(&input, bank_ref, decode_budget)?;
            if out.last() != Some(&vocab::EOS) {
                truncated += 1;
                continue;
            }
            if judge(&bs, &out)? {
                correct += 1;
            }
        }
        orders.push(OrderResult {
            combo: case.combo.clone(),
            behavior_ids: case.behavior_ids.clone(),
            split_class: case.split_class,
            order: case.order,
            n: case.prompts.len(),
            correct,
            truncated,
        });
    }
    Ok(EvalReport { orders })
}

/// [`run_suite_with`] judged by the behaviors' own verifiers.
pub fn run_suite(
    params: &ModelParams,
    set: &BehaviorSet,
    bank: Option<&EmbeddingBank>,
    cases: &[CompositionCase],
    condition: &Condition,
    decode_budget: usize,
) -> Result<EvalReport> {
    run_suite_with(params, set, bank, cases, condition, decode_budget, |bs, out| {
        verify_all(bs, Output::Tokens(out))
    })
}

/// A third-party generation to score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalRecord {
    pub id: String,
    /// Behaviors in the order they were requested.
    pub behavior_ids: Vec<String>,
    pub text: String,
}

/// Applies the suite metrics to pre-generated text. Records are grouped by
/// behavior combination; the requested order determines the order slot.
/// Against a token catalog, `text` holds whitespace-separated toy token names.
pub fn score_external(records: &[ExternalRecord], set: &BehaviorSet) -> Result<EvalReport> {
    let vocab = crate::vocab::Vocab::toy();
    let position = |id: &str| set.iter().position(|b| b.id == id);
    let mut groups: BTreeMap<(Vec<String>, usize), (Vec<String>, Split, usize, usize)> = BTreeMap::new();
    let mut first_seen: Vec<(Vec<String>, usize)> = Vec::new();
    for r in records {
        if r.behavior_ids.is_empty() {
            return Err(Error::Catalog(format!("record `{}` lists no behaviors", r.id)));
        }
        let bs = set.resolve(&r.behavior_ids)?;
        let mut idx: Vec<usize> = r
            .behavior_ids
            .iter()
            .map(|id| position(id).expect("resolved above"))
            .collect();
        let presented = idx.clone();
        idx.sort_unstable();
        if idx.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Catalog(format!("record `{}` repeats a behavior", r.id)));
        }
        let combo: Vec<String> = idx.iter().map(|&i| set.iter().nth(i).expect("index").id.clone()).collect();
        let perm: Vec<usize> = presented.iter().map(|p| idx.iter().position(|i| i == p).expect("member")).collect();
        let order = permutations(perm.len())
            .iter()
            .position(|q| *q == perm)
            .expect("every permutation is enumerated");
        let ok = match set.family() {
            Family::Text => verify_all(&bs, Output::Text(&r.text))?,
            Family::Token => verify_all(&bs, Output::Tokens(&vocab.encode(&r.text)?))?,
        };
        let key = (combo.clone(), order);
        let e = groups.entry(key.clone()).or_insert_with(|| {
            first_seen.push(key.clone());
            (r.behavior_ids.clone(), split_of(&bs), 0, 0)
        });
        e.2 += 1;
        e.3 += usize::from(ok);
    }
    let orders = first_seen
        .into_iter()
        .map(|key| {
            let (ids, split, n, correct) = groups.remove(&key).expect("grouped");
            OrderResult {
                combo: key.0,
                behavior_ids: ids,
                split_class: split,
                order: key.1,
                n,
                correct,
                truncated: 0,
            }
        })
        .collect();
    Ok(EvalReport { orders })
}
