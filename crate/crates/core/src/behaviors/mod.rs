//! Verifiable behaviors: instruction paraphrases plus a deterministic
//! checker. Two families share the same machinery: token-level behaviors
//! for the toy model and text-level behaviors for scoring outputs of real
//! models.

pub mod text;
pub mod token;
mod toy;
mod text_catalog;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng as _;

use crate::model::ModelParams;
use crate::rng;
use crate::vocab::TokenId;
use crate::{Error, Result};

pub use text::{CaseRule, Language, TextRule};
pub use text_catalog::text_catalog;
pub use token::TokenRule;
pub use toy::toy_catalog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Language,
    Length,
    Format,
    Structure,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Language, Category::Length, Category::Format, Category::Structure];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Language => "language",
            Category::Length => "length",
            Category::Format => "format",
            Category::Structure => "structure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether the composition token saw a behavior during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Seen,
    Unseen,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seen" => Some(Split::Seen),
            "unseen" => Some(Split::Unseen),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Token,
    Text,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Token => "token",
            Family::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "token" => Some(Family::Token),
            "text" => Some(Family::Text),
            _ => None,
        }
    }
}

/// One instruction paraphrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Tokens(Vec<TokenId>),
    Text(String),
}

impl Instruction {
    pub fn tokens(&self) -> Option<&[TokenId]> {
        match self {
            Instruction::Tokens(t) => Some(t),
            Instruction::Text(_) => None,
        }
    }
}

/// Declarative verifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifierSpec {
    Token(TokenRule),
    Text(TextRule),
}

impl VerifierSpec {
    pub fn family(&self) -> Family {
        match self {
            VerifierSpec::Token(_) => Family::Token,
            VerifierSpec::Text(_) => Family::Text,
        }
    }
}

/// Model output to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output<'a> {
    Tokens(&'a [TokenId]),
    Text(&'a str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Behavior {
    pub id: String,
    pub category: Category,
    pub split: Split,
    pub paraphrases: Vec<Instruction>,
    pub verifier: VerifierSpec,
    /// Index of the paraphrase used for semantic initialization.
    pub init_paraphrase: usize,
}

impl Behavior {
    pub fn family(&self) -> Family {
        self.verifier.family()
    }

    /// Uniform draw over the paraphrases.
    pub fn sample_instruction(&self, seed: u64) -> &Instruction {
        let mut r = rng::rng(seed);
        self.sample_with(&mut r)
    }

    pub(crate) fn sample_with(&self, r: &mut rng::Rng) -> &Instruction {
        &self.paraphrases[r.random_range(0..self.paraphrases.len())]
    }

    pub fn verify(&self, output: Output<'_>) -> Result<bool> {
        match (&self.verifier, output) {
            (VerifierSpec::Token(rule), Output::Tokens(t)) => Ok(rule.check(t)),
            (VerifierSpec::Text(rule), Output::Text(s)) => Ok(rule.check(s)),
            _ => Err(Error::invalid(format!(
                "behavior `{}` verifies {} output",
                self.id,
                self.family().as_str()
            ))),
        }
    }

    /// Mean of the frozen token embeddings of the initialization paraphrase.
    pub fn semantic_init(&self, params: &ModelParams) -> Result<Vec<f32>> {
        let ins = self
            .paraphrases
            .get(self.init_paraphrase)
            .ok_or_else(|| Error::invalid(format!("`{}` has no initialization paraphrase", self.id)))?;
        let tokens = ins
            .tokens()
            .ok_or_else(|| Error::invalid("semantic initialization needs a token paraphrase"))?;
        mean_embedding(params, tokens)
    }
}

/// Arithmetic mean of token-embedding rows.
pub fn mean_embedding(params: &ModelParams, tokens: &[TokenId]) -> Result<Vec<f32>> {
    if tokens.is_empty() {
        return Err(Error::invalid("empty paraphrase"));
    }
    let d = params.config().d_model;
    let mut acc = alloc::vec![0.0f32; d];
    for &t in tokens {
        let row = params
            .token_embedding(t as usize)
            .ok_or_else(|| Error::invalid(format!("token {t} outside vocabulary")))?;
        for (a, r) in acc.iter_mut().zip(row) {
            *a += r;
        }
    }
    let n = tokens.len() as f32;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Conjunction of `verify` over `behaviors`; vacuously true when empty.
pub fn verify_all(behaviors: &[&Behavior], output: Output<'_>) -> Result<bool> {
    let mut ok = true;
    for b in behaviors {
        // Evaluate every verifier so family mismatches surface regardless of order.
        ok &= b.verify(output)?;
    }
    Ok(ok)
}

/// An immutable catalog of behaviors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorSet {
    family: Family,
    behaviors: Vec<Behavior>,
}

impl BehaviorSet {
    /// Ids must be unique and all behaviors must share one family.
    pub fn new(behaviors: Vec<Behavior>) -> Result<Self> {
        let first = behaviors
            .first()
            .ok_or_else(|| Error::Catalog("empty behavior set".into()))?;
        let family = first.family();
        let mut ids = BTreeSet::new();
        for b in &behaviors {
            if !ids.insert(b.id.as_str()) {
                return Err(Error::Catalog(format!("duplicate behavior id `{}`", b.id)));
            }
            if b.family() != family {
                return Err(Error::Catalog(format!("`{}` mixes behavior families", b.id)));
            }
            if b.paraphrases.is_empty() {
                return Err(Error::Catalog(format!("`{}` has no paraphrases", b.id)));
            }
            if b.init_paraphrase >= b.paraphrases.len() {
                return Err(Error::Catalog(format!("`{}` initialization index out of range", b.id)));
            }
            let fam_ok = b.paraphrases.iter().all(|p| {
                matches!((p, family), (Instruction::Tokens(_), Family::Token) | (Instruction::Text(_), Family::Text))
            });
            if !fam_ok {
                return Err(Error::Catalog(format!("`{}` paraphrases do not match its family", b.id)));
            }
        }
        Ok(BehaviorSet { family, behaviors })
    }

    /// Shipped-catalog requirements: at least ten paraphrases per behavior and
    /// at least one unseen behavior in every category that is present.
    pub fn validate_catalog(&self) -> Result<()> {
        for b in &self.behaviors {
            if b.paraphrases.len() < 10 {
                return Err(Error::Catalog(format!(
                    "`{}` has {} paraphrases, need at least 10",
                    b.id,
                    b.paraphrases.len()
                )));
            }
        }
        for c in Category::ALL {
            let present = self.behaviors.iter().any(|b| b.category == c);
            let held_out = self.behaviors.iter().any(|b| b.category == c && b.split == Split::Unseen);
            if present && !held_out {
                return Err(Error::Catalog(format!("category `{c}` has no unseen behavior")));
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn get(&self, id: &str) -> Option<&Behavior> {
        self.behaviors.iter().find(|b| b.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&Behavior> {
        self.get(id)
            .ok_or_else(|| Error::Catalog(format!("unknown behavior id `{id}`")))
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Behavior> {
        self.behaviors.iter()
    }

    pub fn len(&self) -> usize {
        self.behaviors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.is_empty()
    }

    pub fn seen(&self) -> impl Iterator<Item = &Behavior> {
        self.behaviors.iter().filter(|b| b.split == Split::Seen)
    }

    pub fn unseen(&self) -> impl Iterator<Item = &Behavior> {
        self.behaviors.iter().filter(|b| b.split == Split::Unseen)
    }

    pub fn in_category(&self, c: Category) -> impl Iterator<Item = &Behavior> {
        self.behaviors.iter().filter(move |b| b.category == c)
    }

    /// Resolves ids to behaviors, in order.
    pub fn resolve<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<&Behavior>> {
        ids.iter().map(|id| self.require(id.as_ref())).collect()
    }
}

impl<'a> IntoIterator for &'a BehaviorSet {
    type Item = &'a Behavior;
    type IntoIter = core::slice::Iter<'a, Behavior>;
    fn into_iter(self) -> Self::IntoIter {
        self.behaviors.iter()
    }
}

#[cfg(test)]
mod tests;
