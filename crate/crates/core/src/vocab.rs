//! The toy token world.
//!
//! Answers are built from "words" drawn from two disjoint alphabets, each
//! with a plain and a marked (decorated) form of sixteen stems, split into
//! sentences by `.`. Prompts are strings of topic tokens. Instructions are
//! short phrases over a small instruction vocabulary with argument tokens
//! (`lang_a`, `marked`, `n6`, ...).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const SEP: TokenId = 2;
pub const ANS: TokenId = 3;
pub const PERIOD: TokenId = 4;

pub const STEMS: usize = 16;
pub const ALPHABETS: usize = 2;
pub const N_TOPICS: usize = 48;
pub const MAX_NUMBER: usize = 12;

const WORD_BASE: TokenId = 5;
const TOPIC_BASE: TokenId = WORD_BASE + (ALPHABETS * 2 * STEMS) as TokenId;

const INSTRUCTION_WORDS: &[&str] = &[
    "answer", "respond", "provide", "your", "in", "reply", "give", "response", "write", "use", "for",
    "a", "using", "the", "language", "to", "words", "keep", "between", "and", "-", "an", "of",
    "should", "contain", "limit", "that", "is", "long", "word", "sentences", "sentence", "exactly",
    "be", "consisting", "with", "only", "each", "every", "letters", "format", "all", "apply",
    "formatting", "make", "throughout",
];

const ARGUMENT_WORDS: &[&str] = &["lang_a", "lang_b", "plain", "marked"];

/// One of the two disjoint answer alphabets ("languages").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Alphabet {
    A,
    B,
}

impl Alphabet {
    pub const ALL: [Alphabet; 2] = [Alphabet::A, Alphabet::B];

    fn index(self) -> usize {
        match self {
            Alphabet::A => 0,
            Alphabet::B => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Alphabet::A => "a",
            Alphabet::B => "b",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "a" | "A" => Some(Alphabet::A),
            "b" | "B" => Some(Alphabet::B),
            _ => None,
        }
    }
}

/// Surface form of an answer word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Form {
    Plain,
    Marked,
}

impl Form {
    pub const ALL: [Form; 2] = [Form::Plain, Form::Marked];

    fn index(self) -> usize {
        match self {
            Form::Plain => 0,
            Form::Marked => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Form::Plain => "plain",
            Form::Marked => "marked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(Form::Plain),
            "marked" => Some(Form::Marked),
            _ => None,
        }
    }
}

/// Decoded view of an answer-word token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Word {
    pub alphabet: Alphabet,
    pub form: Form,
    pub stem: usize,
}

pub fn word_id(alphabet: Alphabet, form: Form, stem: usize) -> TokenId {
    debug_assert!(stem < STEMS);
    WORD_BASE + ((alphabet.index() * 2 + form.index()) * STEMS + stem) as TokenId
}

pub fn word(id: TokenId) -> Option<Word> {
    if !(WORD_BASE..TOPIC_BASE).contains(&id) {
        return None;
    }
    let k = (id - WORD_BASE) as usize;
    let stem = k % STEMS;
    let group = k / STEMS;
    Some(Word {
        alphabet: Alphabet::ALL[group / 2],
        form: Form::ALL[group % 2],
        stem,
    })
}

pub fn topic_id(i: usize) -> TokenId {
    debug_assert!(i < N_TOPICS);
    TOPIC_BASE + i as TokenId
}

pub fn is_topic(id: TokenId) -> bool {
    (TOPIC_BASE..TOPIC_BASE + N_TOPICS as TokenId).contains(&id)
}

/// Name table for the toy vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: BTreeMap<String, TokenId>,
}

impl Vocab {
    pub fn toy() -> Self {
        let mut names: Vec<String> = ["<bos>", "<eos>", "<sep>", "<ans>", "."]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for a in Alphabet::ALL {
            for f in Form::ALL {
                for s in 0..STEMS {
                    let stem = match f {
                        Form::Plain => a.name().to_string(),
                        Form::Marked => a.name().to_uppercase(),
                    };
                    names.push(format!("{stem}{s:02}"));
                }
            }
        }
        for t in 0..N_TOPICS {
            names.push(format!("t{t:02}"));
        }
        names.extend(INSTRUCTION_WORDS.iter().map(|s| s.to_string()));
        names.extend(ARGUMENT_WORDS.iter().map(|s| s.to_string()));
        for n in 1..=MAX_NUMBER {
            names.push(format!("n{n}"));
        }
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as TokenId))
            .collect();
        Vocab { names, ids }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<TokenId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: TokenId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    /// Whitespace-separated token names to ids.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::invalid(format!("unknown toy token `{w}`")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match self.name(id) {
                Some(n) => out.push_str(n),
                None => out.push_str(&format!("<{id}>")),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_consistent() {
        let v = Vocab::toy();
        assert_eq!(v.id("<bos>"), Some(BOS));
        assert_eq!(v.id("."), Some(PERIOD));
        assert_eq!(v.id("a00"), Some(word_id(Alphabet::A, Form::Plain, 0)));
        assert_eq!(v.id("B15"), Some(word_id(Alphabet::B, Form::Marked, 15)));
        assert_eq!(v.id("t00"), Some(topic_id(0)));
        assert!(v.id("n12").is_some());
        for id in 0..v.len() as TokenId {
            if let Some(w) = word(id) {
                assert_eq!(word_id(w.alphabet, w.form, w.stem), id);
            }
        }
        assert_eq!(word(PERIOD), None);
        assert_eq!(word(topic_id(0)), None);
    }

    #[test]
    fn encode_round_trips_and_rejects_unknown() {
        let v = Vocab::toy();
        let ids = v.encode("answer in lang_a .").unwrap();
        assert_eq!(v.decode(&ids), "answer in lang_a .");
        assert!(v.encode("answer in klingon").is_err());
    }
}
