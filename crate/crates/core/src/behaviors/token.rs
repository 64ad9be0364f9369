//! Verifiers over toy answer tokens. An answer is checked up to (not
//! including) the first `<eos>`.

use crate::vocab::{self, Alphabet, Form, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenRule {
    /// Every non-separator token is a word of this alphabet; at least one word.
    Alphabet(Alphabet),
    /// Word count in `min..=max`.
    WordCount { min: usize, max: usize },
    /// Every word has this form; at least one word.
    Form(Form),
    /// Exactly this many `.` separators.
    Separators(usize),
}

/// Strips a trailing `<eos>` and anything after it.
pub fn answer_body(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.iter().position(|&t| t == vocab::EOS) {
        Some(i) => &tokens[..i],
        None => tokens,
    }
}

impl TokenRule {
    pub fn check(&self, tokens: &[TokenId]) -> bool {
        let body = answer_body(tokens);
        match *self {
            TokenRule::Alphabet(a) => {
                let mut words = 0usize;
                for &t in body {
                    if t == vocab::PERIOD {
                        continue;
                    }
                    match vocab::word(t) {
                        Some(w) if w.alphabet == a => words += 1,
                        _ => return false,
                    }
                }
                words > 0
            }
            TokenRule::WordCount { min, max } => {
                let n = body.iter().filter(|&&t| vocab::word(t).is_some()).count();
                (min..=max).contains(&n)
            }
            TokenRule::Form(f) => {
                let mut words = 0usize;
                for w in body.iter().filter_map(|&t| vocab::word(t)) {
                    if w.form != f {
                        return false;
                    }
                    words += 1;
                }
                words > 0
            }
            TokenRule::Separators(n) => body.iter().filter(|&&t| t == vocab::PERIOD).count() == n,
        }
    }
}
