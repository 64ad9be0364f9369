//! Behavior catalog files.
//!
//! A catalog is line-oriented text. `#` starts a comment line; blank lines
//! are ignored. A `family = token|text` line comes first, then one section
//! per behavior:
//!
//! ```text
//! family = token
//!
//! [lang_a]
//! category = language
//! split = seen
//! verifier = alphabet a
//! init = 0
//! paraphrase = answer in lang_a
//! paraphrase = respond in lang_a
//! ```
//!
//! Verifiers: `alphabet a|b`, `words MIN MAX`, `form plain|marked`,
//! `separators N` for token catalogs; `language CODE`, `words MIN MAX`,
//! `case lower|upper|title`, `sentences N` for text catalogs. Token
//! paraphrases are whitespace-separated toy-vocabulary names.

use std::fmt::Write as _;
use std::path::Path;

use steertok_core::behaviors::{
    Behavior, BehaviorSet, CaseRule, Category, Family, Instruction, Language, Split, TextRule, TokenRule, VerifierSpec,
};
use steertok_core::vocab::{Alphabet, Form, Vocab};

use crate::error::{Error, Result};

pub const TOY_CATALOG: &str = include_str!("../catalogs/toy.catalog");
pub const TEXT_CATALOG: &str = include_str!("../catalogs/text.catalog");

fn verifier_to_string(v: &VerifierSpec) -> String {
    match v {
        VerifierSpec::Token(r) => match *r {
            TokenRule::Alphabet(a) => format!("alphabet {}", a.name()),
            TokenRule::WordCount { min, max } => format!("words {min} {max}"),
            TokenRule::Form(f) => format!("form {}", f.name()),
            TokenRule::Separators(n) => format!("separators {n}"),
        },
        VerifierSpec::Text(r) => match *r {
            TextRule::Language(l) => format!("language {}", l.code()),
            TextRule::WordCount { min, max } => format!("words {min} {max}"),
            TextRule::Case(c) => format!("case {}", c.as_str()),
            TextRule::Sentences(n) => format!("sentences {n}"),
        },
    }
}

fn parse_verifier(family: Family, s: &str) -> Option<VerifierSpec> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let num = |i: usize| parts.get(i).and_then(|p| p.parse::<usize>().ok());
    let arity = |n: usize| parts.len() == n;
    Some(match (family, parts.first().copied()?) {
        (Family::Token, "alphabet") if arity(2) => VerifierSpec::Token(TokenRule::Alphabet(Alphabet::parse(parts[1])?)),
        (Family::Token, "words") if arity(3) => {
            VerifierSpec::Token(TokenRule::WordCount { min: num(1)?, max: num(2)? })
        }
        (Family::Token, "form") if arity(2) => VerifierSpec::Token(TokenRule::Form(Form::parse(parts[1])?)),
        (Family::Token, "separators") if arity(2) => VerifierSpec::Token(TokenRule::Separators(num(1)?)),
        (Family::Text, "language") if arity(2) => VerifierSpec::Text(TextRule::Language(Language::parse(parts[1])?)),
        (Family::Text, "words") if arity(3) => VerifierSpec::Text(TextRule::WordCount { min: num(1)?, max: num(2)? }),
        (Family::Text, "case") if arity(2) => VerifierSpec::Text(TextRule::Case(CaseRule::parse(parts[1])?)),
        (Family::Text, "sentences") if arity(2) => VerifierSpec::Text(TextRule::Sentences(num(1)?)),
        _ => return None,
    })
}

/// Serializes `set` in catalog syntax. Parsing the result gives back an
/// equal set.
pub fn to_catalog_string(set: &BehaviorSet) -> String {
    let vocab = Vocab::toy();
    let mut out = String::new();
    let _ = writeln!(out, "family = {}", set.family().as_str());
    for b in set.iter() {
        let _ = writeln!(out);
        let _ = writeln!(out, "[{}]", b.id);
        let _ = writeln!(out, "category = {}", b.category.as_str());
        let _ = writeln!(out, "split = {}", b.split.as_str());
        let _ = writeln!(out, "verifier = {}", verifier_to_string(&b.verifier));
        let _ = writeln!(out, "init = {}", b.init_paraphrase);
        for p in &b.paraphrases {
            let text = match p {
                Instruction::Tokens(t) => vocab.decode(t),
                Instruction::Text(s) => s.clone(),
            };
            let _ = writeln!(out, "paraphrase = {text}");
        }
    }
    out
}

#[derive(Default)]
struct Draft {
    id: String,
    line: usize,
    category: Option<Category>,
    split: Option<Split>,
    verifier: Option<VerifierSpec>,
    init: Option<usize>,
    paraphrases: Vec<Instruction>,
}

/// Parses catalog text. `origin` is only used in error messages.
pub fn parse_catalog(origin: &Path, text: &str) -> Result<BehaviorSet> {
    let vocab = Vocab::toy();
    let err = |line: usize, msg: String| Error::parse(origin, line, msg);
    let mut family: Option<Family> = None;
    let mut drafts: Vec<Draft> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if let Some(rest) = l.strip_prefix('[') {
            let id = rest
                .strip_suffix(']')
                .map(str::trim)
                .filter(|s| !s.is_empty() && !s.contains(char::is_whitespace))
                .ok_or_else(|| err(line, format!("bad section header `{l}`")))?;
            if family.is_none() {
                return Err(err(line, "`family = ...` must come before the first behavior".into()));
            }
            drafts.push(Draft { id: id.to_string(), line, ..Draft::default() });
            continue;
        }
        let (key, value) = l
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(line, format!("expected `key = value`, found `{l}`")))?;
        let Some(d) = drafts.last_mut() else {
            if key != "family" {
                return Err(err(line, format!("`{key}` outside a behavior section")));
            }
            if family.is_some() {
                return Err(err(line, "family given twice".into()));
            }
            family = Some(Family::parse(value).ok_or_else(|| err(line, format!("unknown family `{value}`")))?);
            continue;
        };
        let fam = family.expect("set before sections");
        let dup = |present: bool| if present { Err(err(line, format!("`{key}` given twice"))) } else { Ok(()) };
        match key {
            "category" => {
                dup(d.category.is_some())?;
                d.category = Some(Category::parse(value).ok_or_else(|| err(line, format!("unknown category `{value}`")))?);
            }
            "split" => {
                dup(d.split.is_some())?;
                d.split = Some(Split::parse(value).ok_or_else(|| err(line, format!("unknown split `{value}`")))?);
            }
            "verifier" => {
                dup(d.verifier.is_some())?;
                d.verifier = Some(
                    parse_verifier(fam, value)
                        .ok_or_else(|| err(line, format!("bad {} verifier `{value}`", fam.as_str())))?,
                );
            }
            "init" => {
                dup(d.init.is_some())?;
                d.init = Some(value.parse().map_err(|_| err(line, format!("bad init index `{value}`")))?);
            }
            "paraphrase" => {
                if value.is_empty() {
                    return Err(err(line, "empty paraphrase".into()));
                }
                d.paraphrases.push(match fam {
                    Family::Token => Instruction::Tokens(vocab.encode(value).map_err(|e| err(line, e.to_string()))?),
                    Family::Text => Instruction::Text(value.to_string()),
                });
            }
            _ => return Err(err(line, format!("unknown key `{key}`"))),
        }
    }
    if family.is_none() {
        return Err(err(0, "missing `family = ...` line".into()));
    }
    let mut behaviors = Vec::with_capacity(drafts.len());
    for d in drafts {
        let missing = |what: &str| err(d.line, format!("behavior `{}` has no {what}", d.id));
        behaviors.push(Behavior {
            category: d.category.ok_or_else(|| missing("category"))?,
            split: d.split.ok_or_else(|| missing("split"))?,
            verifier: d.verifier.ok_or_else(|| missing("verifier"))?,
            init_paraphrase: d.init.unwrap_or(0),
            paraphrases: d.paraphrases,
            id: d.id,
        });
    }
    let set = BehaviorSet::new(behaviors).map_err(|e| err(0, e.to_string()))?;
    set.validate_catalog().map_err(|e| err(0, e.to_string()))?;
    Ok(set)
}

pub fn load_catalog(path: &Path) -> Result<BehaviorSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalog(path, &text)
}

/// A catalog path, or one of the built-in names `toy` and `text`.
pub fn resolve_catalog(spec: &str) -> Result<BehaviorSet> {
    match spec {
        "toy" => parse_catalog(Path::new("<toy>"), TOY_CATALOG),
        "text" => parse_catalog(Path::new("<text>"), TEXT_CATALOG),
        path => load_catalog(Path::new(path)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use steertok_core::behaviors::{text_catalog, toy_catalog};

    fn parse(text: &str) -> Result<BehaviorSet> {
        parse_catalog(Path::new("t.catalog"), text)
    }

    fn line_of(e: Error) -> usize {
        match e {
            Error::Parse { line, .. } => line,
            e => panic!("expected a parse error, got {e}"),
        }
    }

    #[test]
    fn shipped_files_match_the_builtin_catalogs() {
        assert_eq!(resolve_catalog("toy").unwrap(), toy_catalog());
        assert_eq!(resolve_catalog("text").unwrap(), text_catalog());
    }

    #[test]
    fn serialization_round_trips() {
        for set in [toy_catalog(), text_catalog()] {
            assert_eq!(parse(&to_catalog_string(&set)).unwrap(), set);
        }
    }

    #[test]
    fn errors_point_at_the_offending_line() {
        let good = to_catalog_string(&toy_catalog());
        let cases = [
            ("family = token\n[x]\ncategory = colour\n", 3),
            ("family = token\n[x]\nverifier = alphabet c\n", 3),
            ("family = token\n[x]\nverifier = case lower\n", 3),
            ("family = token\n[x]\nsplit = seen\nsplit = seen\n", 4),
            ("family = token\n[x]\nparaphrase = answer in klingon\n", 3),
            ("family = token\n[x]\nwhat = 1\n", 3),
            ("family = token\n[x\n", 2),
            ("[x]\n", 1),
            ("category = length\n", 1),
            ("family = token\nfamily = text\n", 2),
            ("family = token\n[x]\njust words\n", 3),
            ("family = token\n\n[x]\ncategory = length\n", 3),
        ];
        for (text, line) in cases {
            assert_eq!(line_of(parse(text).unwrap_err()), line, "{text:?}");
        }
        // A catalog without held-out behaviors is structurally invalid.
        let no_unseen = good.replace("split = unseen", "split = seen");
        assert!(parse(&no_unseen).is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!("# header\n\n{}\n# trailer\n", to_catalog_string(&toy_catalog()));
        assert_eq!(parse(&text).unwrap(), toy_catalog());
    }

    #[test]
    fn catalog_errors_exit_with_data_code() {
        let e = resolve_catalog("/nonexistent/x.catalog").unwrap_err();
        assert_eq!(e.exit_code(), crate::error::exit::DATA);
        assert_eq!(parse("family = nope\n").unwrap_err().exit_code(), crate::error::exit::DATA);
    }
}
