use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Behavior, BehaviorSet, Category, Instruction, Split, TokenRule, VerifierSpec};
use crate::vocab::{Alphabet, Form, Vocab};
use crate::Result;

fn language(x: &str) -> [String; 10] {
    [
        format!("answer in {x}"),
        format!("respond in {x}"),
        format!("provide your answer in {x}"),
        format!("reply in {x}"),
        format!("give a response in {x}"),
        format!("write your response in {x}"),
        format!("use {x} for your answer"),
        format!("answer using the {x} language"),
        format!("respond using {x}"),
        format!("your answer should be in {x}"),
    ]
}

fn length(lo: usize, hi: usize) -> [String; 10] {
    let (a, b) = (format!("n{lo}"), format!("n{hi}"));
    [
        format!("answer in {a} to {b} words"),
        format!("give a response that is {a} to {b} words long"),
        format!("respond in {a} - {b} words"),
        format!("keep your answer between {a} and {b} words"),
        format!("your response should contain {a} to {b} words"),
        format!("limit your answer to {a} - {b} words"),
        format!("write between {a} and {b} words"),
        format!("provide an answer of {a} to {b} words"),
        format!("reply with {a} to {b} words"),
        format!("your answer should be between {a} and {b} words long"),
    ]
}

fn format_(f: &str) -> [String; 10] {
    [
        format!("answer in {f} letters"),
        format!("use {f} letters"),
        format!("write your answer in {f} format"),
        format!("respond using only {f} letters"),
        format!("format your response in {f} letters"),
        format!("make every word {f}"),
        format!("apply {f} formatting to your answer"),
        format!("use {f} letters throughout"),
        format!("reply with all {f} letters"),
        format!("your answer should be in {f} format"),
    ]
}

fn structure(n: usize) -> [String; 10] {
    let k = format!("n{n}");
    let s = if n == 1 { "sentence" } else { "sentences" };
    [
        format!("answer in {k} {s}"),
        format!("respond with exactly {k} {s}"),
        format!("write your answer in {k} {s}"),
        format!("your response should contain {k} {s}"),
        format!("use exactly {k} {s}"),
        format!("give a response of {k} {s}"),
        format!("reply in exactly {k} {s}"),
        format!("provide an answer consisting of {k} {s}"),
        format!("your answer should be {k} {s} long"),
        format!("keep your response to {k} {s}"),
    ]
}

/// The built-in toy catalog: nine behaviors over four categories, one
/// unseen behavior per category.
pub fn toy_catalog() -> BehaviorSet {
    let v = Vocab::toy();
    let mk = |id: &str, category, split, phrases: [String; 10], rule| -> Result<Behavior> {
        let paraphrases = phrases
            .iter()
            .map(|p| v.encode(p).map(Instruction::Tokens))
            .collect::<Result<Vec<_>>>()?;
        Ok(Behavior {
            id: id.into(),
            category,
            split,
            paraphrases,
            verifier: VerifierSpec::Token(rule),
            init_paraphrase: 0,
        })
    };
    use Category::*;
    use Split::*;
    let behaviors = [
        mk("lang_a", Language, Seen, language("lang_a"), TokenRule::Alphabet(Alphabet::A)),
        mk("lang_b", Language, Unseen, language("lang_b"), TokenRule::Alphabet(Alphabet::B)),
        mk("len_2_4", Length, Seen, length(2, 4), TokenRule::WordCount { min: 2, max: 4 }),
        mk("len_6_8", Length, Unseen, length(6, 8), TokenRule::WordCount { min: 6, max: 8 }),
        mk("len_10_12", Length, Seen, length(10, 12), TokenRule::WordCount { min: 10, max: 12 }),
        mk("plain", Format, Seen, format_("plain"), TokenRule::Form(Form::Plain)),
        mk("marked", Format, Unseen, format_("marked"), TokenRule::Form(Form::Marked)),
        mk("sent_1", Structure, Seen, structure(1), TokenRule::Separators(1)),
        mk("sent_2", Structure, Unseen, structure(2), TokenRule::Separators(2)),
    ];
    let behaviors = behaviors
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .expect("toy paraphrases use only toy vocabulary");
    BehaviorSet::new(behaviors).expect("toy catalog is well formed")
}
