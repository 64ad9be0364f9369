use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Behavior, BehaviorSet, CaseRule, Category, Instruction, Language, Split, TextRule, VerifierSpec};

fn language(l: &str) -> [String; 10] {
    [
        format!("Answer in {l}."),
        format!("Respond in {l}."),
        format!("Provide your answer in {l}."),
        format!("Reply in {l}."),
        format!("Give your response in {l}."),
        format!("Write your response in {l}."),
        format!("Use {l} for your answer."),
        format!("Answer using the {l} language."),
        format!("Respond using {l} only."),
        format!("Your answer should be written in {l}."),
    ]
}

fn length(a: usize, b: usize) -> [String; 10] {
    [
        format!("Answer in {a} to {b} words."),
        format!("Give a response that is {a}-{b} words long."),
        format!("Respond in {a}-{b} words."),
        format!("Keep your answer between {a} and {b} words."),
        format!("Your response should contain {a} to {b} words."),
        format!("Limit your answer to {a}-{b} words."),
        format!("Write between {a} and {b} words."),
        format!("Provide an answer of {a} to {b} words."),
        format!("Reply with {a} to {b} words."),
        format!("Your answer should be between {a} and {b} words long."),
    ]
}

fn case(c: &str) -> [String; 10] {
    [
        format!("Answer in {c}."),
        format!("Use {c} letters only."),
        format!("Write your answer in {c}."),
        format!("Respond using only {c}."),
        format!("Format your response in {c}."),
        format!("Make your entire response {c}."),
        format!("Apply {c} formatting to your answer."),
        format!("Use {c} throughout your answer."),
        format!("Reply entirely in {c}."),
        format!("Your answer should be in {c}."),
    ]
}

fn sentences(n: usize) -> [String; 10] {
    let s = if n == 1 { "sentence" } else { "sentences" };
    [
        format!("Answer in {n} {s}."),
        format!("Respond with exactly {n} {s}."),
        format!("Write your answer in {n} {s}."),
        format!("Your response should contain {n} {s}."),
        format!("Use exactly {n} {s}."),
        format!("Give a response of {n} {s}."),
        format!("Reply in exactly {n} {s}."),
        format!("Provide an answer consisting of {n} {s}."),
        format!("Your answer should be {n} {s} long."),
        format!("Keep your response to {n} {s}."),
    ]
}

/// The built-in natural-language catalog used for scoring external outputs.
pub fn text_catalog() -> BehaviorSet {
    let mk = |id: String, category, split, phrases: [String; 10], rule| Behavior {
        id,
        category,
        split,
        paraphrases: phrases.into_iter().map(Instruction::Text).collect(),
        verifier: VerifierSpec::Text(rule),
        init_paraphrase: 0,
    };
    let mut out = Vec::new();
    for l in Language::ALL {
        let split = if l == Language::German { Split::Unseen } else { Split::Seen };
        out.push(mk(
            l.name().to_lowercase(),
            Category::Language,
            split,
            language(l.name()),
            TextRule::Language(l),
        ));
    }
    for (a, b) in [(10, 50), (50, 70), (70, 90), (90, 120)] {
        let split = if a == 70 { Split::Unseen } else { Split::Seen };
        out.push(mk(
            format!("words_{a}_{b}"),
            Category::Length,
            split,
            length(a, b),
            TextRule::WordCount { min: a, max: b },
        ));
    }
    for (id, c, phrase) in [
        ("lowercase", CaseRule::Lower, "lowercase"),
        ("uppercase", CaseRule::Upper, "uppercase"),
        ("title_case", CaseRule::Title, "title case"),
    ] {
        let split = if c == CaseRule::Title { Split::Unseen } else { Split::Seen };
        out.push(mk(id.into(), Category::Format, split, case(phrase), TextRule::Case(c)));
    }
    for n in 1..=5 {
        let split = if n == 3 { Split::Unseen } else { Split::Seen };
        out.push(mk(
            format!("sentences_{n}"),
            Category::Structure,
            split,
            sentences(n),
            TextRule::Sentences(n),
        ));
    }
    BehaviorSet::new(out).expect("text catalog is well formed")
}
