//! Verifiers over natural-language text.
//!
//! Conventions:
//! - words are whitespace-separated runs;
//! - a sentence ends at a run of `.`, `!`, `?` or `…` that follows
//!   non-space text and is followed by whitespace or the end of input; a
//!   trailing fragment containing any alphanumeric character counts as one
//!   more sentence;
//! - language is decided by stopword dominance: among words that appear in
//!   any supported stopword list, at least 80% must be in the target list.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Language {
    Spanish,
    French,
    Italian,
    Portuguese,
    German,
}

impl Language {
    pub const ALL: [Language; 5] = [
        Language::Spanish,
        Language::French,
        Language::Italian,
        Language::Portuguese,
        Language::German,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::Spanish => "es",
            Language::French => "fr",
            Language::Italian => "it",
            Language::Portuguese => "pt",
            Language::German => "de",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Language::Spanish => "Spanish",
            Language::French => "French",
            Language::Italian => "Italian",
            Language::Portuguese => "Portuguese",
            Language::German => "German",
        }
    }

    pub fn parse(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.code() == code)
    }

    pub fn stopwords(self) -> &'static [&'static str] {
        match self {
            Language::Spanish => ES,
            Language::French => FR,
            Language::Italian => IT,
            Language::Portuguese => PT,
            Language::German => DE,
        }
    }
}

const ES: &[&str] = &[
    "el", "la", "los", "las", "de", "del", "que", "y", "en", "un", "una", "es", "por", "para", "con",
    "no", "se", "su", "sus", "al", "lo", "como", "más", "pero", "este", "esta", "son", "también",
    "muy", "hay", "ser", "está", "puede", "sin", "sobre", "entre", "cuando", "todo", "ya", "porque",
];
const FR: &[&str] = &[
    "le", "la", "les", "de", "des", "du", "et", "en", "un", "une", "est", "pour", "que", "qui",
    "dans", "par", "pas", "sur", "au", "aux", "avec", "ce", "cette", "ces", "il", "elle", "sont",
    "plus", "mais", "ou", "nous", "vous", "leur", "être", "peut", "sans", "très", "aussi", "comme",
    "entre",
];
const IT: &[&str] = &[
    "il", "la", "le", "lo", "gli", "di", "del", "della", "che", "e", "è", "un", "una", "per", "con",
    "non", "sono", "nel", "nella", "al", "alla", "anche", "come", "più", "ma", "questo", "questa",
    "si", "da", "dei", "delle", "essere", "può", "molto", "tra", "quando", "ogni", "senza", "sul",
    "suo",
];
const PT: &[&str] = &[
    "o", "a", "os", "as", "de", "do", "da", "dos", "das", "que", "e", "em", "um", "uma", "é", "para",
    "com", "não", "no", "na", "por", "se", "mais", "como", "mas", "seu", "sua", "são", "também",
    "muito", "ao", "pelo", "pela", "isso", "este", "esta", "entre", "quando", "sem", "ser",
];
const DE: &[&str] = &[
    "der", "die", "das", "und", "ist", "nicht", "ein", "eine", "zu", "den", "dem", "mit", "von",
    "für", "auf", "sich", "auch", "es", "im", "sie", "wir", "ich", "werden", "sind", "wird", "oder",
    "aber", "bei", "nach", "wie", "noch", "kann", "nur", "über", "durch", "einen", "einem", "dass",
    "sehr", "zum",
];

/// Minimum share of stopword hits that must belong to the target language.
pub const LANGUAGE_DOMINANCE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CaseRule {
    Lower,
    Upper,
    /// First letter of every whitespace word uppercase, the rest lowercase.
    Title,
}

impl CaseRule {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseRule::Lower => "lower",
            CaseRule::Upper => "upper",
            CaseRule::Title => "title",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lower" => Some(CaseRule::Lower),
            "upper" => Some(CaseRule::Upper),
            "title" => Some(CaseRule::Title),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextRule {
    Language(Language),
    WordCount { min: usize, max: usize },
    Case(CaseRule),
    Sentences(usize),
}

impl TextRule {
    pub fn check(&self, text: &str) -> bool {
        match *self {
            TextRule::Language(l) => language_share(text, l).is_some_and(|s| s >= LANGUAGE_DOMINANCE),
            TextRule::WordCount { min, max } => (min..=max).contains(&word_count(text)),
            TextRule::Case(c) => case_matches(text, c),
            TextRule::Sentences(n) => sentence_count(text) == n,
        }
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn normalize(word: &str) -> alloc::string::String {
    word.trim_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .flat_map(char::to_lowercase)
        .collect()
}

/// Fraction of stopword hits that belong to `lang`; `None` when the text
/// contains no stopword of any supported language.
pub fn language_share(text: &str, lang: Language) -> Option<f64> {
    let mut any = 0usize;
    let mut target = 0usize;
    for w in text.split_whitespace() {
        let w = normalize(w);
        if w.is_empty() {
            continue;
        }
        let hit = |l: Language| l.stopwords().contains(&w.as_str());
        if Language::ALL.into_iter().any(hit) {
            any += 1;
            if hit(lang) {
                target += 1;
            }
        }
    }
    (any > 0).then(|| target as f64 / any as f64)
}

pub fn case_matches(text: &str, rule: CaseRule) -> bool {
    let cased = |c: &char| c.is_lowercase() || c.is_uppercase();
    if !text.chars().any(|c| cased(&c)) {
        return false;
    }
    match rule {
        CaseRule::Lower => !text.chars().any(char::is_uppercase),
        CaseRule::Upper => !text.chars().any(char::is_lowercase),
        CaseRule::Title => text.split_whitespace().all(|w| {
            let mut letters = w.chars().filter(cased);
            match letters.next() {
                None => true,
                Some(first) => first.is_uppercase() && letters.all(char::is_lowercase),
            }
        }),
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

pub fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0usize;
    // Whether alphanumeric content has appeared since the last counted boundary.
    let mut pending = false;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if is_terminal(c) {
            let start = i;
            while i < chars.len() && is_terminal(chars[i]) {
                i += 1;
            }
            let attached = start > 0 && !chars[start - 1].is_whitespace();
            let closes = i == chars.len() || chars[i].is_whitespace();
            if attached && closes && pending {
                count += 1;
                pending = false;
            }
            continue;
        }
        if c.is_alphanumeric() {
            pending = true;
        }
        i += 1;
    }
    count + usize::from(pending)
}
