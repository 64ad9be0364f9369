use super::text::{case_matches, language_share, sentence_count, word_count};
use super::*;
use crate::model::{LMConfig, ModelParams};
use crate::vocab::{self, Vocab};
use alloc::vec;

fn toks(s: &str) -> Vec<TokenId> {
    Vocab::toy().encode(s).unwrap()
}

#[test]
fn toy_catalog_shape() {
    let c = toy_catalog();
    c.validate_catalog().unwrap();
    assert_eq!(c.len(), 9);
    assert_eq!(c.unseen().count(), 4);
    for cat in Category::ALL {
        assert_eq!(c.in_category(cat).filter(|b| b.split == Split::Unseen).count(), 1);
    }
    assert!(c.iter().all(|b| b.paraphrases.len() == 10));
}

#[test]
fn text_catalog_shape() {
    let c = text_catalog();
    c.validate_catalog().unwrap();
    assert_eq!(c.family(), Family::Text);
    assert_eq!(c.len(), 17);
    let unseen: Vec<_> = c.unseen().map(|b| b.id.as_str()).collect();
    assert_eq!(unseen, ["german", "words_70_90", "title_case", "sentences_3"]);
}

#[test]
fn token_rules() {
    let c = toy_catalog();
    let check = |id: &str, s: &str| c.get(id).unwrap().verify(Output::Tokens(&toks(s))).unwrap();
    assert!(check("lang_a", "a00 A03 . a15 ."));
    assert!(!check("lang_a", "a00 b03 ."));
    assert!(!check("lang_a", ". ."));
    assert!(!check("lang_a", "a00 t01"));
    assert!(check("len_2_4", "a00 b01 . a02 ."));
    assert!(!check("len_2_4", "a00 ."));
    assert!(check("marked", "A00 B01 ."));
    assert!(!check("marked", "A00 b01 ."));
    assert!(!check("marked", "."));
    assert!(check("sent_2", "a00 . a01 ."));
    assert!(!check("sent_2", "a00 a01 ."));
    // Everything after <eos> is ignored.
    let mut t = toks("a00 .");
    t.push(vocab::EOS);
    t.extend(toks("b00 . ."));
    assert!(check("sent_1", &Vocab::toy().decode(&t[..2])));
    assert!(c.get("sent_1").unwrap().verify(Output::Tokens(&t)).unwrap());
    assert!(c.get("lang_a").unwrap().verify(Output::Tokens(&t)).unwrap());
}

#[test]
fn family_mismatch_is_an_error() {
    let c = toy_catalog();
    assert!(c.get("lang_a").unwrap().verify(Output::Text("hola")).is_err());
}

#[test]
fn verify_all_is_a_conjunction() {
    let c = toy_catalog();
    let bs = c.resolve(&["lang_a", "len_2_4"]).unwrap();
    assert!(verify_all(&bs, Output::Tokens(&toks("a00 a01 ."))).unwrap());
    assert!(!verify_all(&bs, Output::Tokens(&toks("a00 ."))).unwrap());
    assert!(verify_all(&[], Output::Tokens(&[])).unwrap());
}

#[test]
fn spanish_example() {
    let t = "El consumo energético en una oficina pequeña es bajo.";
    let c = text_catalog();
    assert!(c.get("spanish").unwrap().verify(Output::Text(t)).unwrap());
    assert!(!c.get("french").unwrap().verify(Output::Text(t)).unwrap());
    assert_eq!(language_share("hello world", Language::Spanish), None);
}

#[test]
fn romance_languages_separate() {
    let fr = "Les exercices réguliers, comme la course ou le vélo, sont efficaces pour la santé des adolescents.";
    let pt = "O tema do amor revela que o relacionamento de Romeu e Julieta é baseado em paixão.";
    let it = "Il tema della poesia è la natura, che per il poeta non è mai solo un paesaggio.";
    let de = "Die Ergebnisse sind nicht eindeutig, aber sie zeigen auch, dass der Effekt bei Kindern stark ist.";
    for (t, l) in [(fr, Language::French), (pt, Language::Portuguese), (it, Language::Italian), (de, Language::German)] {
        for other in Language::ALL {
            let ok = TextRule::Language(other).check(t);
            assert_eq!(ok, other == l, "{t} as {}", other.code());
        }
    }
}

#[test]
fn words_and_case() {
    assert_eq!(word_count("  one two\tthree\n"), 3);
    assert_eq!(word_count(""), 0);
    assert!(case_matches("all lower, 42.", CaseRule::Lower));
    assert!(!case_matches("Not lower", CaseRule::Lower));
    assert!(!case_matches("1234", CaseRule::Lower));
    assert!(case_matches("ÉTÉ CHAUD!", CaseRule::Upper));
    assert!(case_matches("The Quick Brown Fox - 3 Times", CaseRule::Title));
    assert!(!case_matches("The quick Brown", CaseRule::Title));
    assert!(!case_matches("THE QUICK", CaseRule::Title));
}

#[test]
fn sentence_convention() {
    let cases = [
        ("", 0),
        ("Hello world", 1),
        ("Hi. Bye!", 2),
        ("Wait... what?", 2),
        ("Version 3.5 is out.", 1),
        ("Yes!!! No.", 2),
        ("One. Two. Three", 3),
        ("...", 0),
        ("A. . B.", 2),
    ];
    for (t, n) in cases {
        assert_eq!(sentence_count(t), n, "{t:?}");
    }
}

#[test]
fn sample_instruction_is_deterministic_and_covers_paraphrases() {
    let c = toy_catalog();
    let b = c.get("plain").unwrap();
    assert_eq!(b.sample_instruction(3), b.sample_instruction(3));
    let mut seen = alloc::collections::BTreeSet::new();
    for s in 0..400 {
        seen.insert(b.sample_instruction(s).tokens().unwrap().to_vec());
    }
    assert_eq!(seen.len(), 10);
}

#[test]
fn single_paraphrase_sampling() {
    let mut b = toy_catalog().get("plain").unwrap().clone();
    b.paraphrases.truncate(1);
    for s in 0..20 {
        assert_eq!(b.sample_instruction(s), &b.paraphrases[0]);
    }
}

#[test]
fn semantic_init_is_mean_of_rows() {
    let p = ModelParams::init(LMConfig::toy(1)).unwrap();
    let c = toy_catalog();
    let b = c.get("lang_a").unwrap();
    let e = b.semantic_init(&p).unwrap();
    let ids = b.paraphrases[0].tokens().unwrap();
    for j in 0..p.config().d_model {
        let want: f32 = ids.iter().map(|&t| p.token_embedding(t as usize).unwrap()[j]).sum::<f32>() / ids.len() as f32;
        assert!((e[j] - want).abs() < 1e-6);
    }
    let text = text_catalog();
    assert!(text.get("spanish").unwrap().semantic_init(&p).is_err());
}

#[test]
fn set_rejects_duplicates_and_mixed_families() {
    let c = toy_catalog();
    let a = c.get("lang_a").unwrap().clone();
    assert!(BehaviorSet::new(vec![a.clone(), a.clone()]).is_err());
    let t = text_catalog().get("spanish").unwrap().clone();
    assert!(BehaviorSet::new(vec![a.clone(), t]).is_err());
    let mut thin = a;
    thin.paraphrases.truncate(3);
    let s = BehaviorSet::new(vec![thin]).unwrap();
    assert!(s.validate_catalog().is_err());
}
