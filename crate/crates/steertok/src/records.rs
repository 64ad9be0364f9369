//! Line-delimited JSON records: generated corpora and external generations.
//!
//! Token sequences are stored as whitespace-separated toy-vocabulary names,
//! so files stay readable and diffable.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use steertok_core::behaviors::{BehaviorSet, Family};
use steertok_core::datagen::Example;
use steertok_core::eval::ExternalRecord;
use steertok_core::vocab::Vocab;

use crate::error::{Error, Result};

/// One corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub prompt: String,
    pub instructions: Vec<String>,
    pub behavior_ids: Vec<String>,
    pub answer: String,
}

impl CorpusRecord {
    pub fn from_example(e: &Example) -> Self {
        let v = Vocab::toy();
        CorpusRecord {
            prompt: v.decode(&e.prompt),
            instructions: e.instructions.iter().map(|i| v.decode(i)).collect(),
            behavior_ids: e.behavior_ids.clone(),
            answer: v.decode(&e.answer),
        }
    }

    pub fn to_example(&self) -> steertok_core::Result<Example> {
        let v = Vocab::toy();
        Ok(Example {
            prompt: v.encode(&self.prompt)?,
            instructions: self.instructions.iter().map(|i| v.encode(i)).collect::<Result<_, _>>()?,
            behavior_ids: self.behavior_ids.clone(),
            answer: v.encode(&self.answer)?,
        })
    }
}

/// One external generation to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub behavior_ids: Vec<String>,
    pub text: String,
}

impl From<ScoreRecord> for ExternalRecord {
    fn from(r: ScoreRecord) -> Self {
        ExternalRecord { id: r.id, behavior_ids: r.behavior_ids, text: r.text }
    }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("records serialize");
        out.push(b'\n');
    }
    out
}

/// Reads a corpus, decoding token names; errors carry the line number.
pub fn read_corpus(path: &Path) -> Result<Vec<Example>> {
    let recs: Vec<CorpusRecord> = read_jsonl(path)?;
    recs.iter()
        .enumerate()
        .map(|(i, r)| r.to_example().map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    let recs: Vec<CorpusRecord> = examples.iter().map(CorpusRecord::from_example).collect();
    crate::artifacts::write_atomic(path, &to_jsonl(&recs))
}

/// Reads external generations and checks each against `set`; errors carry
/// the line number. Corpus lines are accepted too: their `answer` becomes
/// the scored text and `line-N` the id.
pub fn read_score_records(path: &Path, set: &BehaviorSet) -> Result<Vec<ExternalRecord>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Line {
        Score(ScoreRecord),
        Corpus(CorpusRecord),
    }
    let v = Vocab::toy();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExternalRecord = match serde_json::from_str::<Line>(&line) {
            Ok(Line::Score(r)) => r.into(),
            Ok(Line::Corpus(c)) => ExternalRecord { id: format!("line-{n}"), behavior_ids: c.behavior_ids, text: c.answer },
            Err(_) => {
                // Re-parse against the primary schema for a useful message.
                let e = serde_json::from_str::<ScoreRecord>(&line).err().map(|e| e.to_string());
                return Err(Error::parse(path, n, e.unwrap_or_else(|| "not a record".into())));
            }
        };
        if rec.behavior_ids.is_empty() {
            return Err(Error::parse(path, n, "record lists no behaviors"));
        }
        set.resolve(&rec.behavior_ids).map_err(|e| Error::parse(path, n, e.to_string()))?;
        if set.family() == Family::Token {
            v.encode(&rec.text).map_err(|e| Error::parse(path, n, e.to_string()))?;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes JSONL lines to any writer (used for streaming to stdout).
pub fn write_jsonl_to<T: Serialize>(w: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    w.write_all(&to_jsonl(items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use steertok_core::behaviors::{text_catalog, toy_catalog};
    use steertok_core::datagen::{gen_pretrain_corpus, CorpusSpec};

    fn file(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    fn err_line(e: Error) -> usize {
        match e {
            Error::Parse { line, .. } => line,
            e => panic!("expected a parse error, got {e}"),
        }
    }

    #[test]
    fn corpus_round_trips() {
        let set = toy_catalog();
        let ex: Vec<Example> = gen_pretrain_corpus(&set, &CorpusSpec::new(50, 4)).unwrap().map(|e| e.unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_corpus(&p, &ex).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), ex);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 50);
        assert!(text.starts_with("{\"prompt\":\"<bos>") || text.starts_with("{\"prompt\":"));
    }

    #[test]
    fn score_records_report_line_numbers() {
        let set = text_catalog();
        let (_d, p) = file(
            "{\"id\":\"a\",\"behavior_ids\":[\"french\"],\"text\":\"Le chat est sur la table.\"}\n\n{\"id\":\"b\",\"behavior_ids\":[\"french\"]}\n",
        );
        assert_eq!(err_line(read_score_records(&p, &set).unwrap_err()), 3);
        let (_d, p) = file("{\"id\":\"a\",\"behavior_ids\":[\"klingon\"],\"text\":\"x\"}\n");
        assert_eq!(err_line(read_score_records(&p, &set).unwrap_err()), 1);
        let (_d, p) = file("{\"id\":\"a\",\"behavior_ids\":[],\"text\":\"x\"}\n");
        assert_eq!(err_line(read_score_records(&p, &set).unwrap_err()), 1);
        let (_d, p) = file("not json\n");
        assert_eq!(err_line(read_score_records(&p, &set).unwrap_err()), 1);
    }

    #[test]
    fn empty_file_gives_no_records() {
        let (_d, p) = file("");
        assert!(read_score_records(&p, &text_catalog()).unwrap().is_empty());
    }

    #[test]
    fn token_records_must_use_the_toy_vocabulary() {
        let set = toy_catalog();
        let (_d, p) = file("{\"id\":\"a\",\"behavior_ids\":[\"lang_a\"],\"text\":\"a00 a01 . <eos>\"}\n");
        assert_eq!(read_score_records(&p, &set).unwrap().len(), 1);
        let (_d, p) = file("{\"id\":\"a\",\"behavior_ids\":[\"lang_a\"],\"text\":\"hello\"}\n");
        assert_eq!(err_line(read_score_records(&p, &set).unwrap_err()), 1);
    }

    #[test]
    fn corpus_lines_can_be_scored() {
        let set = toy_catalog();
        let ex: Vec<Example> = gen_pretrain_corpus(&set, &CorpusSpec::new(5, 9)).unwrap().map(|e| e.unwrap()).collect();
        let recs: Vec<CorpusRecord> = ex.iter().filter(|e| !e.behavior_ids.is_empty()).map(CorpusRecord::from_example).collect();
        let (_d, p) = file(&String::from_utf8(to_jsonl(&recs)).unwrap());
        let got = read_score_records(&p, &set).unwrap();
        assert_eq!(got.len(), recs.len());
        assert_eq!(got[0].id, "line-1");
        assert_eq!(got[0].text, recs[0].answer);
    }
}
