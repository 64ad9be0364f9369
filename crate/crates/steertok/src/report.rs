//! Report files: one CSV row per (combination, order), plus a summary block
//! of case-averaged mean / best / Δ_max per split and composition size.

use std::path::Path;

use serde::{Deserialize, Serialize};
use steertok_core::behaviors::Split;
use steertok_core::eval::{Aggregate, EvalReport, OrderResult};

use crate::error::{Error, Result};

/// Separator between behavior ids inside one CSV field.
pub const ID_SEP: char = '+';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    method: String,
    combo: String,
    order: usize,
    behavior_ids: String,
    split: String,
    k: usize,
    n: usize,
    correct: usize,
    truncated: usize,
    accuracy: String,
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

/// The per-order CSV.
pub fn orders_csv(method: &str, report: &EvalReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for o in &report.orders {
        w.serialize(Row {
            method: method.to_string(),
            combo: o.combo.join(&ID_SEP.to_string()),
            order: o.order,
            behavior_ids: o.behavior_ids.join(&ID_SEP.to_string()),
            split: o.split_class.as_str().to_string(),
            k: o.k(),
            n: o.n,
            correct: o.correct,
            truncated: o.truncated,
            accuracy: fmt(o.accuracy()),
        })
        .expect("in-memory csv");
    }
    if report.orders.is_empty() {
        // Keep the header so empty reports are still well-formed.
        w.write_record(["method", "combo", "order", "behavior_ids", "split", "k", "n", "correct", "truncated", "accuracy"])
            .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Reads a per-order CSV back, grouped by method in order of appearance.
pub fn read_orders_csv(path: &Path) -> Result<Vec<(String, EvalReport)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        k => Error::format(path, format!("{k:?}")),
    })?;
    let mut out: Vec<(String, EvalReport)> = Vec::new();
    for rec in r.deserialize::<Row>() {
        let row = rec.map_err(|e| csv_err(path, e))?;
        let split = Split::parse(&row.split)
            .ok_or_else(|| Error::format(path, format!("unknown split `{}`", row.split)))?;
        let ids = |s: &str| s.split(ID_SEP).map(str::to_string).collect::<Vec<_>>();
        let o = OrderResult {
            combo: ids(&row.combo),
            behavior_ids: ids(&row.behavior_ids),
            split_class: split,
            order: row.order,
            n: row.n,
            correct: row.correct,
            truncated: row.truncated,
        };
        if o.k() != row.k || o.correct > o.n || o.truncated > o.n - o.correct {
            return Err(Error::format(path, format!("inconsistent counts for `{}`", row.combo)));
        }
        match out.iter_mut().find(|(m, _)| *m == row.method) {
            Some((_, rep)) => rep.orders.push(o),
            None => out.push((row.method, EvalReport::from_orders(vec![o]))),
        }
    }
    Ok(out)
}

/// Summary rows: every (split, k) in the report, and always the four
/// {seen, unseen} × {2, 3} buckets. Empty buckets print `-`.
pub fn summary_csv(method: &str, report: &EvalReport) -> Vec<u8> {
    let aggs = report.aggregates();
    let mut keys: Vec<(Split, usize)> = aggs.iter().map(|a| (a.split_class, a.k)).collect();
    for s in [Split::Seen, Split::Unseen] {
        for k in [2, 3] {
            if !keys.contains(&(s, k)) {
                keys.push((s, k));
            }
        }
    }
    keys.sort();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "split", "k", "cases", "mean", "best", "delta_max"]).expect("in-memory csv");
    for (s, k) in keys {
        let a: Option<&Aggregate> = aggs.iter().find(|a| a.split_class == s && a.k == k);
        let (n, mean, best, dm) = match a {
            Some(a) => (a.n_cases.to_string(), fmt(a.mean), fmt(a.best), fmt(a.delta_max)),
            None => ("0".into(), "-".into(), "-".into(), "-".into()),
        };
        w.write_record([method, s.as_str(), &k.to_string(), &n, &mean, &best, &dm]).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Writes `<stem>.csv` and `<stem>-summary.csv` into `dir`.
pub fn write_report(dir: &Path, stem: &str, method: &str, report: &EvalReport) -> Result<()> {
    crate::artifacts::write_atomic(&dir.join(format!("{stem}.csv")), &orders_csv(method, report))?;
    crate::artifacts::write_atomic(&dir.join(format!("{stem}-summary.csv")), &summary_csv(method, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(combo: &[&str], ids: &[&str], split: Split, order: usize, correct: usize) -> OrderResult {
        OrderResult {
            combo: combo.iter().map(|s| s.to_string()).collect(),
            behavior_ids: ids.iter().map(|s| s.to_string()).collect(),
            split_class: split,
            order,
            n: 10,
            correct,
            truncated: 10 - correct,
        }
    }

    fn sample() -> EvalReport {
        EvalReport::from_orders(vec![
            order(&["a", "b"], &["a", "b"], Split::Seen, 0, 8),
            order(&["a", "b"], &["b", "a"], Split::Seen, 1, 7),
            order(&["a", "c"], &["a", "c"], Split::Unseen, 0, 5),
            order(&["a", "c"], &["c", "a"], Split::Unseen, 1, 9),
        ])
    }

    #[test]
    fn summary_block_shape() {
        let s = String::from_utf8(summary_csv("steering", &sample())).unwrap();
        assert_eq!(
            s,
            "method,split,k,cases,mean,best,delta_max\n\
             steering,seen,2,1,0.750000,0.800000,0.100000\n\
             steering,seen,3,0,-,-,-\n\
             steering,unseen,2,1,0.700000,0.900000,0.400000\n\
             steering,unseen,3,0,-,-,-\n"
        );
    }

    #[test]
    fn orders_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let rep = sample();
        write_report(dir.path(), "r", "concat", &rep).unwrap();
        let back = read_orders_csv(&dir.path().join("r.csv")).unwrap();
        assert_eq!(back, vec![("concat".to_string(), rep)]);
        let first = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(first.starts_with("method,combo,order,behavior_ids,split,k,n,correct,truncated,accuracy\n"));
        assert!(first.contains("concat,a+b,1,b+a,seen,2,10,7,3,0.700000\n"));
    }

    #[test]
    fn empty_report_keeps_header() {
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), "e", "x", &EvalReport::default()).unwrap();
        assert!(read_orders_csv(&dir.path().join("e.csv")).unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "method,combo,order,behavior_ids,split,k,n,correct,truncated,accuracy\nm,a,0,a,seen,1,x,1,0,1\n")
            .unwrap();
        assert!(matches!(read_orders_csv(&p).unwrap_err(), Error::Parse { line: 2, .. }));
        std::fs::write(&p, "method,combo,order,behavior_ids,split,k,n,correct,truncated,accuracy\nm,a,0,a,seen,1,3,4,0,1\n")
            .unwrap();
        assert!(matches!(read_orders_csv(&p).unwrap_err(), Error::Format { .. }));
    }
}
