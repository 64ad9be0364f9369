//! The `steertok` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use steertok_core::distill::TrainLog;
use steertok_core::eval::{score_external, EvalReport};

use crate::artifacts::{load_bank, load_checkpoint, load_or_new_bank, save_bank, save_checkpoint, write_atomic};
use crate::catalog::resolve_catalog;
use crate::config::{parse_override, resolve, ConfigSources, Resolved, RunConfig};
use crate::error::{exit, Error, Result};
use crate::records::read_score_records;
use crate::{pipeline, report};

#[derive(Debug, Parser)]
#[command(name = "steertok", version, about = "Compositional steering tokens at desk scale")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run config; flags override its keys.
    #[arg(long, short = 'c', global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any config key (repeatable), e.g. `--set epochs=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed; every random stream is derived from it
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (also settable with STEERTOK_OUT_DIR).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// `toy`, `text` or a catalog file.
    #[arg(long, global = true)]
    catalog: Option<String>,
    /// Model checkpoint (default `<out_dir>/model.stlm`).
    #[arg(long, global = true, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Embedding bank (default `<out_dir>/bank.stbk`).
    #[arg(long, global = true, value_name = "FILE")]
    bank: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Pretrain the instruction-following model and check the accuracy gate.
    Pretrain {
        /// Pretraining steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Stage one: learn one steering embedding per behavior.
    TrainBehavior {
        /// Behavior ids to train.
        #[arg(required_unless_present = "all")]
        ids: Vec<String>,
        /// Train every behavior in the catalog.
        #[arg(long, conflicts_with = "ids")]
        all: bool,
        /// Unfreeze and retrain entries that already exist.
        #[arg(long)]
        retrain: bool,
        /// Passes over the distillation set
        #[arg(long)]
        epochs: Option<usize>,
        /// Peak learning rate
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Stage two: learn the `<and>` composition embedding.
    TrainAnd {
        /// Orthogonality weight.
        #[arg(long)]
        lambda: Option<f32>,
        /// zero | and_word | avg_tokens
        #[arg(long)]
        and_init: Option<String>,
        /// Disable the orthogonality term.
        #[arg(long)]
        no_orth: bool,
        /// Passes over the distillation set
        #[arg(long)]
        epochs: Option<usize>,
        /// Peak learning rate
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Decode the composition suite and write a report.
    Eval {
        /// instruction | steering | concat | hybrid | no_and
        #[arg(long)]
        method: Option<String>,
        /// Composition sizes, comma separated (1 = single behaviors).
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// all | seen | unseen
        #[arg(long)]
        suite: Option<String>,
        /// Held-out prompts per case.
        #[arg(long)]
        prompts: Option<usize>,
    },
    /// Score pre-generated outputs (JSONL `{id, behavior_ids, text}`).
    Score { records: PathBuf },
    /// Summarize existing per-order CSV reports.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Also write the summary to this file.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn push<T: Into<toml::Value>>(o: &mut Vec<(String, toml::Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        o.push((key.to_string(), v.into()));
    }
}

fn path_value(p: &Path) -> toml::Value {
    toml::Value::String(p.to_string_lossy().into_owned())
}

impl Cli {
    fn sources(&self, env_out_dir: Option<String>) -> Result<ConfigSources> {
        let c = &self.common;
        let mut o = Vec::new();
        for s in &c.set {
            o.push(parse_override(s)?);
        }
        push(&mut o, "seed", c.seed.map(|s| s as i64));
        push(&mut o, "out_dir", c.out_dir.as_deref().map(path_value));
        push(&mut o, "catalog", c.catalog.clone());
        push(&mut o, "model", c.model.as_deref().map(path_value));
        push(&mut o, "bank", c.bank.as_deref().map(path_value));
        let f = |x: f32| x as f64;
        match &self.cmd {
            Cmd::Pretrain { steps } => push(&mut o, "pretrain_steps", steps.map(|s| s as i64)),
            Cmd::TrainBehavior { epochs, lr, .. } => {
                push(&mut o, "epochs", epochs.map(|s| s as i64));
                push(&mut o, "lr", lr.map(f));
            }
            Cmd::TrainAnd { lambda, and_init, no_orth, epochs, lr } => {
                push(&mut o, "lambda_orth", lambda.map(f));
                push(&mut o, "and_init", and_init.clone());
                push(&mut o, "orth_enabled", no_orth.then_some(false));
                push(&mut o, "epochs", epochs.map(|s| s as i64));
                push(&mut o, "lr", lr.map(f));
            }
            Cmd::Eval { method, k, suite, prompts } => {
                push(&mut o, "method", method.clone());
                if !k.is_empty() {
                    o.push(("k".into(), toml::Value::Array(k.iter().map(|&k| toml::Value::Integer(k as i64)).collect())));
                }
                push(&mut o, "suite", suite.clone());
                push(&mut o, "n_prompts", prompts.map(|s| s as i64));
            }
            Cmd::Score { .. } | Cmd::Report { .. } => {}
        }
        Ok(ConfigSources { file: c.config.clone(), env_out_dir, overrides: o })
    }
}

/// Metadata shared by every run log: the resolved config and the keys that
/// were set explicitly, with their values.
fn run_log(command: &str, r: &Resolved, result: Value) -> Value {
    let config = serde_json::to_value(&r.config).expect("config serializes");
    let overrides: serde_json::Map<String, Value> =
        r.overridden.iter().filter_map(|k| Some((k.clone(), config.get(k)?.clone()))).collect();
    json!({ "command": command, "config": config, "overrides": overrides, "result": result })
}

fn write_log(cfg: &RunConfig, name: &str, log: &Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(log).expect("log serializes");
    bytes.push(b'\n');
    write_atomic(&cfg.out_path(&format!("{name}.log.json")), &bytes)
}

fn train_log_json(log: &TrainLog) -> Value {
    json!({
        "steps": log.steps,
        "loss": log.losses,
        "distill_loss": log.distill_losses,
        "orth_loss": log.orth_losses,
        "final_max_cos_sq": log.final_max_cos_sq,
    })
}

fn w(out: &mut dyn Write, s: impl AsRef<str>) {
    let _ = writeln!(out, "{}", s.as_ref());
}

/// Runs one command line. `env_out_dir` stands in for `STEERTOK_OUT_DIR`;
/// results go to `out`, progress to `err`.
pub fn run<I, T>(args: I, env_out_dir: Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    let resolved = resolve(&cli.sources(env_out_dir)?)?;
    let cfg = &resolved.config;
    match &cli.cmd {
        Cmd::Pretrain { .. } => {
            let set = resolve_catalog(&cfg.catalog)?;
            let steps = cfg.pretrain_steps;
            let every = (steps / 10).max(1);
            let (params, log) = pipeline::pretrain_model(cfg, &set, |s, loss| {
                if (s + 1) % every == 0 || s + 1 == steps {
                    let _ = writeln!(err, "pretrain step {}/{steps} loss {loss:.4}", s + 1);
                }
            })?;
            save_checkpoint(&cfg.model_path(), &params)?;
            let gate = pipeline::gate(&params, &set, cfg)?;
            let accs: serde_json::Map<String, Value> =
                gate.accuracies.iter().map(|(id, a)| (id.clone(), json!(a))).collect();
            write_log(
                cfg,
                "pretrain",
                &run_log(
                    "pretrain",
                    &resolved,
                    json!({
                        "fingerprint": params.fingerprint().to_string(),
                        "n_params": params.n_params(),
                        "loss": log.losses,
                        "gate": { "threshold": gate.threshold, "accuracy": accs, "passed": gate.passed() },
                    }),
                ),
            )?;
            w(out, format!("model {} ({} parameters)", cfg.model_path().display(), params.n_params()));
            w(out, format!("fingerprint {}", params.fingerprint()));
            for (id, a) in &gate.accuracies {
                w(out, format!("gate {id:<12} {a:.3}"));
            }
            if !gate.passed() {
                let fails: Vec<String> = gate.failures().iter().map(|(id, a)| format!("{id} {a:.3}")).collect();
                return Err(Error::Gate(format!(
                    "held-out instruction accuracy below {} for: {}",
                    gate.threshold,
                    fails.join(", ")
                )));
            }
            w(out, format!("gate passed (min {:.3} >= {})", gate.min(), gate.threshold));
        }
        Cmd::TrainBehavior { ids, all, retrain, .. } => {
            let set = resolve_catalog(&cfg.catalog)?;
            pipeline::require_token_family(&set)?;
            let params = load_checkpoint(&cfg.model_path())?;
            let mut bank = load_or_new_bank(&cfg.bank_path(), &params)?;
            let ids: Vec<String> = if *all { set.iter().map(|b| b.id.clone()).collect() } else { ids.clone() };
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            set.resolve(&refs)?;
            if *retrain {
                for id in &refs {
                    if bank.entry(id).is_some() {
                        bank.set_frozen(id, false)?;
                    }
                }
            }
            let train = cfg.train_config();
            let logs = pipeline::train_behaviors(&params, &mut bank, &set, &refs, cfg, &train)?;
            save_bank(&cfg.bank_path(), &bank)?;
            let mut per = serde_json::Map::new();
            for (id, log) in &logs {
                per.insert(id.clone(), train_log_json(log));
                let (a, z) = log.smoothed_ends(4).unwrap_or((f32::NAN, f32::NAN));
                w(out, format!("{id:<12} loss {a:.4} -> {z:.4} ({} steps)", log.steps));
            }
            let name = if *all { "train-behavior".to_string() } else { format!("train-behavior-{}", ids.join("+")) };
            write_log(cfg, &name, &run_log("train-behavior", &resolved, Value::Object(per)))?;
            w(out, format!("bank {} ({} entries)", cfg.bank_path().display(), bank.len()));
        }
        Cmd::TrainAnd { .. } => {
            let set = resolve_catalog(&cfg.catalog)?;
            pipeline::require_token_family(&set)?;
            let params = load_checkpoint(&cfg.model_path())?;
            let bank_path = cfg.bank_path();
            // A missing bank is an empty one: train_and then names the first
            // seen behavior without an embedding.
            let mut bank = load_or_new_bank(&bank_path, &params)?;
            let train = cfg.train_config();
            let log = pipeline::train_and(&params, &mut bank, &set, cfg, &train)?;
            save_bank(&bank_path, &bank)?;
            let mut result = train_log_json(&log);
            result["lambda"] = json!(train.lambda());
            result["max_cos_sq"] = json!(pipeline::and_max_cos_sq(&bank)?);
            write_log(cfg, "train-and", &run_log("train-and", &resolved, result))?;
            let (a, z) = log.smoothed_ends(4).unwrap_or((f32::NAN, f32::NAN));
            w(out, format!("<and> loss {a:.4} -> {z:.4} ({} steps, lambda {})", log.steps, train.lambda()));
            if let Some(c) = log.final_max_cos_sq {
                w(out, format!("max cos^2 to behavior embeddings {c:.6}"));
            }
        }
        Cmd::Eval { .. } => {
            let set = resolve_catalog(&cfg.catalog)?;
            pipeline::require_token_family(&set)?;
            let method = cfg.method()?;
            let params = load_checkpoint(&cfg.model_path())?;
            let bank = if method.needs_bank() { Some(load_bank(&cfg.bank_path())?) } else { None };
            let rep = pipeline::evaluate(&params, &set, bank.as_ref(), cfg, method)?;
            finish_report(cfg, &resolved, &format!("eval-{}", method.as_str()), method.as_str(), &rep, out)?;
        }
        Cmd::Score { records } => {
            let set = resolve_catalog(&cfg.catalog)?;
            let recs = read_score_records(records, &set)?;
            let rep = score_external(&recs, &set)?;
            finish_report(cfg, &resolved, "score", "external", &rep, out)?;
        }
        Cmd::Report { csv, out: dest } => {
            let mut text = Vec::new();
            let mut merged: Vec<(String, EvalReport)> = Vec::new();
            for p in csv {
                for (m, r) in report::read_orders_csv(p)? {
                    match merged.iter_mut().find(|(n, _)| *n == m) {
                        Some((_, acc)) => acc.orders.extend(r.orders),
                        None => merged.push((m, r)),
                    }
                }
            }
            for (i, (m, r)) in merged.iter().enumerate() {
                let s = report::summary_csv(m, r);
                // One header for the whole block.
                let body = if i == 0 { &s[..] } else { &s[s.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1)..] };
                text.extend_from_slice(body);
            }
            if merged.is_empty() {
                text = report::summary_csv("-", &EvalReport::default());
            }
            if let Some(dest) = dest {
                write_atomic(dest, &text)?;
            }
            let _ = out.write_all(&text);
        }
    }
    Ok(())
}

fn finish_report(
    cfg: &RunConfig,
    resolved: &Resolved,
    stem: &str,
    method: &str,
    rep: &EvalReport,
    out: &mut dyn Write,
) -> Result<()> {
    report::write_report(&cfg.out_dir, stem, method, rep)?;
    let aggs: Vec<Value> = rep
        .aggregates()
        .iter()
        .map(|a| {
            json!({ "split": a.split_class.as_str(), "k": a.k, "cases": a.n_cases,
                    "mean": a.mean, "best": a.best, "delta_max": a.delta_max })
        })
        .collect();
    write_log(cfg, stem, &run_log(stem, resolved, json!({ "orders": rep.orders.len(), "summary": aggs })))?;
    let _ = out.write_all(&report::summary_csv(method, rep));
    Ok(())
}

/// Entry point used by the binary: runs and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    // Help and version requests print to stdout and succeed.
    if let Err(e) = Cli::try_parse_from(&args) {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            let _ = e.print();
            return exit::OK;
        }
        let _ = e.print();
        return exit::USAGE;
    }
    let env = ConfigSources::default().with_env().env_out_dir;
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    match run(args, env, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
