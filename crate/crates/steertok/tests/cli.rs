use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
seed = 3
d_model = 16
n_layers = 1
n_heads = 2
max_seq_len = 64
pretrain_steps = 20
gate = 0.0
gate_prompts = 4
stage1_examples = 8
stage2_examples = 16
epochs = 1
batch_size = 4
n_prompts = 3
k = [2]
";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), TINY).unwrap();
        Run { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_steertok"));
        c.args(args)
            .arg("--config")
            .arg(self.path("run.toml"))
            .arg("--out-dir")
            .arg(self.path("out"))
            .env_remove("STEERTOK_OUT_DIR");
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.path("out").join(name)
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn log(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let r = Run::new();
    let out = r.ok(&["pretrain"]);
    assert!(out.contains("gate passed"), "{out}");
    assert!(r.out("model.stlm").exists());
    r.ok(&["train-behavior", "--all"]);
    let bank_after_stage1 = std::fs::read(r.out("bank.stbk")).unwrap();
    let and = r.ok(&["train-and"]);
    assert!(and.contains("max cos^2"), "{and}");
    // Stage two leaves the stage-one entries alone: the old bank is a prefix
    // of the new one, apart from the entry count.
    let bank = std::fs::read(r.out("bank.stbk")).unwrap();
    assert_eq!(bank[..44], bank_after_stage1[..44]);
    assert_eq!(bank[48..bank_after_stage1.len()], bank_after_stage1[48..]);
    let summary = r.ok(&["eval", "--method", "steering"]);
    assert!(summary.starts_with("method,split,k,cases,mean,best,delta_max\nsteering,seen,2,"), "{summary}");
    let csv = std::fs::read_to_string(r.out("eval-steering.csv")).unwrap();
    // 30 cross-category pairs, two orders each.
    assert_eq!(csv.lines().count(), 1 + 60);
    assert_eq!(std::fs::read_to_string(r.out("eval-steering-summary.csv")).unwrap(), summary);
    let l = log(&r.out("train-and.log.json"));
    assert_eq!(l["command"], "train-and");
    assert!(l["result"]["max_cos_sq"].as_f64().unwrap() < 1.0);
    assert_eq!(l["result"]["loss"].as_array().unwrap().len(), 4);
}

#[test]
fn retraining_requires_the_retrain_flag() {
    let r = Run::new();
    r.ok(&["pretrain"]);
    r.ok(&["train-behavior", "lang_a"]);
    let o = r.run(&["train-behavior", "lang_a"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("frozen"));
    let before = std::fs::read(r.out("bank.stbk")).unwrap();
    r.ok(&["train-behavior", "lang_a", "--retrain"]);
    assert_eq!(std::fs::read(r.out("bank.stbk")).unwrap(), before);
}

#[test]
fn lambda_override_is_recorded_in_the_run_log() {
    let r = Run::new();
    r.ok(&["pretrain"]);
    r.ok(&["train-behavior", "--all"]);
    r.ok(&["train-and", "--lambda", "0.0"]);
    let l = log(&r.out("train-and.log.json"));
    assert_eq!(l["overrides"]["lambda_orth"], 0.0);
    assert_eq!(l["config"]["lambda_orth"], 0.0);
    assert_eq!(l["result"]["lambda"], 0.0);
    r.ok(&["train-and", "--set", "lambda_orth=0.25"]);
    let l = log(&r.out("train-and.log.json"));
    assert_eq!(l["overrides"]["lambda_orth"], 0.25);
    assert_eq!(l["overrides"]["out_dir"], r.path("out").to_str().unwrap());
}

#[test]
fn train_and_before_behavior_tokens_is_a_missing_embedding_error() {
    let r = Run::new();
    r.ok(&["pretrain"]);
    let o = r.run(&["train-and"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("embedding `lang_a` not found"), "{}", stderr(&o));
    // A bank with only some seen behaviors is rejected the same way.
    r.ok(&["train-behavior", "lang_a"]);
    let o = r.run(&["train-and"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("len_2_4"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let r = Run::new();
    for args in [
        &["eval", "--method", "lora"][..],
        &["eval", "--suite", "both"],
        &["eval", "--k", "4"],
        &["train-and", "--and-init", "random"],
        &["train-and", "--set", "no_such_key=1"],
        &["train-and", "--set", "epochs=many"],
        &["frobnicate"],
        &["train-behavior"],
    ] {
        let o = r.run(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    let o = r.run(&["eval", "--method", "lora"]);
    assert!(stderr(&o).contains("unknown method `lora`"), "{}", stderr(&o));
    let help = Command::new(env!("CARGO_BIN_EXE_steertok")).arg("--help").output().unwrap();
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("train-behavior"));
}

#[test]
fn catalog_and_data_errors_exit_3() {
    let r = Run::new();
    let o = r.run(&["pretrain", "--catalog", "/nonexistent/dir/x.catalog"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    std::fs::write(r.path("bad.catalog"), "family = token\n[x]\ncategory = colour\n").unwrap();
    let o = r.run(&["pretrain", "--catalog", r.path("bad.catalog").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bad.catalog:3:"), "{}", stderr(&o));
    let o = r.run(&["eval", "--method", "instruction"]);
    assert_eq!(code(&o), 3, "missing model: {}", stderr(&o));
}

#[test]
fn version_and_fingerprint_mismatches_exit_4() {
    let r = Run::new();
    r.ok(&["pretrain"]);
    r.ok(&["train-behavior", "--all"]);
    // A bank trained against a different model.
    let other = Run::new();
    other.ok(&["pretrain", "--seed", "9"]);
    let o = r.run(&["eval", "--model", other.out("model.stlm").to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    // An unknown checkpoint version.
    let mut bytes = std::fs::read(r.out("model.stlm")).unwrap();
    bytes[4] = 7;
    std::fs::write(r.out("model.stlm"), bytes).unwrap();
    let o = r.run(&["eval", "--method", "instruction"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("version 7"));
}

#[test]
fn failed_gate_exits_5() {
    let r = Run::new();
    let o = r.run(&["pretrain", "--steps", "2", "--set", "gate=1.0"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("gate failed"), "{}", stderr(&o));
    let l = log(&r.out("pretrain.log.json"));
    assert_eq!(l["result"]["gate"]["passed"], false);
}

#[test]
fn instruction_eval_runs_without_a_bank() {
    let r = Run::new();
    r.ok(&["pretrain"]);
    assert!(!r.out("bank.stbk").exists());
    let s = r.ok(&["eval", "--method", "instruction", "--k", "1,3", "--suite", "unseen"]);
    assert!(s.contains("instruction,unseen,3,"), "{s}");
    assert!(s.contains("instruction,unseen,1,4,"), "{s}");
}

#[test]
fn out_dir_comes_from_the_environment_unless_flagged() {
    let r = Run::new();
    let env_dir = r.path("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_steertok"))
        .args(["pretrain", "--config"])
        .arg(r.path("run.toml"))
        .env("STEERTOK_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("model.stlm").exists());
    let l = log(&env_dir.join("pretrain.log.json"));
    assert_eq!(l["config"]["out_dir"], env_dir.to_str().unwrap());
}

#[test]
fn score_matches_the_golden_report() {
    let r = Run::new();
    let records = fixtures().join("score_records.jsonl");
    let stdout = r.ok(&["score", records.to_str().unwrap(), "--catalog", "text"]);
    let golden = fixtures().join("golden");
    let want_csv = std::fs::read(golden.join("score.csv")).unwrap();
    let want_summary = std::fs::read(golden.join("score-summary.csv")).unwrap();
    assert_eq!(std::fs::read(r.out("score.csv")).unwrap(), want_csv);
    assert_eq!(std::fs::read(r.out("score-summary.csv")).unwrap(), want_summary);
    assert_eq!(stdout.as_bytes(), &want_summary[..]);
}

#[test]
fn score_errors_carry_line_numbers() {
    let r = Run::new();
    std::fs::write(
        r.path("bad.jsonl"),
        "{\"id\":\"a\",\"behavior_ids\":[\"french\"],\"text\":\"le chat.\"}\n{\"id\":\"b\",\"behavior_ids\":[\"french\"],\"text\":3}\n",
    )
    .unwrap();
    let o = r.run(&["score", r.path("bad.jsonl").to_str().unwrap(), "--catalog", "text"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bad.jsonl:2:"), "{}", stderr(&o));
    std::fs::write(r.path("empty.jsonl"), "").unwrap();
    let s = r.ok(&["score", r.path("empty.jsonl").to_str().unwrap(), "--catalog", "text"]);
    assert!(s.contains("external,seen,2,0,-,-,-"), "{s}");
}

#[test]
fn report_summarizes_saved_csvs() {
    let r = Run::new();
    let records = fixtures().join("score_records.jsonl");
    let scored = r.ok(&["score", records.to_str().unwrap(), "--catalog", "text"]);
    let summary = r.ok(&["report", r.out("score.csv").to_str().unwrap(), "--out", r.path("s.csv").to_str().unwrap()]);
    assert_eq!(summary, scored);
    assert_eq!(std::fs::read_to_string(r.path("s.csv")).unwrap(), summary);
    let o = r.run(&["report", r.path("missing.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}
