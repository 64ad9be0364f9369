//! Run configuration: one flat TOML table of typed keys.
//!
//! Values are layered: built-in defaults, then the config file, then the
//! `STEERTOK_OUT_DIR` environment variable, then command-line flags. The
//! merged table is type-checked in one pass before anything runs, and the
//! resolved config is echoed into every run log.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use steertok_core::distill::{AndInit, AndLayout, TrainConfig};
use steertok_core::eval::{Method, SuitePolicy};
use steertok_core::model::{LMConfig, PretrainConfig};

use crate::error::{Error, Result};

/// Overrides the `out_dir` key.
pub const OUT_DIR_ENV: &str = "STEERTOK_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every component derives a named sub-stream from it.
    pub seed: u64,
    /// `toy`, `text` or a catalog file.
    pub catalog: String,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/model.stlm`.
    pub model: Option<PathBuf>,
    /// Defaults to `<out_dir>/bank.stbk`.
    pub bank: Option<PathBuf>,

    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,

    pub pretrain_steps: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f32,
    /// Minimum held-out instruction accuracy, per single behavior.
    pub gate: f64,
    pub gate_prompts: usize,

    pub temperature: f32,
    pub lambda_orth: f32,
    pub lr: f32,
    pub weight_decay: f32,
    pub clip_norm: f32,
    pub epochs: usize,
    pub warmup_frac: f32,
    pub batch_size: usize,
    pub and_init: String,
    pub and_layout: String,
    pub orth_enabled: bool,
    pub order_shuffle: bool,
    /// Stage-one examples per behavior.
    pub stage1_examples: usize,
    /// Stage-two composition examples.
    pub stage2_examples: usize,

    pub method: String,
    /// Composition sizes to evaluate (1 evaluates single behaviors).
    pub k: Vec<usize>,
    /// `all`, `seen` or `unseen`.
    pub suite: String,
    /// Held-out prompts per case.
    pub n_prompts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: 0,
            catalog: "toy".into(),
            out_dir: PathBuf::from("steertok-out"),
            model: None,
            bank: None,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 64,
            pretrain_steps: 1500,
            pretrain_batch_size: 16,
            pretrain_lr: 3e-3,
            gate: 0.95,
            gate_prompts: 100,
            temperature: t.temperature,
            lambda_orth: t.lambda_orth,
            lr: 1e-2,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            epochs: 4,
            warmup_frac: t.warmup_frac,
            batch_size: t.batch_size,
            and_init: t.and_init.as_str().into(),
            and_layout: t.and_layout.as_str().into(),
            orth_enabled: t.orth_enabled,
            order_shuffle: t.order_shuffle,
            stage1_examples: 512,
            stage2_examples: 1024,
            method: "steering".into(),
            k: vec![2, 3],
            suite: "all".into(),
            n_prompts: 200,
        }
    }
}

/// Parses a `key=value` override. The value is read as a TOML value when
/// possible (`0.5`, `true`, `[2, 3]`) and as a bare string otherwise.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{s}` is not of the form key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Usage(format!("override `{s}` has an empty key")));
    }
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Everything that feeds a [`RunConfig`], in increasing precedence.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    pub env_out_dir: Option<String>,
    pub overrides: Vec<(String, toml::Value)>,
}

impl ConfigSources {
    /// Reads the output-directory variable from the process environment.
    pub fn with_env(mut self) -> Self {
        self.env_out_dir = std::env::var(OUT_DIR_ENV).ok().filter(|s| !s.is_empty());
        self
    }
}

/// A resolved config plus the keys set explicitly on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub overridden: Vec<String>,
}

pub fn resolve(src: &ConfigSources) -> Result<Resolved> {
    let mut table = toml::Table::new();
    if let Some(path) = &src.file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        table = toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })?;
    }
    if let Some(dir) = &src.env_out_dir {
        table.insert("out_dir".into(), toml::Value::String(dir.clone()));
    }
    let mut overridden = Vec::new();
    for (k, v) in &src.overrides {
        table.insert(k.clone(), v.clone());
        if !overridden.contains(k) {
            overridden.push(k.clone());
        }
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Usage(format!("invalid configuration: {}", e.message())))?;
    config.validate()?;
    Ok(Resolved { config, overridden })
}

impl RunConfig {
    /// Type-level checks that need more than serde: enum-like strings,
    /// model shape and optimizer ranges.
    pub fn validate(&self) -> Result<()> {
        self.and_init()?;
        self.and_layout()?;
        self.method()?;
        self.suite()?;
        self.lm_config().validate().map_err(|e| Error::Usage(e.to_string()))?;
        self.train_config().validate().map_err(|e| Error::Usage(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.gate) {
            return Err(Error::Usage("gate must be in [0, 1]".into()));
        }
        if self.k.is_empty() || self.k.iter().any(|&k| !(1..=3).contains(&k)) {
            return Err(Error::Usage("k must list sizes between 1 and 3".into()));
        }
        if self.n_prompts == 0 || self.gate_prompts == 0 {
            return Err(Error::Usage("prompt counts must be positive".into()));
        }
        if self.pretrain_steps == 0 || self.pretrain_batch_size == 0 {
            return Err(Error::Usage("pretraining needs positive steps and batch size".into()));
        }
        Ok(())
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir.join("model.stlm"))
    }

    pub fn bank_path(&self) -> PathBuf {
        self.bank.clone().unwrap_or_else(|| self.out_dir.join("bank.stbk"))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn lm_config(&self) -> LMConfig {
        LMConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_seq_len: self.max_seq_len,
            ..LMConfig::toy(steertok_core::rng::substream(self.seed, "init"))
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch_size,
            lr: self.pretrain_lr,
            seed: steertok_core::rng::substream(self.seed, "pretrain"),
            ..PretrainConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            temperature: self.temperature,
            lambda_orth: self.lambda_orth,
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            epochs: self.epochs,
            warmup_frac: self.warmup_frac,
            batch_size: self.batch_size,
            seed: steertok_core::rng::substream(self.seed, "train"),
            and_init: AndInit::parse(&self.and_init).unwrap_or(AndInit::Zero),
            orth_enabled: self.orth_enabled,
            order_shuffle: self.order_shuffle,
            and_layout: AndLayout::parse(&self.and_layout).unwrap_or(AndLayout::Interleaved),
        }
    }

    pub fn and_init(&self) -> Result<AndInit> {
        AndInit::parse(&self.and_init)
            .ok_or_else(|| Error::Usage(format!("unknown and_init `{}` (zero | and_word | avg_tokens)", self.and_init)))
    }

    pub fn and_layout(&self) -> Result<AndLayout> {
        AndLayout::parse(&self.and_layout)
            .ok_or_else(|| Error::Usage(format!("unknown and_layout `{}`", self.and_layout)))
    }

    pub fn method(&self) -> Result<Method> {
        Method::parse(&self.method).ok_or_else(|| {
            let all: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
            Error::Usage(format!("unknown method `{}` (expected one of {})", self.method, all.join(", ")))
        })
    }

    pub fn suite(&self) -> Result<SuitePolicy> {
        match self.suite.as_str() {
            "all" => Ok(SuitePolicy::All),
            "seen" => Ok(SuitePolicy::SeenOnly),
            "unseen" => Ok(SuitePolicy::UnseenOnly),
            s => Err(Error::Usage(format!("unknown suite `{s}` (all | seen | unseen)"))),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file on its own (no environment, no overrides).
    pub fn load(path: &Path) -> Result<Self> {
        Ok(resolve(&ConfigSources { file: Some(path.to_path_buf()), ..Default::default() })?.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(overrides: &[&str]) -> Result<Resolved> {
        let overrides = overrides.iter().map(|s| parse_override(s)).collect::<Result<_>>()?;
        resolve(&ConfigSources { overrides, ..Default::default() })
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_are_typed() {
        let r = with(&["lambda_orth=0.0", "k=[3]", "method=concat", "out_dir=/tmp/x"]).unwrap();
        assert_eq!(r.config.lambda_orth, 0.0);
        assert_eq!(r.config.k, vec![3]);
        assert_eq!(r.config.method, "concat");
        assert_eq!(r.config.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(r.overridden, ["lambda_orth", "k", "method", "out_dir"]);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        for bad in ["lambda_orth=abc", "epochs=-1", "nope=1", "method=lora", "suite=both", "k=[4]", "lambda_orth=-1"] {
            let e = with(&[bad]).unwrap_err();
            assert_eq!(e.exit_code(), crate::error::exit::USAGE, "{bad}: {e}");
        }
        assert!(parse_override("no-equals").is_err());
    }

    #[test]
    fn precedence_is_file_then_env_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.toml");
        std::fs::write(&f, "seed = 7\nout_dir = \"from-file\"\nepochs = 3\n").unwrap();
        let mut src = ConfigSources { file: Some(f.clone()), ..Default::default() };
        assert_eq!(resolve(&src).unwrap().config.out_dir, PathBuf::from("from-file"));
        src.env_out_dir = Some("from-env".into());
        let r = resolve(&src).unwrap().config;
        assert_eq!((r.out_dir.to_str().unwrap(), r.seed, r.epochs), ("from-env", 7, 3));
        src.overrides.push(parse_override("out_dir=from-flag").unwrap());
        assert_eq!(resolve(&src).unwrap().config.out_dir, PathBuf::from("from-flag"));
    }

    #[test]
    fn malformed_file_reports_a_line() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.toml");
        std::fs::write(&f, "seed = 1\n\nepochs = = 2\n").unwrap();
        match resolve(&ConfigSources { file: Some(f), ..Default::default() }).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn derived_paths() {
        let c = RunConfig { out_dir: "o".into(), ..RunConfig::default() };
        assert_eq!(c.model_path(), Path::new("o/model.stlm"));
        assert_eq!(c.bank_path(), Path::new("o/bank.stbk"));
        let c = RunConfig { bank: Some("b.stbk".into()), ..c };
        assert_eq!(c.bank_path(), Path::new("b.stbk"));
    }
}
