//! Run configuration: a `key = value` text file, then `--set` overrides,
//! then `--seed` and `--out`.
//!
//! Lines starting with `#` and blank lines are ignored. Every key must be
//! known; hyperparameter keys are those of [`HyperParams`].

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hierloc::dataset::DatasetLayout;
use hierloc::eval::PenaltyConfig;
use hierloc::model::{HyperParams, HYPERPARAM_KEYS};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    /// Records of `test_file`.
    Test,
    /// The held-out part of `train_file`.
    Validation,
    /// The training part of `train_file`.
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    /// Defaults to `<out_dir>/model.hloc`.
    pub model_file: Option<PathBuf>,
    /// A pretrained model whose encoder `train` reuses instead of pretraining.
    pub encoder_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub eval_split: EvalSplit,
    pub train_ratio: f64,
    pub penalties: PenaltyConfig,
    pub layout: DatasetLayout,
    pub params: HyperParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_file: None,
            test_file: None,
            model_file: None,
            encoder_file: None,
            out_dir: PathBuf::from("out"),
            eval_split: EvalSplit::Test,
            train_ratio: 0.9,
            penalties: PenaltyConfig::default(),
            layout: DatasetLayout::default(),
            params: HyperParams::default(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().ok().with_context(|| format!("{key}: cannot parse `{value}`"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || Some(PathBuf::from(value));
        match key {
            "train_file" => self.train_file = path(),
            "test_file" => self.test_file = path(),
            "model_file" => self.model_file = path(),
            "encoder_file" => self.encoder_file = path(),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "eval_split" => {
                self.eval_split = match value {
                    "test" => EvalSplit::Test,
                    "validation" => EvalSplit::Validation,
                    "train" => EvalSplit::Train,
                    _ => bail!("eval_split: `{value}` is not test, validation or train"),
                }
            }
            "train_ratio" => self.train_ratio = num(key, value)?,
            "building_penalty" => self.penalties.building_penalty = num(key, value)?,
            "floor_penalty" => self.penalties.floor_penalty = num(key, value)?,
            "ap_count" => self.layout.ap_count = num(key, value)?,
            "building_count" => self.layout.building_count = num(key, value)?,
            "floor_count" => self.layout.floor_count = num(key, value)?,
            _ if HYPERPARAM_KEYS.contains(&key) => self.params.set(key, value)?,
            _ => bail!("unknown configuration key `{key}`"),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
            self.set(k.trim(), v).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            cfg.load_file(f)?;
        }
        for s in sets {
            let (k, v) = s.split_once('=').with_context(|| format!("--set expects key=value, got `{s}`"))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = seed {
            cfg.params.seed = seed;
        }
        if let Some(out) = out {
            cfg.out_dir = out.to_path_buf();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        PenaltyConfig::new(self.penalties.building_penalty, self.penalties.floor_penalty)?;
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            bail!("train_ratio must be in (0, 1), got {}", self.train_ratio);
        }
        let l = self.layout;
        if l.ap_count == 0 || l.building_count == 0 || l.floor_count == 0 {
            bail!("ap_count, building_count and floor_count must be positive");
        }
        Ok(())
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_file.clone().unwrap_or_else(|| self.out_dir.join("model.hloc"))
    }

    pub fn require_train_file(&self) -> Result<&Path> {
        self.train_file.as_deref().context("train_file is not configured")
    }

    pub fn require_test_file(&self) -> Result<&Path> {
        self.test_file.as_deref().context("test_file is not configured")
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let split = match self.eval_split {
            EvalSplit::Test => "test",
            EvalSplit::Validation => "validation",
            EvalSplit::Train => "train",
        };
        let mut v: Vec<(String, String)> = [
            ("train_file", p(&self.train_file)),
            ("test_file", p(&self.test_file)),
            ("model_file", p(&self.model_file)),
            ("encoder_file", p(&self.encoder_file)),
            ("out_dir", self.out_dir.display().to_string()),
            ("eval_split", split.to_string()),
            ("train_ratio", self.train_ratio.to_string()),
            ("building_penalty", self.penalties.building_penalty.to_string()),
            ("floor_penalty", self.penalties.floor_penalty.to_string()),
            ("ap_count", self.layout.ap_count.to_string()),
            ("building_count", self.layout.building_count.to_string()),
            ("floor_count", self.layout.floor_count.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        v.extend(self.params.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)));
        v
    }

    /// The resolved configuration in the config-file format.
    pub fn to_file_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
