//! Flat `key = value` run configuration.
//!
//! ```text
//! # paths
//! train = data/train.jsonl
//! dev = data/dev.jsonl
//! out_dir = runs/mtl
//! # model
//! model = mtl            # or pair (needs a single task)
//! tasks = ABC
//! feature_maps = 100
//! stopping_mode = per_task
//! ```
//!
//! Blank lines and `#` comments are ignored. Later assignments win, and
//! command-line overrides are applied after the file.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use cqa_core::text::DEFAULT_MAX_LEN;
use cqa_core::train::TrainConfig;
use cqa_core::TaskSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Mtl,
    Pair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub vectors: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub model: ModelChoice,
    pub word_dim: usize,
    pub word_dim_explicit: bool,
    pub feat_dim: usize,
    pub feature_maps: usize,
    pub filter_width: usize,
    pub max_len: usize,
    pub min_count: usize,
    pub training: TrainConfig,
}

pub const KEYS: &[&str] = &[
    "train",
    "dev",
    "vectors",
    "out_dir",
    "model",
    "word_dim",
    "feat_dim",
    "feature_maps",
    "filter_width",
    "max_len",
    "min_count",
    "batch_size",
    "patience",
    "max_epochs",
    "dropout_input",
    "dropout_hidden",
    "learning_rate",
    "rho",
    "epsilon",
    "seed",
    "tasks",
    "stopping_mode",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

#[derive(Default)]
struct Builder {
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    cfg: Option<RunConfig>,
}

impl RunConfig {
    fn defaults() -> Self {
        RunConfig {
            train: PathBuf::new(),
            dev: PathBuf::new(),
            vectors: None,
            out_dir: PathBuf::new(),
            model: ModelChoice::Mtl,
            word_dim: 50,
            word_dim_explicit: false,
            feat_dim: 5,
            feature_maps: 100,
            filter_width: 5,
            max_len: DEFAULT_MAX_LEN,
            min_count: 1,
            training: TrainConfig::default(),
        }
    }

    /// Reads the optional file, applies `KEY=VALUE` overrides and checks
    /// that the required paths are present and exist.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs: Vec<(String, String, String)> = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
                pairs.push((k.trim().to_string(), v.trim().to_string(), format!("{}:{}", path.display(), i + 1)));
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{o}` is not KEY=VALUE"))?;
            pairs.push((k.trim().to_string(), v.trim().to_string(), "--set".to_string()));
        }
        let mut b = Builder {
            cfg: Some(Self::defaults()),
            ..Default::default()
        };
        for (k, v, origin) in &pairs {
            b.apply(k, v).with_context(|| format!("in {origin}"))?;
        }
        b.finish()
    }
}

impl Builder {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let cfg = self.cfg.as_mut().expect("builder holds a config");
        let t = &mut cfg.training;
        match key {
            "train" => self.train = Some(PathBuf::from(value)),
            "dev" => self.dev = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "vectors" => cfg.vectors = (!value.is_empty()).then(|| PathBuf::from(value)),
            "model" => {
                cfg.model = match value.to_ascii_lowercase().as_str() {
                    "mtl" => ModelChoice::Mtl,
                    "pair" => ModelChoice::Pair,
                    other => bail!("`model` must be mtl or pair, got `{other}`"),
                }
            }
            "word_dim" => {
                cfg.word_dim = parse_num(key, value)?;
                cfg.word_dim_explicit = true;
            }
            "feat_dim" => cfg.feat_dim = parse_num(key, value)?,
            "feature_maps" => cfg.feature_maps = parse_num(key, value)?,
            "filter_width" => cfg.filter_width = parse_num(key, value)?,
            "max_len" => cfg.max_len = parse_num(key, value)?,
            "min_count" => cfg.min_count = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "patience" => t.patience = parse_num(key, value)?,
            "max_epochs" => t.max_epochs = parse_num(key, value)?,
            "dropout_input" => t.dropout.input = parse_num(key, value)?,
            "dropout_hidden" => t.dropout.hidden = parse_num(key, value)?,
            "learning_rate" => t.optimizer.learning_rate = parse_num(key, value)?,
            "rho" => t.optimizer.rho = parse_num(key, value)?,
            "epsilon" => t.optimizer.epsilon = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "tasks" => t.active_tasks = value.parse::<TaskSet>()?,
            "stopping_mode" => t.stopping_mode = value.parse()?,
            other => bail!("unknown key `{other}` (known keys: {})", KEYS.join(", ")),
        }
        Ok(())
    }

    fn finish(self) -> Result<RunConfig> {
        let mut cfg = self.cfg.expect("builder holds a config");
        let require = |v: Option<PathBuf>, key: &str| v.ok_or_else(|| anyhow!("missing required key `{key}`"));
        cfg.train = require(self.train, "train")?;
        cfg.dev = require(self.dev, "dev")?;
        cfg.out_dir = require(self.out_dir, "out_dir")?;
        for (key, path) in [("train", Some(&cfg.train)), ("dev", Some(&cfg.dev)), ("vectors", cfg.vectors.as_ref())] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("`{key}` points to {}, which does not exist", p.display());
                }
            }
        }
        if cfg.max_len == 0 || cfg.min_count == 0 {
            bail!("max_len and min_count must be >= 1");
        }
        cfg.training.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cqa_core::train::StoppingMode;
    use cqa_core::Task;

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.jsonl");
        std::fs::write(&data, "").unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(
            &file,
            format!(
                "# run\ntrain = {0}\ndev = {0}\nout_dir = out  # trailing comment\n\nseed = 4\ntasks = A,C\nstopping_mode = per_task\n",
                data.display()
            ),
        )
        .unwrap();
        let cfg = RunConfig::load(Some(&file), &["seed=9".into(), "feature_maps = 20".into()]).unwrap();
        assert_eq!(cfg.training.seed, 9);
        assert_eq!(cfg.feature_maps, 20);
        assert_eq!(cfg.training.active_tasks, TaskSet::from_tasks([Task::A, Task::C]).unwrap());
        assert_eq!(cfg.training.stopping_mode, StoppingMode::PerTask);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        assert_eq!(cfg.training.patience, 10);
    }

    #[test]
    fn rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.jsonl");
        std::fs::write(&data, "").unwrap();
        let base = [format!("train={}", data.display()), format!("dev={}", data.display()), "out_dir=x".to_string()];
        let with = |extra: &str| {
            let mut v = base.to_vec();
            v.push(extra.to_string());
            RunConfig::load(None, &v)
        };
        assert!(with("seed=1").is_ok());
        assert!(with("colour=blue").is_err());
        assert!(with("patience=0").is_err());
        assert!(with("tasks=").is_err());
        assert!(with("batch_size=lots").is_err());
        assert!(with("dev=/nonexistent/file").is_err());
        assert!(RunConfig::load(None, &base[..2]).is_err());
    }
}
