//! Run configuration: defaults, flat key=value config files, flag overrides.
//!
//! Precedence (lowest to highest): built-in defaults, CTXNET_DATA_DIR,
//! config file, command-line flags. Everything is validated before any
//! training starts.

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub seed: u64,
    pub ae_epochs: usize,
    pub ctx_epochs: usize,
    pub clf_epochs: usize,
    pub baseline_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Train on the first N images only; None = full split.
    pub train_size: Option<usize>,
    pub jobs: usize,
    pub augment: bool,
    pub out_dir: PathBuf,
    pub ae_path: Option<PathBuf>,
    pub ctx_path: Option<PathBuf>,
    pub clf_path: Option<PathBuf>,
    pub baseline_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: std::env::var_os("CTXNET_DATA_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("data/mnist")),
            seed: 42,
            ae_epochs: 50,
            ctx_epochs: 20,
            clf_epochs: 180,
            baseline_epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            train_size: None,
            jobs: 1,
            augment: false,
            out_dir: PathBuf::from("out"),
            ae_path: None,
            ctx_path: None,
            clf_path: None,
            baseline_path: None,
        }
    }
}

impl RunConfig {
    pub fn ae_path(&self) -> PathBuf {
        self.ae_path.clone().unwrap_or_else(|| self.out_dir.join("ae.ckpt"))
    }

    pub fn ctx_path(&self) -> PathBuf {
        self.ctx_path.clone().unwrap_or_else(|| self.out_dir.join("contexts.ckpt"))
    }

    pub fn clf_path(&self) -> PathBuf {
        self.clf_path.clone().unwrap_or_else(|| self.out_dir.join("classifier.ckpt"))
    }

    pub fn baseline_path(&self) -> PathBuf {
        self.baseline_path.clone().unwrap_or_else(|| self.out_dir.join("baseline.ckpt"))
    }

    /// Apply one key=value pair from a config file.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Format(format!("config key '{key}': bad value '{value}'")))
        }
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "ae_epochs" => self.ae_epochs = num(key, value)?,
            "ctx_epochs" => self.ctx_epochs = num(key, value)?,
            "clf_epochs" => self.clf_epochs = num(key, value)?,
            "baseline_epochs" => self.baseline_epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "train_size" => self.train_size = Some(num(key, value)?),
            "jobs" => self.jobs = num(key, value)?,
            "augment" => self.augment = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "ae_path" => self.ae_path = Some(PathBuf::from(value)),
            "ctx_path" => self.ctx_path = Some(PathBuf::from(value)),
            "clf_path" => self.clf_path = Some(PathBuf::from(value)),
            "baseline_path" => self.baseline_path = Some(PathBuf::from(value)),
            _ => return Err(Error::Format(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Merge a flat key=value file ('#' comments and blank lines allowed).
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Contract("batch_size must be >= 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Contract("jobs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Contract(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        if self.train_size == Some(0) {
            return Err(Error::Contract("train_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Human-readable dump of every resolved value, one per line.
    pub fn resolved(&self) -> String {
        format!(
            "data_dir = {}\nseed = {}\nae_epochs = {}\nctx_epochs = {}\n\
             clf_epochs = {}\nbaseline_epochs = {}\nbatch_size = {}\n\
             learning_rate = {}\ntrain_size = {}\njobs = {}\naugment = {}\n\
             out_dir = {}\nae_path = {}\nctx_path = {}\nclf_path = {}\nbaseline_path = {}",
            self.data_dir.display(),
            self.seed,
            self.ae_epochs,
            self.ctx_epochs,
            self.clf_epochs,
            self.baseline_epochs,
            self.batch_size,
            self.learning_rate,
            self.train_size.map_or("all".to_string(), |n| n.to_string()),
            self.jobs,
            self.augment,
            self.out_dir.display(),
            self.ae_path().display(),
            self.ctx_path().display(),
            self.clf_path().display(),
            self.baseline_path().display(),
        )
    }
}
