//! Run configuration and its flat `key = value` text form.

use std::fmt;
use std::str::FromStr;

use crate::data::{Dataset, Fraction};
use crate::error::{Result, StarError};
use crate::glove::GloveMode;
use crate::model::{LossMode, ModelConfig};

/// Storage width of checkpoint tensors. With `F32`, parameters and Adam
/// moments are rounded to `f32` after every update so checkpoints lose
/// nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = StarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(StarError::InvalidArgument(format!("unknown precision `{s}`"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Dataset,
    pub fraction: Fraction,
    pub embedding_dim: usize,
    pub glove_epochs: usize,
    /// `None` means the longest training session.
    pub glove_window: Option<usize>,
    pub theta_multiplier: f64,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_step: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub l2: f64,
    pub seed: u64,
    pub self_attention: bool,
    pub time_attention: bool,
    pub share_gru_weights: bool,
    pub loss: LossMode,
    pub deterministic: bool,
    pub precision: Precision,
    pub validation_fraction: f64,
    pub eval_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_dataset(Dataset::Yoochoose, Fraction::Latest { num: 1, den: 64 })
    }
}

impl RunConfig {
    /// Batch size, dropout and decay step tuned per dataset.
    pub fn for_dataset(dataset: Dataset, fraction: Fraction) -> Self {
        let (batch_size, dropout, decay_step) = match (dataset, fraction) {
            (Dataset::Diginetica, _) => (512, 0.3, 6),
            (Dataset::Yoochoose, Fraction::Latest { num: 1, den: 4 }) => (512, 0.1, 4),
            _ => (64, 0.2, 4),
        };
        RunConfig {
            dataset,
            fraction,
            embedding_dim: 180,
            glove_epochs: 100,
            glove_window: None,
            theta_multiplier: 2.0,
            epochs: 12,
            lr: 0.001,
            lr_decay: 0.1,
            decay_step,
            batch_size,
            dropout,
            l2: 1e-6,
            seed: 42,
            self_attention: true,
            time_attention: true,
            share_gru_weights: false,
            loss: LossMode::Categorical,
            deterministic: false,
            precision: Precision::F32,
            validation_fraction: 0.1,
            eval_k: 20,
        }
    }

    /// Learning rate for 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch.max(1) - 1) / self.decay_step.max(1);
        self.lr * self.lr_decay.powi(steps as i32)
    }

    pub fn glove_mode(&self) -> GloveMode {
        if self.deterministic {
            GloveMode::Deterministic
        } else {
            GloveMode::Hogwild
        }
    }

    pub fn model_config(&self, n_items: usize) -> ModelConfig {
        ModelConfig {
            n_items,
            dim: self.embedding_dim,
            self_attention: self.self_attention,
            time_attention: self.time_attention,
            dropout: self.dropout,
            share_gru_weights: self.share_gru_weights,
            loss: self.loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StarError::InvalidArgument(m.to_string()));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.decay_step == 0 {
            return bad("decay_step must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.theta_multiplier.is_nan() || self.theta_multiplier < 0.0 {
            return bad("theta_multiplier must be non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if self.eval_k == 0 {
            return bad("eval_k must be positive");
        }
        Ok(())
    }

    /// Every field as `(key, value)` in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.to_string()),
            ("fraction", self.fraction.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("glove_epochs", self.glove_epochs.to_string()),
            (
                "glove_window",
                self.glove_window.map_or("max".to_string(), |w| w.to_string()),
            ),
            ("theta_multiplier", self.theta_multiplier.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("decay_step", self.decay_step.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("l2", self.l2.to_string()),
            ("seed", self.seed.to_string()),
            ("self_attention", self.self_attention.to_string()),
            ("time_attention", self.time_attention.to_string()),
            ("share_gru_weights", self.share_gru_weights.to_string()),
            ("loss", self.loss.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("precision", self.precision.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("eval_k", self.eval_k.to_string()),
        ]
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| StarError::InvalidArgument(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "dataset" => self.dataset = value.parse()?,
            "fraction" => self.fraction = value.parse()?,
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "glove_epochs" => self.glove_epochs = num(key, value)?,
            "glove_window" => self.glove_window = if value == "max" { None } else { Some(num(key, value)?) },
            "theta_multiplier" => self.theta_multiplier = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "decay_step" => self.decay_step = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "self_attention" => self.self_attention = num(key, value)?,
            "time_attention" => self.time_attention = num(key, value)?,
            "share_gru_weights" => self.share_gru_weights = num(key, value)?,
            "loss" => self.loss = value.parse()?,
            "deterministic" => self.deterministic = num(key, value)?,
            "precision" => self.precision = value.parse()?,
            "validation_fraction" => self.validation_fraction = num(key, value)?,
            "eval_k" => self.eval_k = num(key, value)?,
            _ => return Err(StarError::InvalidArgument(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| StarError::Config { line: n + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.merge_text(text)?;
        Ok(c)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
