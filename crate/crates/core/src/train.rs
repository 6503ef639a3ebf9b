//! Mini-batch training loop with Adam, learning-rate decay, validation and
//! resumable state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, INIT_EMBEDDING};
use crate::config::{Precision, RunConfig};
use crate::data::SequenceSample;
use crate::error::{Result, StarError};
use crate::eval::{model_ranks, mrr_at_k, recall_at_k};
use crate::model::{Batch, Mode, StarModel};
use crate::numeric::{adam_update, AdamConfig, Tensor};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_recall: Option<f64>,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: StarModel,
    pub config: RunConfig,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Best validation recall and the epoch it was reached.
    pub best: Option<(f64, usize)>,
    pub exec: Execution,
}

impl Trainer {
    /// Fresh model whose item table starts from `init` when given.
    pub fn new(config: RunConfig, n_items: usize, init: Option<&Tensor>, exec: Execution) -> Result<Self> {
        config.validate()?;
        let mut model = StarModel::new(config.model_config(n_items), config.seed, init)?;
        if config.precision == Precision::F32 {
            model.params.iter_mut().for_each(|p| p.round_to_f32());
        }
        Ok(Trainer {
            model,
            config,
            step: 0,
            epoch: 0,
            best: None,
            exec,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, exec: Execution) -> Result<Self> {
        let model = ck.load_model()?;
        let best = match (ck.notes.get("best_recall"), ck.notes.get("best_epoch")) {
            (Some(r), Some(e)) => Some((
                r.parse().map_err(|_| StarError::Checkpoint("bad best_recall".into()))?,
                e.parse().map_err(|_| StarError::Checkpoint("bad best_epoch".into()))?,
            )),
            _ => None,
        };
        if ck.rng_seed != ck.config.seed {
            return Err(StarError::Checkpoint("generator seed differs from config seed".into()));
        }
        Ok(Trainer {
            model,
            config: ck.config.clone(),
            step: ck.rng_step,
            epoch: ck.epoch,
            best,
            exec,
        })
    }

    /// One forward/backward pass and Adam update; returns the batch loss.
    pub fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<f64> {
        let mode = Mode::Train {
            seed: self.config.seed,
            step: self.step,
        };
        self.model.params.zero_grads();
        let out = self.model.forward_backward(batch, mode, self.exec)?;
        if !out.mean_loss.is_finite() {
            return Err(StarError::Diverged { batch: self.step });
        }
        let adam = AdamConfig {
            lr,
            l2: self.config.l2,
            ..AdamConfig::default()
        };
        adam_update(&mut self.model.params, &adam).map_err(|e| match e {
            StarError::NonFiniteGradient { .. } => StarError::Diverged { batch: self.step },
            other => other,
        })?;
        if self.config.precision == Precision::F32 {
            self.model.params.iter_mut().for_each(|p| p.round_to_f32());
        }
        self.step += 1;
        Ok(out.mean_loss)
    }

    /// Sample order for 1-based `epoch`, fixed by the seed.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let seed = self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    /// Runs the next epoch; returns the sample-weighted mean training loss.
    pub fn run_epoch(&mut self, train: &[SequenceSample]) -> Result<f64> {
        if train.is_empty() {
            return Err(StarError::EmptyCorpus("training samples"));
        }
        let epoch = self.epoch + 1;
        let lr = self.config.lr_at(epoch);
        let order = self.epoch_order(epoch, train.len());
        let mut total = 0.0;
        for idx in order.chunks(self.config.batch_size) {
            let batch = Batch::new(idx.iter().map(|&i| &train[i]));
            total += self.train_step(&batch, lr)? * idx.len() as f64;
        }
        self.epoch = epoch;
        Ok(total / train.len() as f64)
    }

    /// Recall@k and MRR@k on `samples` in evaluation mode.
    pub fn validate(&self, samples: &[SequenceSample]) -> Result<(f64, f64)> {
        let ranks = model_ranks(&self.model, samples, self.config.batch_size.max(64), self.exec)?;
        let k = self.config.eval_k;
        Ok((recall_at_k(&ranks, k), mrr_at_k(&ranks, k)))
    }

    /// Trains until `config.epochs`, calling `on_epoch` after each epoch
    /// with the log and whether validation improved.
    pub fn fit<F>(
        &mut self,
        train: &[SequenceSample],
        valid: &[SequenceSample],
        mut on_epoch: F,
    ) -> Result<Vec<EpochLog>>
    where
        F: FnMut(&Trainer, &EpochLog, bool) -> Result<()>,
    {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let lr = self.config.lr_at(self.epoch + 1);
            let train_loss = self.run_epoch(train)?;
            let (valid_recall, valid_mrr, improved) = if valid.is_empty() {
                (None, None, false)
            } else {
                let (r, m) = self.validate(valid)?;
                let improved = self.best.is_none_or(|(b, _)| r > b);
                if improved {
                    self.best = Some((r, self.epoch));
                }
                (Some(r), Some(m), improved)
            };
            let log = EpochLog {
                epoch: self.epoch,
                lr,
                train_loss,
                valid_recall,
                valid_mrr,
            };
            on_epoch(self, &log, improved)?;
            logs.push(log);
        }
        Ok(logs)
    }

    /// Snapshot of the full training state.
    pub fn checkpoint(&self, vocabulary: Vec<String>, theta: f64, init: Option<&Tensor>) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.clone(), vocabulary, theta);
        ck.epoch = self.epoch;
        ck.rng_seed = self.config.seed;
        ck.rng_step = self.step;
        if let Some((r, e)) = self.best {
            ck.notes.insert("best_recall".into(), r.to_string());
            ck.notes.insert("best_epoch".into(), e.to_string());
        }
        ck.store_model(&self.model);
        if let Some(t) = init {
            ck.insert(INIT_EMBEDDING, t.clone());
        }
        ck
    }
}
