//! End-to-end stages shared by the command-line tool and the tests.

use crate::checkpoint::{Checkpoint, INIT_EMBEDDING};
use crate::config::RunConfig;
use crate::data::{expand_corpus, split_validation, SequenceSample, Session, Vocabulary};
use crate::error::Result;
use crate::eval::{baseline_reports, model_ranks, MetricsReport};
use crate::glove::{average_interval, build_cooccurrence, split_subsessions, train_glove, GloveConfig, Weighting};
use crate::model::StarModel;
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub mean_interval: f64,
    pub theta: f64,
    pub window: usize,
    pub n_subsessions: usize,
    pub n_pairs: usize,
    pub losses: Vec<f64>,
}

/// Splits training sessions at `θ = multiplier · mean interval`, counts
/// co-occurrences and fits GloVe. The returned checkpoint holds only the
/// initial item table.
pub fn pretrain(
    train: &[Session],
    vocab: &Vocabulary,
    cfg: &RunConfig,
    exec: Execution,
) -> Result<(Checkpoint, PretrainReport)> {
    cfg.validate()?;
    let mean_interval = average_interval(train)?;
    let theta = cfg.theta_multiplier * mean_interval;
    let window = cfg
        .glove_window
        .unwrap_or_else(|| train.iter().map(Session::len).max().unwrap_or(1))
        .max(1);
    let subs: Vec<_> = train.iter().flat_map(|s| split_subsessions(s, theta)).collect();
    let x = build_cooccurrence(&subs, window, Weighting::InverseDistance, exec)?;
    let glove = GloveConfig {
        dim: cfg.embedding_dim,
        epochs: cfg.glove_epochs,
        seed: cfg.seed,
        mode: cfg.glove_mode(),
        ..GloveConfig::default()
    };
    let state = train_glove(&x, vocab.len(), &glove, exec)?;
    let mut ck = Checkpoint::new(cfg.clone(), vocab.raw_ids().to_vec(), theta);
    ck.rng_seed = cfg.seed;
    ck.insert(INIT_EMBEDDING, state.embeddings());
    let report = PretrainReport {
        mean_interval,
        theta,
        window,
        n_subsessions: subs.len(),
        n_pairs: x.len(),
        losses: state.losses,
    };
    Ok((ck, report))
}

/// Training and validation samples; validation holds the latest sessions.
pub fn training_samples(
    train: &[Session],
    cfg: &RunConfig,
    exec: Execution,
) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
    if cfg.validation_fraction <= 0.0 {
        return Ok((expand_corpus(train, exec), Vec::new()));
    }
    let (fit, valid) = split_validation(train.to_vec(), cfg.validation_fraction)?;
    Ok((expand_corpus(&fit, exec), expand_corpus(&valid, exec)))
}

/// Report label for the model's ablation setting.
pub fn variant_name(cfg: &RunConfig) -> &'static str {
    match (cfg.self_attention, cfg.time_attention) {
        (true, true) => "STAR",
        (false, true) => "STAR_V1",
        (true, false) => "STAR_V2",
        (false, false) => "BiGRU",
    }
}

/// The model's report followed by POP, S-POP and Item-KNN.
pub fn evaluate(
    model: &StarModel,
    cfg: &RunConfig,
    train: &[Session],
    test: &[SequenceSample],
    dataset: &str,
    k: usize,
    exec: Execution,
) -> Result<Vec<MetricsReport>> {
    let ranks = model_ranks(model, test, cfg.batch_size.max(64), exec)?;
    let mut out = vec![MetricsReport::from_ranks(variant_name(cfg), dataset, &ranks, k)];
    out.extend(baseline_reports(train, test, model.n_items(), dataset, k, exec));
    Ok(out)
}
