use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use star_core::checkpoint::Checkpoint;
use star_core::config::RunConfig;
use star_core::data::{
    expand_corpus, preprocess, read_canonical, read_raw_file, read_vocabulary, write_canonical, write_vocabulary,
    Dataset, Fraction, PreprocessConfig, RejectLog, Vocabulary,
};
use star_core::eval::{rank_items, write_reports};
use star_core::model::SampleView;
use star_core::par::Execution;
use star_core::run;
use star_core::synthetic::{self, SynthConfig};
use star_core::train::Trainer;
use star_core::StarError;

use crate::{Cli, Command, ConfigArgs};

const RUN_CONF: &str = "run.conf";

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Preprocess {
            input,
            out,
            rejects,
            config,
        } => cmd_preprocess(&input, &out, rejects.as_deref(), &config),
        Command::Pretrain { data, out, config } => cmd_pretrain(&data, &out, &config, exec),
        Command::Train {
            data,
            init,
            resume,
            out,
            config,
        } => cmd_train(&data, init.as_deref(), resume.as_deref(), &out, &config, exec),
        Command::Evaluate {
            checkpoint,
            data,
            k,
            report,
        } => cmd_evaluate(&checkpoint, &data, k, report.as_deref(), exec),
        Command::Recommend { checkpoint, k } => cmd_recommend(&checkpoint, k),
        Command::Synth {
            kind,
            items,
            sessions,
            seed,
            out,
        } => cmd_synth(&kind, items, sessions, seed, &out),
    }
}

impl ConfigArgs {
    /// Builds the run configuration. Layers, lowest first: per-dataset
    /// defaults, `base` (a data directory's run.conf), `--config`, flags.
    fn resolve(&self, base: Option<&Path>) -> Result<RunConfig> {
        let mut layers = Vec::new();
        for path in base.filter(|p| p.exists()).into_iter().chain(self.config.as_deref()) {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            layers.push((path, text));
        }
        let mut probe = RunConfig::default();
        for (path, text) in &layers {
            probe
                .merge_text(text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        let dataset: Dataset = match &self.dataset {
            Some(d) => d.parse()?,
            None => probe.dataset,
        };
        let layered_fraction = layers.iter().any(|(_, t)| {
            t.lines()
                .any(|l| l.split('=').next().map(str::trim) == Some("fraction"))
        });
        let fraction: Fraction = match &self.fraction {
            Some(f) => f.parse()?,
            None if layered_fraction => probe.fraction,
            None if dataset == Dataset::Yoochoose => Fraction::Latest { num: 1, den: 64 },
            None => Fraction::Full,
        };
        let mut cfg = RunConfig::for_dataset(dataset, fraction);
        for (_, text) in &layers {
            cfg.merge_text(text)?;
        }
        cfg.dataset = dataset;
        cfg.fraction = fraction;
        self.apply_flags(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_flags(&self, cfg: &mut RunConfig) -> Result<()> {
        let pairs = [
            ("theta_multiplier", self.theta_multiplier.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("dropout", self.dropout.map(|v| v.to_string())),
            ("decay_step", self.decay_step.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("loss", self.loss.clone()),
            ("embedding_dim", self.dim.map(|v| v.to_string())),
            ("glove_epochs", self.glove_epochs.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("precision", self.precision.clone()),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.no_self_attention {
            cfg.self_attention = false;
        }
        if self.no_time_attention {
            cfg.time_attention = false;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_preprocess(input: &Path, out: &Path, rejects_path: Option<&Path>, args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve(None)?;
    let mut rejects = RejectLog::default();
    let rows = read_raw_file(input, cfg.dataset, &mut rejects)?;
    let mut pcfg = PreprocessConfig::for_dataset(cfg.dataset);
    pcfg.fraction = cfg.fraction;
    let pre = preprocess(rows, &mut rejects, &pcfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_canonical(&pre.train, create(&out.join("train.tsv"))?)?;
    write_canonical(&pre.test, create(&out.join("test.tsv"))?)?;
    write_vocabulary(&pre.vocab, create(&out.join("vocab.tsv"))?)?;
    let mut conf = create(&out.join(RUN_CONF))?;
    writeln!(conf, "dataset = {}\nfraction = {}", cfg.dataset, cfg.fraction)?;
    conf.flush()?;
    if let Some(p) = rejects_path {
        rejects.write_to(create(p)?)?;
    }
    println!("train: {}", pre.train_stats);
    println!("test:  {}", pre.test_stats);
    println!("rejected lines: {}", rejects.len());
    Ok(())
}

struct DataDir {
    train: Vec<star_core::data::Session>,
    vocab: Vocabulary,
}

fn load_data(dir: &Path) -> Result<DataDir> {
    Ok(DataDir {
        train: read_canonical(&dir.join("train.tsv"))?,
        vocab: read_vocabulary(&dir.join("vocab.tsv"))?,
    })
}

fn cmd_pretrain(data: &Path, out: &Path, args: &ConfigArgs, exec: Execution) -> Result<()> {
    let cfg = args.resolve(Some(&data.join(RUN_CONF)))?;
    let d = load_data(data)?;
    let (ck, report) = run::pretrain(&d.train, &d.vocab, &cfg, exec)?;
    println!("mean interval: {:.3}s", report.mean_interval);
    println!("theta: {:.3}s", report.theta);
    println!("window: {}", report.window);
    println!(
        "sub-sessions: {}, co-occurring pairs: {}",
        report.n_subsessions, report.n_pairs
    );
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        println!("glove loss: {first:.6} -> {last:.6}");
    }
    let t = ck.init_embedding().expect("pretrain stores the embedding");
    println!("embedding shape: {:?}", t.shape());
    ck.save(out)?;
    Ok(())
}

fn check_vocab(ck: &Checkpoint, vocab: &Vocabulary, what: &str) -> Result<()> {
    if ck.vocabulary != vocab.raw_ids() {
        bail!("{what} was built for a different vocabulary than the data directory");
    }
    Ok(())
}

fn cmd_train(
    data: &Path,
    init: Option<&Path>,
    resume: Option<&Path>,
    out: &Path,
    args: &ConfigArgs,
    exec: Execution,
) -> Result<()> {
    let d = load_data(data)?;
    let (mut trainer, theta, init_table) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            check_vocab(&ck, &d.vocab, "resume checkpoint")?;
            let mut t = Trainer::from_checkpoint(&ck, exec)?;
            if let Some(e) = args.epochs {
                t.config.epochs = e;
            }
            (t, ck.theta, ck.init_embedding().cloned())
        }
        None => {
            let path = init.expect("clap requires --init without --resume");
            let cfg = args.resolve(Some(&data.join(RUN_CONF)))?;
            let ck = Checkpoint::load(path)?;
            check_vocab(&ck, &d.vocab, "embedding checkpoint")?;
            let table = ck
                .init_embedding()
                .ok_or_else(|| anyhow::anyhow!("{} holds no initial embedding", path.display()))?
                .clone();
            let t = Trainer::new(cfg, d.vocab.len(), Some(&table), exec)?;
            (t, ck.theta, Some(table))
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (fit, valid) = run::training_samples(&d.train, &trainer.config, exec)?;
    eprintln!("{} training and {} validation samples", fit.len(), valid.len());
    let vocab = d.vocab.raw_ids().to_vec();
    let log_path = out.join("train_log.tsv");
    let mut log = match resume {
        Some(_) if log_path.exists() => BufWriter::new(
            fs::OpenOptions::new()
                .append(true)
                .open(&log_path)
                .with_context(|| format!("opening {}", log_path.display()))?,
        ),
        _ => {
            let mut w = create(&log_path)?;
            writeln!(w, "epoch\tlr\ttrain_loss\tvalid_recall\tvalid_mrr")?;
            w
        }
    };
    let k = trainer.config.eval_k;
    trainer.fit(&fit, &valid, |t, l, improved| {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        eprintln!(
            "epoch {:>3}  lr {:.1e}  loss {:.5}  valid Recall@{k} {}  MRR@{k} {}",
            l.epoch,
            l.lr,
            l.train_loss,
            fmt(l.valid_recall),
            fmt(l.valid_mrr)
        );
        writeln!(
            log,
            "{}\t{}\t{}\t{}\t{}",
            l.epoch,
            l.lr,
            l.train_loss,
            fmt(l.valid_recall),
            fmt(l.valid_mrr)
        )
        .and_then(|_| log.flush())
        .map_err(|e| StarError::io(&log_path, e))?;
        let ck = t.checkpoint(vocab.clone(), theta, init_table.as_ref());
        if improved {
            ck.save(&out.join("best.ckpt"))?;
        }
        ck.save(&out.join("final.ckpt"))
    })?;
    if valid.is_empty() || !out.join("best.ckpt").exists() {
        fs::copy(out.join("final.ckpt"), out.join("best.ckpt")).context("writing best.ckpt")?;
    }
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, k: usize, report: Option<&Path>, exec: Execution) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let d = load_data(data)?;
    check_vocab(&ck, &d.vocab, "checkpoint")?;
    let model = ck.load_model()?;
    let test = expand_corpus(&read_canonical(&data.join("test.tsv"))?, exec);
    let dataset = ck.config.dataset.to_string();
    let reports = run::evaluate(&model, &ck.config, &d.train, &test, &dataset, k, exec)?;
    for r in &reports {
        println!("{r}");
    }
    if let Some(p) = report {
        let mut w = create(p)?;
        write_reports(&reports, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_recommend(checkpoint: &Path, k: usize) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.load_model()?;
    let vocab = Vocabulary::from_raw(ck.vocabulary.clone())?;
    let mut items = Vec::new();
    let mut times: Vec<Option<i64>> = Vec::new();
    for (n, line) in io::stdin().lock().lines().enumerate() {
        let line = line.context("reading stdin")?;
        let mut f = line.split_whitespace();
        let Some(raw) = f.next() else { continue };
        let item = vocab.get(raw).ok_or_else(|| StarError::UnknownItem(raw.to_string()))?;
        let ts = f
            .next()
            .map(|t| {
                t.parse::<i64>()
                    .with_context(|| format!("line {}: bad timestamp `{t}`", n + 1))
            })
            .transpose()?;
        items.push(item);
        times.push(ts);
    }
    if items.is_empty() {
        bail!("no session events on stdin");
    }
    let gap = |a: usize, b: usize| -> Result<Option<u64>> {
        match (times[a], times[b]) {
            (Some(x), Some(y)) if y < x => Err(StarError::NegativeInterval(y - x).into()),
            (Some(x), Some(y)) => Ok(Some((y - x) as u64)),
            _ => Ok(None),
        }
    };
    let m = items.len();
    let before = (0..m)
        .map(|j| if j == 0 { Ok(None) } else { gap(j - 1, j) })
        .collect::<Result<Vec<_>>>()?;
    let after = (0..m)
        .map(|j| if j + 1 == m { Ok(None) } else { gap(j, j + 1) })
        .collect::<Result<Vec<_>>>()?;
    let y = model.predict(SampleView {
        items: &items,
        before: &before,
        after: &after,
    })?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for id in rank_items(&y, k) {
        writeln!(w, "{}\t{}", vocab.raw(id), y[id as usize])?;
    }
    Ok(())
}

fn cmd_synth(kind: &str, items: usize, sessions: usize, seed: u64, out: &Path) -> Result<()> {
    let cfg = match kind {
        "timed" => SynthConfig::timed(items, sessions, seed),
        "successor" => SynthConfig::successor(items, sessions, seed),
        other => bail!("unknown synthetic corpus kind `{other}` (timed or successor)"),
    };
    let mut w = create(out)?;
    synthetic::write_raw(&synthetic::generate(&cfg), &mut w)?;
    w.flush()?;
    Ok(())
}
