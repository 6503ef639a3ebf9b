//! Acceptance run: one PASS/FAIL/SKIP line per criterion, nonzero exit if
//! any criterion fails.
//!
//! Criterion 6 needs the public click logs; point `STAR_YOOCHOOSE_CLICKS`
//! and/or `STAR_DIGINETICA_VIEWS` at the raw files to enable it.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use star_core::config::RunConfig;
use star_core::data::{
    expand_corpus, expand_sequences, preprocess, read_raw_file, Dataset, Event, Fraction, Interval, PreprocessConfig,
    Preprocessed, RejectLog, SequenceSample, Session,
};
use star_core::eval::{model_ranks, mrr_at_k, rank_items, read_reports, recall_at_k, target_rank, MetricsReport};
use star_core::glove::{build_cooccurrence, split_subsessions, SubSession, Weighting};
use star_core::model::{decompose_interval, Batch, Hms, LossMode, Mode, ModelConfig, Side, StarModel};
use star_core::numeric::{finite_difference_check, GradCheckConfig};
use star_core::par::Execution;
use star_core::run;
use star_core::synthetic::{generate, write_raw, SynthConfig};
use star_core::train::Trainer;

const INSTANCES: usize = 1000;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Reports from every evaluation, for the metric inequality check.
#[derive(Default)]
struct Ledger {
    reports: Vec<MetricsReport>,
    desk: Option<BTreeMap<String, MetricsReport>>,
}

// 1

fn toy_sample(rng: &mut ChaCha8Rng, n: u32, m: usize) -> SequenceSample {
    let prefix: Vec<u32> = (0..m).map(|_| rng.gen_range(0..n)).collect();
    let gaps: Vec<u64> = (0..m).map(|_| rng.gen_range(0..100_000)).collect();
    let before = (0..m).map(|j| (j > 0).then_some(gaps[j])).collect();
    let after = (0..m).map(|j| (j + 1 < m).then(|| gaps[j + 1])).collect();
    SequenceSample {
        prefix,
        before,
        after,
        target: rng.gen_range(0..n),
    }
}

fn gradient_integrity(_: &mut Ledger) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples = vec![toy_sample(&mut rng, 5, 3), toy_sample(&mut rng, 5, 3)];
    let batch = Batch::new(&samples);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for loss in [LossMode::Categorical, LossMode::Literal] {
        for (self_attention, time_attention) in [(true, true), (false, true), (true, false), (false, false)] {
            let mut cfg = ModelConfig::new(5, 6);
            cfg.loss = loss;
            cfg.self_attention = self_attention;
            cfg.time_attention = time_attention;
            let mut model = StarModel::new(cfg.clone(), 3, None).unwrap();
            model.params.zero_grads();
            model
                .forward_backward(&batch, Mode::Eval, Execution::Sequential)
                .unwrap();
            let report = finite_difference_check(
                &mut model.params,
                |store| {
                    let probe = StarModel::from_store(cfg.clone(), store.clone()).unwrap();
                    probe
                        .forward_loss(&batch, Mode::Eval, Execution::Sequential)
                        .unwrap()
                        .mean_loss
                },
                &GradCheckConfig {
                    samples_per_param: usize::MAX,
                    ..Default::default()
                },
                &mut rng,
            );
            worst = worst.max(report.max_rel_error);
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-4 && elapsed < Duration::from_secs(60),
        format!("{cases} configurations, every coordinate, max relative error {worst:.2e}, {elapsed:.1?}"),
    )
}

// 2

fn random_session(rng: &mut ChaCha8Rng, n: u32, max_len: usize) -> Session {
    let len = rng.gen_range(1..=max_len);
    let mut t = rng.gen_range(0..1_000_000i64);
    let events = (0..len)
        .map(|_| {
            t += [0, 1, 5, 30, 200, 4000][rng.gen_range(0..6)] * rng.gen_range(0..3);
            Event {
                item: rng.gen_range(0..n),
                timestamp: t,
            }
        })
        .collect();
    Session::new("s", events)
}

/// Item groups keyed by the number of breaks seen so far.
fn oracle_split(s: &Session, theta: f64) -> Vec<Vec<u32>> {
    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    let mut breaks = 0;
    for k in 0..s.len() {
        if k > 0 && ((s.events[k].timestamp - s.events[k - 1].timestamp) as f64) > theta {
            breaks += 1;
        }
        groups.entry(breaks).or_default().push(s.events[k].item);
    }
    groups.into_values().collect()
}

fn oracle_cooccurrence(subs: &[SubSession], n: usize, window: usize, weighting: Weighting) -> Vec<Vec<f64>> {
    let mut x = vec![vec![0.0; n]; n];
    for s in subs {
        for a in 0..s.items.len() {
            for b in 0..s.items.len() {
                let t = a.abs_diff(b);
                let (i, j) = (s.items[a] as usize, s.items[b] as usize);
                if a < b && t <= window && i != j {
                    let w = match weighting {
                        Weighting::Uniform => 1.0,
                        Weighting::InverseDistance => 1.0 / t as f64,
                    };
                    x[i][j] += w;
                    x[j][i] += w;
                }
            }
        }
    }
    x
}

fn oracle_expansion(s: &Session) -> Vec<SequenceSample> {
    let items: Vec<u32> = s.events.iter().map(|e| e.item).collect();
    let gaps: Vec<Interval> = s
        .events
        .windows(2)
        .map(|w| Some((w[1].timestamp - w[0].timestamp) as u64))
        .collect();
    let mut out = Vec::new();
    for k in 1..items.len() {
        let mut before = vec![None];
        before.extend_from_slice(&gaps[..k - 1]);
        let mut after = gaps[..k - 1].to_vec();
        after.push(None);
        out.push(SequenceSample {
            prefix: items[..k].to_vec(),
            before,
            after,
            target: items[k],
        });
    }
    out
}

fn oracle_order(scores: &[f64]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..scores.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    ids
}

fn oracle_equivalence(_: &mut Ledger) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    let mut inverse_error = 0.0f64;
    let mut mrr_error = 0.0f64;
    for case in 0..INSTANCES {
        let n = rng.gen_range(1..12u32);
        let sessions: Vec<Session> = (0..rng.gen_range(1..6))
            .map(|_| random_session(&mut rng, n, 12))
            .collect();
        let theta = [0.0, 3.0, 29.5, 100.0, 5000.0][rng.gen_range(0..5)];

        let mut subs = Vec::new();
        for s in &sessions {
            let got: Vec<Vec<u32>> = split_subsessions(s, theta).into_iter().map(|x| x.items).collect();
            if got != oracle_split(s, theta) {
                failures.push(format!("split #{case}"));
            }
            subs.extend(split_subsessions(s, theta));
        }

        let window = rng.gen_range(1..8);
        for weighting in [Weighting::Uniform, Weighting::InverseDistance] {
            let got = build_cooccurrence(&subs, window, weighting, Execution::Parallel).unwrap();
            let want = oracle_cooccurrence(&subs, n as usize, window, weighting);
            let nonzero = want
                .iter()
                .enumerate()
                .flat_map(|(i, r)| r[i + 1..].iter())
                .filter(|&&v| v != 0.0)
                .count();
            if got.len() != nonzero {
                failures.push(format!("co-occurrence support #{case}"));
            }
            for i in 0..n {
                for j in 0..n {
                    let (g, w) = (got.get(i, j), want[i as usize][j as usize]);
                    match weighting {
                        Weighting::Uniform if g != w => failures.push(format!("uniform co-occurrence #{case}")),
                        Weighting::InverseDistance => inverse_error = inverse_error.max((g - w).abs()),
                        _ => {}
                    }
                }
            }
        }

        for s in &sessions {
            if expand_sequences(s) != oracle_expansion(s) {
                failures.push(format!("expansion #{case}"));
            }
        }

        let len = rng.gen_range(1..30);
        let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(0..6) as f64 * 0.25).collect();
        let order = oracle_order(&scores);
        let k = rng.gen_range(0..=len + 2);
        if rank_items(&scores, k) != order[..k.min(len)] {
            failures.push(format!("top-k #{case}"));
        }
        for t in 0..len as u32 {
            if target_rank(&scores, t) != order.iter().position(|&x| x == t).unwrap() + 1 {
                failures.push(format!("rank #{case}"));
            }
        }

        let ranks: Vec<Option<usize>> = (0..rng.gen_range(1..50))
            .map(|_| rng.gen_bool(0.9).then(|| rng.gen_range(1..40)))
            .collect();
        let k = rng.gen_range(1..40);
        let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
        if recall_at_k(&ranks, k) != hits as f64 / ranks.len() as f64 {
            failures.push(format!("recall #{case}"));
        }
        let rr: f64 = ranks
            .iter()
            .flatten()
            .filter(|&&r| r <= k)
            .map(|&r| 1.0 / r as f64)
            .sum();
        mrr_error = mrr_error.max((mrr_at_k(&ranks, k) - rr / ranks.len() as f64).abs());
    }
    failures.dedup();
    let ok = failures.is_empty() && inverse_error <= 1e-12 && mrr_error <= 1e-12;
    let detail = format!(
        "{INSTANCES} instances per oracle, 1/distance max error {inverse_error:.1e}, MRR max error {mrr_error:.1e}"
    );
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(format!("{detail}, mismatches: {}", failures.join(", ")))
    }
}

// 3

fn interval_encoding(_: &mut Ledger) -> Outcome {
    let hms = decompose_interval(182).unwrap();
    let model = StarModel::new(ModelConfig::new(4, 5), 9, None).unwrap();
    let absent = [Side::Before, Side::After]
        .iter()
        .all(|&side| model.encode_interval(None, side).unwrap().iter().all(|&v| v == 0.0));
    let present = model.encode_interval(Some(182), Side::Before).unwrap();
    let table = |unit: &str, row: usize| {
        model
            .params
            .by_name(&format!("time.before.{unit}"))
            .unwrap()
            .value
            .row(row)
            .to_vec()
    };
    let rows: Vec<f64> = [table("hours", 0), table("minutes", 3), table("seconds", 2)].concat();
    check(
        hms == Hms {
            hours: 0,
            minutes: 3,
            seconds: 2,
        } && absent
            && present == rows,
        format!(
            "182 s -> ({}, {}, {}), absent interval -> zero vector: {absent}",
            hms.hours, hms.minutes, hms.seconds
        ),
    )
}

// 4

fn overfit(ledger: &mut Ledger) -> Outcome {
    let start = Instant::now();
    let sessions = generate(&SynthConfig::successor(30, 50, 4));
    let samples = expand_corpus(&sessions, Execution::Parallel);
    let mut cfg = RunConfig::for_dataset(Dataset::Canonical, Fraction::Full);
    cfg.embedding_dim = 32;
    cfg.epochs = 200;
    cfg.lr = 0.005;
    cfg.lr_decay = 1.0;
    cfg.batch_size = 32;
    cfg.dropout = 0.0;
    cfg.validation_fraction = 0.0;
    let mut t = Trainer::new(cfg, 30, None, Execution::Parallel).unwrap();
    t.fit(&samples, &[], |_, _, _| Ok(())).unwrap();
    let ranks = model_ranks(&t.model, &samples, 64, Execution::Parallel).unwrap();
    let recall = recall_at_k(&ranks, 1);
    ledger
        .reports
        .push(MetricsReport::from_ranks("STAR", "successor-train", &ranks, 20));
    let elapsed = start.elapsed();
    check(
        recall >= 0.95 && elapsed < Duration::from_secs(300),
        format!(
            "{} samples, train Recall@1 {recall:.4} after 200 epochs, {elapsed:.1?}",
            samples.len()
        ),
    )
}

// 5 and 8 share one desk-scale run.

fn desk_config(self_attention: bool, time_attention: bool) -> RunConfig {
    let mut c = RunConfig::for_dataset(Dataset::Canonical, Fraction::Full);
    c.embedding_dim = 48;
    c.glove_epochs = 30;
    c.epochs = 10;
    c.lr = 0.003;
    c.decay_step = 6;
    c.batch_size = 64;
    c.dropout = 0.1;
    c.deterministic = true;
    c.self_attention = self_attention;
    c.time_attention = time_attention;
    c
}

fn desk_corpus(dir: &Path) -> Preprocessed {
    let path = dir.join("raw.tsv");
    write_raw(
        &generate(&SynthConfig::timed(300, 5000, 7)),
        File::create(&path).unwrap(),
    )
    .unwrap();
    let mut rejects = RejectLog::default();
    let rows = read_raw_file(&path, Dataset::Canonical, &mut rejects).unwrap();
    preprocess(rows, &mut rejects, &PreprocessConfig::for_dataset(Dataset::Canonical)).unwrap()
}

fn desk_run(ledger: &mut Ledger) -> &BTreeMap<String, MetricsReport> {
    if ledger.desk.is_none() {
        let exec = Execution::Parallel;
        let dir = tempfile::tempdir().unwrap();
        let pre = desk_corpus(dir.path());
        let base = desk_config(true, true);
        let (emb, _) = run::pretrain(&pre.train, &pre.vocab, &base, exec).unwrap();
        let (fit, valid) = run::training_samples(&pre.train, &base, exec).unwrap();
        let test = expand_corpus(&pre.test, exec);
        let mut out = BTreeMap::new();
        for (sa, ta) in [(true, true), (false, true), (true, false)] {
            let cfg = desk_config(sa, ta);
            let start = Instant::now();
            let mut t = Trainer::new(cfg.clone(), pre.vocab.len(), emb.init_embedding(), exec).unwrap();
            t.fit(&fit, &valid, |_, _, _| Ok(())).unwrap();
            let reports = run::evaluate(&t.model, &cfg, &pre.train, &test, "synthetic", 20, exec).unwrap();
            for r in reports {
                println!("    {r}");
                ledger.reports.push(r.clone());
                out.entry(r.model.clone()).or_insert(r);
            }
            println!("    ({} trained in {:.0?})", run::variant_name(&cfg), start.elapsed());
        }
        ledger.desk = Some(out);
    }
    ledger.desk.as_ref().unwrap()
}

fn comparative_sanity(ledger: &mut Ledger) -> Outcome {
    let r = desk_run(ledger);
    let (star, spop, knn) = (r["STAR"].recall, r["S-POP"].recall, r["Item-KNN"].recall);
    check(
        star > spop && star > knn,
        format!(
            "Recall@20 STAR {:.2} vs S-POP {:.2}, Item-KNN {:.2}",
            100.0 * star,
            100.0 * spop,
            100.0 * knn
        ),
    )
}

fn ablation_ordering(ledger: &mut Ledger) -> Outcome {
    let r = desk_run(ledger);
    let (star, v1, v2) = (r["STAR"].mrr, r["STAR_V1"].mrr, r["STAR_V2"].mrr);
    check(
        star >= v1 && star >= v2,
        format!(
            "MRR@20 STAR {:.2}, STAR_V1 {:.2}, STAR_V2 {:.2}",
            100.0 * star,
            100.0 * v1,
            100.0 * v2
        ),
    )
}

// 6

fn preprocessing_statistics(_: &mut Ledger) -> Outcome {
    let sources = [
        (
            "STAR_YOOCHOOSE_CLICKS",
            Dataset::Yoochoose,
            Fraction::Latest { num: 1, den: 64 },
            17_370usize,
            369_859usize,
        ),
        (
            "STAR_DIGINETICA_VIEWS",
            Dataset::Diginetica,
            Fraction::Full,
            43_097,
            719_470,
        ),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (var, dataset, fraction, items, sequences) in sources {
        let Some(path) = std::env::var_os(var) else { continue };
        let mut rejects = RejectLog::default();
        let rows = match read_raw_file(Path::new(&path), dataset, &mut rejects) {
            Ok(rows) => rows,
            Err(e) => return Outcome::Fail(format!("{var}: {e}")),
        };
        let mut cfg = PreprocessConfig::for_dataset(dataset);
        cfg.fraction = fraction;
        let pre = match preprocess(rows, &mut rejects, &cfg) {
            Ok(pre) => pre,
            Err(e) => return Outcome::Fail(format!("{dataset}: {e}")),
        };
        let st = &pre.train_stats;
        let deviation = (st.n_sequences as f64 - sequences as f64).abs() / sequences as f64;
        ok &= st.n_items == items && deviation <= 0.01;
        lines.push(format!(
            "{dataset}: {} items (expected {items}), {} sequences (expected {sequences}, {:.2}% off)",
            st.n_items,
            st.n_sequences,
            100.0 * deviation
        ));
    }
    if lines.is_empty() {
        return Outcome::Skip("set STAR_YOOCHOOSE_CLICKS or STAR_DIGINETICA_VIEWS to the raw logs".into());
    }
    check(ok, lines.join("; "))
}

// 7

fn metric_inequality(ledger: &mut Ledger) -> Outcome {
    desk_run(ledger);
    let bad: Vec<String> = ledger
        .reports
        .iter()
        .filter(|r| r.mrr > r.recall)
        .map(|r| r.to_string())
        .collect();
    if bad.is_empty() {
        Outcome::Pass(format!("MRR@k <= Recall@k on all {} reports", ledger.reports.len()))
    } else {
        Outcome::Fail(bad.join("; "))
    }
}

// 9

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_star"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "star {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

const OUTPUTS: [&str; 7] = [
    "data/train.tsv",
    "data/test.tsv",
    "data/vocab.tsv",
    "emb.ckpt",
    "run/final.ckpt",
    "run/best.ckpt",
    "report.tsv",
];

fn cli_run(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let model = ["--seed", "13", "--dim", "16", "--glove-epochs", "10", "--deterministic"];
    cli(
        dir,
        &[
            "synth",
            "--kind",
            "timed",
            "--items",
            "80",
            "--sessions",
            "600",
            "--seed",
            "3",
            "--out",
            "raw.tsv",
        ],
    )?;
    cli(
        dir,
        &[
            "preprocess",
            "--dataset",
            "canonical",
            "--input",
            "raw.tsv",
            "--out",
            "data",
        ],
    )?;
    cli(
        dir,
        &[&["pretrain", "--data", "data", "--out", "emb.ckpt"][..], &model].concat(),
    )?;
    cli(
        dir,
        &[
            &[
                "train", "--data", "data", "--init", "emb.ckpt", "--out", "run", "--epochs", "2",
            ][..],
            &model,
        ]
        .concat(),
    )?;
    cli(
        dir,
        &[
            "evaluate",
            "--checkpoint",
            "run/final.ckpt",
            "--data",
            "data",
            "--report",
            "report.tsv",
        ],
    )?;
    OUTPUTS
        .iter()
        .map(|f| fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn determinism(ledger: &mut Ledger) -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let runs = cli_run(a.path()).and_then(|x| cli_run(b.path()).map(|y| (x, y)));
    let (x, y) = match runs {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let reports = read_reports(BufReader::new(File::open(a.path().join("report.tsv")).unwrap())).unwrap();
    ledger.reports.extend(reports);
    let differing: Vec<&str> = OUTPUTS
        .iter()
        .zip(x.iter().zip(&y))
        .filter(|(_, (p, q))| p != q)
        .map(|(f, _)| *f)
        .collect();
    if differing.is_empty() {
        Outcome::Pass(format!("two CLI runs, {} output files byte-identical", OUTPUTS.len()))
    } else {
        Outcome::Fail(format!("differing outputs: {}", differing.join(", ")))
    }
}

type Criterion = fn(&mut Ledger) -> Outcome;

fn main() {
    let criteria: [(usize, &str, Criterion); 9] = [
        (1, "gradient integrity", gradient_integrity),
        (2, "oracle equivalence", oracle_equivalence),
        (3, "interval encoding", interval_encoding),
        (4, "overfit capability", overfit),
        (5, "comparative sanity", comparative_sanity),
        (6, "preprocessing statistics", preprocessing_statistics),
        (8, "ablation ordering", ablation_ordering),
        (9, "determinism", determinism),
        (7, "metric inequality", metric_inequality),
    ];
    let only: Option<Vec<usize>> = std::env::args()
        .skip(1)
        .find(|a| !a.starts_with('-'))
        .map(|a| a.split(',').filter_map(|x| x.parse().ok()).collect());
    let mut ledger = Ledger::default();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| f(&mut ledger)))
            .unwrap_or_else(|_| Outcome::Fail("panicked".into()));
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Skip(d) => ("SKIP", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id} {tag}: {name}: {detail} [{:.1?}]", start.elapsed());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
