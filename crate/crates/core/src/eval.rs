//! Ranking metrics, popularity and item-similarity baselines, and reports.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use crate::data::{ItemId, SequenceSample, Session};
use crate::error::{Result, StarError};
use crate::model::{Batch, StarModel};
use crate::par::{self, Execution};

pub const DEFAULT_K: usize = 20;

/// 1-based rank of `target`: items with a higher score, or an equal score
/// and a smaller id, come first.
pub fn target_rank(scores: &[f64], target: ItemId) -> usize {
    let t = target as usize;
    let s = scores[t];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < t))
        .count()
}

/// Top-`k` item ids by descending score, ties by ascending id.
pub fn rank_items(scores: &[f64], k: usize) -> Vec<ItemId> {
    let k = k.min(scores.len());
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < ids.len() && k > 0 {
        ids.select_nth_unstable_by(k - 1, cmp);
    }
    ids.truncate(k);
    ids.sort_unstable_by(cmp);
    ids.into_iter().map(|i| i as ItemId).collect()
}

/// Number of hits at each rank `1..=k` (index 0 unused) and total count.
fn histogram(ranks: &[Option<usize>], k: usize) -> Vec<u64> {
    let mut h = vec![0u64; k + 1];
    for r in ranks.iter().flatten() {
        if *r >= 1 && *r <= k {
            h[*r] += 1;
        }
    }
    h
}

pub fn recall_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    histogram(ranks, k).iter().sum::<u64>() as f64 / ranks.len() as f64
}

/// Mean reciprocal rank, summed per rank bucket so the result does not
/// depend on sample order.
pub fn mrr_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let h = histogram(ranks, k);
    let total: f64 = (1..=k).map(|r| h[r] as f64 / r as f64).sum();
    total / ranks.len() as f64
}

/// Global training click counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    pub counts: Vec<u64>,
}

impl Popularity {
    pub fn fit(train: &[Session], n_items: usize) -> Self {
        let mut counts = vec![0u64; n_items];
        for s in train {
            for i in s.items() {
                counts[i as usize] += 1;
            }
        }
        Popularity { counts }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// In-session frequency first, global frequency second.
    pub fn session_scores(&self, session: &[ItemId]) -> Vec<f64> {
        let c = self.counts.iter().max().copied().unwrap_or(0) as f64 + 1.0;
        let mut s = self.scores();
        for &i in session {
            s[i as usize] += c;
        }
        s
    }
}

/// Cosine item similarities over session-incidence vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemKnn {
    /// Sparse rows `(j, cos(i, j))`, sorted by `j`, self excluded.
    neighbours: Vec<Vec<(ItemId, f64)>>,
}

impl ItemKnn {
    /// `counts = false` uses binary incidence; `true` uses in-session counts.
    pub fn fit(train: &[Session], n_items: usize, counts: bool) -> Self {
        let mut postings: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_items];
        for (si, s) in train.iter().enumerate() {
            let mut tally: Vec<(ItemId, f64)> = Vec::new();
            for i in s.items() {
                match tally.iter_mut().find(|(j, _)| *j == i) {
                    Some(e) => e.1 += 1.0,
                    None => tally.push((i, 1.0)),
                }
            }
            for (i, c) in tally {
                postings[i as usize].push((si, if counts { c } else { 1.0 }));
            }
        }
        let norms: Vec<f64> = postings
            .iter()
            .map(|p| p.iter().map(|(_, v)| v * v).sum::<f64>().sqrt())
            .collect();
        let mut by_session: Vec<Vec<(ItemId, f64)>> = vec![Vec::new(); train.len()];
        for (i, p) in postings.iter().enumerate() {
            for &(s, v) in p {
                by_session[s].push((i as ItemId, v));
            }
        }
        let neighbours = (0..n_items)
            .map(|i| {
                let mut dots: HashMap<ItemId, f64> = HashMap::new();
                for &(s, vi) in &postings[i] {
                    for &(j, vj) in &by_session[s] {
                        if j as usize != i {
                            *dots.entry(j).or_insert(0.0) += vi * vj;
                        }
                    }
                }
                let mut row: Vec<(ItemId, f64)> = dots
                    .into_iter()
                    .map(|(j, dot)| (j, dot / (norms[i] * norms[j as usize])))
                    .collect();
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect();
        ItemKnn { neighbours }
    }

    pub fn similarity(&self, i: ItemId, j: ItemId) -> f64 {
        if i == j {
            return 1.0;
        }
        let row = &self.neighbours[i as usize];
        row.binary_search_by_key(&j, |&(k, _)| k)
            .map(|p| row[p].1)
            .unwrap_or(0.0)
    }

    /// `score_j = Σ_i cos(i, j)` over the distinct session items `i ≠ j`.
    pub fn scores(&self, session: &[ItemId]) -> Vec<f64> {
        let mut distinct = session.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let mut s = vec![0.0; self.neighbours.len()];
        for i in distinct {
            for &(j, c) in &self.neighbours[i as usize] {
                s[j as usize] += c;
            }
        }
        s
    }
}

/// Target ranks for any per-sample scorer, evaluated in parallel.
pub fn ranks_with<F>(samples: &[SequenceSample], exec: Execution, score: F) -> Vec<Option<usize>>
where
    F: Fn(&SequenceSample) -> Vec<f64> + Sync,
{
    par::map(exec, samples, |s| Some(target_rank(&score(s), s.target)))
}

/// Target ranks under a trained model, scored `batch_size` samples at a time.
pub fn model_ranks(
    model: &StarModel,
    samples: &[SequenceSample],
    batch_size: usize,
    exec: Execution,
) -> Result<Vec<Option<usize>>> {
    let n = model.n_items();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let scores = model.score_batch(&Batch::new(chunk), exec)?;
        for (b, s) in chunk.iter().enumerate() {
            out.push(Some(target_rank(&scores[b * n..(b + 1) * n], s.target)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub k: usize,
    pub recall: f64,
    pub mrr: f64,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn from_ranks(model: &str, dataset: &str, ranks: &[Option<usize>], k: usize) -> Self {
        MetricsReport {
            model: model.to_string(),
            dataset: dataset.to_string(),
            k,
            recall: recall_at_k(ranks, k),
            mrr: mrr_at_k(ranks, k),
            n_samples: ranks.len(),
        }
    }
}

pub const REPORT_HEADER: &str = "model\tdataset\tk\trecall\tmrr\tn_samples";

pub fn write_reports<W: Write>(reports: &[MetricsReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.model, r.dataset, r.k, r.recall, r.mrr, r.n_samples
        )?;
    }
    Ok(())
}

pub fn read_reports<R: BufRead>(r: R) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| StarError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if n == 0 {
            if line != REPORT_HEADER {
                return Err(StarError::Parse {
                    line: 1,
                    message: "unexpected report header".into(),
                });
            }
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| StarError::Parse {
            line: n + 1,
            message: format!("bad {what}"),
        };
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        out.push(MetricsReport {
            model: f[0].to_string(),
            dataset: f[1].to_string(),
            k: f[2].parse().map_err(|_| bad("k"))?,
            recall: f[3].parse().map_err(|_| bad("recall"))?,
            mrr: f[4].parse().map_err(|_| bad("mrr"))?,
            n_samples: f[5].parse().map_err(|_| bad("n_samples"))?,
        });
    }
    Ok(out)
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} {:<12} Recall@{k}: {:6.2}%  MRR@{k}: {:6.2}%  ({} samples)",
            self.model,
            self.dataset,
            self.recall * 100.0,
            self.mrr * 100.0,
            self.n_samples,
            k = self.k
        )
    }
}

/// POP, S-POP and Item-KNN reports on `test`.
pub fn baseline_reports(
    train: &[Session],
    test: &[SequenceSample],
    n_items: usize,
    dataset: &str,
    k: usize,
    exec: Execution,
) -> Vec<MetricsReport> {
    let pop = Popularity::fit(train, n_items);
    let knn = ItemKnn::fit(train, n_items, false);
    let global = pop.scores();
    vec![
        MetricsReport::from_ranks("POP", dataset, &ranks_with(test, exec, |_| global.clone()), k),
        MetricsReport::from_ranks(
            "S-POP",
            dataset,
            &ranks_with(test, exec, |s| pop.session_scores(&s.prefix)),
            k,
        ),
        MetricsReport::from_ranks(
            "Item-KNN",
            dataset,
            &ranks_with(test, exec, |s| knn.scores(&s.prefix)),
            k,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::Event;

    fn session(id: &str, items: &[u32]) -> Session {
        let events = items
            .iter()
            .enumerate()
            .map(|(k, &i)| Event {
                item: i,
                timestamp: k as i64,
            })
            .collect();
        Session::new(id, events)
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_items(&[0.1, 0.9, 0.5], 2), [1, 2]);
        assert_eq!(rank_items(&[0.3; 6], 4), [0, 1, 2, 3]);
        assert_eq!(target_rank(&[0.3; 6], 4), 5);
        assert_eq!(target_rank(&[0.1, 0.9, 0.5], 0), 3);
    }

    #[test]
    fn metric_examples() {
        let ranks = [Some(1), Some(25), Some(3), None];
        assert_eq!(recall_at_k(&ranks, 20), 0.5);
        assert_eq!(mrr_at_k(&[Some(1), Some(4)], 20), 0.625);
        assert_eq!(mrr_at_k(&[Some(21)], 20), 0.0);
        assert_eq!(recall_at_k(&[Some(1); 3], 20), 1.0);
        assert_eq!(mrr_at_k(&[Some(1); 3], 20), 1.0);
    }

    #[test]
    fn spop_orders_session_items_first() {
        let train = [session("1", &[3, 3, 3, 2]), session("2", &[3, 4])];
        let pop = Popularity::fit(&train, 5);
        let s = pop.session_scores(&[0, 1, 0]);
        let top = rank_items(&s, 5);
        assert_eq!(&top[..2], &[0, 1]);
        assert_eq!(pop.scores(), Popularity::fit(&train, 5).scores());
    }

    #[test]
    fn knn_bounds() {
        let train = [session("1", &[0, 1]), session("2", &[0, 1, 2]), session("3", &[3])];
        let knn = ItemKnn::fit(&train, 4, false);
        assert_eq!(knn.similarity(2, 2), 1.0);
        assert_eq!(knn.similarity(0, 3), 0.0);
        assert!((knn.similarity(0, 1) - 1.0).abs() < 1e-12);
        assert!((knn.similarity(0, 2) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        let s = knn.scores(&[0, 0]);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn report_table_round_trips() {
        let r = MetricsReport::from_ranks("STAR", "synthetic", &[Some(1), Some(30), Some(2)], 20);
        let mut buf = Vec::new();
        write_reports(&[r.clone()], &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(REPORT_HEADER));
        assert_eq!(read_reports(&buf[..]).unwrap(), vec![r]);
    }

    fn sort_oracle(scores: &[f64], k: usize) -> Vec<ItemId> {
        let mut ids: Vec<usize> = (0..scores.len()).collect();
        ids.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        ids.into_iter().take(k).map(|i| i as ItemId).collect()
    }

    fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0i32..6).prop_map(|v| v as f64 * 0.25), 1..40)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ranking_matches_full_sort(scores in scores_strategy(), k in 1usize..45, t in any::<prop::sample::Index>()) {
            let oracle = sort_oracle(&scores, k.min(scores.len()));
            prop_assert_eq!(rank_items(&scores, k), oracle);
            let target = t.index(scores.len()) as ItemId;
            let full = sort_oracle(&scores, scores.len());
            let pos = full.iter().position(|&i| i == target).unwrap() + 1;
            prop_assert_eq!(target_rank(&scores, target), pos);
        }

        #[test]
        fn metrics_match_direct_count(ranks in prop::collection::vec(prop::option::of(1usize..40), 1..60), k in 1usize..30) {
            let hits = ranks.iter().filter(|r| matches!(r, Some(v) if *v <= k)).count();
            prop_assert_eq!(recall_at_k(&ranks, k), hits as f64 / ranks.len() as f64);
            let direct: f64 = ranks.iter().map(|r| match r { Some(v) if *v <= k => 1.0 / *v as f64, _ => 0.0 }).sum::<f64>() / ranks.len() as f64;
            prop_assert!((mrr_at_k(&ranks, k) - direct).abs() < 1e-12);
            prop_assert!(mrr_at_k(&ranks, k) <= recall_at_k(&ranks, k));
        }

        #[test]
        fn metrics_are_permutation_invariant(mut ranks in prop::collection::vec(prop::option::of(1usize..40), 1..60), seed in any::<u64>()) {
            let (r0, m0) = (recall_at_k(&ranks, 20), mrr_at_k(&ranks, 20));
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(&mut ranks[..], &mut rng);
            prop_assert_eq!(recall_at_k(&ranks, 20), r0);
            prop_assert_eq!(mrr_at_k(&ranks, 20), m0);
        }

        #[test]
        fn knn_is_symmetric_with_unit_diagonal(sessions in prop::collection::vec(prop::collection::vec(0u32..12, 1..6), 1..15)) {
            let train: Vec<Session> = sessions.iter().enumerate().map(|(i, s)| session(&i.to_string(), s)).collect();
            let knn = ItemKnn::fit(&train, 12, false);
            for i in 0..12 {
                prop_assert_eq!(knn.similarity(i, i), 1.0);
                for j in 0..12 {
                    prop_assert!((knn.similarity(i, j) - knn.similarity(j, i)).abs() < 1e-12);
                    prop_assert!(knn.similarity(i, j) <= 1.0 + 1e-12);
                }
            }
        }
    }
}
