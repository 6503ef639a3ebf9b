//! Item embedding pretraining: sessions are cut into sub-sessions at long
//! pauses, items are counted as co-occurring within a window inside each
//! sub-session, and GloVe vectors are fit to the log counts.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ItemId, Session};
use crate::error::{Result, StarError};
use crate::numeric::Tensor;
use crate::par::{self, Execution};

/// Mean gap between adjacent events over all sessions.
pub fn average_interval(sessions: &[Session]) -> Result<f64> {
    let (sum, count) = sessions
        .iter()
        .flat_map(Session::intervals)
        .fold((0.0, 0usize), |(s, c), x| (s + x as f64, c + 1));
    if count == 0 {
        return Err(StarError::EmptyCorpus("collecting time intervals"));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubSession {
    pub items: Vec<ItemId>,
}

/// Breaks the session after every gap longer than `theta` seconds.
pub fn split_subsessions(session: &Session, theta: f64) -> Vec<SubSession> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (k, e) in session.events.iter().enumerate() {
        if k > 0 && (e.timestamp - session.events[k - 1].timestamp) as f64 > theta {
            out.push(SubSession {
                items: std::mem::take(&mut current),
            });
        }
        current.push(e.item);
    }
    if !current.is_empty() {
        out.push(SubSession { items: current });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Pairs `t` positions apart add `1 / t`.
    #[default]
    InverseDistance,
    /// Every pair inside the window adds 1.
    Uniform,
}

/// Sparse symmetric item co-occurrence weights without a diagonal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CooccurrenceMatrix {
    /// `(i, j, weight)` with `i < j`, sorted.
    entries: Vec<(ItemId, ItemId, f64)>,
}

impl CooccurrenceMatrix {
    pub fn get(&self, i: ItemId, j: ItemId) -> f64 {
        let key = (i.min(j), i.max(j));
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&key))
            .map_or(0.0, |k| self.entries[k].2)
    }

    /// Number of unordered pairs stored.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn upper(&self) -> &[(ItemId, ItemId, f64)] {
        &self.entries
    }

    /// Both orientations of every pair.
    pub fn iter_symmetric(&self) -> impl Iterator<Item = (ItemId, ItemId, f64)> + '_ {
        self.entries.iter().flat_map(|&(i, j, x)| [(i, j, x), (j, i, x)])
    }
}

const COUNT_CHUNK: usize = 1024;

type DistanceCounts = HashMap<(ItemId, ItemId, u32), u64>;

/// Counts pairs within `window` positions of each other in every
/// sub-session. Counts are kept per distance and folded into weights in
/// ascending distance order, so the result is identical however the work
/// was split.
pub fn build_cooccurrence(
    subsessions: &[SubSession],
    window: usize,
    weighting: Weighting,
    exec: Execution,
) -> Result<CooccurrenceMatrix> {
    if window == 0 {
        return Err(StarError::InvalidArgument("co-occurrence window must be ≥ 1".into()));
    }
    let partials = par::map_chunks(exec, subsessions, COUNT_CHUNK, |_, chunk| {
        let mut counts = DistanceCounts::new();
        for s in chunk {
            let items = &s.items;
            for a in 0..items.len() {
                for b in a + 1..items.len().min(a + window + 1) {
                    let (i, j) = (items[a], items[b]);
                    if i == j {
                        continue;
                    }
                    *counts.entry((i.min(j), i.max(j), (b - a) as u32)).or_default() += 1;
                }
            }
        }
        counts
    });
    let mut merged: BTreeMap<(ItemId, ItemId, u32), u64> = BTreeMap::new();
    for part in partials {
        for (k, c) in part {
            *merged.entry(k).or_default() += c;
        }
    }
    let mut entries: Vec<(ItemId, ItemId, f64)> = Vec::new();
    for ((i, j, t), c) in merged {
        let w = match weighting {
            Weighting::InverseDistance => c as f64 / t as f64,
            Weighting::Uniform => c as f64,
        };
        match entries.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += w,
            _ => entries.push((i, j, w)),
        }
    }
    Ok(CooccurrenceMatrix { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GloveMode {
    /// Entries updated one after another; bit-reproducible.
    #[default]
    Deterministic,
    /// Entries updated concurrently with unsynchronized parameter access.
    Hogwild,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GloveConfig {
    pub dim: usize,
    pub epochs: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: GloveMode,
}

impl Default for GloveConfig {
    fn default() -> Self {
        GloveConfig {
            dim: 180,
            epochs: 100,
            x_max: 100.0,
            alpha: 0.75,
            learning_rate: 0.05,
            seed: 0,
            mode: GloveMode::Deterministic,
        }
    }
}

/// Trained GloVe parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveState {
    pub dim: usize,
    pub w: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub b: Vec<f64>,
    pub b_tilde: Vec<f64>,
    /// Mean weighted squared error per epoch.
    pub losses: Vec<f64>,
}

impl GloveState {
    pub fn n_items(&self) -> usize {
        self.b.len()
    }

    /// `w + w̃` per item, as an `n × d` table.
    pub fn embeddings(&self) -> Tensor {
        let data = self.w.iter().zip(&self.w_tilde).map(|(a, b)| a + b).collect();
        Tensor::from_vec(&[self.n_items(), self.dim], data).expect("n × d")
    }

    /// Model prediction `w_i · w̃_j + b_i + b̃_j` for log co-occurrence.
    pub fn predict(&self, i: ItemId, j: ItemId) -> f64 {
        let d = self.dim;
        let (i, j) = (i as usize, j as usize);
        let dot: f64 = self.w[i * d..(i + 1) * d]
            .iter()
            .zip(&self.w_tilde[j * d..(j + 1) * d])
            .map(|(a, b)| a * b)
            .sum();
        dot + self.b[i] + self.b_tilde[j]
    }
}

/// Scalar storage the update loop can read and write through `&self`.
trait Cells: Sync {
    fn get(&self, i: usize) -> f64;
    fn set(&self, i: usize, v: f64);
}

struct Local<'a>(&'a [Cell<f64>]);

// Only ever used from one thread; the bound is required by the shared
// update signature.
unsafe impl Sync for Local<'_> {}

impl<'a> Local<'a> {
    fn new(v: &'a mut [f64]) -> Self {
        Local(Cell::from_mut(v).as_slice_of_cells())
    }
}

impl Cells for Local<'_> {
    fn get(&self, i: usize) -> f64 {
        self.0[i].get()
    }
    fn set(&self, i: usize, v: f64) {
        self.0[i].set(v)
    }
}

struct Shared(Vec<AtomicU64>);

impl Shared {
    fn new(v: &[f64]) -> Self {
        Shared(v.iter().map(|x| AtomicU64::new(x.to_bits())).collect())
    }
    fn into_vec(self) -> Vec<f64> {
        self.0.into_iter().map(|a| f64::from_bits(a.into_inner())).collect()
    }
}

impl Cells for Shared {
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.0[i].load(Ordering::Relaxed))
    }
    fn set(&self, i: usize, v: f64) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed)
    }
}

struct Params<C> {
    w: C,
    wt: C,
    b: C,
    bt: C,
    gw: C,
    gwt: C,
    gb: C,
    gbt: C,
}

/// AdaGrad update for one entry; returns its weighted squared error.
fn update<C: Cells>(p: &Params<C>, d: usize, cfg: &GloveConfig, i: usize, j: usize, x: f64) -> f64 {
    let (wi, wj) = (i * d, j * d);
    let mut diff = p.b.get(i) + p.bt.get(j) - x.ln();
    for k in 0..d {
        diff += p.w.get(wi + k) * p.wt.get(wj + k);
    }
    let f = if x < cfg.x_max {
        (x / cfg.x_max).powf(cfg.alpha)
    } else {
        1.0
    };
    let fdiff = f * diff;
    if !fdiff.is_finite() {
        return f64::NAN;
    }
    let lr = cfg.learning_rate;
    for k in 0..d {
        let (a, c) = (wi + k, wj + k);
        let g1 = fdiff * p.wt.get(c);
        let g2 = fdiff * p.w.get(a);
        p.w.set(a, p.w.get(a) - lr * g1 / p.gw.get(a).sqrt());
        p.wt.set(c, p.wt.get(c) - lr * g2 / p.gwt.get(c).sqrt());
        p.gw.set(a, p.gw.get(a) + g1 * g1);
        p.gwt.set(c, p.gwt.get(c) + g2 * g2);
    }
    p.b.set(i, p.b.get(i) - lr * fdiff / p.gb.get(i).sqrt());
    p.bt.set(j, p.bt.get(j) - lr * fdiff / p.gbt.get(j).sqrt());
    p.gb.set(i, p.gb.get(i) + fdiff * fdiff);
    p.gbt.set(j, p.gbt.get(j) + fdiff * fdiff);
    0.5 * fdiff * diff
}

const HOGWILD_CHUNK: usize = 4096;

/// Fits GloVe vectors for `n_items` items to the co-occurrence weights.
pub fn train_glove(x: &CooccurrenceMatrix, n_items: usize, cfg: &GloveConfig, exec: Execution) -> Result<GloveState> {
    if x.is_empty() {
        return Err(StarError::EmptyCorpus("co-occurrence counting"));
    }
    if let Some(&(_, j, _)) = x.upper().iter().find(|e| e.1 as usize >= n_items) {
        return Err(StarError::ItemOutOfRange {
            id: j as usize,
            n: n_items,
        });
    }
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 0.5 / d as f64;
    let mut init = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-scale..scale)).collect() };
    let mut w = init(n_items * d);
    let mut wt = init(n_items * d);
    let mut b = init(n_items);
    let mut bt = init(n_items);
    let mut gw = vec![1.0; n_items * d];
    let mut gwt = vec![1.0; n_items * d];
    let mut gb = vec![1.0; n_items];
    let mut gbt = vec![1.0; n_items];

    let mut order: Vec<(usize, usize, f64)> = x
        .iter_symmetric()
        .map(|(i, j, v)| (i as usize, j as usize, v))
        .collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let parallel = cfg.mode == GloveMode::Hogwild && exec.is_parallel();

    if parallel {
        let p = Params {
            w: Shared::new(&w),
            wt: Shared::new(&wt),
            b: Shared::new(&b),
            bt: Shared::new(&bt),
            gw: Shared::new(&gw),
            gwt: Shared::new(&gwt),
            gb: Shared::new(&gb),
            gbt: Shared::new(&gbt),
        };
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let parts = par::map_chunks(exec, &order, HOGWILD_CHUNK, |_, chunk| {
                chunk.iter().map(|&(i, j, v)| update(&p, d, cfg, i, j, v)).sum::<f64>()
            });
            let loss = parts.iter().sum::<f64>() / order.len() as f64;
            if !loss.is_finite() {
                return Err(StarError::GloveDiverged { epoch: epoch + 1 });
            }
            losses.push(loss);
        }
        w = p.w.into_vec();
        wt = p.wt.into_vec();
        b = p.b.into_vec();
        bt = p.bt.into_vec();
    } else {
        let p = Params {
            w: Local::new(&mut w),
            wt: Local::new(&mut wt),
            b: Local::new(&mut b),
            bt: Local::new(&mut bt),
            gw: Local::new(&mut gw),
            gwt: Local::new(&mut gwt),
            gb: Local::new(&mut gb),
            gbt: Local::new(&mut gbt),
        };
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let loss = order.iter().map(|&(i, j, v)| update(&p, d, cfg, i, j, v)).sum::<f64>() / order.len() as f64;
            if !loss.is_finite() {
                return Err(StarError::GloveDiverged { epoch: epoch + 1 });
            }
            losses.push(loss);
        }
    }
    Ok(GloveState {
        dim: d,
        w,
        w_tilde: wt,
        b,
        b_tilde: bt,
        losses,
    })
}
