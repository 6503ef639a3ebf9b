use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{GruIds, Ids, LinearIds, TimeIds};
use super::{decompose_interval, Batch, Hms, LossMode, SampleView, StarModel};
use crate::data::Interval;
use crate::error::{Result, StarError};
use crate::numeric::ops::{
    add_assign, axpy, dot, mat_vec_acc, outer_acc, sigmoid_scalar, softmax_in_place, vec_mat_acc,
};
use crate::numeric::{GradSet, ParameterStore};
use crate::par::{self, Execution};

/// Probability floor applied before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Samples per gradient-accumulation chunk.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; masks drawn from `(seed, step, row)`.
    Train {
        seed: u64,
        step: u64,
    },
    Eval,
}

/// Per-position state of one GRU direction, indexed by sequence position.
#[derive(Debug, Clone, PartialEq)]
pub struct GruTrace {
    /// `[h_prev; x]`, `m × 2d`.
    pub hx: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// `[r ⊙ h_prev; x]`, `m × 2d`.
    pub rhx: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

/// Everything the backward pass needs from one sample's forward pass.
/// Per-position buffers are flattened `m × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub len: usize,
    pub item_emb: Vec<f64>,
    /// `[before, after]` interval embeddings (`m × 3d`), empty without
    /// time attention.
    pub interval_emb: [Vec<f64>; 2],
    intervals: [Vec<Option<Hms>>; 2],
    pub forward: GruTrace,
    pub backward: GruTrace,
    /// `h''` after dropout.
    pub combined: Vec<f64>,
    /// Sigmoid outputs of the attention-weight layers before dropout.
    pub weight_sig: [Vec<f64>; 2],
    /// `[AW^B, AW^A]`.
    pub weights: [Vec<f64>; 2],
    /// `h^A` and `h^B`.
    pub gated_after: Vec<f64>,
    pub gated_before: Vec<f64>,
    /// `α` for anchors `(A,1)`, `(A,m)`, `(B,1)`, `(B,m)`.
    pub alphas: [Vec<f64>; 4],
    /// `AP^A_1, AP^A_m, AP^B_1, AP^B_m`.
    pub preferences: [Vec<f64>; 4],
    pub z: Vec<f64>,
    pub z_prime: Vec<f64>,
    masks: Masks,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Masks {
    item: Option<Vec<f64>>,
    interval: [Option<Vec<f64>>; 2],
    combined: Option<Vec<f64>>,
    weights: [Option<Vec<f64>>; 2],
    z_prime: Option<Vec<f64>>,
}

fn apply(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn row_seed(seed: u64, step: u64, row: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ step) ^ row)
}

struct Dropout {
    rng: Option<ChaCha8Rng>,
    rate: f64,
}

impl Dropout {
    fn mask(&mut self, len: usize) -> Option<Vec<f64>> {
        let rng = self.rng.as_mut()?;
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.rate);
        Some(
            (0..len)
                .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
                .collect(),
        )
    }
}

/// Output of a batched forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub losses: Vec<f64>,
    pub mean_loss: f64,
    /// `B × n` predicted distributions.
    pub probabilities: Vec<f64>,
}

/// Softmax attention of every position onto `anchor`.
fn attend(hs: &[f64], d: usize, anchor: usize) -> (Vec<f64>, Vec<f64>) {
    let m = hs.len() / d;
    let a = &hs[anchor * d..(anchor + 1) * d];
    let mut alpha: Vec<f64> = (0..m).map(|k| dot(&hs[k * d..(k + 1) * d], a)).collect();
    softmax_in_place(&mut alpha);
    let mut ap = vec![0.0; d];
    for (k, &w) in alpha.iter().enumerate() {
        axpy(&mut ap, w, &hs[k * d..(k + 1) * d]);
    }
    (alpha, ap)
}

fn attend_backward(hs: &[f64], d: usize, anchor: usize, alpha: &[f64], d_ap: &[f64], d_hs: &mut [f64]) {
    let m = alpha.len();
    let d_alpha: Vec<f64> = (0..m).map(|k| dot(d_ap, &hs[k * d..(k + 1) * d])).collect();
    let s = dot(alpha, &d_alpha);
    let a = &hs[anchor * d..(anchor + 1) * d];
    let mut d_anchor = vec![0.0; d];
    for k in 0..m {
        let ds = alpha[k] * (d_alpha[k] - s);
        let row = &mut d_hs[k * d..(k + 1) * d];
        axpy(row, alpha[k], d_ap);
        axpy(row, ds, a);
        axpy(&mut d_anchor, ds, &hs[k * d..(k + 1) * d]);
    }
    add_assign(&mut d_hs[anchor * d..(anchor + 1) * d], &d_anchor);
}

impl StarModel {
    fn check_items(&self, items: &[u32]) -> Result<()> {
        let n = self.config.n_items;
        match items.iter().find(|&&i| i as usize >= n) {
            Some(&i) => Err(StarError::ItemOutOfRange { id: i as usize, n }),
            None => Ok(()),
        }
    }

    /// Looks up an interval embedding: three unit-table rows side by side,
    /// or zeros for an absent interval.
    fn interval_embedding(store: &ParameterStore, t: &TimeIds, hms: Option<Hms>, d: usize, out: &mut [f64]) {
        match hms {
            None => out.fill(0.0),
            Some(h) => {
                for (u, &row) in [h.hours, h.minutes, h.seconds].iter().enumerate() {
                    out[u * d..(u + 1) * d].copy_from_slice(store.value(t.tables[u]).row(row));
                }
            }
        }
    }

    /// Interval embedding `[E_h; E_m; E_s]` for one side (`3d` long).
    pub fn encode_interval(&self, interval: Interval, side: super::Side) -> Result<Vec<f64>> {
        let d = self.config.dim;
        let mut out = vec![0.0; 3 * d];
        let Some(times) = self.ids().time else {
            return Err(StarError::InvalidArgument("model has no interval tables".into()));
        };
        let t = &times[side as usize];
        let hms = interval.map(|s| decompose_interval(s as i64)).transpose()?;
        Self::interval_embedding(&self.params, t, hms, d, &mut out);
        Ok(out)
    }

    fn gru_forward(&self, g: &GruIds, xs: &[f64], reverse: bool) -> GruTrace {
        let d = self.config.dim;
        let m = xs.len() / d;
        let p = &self.params;
        let mut t = GruTrace {
            hx: vec![0.0; m * 2 * d],
            z: vec![0.0; m * d],
            r: vec![0.0; m * d],
            rhx: vec![0.0; m * 2 * d],
            candidate: vec![0.0; m * d],
            h: vec![0.0; m * d],
        };
        let mut prev = vec![0.0; d];
        let order: Vec<usize> = if reverse {
            (0..m).rev().collect()
        } else {
            (0..m).collect()
        };
        for k in order {
            let x = &xs[k * d..(k + 1) * d];
            let (s1, s2) = (k * d..(k + 1) * d, k * 2 * d..(k + 1) * 2 * d);
            let hx = &mut t.hx[s2.clone()];
            hx[..d].copy_from_slice(&prev);
            hx[d..].copy_from_slice(x);

            let z = &mut t.z[s1.clone()];
            z.copy_from_slice(p.value(g.b_z).data());
            vec_mat_acc(hx, p.value(g.w_z).data(), d, z);
            z.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
            let r = &mut t.r[s1.clone()];
            r.copy_from_slice(p.value(g.b_r).data());
            vec_mat_acc(hx, p.value(g.w_r).data(), d, r);
            r.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));

            let rhx = &mut t.rhx[s2];
            for i in 0..d {
                rhx[i] = r[i] * prev[i];
            }
            rhx[d..].copy_from_slice(x);
            let c = &mut t.candidate[s1.clone()];
            c.copy_from_slice(p.value(g.b_h).data());
            vec_mat_acc(rhx, p.value(g.w_h).data(), d, c);
            c.iter_mut().for_each(|v| *v = v.tanh());

            let h = &mut t.h[s1];
            for i in 0..d {
                h[i] = (1.0 - z[i]) * prev[i] + z[i] * c[i];
            }
            prev.copy_from_slice(h);
        }
        t
    }

    /// Backpropagates `d_h` (gradient on every output state) through one
    /// direction, adding input gradients into `d_x`.
    fn gru_backward(&self, g: &GruIds, t: &GruTrace, d_h: &[f64], reverse: bool, d_x: &mut [f64], grads: &mut GradSet) {
        let d = self.config.dim;
        let m = d_h.len() / d;
        let p = &self.params;
        let mut carry = vec![0.0; d];
        let order: Vec<usize> = if reverse {
            (0..m).collect()
        } else {
            (0..m).rev().collect()
        };
        let (mut dz, mut dr, mut dc) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut d_prev = vec![0.0; d];
        let mut d_rhx = vec![0.0; 2 * d];
        let mut d_hx = vec![0.0; 2 * d];
        for k in order {
            let s1 = k * d..(k + 1) * d;
            let s2 = k * 2 * d..(k + 1) * 2 * d;
            let (z, r, c) = (&t.z[s1.clone()], &t.r[s1.clone()], &t.candidate[s1.clone()]);
            let hx = &t.hx[s2.clone()];
            let rhx = &t.rhx[s2];
            let prev = &hx[..d];
            for i in 0..d {
                let dh = d_h[k * d + i] + carry[i];
                dz[i] = dh * (c[i] - prev[i]) * z[i] * (1.0 - z[i]);
                dc[i] = dh * z[i] * (1.0 - c[i] * c[i]);
                d_prev[i] = dh * (1.0 - z[i]);
            }
            outer_acc(rhx, &dc, grads.dense(g.w_h));
            add_assign(grads.dense(g.b_h), &dc);
            d_rhx.fill(0.0);
            mat_vec_acc(p.value(g.w_h).data(), d, &dc, &mut d_rhx);
            for i in 0..d {
                dr[i] = d_rhx[i] * prev[i] * r[i] * (1.0 - r[i]);
                d_prev[i] += d_rhx[i] * r[i];
            }
            add_assign(&mut d_x[s1.clone()], &d_rhx[d..]);

            outer_acc(hx, &dz, grads.dense(g.w_z));
            add_assign(grads.dense(g.b_z), &dz);
            outer_acc(hx, &dr, grads.dense(g.w_r));
            add_assign(grads.dense(g.b_r), &dr);
            d_hx.fill(0.0);
            mat_vec_acc(p.value(g.w_z).data(), d, &dz, &mut d_hx);
            mat_vec_acc(p.value(g.w_r).data(), d, &dr, &mut d_hx);
            add_assign(&mut d_prev, &d_hx[..d]);
            add_assign(&mut d_x[s1], &d_hx[d..]);
            carry.copy_from_slice(&d_prev);
        }
    }

    /// Runs the encoder on one prefix up to `z'`.
    pub fn trace(&self, s: SampleView<'_>, mode: Mode, row: u64) -> Result<ForwardTrace> {
        self.check_items(s.items)?;
        let ids = self.ids();
        self.trace_with(&ids, s, mode, row)
    }

    fn trace_with(&self, ids: &Ids, s: SampleView<'_>, mode: Mode, row: u64) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let d = cfg.dim;
        let m = s.items.len();
        if m == 0 {
            return Err(StarError::InvalidArgument("empty prefix".into()));
        }
        let p = &self.params;
        let mut drop = Dropout {
            rng: match mode {
                Mode::Train { seed, step } => Some(ChaCha8Rng::seed_from_u64(row_seed(seed, step, row))),
                Mode::Eval => None,
            },
            rate: cfg.dropout,
        };
        let mut masks = Masks::default();

        // module 1: item and interval embeddings
        let table = p.value(ids.item);
        let mut item_emb = Vec::with_capacity(m * d);
        for &i in s.items {
            item_emb.extend_from_slice(table.row(i as usize));
        }
        masks.item = drop.mask(m * d);
        apply(&mut item_emb, &masks.item);

        let mut interval_emb = [Vec::new(), Vec::new()];
        let mut intervals = [Vec::new(), Vec::new()];
        if let Some(times) = &ids.time {
            for (side, raw) in [s.before, s.after].into_iter().enumerate() {
                let hms: Vec<Option<Hms>> = raw
                    .iter()
                    .map(|iv| iv.map(|x| decompose_interval(x as i64)).transpose())
                    .collect::<Result<_>>()?;
                let mut emb = vec![0.0; m * 3 * d];
                for (k, h) in hms.iter().enumerate() {
                    Self::interval_embedding(p, &times[side], *h, d, &mut emb[k * 3 * d..(k + 1) * 3 * d]);
                }
                masks.interval[side] = drop.mask(m * 3 * d);
                apply(&mut emb, &masks.interval[side]);
                interval_emb[side] = emb;
                intervals[side] = hms;
            }
        }

        // module 2: bidirectional GRU, averaged
        let forward = self.gru_forward(&ids.gru[0], &item_emb, false);
        let backward = self.gru_forward(&ids.gru[1], &item_emb, true);
        let mut combined: Vec<f64> = forward.h.iter().zip(&backward.h).map(|(a, b)| (a + b) / 2.0).collect();
        masks.combined = drop.mask(m * d);
        apply(&mut combined, &masks.combined);

        // modules 3 and 4: interval-driven gates on h''
        let mut weight_sig = [Vec::new(), Vec::new()];
        let mut weights = [Vec::new(), Vec::new()];
        let (gated_after, gated_before) = if let Some(times) = &ids.time {
            for side in 0..2 {
                let lin = &times[side].attention;
                let mut sig = vec![0.0; m * d];
                for k in 0..m {
                    let out = &mut sig[k * d..(k + 1) * d];
                    out.copy_from_slice(p.value(lin.bias).data());
                    vec_mat_acc(
                        &interval_emb[side][k * 3 * d..(k + 1) * 3 * d],
                        p.value(lin.weight).data(),
                        d,
                        out,
                    );
                    out.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
                }
                let mut w = sig.clone();
                masks.weights[side] = drop.mask(m * d);
                apply(&mut w, &masks.weights[side]);
                weight_sig[side] = sig;
                weights[side] = w;
            }
            let gate = |w: &[f64]| -> Vec<f64> { w.iter().zip(&combined).map(|(a, b)| a * b).collect() };
            (gate(&weights[1]), gate(&weights[0]))
        } else {
            (combined.clone(), combined.clone())
        };

        // module 5: self attention anchored on the first and last steps
        let mut alphas: [Vec<f64>; 4] = Default::default();
        let mut preferences: [Vec<f64>; 4] = Default::default();
        if cfg.self_attention {
            for (slot, (hs, anchor)) in [
                (&gated_after, 0),
                (&gated_after, m - 1),
                (&gated_before, 0),
                (&gated_before, m - 1),
            ]
            .into_iter()
            .enumerate()
            {
                let (a, ap) = attend(hs, d, anchor);
                alphas[slot] = a;
                preferences[slot] = ap;
            }
        }

        // module 6: head
        let last = (m - 1) * d..m * d;
        let mut z = Vec::with_capacity(cfg.head_inputs());
        z.extend_from_slice(&gated_after[last.clone()]);
        z.extend_from_slice(&gated_before[last]);
        for ap in &preferences {
            z.extend_from_slice(ap);
        }
        let mut z_prime = p.value(ids.head.bias).data().to_vec();
        vec_mat_acc(&z, p.value(ids.head.weight).data(), d, &mut z_prime);
        masks.z_prime = drop.mask(d);
        apply(&mut z_prime, &masks.z_prime);

        Ok(ForwardTrace {
            len: m,
            item_emb,
            interval_emb,
            intervals,
            forward,
            backward,
            combined,
            weight_sig,
            weights,
            gated_after,
            gated_before,
            alphas,
            preferences,
            z,
            z_prime,
            masks,
        })
    }

    /// Backward pass from `∂L/∂z'` through the encoder of one sample.
    fn encoder_backward(&self, ids: &Ids, s: SampleView<'_>, t: &ForwardTrace, d_zp: &[f64], grads: &mut GradSet) {
        let cfg = &self.config;
        let d = cfg.dim;
        let m = t.len;
        let p = &self.params;

        let mut d_pre = d_zp.to_vec();
        apply(&mut d_pre, &t.masks.z_prime);
        let LinearIds { weight, bias } = ids.head;
        outer_acc(&t.z, &d_pre, grads.dense(weight));
        add_assign(grads.dense(bias), &d_pre);
        let mut d_z = vec![0.0; t.z.len()];
        mat_vec_acc(p.value(weight).data(), d, &d_pre, &mut d_z);

        let mut d_after = vec![0.0; m * d];
        let mut d_before = vec![0.0; m * d];
        add_assign(&mut d_after[(m - 1) * d..], &d_z[..d]);
        add_assign(&mut d_before[(m - 1) * d..], &d_z[d..2 * d]);
        if cfg.self_attention {
            let slots = [(0usize, 0usize), (0, m - 1), (1, 0), (1, m - 1)];
            for (slot, (stream, anchor)) in slots.into_iter().enumerate() {
                let g = &d_z[(2 + slot) * d..(3 + slot) * d];
                if stream == 0 {
                    attend_backward(&t.gated_after, d, anchor, &t.alphas[slot], g, &mut d_after);
                } else {
                    attend_backward(&t.gated_before, d, anchor, &t.alphas[slot], g, &mut d_before);
                }
            }
        }

        let mut d_comb = vec![0.0; m * d];
        if let Some(times) = &ids.time {
            // [before, after] gates receive the h^B and h^A gradients
            for (side, d_gated) in [(0usize, &d_before), (1, &d_after)] {
                let w = &t.weights[side];
                let mut d_w: Vec<f64> = d_gated.iter().zip(&t.combined).map(|(g, c)| g * c).collect();
                for ((dc, g), wv) in d_comb.iter_mut().zip(d_gated.iter()).zip(w) {
                    *dc += g * wv;
                }
                apply(&mut d_w, &t.masks.weights[side]);
                let lin = &times[side].attention;
                let sig = &t.weight_sig[side];
                let mut d_e = vec![0.0; m * 3 * d];
                for k in 0..m {
                    let dpre: Vec<f64> = (0..d)
                        .map(|i| d_w[k * d + i] * sig[k * d + i] * (1.0 - sig[k * d + i]))
                        .collect();
                    let e = &t.interval_emb[side][k * 3 * d..(k + 1) * 3 * d];
                    outer_acc(e, &dpre, grads.dense(lin.weight));
                    add_assign(grads.dense(lin.bias), &dpre);
                    mat_vec_acc(
                        p.value(lin.weight).data(),
                        d,
                        &dpre,
                        &mut d_e[k * 3 * d..(k + 1) * 3 * d],
                    );
                }
                apply(&mut d_e, &t.masks.interval[side]);
                for (k, h) in t.intervals[side].iter().enumerate() {
                    if let Some(h) = h {
                        for (u, &r) in [h.hours, h.minutes, h.seconds].iter().enumerate() {
                            let src = &d_e[k * 3 * d + u * d..k * 3 * d + (u + 1) * d];
                            add_assign(&mut grads.dense(times[side].tables[u])[r * d..(r + 1) * d], src);
                        }
                    }
                }
            }
        } else {
            for ((c, a), b) in d_comb.iter_mut().zip(&d_after).zip(&d_before) {
                *c = a + b;
            }
        }
        apply(&mut d_comb, &t.masks.combined);
        d_comb.iter_mut().for_each(|v| *v *= 0.5);

        let mut d_x = vec![0.0; m * d];
        self.gru_backward(&ids.gru[0], &t.forward, &d_comb, false, &mut d_x, grads);
        self.gru_backward(&ids.gru[1], &t.backward, &d_comb, true, &mut d_x, grads);
        apply(&mut d_x, &t.masks.item);
        for (k, &item) in s.items.iter().enumerate() {
            add_assign(grads.row(ids.item, item as usize), &d_x[k * d..(k + 1) * d]);
        }
    }

    /// `logits[j] = z' · W^I[j] + b⁴[j]` for every row of `z_prime`.
    fn logits(&self, ids: &Ids, z_prime: &[f64], exec: Execution) -> Vec<f64> {
        let d = self.config.dim;
        let n = self.config.n_items;
        let rows = z_prime.len() / d;
        let table = self.params.value(ids.item);
        let bias = self.params.value(ids.score_bias).data();
        let mut out = vec![0.0; rows * n];
        par::fill_rows(exec, &mut out, n, |b, row| {
            let zp = &z_prime[b * d..(b + 1) * d];
            for (j, v) in row.iter_mut().enumerate() {
                *v = dot(zp, table.row(j)) + bias[j];
            }
        });
        out
    }

    fn traces(&self, ids: &Ids, batch: &Batch, mode: Mode, exec: Execution) -> Result<Vec<ForwardTrace>> {
        self.check_items(&batch.items)?;
        self.check_items(&batch.targets)?;
        par::map_range(exec, batch.len(), |b| {
            self.trace_with(ids, batch.row(b), mode, b as u64)
        })
        .into_iter()
        .collect()
    }

    /// Unnormalised item scores (`B × n`) in evaluation mode.
    pub fn score_batch(&self, batch: &Batch, exec: Execution) -> Result<Vec<f64>> {
        let ids = self.ids();
        let traces = self.traces(&ids, batch, Mode::Eval, exec)?;
        let zp: Vec<f64> = traces.iter().flat_map(|t| t.z_prime.iter().copied()).collect();
        Ok(self.logits(&ids, &zp, exec))
    }

    /// Next-item distribution for one prefix.
    pub fn predict(&self, s: SampleView<'_>) -> Result<Vec<f64>> {
        self.check_items(s.items)?;
        let ids = self.ids();
        let t = self.trace_with(&ids, s, Mode::Eval, 0)?;
        let mut y = self.logits(&ids, &t.z_prime, Execution::Sequential);
        softmax_in_place(&mut y);
        Ok(y)
    }

    /// Per-sample losses without touching gradients.
    pub fn forward_loss(&self, batch: &Batch, mode: Mode, exec: Execution) -> Result<BatchOutput> {
        let ids = self.ids();
        let traces = self.traces(&ids, batch, mode, exec)?;
        let zp: Vec<f64> = traces.iter().flat_map(|t| t.z_prime.iter().copied()).collect();
        Ok(self.loss_output(self.logits(&ids, &zp, exec), batch, exec))
    }

    fn loss_output(&self, mut probs: Vec<f64>, batch: &Batch, exec: Execution) -> BatchOutput {
        let n = self.config.n_items;
        par::fill_rows(exec, &mut probs, n, |_, row| softmax_in_place(row));
        let losses: Vec<f64> = (0..batch.len())
            .map(|b| sample_loss(&probs[b * n..(b + 1) * n], batch.targets[b] as usize, self.config.loss))
            .collect();
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        BatchOutput {
            losses,
            mean_loss,
            probabilities: probs,
        }
    }

    /// Forward and backward pass over a batch; the gradient of the mean
    /// loss is added to each parameter's `grad`.
    pub fn forward_backward(&mut self, batch: &Batch, mode: Mode, exec: Execution) -> Result<BatchOutput> {
        let ids = self.ids();
        let n = self.config.n_items;
        let d = self.config.dim;
        let bsz = batch.len();
        let traces = self.traces(&ids, batch, mode, exec)?;
        let zp: Vec<f64> = traces.iter().flat_map(|t| t.z_prime.iter().copied()).collect();
        let out = self.loss_output(self.logits(&ids, &zp, exec), batch, exec);

        let scale = 1.0 / bsz.max(1) as f64;
        let mut d_logits = vec![0.0; bsz * n];
        let loss = self.config.loss;
        par::fill_rows(exec, &mut d_logits, n, |b, row| {
            let y = &out.probabilities[b * n..(b + 1) * n];
            loss_gradient(y, batch.targets[b] as usize, loss, row);
            row.iter_mut().for_each(|v| *v *= scale);
        });

        let table = self.params.value(ids.item);
        let mut d_zp = vec![0.0; bsz * d];
        par::fill_rows(exec, &mut d_zp, d, |b, row| {
            for (j, &g) in d_logits[b * n..(b + 1) * n].iter().enumerate() {
                if g != 0.0 {
                    axpy(row, g, table.row(j));
                }
            }
        });
        let mut d_table = vec![0.0; n * d];
        par::fill_rows(exec, &mut d_table, d, |j, row| {
            for b in 0..bsz {
                let g = d_logits[b * n + j];
                if g != 0.0 {
                    axpy(row, g, &zp[b * d..(b + 1) * d]);
                }
            }
        });
        let d_bias: Vec<f64> = (0..n).map(|j| (0..bsz).map(|b| d_logits[b * n + j]).sum()).collect();

        let rows: Vec<usize> = (0..bsz).collect();
        let model = &*self;
        let parts = par::map_chunks(exec, &rows, GRAD_CHUNK, |_, chunk| {
            let mut g = GradSet::new(&model.params, &[ids.item]);
            for &b in chunk {
                model.encoder_backward(&ids, batch.row(b), &traces[b], &d_zp[b * d..(b + 1) * d], &mut g);
            }
            g
        });
        let mut parts = parts.into_iter();
        if let Some(mut total) = parts.next() {
            for p in parts {
                total.merge(&p);
            }
            self.params.accumulate(&total);
        }
        add_assign(self.params.get_mut(ids.item).grad.data_mut(), &d_table);
        add_assign(self.params.get_mut(ids.score_bias).grad.data_mut(), &d_bias);
        Ok(out)
    }
}

/// Loss of one predicted distribution `y` against `target`.
pub fn sample_loss(y: &[f64], target: usize, mode: LossMode) -> f64 {
    match mode {
        LossMode::Categorical => -y[target].max(PROB_FLOOR).ln(),
        LossMode::Literal => y
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                if i == target {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum(),
    }
}

/// Gradient of [`sample_loss`] with respect to the logits behind `y`.
pub fn loss_gradient(y: &[f64], target: usize, mode: LossMode, out: &mut [f64]) {
    match mode {
        LossMode::Categorical => {
            if y[target] < PROB_FLOOR {
                out.fill(0.0);
                return;
            }
            out.copy_from_slice(y);
            out[target] -= 1.0;
        }
        LossMode::Literal => {
            let inside = |p: f64| (PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p);
            let g: Vec<f64> = y
                .iter()
                .enumerate()
                .map(|(i, &p)| match (i == target, inside(p)) {
                    (_, false) => 0.0,
                    (true, true) => -1.0 / p,
                    (false, true) => 1.0 / (1.0 - p),
                })
                .collect();
            crate::numeric::ops::softmax_backward_into(y, &g, out);
        }
    }
}
