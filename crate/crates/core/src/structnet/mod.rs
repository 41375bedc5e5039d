//! Per-subframe learned channel estimator: a complex channel layer whose
//! weights are the channel estimate, a lattice fold that removes the
//! interfering streams' symbols, and one small binary classifier shared by
//! every subcarrier, stream, dimension and bit level.
//!
//! Training uses only the received pilot REs of one subframe. Each sample
//! shifts the known pilot so that the target bit sits at `b * a` on the real
//! axis; the classifier must then recover `b`. The loss is minimized when the
//! channel-layer columns line up with the true channel.

mod classifier;
pub mod gradcheck;
mod io;

pub use classifier::Classifier;
pub use io::{read_params, write_params};

use std::time::Instant;

use crate::channel::ChannelGrid;
use crate::error::{invalid, Error, Result};
use crate::estimators::{interpolate_grid, stacked_ls, ChannelEstimate, Method, PilotEstimates};
use crate::numerics::{centered_mod_unchecked, lattice_offset, RngStream, C64};
use crate::phy::{Modulation, PilotScheme, ReceivedGrid, Subframe};

pub const HIDDEN_WIDTHS: [usize; 2] = [16, 8];
const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Re,
    Im,
}

impl Dim {
    /// `e^{-j theta_d}`: 1 for the real dimension, `-j` for the imaginary one.
    #[inline]
    pub fn derotation(self) -> C64 {
        match self {
            Dim::Re => C64::new(1.0, 0.0),
            Dim::Im => C64::new(0.0, -1.0),
        }
    }

    /// Unit vector `e_d`.
    #[inline]
    pub fn unit(self) -> C64 {
        match self {
            Dim::Re => C64::new(1.0, 0.0),
            Dim::Im => C64::new(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    SmallRandom,
    StackedLs,
}

/// How the shuffled training set is cut into mini-batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batching {
    /// Independent shuffle of individual samples.
    Samples,
    /// Shuffle of pilot subcarriers; each subcarrier's samples stay together,
    /// so every channel-layer column receives its full gradient in one step.
    Subcarriers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_classifier: f64,
    pub lr_channel: f64,
    pub init: InitMode,
    /// Weight of the squared first difference of W across pilot subcarriers.
    pub smoothness: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_restarts: usize,
    /// Leading epochs during which only the classifier is updated.
    pub classifier_warmup: usize,
    pub batching: Batching,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            lr_classifier: 1e-3,
            lr_channel: 5e-4,
            init: InitMode::StackedLs,
            smoothness: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_restarts: 3,
            classifier_warmup: 0,
            batching: Batching::Subcarriers,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        for (name, v) in [("lr_classifier", self.lr_classifier), ("lr_channel", self.lr_channel), ("eps", self.eps)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.smoothness >= 0.0) {
            return Err(invalid("smoothness penalty must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("moment decay rates must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Channel-layer weights plus the shared classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct StructNetParams {
    pub nr: usize,
    pub nt: usize,
    /// Pilot subcarriers indexed by the channel layer.
    pub subcarriers: Vec<usize>,
    // ((j * nt + i) * nr + r) for pilot subcarrier index j.
    w: Vec<C64>,
    pub classifier: Classifier,
    pub modulation: Modulation,
}

impl StructNetParams {
    pub fn new(nr: usize, nt: usize, subcarriers: Vec<usize>, classifier: Classifier, modulation: Modulation) -> Result<Self> {
        if classifier.input_dim() != 2 * nt {
            return Err(invalid(format!("classifier takes {} inputs, expected {}", classifier.input_dim(), 2 * nt)));
        }
        let w = vec![C64::new(0.0, 0.0); subcarriers.len() * nt * nr];
        Ok(Self { nr, nt, subcarriers, w, classifier, modulation })
    }

    /// Column `W[:, i, j]` for pilot subcarrier index `j`.
    #[inline]
    pub fn column(&self, i: usize, j: usize) -> &[C64] {
        let o = (j * self.nt + i) * self.nr;
        &self.w[o..o + self.nr]
    }

    #[inline]
    pub fn column_mut(&mut self, i: usize, j: usize) -> &mut [C64] {
        let o = (j * self.nt + i) * self.nr;
        &mut self.w[o..o + self.nr]
    }

    pub fn weights(&self) -> &[C64] {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut [C64] {
        &mut self.w
    }

    /// Copies `h[0, k]` into the channel layer for every pilot subcarrier `k`.
    pub fn set_weights_from_grid(&mut self, h: &ChannelGrid, t: usize) {
        for j in 0..self.subcarriers.len() {
            let k = self.subcarriers[j];
            for i in 0..self.nt {
                for r in 0..self.nr {
                    self.column_mut(i, j)[r] = h.get(t, k, r, i);
                }
            }
        }
    }

    /// All real parameters: W as interleaved (re, im), then the classifier.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w.iter().flat_map(|c| [c.re, c.im]).collect();
        out.extend_from_slice(self.classifier.params());
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let nw = 2 * self.w.len();
        if flat.len() != nw + self.classifier.params().len() {
            return Err(invalid("flat parameter length mismatch"));
        }
        for (c, p) in self.w.iter_mut().zip(flat[..nw].chunks_exact(2)) {
            *c = C64::new(p[0], p[1]);
        }
        self.classifier.params_mut().copy_from_slice(&flat[nw..]);
        Ok(())
    }

    pub fn num_channel_params(&self) -> usize {
        2 * self.w.len()
    }
}

/// One binary decision: bit `level` of dimension `dim` of stream `stream`'s
/// pilot at (pilot symbol index `tp`, pilot subcarrier index `j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingSample {
    pub j: u32,
    pub tp: u16,
    pub stream: u8,
    pub level: u8,
    pub dim: Dim,
    pub label: i8,
}

/// Training samples with the pilot REs they refer to.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<TrainingSample>,
    pub nr: usize,
    pub nt: usize,
    pub subcarriers: Vec<usize>,
    pub modulation: Modulation,
    // ((tp * n_sc + j) * nr + r)
    y: Vec<C64>,
    // ((tp * n_sc + j) * nt + s)
    x: Vec<C64>,
}

impl TrainingSet {
    #[inline]
    pub fn y(&self, s: &TrainingSample) -> &[C64] {
        let o = (s.tp as usize * self.subcarriers.len() + s.j as usize) * self.nr;
        &self.y[o..o + self.nr]
    }

    #[inline]
    pub fn x(&self, s: &TrainingSample) -> &[C64] {
        let o = (s.tp as usize * self.subcarriers.len() + s.j as usize) * self.nt;
        &self.x[o..o + self.nt]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One sample per (pilot RE, stream, dimension, bit level).
pub fn build_training_set(sf: &Subframe, y: &ReceivedGrid) -> Result<TrainingSet> {
    let cfg = &sf.config;
    if cfg.scheme != PilotScheme::NonOrthogonal {
        return Err(invalid("training needs non-orthogonal pilots"));
    }
    if y.subcarriers() != cfg.num_subcarriers || y.symbols() != cfg.num_symbols {
        return Err(invalid("received grid does not match subframe"));
    }
    let (nr, nt, m) = (y.nr(), cfg.nt, cfg.modulation);
    let subcarriers = cfg.pilot_subcarriers(0);
    let n_sc = subcarriers.len();
    let ntp = cfg.pilot_symbols.len();
    let mut set = TrainingSet {
        samples: Vec::with_capacity(ntp * n_sc * nt * m.bits_per_symbol()),
        nr,
        nt,
        subcarriers,
        modulation: m,
        y: Vec::with_capacity(ntp * n_sc * nr),
        x: Vec::with_capacity(ntp * n_sc * nt),
    };
    for (tp, &t) in cfg.pilot_symbols.iter().enumerate() {
        for j in 0..n_sc {
            let k = set.subcarriers[j];
            set.y.extend_from_slice(y.y(t, k));
            let x = sf.x(t, k);
            set.x.extend_from_slice(x);
            for (i, &xi) in x.iter().enumerate() {
                let (re_bits, im_bits) = m.bit_decompose(xi)?;
                for (dim, bits) in [(Dim::Re, &re_bits), (Dim::Im, &im_bits)] {
                    for (level, &label) in bits.iter().enumerate() {
                        set.samples.push(TrainingSample {
                            j: j as u32,
                            tp: tp as u16,
                            stream: i as u8,
                            level: level as u8,
                            dim,
                            label,
                        });
                    }
                }
            }
        }
    }
    Ok(set)
}

/// `r = e^{-j theta_d} (y - w_i (x_i - b a e_d))`.
pub fn channel_shift(y: &[C64], x_i: C64, w_i: &[C64], label: i8, dim: Dim, a: f64, out: &mut [C64]) {
    let s = x_i - dim.unit() * (label as f64 * a);
    let rot = dim.derotation();
    for ((o, yy), w) in out.iter_mut().zip(y).zip(w_i) {
        *o = rot * (yy - w * s);
    }
}

/// Folds interferer `w` out of `r` in place and returns the lattice offset removed.
#[inline]
fn fold_one(r: &mut [C64], w: &[C64], period: f64, subcarrier: usize) -> Result<C64> {
    let nn: f64 = w.iter().map(|c| c.norm_sqr()).sum();
    if !(nn.sqrt() > DEGENERATE_NORM) {
        return Err(Error::DegenerateWeights { subcarrier });
    }
    let u: C64 = w.iter().zip(r.iter()).map(|(a, b)| a.conj() * b).sum::<C64>() / nn;
    let q = C64::new(lattice_offset(u.re, period), lattice_offset(u.im, period));
    for (ri, wi) in r.iter_mut().zip(w) {
        *ri -= wi * q;
    }
    Ok(q)
}

/// Removes every interfering stream's lattice component from `r`, in stream
/// order, returning the per-interferer offsets (zero at the target index).
pub fn interference_fold(
    r: &mut [C64],
    params: &StructNetParams,
    j: usize,
    target: usize,
    offsets: &mut [C64],
) -> Result<()> {
    let period = params.modulation.lattice_period();
    let k = params.subcarriers[j];
    for s in 0..params.nt {
        offsets[s] = C64::new(0.0, 0.0);
        if s != target {
            offsets[s] = fold_one(r, params.column(s, j), period, k)?;
        }
    }
    Ok(())
}

/// Per-sample scratch; sized once per training session.
#[derive(Debug, Clone)]
struct Workspace {
    r: Vec<C64>,
    offsets: Vec<C64>,
    order: Vec<usize>,
    /// Subcarrier whose Gram factorization is currently cached.
    geometry: Option<usize>,
    gram: Vec<C64>,
    chol: Vec<C64>,
    v: Vec<C64>,
    gains: Vec<f64>,
    minv: Vec<C64>,
    wm: Vec<C64>,
    c: Vec<C64>,
    q: Vec<C64>,
    tmp: Vec<C64>,
    e: Vec<C64>,
    wq: Vec<C64>,
    feats: Vec<f64>,
    d_feats: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    delta: Vec<f64>,
}

impl Workspace {
    fn new(params: &StructNetParams) -> Self {
        let (nr, nt) = (params.nr, params.nt);
        let h = params.classifier.hidden_units();
        let z = C64::new(0.0, 0.0);
        Self {
            r: vec![z; nr],
            offsets: vec![z; nt],
            order: Vec::with_capacity(nt),
            geometry: None,
            gram: vec![z; nt * nt],
            chol: vec![z; nt * nt],
            v: vec![z; nt],
            gains: vec![0.0; nt],
            minv: vec![z; nt * nt],
            wm: vec![z; nr],
            c: vec![z; nt],
            q: vec![z; nt],
            tmp: vec![z; nt],
            e: vec![z; nr],
            wq: vec![z; nr],
            feats: vec![0.0; 2 * nt],
            d_feats: vec![0.0; 2 * nt],
            pre: vec![0.0; h],
            act: vec![0.0; h],
            delta: vec![0.0; h],
        }
    }
}

/// In-place Cholesky of a small Hermitian matrix (lower factor, row-major).
fn small_cholesky(a: &[C64], l: &mut [C64], n: usize, subcarrier: usize) -> Result<()> {
    let scale = (0..n).map(|i| a[i * n + i].re).fold(0.0, f64::max);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p].conj();
            }
            if i == j {
                if !(s.re > 1e-12 * scale) || !(scale > 0.0) {
                    return Err(Error::DegenerateWeights { subcarrier });
                }
                l[i * n + i] = C64::new(s.re.sqrt(), 0.0);
            } else {
                l[i * n + j] = s / l[j * n + j].re;
            }
        }
        for j in i + 1..n {
            l[i * n + j] = C64::new(0.0, 0.0);
        }
    }
    Ok(())
}

fn small_solve(l: &[C64], n: usize, b: &[C64], tmp: &mut [C64], out: &mut [C64]) {
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * n + p] * tmp[p];
        }
        tmp[i] = s / l[i * n + i].re;
    }
    for i in (0..n).rev() {
        let mut s = tmp[i];
        for p in i + 1..n {
            s -= l[p * n + i].conj() * out[p];
        }
        out[i] = s / l[i * n + i].re;
    }
}

/// Least-squares coordinates `v` of `z` in the channel-layer basis. Each
/// coordinate is scaled by its zero-forcing gain `g_p = [M^-1]_pp^-1/2` (the
/// norm of `w_p` orthogonal to the other columns); features are `g_p v_p / a`
/// with the target stream first.
fn coordinates(params: &StructNetParams, j: usize, target: usize, a: f64, ws: &mut Workspace) -> Result<()> {
    let (nr, nt) = (params.nr, params.nt);
    if ws.geometry != Some(j) {
        for p in 0..nt {
            let wp = params.column(p, j);
            for q in 0..nt {
                let wq = params.column(q, j);
                ws.gram[p * nt + q] = (0..nr).map(|r| wp[r].conj() * wq[r]).sum();
            }
        }
        small_cholesky(&ws.gram, &mut ws.chol, nt, params.subcarriers[j])?;
        // Columns of M^-1, stored column-major.
        for p in 0..nt {
            ws.q.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
            ws.q[p] = C64::new(1.0, 0.0);
            let col = &mut ws.minv[p * nt..(p + 1) * nt];
            small_solve(&ws.chol, nt, &ws.q, &mut ws.tmp, col);
            ws.gains[p] = 1.0 / col[p].re.sqrt();
        }
        ws.geometry = Some(j);
    }
    for p in 0..nt {
        let wp = params.column(p, j);
        ws.c[p] = (0..nr).map(|r| wp[r].conj() * ws.r[r]).sum();
    }
    small_solve(&ws.chol, nt, &ws.c, &mut ws.tmp, &mut ws.v);
    ws.order.clear();
    ws.order.push(target);
    ws.order.extend((0..nt).filter(|&s| s != target));
    for (p, &st) in ws.order.iter().enumerate() {
        let f = ws.v[st] * (ws.gains[st] / a);
        ws.feats[2 * p] = f.re;
        ws.feats[2 * p + 1] = f.im;
    }
    Ok(())
}

/// Shift, fold and coordinates for one sample; leaves `z` in `ws.r`.
fn features(set: &TrainingSet, s: &TrainingSample, params: &StructNetParams, ws: &mut Workspace) -> Result<()> {
    let a = params.modulation.base_amplitude();
    let (i, j) = (s.stream as usize, s.j as usize);
    channel_shift(set.y(s), set.x(s)[i], params.column(i, j), s.label, s.dim, a, &mut ws.r);
    interference_fold(&mut ws.r, params, j, i, &mut ws.offsets)?;
    coordinates(params, j, i, a, ws)
}

/// Classifier logit for one training sample.
pub fn forward(set: &TrainingSet, s: &TrainingSample, params: &StructNetParams) -> Result<f64> {
    let mut ws = Workspace::new(params);
    features(set, s, params, &mut ws)?;
    Ok(params.classifier.forward(&ws.feats, &mut ws.pre, &mut ws.act))
}

/// Classifier input features for one training sample.
pub fn sample_features(set: &TrainingSet, s: &TrainingSample, params: &StructNetParams) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(params);
    features(set, s, params, &mut ws)?;
    Ok(ws.feats)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient of the loss w.r.t. W (`dL/dRe + j dL/dIm`, same layout as the
/// weights) and the classifier's flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<C64>,
    pub classifier: Vec<f64>,
    block: usize,
    // Subcarriers with possibly nonzero channel gradient; `dense` covers all.
    touched: Vec<usize>,
    marked: Vec<bool>,
    dense: bool,
}

impl Gradients {
    fn zeros(params: &StructNetParams) -> Self {
        let n = params.subcarriers.len();
        Self {
            w: vec![C64::new(0.0, 0.0); params.w.len()],
            classifier: vec![0.0; params.classifier.params().len()],
            block: params.nt * params.nr,
            touched: Vec::with_capacity(n),
            marked: vec![false; n],
            dense: true,
        }
    }

    #[inline]
    fn touch(&mut self, j: usize) {
        if !self.marked[j] {
            self.marked[j] = true;
            self.touched.push(j);
        }
    }

    fn clear(&mut self) {
        if self.dense {
            self.w.iter_mut().for_each(|g| *g = C64::new(0.0, 0.0));
        } else {
            for &j in &self.touched {
                self.w[j * self.block..(j + 1) * self.block].iter_mut().for_each(|g| *g = C64::new(0.0, 0.0));
            }
        }
        for &j in &self.touched {
            self.marked[j] = false;
        }
        self.touched.clear();
        self.dense = false;
        self.classifier.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Index ranges of `w` that may hold nonzero entries.
    fn active_ranges(&self) -> Vec<std::ops::Range<usize>> {
        if self.dense {
            vec![0..self.w.len()]
        } else {
            self.touched.iter().map(|&j| j * self.block..(j + 1) * self.block).collect()
        }
    }

    /// Same ordering as [`StructNetParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w.iter().flat_map(|c| [c.re, c.im]).collect();
        out.extend_from_slice(&self.classifier);
        out
    }
}

/// Deliberate gradient corruption, used to confirm the gradient check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GradientFault {
    #[default]
    None,
    /// Multiplies every channel-layer gradient by the factor.
    ScaleChannel(f64),
    /// Adds the offset to every classifier gradient.
    OffsetClassifier(f64),
}

/// `lambda * sum_j ||W[:, :, j+1] - W[:, :, j]||^2` and its gradient.
fn smoothness_term(params: &StructNetParams, lambda: f64, grad: Option<&mut [C64]>) -> f64 {
    if lambda == 0.0 || params.subcarriers.len() < 2 {
        return 0.0;
    }
    let block = params.nt * params.nr;
    let mut total = 0.0;
    let w = &params.w;
    let mut grad = grad;
    for j in 0..params.subcarriers.len() - 1 {
        for e in 0..block {
            let d = w[(j + 1) * block + e] - w[j * block + e];
            total += d.norm_sqr();
            if let Some(g) = grad.as_deref_mut() {
                g[(j + 1) * block + e] += 2.0 * lambda * d;
                g[j * block + e] -= 2.0 * lambda * d;
            }
        }
    }
    lambda * total
}

fn accumulate_sample(
    set: &TrainingSet,
    s: &TrainingSample,
    params: &StructNetParams,
    scale: f64,
    ws: &mut Workspace,
    grad: &mut Gradients,
) -> Result<f64> {
    let (nr, nt) = (params.nr, params.nt);
    let a = params.modulation.base_amplitude();
    let (i, j) = (s.stream as usize, s.j as usize);
    grad.touch(j);
    features(set, s, params, ws)?;
    let logit = params.classifier.forward(&ws.feats, &mut ws.pre, &mut ws.act);
    let b = s.label as f64;
    let loss = softplus(-b * logit);
    let dlogit = -b * sigmoid(-b * logit) * scale;
    params.classifier.backward(&ws.feats, &ws.pre, &ws.act, dlogit, &mut grad.classifier, &mut ws.delta, &mut ws.d_feats);

    // Back through f_p = g_p v_p / a, dg_p = g_p^3 Re((W m_p)^H dW m_p).
    for p in 0..nt {
        let st = ws.order[p];
        let g_f = C64::new(ws.d_feats[2 * p], ws.d_feats[2 * p + 1]);
        ws.c[st] = g_f * (ws.gains[st] / a);
        let dg = (g_f.conj() * ws.v[st]).re / a * ws.gains[st].powi(3);
        if dg == 0.0 {
            continue;
        }
        let m = &ws.minv[st * nt..(st + 1) * nt];
        for r in 0..nr {
            ws.wm[r] = (0..nt).map(|c| params.column(c, j)[r] * m[c]).sum();
        }
        for c in 0..nt {
            let o = (j * nt + c) * nr;
            let mc = m[c].conj() * dg;
            for r in 0..nr {
                grad.w[o + r] += ws.wm[r] * mc;
            }
        }
    }
    // v = M^-1 W^H z.
    small_solve(&ws.chol, nt, &ws.c, &mut ws.tmp, &mut ws.q);
    let q = &ws.q;
    for r in 0..nr {
        let mut fit = C64::new(0.0, 0.0);
        let mut wq = C64::new(0.0, 0.0);
        for p in 0..nt {
            let w = params.column(p, j)[r];
            fit += w * ws.v[p];
            wq += w * q[p];
        }
        ws.e[r] = ws.r[r] - fit;
        ws.wq[r] = wq;
    }
    for p in 0..nt {
        let o = (j * nt + p) * nr;
        let (qc, vc) = (q[p].conj(), ws.v[p].conj());
        for r in 0..nr {
            grad.w[o + r] += ws.e[r] * qc - ws.wq[r] * vc;
        }
    }
    // dz/dr = I; each folded interferer contributes -w_s q_s.
    for st in 0..nt {
        if st == i {
            continue;
        }
        let qc = ws.offsets[st].conj();
        if qc == C64::new(0.0, 0.0) {
            continue;
        }
        let o = (j * nt + st) * nr;
        for r in 0..nr {
            grad.w[o + r] -= ws.wq[r] * qc;
        }
    }
    // Shift: r = rot (y - w_i s_i).
    let shift = set.x(s)[i] - s.dim.unit() * (b * a);
    let c = (s.dim.derotation() * shift).conj();
    let o = (j * nt + i) * nr;
    for r in 0..nr {
        grad.w[o + r] -= ws.wq[r] * c;
    }
    Ok(loss)
}

fn apply_fault(grad: &mut Gradients, fault: GradientFault) {
    match fault {
        GradientFault::None => {}
        GradientFault::ScaleChannel(f) => grad.w.iter_mut().for_each(|g| *g *= f),
        GradientFault::OffsetClassifier(d) => grad.classifier.iter_mut().for_each(|g| *g += d),
    }
}

fn batch_loss_grad(
    set: &TrainingSet,
    batch: &[u32],
    params: &StructNetParams,
    lambda: f64,
    ws: &mut Workspace,
    grad: &mut Gradients,
) -> Result<f64> {
    grad.clear();
    ws.geometry = None;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &idx in batch {
        loss += accumulate_sample(set, &set.samples[idx as usize], params, scale, ws, grad)?;
    }
    if lambda != 0.0 {
        grad.dense = true;
    }
    Ok(loss * scale + smoothness_term(params, lambda, Some(&mut grad.w)))
}

/// Mean BCE over `batch` (indices into `set.samples`) plus the smoothness
/// penalty, with gradients for every real parameter.
pub fn loss_and_gradients(
    set: &TrainingSet,
    batch: &[u32],
    params: &StructNetParams,
    lambda: f64,
    fault: GradientFault,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let mut ws = Workspace::new(params);
    let mut grad = Gradients::zeros(params);
    let loss = batch_loss_grad(set, batch, params, lambda, &mut ws, &mut grad)?;
    apply_fault(&mut grad, fault);
    Ok((loss, grad))
}

/// Loss only; used by the finite-difference check.
pub fn loss(set: &TrainingSet, batch: &[u32], params: &StructNetParams, lambda: f64) -> Result<f64> {
    let mut ws = Workspace::new(params);
    let mut total = 0.0;
    for &idx in batch {
        let s = &set.samples[idx as usize];
        features(set, s, params, &mut ws)?;
        let logit = params.classifier.forward(&ws.feats, &mut ws.pre, &mut ws.act);
        total += softplus(-(s.label as f64) * logit);
    }
    Ok(total / batch.len() as f64 + smoothness_term(params, lambda, None))
}

/// Distances from the non-smooth points that a finite-difference probe must
/// not cross: fold cell boundaries (in units of the lattice period) and
/// hidden ReLU kinks.
#[derive(Debug, Clone, Copy)]
pub struct Margins {
    pub fold: f64,
    pub relu: f64,
}

pub fn boundary_margins(set: &TrainingSet, batch: &[u32], params: &StructNetParams) -> Result<Margins> {
    let period = params.modulation.lattice_period();
    let a = params.modulation.base_amplitude();
    let mut ws = Workspace::new(params);
    let mut m = Margins { fold: f64::INFINITY, relu: f64::INFINITY };
    for &idx in batch {
        let s = &set.samples[idx as usize];
        let (i, j) = (s.stream as usize, s.j as usize);
        channel_shift(set.y(s), set.x(s)[i], params.column(i, j), s.label, s.dim, a, &mut ws.r);
        for st in (0..params.nt).filter(|&st| st != i) {
            let w = params.column(st, j);
            let nn: f64 = w.iter().map(|c| c.norm_sqr()).sum();
            let u: C64 = w.iter().zip(&ws.r).map(|(p, q)| p.conj() * q).sum::<C64>() / nn;
            for comp in [u.re, u.im] {
                let c = centered_mod_unchecked(comp, period);
                let dist = (0.5 * period - c.abs()).abs();
                m.fold = m.fold.min(dist / period);
            }
            fold_one(&mut ws.r, w, period, params.subcarriers[j])?;
        }
        coordinates(params, j, i, a, &mut ws)?;
        params.classifier.forward(&ws.feats, &mut ws.pre, &mut ws.act);
        m.relu = ws.pre.iter().fold(m.relu, |acc, p| acc.min(p.abs()));
    }
    Ok(m)
}

/// Adaptive-moment optimizer state for both parameter groups.
#[derive(Debug, Clone)]
struct Adam {
    m_w: Vec<C64>,
    v_w: Vec<C64>,
    m_c: Vec<f64>,
    v_c: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(params: &StructNetParams) -> Self {
        let nw = params.w.len();
        let nc = params.classifier.params().len();
        let z = C64::new(0.0, 0.0);
        Self { m_w: vec![z; nw], v_w: vec![z; nw], m_c: vec![0.0; nc], v_c: vec![0.0; nc], step: 0 }
    }

    fn update(&mut self, params: &mut StructNetParams, grad: &Gradients, cfg: &TrainConfig, freeze_w: bool) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr_w = if freeze_w { 0.0 } else { cfg.lr_channel };
        let upd = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        };
        // Channel weights only move on steps where their subcarrier was sampled.
        for range in grad.active_ranges() {
            let w = params.w[range.clone()].iter_mut();
            for (((p, m), v), g) in w.zip(&mut self.m_w[range.clone()]).zip(&mut self.v_w[range.clone()]).zip(&grad.w[range]) {
                if g.re == 0.0 && g.im == 0.0 {
                    continue;
                }
                upd(&mut p.re, &mut m.re, &mut v.re, g.re, lr_w);
                upd(&mut p.im, &mut m.im, &mut v.im, g.im, lr_w);
            }
        }
        let cp = params.classifier.params_mut();
        for (((p, m), v), g) in cp.iter_mut().zip(&mut self.m_c).zip(&mut self.v_c).zip(&grad.classifier) {
            upd(p, m, v, *g, cfg.lr_classifier);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub epochs: usize,
    pub final_loss: f64,
    pub wall_ms: f64,
    pub restarts: usize,
    pub fallback: bool,
}

fn initial_params(sf: &Subframe, y: &ReceivedGrid, cfg: &TrainConfig, set: &TrainingSet, rng: &mut RngStream) -> Result<StructNetParams> {
    let nt = set.nt;
    let sizes = [2 * nt, HIDDEN_WIDTHS[0], HIDDEN_WIDTHS[1], 1];
    let classifier = Classifier::random(&sizes, rng);
    let mut params = StructNetParams::new(set.nr, nt, set.subcarriers.clone(), classifier, set.modulation)?;
    match cfg.init {
        InitMode::SmallRandom => {
            for w in params.w.iter_mut() {
                *w = C64::new(0.01 * rng.standard_normal(), 0.01 * rng.standard_normal());
            }
        }
        InitMode::StackedLs => {
            let h = stacked_ls(y, sf)?;
            params.set_weights_from_grid(&h, 0);
        }
    }
    Ok(params)
}

fn run_epochs(set: &TrainingSet, params: &mut StructNetParams, cfg: &TrainConfig, rng: &mut RngStream) -> Result<f64> {
    let mut order: Vec<u32> = (0..set.len() as u32).collect();
    // Sample indices grouped by pilot subcarrier.
    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); set.subcarriers.len()];
    for (idx, s) in set.samples.iter().enumerate() {
        groups[s.j as usize].push(idx as u32);
    }
    let mut group_order: Vec<usize> = (0..groups.len()).collect();
    let mut ws = Workspace::new(params);
    let mut grad = Gradients::zeros(params);
    let mut adam = Adam::new(params);
    let mut last = f64::NAN;
    for epoch in 0..cfg.epochs {
        let freeze_w = epoch < cfg.classifier_warmup;
        match cfg.batching {
            Batching::Samples => rng.shuffle(&mut order),
            Batching::Subcarriers => {
                rng.shuffle(&mut group_order);
                order.clear();
                for &g in &group_order {
                    order.extend_from_slice(&groups[g]);
                }
            }
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let l = batch_loss_grad(set, batch, params, cfg.smoothness, &mut ws, &mut grad)?;
            if !l.is_finite() {
                return Err(Error::DegenerateWeights { subcarrier: usize::MAX });
            }
            adam.update(params, &grad, cfg, freeze_w);
            sum += l * batch.len() as f64;
            n += batch.len();
        }
        last = sum / n as f64;
    }
    Ok(last)
}

/// Trains the estimator on one subframe's pilots.
///
/// Degenerate channel-layer weights restart training with a fresh draw, up to
/// `cfg.max_restarts` times, after which [`Error::TrainingFailed`] is returned.
pub fn train_subframe(
    y: &ReceivedGrid,
    sf: &Subframe,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(StructNetParams, TrainStats)> {
    cfg.validate()?;
    let start = Instant::now();
    let set = build_training_set(sf, y)?;
    let mut restarts = 0;
    loop {
        let mut params = initial_params(sf, y, cfg, &set, rng)?;
        let outcome = if cfg.epochs == 0 {
            loss(&set, &(0..set.len() as u32).collect::<Vec<_>>(), &params, cfg.smoothness)
        } else {
            run_epochs(&set, &mut params, cfg, rng)
        };
        match outcome {
            Ok(final_loss) => {
                let stats = TrainStats {
                    epochs: cfg.epochs,
                    final_loss,
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    restarts,
                    fallback: false,
                };
                return Ok((params, stats));
            }
            Err(Error::DegenerateWeights { .. }) if restarts < cfg.max_restarts => restarts += 1,
            Err(Error::DegenerateWeights { .. }) => return Err(Error::TrainingFailed { restarts }),
            Err(e) => return Err(e),
        }
    }
}

/// [`train_subframe`], substituting the stacked-LS solution for the channel
/// layer when training fails. The substitution is flagged in the stats.
pub fn train_or_fallback(
    y: &ReceivedGrid,
    sf: &Subframe,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(StructNetParams, TrainStats)> {
    let start = Instant::now();
    match train_subframe(y, sf, cfg, rng) {
        Err(Error::TrainingFailed { restarts }) => {
            let set = build_training_set(sf, y)?;
            let sizes = [2 * set.nt, HIDDEN_WIDTHS[0], HIDDEN_WIDTHS[1], 1];
            let mut params =
                StructNetParams::new(set.nr, set.nt, set.subcarriers.clone(), Classifier::zeros(&sizes), set.modulation)?;
            params.set_weights_from_grid(&stacked_ls(y, sf)?, 0);
            let stats = TrainStats {
                epochs: 0,
                final_loss: f64::NAN,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                restarts,
                fallback: true,
            };
            Ok((params, stats))
        }
        other => other,
    }
}

/// Channel estimate read from the channel layer: the same column at every
/// pilot symbol, then the shared grid interpolator.
pub fn extract_channel(params: &StructNetParams, num_symbols: usize, pilot_symbols: &[usize]) -> ChannelEstimate {
    let num_subcarriers = params.subcarriers.last().map_or(0, |k| k + 1);
    let mut est = PilotEstimates::zeros(
        params.nr,
        params.nt,
        num_subcarriers,
        num_symbols,
        pilot_symbols.to_vec(),
        vec![params.subcarriers.clone(); params.nt],
    );
    for tp in 0..pilot_symbols.len() {
        for j in 0..params.subcarriers.len() {
            for i in 0..params.nt {
                est.value_mut(i, tp, j).copy_from_slice(params.column(i, j));
            }
        }
    }
    interpolate_grid(&est, Method::StructNet)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectPath {
    #[default]
    Equalizer,
    Classifier,
}

/// Hard data bits in payload order (data symbol, subcarrier, stream, bit).
///
/// The equalizer path runs linear MMSE on `estimate`; the classifier path
/// (QPSK only) folds out every lattice direction except the target bit's and
/// takes the sign of the trained classifier's logit.
pub fn detect_data(
    y: &ReceivedGrid,
    sf: &Subframe,
    params: &StructNetParams,
    estimate: &ChannelEstimate,
    noise_var: f64,
    path: DetectPath,
) -> Result<Vec<i8>> {
    let data_symbols = sf.data_symbols();
    match path {
        DetectPath::Equalizer => {
            let soft = crate::phy::mmse_equalize(y, &estimate.grid, noise_var, data_symbols)?;
            Ok(crate::phy::hard_demap(&soft, sf.config.modulation))
        }
        DetectPath::Classifier => {
            if params.modulation.order() > 4 || sf.config.modulation.order() > 4 {
                return Err(Error::UnsupportedMode("classifier detection supports QPSK only".into()));
            }
            let a = params.modulation.base_amplitude();
            let period = params.modulation.lattice_period();
            let mut ws = Workspace::new(params);
            let mut bits = Vec::with_capacity(data_symbols.len() * y.subcarriers() * params.nt * 2);
            for &t in data_symbols {
                for k in 0..y.subcarriers() {
                    let j = params
                        .subcarriers
                        .binary_search(&k)
                        .map_err(|_| invalid(format!("subcarrier {k} has no channel-layer weights")))?;
                    for i in 0..params.nt {
                        for dim in [Dim::Re, Dim::Im] {
                            let rot = dim.derotation();
                            for (o, yy) in ws.r.iter_mut().zip(y.y(t, k)) {
                                *o = rot * yy;
                            }
                            // Own orthogonal dimension first: fold its zero-forcing
                            // coordinate onto the +-a lattice and strip it, which
                            // leaves the same form as a shifted training sample.
                            coordinates(params, j, i, a, &mut ws)?;
                            let orth = a + lattice_offset(ws.v[i].im - a, period);
                            let wi = params.column(i, j);
                            for (o, w) in ws.r.iter_mut().zip(wi) {
                                *o -= w * C64::new(0.0, orth);
                            }
                            interference_fold(&mut ws.r, params, j, i, &mut ws.offsets)?;
                            coordinates(params, j, i, a, &mut ws)?;
                            let logit = params.classifier.forward(&ws.feats, &mut ws.pre, &mut ws.act);
                            bits.push(if logit >= 0.0 { 1 } else { -1 });
                        }
                    }
                }
            }
            Ok(bits)
        }
    }
}
