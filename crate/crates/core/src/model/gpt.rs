//! Decoder-only transformer over item ids with hand-written backprop.
//!
//! Layout follows GPT-2: learned positional embeddings, pre-norm residual
//! blocks (causal multi-head attention, then a GELU feed-forward of width
//! `4d`), a final layer norm, and an output projection tied to the item
//! embedding matrix.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_items, check_prefix, NextItemModel, ScoreVector};
use crate::data::{ItemId, PAD};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    /// Catalog size; filled in from the dataset when left at 0.
    pub item_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            num_blocks: 2,
            num_heads: 1,
            dropout: 0.1,
            max_seq_len: 128,
            item_count: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("model.{field}"), msg));
        if self.hidden_size == 0 {
            return bad("hidden_size", "must be positive");
        }
        if self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
            return bad("num_heads", "must be positive and divide hidden_size");
        }
        if self.num_blocks == 0 {
            return bad("num_blocks", "must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len", "must be at least 2");
        }
        if self.item_count == 0 {
            return bad("item_count", "must be positive");
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<S> {
    pub ln1_g: Array1<S>,
    pub ln1_b: Array1<S>,
    /// Fused query/key/value projection, `d x 3d`.
    pub attn_w: Array2<S>,
    pub attn_b: Array1<S>,
    pub proj_w: Array2<S>,
    pub proj_b: Array1<S>,
    pub ln2_g: Array1<S>,
    pub ln2_b: Array1<S>,
    pub fc_w: Array2<S>,
    pub fc_b: Array1<S>,
    pub out_w: Array2<S>,
    pub out_b: Array1<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<S> {
    /// `(item_count + 1) x d`; row 0 is the padding item. Also the output projection.
    pub item_emb: Array2<S>,
    pub pos_emb: Array2<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub lnf_g: Array1<S>,
    pub lnf_b: Array1<S>,
}

impl<S: Scalar> BlockParams<S> {
    fn filled(d: usize, mut weight: impl FnMut(usize, usize) -> Array2<S>, gain: S) -> Self {
        Self {
            ln1_g: Array1::from_elem(d, gain),
            ln1_b: Array1::zeros(d),
            attn_w: weight(d, 3 * d),
            attn_b: Array1::zeros(3 * d),
            proj_w: weight(d, d),
            proj_b: Array1::zeros(d),
            ln2_g: Array1::from_elem(d, gain),
            ln2_b: Array1::zeros(d),
            fc_w: weight(d, 4 * d),
            fc_b: Array1::zeros(4 * d),
            out_w: weight(4 * d, d),
            out_b: Array1::zeros(d),
        }
    }
}

fn normal_matrix<S: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Array2<S> {
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    Array2::from_shape_simple_fn((rows, cols), || S::of(dist.sample(rng)))
}

impl<S: Scalar> ModelParameters<S> {
    /// All tensors zero, including layer-norm gains.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_size;
        Self {
            item_emb: Array2::zeros((cfg.item_count + 1, d)),
            pos_emb: Array2::zeros((cfg.max_seq_len, d)),
            blocks: (0..cfg.num_blocks)
                .map(|_| BlockParams::filled(d, |r, c| Array2::zeros((r, c)), S::zero()))
                .collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
        }
    }

    /// `N(0, 0.02)` weights and embeddings, zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        Self::with_std(cfg, INIT_STD, seed, false)
    }

    /// Like [`init`](Self::init) with a custom spread, and with biases and
    /// norm parameters randomised too. Used to build non-degenerate random
    /// models for tests and oracles.
    pub fn random(cfg: &ModelConfig, std: f64, seed: u64) -> Self {
        Self::with_std(cfg, std, seed, true)
    }

    fn with_std(cfg: &ModelConfig, std: f64, seed: u64, perturb_all: bool) -> Self {
        let mut rng = rng_for(seed, "init", &[]);
        let d = cfg.hidden_size;
        let mut item_emb = normal_matrix::<S>(cfg.item_count + 1, d, std, &mut rng);
        item_emb.row_mut(PAD as usize).fill(S::zero());
        let pos_emb = normal_matrix(cfg.max_seq_len, d, std, &mut rng);
        let blocks = (0..cfg.num_blocks)
            .map(|_| BlockParams::filled(d, |r, c| normal_matrix(r, c, std, &mut rng), S::one()))
            .collect();
        let mut p = Self { item_emb, pos_emb, blocks, lnf_g: Array1::ones(d), lnf_b: Array1::zeros(d) };
        if perturb_all {
            let dist = Normal::new(0.0, std).expect("finite std");
            for (name, data) in p.tensors_mut() {
                let is_vector = name.ends_with("_b") || name.ends_with("_g");
                if is_vector {
                    for v in data.iter_mut() {
                        *v += S::of(dist.sample(&mut rng));
                    }
                }
            }
        }
        p
    }

    /// Named views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[S])> {
        fn t<'a, S, D: ndarray::Dimension>(
            name: String,
            a: &'a ndarray::Array<S, D>,
        ) -> (String, Vec<usize>, &'a [S]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut out = vec![t("item_emb".into(), &self.item_emb), t("pos_emb".into(), &self.pos_emb)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend([
                t(format!("blocks.{i}.ln1_g"), &b.ln1_g),
                t(format!("blocks.{i}.ln1_b"), &b.ln1_b),
                t(format!("blocks.{i}.attn_w"), &b.attn_w),
                t(format!("blocks.{i}.attn_b"), &b.attn_b),
                t(format!("blocks.{i}.proj_w"), &b.proj_w),
                t(format!("blocks.{i}.proj_b"), &b.proj_b),
                t(format!("blocks.{i}.ln2_g"), &b.ln2_g),
                t(format!("blocks.{i}.ln2_b"), &b.ln2_b),
                t(format!("blocks.{i}.fc_w"), &b.fc_w),
                t(format!("blocks.{i}.fc_b"), &b.fc_b),
                t(format!("blocks.{i}.out_w"), &b.out_w),
                t(format!("blocks.{i}.out_b"), &b.out_b),
            ]);
        }
        out.push(t("lnf_g".into(), &self.lnf_g));
        out.push(t("lnf_b".into(), &self.lnf_b));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [S])> {
        fn t<'a, S, D: ndarray::Dimension>(
            name: String,
            a: &'a mut ndarray::Array<S, D>,
        ) -> (String, &'a mut [S]) {
            (name, a.as_slice_mut().expect("standard layout"))
        }
        let mut out = vec![t("item_emb".into(), &mut self.item_emb), t("pos_emb".into(), &mut self.pos_emb)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend([
                t(format!("blocks.{i}.ln1_g"), &mut b.ln1_g),
                t(format!("blocks.{i}.ln1_b"), &mut b.ln1_b),
                t(format!("blocks.{i}.attn_w"), &mut b.attn_w),
                t(format!("blocks.{i}.attn_b"), &mut b.attn_b),
                t(format!("blocks.{i}.proj_w"), &mut b.proj_w),
                t(format!("blocks.{i}.proj_b"), &mut b.proj_b),
                t(format!("blocks.{i}.ln2_g"), &mut b.ln2_g),
                t(format!("blocks.{i}.ln2_b"), &mut b.ln2_b),
                t(format!("blocks.{i}.fc_w"), &mut b.fc_w),
                t(format!("blocks.{i}.fc_b"), &mut b.fc_b),
                t(format!("blocks.{i}.out_w"), &mut b.out_w),
                t(format!("blocks.{i}.out_b"), &mut b.out_b),
            ]);
        }
        out.push(t("lnf_g".into(), &mut self.lnf_g));
        out.push(t("lnf_b".into(), &mut self.lnf_b));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }

    pub fn fill_zero(&mut self) {
        for (_, data) in self.tensors_mut() {
            data.fill(S::zero());
        }
    }

    fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(cfg);
        let want: Vec<_> = expected.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        let have: Vec<_> = self.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if want != have {
            return Err(Error::Checkpoint("parameter shapes do not match the model config".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// primitives

struct NormCache<S> {
    xhat: Array2<S>,
    rstd: Array1<S>,
}

fn layer_norm<S: Scalar>(x: ArrayView2<S>, g: &Array1<S>, b: &Array1<S>) -> (Array2<S>, NormCache<S>) {
    let (n, d) = x.dim();
    let eps = S::of(LN_EPS);
    let inv_d = S::one() / S::of(d as f64);
    let mut xhat = Array2::zeros((n, d));
    let mut rstd = Array1::zeros(n);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() * inv_d;
        let var = row.fold(S::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_d;
        let r = S::one() / (var + eps).sqrt();
        rstd[i] = r;
        Zip::from(xhat.row_mut(i)).and(row).for_each(|o, &v| *o = (v - mean) * r);
    }
    let y = &xhat * g + b;
    (y, NormCache { xhat, rstd })
}

fn layer_norm_row<S: Scalar>(x: ArrayView1<S>, g: &Array1<S>, b: &Array1<S>) -> Array1<S> {
    let d = S::of(x.len() as f64);
    let mean = x.sum() / d;
    let var = x.fold(S::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / d;
    let r = S::one() / (var + S::of(LN_EPS)).sqrt();
    let mut out = x.mapv(|v| (v - mean) * r);
    out *= g;
    out += b;
    out
}

fn layer_norm_backward<S: Scalar>(
    dy: &Array2<S>,
    cache: &NormCache<S>,
    g: &Array1<S>,
    dg: &mut Array1<S>,
    db: &mut Array1<S>,
) -> Array2<S> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let inv_d = S::one() / S::of(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_dh = dh.sum() * inv_d;
        let mean_dhx = dh.dot(&xh) * inv_d;
        let r = cache.rstd[i];
        Zip::from(dx.row_mut(i))
            .and(dh)
            .and(xh)
            .for_each(|o, &a, &x| *o = r * (a - mean_dh - x * mean_dhx));
    }
    dx
}

const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu<S: Scalar>(x: S) -> S {
    let k = S::of((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + S::of(GELU_C) * x * x * x);
    S::of(0.5) * x * (S::one() + u.tanh())
}

#[inline]
fn gelu_grad<S: Scalar>(x: S) -> S {
    let k = S::of((2.0 / std::f64::consts::PI).sqrt());
    let u = k * (x + S::of(GELU_C) * x * x * x);
    let t = u.tanh();
    let du = k * (S::one() + S::of(3.0 * GELU_C) * x * x);
    S::of(0.5) * (S::one() + t) + S::of(0.5) * x * (S::one() - t * t) * du
}

fn dropout_mask<S: Scalar>(shape: (usize, usize), p: f64, rng: &mut Rng) -> Array2<S> {
    let keep = S::one() / S::of(1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { S::zero() } else { keep })
}

/// Softmax over `row[..=limit]`; entries after `limit` are set to zero.
fn causal_softmax_row<S: Scalar>(mut row: ndarray::ArrayViewMut1<S>, limit: usize) {
    let max = row.slice(s![..=limit]).fold(S::neg_infinity(), |m, &v| m.max(v));
    let mut sum = S::zero();
    for j in 0..=limit {
        let e = (row[j] - max).exp();
        row[j] = e;
        sum += e;
    }
    for j in 0..row.len() {
        row[j] = if j <= limit { row[j] / sum } else { S::zero() };
    }
}

// ---------------------------------------------------------------------------
// full-sequence forward with caches for backprop

struct BlockTrace<S> {
    ln1: NormCache<S>,
    a: Array2<S>,
    qkv: Array2<S>,
    probs: Vec<Array2<S>>,
    attn_masks: Vec<Option<Array2<S>>>,
    o: Array2<S>,
    resid1_mask: Option<Array2<S>>,
    ln2: NormCache<S>,
    c: Array2<S>,
    f: Array2<S>,
    g: Array2<S>,
    resid2_mask: Option<Array2<S>>,
}

struct Trace<S> {
    items: Vec<ItemId>,
    emb_mask: Option<Array2<S>>,
    blocks: Vec<BlockTrace<S>>,
    lnf: NormCache<S>,
    z: Array2<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GptModel<S> {
    cfg: ModelConfig,
    params: ModelParameters<S>,
}

/// Incremental decoding state: the current window and per-block key/value rows.
#[derive(Debug, Clone)]
pub struct GptState<S> {
    window: Vec<ItemId>,
    keys: Vec<Vec<S>>,
    values: Vec<Vec<S>>,
}

impl<S: Scalar> GptModel<S> {
    pub fn new(cfg: ModelConfig, params: ModelParameters<S>) -> Result<Self> {
        cfg.validate()?;
        params.check_shapes(&cfg)?;
        Ok(Self { cfg, params })
    }

    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParameters::init(&cfg, seed);
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParameters<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParameters<S> {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ModelParameters<S>) {
        (self.cfg, self.params)
    }

    fn run(&self, items: &[ItemId], mut rng: Option<&mut Rng>) -> Trace<S> {
        let p = &self.params;
        let cfg = &self.cfg;
        let (n, d, hd) = (items.len(), cfg.hidden_size, cfg.head_dim());
        let scale = S::one() / S::of(hd as f64).sqrt();
        let drop = cfg.dropout;
        let mut mask = |shape: (usize, usize)| match rng.as_deref_mut() {
            Some(r) if drop > 0.0 => Some(dropout_mask::<S>(shape, drop, r)),
            _ => None,
        };

        let mut h = Array2::zeros((n, d));
        for (t, &item) in items.iter().enumerate() {
            let mut row = h.row_mut(t);
            row.assign(&p.item_emb.row(item as usize));
            row += &p.pos_emb.row(t);
        }
        let emb_mask = mask((n, d));
        if let Some(m) = &emb_mask {
            h *= m;
        }

        let mut blocks = Vec::with_capacity(p.blocks.len());
        for bp in &p.blocks {
            let (a, ln1) = layer_norm(h.view(), &bp.ln1_g, &bp.ln1_b);
            let qkv = a.dot(&bp.attn_w) + &bp.attn_b;
            let mut o = Array2::zeros((n, d));
            let mut probs = Vec::with_capacity(cfg.num_heads);
            let mut attn_masks = Vec::with_capacity(cfg.num_heads);
            for head in 0..cfg.num_heads {
                let q = qkv.slice(s![.., head * hd..(head + 1) * hd]);
                let k = qkv.slice(s![.., d + head * hd..d + (head + 1) * hd]);
                let v = qkv.slice(s![.., 2 * d + head * hd..2 * d + (head + 1) * hd]);
                let mut sc = q.dot(&k.t()) * scale;
                for (i, row) in sc.outer_iter_mut().enumerate() {
                    causal_softmax_row(row, i);
                }
                let am = mask((n, n));
                let out = match &am {
                    Some(m) => (&sc * m).dot(&v),
                    None => sc.dot(&v),
                };
                o.slice_mut(s![.., head * hd..(head + 1) * hd]).assign(&out);
                probs.push(sc);
                attn_masks.push(am);
            }
            let mut y = o.dot(&bp.proj_w) + &bp.proj_b;
            let resid1_mask = mask((n, d));
            if let Some(m) = &resid1_mask {
                y *= m;
            }
            h += &y;

            let (c, ln2) = layer_norm(h.view(), &bp.ln2_g, &bp.ln2_b);
            let f = c.dot(&bp.fc_w) + &bp.fc_b;
            let g = f.mapv(gelu);
            let mut m = g.dot(&bp.out_w) + &bp.out_b;
            let resid2_mask = mask((n, d));
            if let Some(mk) = &resid2_mask {
                m *= mk;
            }
            h += &m;
            blocks.push(BlockTrace {
                ln1,
                a,
                qkv,
                probs,
                attn_masks,
                o,
                resid1_mask,
                ln2,
                c,
                f,
                g,
                resid2_mask,
            });
        }
        let (z, lnf) = layer_norm(h.view(), &p.lnf_g, &p.lnf_b);
        Trace { items: items.to_vec(), emb_mask, blocks, lnf, z }
    }

    /// Accumulate `d loss / d params` given `dz`, the gradient at the final norm output.
    fn backward(&self, trace: &Trace<S>, dz: &Array2<S>, grads: &mut ModelParameters<S>) {
        let p = &self.params;
        let cfg = &self.cfg;
        let (n, d, hd) = (trace.items.len(), cfg.hidden_size, cfg.head_dim());
        let scale = S::one() / S::of(hd as f64).sqrt();

        let mut dh = layer_norm_backward(dz, &trace.lnf, &p.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);
        for (bi, bt) in trace.blocks.iter().enumerate().rev() {
            let bp = &p.blocks[bi];
            let gb = &mut grads.blocks[bi];

            // feed-forward branch
            let dm = match &bt.resid2_mask {
                Some(m) => &dh * m,
                None => dh.clone(),
            };
            gb.out_w += &bt.g.t().dot(&dm);
            gb.out_b += &dm.sum_axis(Axis(0));
            let mut df = dm.dot(&bp.out_w.t());
            Zip::from(&mut df).and(&bt.f).for_each(|g, &x| *g *= gelu_grad(x));
            gb.fc_w += &bt.c.t().dot(&df);
            gb.fc_b += &df.sum_axis(Axis(0));
            let dc = df.dot(&bp.fc_w.t());
            dh += &layer_norm_backward(&dc, &bt.ln2, &bp.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b);

            // attention branch
            let dy = match &bt.resid1_mask {
                Some(m) => &dh * m,
                None => dh.clone(),
            };
            gb.proj_w += &bt.o.t().dot(&dy);
            gb.proj_b += &dy.sum_axis(Axis(0));
            let d_o = dy.dot(&bp.proj_w.t());
            let mut dqkv = Array2::<S>::zeros((n, 3 * d));
            for head in 0..cfg.num_heads {
                let cols = head * hd..(head + 1) * hd;
                let q = bt.qkv.slice(s![.., cols.clone()]);
                let k = bt.qkv.slice(s![.., d + cols.start..d + cols.end]);
                let v = bt.qkv.slice(s![.., 2 * d + cols.start..2 * d + cols.end]);
                let probs = &bt.probs[head];
                let do_h = d_o.slice(s![.., cols.clone()]);
                let (pd, mut dp) = match &bt.attn_masks[head] {
                    Some(m) => (probs * m, do_h.dot(&v.t()) * m),
                    None => (probs.clone(), do_h.dot(&v.t())),
                };
                let dv = pd.t().dot(&do_h);
                for i in 0..n {
                    let row_p = probs.row(i);
                    let dot = row_p.dot(&dp.row(i));
                    Zip::from(dp.row_mut(i)).and(row_p).for_each(|g, &pp| *g = pp * (*g - dot) * scale);
                }
                let ds = dp;
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![.., cols.clone()]).assign(&dq);
                dqkv.slice_mut(s![.., d + cols.start..d + cols.end]).assign(&dk);
                dqkv.slice_mut(s![.., 2 * d + cols.start..2 * d + cols.end]).assign(&dv);
            }
            gb.attn_w += &bt.a.t().dot(&dqkv);
            gb.attn_b += &dqkv.sum_axis(Axis(0));
            let da = dqkv.dot(&bp.attn_w.t());
            dh += &layer_norm_backward(&da, &bt.ln1, &bp.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b);
        }
        if let Some(m) = &trace.emb_mask {
            dh *= m;
        }
        for (t, &item) in trace.items.iter().enumerate() {
            let row = dh.row(t);
            let mut e = grads.item_emb.row_mut(item as usize);
            e += &row;
            let mut pe = grads.pos_emb.row_mut(t);
            pe += &row;
        }
    }

    fn window<'a>(&self, prefix: &'a [ItemId]) -> &'a [ItemId] {
        &prefix[prefix.len().saturating_sub(self.cfg.max_seq_len)..]
    }

    fn output_logits(&self, z: ArrayView1<S>) -> ScoreVector<S> {
        ScoreVector::logits(self.params.item_emb.dot(&z).to_vec())
    }

    /// Next-item logits at every position of `items` (after truncation to the
    /// last `max_seq_len` items), one row per position.
    pub fn sequence_logits(&self, items: &[ItemId]) -> Result<Array2<S>> {
        check_prefix(items, self.cfg.item_count)?;
        let trace = self.run(self.window(items), None);
        let mut logits = trace.z.dot(&self.params.item_emb.t());
        logits.column_mut(PAD as usize).fill(S::neg_infinity());
        Ok(logits)
    }

    /// Real items of one padded row: leading and trailing padding stripped.
    fn unpad(row: &[ItemId]) -> Result<&[ItemId]> {
        let start = row.iter().position(|&i| i != PAD).unwrap_or(row.len());
        let end = row.iter().rposition(|&i| i != PAD).map_or(start, |e| e + 1);
        let real = &row[start..end];
        if real.contains(&PAD) {
            return Err(Error::InvalidParameter("padding inside a sequence".into()));
        }
        Ok(real)
    }

    /// Mean next-item cross-entropy over all target positions of a padded
    /// batch; gradients are added into `grads`. Returns `(loss, targets)`.
    ///
    /// Rows may be left padded with [`PAD`]. A row of `n` real items yields
    /// `n - 1` targets (each item predicts its successor). `rng` enables dropout.
    pub fn accumulate_gradients(
        &self,
        batch: &[Vec<ItemId>],
        grads: &mut ModelParameters<S>,
        mut rng: Option<&mut Rng>,
    ) -> Result<(f64, usize)> {
        let rows: Vec<&[ItemId]> = batch.iter().map(|r| Self::unpad(r)).collect::<Result<_>>()?;
        let total: usize = rows.iter().map(|r| r.len().saturating_sub(1)).sum();
        if total == 0 {
            return Err(Error::EmptyBatch);
        }
        let inv_total = S::one() / S::of(total as f64);
        let mut loss = 0.0f64;
        for row in rows {
            if row.len() < 2 {
                continue;
            }
            check_items(row, self.cfg.item_count)?;
            if row.len() - 1 > self.cfg.max_seq_len {
                return Err(Error::InvalidParameter(format!(
                    "sequence of {} inputs exceeds max_seq_len {}",
                    row.len() - 1,
                    self.cfg.max_seq_len
                )));
            }
            let inputs = &row[..row.len() - 1];
            let targets = &row[1..];
            let trace = self.run(inputs, rng.as_deref_mut());
            let mut dlogits = trace.z.dot(&self.params.item_emb.t());
            for (t, mut lrow) in dlogits.outer_iter_mut().enumerate() {
                lrow[PAD as usize] = S::neg_infinity();
                let max = lrow.fold(S::neg_infinity(), |m, &v| m.max(v));
                let mut sum = S::zero();
                lrow.mapv_inplace(|v| {
                    let e = (v - max).exp();
                    sum += e;
                    e
                });
                let target = targets[t] as usize;
                let log_p = (lrow[target] / sum).ln();
                loss -= log_p.as_f64();
                lrow.mapv_inplace(|e| e / sum * inv_total);
                lrow[target] -= inv_total;
            }
            grads.item_emb += &dlogits.t().dot(&trace.z);
            let dz = dlogits.dot(&self.params.item_emb);
            self.backward(&trace, &dz, grads);
        }
        Ok((loss / total as f64, total))
    }

    /// Loss and freshly allocated gradients for one padded batch, dropout off.
    pub fn loss_and_gradients(&self, batch: &[Vec<ItemId>]) -> Result<(f64, ModelParameters<S>)> {
        let mut grads = ModelParameters::zeros(&self.cfg);
        let (loss, _) = self.accumulate_gradients(batch, &mut grads, None)?;
        Ok((loss, grads))
    }

    /// Mean cross-entropy without gradients, dropout off.
    pub fn loss(&self, batch: &[Vec<ItemId>]) -> Result<f64> {
        let mut total = 0usize;
        let mut loss = 0.0f64;
        for row in batch {
            let row = Self::unpad(row)?;
            if row.len() < 2 {
                continue;
            }
            check_items(row, self.cfg.item_count)?;
            let logits = self.sequence_logits(&row[..row.len() - 1])?;
            for (t, lrow) in logits.outer_iter().enumerate() {
                let max = lrow.fold(S::neg_infinity(), |m, &v| m.max(v)).as_f64();
                let lse = lrow.iter().map(|&v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
                loss += lse - lrow[row[t + 1] as usize].as_f64();
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(loss / total as f64)
    }
}

impl<S: Scalar> NextItemModel for GptModel<S> {
    type Scalar = S;
    type State = GptState<S>;

    fn item_count(&self) -> usize {
        self.cfg.item_count
    }

    fn begin(&self, prefix: &[ItemId]) -> Result<(GptState<S>, ScoreVector<S>)> {
        check_prefix(prefix, self.cfg.item_count)?;
        let window = self.window(prefix);
        let trace = self.run(window, None);
        let d = self.cfg.hidden_size;
        let mut keys = Vec::with_capacity(trace.blocks.len());
        let mut values = Vec::with_capacity(trace.blocks.len());
        for bt in &trace.blocks {
            let k = bt.qkv.slice(s![.., d..2 * d]);
            let v = bt.qkv.slice(s![.., 2 * d..3 * d]);
            keys.push(k.iter().copied().collect());
            values.push(v.iter().copied().collect());
        }
        let logits = self.output_logits(trace.z.row(window.len() - 1));
        Ok((GptState { window: window.to_vec(), keys, values }, logits))
    }

    fn advance(&self, state: &mut GptState<S>, item: ItemId) -> Result<ScoreVector<S>> {
        check_items(&[item], self.cfg.item_count)?;
        let (d, hd, l) = (self.cfg.hidden_size, self.cfg.head_dim(), self.cfg.max_seq_len);
        if state.window.len() >= l {
            // positions shift once the window is full; re-encode the last l items
            let mut window = state.window[1..].to_vec();
            window.push(item);
            let (next, logits) = self.begin(&window)?;
            *state = next;
            return Ok(logits);
        }
        let p = &self.params;
        let pos = state.window.len();
        let scale = S::one() / S::of(hd as f64).sqrt();
        let mut h = &p.item_emb.row(item as usize) + &p.pos_emb.row(pos);
        for (bi, bp) in p.blocks.iter().enumerate() {
            let a = layer_norm_row(h.view(), &bp.ln1_g, &bp.ln1_b);
            let qkv = a.dot(&bp.attn_w) + &bp.attn_b;
            state.keys[bi].extend(qkv.slice(s![d..2 * d]).iter().copied());
            state.values[bi].extend(qkv.slice(s![2 * d..3 * d]).iter().copied());
            let keys = ArrayView2::from_shape((pos + 1, d), &state.keys[bi]).expect("row-major cache");
            let vals = ArrayView2::from_shape((pos + 1, d), &state.values[bi]).expect("row-major cache");
            let mut o = Array1::zeros(d);
            for head in 0..self.cfg.num_heads {
                let cols = head * hd..(head + 1) * hd;
                let q = qkv.slice(s![cols.clone()]);
                let k = keys.slice(s![.., cols.clone()]);
                let mut sc = k.dot(&q) * scale;
                let n = sc.len();
                causal_softmax_row(sc.view_mut(), n - 1);
                o.slice_mut(s![cols.clone()]).assign(&vals.slice(s![.., cols]).t().dot(&sc));
            }
            h += &(o.dot(&bp.proj_w) + &bp.proj_b);
            let c = layer_norm_row(h.view(), &bp.ln2_g, &bp.ln2_b);
            let g = (c.dot(&bp.fc_w) + &bp.fc_b).mapv(gelu);
            h += &(g.dot(&bp.out_w) + &bp.out_b);
        }
        state.window.push(item);
        let z = layer_norm_row(h.view(), &p.lnf_g, &p.lnf_b);
        Ok(self.output_logits(z.view()))
    }
}
