use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis as NdAxis};
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use super::layout::{LayerOffsets, ParamLayout};
use crate::error::{Error, Result};
use crate::flow::{LatentBatch, TimedPolicy, VelocityModel};
use crate::policy::PePolicy;
use crate::rng::{domain, stream};
use crate::rope2d::{AxialRotation, FrequencyTable, PositionGrid};

const LN_EPS: f64 = 1e-5;

/// Clean images with their class labels, shape `[B, 1, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x: LatentBatch,
    pub classes: Vec<usize>,
}

impl TrainBatch {
    pub fn new(x: LatentBatch, classes: Vec<usize>) -> Result<Self> {
        if x.dim().0 != classes.len() {
            return Err(Error::Shape(format!(
                "{} images but {} class labels",
                x.dim().0,
                classes.len()
            )));
        }
        if classes.is_empty() {
            return Err(Error::EmptyInput("training batch".into()));
        }
        Ok(Self { x, classes })
    }

    /// Gathers `indices` of a dataset of equally sized images.
    pub fn gather(images: &[Array2<f64>], classes: &[usize], indices: &[usize]) -> Result<Self> {
        let first = indices
            .first()
            .and_then(|&i| images.get(i))
            .ok_or_else(|| Error::EmptyInput("training batch".into()))?;
        let (h, w) = first.dim();
        let mut x = LatentBatch::zeros((indices.len(), 1, h, w));
        let mut labels = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            let img = images
                .get(i)
                .ok_or_else(|| Error::Shape(format!("index {i} outside dataset of {}", images.len())))?;
            if img.dim() != (h, w) {
                return Err(Error::Shape(format!(
                    "image {i} is {:?}, expected {:?}",
                    img.dim(),
                    (h, w)
                )));
            }
            x.slice_mut(s![b, 0, .., ..]).assign(img);
            labels.push(classes[i]);
        }
        Self::new(x, labels)
    }
}

/// The toy diffusion transformer: parameters plus the rotary base table.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDit {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<f64>,
    table: FrequencyTable,
}

/// Positional set-up for one token grid at one time.
struct Prepared {
    rot: AxialRotation,
    logit_scale: f64,
}

struct LayerCache {
    ln1: Array2<f64>,
    inv1: Vec<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: Array2<f64>,
    inv2: Vec<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct Cache {
    patches: Array2<f64>,
    feat: Array1<f64>,
    e1: Array1<f64>,
    a1: Array1<f64>,
    layers: Vec<LayerCache>,
    lnf: Array2<f64>,
    invf: Vec<f64>,
}

impl TinyDit {
    /// Fan-in uniform initialization with a zero output projection, so the
    /// untrained model predicts zero velocity.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let blocks = model.layout.blocks().to_vec();
        for (i, block) in blocks.iter().enumerate() {
            if block.shape.len() != 2 || block.name.starts_with("final.") {
                continue;
            }
            let fan_in = if block.name == "class.emb" {
                block.shape[1]
            } else {
                block.shape[0]
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = stream(seed, domain::INIT, i as u64);
            for v in &mut model.params[block.range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if params.len() != model.layout.total() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                params.len(),
                model.layout.total()
            )));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            let name = &model.layout.block_of(i).expect("index in range").name;
            return Err(Error::numeric(
                name.clone(),
                format!("non-finite parameter at index {i}"),
            ));
        }
        model.params = params;
        Ok(model)
    }

    fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let table = FrequencyTable::new(config.pairs(), config.theta_base)?;
        Ok(Self {
            params: vec![0.0; layout.total()],
            config,
            layout,
            table,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn frequency_table(&self) -> &FrequencyTable {
        &self.table
    }

    fn mat(&self, off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((r, c), &self.params[off..off + r * c]).expect("layout block")
    }

    fn vec(&self, off: usize, n: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off..off + n])
    }

    fn check_input(&self, x: &LatentBatch, n_t: usize, classes: &[usize]) -> Result<(usize, usize)> {
        let (b, c, h, w) = x.dim();
        if c != 1 {
            return Err(Error::Shape(format!("expected 1 channel, got {c}")));
        }
        let gh = self.config.grid_for(h)?;
        let gw = self.config.grid_for(w)?;
        if n_t != b || classes.len() != b {
            return Err(Error::Shape(format!(
                "batch of {b} with {n_t} times and {} classes",
                classes.len()
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&k| k >= self.config.class_count) {
            return Err(Error::InvalidParameter(format!(
                "class {bad} outside 0..{}",
                self.config.class_count
            )));
        }
        Ok((gh, gw))
    }

    fn prepare(&self, gh: usize, gw: usize, t: f64, policy: &PePolicy) -> Result<Prepared> {
        let enc = policy.resolve(t, &self.table, &self.table)?;
        let grid = PositionGrid::new(gh, gw)?.remapped(enc.x.position_divisor, enc.y.position_divisor)?;
        Ok(Prepared {
            rot: AxialRotation::new(&grid, &enc.x.table, &enc.y.table)?,
            logit_scale: enc.attention_scale / (self.config.d_head() as f64).sqrt(),
        })
    }

    /// Positional set-ups for every batch element; static policies share one.
    fn prepare_all(&self, gh: usize, gw: usize, t: &[f64], policy: &PePolicy) -> Result<Vec<Prepared>> {
        if policy.kind.is_dynamic() {
            t.iter().map(|&ti| self.prepare(gh, gw, ti, policy)).collect()
        } else {
            let first = t.first().copied().unwrap_or(0.0);
            for &ti in t {
                crate::dynamic::check_time(ti)?;
            }
            Ok(vec![self.prepare(gh, gw, first, policy)?])
        }
    }

    /// Predicted velocity for `x_t` at per-element times and classes.
    pub fn forward(&self, x_t: &LatentBatch, t: &[f64], classes: &[usize], policy: &PePolicy) -> Result<LatentBatch> {
        let (gh, gw) = self.check_input(x_t, t.len(), classes)?;
        let prep = self.prepare_all(gh, gw, t, policy)?;
        let mut out = LatentBatch::zeros(x_t.dim());
        for b in 0..x_t.dim().0 {
            let p = &prep[b.min(prep.len() - 1)];
            let (y, _) = self.forward_sample(x_t.slice(s![b, 0, .., ..]), t[b], classes[b], p, false);
            out.slice_mut(s![b, 0, .., ..]).assign(&y);
        }
        Ok(out)
    }

    /// Softmax attention matrices of one image, `layers * heads` of them,
    /// layer-major.
    pub fn attention_probabilities(
        &self,
        image: ArrayView2<'_, f64>,
        t: f64,
        class: usize,
        policy: &PePolicy,
    ) -> Result<Vec<Array2<f64>>> {
        let x = image.to_owned().insert_axis(NdAxis(0)).insert_axis(NdAxis(0));
        let (gh, gw) = self.check_input(&x, 1, &[class])?;
        let prep = self.prepare(gh, gw, t, policy)?;
        let (_, cache) = self.forward_sample(image, t, class, &prep, true);
        Ok(cache
            .expect("cache requested")
            .layers
            .into_iter()
            .flat_map(|l| l.probs)
            .collect())
    }

    fn time_features(&self, t: f64) -> Array1<f64> {
        let k = self.config.time_features;
        let mut feat = Array1::zeros(2 * k);
        for i in 0..k {
            let w = if k > 1 {
                100f64.powf(i as f64 / (k - 1) as f64)
            } else {
                1.0
            };
            let (sn, cs) = (w * t).sin_cos();
            feat[i] = sn;
            feat[k + i] = cs;
        }
        feat
    }

    fn forward_sample(
        &self,
        img: ArrayView2<'_, f64>,
        t: f64,
        class: usize,
        prep: &Prepared,
        keep: bool,
    ) -> (Array2<f64>, Option<Cache>) {
        let cfg = &self.config;
        let o = &self.layout.offsets;
        let (d, pd, hid) = (cfg.d_model, cfg.patch_dim(), cfg.hidden());
        let f = 2 * cfg.time_features;
        let patches = patchify(img, cfg.patch_size);

        let feat = self.time_features(t);
        let e1 = feat.dot(&self.mat(o.time_w1, f, d)) + self.vec(o.time_b1, d);
        let a1 = e1.mapv(silu);
        let cond = a1.dot(&self.mat(o.time_w2, d, d))
            + self.vec(o.time_b2, d)
            + self.mat(o.class, cfg.class_count, d).row(class);

        let mut h = patches.dot(&self.mat(o.embed_w, pd, d)) + self.vec(o.embed_b, d);
        h += &cond;

        let mut layers = Vec::with_capacity(if keep { cfg.layers } else { 0 });
        for lo in &o.layers {
            let (ln1, inv1) = layer_norm(&h);
            let mut qkv = ln1.dot(&self.mat(lo.qkv_w, d, 3 * d)) + self.vec(lo.qkv_b, 3 * d);
            self.rotate_qk(&mut qkv, &prep.rot, false);
            let (attn, probs) = self.attention(&qkv, prep.logit_scale);
            h += &(attn.dot(&self.mat(lo.proj_w, d, d)) + self.vec(lo.proj_b, d));

            let (ln2, inv2) = layer_norm(&h);
            let pre = ln2.dot(&self.mat(lo.mlp1_w, d, hid)) + self.vec(lo.mlp1_b, hid);
            let act = pre.mapv(silu);
            h += &(act.dot(&self.mat(lo.mlp2_w, hid, d)) + self.vec(lo.mlp2_b, d));
            if keep {
                layers.push(LayerCache {
                    ln1,
                    inv1,
                    qkv,
                    probs,
                    attn,
                    ln2,
                    inv2,
                    pre,
                    act,
                });
            }
        }
        let (lnf, invf) = layer_norm(&h);
        let out = lnf.dot(&self.mat(o.final_w, d, pd)) + self.vec(o.final_b, pd);
        let (hh, ww) = img.dim();
        let y = unpatchify(&out, cfg.patch_size, hh / cfg.patch_size, ww / cfg.patch_size);
        let cache = keep.then(|| Cache {
            patches,
            feat,
            e1,
            a1,
            layers,
            lnf,
            invf,
        });
        (y, cache)
    }

    /// Rotates (or un-rotates) the q and k column groups of every head.
    fn rotate_qk(&self, qkv: &mut Array2<f64>, rot: &AxialRotation, inverse: bool) {
        let d = self.config.d_model;
        let dh = self.config.d_head();
        for (n, mut row) in qkv.axis_iter_mut(NdAxis(0)).enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for part in 0..2 {
                for hd in 0..self.config.heads {
                    let start = part * d + hd * dh;
                    let v = &mut row[start..start + dh];
                    if inverse {
                        rot.rotate_inverse(n, v);
                    } else {
                        rot.rotate(n, v);
                    }
                }
            }
        }
    }

    fn attention(&self, qkv: &Array2<f64>, scale: f64) -> (Array2<f64>, Vec<Array2<f64>>) {
        let d = self.config.d_model;
        let dh = self.config.d_head();
        let n = qkv.nrows();
        let mut out = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(self.config.heads);
        for hd in 0..self.config.heads {
            let c = hd * dh;
            let q = qkv.slice(s![.., c..c + dh]);
            let k = qkv.slice(s![.., d + c..d + c + dh]);
            let v = qkv.slice(s![.., 2 * d + c..2 * d + c + dh]);
            let mut p = q.dot(&k.t());
            p *= scale;
            softmax_rows(&mut p);
            out.slice_mut(s![.., c..c + dh]).assign(&p.dot(&v));
            probs.push(p);
        }
        (out, probs)
    }

    /// Adds the gradient of `sum(d_out * y)` for one sample into `grad`.
    fn backward_sample(
        &self,
        cache: &Cache,
        d_img: ArrayView2<'_, f64>,
        class: usize,
        prep: &Prepared,
        grad: &mut [f64],
    ) {
        let cfg = &self.config;
        let o = &self.layout.offsets;
        let (d, pd, hid, dh) = (cfg.d_model, cfg.patch_dim(), cfg.hidden(), cfg.d_head());
        let f = 2 * cfg.time_features;

        let d_out = patchify(d_img, cfg.patch_size);
        acc_matmul(grad, o.final_w, cache.lnf.t(), d_out.view());
        acc_vec(grad, o.final_b, d_out.sum_axis(NdAxis(0)).view());
        let d_lnf = d_out.dot(&self.mat(o.final_w, d, pd).t());
        let mut dh_res = layer_norm_backward(&d_lnf, &cache.lnf, &cache.invf);

        for (lo, lc) in o.layers.iter().zip(&cache.layers).rev() {
            let LayerOffsets {
                qkv_w,
                qkv_b,
                proj_w,
                proj_b,
                mlp1_w,
                mlp1_b,
                mlp2_w,
                mlp2_b,
            } = *lo;
            // MLP branch.
            acc_matmul(grad, mlp2_w, lc.act.t(), dh_res.view());
            acc_vec(grad, mlp2_b, dh_res.sum_axis(NdAxis(0)).view());
            let mut d_pre = dh_res.dot(&self.mat(mlp2_w, hid, d).t());
            d_pre.zip_mut_with(&lc.pre, |g, &x| *g *= silu_grad(x));
            acc_matmul(grad, mlp1_w, lc.ln2.t(), d_pre.view());
            acc_vec(grad, mlp1_b, d_pre.sum_axis(NdAxis(0)).view());
            let d_ln2 = d_pre.dot(&self.mat(mlp1_w, d, hid).t());
            dh_res += &layer_norm_backward(&d_ln2, &lc.ln2, &lc.inv2);

            // Attention branch.
            acc_matmul(grad, proj_w, lc.attn.t(), dh_res.view());
            acc_vec(grad, proj_b, dh_res.sum_axis(NdAxis(0)).view());
            let d_attn = dh_res.dot(&self.mat(proj_w, d, d).t());
            let mut d_qkv = Array2::zeros(lc.qkv.dim());
            for (hd, p) in lc.probs.iter().enumerate() {
                let c = hd * dh;
                let q = lc.qkv.slice(s![.., c..c + dh]);
                let k = lc.qkv.slice(s![.., d + c..d + c + dh]);
                let v = lc.qkv.slice(s![.., 2 * d + c..2 * d + c + dh]);
                let d_o = d_attn.slice(s![.., c..c + dh]);
                let dp = d_o.dot(&v.t());
                d_qkv
                    .slice_mut(s![.., 2 * d + c..2 * d + c + dh])
                    .assign(&p.t().dot(&d_o));
                let mut ds = dp;
                for (mut ds_row, p_row) in ds.axis_iter_mut(NdAxis(0)).zip(p.axis_iter(NdAxis(0))) {
                    let dot: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
                    ds_row.zip_mut_with(&p_row, |g, &pv| *g = pv * (*g - dot) * prep.logit_scale);
                }
                d_qkv.slice_mut(s![.., c..c + dh]).assign(&ds.dot(&k));
                d_qkv.slice_mut(s![.., d + c..d + c + dh]).assign(&ds.t().dot(&q));
            }
            self.rotate_qk(&mut d_qkv, &prep.rot, true);
            acc_matmul(grad, qkv_w, lc.ln1.t(), d_qkv.view());
            acc_vec(grad, qkv_b, d_qkv.sum_axis(NdAxis(0)).view());
            let d_ln1 = d_qkv.dot(&self.mat(qkv_w, d, 3 * d).t());
            dh_res += &layer_norm_backward(&d_ln1, &lc.ln1, &lc.inv1);
        }

        // Embeddings.
        acc_matmul(grad, o.embed_w, cache.patches.t(), dh_res.view());
        let d_cond = dh_res.sum_axis(NdAxis(0));
        acc_vec(grad, o.embed_b, d_cond.view());
        acc_vec(grad, o.class + class * d, d_cond.view());
        acc_vec(grad, o.time_b2, d_cond.view());
        acc_outer(grad, o.time_w2, cache.a1.view(), d_cond.view());
        let mut d_e1 = self.mat(o.time_w2, d, d).dot(&d_cond);
        d_e1.zip_mut_with(&cache.e1, |g, &x| *g *= silu_grad(x));
        acc_outer(grad, o.time_w1, cache.feat.view(), d_e1.view());
        acc_vec(grad, o.time_b1, d_e1.view());
        debug_assert_eq!(cache.feat.len(), f);
    }

    /// Noised inputs, targets and times for a batch under `seed`.
    fn loss_inputs(&self, batch: &TrainBatch, seed: u64) -> (LatentBatch, LatentBatch, Vec<f64>) {
        let mut x_t = batch.x.clone();
        let mut target = batch.x.clone();
        let mut times = Vec::with_capacity(batch.classes.len());
        for (i, (mut xt, mut tg)) in x_t
            .axis_iter_mut(NdAxis(0))
            .zip(target.axis_iter_mut(NdAxis(0)))
            .enumerate()
        {
            let t: f64 = stream(seed, domain::LOSS_TIME, i as u64).random();
            let mut rng = stream(seed, domain::LOSS_NOISE, i as u64);
            for (a, b) in xt.iter_mut().zip(tg.iter_mut()) {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let x = *a;
                *a = (1.0 - t) * x + t * eps;
                *b = eps - x;
            }
            times.push(t);
        }
        (x_t, target, times)
    }

    /// Flow-matching loss: mean squared error against `eps - x` at a uniform
    /// time per element, drawn from streams keyed by `seed`.
    pub fn loss(&self, batch: &TrainBatch, seed: u64, policy: &PePolicy) -> Result<f64> {
        let (x_t, target, times) = self.loss_inputs(batch, seed);
        let pred = self.forward(&x_t, &times, &batch.classes, policy)?;
        Ok(mse(&pred, &target))
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &TrainBatch, seed: u64, policy: &PePolicy) -> Result<(f64, Vec<f64>)> {
        let (loss, grad, _) = self.loss_grad_baseline(batch, seed, policy)?;
        Ok((loss, grad))
    }

    /// As [`TinyDit::loss_and_grad`], plus the loss a zero-output model
    /// would get on the same noised batch.
    pub(crate) fn loss_grad_baseline(
        &self,
        batch: &TrainBatch,
        seed: u64,
        policy: &PePolicy,
    ) -> Result<(f64, Vec<f64>, f64)> {
        let (x_t, target, times) = self.loss_inputs(batch, seed);
        let (gh, gw) = self.check_input(&x_t, times.len(), &batch.classes)?;
        let prep = self.prepare_all(gh, gw, &times, policy)?;
        let total = target.len() as f64;
        let mut grad = vec![0.0; self.layout.total()];
        let mut pred = LatentBatch::zeros(x_t.dim());
        for b in 0..x_t.dim().0 {
            let p = &prep[b.min(prep.len() - 1)];
            let (y, cache) = self.forward_sample(x_t.slice(s![b, 0, .., ..]), times[b], batch.classes[b], p, true);
            let mut d_y = &y - &target.slice(s![b, 0, .., ..]);
            pred.slice_mut(s![b, 0, .., ..]).assign(&y);
            d_y *= 2.0 / total;
            self.backward_sample(
                &cache.expect("cache requested"),
                d_y.view(),
                batch.classes[b],
                p,
                &mut grad,
            );
        }
        for block in self.layout.blocks() {
            if grad[block.range()].iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(block.name.clone(), "non-finite gradient"));
            }
        }
        let zero = target.iter().map(|v| v * v).sum::<f64>() / total;
        Ok((mse(&pred, &target), grad, zero))
    }

    pub fn backward(&self, batch: &TrainBatch, seed: u64, policy: &PePolicy) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad(batch, seed, policy)?.1)
    }
}

/// A model bound to per-element class labels, for use with the sampler.
#[derive(Debug, Clone, Copy)]
pub struct ConditionedModel<'a> {
    pub model: &'a TinyDit,
    pub classes: &'a [usize],
}

impl VelocityModel for ConditionedModel<'_> {
    fn velocity(&self, x_t: &LatentBatch, _t: f64, pe: TimedPolicy<'_>) -> Result<LatentBatch> {
        let times = vec![pe.t; x_t.dim().0];
        self.model.forward(x_t, &times, self.classes, pe.policy)
    }
}

pub(crate) fn mse(a: &LatentBatch, b: &LatentBatch) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let sg = 1.0 / (1.0 + (-x).exp());
    sg * (1.0 + x * (1.0 - sg))
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(NdAxis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn layer_norm(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut y = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    let n = x.ncols() as f64;
    for mut row in y.axis_iter_mut(NdAxis(0)) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        inv.push(is);
    }
    (y, inv)
}

fn layer_norm_backward(dy: &Array2<f64>, y: &Array2<f64>, inv: &[f64]) -> Array2<f64> {
    let n = y.ncols() as f64;
    let mut dx = dy.clone();
    for ((mut dx_row, y_row), &is) in dx.axis_iter_mut(NdAxis(0)).zip(y.axis_iter(NdAxis(0))).zip(inv) {
        let mean_dy = dx_row.sum() / n;
        let mean_dyy = dx_row.iter().zip(y_row.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        dx_row.zip_mut_with(&y_row, |g, &yv| *g = is * (*g - mean_dy - yv * mean_dyy));
    }
    dx
}

/// `[H, W]` image to `[tokens, p*p]`, tokens row-major over the patch grid.
fn patchify(img: ArrayView2<'_, f64>, p: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let (gh, gw) = (h / p, w / p);
    Array2::from_shape_fn((gh * gw, p * p), |(n, e)| {
        let (gy, gx) = (n / gw, n % gw);
        let (py, px) = (e / p, e % p);
        img[[gy * p + py, gx * p + px]]
    })
}

fn unpatchify(tokens: &Array2<f64>, p: usize, gh: usize, gw: usize) -> Array2<f64> {
    Array2::from_shape_fn((gh * p, gw * p), |(y, x)| {
        tokens[[(y / p) * gw + x / p, (y % p) * p + x % p]]
    })
}

fn acc_matmul(grad: &mut [f64], off: usize, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) {
    let (r, c) = (a.nrows(), b.ncols());
    let mut g = ArrayViewMut2::from_shape((r, c), &mut grad[off..off + r * c]).expect("layout block");
    general_mat_mul(1.0, &a, &b, 1.0, &mut g);
}

fn acc_outer(grad: &mut [f64], off: usize, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    let (r, c) = (a.len(), b.len());
    let mut g = ArrayViewMut2::from_shape((r, c), &mut grad[off..off + r * c]).expect("layout block");
    for (mut row, &av) in g.axis_iter_mut(NdAxis(0)).zip(a.iter()) {
        row.scaled_add(av, &b);
    }
}

fn acc_vec(grad: &mut [f64], off: usize, v: ArrayView1<'_, f64>) {
    let mut g = ArrayViewMut1::from(&mut grad[off..off + v.len()]);
    g += &v;
}
