//! Scalar scoring network with hand-written backpropagation.
//!
//! Per site, the selection bit, pan and tilt are each embedded by a shared
//! scalar-to-vector linear map and fused with a Hadamard product. The fused
//! tokens are lifted to the model width, passed through one residual
//! multi-head self-attention block, mean-pooled, and scored by
//! `Linear -> BatchNorm -> ReLU -> Linear`.
//!
//! All parameters live in one flat `Vec<f32>` so the optimizer and the
//! checkpoint code can treat them uniformly.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::genome::{Solution, PAN_MAX, TILT_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub embed: usize,
    pub model: usize,
    pub heads: usize,
    pub hidden: usize,
}

impl NetDims {
    pub fn head_dim(&self) -> usize {
        self.model / self.heads
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    emb_w: Block,
    emb_b: Block,
    lift_w: Block,
    lift_b: Block,
    qkv_w: Block,
    qkv_b: Block,
    out_w: Block,
    out_b: Block,
    fc1_w: Block,
    fc1_b: Block,
    gamma: Block,
    beta: Block,
    fc2_w: Block,
    fc2_b: Block,
    total: usize,
}

impl Layout {
    fn new(d: &NetDims) -> Self {
        let mut offset = 0;
        let mut next = |rows, cols| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let emb_w = next(3, d.embed);
        let emb_b = next(3, d.embed);
        let lift_w = next(d.embed, d.model);
        let lift_b = next(1, d.model);
        let qkv_w = next(d.model, 3 * d.model);
        let qkv_b = next(1, 3 * d.model);
        let out_w = next(d.model, d.model);
        let out_b = next(1, d.model);
        let fc1_w = next(d.model, d.hidden);
        let fc1_b = next(1, d.hidden);
        let gamma = next(1, d.hidden);
        let beta = next(1, d.hidden);
        let fc2_w = next(d.hidden, 1);
        let fc2_b = next(1, 1);
        Layout {
            emb_w,
            emb_b,
            lift_w,
            lift_b,
            qkv_w,
            qkv_b,
            out_w,
            out_b,
            fc1_w,
            fc1_b,
            gamma,
            beta,
            fc2_w,
            fc2_b,
            total: offset,
        }
    }
}

fn mat(buf: &[f32], b: Block) -> ArrayView2<'_, f32> {
    ArrayView2::from_shape((b.rows, b.cols), &buf[b.range()]).expect("layout block shape")
}

fn vec1(buf: &[f32], b: Block) -> ArrayView1<'_, f32> {
    ArrayView1::from(&buf[b.range()])
}

fn add_into(buf: &mut [f32], b: Block, src: impl IntoIterator<Item = f32>) {
    for (dst, v) in buf[b.range()].iter_mut().zip(src) {
        *dst += v;
    }
}

/// Network inputs for a batch of individuals: one row per site token with
/// columns `(select, pan / 180, tilt / 90)`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub individuals: usize,
    pub sites: usize,
    inputs: Array2<f32>,
}

impl Batch {
    pub fn from_solutions(sols: &[&Solution]) -> Self {
        let sites = sols.first().map_or(0, |s| s.num_sites());
        let mut inputs = Array2::zeros((sols.len() * sites, 3));
        for (i, sol) in sols.iter().enumerate() {
            debug_assert_eq!(sol.num_sites(), sites);
            for j in 0..sites {
                let mut row = inputs.row_mut(i * sites + j);
                row[0] = if sol.select[j] { 1.0 } else { 0.0 };
                row[1] = (sol.pan[j] / PAN_MAX) as f32;
                row[2] = (sol.tilt[j] / TILT_MAX) as f32;
            }
        }
        Batch {
            individuals: sols.len(),
            sites,
            inputs,
        }
    }
}

/// Intermediate activations kept for the backward pass.
pub struct Cache {
    emb: [Array2<f32>; 3],
    fused: Array2<f32>,
    tokens: Array2<f32>,
    qkv: Array2<f32>,
    attn: Vec<Array2<f32>>,
    mixed: Array2<f32>,
    pooled: Array2<f32>,
    normed: Array2<f32>,
    inv_std: Array1<f32>,
    pre_act: Array2<f32>,
    act: Array2<f32>,
    pub batch_mean: Array1<f32>,
    pub batch_var: Array1<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNet {
    dims: NetDims,
    params: Vec<f32>,
    running_mean: Vec<f32>,
    running_var: Vec<f32>,
    bn_eps: f32,
}

impl ScoreNet {
    /// Uniform `±1/sqrt(fan_in)` initialisation for every linear map;
    /// normalisation scale 1 and shift 0.
    pub fn new<R: Rng + ?Sized>(dims: NetDims, bn_eps: f32, rng: &mut R) -> Self {
        let layout = Layout::new(&dims);
        let mut params = vec![0.0f32; layout.total];
        let mut fill = |b: Block, fan_in: usize| {
            let bound = 1.0 / (fan_in as f32).sqrt();
            for v in &mut params[b.range()] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(layout.emb_w, 1);
        fill(layout.emb_b, 1);
        fill(layout.lift_w, dims.embed);
        fill(layout.lift_b, dims.embed);
        fill(layout.qkv_w, dims.model);
        fill(layout.qkv_b, dims.model);
        fill(layout.out_w, dims.model);
        fill(layout.out_b, dims.model);
        fill(layout.fc1_w, dims.model);
        fill(layout.fc1_b, dims.model);
        fill(layout.fc2_w, dims.hidden);
        fill(layout.fc2_b, dims.hidden);
        params[layout.gamma.range()].fill(1.0);
        params[layout.beta.range()].fill(0.0);
        ScoreNet {
            dims,
            params,
            running_mean: vec![0.0; dims.hidden],
            running_var: vec![1.0; dims.hidden],
            bn_eps,
        }
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.dims)
    }

    /// Folds a training batch's statistics into the running estimates.
    pub fn update_running_stats(&mut self, cache: &Cache, momentum: f32, batch_size: usize) {
        let unbias = if batch_size > 1 {
            batch_size as f32 / (batch_size - 1) as f32
        } else {
            1.0
        };
        for (i, (rm, rv)) in self.running_mean.iter_mut().zip(&mut self.running_var).enumerate() {
            *rm = (1.0 - momentum) * *rm + momentum * cache.batch_mean[i];
            *rv = (1.0 - momentum) * *rv + momentum * cache.batch_var[i] * unbias;
        }
    }

    /// Scores every individual in the batch. With `train` set, normalisation
    /// uses batch statistics and the returned cache supports [`backward`].
    ///
    /// [`backward`]: ScoreNet::backward
    pub fn forward(&self, batch: &Batch, train: bool) -> (Array1<f32>, Cache) {
        let l = self.layout();
        let p = &self.params;
        let d = self.dims;
        let (n, z) = (batch.individuals, batch.sites);
        let tokens_n = n * z;

        let emb_w = mat(p, l.emb_w);
        let emb_b = mat(p, l.emb_b);
        let emb: [Array2<f32>; 3] = std::array::from_fn(|kind| {
            let x = batch.inputs.column(kind);
            let w = emb_w.row(kind);
            let b = emb_b.row(kind);
            Array2::from_shape_fn((tokens_n, d.embed), |(i, m)| x[i] * w[m] + b[m])
        });
        let fused = &emb[0] * &emb[1] * &emb[2];

        let tokens = fused.dot(&mat(p, l.lift_w)) + vec1(p, l.lift_b);
        let qkv = tokens.dot(&mat(p, l.qkv_w)) + vec1(p, l.qkv_b);

        let dh = d.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        let mut mixed = Array2::<f32>::zeros((tokens_n, d.model));
        let mut attn = Vec::with_capacity(n * d.heads);
        for i in 0..n {
            let rows = i * z..(i + 1) * z;
            for h in 0..d.heads {
                let q = qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![rows.clone(), d.model + h * dh..d.model + (h + 1) * dh]);
                let v = qkv.slice(s![rows.clone(), 2 * d.model + h * dh..2 * d.model + (h + 1) * dh]);
                let mut a = q.dot(&k.t()) * scale;
                for mut row in a.rows_mut() {
                    let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    row.mapv_inplace(|x| (x - mx).exp());
                    let sum = row.sum();
                    row /= sum;
                }
                mixed.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]).assign(&a.dot(&v));
                attn.push(a);
            }
        }

        let residual = &tokens + &(mixed.dot(&mat(p, l.out_w)) + vec1(p, l.out_b));
        let pooled = residual
            .into_shape_with_order((n, z, d.model))
            .expect("token layout")
            .mean_axis(Axis(1))
            .expect("non-empty site axis");

        let pre_norm = pooled.dot(&mat(p, l.fc1_w)) + vec1(p, l.fc1_b);
        let (batch_mean, batch_var) = if train {
            let mean = pre_norm.mean_axis(Axis(0)).expect("non-empty batch");
            let var = pre_norm
                .axis_iter(Axis(0))
                .fold(Array1::<f32>::zeros(d.hidden), |acc, row| {
                    acc + (&row - &mean).mapv(|x| x * x)
                })
                / n as f32;
            (mean, var)
        } else {
            (
                Array1::from(self.running_mean.clone()),
                Array1::from(self.running_var.clone()),
            )
        };
        let inv_std = batch_var.mapv(|v| 1.0 / (v + self.bn_eps).sqrt());
        let normed = (&pre_norm - &batch_mean) * &inv_std;
        let pre_act = &normed * &vec1(p, l.gamma) + vec1(p, l.beta);
        let act = pre_act.mapv(|x| x.max(0.0));
        let scores = act.dot(&vec1(p, l.fc2_w)) + p[l.fc2_b.offset];

        (
            scores,
            Cache {
                emb,
                fused,
                tokens,
                qkv,
                attn,
                mixed,
                pooled,
                normed,
                inv_std,
                pre_act,
                act,
                batch_mean,
                batch_var,
            },
        )
    }

    /// Gradient of `sum_i d_scores[i] * score_i` with respect to all parameters,
    /// for a cache produced by a training-mode forward pass.
    pub fn backward(&self, batch: &Batch, cache: &Cache, d_scores: &Array1<f32>) -> Vec<f32> {
        let l = self.layout();
        let p = &self.params;
        let d = self.dims;
        let (n, z) = (batch.individuals, batch.sites);
        let tokens_n = n * z;
        let mut g = vec![0.0f32; l.total];

        // head
        add_into(&mut g, l.fc2_w, cache.act.t().dot(d_scores));
        g[l.fc2_b.offset] += d_scores.sum();
        let fc2_w = vec1(p, l.fc2_w);
        let mut d_pre_act = Array2::from_shape_fn((n, d.hidden), |(i, m)| d_scores[i] * fc2_w[m]);
        d_pre_act.zip_mut_with(&cache.pre_act, |dx, &x| {
            if x <= 0.0 {
                *dx = 0.0
            }
        });
        add_into(&mut g, l.gamma, (&d_pre_act * &cache.normed).sum_axis(Axis(0)));
        add_into(&mut g, l.beta, d_pre_act.sum_axis(Axis(0)));
        let d_normed = &d_pre_act * &vec1(p, l.gamma);
        let sum_dn = d_normed.sum_axis(Axis(0));
        let sum_dn_n = (&d_normed * &cache.normed).sum_axis(Axis(0));
        let nf = n as f32;
        let d_pre_norm = ((&d_normed * nf) - &sum_dn - &(&cache.normed * &sum_dn_n)) * &(&cache.inv_std / nf);

        add_into(&mut g, l.fc1_w, cache.pooled.t().dot(&d_pre_norm));
        add_into(&mut g, l.fc1_b, d_pre_norm.sum_axis(Axis(0)));
        let d_pooled = d_pre_norm.dot(&mat(p, l.fc1_w).t());

        // mean pooling spreads the gradient evenly over sites
        let inv_z = 1.0 / z as f32;
        let d_residual = Array2::from_shape_fn((tokens_n, d.model), |(t, m)| d_pooled[[t / z, m]] * inv_z);

        // residual attention block
        add_into(&mut g, l.out_w, cache.mixed.t().dot(&d_residual));
        add_into(&mut g, l.out_b, d_residual.sum_axis(Axis(0)));
        let d_mixed = d_residual.dot(&mat(p, l.out_w).t());
        let mut d_tokens = d_residual;

        let dh = d.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        let mut d_qkv = Array2::<f32>::zeros((tokens_n, 3 * d.model));
        for i in 0..n {
            let rows = i * z..(i + 1) * z;
            for h in 0..d.heads {
                let a = &cache.attn[i * d.heads + h];
                let (qc, kc, vc) = (h * dh, d.model + h * dh, 2 * d.model + h * dh);
                let q = cache.qkv.slice(s![rows.clone(), qc..qc + dh]);
                let k = cache.qkv.slice(s![rows.clone(), kc..kc + dh]);
                let v = cache.qkv.slice(s![rows.clone(), vc..vc + dh]);
                let d_out = d_mixed.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let d_a = d_out.dot(&v.t());
                d_qkv.slice_mut(s![rows.clone(), vc..vc + dh]).assign(&a.t().dot(&d_out));
                let mut d_s = a * &d_a;
                for (mut row, a_row) in d_s.rows_mut().into_iter().zip(a.rows()) {
                    let dot = row.sum();
                    row.zip_mut_with(&a_row, |x, &ai| *x -= ai * dot);
                }
                d_s *= scale;
                d_qkv.slice_mut(s![rows.clone(), qc..qc + dh]).assign(&d_s.dot(&k));
                d_qkv.slice_mut(s![rows.clone(), kc..kc + dh]).assign(&d_s.t().dot(&q));
            }
        }
        add_into(&mut g, l.qkv_w, cache.tokens.t().dot(&d_qkv));
        add_into(&mut g, l.qkv_b, d_qkv.sum_axis(Axis(0)));
        d_tokens += &d_qkv.dot(&mat(p, l.qkv_w).t());

        // lift and embeddings
        add_into(&mut g, l.lift_w, cache.fused.t().dot(&d_tokens));
        add_into(&mut g, l.lift_b, d_tokens.sum_axis(Axis(0)));
        let d_fused = d_tokens.dot(&mat(p, l.lift_w).t());
        let others = [(1, 2), (0, 2), (0, 1)];
        for (kind, &(a, b)) in others.iter().enumerate() {
            let d_emb = &d_fused * &cache.emb[a] * &cache.emb[b];
            let x = batch.inputs.column(kind);
            let dw: Vec<f32> = (0..d.embed)
                .map(|m| d_emb.column(m).iter().zip(x.iter()).map(|(g, x)| g * x).sum())
                .collect();
            let db = d_emb.sum_axis(Axis(0));
            let wb = Block {
                offset: l.emb_w.offset + kind * d.embed,
                rows: 1,
                cols: d.embed,
            };
            let bb = Block {
                offset: l.emb_b.offset + kind * d.embed,
                rows: 1,
                cols: d.embed,
            };
            add_into(&mut g, wb, dw);
            add_into(&mut g, bb, db);
        }
        g
    }
}

/// Adaptive-moment optimizer state over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [f32], grad: &[f32]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
