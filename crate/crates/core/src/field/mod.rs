//! The trainable photon field: position and direction hash grids, the raw
//! phase coefficient, and a ReLU MLP producing log-encoded radiance.
//!
//! All parameters live in one flat vector laid out as
//! `[position tables | direction tables | W0 b0 W1 b1 ... Wout bout]`, with
//! each weight matrix stored input-major (`W[k * outputs + j]`).

mod adam;
mod checkpoint;
mod hashgrid;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimator::{decode_log, EncodingConfig};
use crate::math::{Rgb, Vec3};
use crate::photon::PhaseSet;
use crate::rng::{self, uniform};
use crate::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use hashgrid::{HashGrid, HashGridConfig, Level};

/// Stabilizer in the relative squared error denominator.
pub const REL_EPS: f64 = 0.01;

/// Samples per work item in batched passes. Fixed so that reductions happen
/// in the same order whatever the thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_layers: u32,
    pub width: u32,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: 5,
            width: 64,
        }
    }
}

pub const OUTPUT_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FieldConfig {
    pub position: HashGridConfig,
    pub direction: HashGridConfig,
    pub mlp: MlpConfig,
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.position.validate()?;
        self.direction.validate()?;
        if self.mlp.hidden_layers == 0 || self.mlp.width == 0 {
            return Err(Error::config(
                "MLP needs at least one hidden layer of positive width",
            ));
        }
        Ok(())
    }
}

/// Training context stored with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMeta {
    pub phase_set: PhaseSet,
    pub encoding: EncodingConfig,
    pub steps_trained: u64,
}

/// Network input: every component in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldQuery {
    pub position: [f64; 3],
    /// `(theta / pi, (phi + pi) / 2pi)`.
    pub direction: [f64; 2],
    /// `(g + 1) / 2`.
    pub phase: f64,
}

impl FieldQuery {
    /// `omega` is the outgoing travel direction (towards the viewer).
    pub fn new(x: Vec3, omega: Vec3, g: f64) -> Self {
        FieldQuery {
            position: [
                x.x.clamp(0.0, 1.0),
                x.y.clamp(0.0, 1.0),
                x.z.clamp(0.0, 1.0),
            ],
            direction: omega.to_unit_spherical(),
            phase: ((g.clamp(-1.0, 1.0) + 1.0) * 0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    biases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotonField {
    config: FieldConfig,
    pub meta: FieldMeta,
    pos: HashGrid,
    dir: HashGrid,
    layers: Vec<Layer>,
    input_dim: usize,
    params: Vec<f64>,
}

/// Per-sample buffers reused across a chunk.
struct Work {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    /// `(parameter index of the entry's first feature, input offset, weight)`.
    corners: Vec<(u32, u32, f64)>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl Work {
    fn new(field: &PhotonField) -> Self {
        let width = field.config.mlp.width as usize;
        Work {
            input: vec![0.0; field.input_dim],
            acts: field.layers[..field.layers.len() - 1]
                .iter()
                .map(|l| vec![0.0; l.outputs])
                .collect(),
            corners: Vec::new(),
            delta: vec![0.0; width.max(field.input_dim)],
            next_delta: vec![0.0; width.max(field.input_dim)],
        }
    }
}

struct ChunkGrad {
    loss: f64,
    mlp: Vec<f64>,
    embeddings: Vec<(u32, f64)>,
}

impl PhotonField {
    /// Embeddings uniform in +-1e-4, weights uniform in `+-sqrt(6 / fan_in)`,
    /// biases zero.
    pub fn new(config: FieldConfig, meta: FieldMeta, seed: u64) -> Result<Self> {
        config.validate()?;
        meta.encoding.validate()?;
        let pos = HashGrid::new(config.position, 3)?;
        let dir = HashGrid::new(config.direction, 2)?;
        let input_dim = pos.config.output_dim() + dir.config.output_dim() + 1;
        let width = config.mlp.width as usize;
        let mut layers = Vec::new();
        let mut offset = pos.param_count() + dir.param_count();
        let mut fan_in = input_dim;
        for l in 0..=config.mlp.hidden_layers {
            let outputs = if l == config.mlp.hidden_layers {
                OUTPUT_DIM
            } else {
                width
            };
            layers.push(Layer {
                inputs: fan_in,
                outputs,
                weights: offset,
                biases: offset + fan_in * outputs,
            });
            offset += fan_in * outputs + outputs;
            fan_in = outputs;
        }
        let mut params = vec![0.0; offset];
        let mut rng = rng::stream(rng::derive_seed(seed, "field-init"), 0);
        let n_emb = pos.param_count() + dir.param_count();
        for p in &mut params[..n_emb] {
            *p = (2.0 * uniform(&mut rng) - 1.0) * 1e-4;
        }
        for layer in &layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for p in &mut params[layer.weights..layer.biases] {
                *p = (2.0 * uniform(&mut rng) - 1.0) * bound;
            }
        }
        Ok(PhotonField {
            config,
            meta,
            pos,
            dir,
            layers,
            input_dim,
            params,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn position_grid(&self) -> &HashGrid {
        &self.pos
    }

    pub fn direction_grid(&self) -> &HashGrid {
        &self.dir
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `pos tables + dir tables + sum over layers of (in * out + out)`.
    pub fn expected_param_count(config: &FieldConfig) -> Result<usize> {
        let pos = HashGrid::new(config.position, 3)?;
        let dir = HashGrid::new(config.direction, 2)?;
        let mut n = pos.param_count() + dir.param_count();
        let mut fan_in = pos.config.output_dim() + dir.config.output_dim() + 1;
        let width = config.mlp.width as usize;
        for _ in 0..config.mlp.hidden_layers {
            n += fan_in * width + width;
            fan_in = width;
        }
        Ok(n + fan_in * OUTPUT_DIM + OUTPUT_DIM)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter ranges: position tables, direction tables, MLP.
    pub fn param_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let a = self.pos.param_count();
        let b = a + self.dir.param_count();
        [0..a, a..b, b..self.params.len()]
    }

    /// Weight and bias ranges of every MLP layer, input layer first.
    pub fn layer_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        self.layers
            .iter()
            .map(|l| (l.weights..l.biases, l.biases..l.biases + l.outputs))
            .collect()
    }

    /// Zeroes the output layer so the field predicts 0 everywhere.
    pub fn zero_output_layer(&mut self) {
        let l = *self.layers.last().unwrap();
        self.params[l.weights..l.biases + l.outputs].fill(0.0);
    }

    fn encode_into(
        &self,
        q: &FieldQuery,
        input: &mut [f64],
        corners: Option<&mut Vec<(u32, u32, f64)>>,
    ) {
        let pf = self.pos.features();
        let df = self.dir.features();
        let dir_base = self.pos.param_count();
        let dir_in = self.pos.config.output_dim();
        input.fill(0.0);
        let params = &self.params;
        match corners {
            Some(corners) => {
                corners.clear();
                self.pos.for_each_corner(&q.position, |l, entry, w| {
                    let p = entry * pf;
                    let i = l * pf;
                    for f in 0..pf {
                        input[i + f] += w * params[p + f];
                    }
                    corners.push((p as u32, i as u32, w));
                });
                self.dir.for_each_corner(&q.direction, |l, entry, w| {
                    let p = dir_base + entry * df;
                    let i = dir_in + l * df;
                    for f in 0..df {
                        input[i + f] += w * params[p + f];
                    }
                    corners.push((p as u32, i as u32, w));
                });
            }
            None => {
                self.pos.for_each_corner(&q.position, |l, entry, w| {
                    let p = entry * pf;
                    let i = l * pf;
                    for f in 0..pf {
                        input[i + f] += w * params[p + f];
                    }
                });
                self.dir.for_each_corner(&q.direction, |l, entry, w| {
                    let p = dir_base + entry * df;
                    let i = dir_in + l * df;
                    for f in 0..df {
                        input[i + f] += w * params[p + f];
                    }
                });
            }
        }
        input[self.input_dim - 1] = q.phase;
    }

    /// `[position features | direction features | phase]`.
    pub fn encode_input(&self, q: &FieldQuery) -> Vec<f64> {
        let mut input = vec![0.0; self.input_dim];
        self.encode_into(q, &mut input, None);
        input
    }

    fn forward_work(&self, q: &FieldQuery, w: &mut Work, keep_corners: bool) -> [f64; OUTPUT_DIM] {
        let Work {
            input,
            acts,
            corners,
            ..
        } = w;
        self.encode_into(q, input, keep_corners.then_some(corners));
        let p = &self.params;
        let n_layers = self.layers.len();
        let mut out = [0.0; OUTPUT_DIM];
        for (li, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = acts.split_at_mut(li.min(n_layers - 1));
            let a_in: &[f64] = if li == 0 { input } else { &prev[li - 1] };
            let a_out: &mut [f64] = if li + 1 == n_layers {
                &mut out
            } else {
                &mut rest[0]
            };
            let o = layer.outputs;
            a_out.copy_from_slice(&p[layer.biases..layer.biases + o]);
            for (k, &x) in a_in.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &p[layer.weights + k * o..layer.weights + k * o + o];
                for (a, &wt) in a_out.iter_mut().zip(row) {
                    *a += x * wt;
                }
            }
            if li + 1 < n_layers {
                for a in a_out.iter_mut() {
                    *a = a.max(0.0);
                }
            }
        }
        out
    }

    /// Log-space outputs for a batch; bitwise equal to evaluating each query
    /// on its own.
    pub fn forward(&self, batch: &[FieldQuery]) -> Vec<[f64; OUTPUT_DIM]> {
        batch
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                let mut w = Work::new(self);
                chunk
                    .iter()
                    .map(|q| self.forward_work(q, &mut w, false))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn forward_one(&self, q: &FieldQuery) -> [f64; OUTPUT_DIM] {
        self.forward_work(q, &mut Work::new(self), false)
    }

    /// ReLU activation pattern of every hidden unit for every query.
    pub fn relu_mask(&self, batch: &[FieldQuery]) -> Vec<bool> {
        let mut w = Work::new(self);
        let mut mask = Vec::new();
        for q in batch {
            self.forward_work(q, &mut w, false);
            for a in &w.acts {
                mask.extend(a.iter().map(|&v| v > 0.0));
            }
        }
        mask
    }

    /// Decoded radiance for one query.
    pub fn infer_radiance(&self, x: Vec3, omega: Vec3, g: f64, cfg: &EncodingConfig) -> Rgb {
        decode_log(Rgb(self.forward_one(&FieldQuery::new(x, omega, g))), cfg)
    }

    pub fn infer_batch(&self, batch: &[FieldQuery], cfg: &EncodingConfig) -> Vec<Rgb> {
        self.forward(batch)
            .into_iter()
            .map(|o| decode_log(Rgb(o), cfg))
            .collect()
    }

    fn backward_work(
        &self,
        w: &mut Work,
        d_out: [f64; OUTPUT_DIM],
        mlp: &mut [f64],
        emb: &mut Vec<(u32, f64)>,
    ) {
        let mlp_base = self.param_ranges()[2].start;
        let p = &self.params;
        let n_layers = self.layers.len();
        w.delta[..OUTPUT_DIM].copy_from_slice(&d_out);
        for li in (0..n_layers).rev() {
            let layer = self.layers[li];
            let o = layer.outputs;
            let a_in: &[f64] = if li == 0 { &w.input } else { &w.acts[li - 1] };
            let delta = &w.delta[..o];
            let gw = layer.weights - mlp_base;
            for (k, &x) in a_in.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let g_row = &mut mlp[gw + k * o..gw + k * o + o];
                for (g, &d) in g_row.iter_mut().zip(delta) {
                    *g += x * d;
                }
            }
            let gb = layer.biases - mlp_base;
            for (g, &d) in mlp[gb..gb + o].iter_mut().zip(delta) {
                *g += d;
            }
            let next = &mut w.next_delta[..layer.inputs];
            for (k, nd) in next.iter_mut().enumerate() {
                // Hidden inputs with a == 0 are inactive ReLUs.
                if li > 0 && a_in[k] <= 0.0 {
                    *nd = 0.0;
                    continue;
                }
                let row = &p[layer.weights + k * o..layer.weights + k * o + o];
                let mut s = 0.0;
                for (&wt, &d) in row.iter().zip(delta) {
                    s += wt * d;
                }
                *nd = s;
            }
            std::mem::swap(&mut w.delta, &mut w.next_delta);
        }
        // w.delta now holds d loss / d input.
        let pf = self.pos.features();
        let df = self.dir.features();
        let n_pos_corners = self.pos.levels.len() * self.pos.corners_per_level();
        for (c, &(pidx, iidx, wt)) in w.corners.iter().enumerate() {
            let f = if c < n_pos_corners { pf } else { df };
            for j in 0..f {
                let g = wt * w.delta[iidx as usize + j];
                if g != 0.0 {
                    emb.push((pidx + j as u32, g));
                }
            }
        }
    }

    fn chunk_gradient(
        &self,
        queries: &[FieldQuery],
        targets: &[[f64; 3]],
        scale: f64,
    ) -> ChunkGrad {
        let mlp_len = self.param_ranges()[2].len();
        let mut out = ChunkGrad {
            loss: 0.0,
            mlp: vec![0.0; mlp_len],
            embeddings: Vec::new(),
        };
        let mut w = Work::new(self);
        for (q, t) in queries.iter().zip(targets) {
            let pred = self.forward_work(q, &mut w, true);
            let mut d_out = [0.0; OUTPUT_DIM];
            for c in 0..OUTPUT_DIM {
                let den = pred[c] * pred[c] + REL_EPS;
                let diff = pred[c] - t[c];
                out.loss += diff * diff / den;
                d_out[c] = 2.0 * diff / den * scale;
            }
            self.backward_work(&mut w, d_out, &mut out.mlp, &mut out.embeddings);
        }
        out
    }

    /// rMSE loss and its gradient accumulated into `grad` (length
    /// `param_count`). Embedding entries that received a gradient are appended
    /// to `touched` once; `seen` must be all-false on entry and is restored.
    fn accumulate_gradient(
        &self,
        queries: &[FieldQuery],
        targets: &[[f64; 3]],
        grad: &mut [f64],
        touched: &mut Vec<usize>,
        seen: &mut [bool],
    ) -> Result<f64> {
        if queries.len() != targets.len() {
            return Err(Error::input(format!(
                "{} queries but {} targets",
                queries.len(),
                targets.len()
            )));
        }
        if queries.is_empty() {
            return Err(Error::input("empty training batch"));
        }
        let scale = 1.0 / (OUTPUT_DIM * queries.len()) as f64;
        let chunks: Vec<ChunkGrad> = queries
            .par_chunks(CHUNK)
            .zip(targets.par_chunks(CHUNK))
            .map(|(q, t)| self.chunk_gradient(q, t, scale))
            .collect();
        let mlp_base = self.param_ranges()[2].start;
        let mut loss = 0.0;
        for chunk in &chunks {
            loss += chunk.loss;
            for (g, c) in grad[mlp_base..].iter_mut().zip(&chunk.mlp) {
                *g += c;
            }
            for &(i, g) in &chunk.embeddings {
                let i = i as usize;
                grad[i] += g;
                if !seen[i] {
                    seen[i] = true;
                    touched.push(i);
                }
            }
        }
        for &i in touched.iter() {
            seen[i] = false;
        }
        Ok(loss * scale)
    }

    /// Loss and dense gradient (mainly for checks; training uses sparse
    /// accumulation).
    pub fn loss_and_gradient(
        &self,
        queries: &[FieldQuery],
        targets: &[[f64; 3]],
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let mut seen = vec![false; self.param_ranges()[1].end];
        let loss =
            self.accumulate_gradient(queries, targets, &mut grad, &mut Vec::new(), &mut seen)?;
        Ok((loss, grad))
    }

    /// rMSE with the denominator taken from `reference` predictions.
    pub fn loss_with_denominator(
        &self,
        queries: &[FieldQuery],
        targets: &[[f64; 3]],
        reference: &[[f64; 3]],
    ) -> f64 {
        let pred = self.forward(queries);
        let mut sum = 0.0;
        for ((p, t), r) in pred.iter().zip(targets).zip(reference) {
            for c in 0..OUTPUT_DIM {
                let d = p[c] - t[c];
                sum += d * d / (r[c] * r[c] + REL_EPS);
            }
        }
        sum / (OUTPUT_DIM * queries.len()) as f64
    }

    pub fn loss(&self, queries: &[FieldQuery], targets: &[[f64; 3]]) -> f64 {
        let pred = self.forward(queries);
        self.loss_with_denominator(queries, targets, &pred)
    }

    /// One optimizer step; returns the loss before the update.
    pub fn train_step(
        &mut self,
        queries: &[FieldQuery],
        targets: &[[f64; 3]],
        adam: &mut AdamState,
    ) -> Result<f64> {
        if adam.m.len() != self.params.len() {
            return Err(Error::input("optimizer state does not match the field"));
        }
        let n_emb = self.param_ranges()[1].end;
        let mut scratch = std::mem::take(&mut adam.scratch);
        scratch.prepare(self.params.len(), n_emb);
        let loss = self.accumulate_gradient(
            queries,
            targets,
            &mut scratch.grad,
            &mut scratch.touched,
            &mut scratch.seen,
        );
        let loss = match loss {
            Ok(l) if l.is_finite() => l,
            Ok(l) => {
                scratch.clear(n_emb);
                adam.scratch = scratch;
                return Err(Error::NonFiniteLoss {
                    step: adam.step as usize,
                    loss: l,
                });
            }
            Err(e) => {
                scratch.clear(n_emb);
                adam.scratch = scratch;
                return Err(e);
            }
        };
        let n = self.params.len();
        adam.update(
            &mut self.params,
            &scratch.grad,
            scratch.touched.iter().copied().chain(n_emb..n),
        );
        scratch.clear(n_emb);
        adam.scratch = scratch;
        self.meta.steps_trained += 1;
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: adam.step as usize,
                loss,
            });
        }
        Ok(loss)
    }

    pub(crate) fn from_parts(
        config: FieldConfig,
        meta: FieldMeta,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut field = PhotonField::new(config, meta, 0)?;
        if params.len() != field.params.len() {
            return Err(Error::format(
                "field checkpoint",
                format!(
                    "{} parameters, config needs {}",
                    params.len(),
                    field.params.len()
                ),
            ));
        }
        field.params = params;
        Ok(field)
    }
}

/// Gradient buffers reused across steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct GradScratch {
    grad: Vec<f64>,
    touched: Vec<usize>,
    seen: Vec<bool>,
}

impl GradScratch {
    fn prepare(&mut self, n: usize, n_emb: usize) {
        if self.grad.len() != n {
            self.grad = vec![0.0; n];
            self.seen = vec![false; n_emb];
            self.touched.clear();
        }
    }

    fn clear(&mut self, n_emb: usize) {
        for &i in &self.touched {
            self.grad[i] = 0.0;
        }
        self.touched.clear();
        self.grad[n_emb..].fill(0.0);
    }
}
