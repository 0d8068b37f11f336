//! The keypoint-conditioned occupancy model: learnable canonical tokens,
//! a keypoint encoder, a cascade of three attention stages (state, object,
//! voxel), and a sigmoid occupancy head.
//!
//! Stage widths follow the config: tokens enter at `token_dim` (d1), the
//! state stage runs at `state_dim` (d2), the object and voxel stages at
//! `object_dim` (d3). Every attention block is single-head post-norm:
//! `x = LN(x + attn)`, `x = LN(x + mlp)`.

pub mod checkpoint;
pub mod infer;
pub mod train;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
};
pub use train::{train, TrainConfig, TrainReport};

use nalgebra::Point3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Aabb;
use crate::numerics::{Graph, ParamSet, Tensor, Var};

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;
/// MLP hidden width multiplier.
pub const MLP_MULT: usize = 4;

/// Architecture hyperparameters. `layers` is shared by all three stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Canonical token count (l1).
    pub tokens: usize,
    /// Token embedding width (d1).
    pub token_dim: usize,
    /// State-stage width (d2).
    pub state_dim: usize,
    /// Object/voxel-stage width (d3).
    pub object_dim: usize,
    /// Attention blocks per stage (L).
    pub layers: usize,
    /// Sinusoidal frequencies per axis (F); encodings are 6F wide.
    pub pe_frequencies: usize,
    /// Keypoint count (l2).
    pub keypoints: usize,
    /// Workspace bounds used for coordinate normalization.
    pub bounds: Aabb,
    /// Grid resolution the model was trained against (recorded for eval).
    pub train_res: usize,
}

impl ArchConfig {
    /// Defaults with the bounds/keypoints/resolution a dataset dictates.
    pub fn with_defaults(bounds: Aabb, keypoints: usize, train_res: usize) -> Self {
        ArchConfig {
            tokens: 64,
            token_dim: 64,
            state_dim: 128,
            object_dim: 128,
            layers: 2,
            pe_frequencies: 8,
            keypoints,
            bounds,
            train_res,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.tokens, "tokens"),
            (self.token_dim, "token_dim"),
            (self.state_dim, "state_dim"),
            (self.object_dim, "object_dim"),
            (self.layers, "layers"),
            (self.pe_frequencies, "pe_frequencies"),
            (self.keypoints, "keypoints"),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        for (v, name) in [
            (self.token_dim, "token_dim"),
            (self.state_dim, "state_dim"),
            (self.object_dim, "object_dim"),
        ] {
            if v % 2 != 0 {
                return Err(Error::config(format!("{name} must be even, got {v}")));
            }
        }
        Ok(())
    }

    /// Width of a positional encoding row.
    pub fn pe_width(&self) -> usize {
        6 * self.pe_frequencies
    }
}

/// Sinusoidal features of normalized coordinates: per axis, F pairs
/// `(sin(2^f·π·x), cos(2^f·π·x))`.
pub fn positional_encoding(norm: &[[f64; 3]], freqs: usize) -> Vec<f64> {
    let width = 6 * freqs;
    let mut out = vec![0.0; norm.len() * width];
    for (r, p) in norm.iter().enumerate() {
        let row = &mut out[r * width..(r + 1) * width];
        for a in 0..3 {
            for f in 0..freqs {
                let arg = (1u64 << f) as f64 * std::f64::consts::PI * p[a];
                row[a * 2 * freqs + 2 * f] = arg.sin();
                row[a * 2 * freqs + 2 * f + 1] = arg.cos();
            }
        }
    }
    out
}

/// Model = architecture + named parameters.
#[derive(Debug, Clone)]
pub struct WorldStringModel {
    config: ArchConfig,
    params: ParamSet,
}

/// Graph leaves for every parameter, in param-set order.
pub struct GraphBinding {
    vars: Vec<Var>,
    names: Vec<String>,
}

impl GraphBinding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.names.iter().position(|n| n == name).map(|i| self.vars[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Occupancy predictions plus the final voxel-stage attention weights.
#[derive(Debug)]
pub struct ForwardNodes {
    /// Probabilities, shape [n, 1].
    pub probs: Var,
    /// Final cross-attention weights, shape [n, tokens].
    pub attention: Var,
}

impl WorldStringModel {
    /// Seeded initialization: embeddings ~ N(0, 1), projections
    /// Xavier-uniform, biases zero, layer-norm gains one.
    pub fn init(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = config.clone();
        let (l1, d1, d2, d3) = (c.tokens, c.token_dim, c.state_dim, c.object_dim);

        // Unit-scale embeddings: tokens must be mutually distinct at init
        // or state-stage attention starts uniform and every token carries
        // the same pose signal, which stalls conditioning.
        params.insert("omega0", normal_tensor(vec![l1, d1], 1.0, &mut rng)?)?;
        params.insert(
            "kp.id_embed",
            normal_tensor(vec![c.keypoints, d1], 1.0, &mut rng)?,
        )?;
        params.insert("kp.proj.w", xavier_tensor(c.pe_width() + d1, d1, &mut rng)?)?;
        params.insert("kp.proj.b", Tensor::zeros(vec![d1]))?;

        params.insert("state.in.w", xavier_tensor(d1, d2, &mut rng)?)?;
        params.insert("state.in.b", Tensor::zeros(vec![d2]))?;
        for i in 0..c.layers {
            insert_block(&mut params, &format!("state.{i}"), d2, d1, &mut rng)?;
        }

        if d2 != d3 {
            params.insert("object.in.w", xavier_tensor(d2, d3, &mut rng)?)?;
            params.insert("object.in.b", Tensor::zeros(vec![d3]))?;
        }
        for i in 0..c.layers {
            insert_block(&mut params, &format!("object.{i}"), d3, d3, &mut rng)?;
        }

        params.insert("voxel.in.w", xavier_tensor(c.pe_width(), d3, &mut rng)?)?;
        params.insert("voxel.in.b", Tensor::zeros(vec![d3]))?;
        for i in 0..c.layers {
            insert_block(&mut params, &format!("voxel.{i}"), d3, d3, &mut rng)?;
        }

        params.insert("head.w", xavier_tensor(d3, 1, &mut rng)?)?;
        params.insert("head.b", Tensor::zeros(vec![1]))?;

        Ok(WorldStringModel { config, params })
    }

    pub fn from_parts(config: ArchConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(WorldStringModel { config, params })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Insert every parameter into `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> GraphBinding {
        let mut vars = Vec::with_capacity(self.params.len());
        let mut names = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            vars.push(g.leaf(t.clone(), true));
            names.push(name.to_string());
        }
        GraphBinding { vars, names }
    }

    /// Map world keypoints into the normalized frame, clamping (with a
    /// warning) anything outside the workspace.
    pub fn normalize_keypoints(&self, keypoints: &[Point3<f64>]) -> Result<Vec<[f64; 3]>> {
        if keypoints.len() != self.config.keypoints {
            return Err(Error::dim(format!(
                "{} keypoints, model expects {}",
                keypoints.len(),
                self.config.keypoints
            )));
        }
        Ok(normalize_clamped(&self.config.bounds, keypoints))
    }

    /// Full differentiable forward pass on points already in the
    /// normalized frame (as produced by occupancy sampling).
    pub fn forward_on(
        &self,
        g: &mut Graph,
        binding: &GraphBinding,
        keypoints: &[Point3<f64>],
        points_norm: &[[f64; 3]],
    ) -> Result<ForwardNodes> {
        if points_norm.is_empty() {
            return Err(Error::dim("forward on an empty point batch"));
        }
        let c = &self.config;
        let p = |name: &str| -> Result<Var> {
            binding
                .var(name)
                .ok_or_else(|| Error::state(format!("parameter '{name}' not bound")))
        };

        // Keypoint encoder.
        let kp_norm = self.normalize_keypoints(keypoints)?;
        let pe = Tensor::matrix(
            c.keypoints,
            c.pe_width(),
            positional_encoding(&kp_norm, c.pe_frequencies),
        )?;
        let pe = g.constant(pe);
        let cat = g.concat_cols(pe, p("kp.id_embed")?)?;
        let kw = g.matmul(cat, p("kp.proj.w")?)?;
        let kemb = g.add_row(kw, p("kp.proj.b")?)?;

        // State stage: tokens cross-attend to keypoints.
        let omega = p("omega0")?;
        let xin = g.matmul(omega, p("state.in.w")?)?;
        let mut x = g.add_row(xin, p("state.in.b")?)?;
        for i in 0..c.layers {
            x = attention_block(g, &format!("state.{i}"), x, kemb, &p)?.0;
        }

        // Object stage: self-attention over the state tokens.
        if c.state_dim != c.object_dim {
            let xo = g.matmul(x, p("object.in.w")?)?;
            x = g.add_row(xo, p("object.in.b")?)?;
        }
        for i in 0..c.layers {
            x = attention_block(g, &format!("object.{i}"), x, x, &p)?.0;
        }
        let z_obj = x;

        // Voxel stage: spatial queries cross-attend to object tokens.
        let qpe = Tensor::matrix(
            points_norm.len(),
            c.pe_width(),
            positional_encoding(points_norm, c.pe_frequencies),
        )?;
        let qpe = g.constant(qpe);
        let hin = g.matmul(qpe, p("voxel.in.w")?)?;
        let mut h = g.add_row(hin, p("voxel.in.b")?)?;
        let mut attn_last = None;
        for i in 0..c.layers {
            let (next, w) = attention_block(g, &format!("voxel.{i}"), h, z_obj, &p)?;
            h = next;
            attn_last = Some(w);
        }

        let logits = g.matmul(h, p("head.w")?)?;
        let logits = g.add_row(logits, p("head.b")?)?;
        let probs = g.sigmoid(logits);
        Ok(ForwardNodes {
            probs,
            attention: attn_last.expect("layers >= 1"),
        })
    }

    /// Differentiable forward pass over a batch of frames at once. All
    /// per-frame tensors stack along rows and attention runs block-
    /// diagonally, so the linear layers see one large matrix each.
    /// Every frame must supply the same number of query points; the
    /// returned probabilities stack frame-major, `[B·n, 1]`.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        binding: &GraphBinding,
        keypoints: &[&[Point3<f64>]],
        points_norm: &[&[[f64; 3]]],
    ) -> Result<ForwardNodes> {
        let frames = keypoints.len();
        if frames == 0 {
            return Err(Error::dim("forward_batch over zero frames"));
        }
        if points_norm.len() != frames {
            return Err(Error::dim("keypoint/point frame counts differ"));
        }
        let n = points_norm[0].len();
        if n == 0 || points_norm.iter().any(|p| p.len() != n) {
            return Err(Error::dim(
                "forward_batch needs the same nonzero point count per frame",
            ));
        }
        let c = &self.config;
        let p = |name: &str| -> Result<Var> {
            binding
                .var(name)
                .ok_or_else(|| Error::state(format!("parameter '{name}' not bound")))
        };

        // Keypoint encoder over the stacked frames.
        let mut kp_norm = Vec::with_capacity(frames * c.keypoints);
        for kps in keypoints {
            kp_norm.extend(self.normalize_keypoints(kps)?);
        }
        let pe = Tensor::matrix(
            frames * c.keypoints,
            c.pe_width(),
            positional_encoding(&kp_norm, c.pe_frequencies),
        )?;
        let pe = g.constant(pe);
        let id_tiled = g.tile_rows(p("kp.id_embed")?, frames)?;
        let cat = g.concat_cols(pe, id_tiled)?;
        let kw = g.matmul(cat, p("kp.proj.w")?)?;
        let kemb = g.add_row(kw, p("kp.proj.b")?)?;

        // State stage: per-frame token blocks cross-attend to their frame's
        // keypoints.
        let omega = g.tile_rows(p("omega0")?, frames)?;
        let xin = g.matmul(omega, p("state.in.w")?)?;
        let mut x = g.add_row(xin, p("state.in.b")?)?;
        for i in 0..c.layers {
            x = grouped_block(g, &format!("state.{i}"), x, kemb, frames, &p)?.0;
        }

        // Object stage: per-frame self-attention.
        if c.state_dim != c.object_dim {
            let xo = g.matmul(x, p("object.in.w")?)?;
            x = g.add_row(xo, p("object.in.b")?)?;
        }
        for i in 0..c.layers {
            x = grouped_block(g, &format!("object.{i}"), x, x, frames, &p)?.0;
        }
        let z_obj = x;

        // Voxel stage: stacked spatial queries attend to their frame's
        // object tokens.
        let mut flat_points = Vec::with_capacity(frames * n);
        for pts in points_norm {
            flat_points.extend_from_slice(pts);
        }
        let qpe = Tensor::matrix(
            frames * n,
            c.pe_width(),
            positional_encoding(&flat_points, c.pe_frequencies),
        )?;
        let qpe = g.constant(qpe);
        let hin = g.matmul(qpe, p("voxel.in.w")?)?;
        let mut h = g.add_row(hin, p("voxel.in.b")?)?;
        let mut attn_last = None;
        for i in 0..c.layers {
            let (next, w) = grouped_block(g, &format!("voxel.{i}"), h, z_obj, frames, &p)?;
            h = next;
            attn_last = Some(w);
        }
        let logits = g.matmul(h, p("head.w")?)?;
        let logits = g.add_row(logits, p("head.b")?)?;
        let probs = g.sigmoid(logits);
        Ok(ForwardNodes {
            probs,
            attention: attn_last.expect("layers >= 1"),
        })
    }

    /// Occupancy probabilities and final attention rows for world-space
    /// points, on the fast no-tape path. Empty input gives empty output.
    pub fn query_occupancy(
        &self,
        keypoints: &[Point3<f64>],
        points: &[Point3<f64>],
    ) -> Result<infer::QueryOutput> {
        let ctx = infer::InferCtx::new(self)?;
        let z_obj = ctx.object_embedding(keypoints)?;
        ctx.query(&z_obj, points)
    }
}

fn normal_tensor(shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| next_normal(rng) * std).collect();
    Tensor::new(shape, data)
}

fn xavier_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * a)
        .collect();
    Tensor::new(vec![rows, cols], data)
}

fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn insert_block(
    params: &mut ParamSet,
    prefix: &str,
    width: usize,
    kv_width: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    params.insert(format!("{prefix}.attn.wq"), xavier_tensor(width, width, rng)?)?;
    params.insert(format!("{prefix}.attn.wk"), xavier_tensor(kv_width, width, rng)?)?;
    params.insert(format!("{prefix}.attn.wv"), xavier_tensor(kv_width, width, rng)?)?;
    params.insert(format!("{prefix}.attn.wo"), xavier_tensor(width, width, rng)?)?;
    params.insert(format!("{prefix}.attn.bo"), Tensor::zeros(vec![width]))?;
    params.insert(format!("{prefix}.ln1.g"), ones(width))?;
    params.insert(format!("{prefix}.ln1.b"), Tensor::zeros(vec![width]))?;
    params.insert(
        format!("{prefix}.mlp.w1"),
        xavier_tensor(width, MLP_MULT * width, rng)?,
    )?;
    params.insert(format!("{prefix}.mlp.b1"), Tensor::zeros(vec![MLP_MULT * width]))?;
    params.insert(
        format!("{prefix}.mlp.w2"),
        xavier_tensor(MLP_MULT * width, width, rng)?,
    )?;
    params.insert(format!("{prefix}.mlp.b2"), Tensor::zeros(vec![width]))?;
    params.insert(format!("{prefix}.ln2.g"), ones(width))?;
    params.insert(format!("{prefix}.ln2.b"), Tensor::zeros(vec![width]))?;
    Ok(())
}

fn ones(n: usize) -> Tensor {
    Tensor::from_op(vec![n], vec![1.0; n])
}

/// One post-norm block: attention (queries from `x`, keys/values from
/// `kv`) then an MLP, each behind a residual and layer norm. Returns the
/// new activations and the attention weights.
fn attention_block(
    g: &mut Graph,
    prefix: &str,
    x: Var,
    kv: Var,
    p: &impl Fn(&str) -> Result<Var>,
) -> Result<(Var, Var)> {
    let q = g.matmul(x, p(&format!("{prefix}.attn.wq"))?)?;
    let k = g.matmul(kv, p(&format!("{prefix}.attn.wk"))?)?;
    let v = g.matmul(kv, p(&format!("{prefix}.attn.wv"))?)?;
    let (ctx, weights) = g.scaled_dot_attention(q, k, v)?;
    let ctx = g.matmul(ctx, p(&format!("{prefix}.attn.wo"))?)?;
    let ctx = g.add_row(ctx, p(&format!("{prefix}.attn.bo"))?)?;
    let sum = g.add(x, ctx)?;
    let x = g.layer_norm(
        sum,
        p(&format!("{prefix}.ln1.g"))?,
        p(&format!("{prefix}.ln1.b"))?,
        LN_EPS,
    )?;

    let h1 = g.matmul(x, p(&format!("{prefix}.mlp.w1"))?)?;
    let h1 = g.add_row(h1, p(&format!("{prefix}.mlp.b1"))?)?;
    let h1 = g.relu(h1);
    let h2 = g.matmul(h1, p(&format!("{prefix}.mlp.w2"))?)?;
    let h2 = g.add_row(h2, p(&format!("{prefix}.mlp.b2"))?)?;
    let sum2 = g.add(x, h2)?;
    let out = g.layer_norm(
        sum2,
        p(&format!("{prefix}.ln2.g"))?,
        p(&format!("{prefix}.ln2.b"))?,
        LN_EPS,
    )?;
    Ok((out, weights))
}

/// [`attention_block`] with block-diagonal attention over stacked frames.
fn grouped_block(
    g: &mut Graph,
    prefix: &str,
    x: Var,
    kv: Var,
    groups: usize,
    p: &impl Fn(&str) -> Result<Var>,
) -> Result<(Var, Var)> {
    let q = g.matmul(x, p(&format!("{prefix}.attn.wq"))?)?;
    let k = g.matmul(kv, p(&format!("{prefix}.attn.wk"))?)?;
    let v = g.matmul(kv, p(&format!("{prefix}.attn.wv"))?)?;
    let (ctx, weights) = g.grouped_attention(q, k, v, groups)?;
    let ctx = g.matmul(ctx, p(&format!("{prefix}.attn.wo"))?)?;
    let ctx = g.add_row(ctx, p(&format!("{prefix}.attn.bo"))?)?;
    let sum = g.add(x, ctx)?;
    let x = g.layer_norm(
        sum,
        p(&format!("{prefix}.ln1.g"))?,
        p(&format!("{prefix}.ln1.b"))?,
        LN_EPS,
    )?;
    let h1 = g.matmul(x, p(&format!("{prefix}.mlp.w1"))?)?;
    let h1 = g.add_row(h1, p(&format!("{prefix}.mlp.b1"))?)?;
    let h1 = g.relu(h1);
    let h2 = g.matmul(h1, p(&format!("{prefix}.mlp.w2"))?)?;
    let h2 = g.add_row(h2, p(&format!("{prefix}.mlp.b2"))?)?;
    let sum2 = g.add(x, h2)?;
    let out = g.layer_norm(
        sum2,
        p(&format!("{prefix}.ln2.g"))?,
        p(&format!("{prefix}.ln2.b"))?,
        LN_EPS,
    )?;
    Ok((out, weights))
}

/// Normalize world points to [-1,1]³, clamping strays with a warning.
pub(crate) fn normalize_clamped(bounds: &Aabb, points: &[Point3<f64>]) -> Vec<[f64; 3]> {
    let mut clamped = 0usize;
    let out = points
        .iter()
        .map(|p| {
            let mut n = bounds.normalize(p);
            for v in &mut n {
                if *v < -1.0 || *v > 1.0 {
                    *v = v.clamp(-1.0, 1.0);
                    clamped += 1;
                }
            }
            n
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} coordinates outside the workspace were clamped");
    }
    out
}
