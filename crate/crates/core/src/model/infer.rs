//! No-tape inference path. Mirrors the graph forward pass kernel-for-
//! kernel (same ops, same order), so its outputs are bit-identical to the
//! differentiable path — asserted by tests.

use nalgebra::Point3;

use super::{normalize_clamped, positional_encoding, WorldStringModel, LN_EPS};
use crate::error::{Error, Result};
use crate::numerics::kernels;

/// Row-major matrix scratch.
#[derive(Debug, Clone)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn from(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Mat { rows, cols, data }
    }
}

/// Occupancy probabilities plus final attention rows ([n × tokens]).
#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub probs: Vec<f64>,
    pub attention: Vec<f64>,
    pub tokens: usize,
}

impl QueryOutput {
    pub fn attention_row(&self, i: usize) -> &[f64] {
        &self.attention[i * self.tokens..(i + 1) * self.tokens]
    }
}

/// Borrowed view of a model set up for fast repeated queries.
pub struct InferCtx<'a> {
    model: &'a WorldStringModel,
}

impl<'a> InferCtx<'a> {
    pub fn new(model: &'a WorldStringModel) -> Result<Self> {
        model.config().validate()?;
        Ok(InferCtx { model })
    }

    fn param(&self, name: &str) -> Result<&'a [f64]> {
        self.model
            .params()
            .get(name)
            .map(|t| t.data())
            .ok_or_else(|| Error::state(format!("missing parameter '{name}'")))
    }

    fn linear(&self, x: &Mat, w_name: &str, b_name: &str, out_cols: usize) -> Result<Mat> {
        let w = self.param(w_name)?;
        let b = self.param(b_name)?;
        let mut out = Mat::zeros(x.rows, out_cols);
        kernels::matmul(&x.data, w, x.rows, x.cols, out_cols, &mut out.data);
        for (i, v) in out.data.iter_mut().enumerate() {
            *v += b[i % out_cols];
        }
        Ok(out)
    }

    fn matmul_p(&self, x: &Mat, w_name: &str, out_cols: usize) -> Result<Mat> {
        let w = self.param(w_name)?;
        let mut out = Mat::zeros(x.rows, out_cols);
        kernels::matmul(&x.data, w, x.rows, x.cols, out_cols, &mut out.data);
        Ok(out)
    }

    /// Post-norm attention + MLP block; optionally reports the attention
    /// weight matrix ([x.rows × kv.rows]).
    fn block(
        &self,
        prefix: &str,
        x: Mat,
        kv: &Mat,
        mut weights_out: Option<&mut Mat>,
    ) -> Result<Mat> {
        let width = x.cols;
        let q = self.matmul_p(&x, &format!("{prefix}.attn.wq"), width)?;
        let k = self.matmul_p(kv, &format!("{prefix}.attn.wk"), width)?;
        let v = self.matmul_p(kv, &format!("{prefix}.attn.wv"), width)?;

        // Same kernel sequence as the graph implementation.
        let mut kt = Mat::zeros(k.cols, k.rows);
        kernels::transpose(&k.data, k.rows, k.cols, &mut kt.data);
        let mut scores = Mat::zeros(q.rows, kt.cols);
        kernels::matmul(&q.data, &kt.data, q.rows, q.cols, kt.cols, &mut scores.data);
        let scale = 1.0 / (width as f64).sqrt();
        for s in &mut scores.data {
            *s *= scale;
        }
        let mut weights = Mat::zeros(scores.rows, scores.cols);
        kernels::softmax_rows(&scores.data, scores.rows, scores.cols, &mut weights.data);
        if let Some(w) = weights_out.as_deref_mut() {
            *w = weights.clone();
        }
        let mut ctx = Mat::zeros(weights.rows, v.cols);
        kernels::matmul(&weights.data, &v.data, weights.rows, weights.cols, v.cols, &mut ctx.data);

        let ctx = self.linear(&ctx, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"), width)?;
        let mut sum = x;
        for (a, b) in sum.data.iter_mut().zip(&ctx.data) {
            *a += b;
        }
        let mut normed = Mat::zeros(sum.rows, sum.cols);
        kernels::layer_norm_rows(
            &sum.data,
            sum.rows,
            sum.cols,
            self.param(&format!("{prefix}.ln1.g"))?,
            self.param(&format!("{prefix}.ln1.b"))?,
            LN_EPS,
            &mut normed.data,
        );

        let mut h1 = self.linear(
            &normed,
            &format!("{prefix}.mlp.w1"),
            &format!("{prefix}.mlp.b1"),
            super::MLP_MULT * width,
        )?;
        for v in &mut h1.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let h2 = self.linear(&h1, &format!("{prefix}.mlp.w2"), &format!("{prefix}.mlp.b2"), width)?;
        let mut sum2 = normed;
        for (a, b) in sum2.data.iter_mut().zip(&h2.data) {
            *a += b;
        }
        let mut out = Mat::zeros(sum2.rows, sum2.cols);
        kernels::layer_norm_rows(
            &sum2.data,
            sum2.rows,
            sum2.cols,
            self.param(&format!("{prefix}.ln2.g"))?,
            self.param(&format!("{prefix}.ln2.b"))?,
            LN_EPS,
            &mut out.data,
        );
        Ok(out)
    }

    /// Run the keypoint encoder, state stage, and object stage once for a
    /// frame; the result feeds any number of `query` calls.
    pub fn object_embedding(&self, keypoints: &[Point3<f64>]) -> Result<Vec<f64>> {
        let c = self.model.config();
        let kp_norm = self.model.normalize_keypoints(keypoints)?;
        let pe = positional_encoding(&kp_norm, c.pe_frequencies);

        // concat(pe, id_embed) row-wise, then linear projection.
        let id = self.param("kp.id_embed")?;
        let pe_w = c.pe_width();
        let cat_w = pe_w + c.token_dim;
        let mut cat = Mat::zeros(c.keypoints, cat_w);
        for r in 0..c.keypoints {
            cat.data[r * cat_w..r * cat_w + pe_w]
                .copy_from_slice(&pe[r * pe_w..(r + 1) * pe_w]);
            cat.data[r * cat_w + pe_w..(r + 1) * cat_w]
                .copy_from_slice(&id[r * c.token_dim..(r + 1) * c.token_dim]);
        }
        let kemb = self.linear(&cat, "kp.proj.w", "kp.proj.b", c.token_dim)?;

        let omega = Mat::from(
            c.tokens,
            c.token_dim,
            self.param("omega0")?.to_vec(),
        );
        let mut x = self.linear(&omega, "state.in.w", "state.in.b", c.state_dim)?;
        for i in 0..c.layers {
            x = self.block(&format!("state.{i}"), x, &kemb, None)?;
        }
        if c.state_dim != c.object_dim {
            x = self.linear(&x, "object.in.w", "object.in.b", c.object_dim)?;
        }
        for i in 0..c.layers {
            let kv = x.clone();
            x = self.block(&format!("object.{i}"), x, &kv, None)?;
        }
        Ok(x.data)
    }

    /// Occupancy for world-space points given a frame's object embedding.
    pub fn query(&self, z_obj: &[f64], points: &[Point3<f64>]) -> Result<QueryOutput> {
        let norm = normalize_clamped(&self.model.config().bounds, points);
        self.query_normalized(z_obj, &norm)
    }

    /// Same, for points already in the normalized frame.
    pub fn query_normalized(&self, z_obj: &[f64], points_norm: &[[f64; 3]]) -> Result<QueryOutput> {
        let c = self.model.config();
        if z_obj.len() != c.tokens * c.object_dim {
            return Err(Error::dim(format!(
                "object embedding has {} values, expected {}",
                z_obj.len(),
                c.tokens * c.object_dim
            )));
        }
        if points_norm.is_empty() {
            return Ok(QueryOutput {
                probs: vec![],
                attention: vec![],
                tokens: c.tokens,
            });
        }
        let kv = Mat::from(c.tokens, c.object_dim, z_obj.to_vec());
        let pe = Mat::from(
            points_norm.len(),
            c.pe_width(),
            positional_encoding(points_norm, c.pe_frequencies),
        );
        let mut h = self.linear(&pe, "voxel.in.w", "voxel.in.b", c.object_dim)?;
        let mut attn = Mat::zeros(0, 0);
        for i in 0..c.layers {
            let keep = if i + 1 == c.layers { Some(&mut attn) } else { None };
            h = self.block(&format!("voxel.{i}"), h, &kv, keep)?;
        }
        let logits = self.linear(&h, "head.w", "head.b", 1)?;
        let probs = logits.data.iter().map(|&z| kernels::sigmoid(z)).collect();
        Ok(QueryOutput {
            probs,
            attention: attn.data,
            tokens: c.tokens,
        })
    }
}
