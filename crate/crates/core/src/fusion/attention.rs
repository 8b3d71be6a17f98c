//! Scaled dot-product and multi-head attention with explicit backward passes.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, xavier, Matrix, Parameters};

/// `softmax(Q K^T / sqrt(d_k)) V`. Returns `(output, weights)` with
/// `weights` of shape `q x m`.
pub fn scaled_dot_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
) -> Result<(Matrix, Matrix)> {
    if k.nrows() == 0 {
        return Err(Error::EmptyInput("attention over an empty key set"));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::Shape(format!(
            "keys have {} rows but values have {}",
            k.nrows(),
            v.nrows()
        )));
    }
    if q.ncols() != k.ncols() {
        return Err(Error::Shape(format!(
            "query {:?} and key {:?} widths differ",
            q.dim(),
            k.dim()
        )));
    }
    let scale = (q.ncols() as f64).sqrt();
    let scores = q.dot(&k.t()) / scale;
    let weights = softmax_rows(&scores);
    let out = weights.dot(&v);
    Ok((out, weights))
}

/// Gradients of [`scaled_dot_attention`] given its saved weights.
pub(crate) fn scaled_dot_attention_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    weights: &Matrix,
    d_out: ArrayView2<f64>,
) -> (Matrix, Matrix, Matrix) {
    let scale = (q.ncols() as f64).sqrt();
    let d_v = weights.t().dot(&d_out);
    let d_w = d_out.dot(&v.t());
    // softmax Jacobian applied row-wise: P * (dP - <dP, P>)
    let inner = (&d_w * weights).sum_axis(Axis(1)).insert_axis(Axis(1));
    let d_scores = weights * &(&d_w - &inner) / scale;
    let d_q = d_scores.dot(&k);
    let d_k = d_scores.t().dot(&q);
    (d_q, d_k, d_v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub n_heads: usize,
    pub model_dim: usize,
}

impl AttentionConfig {
    pub fn new(n_heads: usize, model_dim: usize) -> Result<Self> {
        let cfg = AttentionConfig { n_heads, model_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model dim {} must be a positive multiple of the head count {}",
                self.model_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }
}

/// Bias-free multi-head attention. Head `j` uses columns
/// `j*d_k .. (j+1)*d_k` of the query, key and value projections; the output
/// projection maps the concatenated heads back to `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub config: AttentionConfig,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

/// Values saved by the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MhaCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    qp: Matrix,
    kp: Matrix,
    vp: Matrix,
    concat: Matrix,
    weights: Vec<Matrix>,
}

impl MhaCache {
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }
}

impl MultiHeadAttention {
    pub fn new(config: AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        Ok(MultiHeadAttention {
            config,
            w_q: xavier(rng, d, d),
            w_k: xavier(rng, d, d),
            w_v: xavier(rng, d, d),
            w_o: xavier(rng, d, d),
        })
    }

    pub fn identity(config: AttentionConfig) -> Result<Self> {
        config.validate()?;
        let eye = Array2::eye(config.model_dim);
        Ok(MultiHeadAttention {
            config,
            w_q: eye.clone(),
            w_k: eye.clone(),
            w_v: eye.clone(),
            w_o: eye,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = Array2::zeros(self.w_q.raw_dim());
        MultiHeadAttention {
            config: self.config,
            w_q: z.clone(),
            w_k: z.clone(),
            w_v: z.clone(),
            w_o: z,
        }
    }

    fn check(&self, what: &str, m: &ArrayView2<f64>) -> Result<()> {
        if m.ncols() != self.config.model_dim {
            return Err(Error::Shape(format!(
                "{what} has shape {:?}, expected {} columns ({:?} projection)",
                m.dim(),
                self.config.model_dim,
                self.w_q.dim()
            )));
        }
        Ok(())
    }

    /// Returns the `q x d` output and the per-head `q x m` weights.
    pub fn forward(
        &self,
        q: ArrayView2<f64>,
        k: ArrayView2<f64>,
        v: ArrayView2<f64>,
    ) -> Result<(Matrix, Vec<Matrix>)> {
        let (out, cache) = self.forward_cached(q, k, v)?;
        Ok((out, cache.weights))
    }

    pub fn forward_cached(
        &self,
        q: ArrayView2<f64>,
        k: ArrayView2<f64>,
        v: ArrayView2<f64>,
    ) -> Result<(Matrix, MhaCache)> {
        self.check("query", &q)?;
        self.check("key", &k)?;
        self.check("value", &v)?;
        let qp = q.dot(&self.w_q);
        let kp = k.dot(&self.w_k);
        let vp = v.dot(&self.w_v);
        let dk = self.config.head_dim();
        let mut concat = Array2::zeros((q.nrows(), self.config.model_dim));
        let mut weights = Vec::with_capacity(self.config.n_heads);
        for j in 0..self.config.n_heads {
            let cols = s![.., j * dk..(j + 1) * dk];
            let (head, w) = scaled_dot_attention(qp.slice(cols), kp.slice(cols), vp.slice(cols))?;
            concat.slice_mut(cols).assign(&head);
            weights.push(w);
        }
        let out = concat.dot(&self.w_o);
        let cache = MhaCache {
            q: q.to_owned(),
            k: k.to_owned(),
            v: v.to_owned(),
            qp,
            kp,
            vp,
            concat,
            weights,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients into `grad`; returns `(dQ, dK, dV)`.
    pub fn backward(
        &self,
        cache: &MhaCache,
        d_out: ArrayView2<f64>,
        grad: &mut MultiHeadAttention,
    ) -> (Matrix, Matrix, Matrix) {
        grad.w_o += &cache.concat.t().dot(&d_out);
        let d_concat = d_out.dot(&self.w_o.t());
        let dk = self.config.head_dim();
        let mut d_qp = Array2::zeros(cache.qp.raw_dim());
        let mut d_kp = Array2::zeros(cache.kp.raw_dim());
        let mut d_vp = Array2::zeros(cache.vp.raw_dim());
        for (j, w) in cache.weights.iter().enumerate() {
            let cols = s![.., j * dk..(j + 1) * dk];
            let (gq, gk, gv) = scaled_dot_attention_backward(
                cache.qp.slice(cols),
                cache.kp.slice(cols),
                cache.vp.slice(cols),
                w,
                d_concat.slice(cols),
            );
            d_qp.slice_mut(cols).assign(&gq);
            d_kp.slice_mut(cols).assign(&gk);
            d_vp.slice_mut(cols).assign(&gv);
        }
        grad.w_q += &cache.q.t().dot(&d_qp);
        grad.w_k += &cache.k.t().dot(&d_kp);
        grad.w_v += &cache.v.t().dot(&d_vp);
        (
            d_qp.dot(&self.w_q.t()),
            d_kp.dot(&self.w_k.t()),
            d_vp.dot(&self.w_v.t()),
        )
    }
}

impl Parameters for MultiHeadAttention {
    fn params(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_q".into(), &self.w_q),
            ("w_k".into(), &self.w_k),
            ("w_v".into(), &self.w_v),
            ("w_o".into(), &self.w_o),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }
}
