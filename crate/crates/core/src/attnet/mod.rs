//! Single-head attention layer with a pluggable LayerNorm in front of it.
//!
//! ```text
//! x_i = embed[t_i] (+ pos[i])
//! h_i = layernorm(x_i)
//! s_ij = (h_i Q) . (h_j K) / sqrt(d)      = e_i . h_j,  e_i = h_i Q K^T / sqrt(d)
//! a_i = softmax_j(s_ij)                   (j > i masked when causal)
//! c_i = sum_j a_ij h_j V
//! logits_i = (h_i + c_i) head
//! ```
//!
//! `e_i` is the effective query: the vector whose plain dot product with a
//! normalized key gives the score. There is no feed-forward sublayer, no
//! dropout and a single head.

mod adam;
mod backward;
mod checkpoint;
mod gradcheck;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use backward::{backward, batch_backward};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use gradcheck::{grad_check, relative_error, GradCheckResult};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{angle_to_ones, layernorm, LayerNormVariant};
use crate::linalg::{dot, Mat};
use crate::selectability::KeySet;
use crate::{Error, Result};

/// Learnable tensors. Gradients and optimizer moments reuse this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `vocab x d`
    pub embed: Mat,
    /// `max_len x d`, absent when positions are disabled.
    pub pos: Option<Mat>,
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
    /// `d x k_out`
    pub head: Mat,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        let z = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        Params {
            embed: z(&other.embed),
            pos: other.pos.as_ref().map(z),
            query: z(&other.query),
            key: z(&other.key),
            value: z(&other.value),
            head: z(&other.head),
        }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        let mut v = vec![("embed", &self.embed)];
        if let Some(p) = &self.pos {
            v.push(("pos", p));
        }
        v.extend([
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("head", &self.head),
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        let mut v = vec![("embed", &mut self.embed)];
        if let Some(p) = &mut self.pos {
            v.push(("pos", p));
        }
        v.extend([
            ("query", &mut self.query),
            ("key", &mut self.key),
            ("value", &mut self.value),
            ("head", &mut self.head),
        ]);
        v
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, a) in self.tensors_mut() {
            a.scale(s);
        }
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.as_slice().len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub vocab: usize,
    pub d: usize,
    pub k_out: usize,
    /// Number of learned positions; `None` disables position embeddings.
    pub max_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnModel {
    pub params: Params,
    pub ln_variant: LayerNormVariant,
    pub causal: bool,
}

impl AttnModel {
    /// Gaussian initialization with standard deviation `init_std`.
    pub fn init(
        shape: ModelShape,
        ln_variant: LayerNormVariant,
        causal: bool,
        init_std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if shape.d < 2 || shape.vocab < 2 || shape.k_out < 1 {
            return Err(Error::Config(format!(
                "model needs d >= 2, vocab >= 2 and k_out >= 1, got {shape:?}"
            )));
        }
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::Config(format!("init_std {init_std}: {e}")))?;
        let mut draw = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| normal.sample(rng));
        let d = shape.d;
        let embed = draw(shape.vocab, d);
        let pos = shape.max_len.map(|l| draw(l, d));
        let query = draw(d, d);
        let key = draw(d, d);
        let value = draw(d, d);
        let head = draw(d, shape.k_out);
        Ok(AttnModel {
            params: Params {
                embed,
                pos,
                query,
                key,
                value,
                head,
            },
            ln_variant,
            causal,
        })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            vocab: self.params.embed.rows(),
            d: self.d(),
            k_out: self.params.head.cols(),
            max_len: self.params.pos.as_ref().map(Mat::rows),
        }
    }

    pub fn d(&self) -> usize {
        self.params.embed.cols()
    }

    pub fn vocab(&self) -> usize {
        self.params.embed.rows()
    }

    pub fn k_out(&self) -> usize {
        self.params.head.cols()
    }

    /// Raw inputs `x_i` for a token sequence.
    pub fn inputs(&self, tokens: &[usize]) -> Result<Mat> {
        let d = self.d();
        let vocab = self.vocab();
        if let Some(pos) = &self.params.pos {
            if tokens.len() > pos.rows() {
                return Err(Error::Precondition(format!(
                    "sequence of {} exceeds {} learned positions",
                    tokens.len(),
                    pos.rows()
                )));
            }
        }
        let mut x = Mat::zeros(tokens.len(), d);
        for (i, &t) in tokens.iter().enumerate() {
            if t >= vocab {
                return Err(Error::TokenOutOfRange { token: t, vocab });
            }
            let row = x.row_mut(i);
            row.copy_from_slice(self.params.embed.row(t));
            if let Some(pos) = &self.params.pos {
                for (r, p) in row.iter_mut().zip(pos.row(i)) {
                    *r += p;
                }
            }
        }
        Ok(x)
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardTrace> {
        if tokens.is_empty() {
            return Err(Error::Precondition("empty token sequence".into()));
        }
        let inputs = self.inputs(tokens)?;
        let len = tokens.len();
        let d = self.d();
        let normed_rows = inputs
            .iter_rows()
            .map(|x| layernorm(x, self.ln_variant))
            .collect::<Result<Vec<_>>>()?;
        let normed = Mat::from_rows(&normed_rows);
        let p = &self.params;
        let queries = normed.matmul(&p.query);
        let keys = normed.matmul(&p.key);
        let values = normed.matmul(&p.value);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let mut effective_queries = queries.matmul_t(&p.key);
        effective_queries.scale(inv_sqrt_d);

        let mut scores = queries.matmul_t(&keys);
        scores.scale(inv_sqrt_d);
        let mut attn = Mat::zeros(len, len);
        for i in 0..len {
            let visible = if self.causal { i + 1 } else { len };
            let row = &scores.row(i)[..visible];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            let out = attn.row_mut(i);
            for (o, &s) in out.iter_mut().zip(row) {
                *o = (s - m).exp();
                total += *o;
            }
            out[..visible].iter_mut().for_each(|o| *o /= total);
        }
        let context = attn.matmul(&values);
        let mut residual = normed.clone();
        residual.add_assign(&context);
        let logits = residual.matmul(&p.head);
        Ok(ForwardTrace {
            tokens: tokens.to_vec(),
            inputs,
            normed_inputs: normed,
            effective_queries,
            scores,
            attn_weights: attn,
            logits,
            queries,
            keys,
            values,
            residual,
        })
    }

    pub fn loss(&self, tokens: &[usize], labels: &[usize]) -> Result<f64> {
        let trace = self.forward(tokens)?;
        cross_entropy(&trace.logits, labels)
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        let trace = self.forward(tokens)?;
        Ok(trace.logits.iter_rows().map(argmax).collect())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Everything the forward pass computed for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    /// Raw inputs `x_i`.
    pub inputs: Mat,
    /// `h_i`, the keys entering the attention layer.
    pub normed_inputs: Mat,
    /// `h_i Q K^T / sqrt(d)`.
    pub effective_queries: Mat,
    /// Pre-softmax scores; masked entries are left as computed.
    pub scores: Mat,
    pub attn_weights: Mat,
    pub logits: Mat,
    pub(crate) queries: Mat,
    pub(crate) keys: Mat,
    pub(crate) values: Mat,
    pub(crate) residual: Mat,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Mean over positions of the effective query's angle to the ones vector.
    pub fn mean_query_angle(&self) -> Result<f64> {
        mean_query_angle(&self.effective_queries)
    }

    /// The normalized inputs, i.e. the vectors the attention layer scores.
    pub fn extract_keys(&self) -> KeySet {
        KeySet::from_mat(self.normed_inputs.clone()).expect("forward produced finite keys")
    }
}

pub fn mean_query_angle(effective_queries: &Mat) -> Result<f64> {
    if effective_queries.rows() == 0 {
        return Err(Error::Precondition("no positions".into()));
    }
    let mut total = 0.0;
    for row in effective_queries.iter_rows() {
        total += angle_to_ones(row)?;
    }
    Ok(total / effective_queries.rows() as f64)
}

/// Softmax of one row, shifted by the max for stability.
pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Mean over positions of `-log softmax(logits_i)[label_i]`.
pub fn cross_entropy(logits: &Mat, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.rows() {
        return Err(Error::DimensionMismatch {
            expected: logits.rows(),
            got: labels.len(),
        });
    }
    let classes = logits.cols();
    let mut total = 0.0;
    for (row, &y) in logits.iter_rows().zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Score of query position `i` against key position `j`, recomputed from
/// the effective query.
pub fn factorized_score(trace: &ForwardTrace, i: usize, j: usize) -> f64 {
    dot(trace.effective_queries.row(i), trace.normed_inputs.row(j))
}
