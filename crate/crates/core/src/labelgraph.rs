//! Label prototypes: Gaussian label embeddings refined by graph attention
//! over the label co-occurrence graph.

use serde::{Deserialize, Serialize};

use crate::disentangle::{reparameterize, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::numerics::{Matrix, ParamId, ParamStore, RngStream, Tape, Var};

/// `Q[i,j]`: fraction of the observed positives of label `i` (over `rows`)
/// that are also observed positives of label `j`. Rows of labels with no
/// observed positive are zero.
pub fn cooccurrence(labels: &Matrix, mask: &Matrix, rows: &[usize]) -> Result<Matrix> {
    labels.expect_same_shape("cooccurrence", mask)?;
    let c = labels.cols();
    let mut counts = Matrix::zeros(c, c);
    let mut totals = vec![0.0; c];
    for &k in rows {
        let observed: Vec<f64> = (0..c).map(|j| labels[(k, j)] * mask[(k, j)]).collect();
        for i in 0..c {
            if observed[i] == 0.0 {
                continue;
            }
            totals[i] += observed[i];
            for j in 0..c {
                counts[(i, j)] += observed[i] * observed[j];
            }
        }
    }
    for i in 0..c {
        if totals[i] > 0.0 {
            counts.row_mut(i).iter_mut().for_each(|q| *q /= totals[i]);
        }
    }
    Ok(counts)
}

/// Attention mask over label neighborhoods: `Q[i,j] > 0`, plus a self-loop
/// for any label whose neighborhood would otherwise be empty.
pub fn neighborhood_mask(q: &Matrix) -> Matrix {
    let c = q.rows();
    let mut mask = q.map(|x| f64::from(x > 0.0));
    for i in 0..c {
        if mask.row(i).iter().all(|&m| m == 0.0) {
            mask[(i, i)] = 1.0;
        }
    }
    mask
}

/// Single-layer multi-head graph attention.
///
/// Attention logits are `LeakyReLU(a · [W̄ z_i ⊕ W̄ z_j])`, normalized over the
/// neighborhood of `i`; each head `k` aggregates `W^k z_j` with those weights
/// and the heads are averaged before a final LeakyReLU. `a` and `W̄` are
/// shared by all heads, so every head uses the same coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Gat {
    /// `2d x 1`: the first `d` rows score the source, the rest the neighbor.
    pub attention: ParamId,
    pub projection: ParamId,
    pub heads: Vec<ParamId>,
    pub dim: usize,
    pub slope: f64,
}

/// Tape handles from one attention pass.
#[derive(Clone, Copy, Debug)]
pub struct GatOutput {
    pub coefficients: Var,
    pub output: Var,
}

impl Gat {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, slope: f64, rng: &mut RngStream) -> Self {
        let attention = store.add_uniform(format!("{name}.a"), 2 * dim, 1, 2 * dim, rng);
        let projection = store.add_uniform(format!("{name}.w_bar"), dim, dim, dim, rng);
        let heads = (0..heads)
            .map(|k| store.add_uniform(format!("{name}.head{k}"), dim, dim, dim, rng))
            .collect();
        Gat {
            attention,
            projection,
            heads,
            dim,
            slope,
        }
    }

    /// Refines the rows of `z` (`C x d`). `mask` is the neighborhood mask
    /// from [`neighborhood_mask`].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, mask: &Matrix) -> Result<GatOutput> {
        let (c, d) = tape.shape(z);
        if d != self.dim || mask.shape() != (c, c) {
            return Err(Error::shape("gat", format!("input {c}x{d}, mask {:?}", mask.shape())));
        }
        let a = tape.param(store, self.attention);
        let w_bar = tape.param(store, self.projection);
        let src: Vec<usize> = (0..d).collect();
        let dst: Vec<usize> = (d..2 * d).collect();
        let a_src = tape.select_rows(a, &src)?;
        let a_dst = tape.select_rows(a, &dst)?;
        let h = tape.matmul_nt(z, w_bar)?;
        let s_src = tape.matmul(h, a_src)?;
        let s_dst = tape.matmul(h, a_dst)?;
        let logits = tape.outer_add(s_src, s_dst)?;
        let logits = tape.leaky_relu(logits, self.slope)?;
        let alpha = tape.masked_softmax(logits, mask)?;

        let mut sum: Option<Var> = None;
        for &head in &self.heads {
            let w = tape.param(store, head);
            let msg = tape.matmul_nt(z, w)?;
            let agg = tape.matmul(alpha, msg)?;
            sum = Some(match sum {
                Some(s) => tape.add(s, agg)?,
                None => agg,
            });
        }
        let sum = sum.ok_or_else(|| Error::invalid("graph attention needs at least one head"))?;
        let mean = tape.scale(sum, 1.0 / self.heads.len() as f64)?;
        let output = tape.leaky_relu(mean, self.slope)?;
        Ok(GatOutput {
            coefficients: alpha,
            output,
        })
    }
}

/// Learnable label seeds, distribution encoders, and the graph attention
/// layer that refines them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelPrototypes {
    /// `C x C`, one seed per row, initialized to the identity.
    pub seeds: ParamId,
    pub mean: Linear,
    pub variance: Linear,
    pub gat: Gat,
    pub labels: usize,
}

/// Tape handles for one pass over the label prototypes.
#[derive(Clone, Copy, Debug)]
pub struct LabelOutput {
    pub mean: Var,
    pub variance: Var,
    pub refined_mean: Var,
    pub refined_variance: Var,
    pub mean_attention: Var,
    pub variance_attention: Var,
    /// `C x d` embeddings `l`.
    pub embeddings: Var,
}

impl LabelPrototypes {
    pub fn new(store: &mut ParamStore, labels: usize, dim: usize, heads: usize, slope: f64, rng: &mut RngStream) -> Self {
        LabelPrototypes {
            seeds: store.add("labels.seeds", Matrix::identity(labels)),
            mean: Linear::new(store, "labels.mu", labels, dim, rng),
            variance: Linear::new(store, "labels.var", labels, dim, rng),
            gat: Gat::new(store, "labels.gat", dim, heads, slope, rng),
            labels,
        }
    }

    /// Encodes the seeds, refines mean and variance with separate attention
    /// passes through the same layer, and samples embeddings. `noise` is the
    /// `C x d` standard-normal draw; `None` returns the refined means.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mask: &Matrix, noise: Option<&Matrix>) -> Result<LabelOutput> {
        let b = tape.param(store, self.seeds);
        let mean = self.mean.forward(tape, store, b)?;
        let raw = self.variance.forward(tape, store, b)?;
        let variance = tape.softplus(raw)?;
        let variance = tape.add_scalar(variance, VARIANCE_FLOOR)?;
        let rm = self.gat.forward(tape, store, mean, mask)?;
        let rv = self.gat.forward(tape, store, variance, mask)?;
        let refined_variance = tape.softplus(rv.output)?;
        let refined_variance = tape.add_scalar(refined_variance, VARIANCE_FLOOR)?;
        let embeddings = sample_label_embeddings(tape, rm.output, refined_variance, noise)?;
        Ok(LabelOutput {
            mean,
            variance,
            refined_mean: rm.output,
            refined_variance,
            mean_attention: rm.coefficients,
            variance_attention: rv.coefficients,
            embeddings,
        })
    }
}

/// `l = μ′ + ε ⊙ √σ′²` in training, `l = μ′` when `noise` is `None`.
pub fn sample_label_embeddings(tape: &mut Tape, mean: Var, variance: Var, noise: Option<&Matrix>) -> Result<Var> {
    match noise {
        Some(eps) => reparameterize(tape, mean, variance, eps),
        None => Ok(mean),
    }
}
