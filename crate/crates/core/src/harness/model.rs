//! The network for every variant and its forward pass.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::disentangle::{
    disentangle_loss, encode_channel, reconstruction_loss, DisentangleWeights, ViewChannels, ViewEncoders,
};
use crate::error::{Error, Result};
use crate::fusion::{
    clamped_sigmoid, fuse_channel, fusion_weights, gate_fuse, masked_ce, total_loss, view_manifold_loss, ClassHeads,
    LossComponents, LossWeights,
};
use crate::labelgraph::LabelPrototypes;
use crate::layers::{Linear, Mlp};
use crate::numerics::{Matrix, ParamStore, RngStream, Tape, Var};

const GAT_SLOPE: f64 = 0.2;

/// Per-view feature extractors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Encoders {
    /// Shared and private channels with decoders.
    Dual(Vec<ViewEncoders>),
    /// One two-layer perceptron per view.
    Single(Vec<Mlp>),
}

/// How views are fused and classified.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Head {
    /// Label prototypes, per-view pseudo-predictions, manifold-weighted
    /// fusion. `view_heads` holds one head set per view and stream (shared
    /// streams first).
    Prototype {
        labels: LabelPrototypes,
        view_heads: Vec<ClassHeads>,
        output: ClassHeads,
    },
    /// Affine combination of the concatenated view representations and one
    /// affine classifier.
    Affine { fusion: Linear, classifier: Linear },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub encoders: Encoders,
    pub scorer: Option<Mlp>,
    pub head: Head,
    pub view_dims: Vec<usize>,
    pub classes: usize,
    pub dim: usize,
    pub loss_weights: LossWeights,
    pub disentangle_weights: DisentangleWeights,
}

/// Supervision for a training pass.
pub struct Targets<'a> {
    pub labels: &'a Matrix,
    pub mask: &'a Matrix,
}

/// Randomness and frozen choices for one pass.
pub enum Mode<'a> {
    /// Sampling noise and negative-pair shifts drawn from the stream.
    Train(&'a mut RngStream),
    /// Means instead of samples.
    Eval,
}

/// Scalar values of one pass, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub mce: f64,
    pub re: f64,
    pub pseudo: f64,
    /// Mean per-view manifold loss before the 0.05 scale.
    pub manifold: f64,
    pub dis: f64,
    pub jsd: f64,
    pub overlap: f64,
}

pub struct ForwardOutput {
    pub prediction: Var,
    pub loss: Option<Var>,
    pub values: LossValues,
    /// Fusion weights used, shared stream first (empty for the affine head).
    pub fusion_weights: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(store: &mut ParamStore, cfg: &TrainConfig, view_dims: &[usize], classes: usize, rng: &mut RngStream) -> Self {
        let (d, hidden) = (cfg.d, cfg.hidden);
        let encoders = if cfg.use_s2 {
            Encoders::Dual(
                view_dims
                    .iter()
                    .enumerate()
                    .map(|(v, &dv)| ViewEncoders::new(store, v, dv, hidden, d, rng))
                    .collect(),
            )
        } else {
            Encoders::Single(
                view_dims
                    .iter()
                    .enumerate()
                    .map(|(v, &dv)| Mlp::new(store, &format!("view{v}.encoder"), dv, hidden, d, rng))
                    .collect(),
            )
        };
        let scorer = cfg.use_s2.then(|| Mlp::new(store, "scorer", 2 * d, hidden, 1, rng));
        let streams = if cfg.use_s2 { 2 } else { 1 };
        let head = if cfg.use_s3 {
            let labels = LabelPrototypes::new(store, classes, d, cfg.heads, GAT_SLOPE, rng);
            let view_heads = (0..streams)
                .flat_map(|s| (0..view_dims.len()).map(move |v| (s, v)))
                .map(|(s, v)| {
                    let stream = if s == 0 { "shared" } else { "private" };
                    ClassHeads::new(store, &format!("view{v}.{stream}_heads"), classes, d, rng)
                })
                .collect();
            let output = ClassHeads::new(store, "output_heads", classes, d, rng);
            Head::Prototype {
                labels,
                view_heads,
                output,
            }
        } else {
            Head::Affine {
                fusion: Linear::new(store, "fusion", streams * view_dims.len() * d, d, rng),
                classifier: Linear::new(store, "classifier", d, classes, rng),
            }
        };
        Model {
            encoders,
            scorer,
            head,
            view_dims: view_dims.to_vec(),
            classes,
            dim: d,
            loss_weights: cfg.loss_weights(),
            disentangle_weights: cfg.disentangle_weights(),
        }
    }

    /// One pass over `inputs` (one matrix per view, same rows). With
    /// `targets` the objective is assembled as well. `graph_mask` is the
    /// label neighborhood mask. `frozen` replaces the manifold-derived fusion
    /// weights, which otherwise come from the current pass.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Matrix],
        graph_mask: &Matrix,
        targets: Option<Targets<'_>>,
        mut mode: Mode<'_>,
        frozen: Option<&[Vec<f64>]>,
    ) -> Result<ForwardOutput> {
        if inputs.len() != self.view_dims.len() {
            return Err(Error::shape("model", format!("{} inputs for {} views", inputs.len(), self.view_dims.len())));
        }
        let n = inputs[0].rows();
        for (x, &dv) in inputs.iter().zip(&self.view_dims) {
            if x.shape() != (n, dv) {
                return Err(Error::shape("model", format!("view input {:?}, expected ({n}, {dv})", x.shape())));
            }
        }
        let (n_views, d) = (inputs.len(), self.dim);
        let xs: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
        let mut values = LossValues::default();

        // per stream, per view representations
        let mut streams: Vec<Vec<Var>> = Vec::new();
        let mut re = None;
        let mut dis = None;
        match &self.encoders {
            Encoders::Dual(encs) => {
                let mut channels = Vec::with_capacity(n_views);
                for (enc, &x) in encs.iter().zip(&xs) {
                    let (eps_s, eps_p) = match &mut mode {
                        Mode::Train(rng) => (Some(rng.normal_matrix(n, d)), Some(rng.normal_matrix(n, d))),
                        Mode::Eval => (None, None),
                    };
                    let shared = encode_channel(tape, store, &enc.shared, x, eps_s.as_ref())?;
                    let private = encode_channel(tape, store, &enc.private, x, eps_p.as_ref())?;
                    channels.push(ViewChannels { shared, private });
                }
                streams.push(channels.iter().map(|c| c.shared.fused).collect());
                streams.push(channels.iter().map(|c| c.private.fused).collect());
                if targets.is_some() {
                    let r = reconstruction_loss(tape, store, encs, &channels, &xs)?;
                    values.re = tape.scalar(r);
                    re = Some(r);
                    if let (Mode::Train(rng), Some(scorer)) = (&mut mode, &self.scorer) {
                        if n >= 2 {
                            let terms = disentangle_loss(tape, store, &channels, scorer, self.disentangle_weights, rng)?;
                            values.dis = tape.scalar(terms.loss);
                            values.jsd = terms.jsd_mean;
                            values.overlap = terms.overlap_mean;
                            dis = Some(terms.loss);
                        }
                    }
                }
            }
            Encoders::Single(mlps) => {
                let reps = mlps
                    .iter()
                    .zip(&xs)
                    .map(|(m, &x)| m.forward(tape, store, x))
                    .collect::<Result<Vec<_>>>()?;
                streams.push(reps);
            }
        }

        let mut pseudo = Vec::new();
        let mut manifold = Vec::new();
        let mut used_weights = Vec::new();
        let prediction = match &self.head {
            Head::Prototype {
                labels,
                view_heads,
                output,
            } => {
                let noise = match &mut mode {
                    Mode::Train(rng) => Some(rng.normal_matrix(self.classes, d)),
                    Mode::Eval => None,
                };
                let l = labels.forward(tape, store, graph_mask, noise.as_ref())?.embeddings;
                let mut fused = Vec::with_capacity(streams.len());
                for (s, reps) in streams.iter().enumerate() {
                    let mut losses = Vec::with_capacity(n_views);
                    for (v, &z) in reps.iter().enumerate() {
                        let p = view_heads[s * n_views + v].predict(tape, store, l, z)?;
                        let m = view_manifold_loss(tape, z, p)?;
                        losses.push(tape.scalar(m));
                        manifold.push(m);
                        if let Some(t) = &targets {
                            pseudo.push(masked_ce(tape, p, t.labels, t.mask)?);
                        }
                    }
                    let w = match frozen {
                        Some(f) => f[s].clone(),
                        None => fusion_weights(&losses)?,
                    };
                    fused.push(fuse_channel(tape, reps, &w)?);
                    used_weights.push(w);
                }
                let z = if fused.len() == 2 {
                    gate_fuse(tape, fused[0], fused[1])?
                } else {
                    fused[0]
                };
                output.predict(tape, store, l, z)?
            }
            Head::Affine { fusion, classifier } => {
                let mut all = streams.concat().into_iter();
                let mut cat = all.next().ok_or_else(|| Error::invalid("model has no views"))?;
                for z in all {
                    cat = tape.concat_cols(cat, z)?;
                }
                let z = fusion.forward(tape, store, cat)?;
                let logits = classifier.forward(tape, store, z)?;
                clamped_sigmoid(tape, logits)?
            }
        };

        let loss = match &targets {
            Some(t) => {
                let mce = masked_ce(tape, prediction, t.labels, t.mask)?;
                values.mce = tape.scalar(mce);
                if !pseudo.is_empty() {
                    values.pseudo = pseudo.iter().map(|&p| tape.scalar(p)).sum::<f64>() / pseudo.len() as f64;
                }
                if !manifold.is_empty() {
                    values.manifold = manifold.iter().map(|&m| tape.scalar(m)).sum::<f64>() / manifold.len() as f64;
                }
                let parts = LossComponents {
                    mce,
                    re,
                    pseudo,
                    manifold,
                    dis,
                };
                let total = total_loss(tape, &parts, self.loss_weights)?;
                values.total = tape.scalar(total);
                Some(total)
            }
            None => None,
        };
        Ok(ForwardOutput {
            prediction,
            loss,
            values,
            fusion_weights: used_weights,
        })
    }

    /// Class probabilities for `inputs` in evaluation mode.
    pub fn predict(&self, store: &ParamStore, inputs: &[Matrix], graph_mask: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, inputs, graph_mask, None, Mode::Eval, None)?;
        Ok(tape.value(out.prediction).clone())
    }
}
