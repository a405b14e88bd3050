//! Label-specific features, pseudo-predictions, view fusion and the training
//! objective.
//!
//! The label-specific feature of sample `i` for class `c` is
//! `σ(l_c) ⊙ z_i`, and class `c` is scored by its own affine head. On the
//! tape the two steps are folded together: with head weights `W` (`C x d`),
//! `logit[i,c] = z_i · (W_c ⊙ σ(l_c)) + b_c`, which never builds the
//! `N x C x d` tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, ParamId, ParamStore, RngStream, Tape, Var};

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-7;
/// Smallest manifold loss used when forming fusion weights.
pub const FUSION_FLOOR: f64 = 1e-8;
/// Scale applied to the mean manifold loss in the objective.
pub const MANIFOLD_SCALE: f64 = 0.05;

/// One affine head per class: row `c` of `weight` and entry `c` of `bias`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassHeads {
    pub weight: ParamId,
    pub bias: ParamId,
    pub classes: usize,
    pub dim: usize,
}

impl ClassHeads {
    pub fn new(store: &mut ParamStore, name: &str, classes: usize, dim: usize, rng: &mut RngStream) -> Self {
        ClassHeads {
            weight: store.add_uniform(format!("{name}.weight"), classes, dim, dim, rng),
            bias: store.add_uniform(format!("{name}.bias"), 1, classes, dim, rng),
            classes,
            dim,
        }
    }

    /// `N x C` logits of the label-specific features built from `labels`
    /// (`C x d`) and `z` (`N x d`).
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, labels: Var, z: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let gate = tape.sigmoid(labels)?;
        let gated = tape.mul(w, gate)?;
        let logits = tape.matmul_nt(z, gated)?;
        tape.add_row(logits, b)
    }

    /// Clamped class probabilities.
    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, labels: Var, z: Var) -> Result<Var> {
        let logits = self.logits(tape, store, labels, z)?;
        clamped_sigmoid(tape, logits)
    }
}

pub fn clamped_sigmoid(tape: &mut Tape, logits: Var) -> Result<Var> {
    let p = tape.sigmoid(logits)?;
    tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `features[i]` is the `C x d` matrix whose row `c` is `σ(l_c) ⊙ z_i`.
pub fn label_specific_features(labels: &Matrix, z: &Matrix) -> Result<Vec<Matrix>> {
    if labels.cols() != z.cols() {
        return Err(Error::shape(
            "label_specific_features",
            format!("labels {:?} vs representations {:?}", labels.shape(), z.shape()),
        ));
    }
    let gate = labels.map(sigmoid);
    Ok((0..z.rows())
        .map(|i| Matrix::from_fn(labels.rows(), labels.cols(), |c, k| gate[(c, k)] * z[(i, k)]))
        .collect())
}

/// Applies head `c` to `features[i]` row `c` and squashes to a clamped
/// probability.
pub fn pseudo_predict(features: &[Matrix], weight: &Matrix, bias: &Matrix) -> Result<Matrix> {
    let (c, d) = weight.shape();
    if bias.shape() != (1, c) || features.iter().any(|f| f.shape() != (c, d)) {
        return Err(Error::shape("pseudo_predict", "features and heads disagree"));
    }
    Ok(Matrix::from_fn(features.len(), c, |i, j| {
        let logit = crate::numerics::dot(features[i].row(j), weight.row(j)) + bias[(0, j)];
        sigmoid(logit).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }))
}

/// Manifold-consistency loss between a representation and its
/// pseudo-prediction, both L2-normalized by row first.
pub fn view_manifold_loss(tape: &mut Tape, z: Var, p: Var) -> Result<Var> {
    let zn = tape.normalize_rows(z)?;
    let pn = tape.normalize_rows(p)?;
    tape.manifold_loss(zn, pn)
}

/// `w_v ∝ 1 / max(L_v, 1e-8)`, normalized to sum to one.
pub fn fusion_weights(losses: &[f64]) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::invalid("fusion needs at least one view"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Divergence {
            op: "fusion weights".into(),
        });
    }
    let inv: Vec<f64> = losses.iter().map(|&l| 1.0 / l.max(FUSION_FLOOR)).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|w| w / total).collect())
}

/// `Σ_v w_v Z^(v)` with constant weights.
pub fn fuse_channel(tape: &mut Tape, reps: &[Var], weights: &[f64]) -> Result<Var> {
    if reps.is_empty() || reps.len() != weights.len() {
        return Err(Error::shape("fuse_channel", "one weight per representation required"));
    }
    let mut acc = tape.scale(reps[0], weights[0])?;
    for (&z, &w) in reps[1..].iter().zip(&weights[1..]) {
        let part = tape.scale(z, w)?;
        acc = tape.add(acc, part)?;
    }
    Ok(acc)
}

/// `σ(Z_p) ⊙ Z_s`.
pub fn gate_fuse(tape: &mut Tape, shared: Var, private: Var) -> Result<Var> {
    let gate = tape.sigmoid(private)?;
    tape.mul(gate, shared)
}

/// Cross-entropy over the observed entries `G = 1`, normalized by their
/// count. Zero when nothing is observed.
pub fn masked_ce(tape: &mut Tape, p: Var, labels: &Matrix, mask: &Matrix) -> Result<Var> {
    if tape.shape(p) != labels.shape() || labels.shape() != mask.shape() {
        return Err(Error::shape(
            "masked_ce",
            format!("{:?} predictions, {:?} labels, {:?} mask", tape.shape(p), labels.shape(), mask.shape()),
        ));
    }
    let observed = mask.sum();
    if observed == 0.0 {
        return Ok(tape.input(Matrix::scalar(0.0)));
    }
    let pos = tape.input(labels.zip_map(mask, |y, g| y * g)?);
    let neg = tape.input(labels.zip_map(mask, |y, g| (1.0 - y) * g)?);
    let log_p = tape.log_clamped(p, PROB_FLOOR)?;
    let q = tape.neg(p)?;
    let q = tape.add_scalar(q, 1.0)?;
    let log_q = tape.log_clamped(q, PROB_FLOOR)?;
    let a = tape.mul(pos, log_p)?;
    let b = tape.mul(neg, log_q)?;
    let both = tape.add(a, b)?;
    let total = tape.sum(both)?;
    tape.scale(total, -1.0 / observed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 2.0,
            lambda1: 0.1,
            lambda2: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a non-negative number")));
            }
        }
        Ok(())
    }
}

/// Scalar nodes entering the objective. `manifold` holds the per-view
/// manifold losses of both streams; `pseudo` the masked cross-entropies of
/// every pseudo-prediction.
#[derive(Clone, Debug)]
pub struct LossComponents {
    pub mce: Var,
    pub re: Option<Var>,
    pub pseudo: Vec<Var>,
    pub manifold: Vec<Var>,
    pub dis: Option<Var>,
}

/// `α·L_mce + λ1·L_re + λ2·mean(pseudo) + 0.05·mean(manifold) + L_dis`.
/// Missing terms count as zero.
pub fn total_loss(tape: &mut Tape, parts: &LossComponents, weights: LossWeights) -> Result<Var> {
    let mut total = tape.scale(parts.mce, weights.alpha)?;
    if let Some(re) = parts.re {
        let t = tape.scale(re, weights.lambda1)?;
        total = tape.add(total, t)?;
    }
    if !parts.pseudo.is_empty() {
        let t = scaled_sum(tape, &parts.pseudo, weights.lambda2 / parts.pseudo.len() as f64)?;
        total = tape.add(total, t)?;
    }
    if !parts.manifold.is_empty() {
        let t = scaled_sum(tape, &parts.manifold, MANIFOLD_SCALE / parts.manifold.len() as f64)?;
        total = tape.add(total, t)?;
    }
    if let Some(dis) = parts.dis {
        total = tape.add(total, dis)?;
    }
    Ok(total)
}

fn scaled_sum(tape: &mut Tape, vars: &[Var], factor: f64) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    tape.scale(acc, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn features_at_zero_and_saturated_prototypes() {
        let z = Matrix::from_rows(&[[1.0, -2.0], [4.0, 0.5]]);
        let f = label_specific_features(&Matrix::zeros(3, 2), &z).unwrap();
        assert_eq!(f[1].row(2), &[2.0, 0.25]);
        let f = label_specific_features(&Matrix::filled(1, 2, 50.0), &z).unwrap();
        assert!((f[0][(0, 1)] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn factorized_logits_match_feature_path() {
        let mut rng = RngStream::new(4, 0);
        let mut store = ParamStore::new();
        let heads = ClassHeads::new(&mut store, "h", 3, 4, &mut rng);
        let l = rng.normal_matrix(3, 4);
        let z = rng.normal_matrix(5, 4);
        let mut t = Tape::new();
        let (lv, zv) = (t.input(l.clone()), t.input(z.clone()));
        let p = heads.predict(&mut t, &store, lv, zv).unwrap();
        let features = label_specific_features(&l, &z).unwrap();
        let expected = pseudo_predict(&features, store.value(heads.weight), store.value(heads.bias)).unwrap();
        for (a, b) in t.value(p).as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_heads_predict_half() {
        let features = vec![Matrix::ones(2, 3); 4];
        let p = pseudo_predict(&features, &Matrix::zeros(2, 3), &Matrix::zeros(1, 2)).unwrap();
        assert!(p.as_slice().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn manifold_closed_forms() {
        // orthogonal unit features give S = 0.5; identical predictions give T = 1
        let mut t = Tape::new();
        let z = t.input(Matrix::identity(3));
        let p = t.input(Matrix::ones(3, 2));
        let l = view_manifold_loss(&mut t, z, p).unwrap();
        assert!((t.scalar(l) - 2f64.ln()).abs() < 1e-12);

        let z = t.input(Matrix::ones(3, 2));
        let l = view_manifold_loss(&mut t, z, p).unwrap();
        assert!(t.scalar(l).abs() < 1e-12);

        let z = t.input(Matrix::ones(1, 2));
        let p = t.input(Matrix::ones(1, 2));
        let l = view_manifold_loss(&mut t, z, p).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn reciprocal_weights() {
        let w = fusion_weights(&[0.1, 0.3]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
        assert_eq!(fusion_weights(&[2.0; 4]).unwrap(), vec![0.25; 4]);
        let w = fusion_weights(&[0.0, 1.0]).unwrap();
        assert!(w[0] > 1.0 - 1e-7);
        assert!(fusion_weights(&[f64::NAN]).is_err());
    }

    #[test]
    fn gate_halves_at_zero() {
        let mut t = Tape::new();
        let s = t.input(Matrix::from_rows(&[[2.0, -4.0]]));
        let p = t.input(Matrix::zeros(1, 2));
        let z = gate_fuse(&mut t, s, p).unwrap();
        assert_eq!(t.value(z).as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn masked_ce_cases() {
        let y = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let mut t = Tape::new();
        let half = t.input(Matrix::filled(2, 2, 0.5));
        let l = masked_ce(&mut t, half, &y, &Matrix::ones(2, 2)).unwrap();
        assert!((t.scalar(l) - 2f64.ln()).abs() < 1e-12);
        let l = masked_ce(&mut t, half, &y, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let exact = t.input(y.map(|v| v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)));
        let l = masked_ce(&mut t, exact, &y, &Matrix::ones(2, 2)).unwrap();
        assert!(t.scalar(l) < 1e-6);
    }

    #[test]
    fn weighted_objective() {
        let mut t = Tape::new();
        let s = |t: &mut Tape, x: f64| t.input(Matrix::scalar(x));
        let parts = LossComponents {
            mce: s(&mut t, 0.7),
            re: Some(s(&mut t, 2.0)),
            pseudo: vec![s(&mut t, 0.4), s(&mut t, 0.8)],
            manifold: vec![s(&mut t, 1.0), s(&mut t, 3.0)],
            dis: Some(s(&mut t, -0.02)),
        };
        let weights = LossWeights {
            alpha: 1.0,
            ..LossWeights::default()
        };
        let l = total_loss(&mut t, &parts, weights).unwrap();
        let expected = 0.7 + 0.1 * 2.0 + 0.01 * 0.6 + 0.05 * 2.0 - 0.02;
        assert!((t.scalar(l) - expected).abs() < 1e-12);
        let zero = LossWeights {
            alpha: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
        };
        let parts = LossComponents {
            manifold: vec![],
            dis: None,
            ..parts
        };
        let l = total_loss(&mut t, &parts, zero).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn fused_prediction_gradients() {
        let mut rng = RngStream::new(9, 0);
        let mut store = ParamStore::new();
        let heads = ClassHeads::new(&mut store, "h", 3, 4, &mut rng);
        let l = store.add("l", rng.normal_matrix(3, 4));
        let za = store.add("za", rng.normal_matrix(6, 4));
        let zb = store.add("zb", rng.normal_matrix(6, 4));
        let y = Matrix::from_fn(6, 3, |i, j| f64::from((i + j) % 2 == 0));
        let g = Matrix::from_fn(6, 3, |i, j| f64::from((i * 3 + j) % 5 != 0));
        let build = |t: &mut Tape, s: &ParamStore| {
            let (lv, a, b) = (t.param(s, l), t.param(s, za), t.param(s, zb));
            let pa = heads.predict(t, s, lv, a)?;
            let m = view_manifold_loss(t, a, pa)?;
            let fused = fuse_channel(t, &[a, b], &[0.3, 0.7])?;
            let z = gate_fuse(t, fused, b)?;
            let p = heads.predict(t, s, lv, z)?;
            let ce = masked_ce(t, p, &y, &g)?;
            total_loss(
                t,
                &LossComponents {
                    mce: ce,
                    re: None,
                    pseudo: vec![],
                    manifold: vec![m],
                    dis: None,
                },
                LossWeights::default(),
            )
        };
        let report = grad_check(build, &store, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
