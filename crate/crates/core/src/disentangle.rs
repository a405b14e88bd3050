//! Shared and private representations for each view, and the losses that
//! pull them apart.
//!
//! Each view passes through two channels of identical architecture. A channel
//! produces an initial embedding `Z₁`, a Gaussian `N(μ, σ²)` from which `Z₂`
//! is sampled, and a fusion of the two weighted per dimension by the
//! precision `min(1, 1/σ²)`. The shared channels of different views are
//! pushed together by maximizing a Jensen-Shannon mutual-information lower
//! bound; the private channels are pushed apart through a variational upper
//! bound with a standard-normal marginal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Linear, Mlp};
use crate::numerics::{Matrix, ParamStore, RngStream, Tape, Var, LOG_FLOOR};

/// Floor added to every variance head output.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Coefficients of the disentanglement loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentangleWeights {
    pub gamma: f64,
    pub beta: f64,
}

impl Default for DisentangleWeights {
    fn default() -> Self {
        DisentangleWeights {
            gamma: 0.01,
            beta: 0.01,
        }
    }
}

/// One representation channel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Channel {
    pub initial: Mlp,
    pub mean: Linear,
    pub variance: Linear,
}

impl Channel {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, dim: usize, rng: &mut RngStream) -> Self {
        Channel {
            initial: Mlp::new(store, &format!("{name}.init"), input, hidden, dim, rng),
            mean: Linear::new(store, &format!("{name}.mu"), input, dim, rng),
            variance: Linear::new(store, &format!("{name}.var"), input, dim, rng),
        }
    }
}

/// Both channels and both decoders of one view.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewEncoders {
    pub shared: Channel,
    pub private: Channel,
    pub shared_decoder: Mlp,
    pub private_decoder: Mlp,
}

impl ViewEncoders {
    pub fn new(store: &mut ParamStore, view: usize, input: usize, hidden: usize, dim: usize, rng: &mut RngStream) -> Self {
        ViewEncoders {
            shared: Channel::new(store, &format!("view{view}.shared"), input, hidden, dim, rng),
            private: Channel::new(store, &format!("view{view}.private"), input, hidden, dim, rng),
            shared_decoder: Mlp::new(store, &format!("view{view}.dec_shared"), dim, hidden, input, rng),
            private_decoder: Mlp::new(store, &format!("view{view}.dec_private"), dim, hidden, input, rng),
        }
    }
}

/// Tape handles for one channel of one view.
#[derive(Clone, Copy, Debug)]
pub struct ChannelOutput {
    pub initial: Var,
    pub mean: Var,
    pub variance: Var,
    pub sampled: Var,
    pub fused: Var,
}

/// Runs a channel. `noise` is the standard-normal draw for the sampled
/// representation; `None` means evaluation mode, where `Z₂ = μ`.
pub fn encode_channel(
    tape: &mut Tape,
    store: &ParamStore,
    channel: &Channel,
    input: Var,
    noise: Option<&Matrix>,
) -> Result<ChannelOutput> {
    let initial = channel.initial.forward(tape, store, input)?;
    let mean = channel.mean.forward(tape, store, input)?;
    let raw = channel.variance.forward(tape, store, input)?;
    let variance = tape.softplus(raw)?;
    let variance = tape.add_scalar(variance, VARIANCE_FLOOR)?;
    let sampled = match noise {
        Some(eps) => reparameterize(tape, mean, variance, eps)?,
        None => mean,
    };
    let fused = precision_fuse(tape, sampled, initial, variance)?;
    Ok(ChannelOutput {
        initial,
        mean,
        variance,
        sampled,
        fused,
    })
}

/// `μ + ε ⊙ √σ²`.
pub fn reparameterize(tape: &mut Tape, mean: Var, variance: Var, eps: &Matrix) -> Result<Var> {
    let e = tape.input(eps.clone());
    let std = tape.sqrt(variance)?;
    let scaled = tape.mul(e, std)?;
    tape.add(mean, scaled)
}

/// `w ⊙ Z₂ + (1 − w) ⊙ Z₁` with `w = min(1, 1/σ²)` per entry.
pub fn precision_fuse(tape: &mut Tape, sampled: Var, initial: Var, variance: Var) -> Result<Var> {
    let precision = tape.recip(variance)?;
    let w = tape.clamp(precision, 0.0, 1.0)?;
    let rest = tape.neg(w)?;
    let rest = tape.add_scalar(rest, 1.0)?;
    let a = tape.mul(w, sampled)?;
    let b = tape.mul(rest, initial)?;
    tape.add(a, b)
}

/// Random cyclic shift used to form negative pairs: offset in `[1, n-1]`,
/// so no sample is paired with itself.
pub fn draw_shift(rng: &mut RngStream, n: usize) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid("mutual-information estimate needs at least two samples"));
    }
    let offset = rng.int_inclusive(1, n - 1);
    Ok((0..n).map(|i| (i + offset) % n).collect())
}

/// Jensen-Shannon lower bound on the mutual information between the row
/// streams `a` and `b`:
///
/// `1/N Σ_i [ -softplus(-T(a_i ⊕ b_i)) - softplus(T(a_π(i) ⊕ b_i)) ]`
///
/// where `π` is `shift` (see [`draw_shift`]).
pub fn jsd_mi_estimate(
    tape: &mut Tape,
    store: &ParamStore,
    scorer: &Mlp,
    a: Var,
    b: Var,
    shift: &[usize],
) -> Result<Var> {
    let n = tape.shape(a).0;
    if n < 2 {
        return Err(Error::invalid("mutual-information estimate needs at least two samples"));
    }
    if shift.len() != n {
        return Err(Error::shape("jsd_mi_estimate", "shift length differs from sample count"));
    }
    let joint = tape.concat_cols(a, b)?;
    let pos = scorer.forward(tape, store, joint)?;
    let shuffled = tape.select_rows(a, shift)?;
    let marginal = tape.concat_cols(shuffled, b)?;
    let neg = scorer.forward(tape, store, marginal)?;
    let neg_pos = tape.neg(pos)?;
    let pos_term = tape.softplus(neg_pos)?;
    let neg_term = tape.softplus(neg)?;
    let total = tape.add(pos_term, neg_term)?;
    let mean = tape.mean(total)?;
    tape.neg(mean)
}

/// Surrogate of the cross-view private information:
/// mean over entries of `log N(z_u; μ_u, σ²_u) − log N(z_v; 0, 1)`.
pub fn private_overlap_bound(tape: &mut Tape, sample_u: Var, mean_u: Var, variance_u: Var, sample_v: Var) -> Result<Var> {
    let log_var = tape.log_clamped(variance_u, LOG_FLOOR)?;
    let diff = tape.sub(sample_u, mean_u)?;
    let sq = tape.square(diff)?;
    let inv = tape.recip(variance_u)?;
    let maha = tape.mul(sq, inv)?;
    let own = tape.add(log_var, maha)?;
    let own = tape.scale(own, -0.5)?;
    let prior = tape.square(sample_v)?;
    let prior = tape.scale(prior, 0.5)?;
    let total = tape.add(own, prior)?;
    tape.mean(total)
}

/// Inputs of the disentanglement loss for one view.
#[derive(Clone, Copy, Debug)]
pub struct ViewChannels {
    pub shared: ChannelOutput,
    pub private: ChannelOutput,
}

#[derive(Clone, Copy, Debug)]
pub struct DisentangleTerms {
    pub loss: Var,
    /// Mean shared-pair JSD estimate over ordered view pairs.
    pub jsd_mean: f64,
    /// Mean private overlap bound over ordered view pairs.
    pub overlap_mean: f64,
}

/// `Σ_v Σ_{u≠v} [ −γ/(V(V−1)) · Î(Z_s^u; Z_s^v) + β/(V(V−1)) · overlap(u, v) ]`.
///
/// Shared pairs use the fused shared representations; the private overlap
/// uses the sampled private representations. One negative-pair shift is
/// drawn per ordered pair, in `(v, u)` order. With a single view the loss is
/// zero.
pub fn disentangle_loss(
    tape: &mut Tape,
    store: &ParamStore,
    views: &[ViewChannels],
    scorer: &Mlp,
    weights: DisentangleWeights,
    rng: &mut RngStream,
) -> Result<DisentangleTerms> {
    let v = views.len();
    if v < 2 {
        log::warn!("disentanglement loss needs two or more views; using 0");
        let zero = tape.input(Matrix::scalar(0.0));
        return Ok(DisentangleTerms {
            loss: zero,
            jsd_mean: 0.0,
            overlap_mean: 0.0,
        });
    }
    let n = tape.shape(views[0].shared.fused).0;
    let norm = (v * (v - 1)) as f64;
    let mut terms = Vec::with_capacity(2 * v * (v - 1));
    let (mut jsd_sum, mut overlap_sum) = (0.0, 0.0);
    for target in 0..v {
        for other in (0..v).filter(|&u| u != target) {
            let shift = draw_shift(rng, n)?;
            let jsd = jsd_mi_estimate(
                tape,
                store,
                scorer,
                views[other].shared.fused,
                views[target].shared.fused,
                &shift,
            )?;
            jsd_sum += tape.scalar(jsd);
            terms.push(tape.scale(jsd, -weights.gamma / norm)?);

            let p = &views[other].private;
            let overlap = private_overlap_bound(tape, p.sampled, p.mean, p.variance, views[target].private.sampled)?;
            overlap_sum += tape.scalar(overlap);
            terms.push(tape.scale(overlap, weights.beta / norm)?);
        }
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = tape.add(loss, t)?;
    }
    Ok(DisentangleTerms {
        loss,
        jsd_mean: jsd_sum / norm,
        overlap_mean: overlap_sum / norm,
    })
}

/// Mean squared error between two equally shaped nodes.
pub fn mse(tape: &mut Tape, prediction: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(prediction, target)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

/// `1/V Σ_v [ MSE(q_s(Z_s^v), Z^v) + MSE(q_p(Z_p^v), Z^v) ]`.
pub fn reconstruction_loss(
    tape: &mut Tape,
    store: &ParamStore,
    encoders: &[ViewEncoders],
    views: &[ViewChannels],
    inputs: &[Var],
) -> Result<Var> {
    if encoders.len() != views.len() || inputs.len() != views.len() || views.is_empty() {
        return Err(Error::shape("reconstruction_loss", "per-view inputs disagree in count"));
    }
    let mut total: Option<Var> = None;
    for ((enc, ch), &x) in encoders.iter().zip(views).zip(inputs) {
        let rs = enc.shared_decoder.forward(tape, store, ch.shared.fused)?;
        let rp = enc.private_decoder.forward(tape, store, ch.private.fused)?;
        let ls = mse(tape, rs, x)?;
        let lp = mse(tape, rp, x)?;
        let both = tape.add(ls, lp)?;
        total = Some(match total {
            Some(t) => tape.add(t, both)?,
            None => both,
        });
    }
    tape.scale(total.unwrap(), 1.0 / views.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn fuse_unit_variance_and_quarter_precision() {
        let mut t = Tape::new();
        let z2 = t.input(Matrix::from_rows(&[[1.0, -2.0]]));
        let z1 = t.input(Matrix::from_rows(&[[5.0, 4.0]]));
        let one = t.input(Matrix::ones(1, 2));
        let four = t.input(Matrix::filled(1, 2, 4.0));
        let a = precision_fuse(&mut t, z2, z1, one).unwrap();
        let b = precision_fuse(&mut t, z2, z1, four).unwrap();
        assert_eq!(t.value(a), t.value(z2));
        assert_eq!(t.value(b).as_slice(), &[0.25 * 1.0 + 0.75 * 5.0, 0.25 * -2.0 + 0.75 * 4.0]);
    }

    #[test]
    fn fuse_huge_variance_returns_initial() {
        let mut t = Tape::new();
        let z2 = t.input(Matrix::from_rows(&[[1.0]]));
        let z1 = t.input(Matrix::from_rows(&[[3.0]]));
        let big = t.input(Matrix::scalar(1e12));
        let f = precision_fuse(&mut t, z2, z1, big).unwrap();
        assert!((t.scalar(f) - 3.0).abs() < 1e-11);
    }

    #[test]
    fn jsd_with_zero_scorer() {
        let mut rng = RngStream::new(0, 0);
        let mut store = ParamStore::new();
        let scorer = Mlp::new(&mut store, "T", 4, 3, 1, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).value.fill(0.0);
        }
        let mut t = Tape::new();
        let a = t.input(rng.normal_matrix(6, 2));
        let b = t.input(rng.normal_matrix(6, 2));
        let shift = draw_shift(&mut rng, 6).unwrap();
        let est = jsd_mi_estimate(&mut t, &store, &scorer, a, b, &shift).unwrap();
        assert!((t.scalar(est) + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shift_has_no_fixed_points() {
        let mut rng = RngStream::new(4, 0);
        for n in 2..20 {
            let s = draw_shift(&mut rng, n).unwrap();
            assert!(s.iter().enumerate().all(|(i, &j)| i != j));
        }
        assert!(draw_shift(&mut rng, 1).is_err());
    }

    #[test]
    fn overlap_bound_cancels_for_identical_standard_samples() {
        let mut t = Tape::new();
        let z = t.input(Matrix::from_rows(&[[0.3, -1.1], [2.0, 0.5]]));
        let mu = t.input(Matrix::zeros(2, 2));
        let var = t.input(Matrix::ones(2, 2));
        let b = private_overlap_bound(&mut t, z, mu, var, z).unwrap();
        assert!(t.scalar(b).abs() < 1e-15);
    }

    #[test]
    fn sampling_gradients() {
        let eps = Matrix::from_rows(&[[0.7, -1.3]]);
        let mut store = ParamStore::new();
        let mu = store.add("mu", Matrix::from_rows(&[[0.2, -0.4]]));
        let var = store.add("var", Matrix::from_rows(&[[1.5, 0.3]]));
        let build = |t: &mut Tape, s: &ParamStore| {
            let (m, v) = (t.param(s, mu), t.param(s, var));
            let z = reparameterize(t, m, v, &eps)?;
            t.sum(z)
        };
        let report = grad_check(build, &store, 1e-6, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
        let g = crate::numerics::analytic_gradients(&build, &store).unwrap();
        assert_eq!(g[0], Matrix::ones(1, 2));
        for k in 0..2 {
            let expected = eps.as_slice()[k] / (2.0 * store.value(var).as_slice()[k].sqrt());
            assert!((g[1].as_slice()[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn single_view_loss_is_zero() {
        let mut rng = RngStream::new(1, 0);
        let mut store = ParamStore::new();
        let scorer = Mlp::new(&mut store, "T", 4, 3, 1, &mut rng);
        let enc = Channel::new(&mut store, "c", 3, 4, 2, &mut rng);
        let mut t = Tape::new();
        let x = t.input(rng.normal_matrix(5, 3));
        let shared = encode_channel(&mut t, &store, &enc, x, None).unwrap();
        let view = ViewChannels {
            shared,
            private: shared,
        };
        let terms = disentangle_loss(&mut t, &store, &[view], &scorer, DisentangleWeights::default(), &mut rng).unwrap();
        assert_eq!(t.scalar(terms.loss), 0.0);
    }

    #[test]
    fn evaluation_mode_samples_the_mean() {
        let mut rng = RngStream::new(2, 0);
        let mut store = ParamStore::new();
        let enc = Channel::new(&mut store, "c", 3, 4, 2, &mut rng);
        let mut t = Tape::new();
        let x = t.input(rng.normal_matrix(5, 3));
        let out = encode_channel(&mut t, &store, &enc, x, None).unwrap();
        assert_eq!(t.value(out.sampled), t.value(out.mean));
        assert!(t.value(out.variance).as_slice().iter().all(|&v| v > 0.0));
    }
}
