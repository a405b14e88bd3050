use super::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Matrix, RngStream};

/// Latent structure behind a synthetic dataset.
#[derive(Clone, Debug)]
pub struct SyntheticTruth {
    /// `n x shared_dim`, common to every view.
    pub shared: Matrix,
    /// Per view, `n x private_dim`.
    pub private: Vec<Matrix>,
    /// Per view, `(shared_dim + private_dim) x d_v` linear map.
    pub maps: Vec<Matrix>,
    /// `shared_dim x c`; labels are `shared · label_map + offsets > 0`.
    pub label_map: Matrix,
    pub offsets: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: MultiViewDataset,
    pub truth: SyntheticTruth,
}

/// Feature width of view `v` for the given latent sizes.
pub fn synthetic_view_dim(v: usize, shared_dim: usize, private_dim: usize) -> usize {
    (shared_dim + private_dim) * (2 + v % 2)
}

/// Draws a dataset whose views share a common latent factor.
///
/// Every sample has a shared latent `s` and one private latent `p_v` per view,
/// all standard normal. View `v` is `[s, p_v] · R_v + noise · η` for a fixed
/// Gaussian map `R_v`. Labels depend on `s` only: label `c` is positive when
/// `s · L_c + b_c > 0`, with `b_c` placed so that between 25% and 45% of the
/// samples are positive. Odd labels reuse most of the previous label's
/// direction, which makes those label pairs co-occur.
pub fn generate_synthetic(
    n: usize,
    v: usize,
    c: usize,
    shared_dim: usize,
    private_dim: usize,
    noise: f64,
    seed: u64,
) -> Result<SyntheticData> {
    if n == 0 || v == 0 || c == 0 || shared_dim == 0 || private_dim == 0 {
        return Err(Error::invalid("synthetic counts must all be at least 1"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("noise must be a non-negative number"));
    }
    let latent = shared_dim + private_dim;
    let mut rng = RngStream::new(derive_seed(seed, 0x5359_4e54), 0);

    let shared = rng.normal_matrix(n, shared_dim);
    let mut private = Vec::with_capacity(v);
    let mut maps = Vec::with_capacity(v);
    let mut views = Vec::with_capacity(v);
    for view in 0..v {
        let p = rng.normal_matrix(n, private_dim);
        let d = synthetic_view_dim(view, shared_dim, private_dim);
        let map = rng.normal_matrix(latent, d).scale(1.0 / (latent as f64).sqrt());
        let z = shared.hconcat(&p)?;
        let mut x = z.matmul(&map)?;
        let eta = rng.normal_matrix(n, d);
        x.axpy(noise, &eta)?;
        private.push(p);
        maps.push(map);
        views.push(x);
    }

    let mut label_map = Matrix::zeros(shared_dim, c);
    for label in 0..c {
        let fresh: Vec<f64> = (0..shared_dim).map(|_| rng.normal()).collect();
        for k in 0..shared_dim {
            label_map[(k, label)] = if label % 2 == 1 {
                0.8 * label_map[(k, label - 1)] + 0.6 * fresh[k]
            } else {
                fresh[k]
            };
        }
    }
    let scores = shared.matmul(&label_map)?;
    let mut labels = Matrix::zeros(n, c);
    let mut offsets = Vec::with_capacity(c);
    for label in 0..c {
        let rate = rng.uniform_in(0.25, 0.45);
        let mut col = scores.column(label);
        col.sort_by(|a, b| b.total_cmp(a));
        let positives = ((rate * n as f64).round() as usize).clamp(1, n.max(2) - 1);
        let cut = if n == 1 {
            col[0] - 1.0
        } else {
            0.5 * (col[positives - 1] + col[positives])
        };
        offsets.push(-cut);
        for i in 0..n {
            labels[(i, label)] = f64::from(scores[(i, label)] - cut > 0.0);
        }
    }

    Ok(SyntheticData {
        dataset: MultiViewDataset::new(views, labels)?,
        truth: SyntheticTruth {
            shared,
            private,
            maps,
            label_map,
            offsets,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_rates() {
        let data = generate_synthetic(500, 3, 4, 3, 2, 0.1, 1).unwrap();
        let ds = &data.dataset;
        assert_eq!(ds.n_views(), 3);
        assert_eq!(ds.view_dims(), vec![10, 15, 10]);
        for label in 0..4 {
            let rate = ds.labels.column(label).iter().sum::<f64>() / 500.0;
            assert!((0.2..=0.5).contains(&rate), "label {label}: {rate}");
        }
    }

    #[test]
    fn seeds_change_labels() {
        let a = generate_synthetic(200, 2, 3, 2, 2, 0.1, 1).unwrap();
        let b = generate_synthetic(200, 2, 3, 2, 2, 0.1, 2).unwrap();
        assert_ne!(a.dataset.labels, b.dataset.labels);
        assert_eq!(a.dataset.labels.shape(), b.dataset.labels.shape());
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(generate_synthetic(0, 2, 3, 2, 2, 0.1, 1).is_err());
        assert!(generate_synthetic(10, 2, 0, 2, 2, 0.1, 1).is_err());
    }
}
