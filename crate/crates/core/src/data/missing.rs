use serde::{Deserialize, Serialize};

use super::dataset::{MultiViewDataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Matrix, RngStream};

/// Feature (view) and label missing ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub fmr: f64,
    pub lmr: f64,
    pub seed: u64,
}

impl MissingnessSpec {
    pub fn new(fmr: f64, lmr: f64, seed: u64) -> Result<Self> {
        let spec = MissingnessSpec { fmr, lmr, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fmr) {
            return Err(Error::invalid("fmr must be < 1 and non-negative"));
        }
        if !(0.0..1.0).contains(&self.lmr) {
            return Err(Error::invalid("lmr must be < 1 and non-negative"));
        }
        Ok(())
    }
}

/// Masks views and labels of a fully observed dataset.
///
/// Views: for each view, `floor(fmr * N)` samples lose it. Samples left with
/// no view get one uniformly chosen view back, and where possible another
/// sample that still has two or more views gives up that view instead, so
/// per-view counts stay as requested.
///
/// Labels: for each label, `floor(lmr * M)` of the `M` non-test samples
/// become unobserved, split between positives and negatives in proportion
/// to their counts. Test samples always keep every label.
pub fn apply_missingness(ds: &MultiViewDataset, spec: &MissingnessSpec) -> Result<MultiViewDataset> {
    spec.validate()?;
    let all_ones = |m: &Matrix| m.as_slice().iter().all(|&x| x == 1.0);
    if !all_ones(&ds.view_mask) || !all_ones(&ds.label_mask) {
        return Err(Error::invalid(
            "missingness can only be applied to a fully observed dataset",
        ));
    }
    let mut out = ds.clone();
    out.view_mask = view_mask(ds.n_samples(), ds.n_views(), spec.fmr, spec.seed);
    out.label_mask = label_mask(ds, spec.lmr, spec.seed);
    for (v, x) in out.views.iter_mut().enumerate() {
        for i in 0..x.rows() {
            if out.view_mask[(i, v)] == 0.0 {
                x.row_mut(i).fill(0.0);
            }
        }
    }
    out.validate()?;
    Ok(out)
}

fn view_mask(n: usize, v: usize, fmr: f64, seed: u64) -> Matrix {
    let mut w = Matrix::ones(n, v);
    if v == 1 {
        // A single view cannot go missing without emptying the sample.
        return w;
    }
    let drop = (fmr * n as f64).floor() as usize;
    for col in 0..v {
        let mut rng = RngStream::new(derive_seed(seed, 0x5749_4557), col as u64);
        for i in rng.sample_indices(n, drop) {
            w[(i, col)] = 0.0;
        }
    }

    let mut rng = RngStream::new(derive_seed(seed, 0x5245_5041), 0);
    for i in 0..n {
        if w.row(i).iter().any(|&x| x == 1.0) {
            continue;
        }
        let col = rng.index(v);
        w[(i, col)] = 1.0;
        let donors: Vec<usize> = (0..n)
            .filter(|&j| j != i && w[(j, col)] == 1.0 && w.row(j).iter().sum::<f64>() >= 2.0)
            .collect();
        if !donors.is_empty() {
            let j = donors[rng.index(donors.len())];
            w[(j, col)] = 0.0;
        }
    }
    w
}

fn label_mask(ds: &MultiViewDataset, lmr: f64, seed: u64) -> Matrix {
    let (n, c) = (ds.n_samples(), ds.n_labels());
    let mut g = Matrix::ones(n, c);
    let eligible: Vec<usize> = (0..n).filter(|&i| ds.split[i] != Split::Test).collect();
    for label in 0..c {
        let mut rng = RngStream::new(derive_seed(seed, 0x4c41_4245), label as u64);
        let (pos, neg): (Vec<usize>, Vec<usize>) = eligible
            .iter()
            .partition(|&&i| ds.labels[(i, label)] == 1.0);
        let total = (lmr * eligible.len() as f64).floor() as usize;
        let drop_pos = ((lmr * pos.len() as f64).floor() as usize).min(total);
        let drop_neg = (total - drop_pos).min(neg.len());
        for k in rng.sample_indices(pos.len(), drop_pos) {
            g[(pos[k], label)] = 0.0;
        }
        for k in rng.sample_indices(neg.len(), drop_neg) {
            g[(neg[k], label)] = 0.0;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn dataset(n: usize, v: usize) -> MultiViewDataset {
        generate_synthetic(n, v, 3, 2, 2, 0.1, 5).unwrap().dataset
    }

    #[test]
    fn zero_ratios_are_a_no_op() {
        let ds = dataset(30, 2);
        let out = apply_missingness(&ds, &MissingnessSpec::new(0.0, 0.0, 1).unwrap()).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn fmr_one_is_rejected() {
        let err = MissingnessSpec::new(1.0, 0.0, 1).unwrap_err();
        assert!(err.to_string().starts_with("fmr must be < 1"));
    }

    #[test]
    fn heavy_fmr_keeps_one_view() {
        let ds = dataset(100, 2);
        let out = apply_missingness(&ds, &MissingnessSpec::new(0.9, 0.0, 3).unwrap()).unwrap();
        for i in 0..100 {
            assert!(out.view_mask.row(i).iter().sum::<f64>() >= 1.0);
        }
    }

    #[test]
    fn half_missing_counts_and_determinism() {
        let ds = dataset(101, 3);
        let spec = MissingnessSpec::new(0.5, 0.5, 9).unwrap();
        let a = apply_missingness(&ds, &spec).unwrap();
        let b = apply_missingness(&ds, &spec).unwrap();
        assert_eq!(a, b);
        let target = (0.5f64 * 101.0).ceil();
        for v in 0..3 {
            let kept: f64 = a.view_mask.column(v).iter().sum();
            assert!((kept - target).abs() <= 1.0, "view {v} kept {kept}");
        }
        for c in 0..3 {
            let observed: f64 = a.label_mask.column(c).iter().sum();
            assert_eq!(observed, 101.0 - (0.5f64 * 101.0).floor());
        }
    }

    #[test]
    fn missing_entries_are_zeroed() {
        let ds = dataset(40, 2);
        let out = apply_missingness(&ds, &MissingnessSpec::new(0.5, 0.0, 2).unwrap()).unwrap();
        for v in 0..2 {
            for i in 0..40 {
                if out.view_mask[(i, v)] == 0.0 {
                    assert!(out.views[v].row(i).iter().all(|&x| x == 0.0));
                } else {
                    assert_eq!(out.views[v].row(i), ds.views[v].row(i));
                }
            }
        }
    }

    #[test]
    fn test_rows_keep_all_labels() {
        let ds = crate::data::split_dataset(&dataset(50, 2), [0.7, 0.1, 0.2], 4).unwrap();
        let out = apply_missingness(&ds, &MissingnessSpec::new(0.3, 0.8, 2).unwrap()).unwrap();
        for i in out.indices(Split::Test) {
            assert!(out.label_mask.row(i).iter().all(|&g| g == 1.0));
        }
    }

    #[test]
    fn positives_and_negatives_drop_in_proportion() {
        let ds = dataset(400, 2);
        let out = apply_missingness(&ds, &MissingnessSpec::new(0.0, 0.5, 8).unwrap()).unwrap();
        for c in 0..3 {
            let pos: Vec<usize> = (0..400).filter(|&i| ds.labels[(i, c)] == 1.0).collect();
            let hidden = pos.iter().filter(|&&i| out.label_mask[(i, c)] == 0.0).count();
            assert_eq!(hidden, pos.len() / 2);
        }
    }
}
