use super::dataset::{MultiViewDataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, RngStream};

/// Default train/validation/test ratio.
pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// Assigns split tags: a seeded uniform permutation cut into contiguous
/// train, validation and test blocks.
///
/// Train and validation sizes are `floor(ratio * N)`; test takes the rest.
/// Rows that land in the test split have their label mask reset to fully
/// observed, since evaluation needs complete labels.
pub fn split_dataset(ds: &MultiViewDataset, ratios: [f64; 3], seed: u64) -> Result<MultiViewDataset> {
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(Error::invalid("split ratios must lie in [0, 1]"));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split ratios must sum to 1"));
    }
    let n = ds.n_samples();
    let size = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let n_train = size(ratios[0]);
    let n_val = size(ratios[1]).min(n - n_train);
    let n_test = n - n_train - n_val;
    for (r, count, name) in [
        (ratios[0], n_train, "train"),
        (ratios[1], n_val, "validation"),
        (ratios[2], n_test, "test"),
    ] {
        if r > 0.0 && count == 0 {
            return Err(Error::invalid(format!(
                "{n} samples leave the {name} split empty"
            )));
        }
    }

    let mut rng = RngStream::new(derive_seed(seed, 0x5350_4c54), 0);
    let perm = rng.permutation(n);
    let mut out = ds.clone();
    for (pos, &i) in perm.iter().enumerate() {
        out.split[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        if out.split[i] == Split::Test {
            out.label_mask.row_mut(i).fill(1.0);
        }
    }
    Ok(out)
}

/// Parses `"7:1:2"` style ratios, normalizing by their sum.
pub fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("bad ratios `{text}`")))?;
    let [a, b, c] = parts[..] else {
        return Err(Error::invalid(format!("expected three ratios, got `{text}`")));
    };
    let total = a + b + c;
    if total <= 0.0 || [a, b, c].iter().any(|&r| r < 0.0) {
        return Err(Error::invalid(format!("bad ratios `{text}`")));
    }
    Ok([a / total, b / total, c / total])
}
