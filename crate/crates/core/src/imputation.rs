//! Missing-view completion by cross-view attention propagation, and random
//! fragment masking.
//!
//! For each view the pipeline is:
//!
//! 1. [`attention_scores`]: `A[i,j] = exp(cos(x_i, x_j) / tau)`.
//! 2. [`threshold_filter`]: keep only each row's strongest scores.
//! 3. [`cross_view_affinity`]: average the filtered scores of the *other*
//!    views over pairs of samples that both have them.
//! 4. [`transfer_graph`]: top-`k` available neighbors by that affinity.
//! 5. [`impute_view`]: affinity-weighted mean of the neighbors' rows.
//! 6. [`merge_views`]: observed rows pass through, missing rows are replaced.
//!
//! Nothing here is trainable.

use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    /// Attention temperature.
    pub tau: f64,
    /// Per-row percentile used as the filtering threshold, in `[0, 100)`.
    pub percentile: f64,
    /// Neighbors per sample in the transfer graph.
    pub k: usize,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            tau: 0.5,
            percentile: 90.0,
            k: 10,
        }
    }
}

/// Every intermediate matrix of the completion pipeline, per view.
#[derive(Clone, Debug)]
pub struct ImputationArtifacts {
    pub attention: Vec<Matrix>,
    pub filtered: Vec<Matrix>,
    pub affinity: Vec<Matrix>,
    pub transfer: Vec<Matrix>,
    pub completed: Vec<Matrix>,
    pub config: ImputationConfig,
}

/// `A[i,j] = exp(h(x_i) · h(x_j) / tau)` with `h` the row-wise L2
/// normalization. All-zero rows normalize to zero, giving a score of 1.
pub fn attention_scores(x: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    let h = x.normalize_rows();
    Ok(h.matmul_nt(&h)?.map(|c| (c / tau).exp()))
}

/// Threshold below which row entries are discarded: the value at rank
/// `ceil(p·m/100)` (1-based) of the `m` sorted off-diagonal entries, or
/// `-inf` when that rank is 0.
pub fn row_threshold(off_diagonal: &mut [f64], percentile: f64) -> f64 {
    let m = off_diagonal.len();
    let rank = (percentile * m as f64 / 100.0 - 1e-9).ceil().max(0.0) as usize;
    if rank == 0 || m == 0 {
        return f64::NEG_INFINITY;
    }
    off_diagonal.sort_by(f64::total_cmp);
    off_diagonal[rank.min(m) - 1]
}

/// Keeps `A[i,j]` only where it strictly exceeds row `i`'s threshold
/// (see [`row_threshold`]); everything else, including the diagonal, is 0.
pub fn threshold_filter(a: &Matrix, percentile: f64) -> Result<Matrix> {
    if !(0.0..100.0).contains(&percentile) {
        return Err(Error::invalid("percentile must lie in [0, 100)"));
    }
    let n = a.rows();
    let mut out = Matrix::zeros(n, a.cols());
    if n < 2 {
        return Ok(out);
    }
    let mut scratch = Vec::with_capacity(n);
    for i in 0..n {
        scratch.clear();
        scratch.extend(a.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x));
        let cut = row_threshold(&mut scratch, percentile);
        for (j, (&src, dst)) in a.row(i).iter().zip(out.row_mut(i)).enumerate() {
            if j != i && src > cut {
                *dst = src;
            }
        }
    }
    Ok(out)
}

/// Affinity for `view` built from the other views' filtered attention:
/// the mean of `Ã^(k)[i,j]` over views `k ≠ view` present in both samples,
/// or 0 when no such view exists.
pub fn cross_view_affinity(filtered: &[Matrix], view_mask: &Matrix, view: usize) -> Result<Matrix> {
    let v = filtered.len();
    if v < 2 {
        return Err(Error::invalid("cross-view affinity needs at least two views"));
    }
    let n = view_mask.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        affinity_row(filtered, view_mask, view, i, out.row_mut(i));
    }
    Ok(out)
}

fn affinity_row(filtered: &[Matrix], w: &Matrix, view: usize, i: usize, out: &mut [f64]) {
    let mut count = vec![0.0; out.len()];
    out.fill(0.0);
    for (k, a) in filtered.iter().enumerate() {
        if k == view || w[(i, k)] == 0.0 {
            continue;
        }
        for (j, (&x, (o, c))) in a.row(i).iter().zip(out.iter_mut().zip(count.iter_mut())).enumerate() {
            if w[(j, k)] != 0.0 {
                *o += x;
                *c += 1.0;
            }
        }
    }
    for (o, &c) in out.iter_mut().zip(&count) {
        if c > 0.0 {
            *o /= c;
        }
    }
}

/// Indices selected for one row of the transfer graph: the `k` available
/// samples with the largest positive affinity, ties broken by smaller index.
pub fn top_k_neighbors(affinity_row: &[f64], available: &[bool], k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..affinity_row.len())
        .filter(|&j| available[j] && affinity_row[j] > 0.0)
        .collect();
    cand.sort_by(|&a, &b| affinity_row[b].total_cmp(&affinity_row[a]).then(a.cmp(&b)));
    cand.truncate(k);
    cand
}

/// Binary transfer graph for `view`: `K[i,j] = 1` iff sample `j` has the view
/// and is among row `i`'s top-`k` positive affinities.
pub fn transfer_graph(affinity: &Matrix, view_mask: &Matrix, view: usize, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let available = available_rows(view_mask, view);
    let n = affinity.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in top_k_neighbors(affinity.row(i), &available, k) {
            out[(i, j)] = 1.0;
        }
    }
    Ok(out)
}

pub(crate) fn available_rows(view_mask: &Matrix, view: usize) -> Vec<bool> {
    (0..view_mask.rows()).map(|i| view_mask[(i, view)] != 0.0).collect()
}

/// Mean of the available rows of `x`.
pub fn available_mean(x: &Matrix, available: &[bool]) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; x.cols()];
    let mut count = 0usize;
    for i in (0..x.rows()).filter(|&i| available[i]) {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("view has no available rows to impute from"));
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    Ok(mean)
}

/// `x̂_i = Σ_j K[i,j]·B[i,j]·x_j / Σ_j K[i,j]·B[i,j]`. Rows with no selected
/// neighbor fall back to the mean of the available rows.
pub fn impute_view(x: &Matrix, transfer: &Matrix, affinity: &Matrix, available: &[bool]) -> Result<Matrix> {
    let n = x.rows();
    if transfer.shape() != (n, n) || affinity.shape() != (n, n) || available.len() != n {
        return Err(Error::shape("impute_view", "graph shapes do not match the view"));
    }
    let fallback = available_mean(x, available)?;
    let mut out = Matrix::zeros(n, x.cols());
    for i in 0..n {
        let neighbors: Vec<(usize, f64)> = (0..n)
            .filter(|&j| transfer[(i, j)] != 0.0)
            .map(|j| (j, transfer[(i, j)] * affinity[(i, j)]))
            .collect();
        weighted_row(x, &neighbors, &fallback, out.row_mut(i));
    }
    Ok(out)
}

fn weighted_row(x: &Matrix, neighbors: &[(usize, f64)], fallback: &[f64], out: &mut [f64]) {
    let total: f64 = neighbors.iter().map(|&(_, w)| w).sum();
    if total > 0.0 {
        for &(j, w) in neighbors {
            for (o, v) in out.iter_mut().zip(x.row(j)) {
                *o += w * v;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
    } else {
        out.copy_from_slice(fallback);
    }
}

/// Row `i` is `x[i]` when the view is available, `x̂[i]` otherwise.
pub fn merge_views(imputed: &Matrix, x: &Matrix, available: &[bool]) -> Result<Matrix> {
    imputed.expect_same_shape("merge_views", x)?;
    let mut out = x.clone();
    for (i, &ok) in available.iter().enumerate() {
        if !ok {
            out.row_mut(i).copy_from_slice(imputed.row(i));
        }
    }
    Ok(out)
}

/// Runs every step on every view and keeps all intermediates. Dense `N x N`
/// storage per view; meant for inspection and tests on small inputs.
pub fn impute_with_artifacts(ds: &MultiViewDataset, cfg: &ImputationConfig) -> Result<ImputationArtifacts> {
    let attention: Vec<Matrix> = ds
        .views
        .iter()
        .map(|x| attention_scores(x, cfg.tau))
        .collect::<Result<_>>()?;
    let filtered: Vec<Matrix> = attention
        .iter()
        .map(|a| threshold_filter(a, cfg.percentile))
        .collect::<Result<_>>()?;
    let mut affinity = Vec::new();
    let mut transfer = Vec::new();
    let mut completed = Vec::new();
    for (v, x) in ds.views.iter().enumerate() {
        let available = available_rows(&ds.view_mask, v);
        if ds.n_views() < 2 {
            let n = ds.n_samples();
            affinity.push(Matrix::zeros(n, n));
            transfer.push(Matrix::zeros(n, n));
            completed.push(x.clone());
            continue;
        }
        let b = cross_view_affinity(&filtered, &ds.view_mask, v)?;
        let k = transfer_graph(&b, &ds.view_mask, v, cfg.k)?;
        let imputed = impute_view(x, &k, &b, &available)?;
        completed.push(merge_views(&imputed, x, &available)?);
        affinity.push(b);
        transfer.push(k);
    }
    Ok(ImputationArtifacts {
        attention,
        filtered,
        affinity,
        transfer,
        completed,
        config: *cfg,
    })
}

/// Completed views, computing graph rows only for samples that need them.
/// Same result as [`impute_with_artifacts`] without the `O(N²)` storage for
/// the affinity and transfer graphs.
pub fn impute_views(ds: &MultiViewDataset, cfg: &ImputationConfig) -> Result<Vec<Matrix>> {
    if cfg.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let needs_work = (0..ds.n_views()).any(|v| (0..ds.n_samples()).any(|i| !ds.has_view(i, v)));
    if !needs_work || ds.n_views() < 2 {
        return Ok(ds.views.clone());
    }
    let filtered: Vec<Matrix> = ds
        .views
        .iter()
        .map(|x| attention_scores(x, cfg.tau).and_then(|a| threshold_filter(&a, cfg.percentile)))
        .collect::<Result<_>>()?;
    let n = ds.n_samples();
    let mut out = Vec::with_capacity(ds.n_views());
    for (v, x) in ds.views.iter().enumerate() {
        let available = available_rows(&ds.view_mask, v);
        let fallback = available_mean(x, &available)?;
        let mut completed = x.clone();
        let mut b_row = vec![0.0; n];
        for i in (0..n).filter(|&i| !available[i]) {
            affinity_row(&filtered, &ds.view_mask, v, i, &mut b_row);
            let neighbors: Vec<(usize, f64)> = top_k_neighbors(&b_row, &available, cfg.k)
                .into_iter()
                .map(|j| (j, b_row[j]))
                .collect();
            let row = completed.row_mut(i);
            row.fill(0.0);
            weighted_row(x, &neighbors, &fallback, row);
        }
        out.push(completed);
    }
    Ok(out)
}

/// Replaces every missing row with the mean of the view's available rows.
pub fn mean_impute(ds: &MultiViewDataset) -> Result<Vec<Matrix>> {
    ds.views
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let available = available_rows(&ds.view_mask, v);
            let mean = available_mean(x, &available)?;
            let mut out = x.clone();
            for i in (0..x.rows()).filter(|&i| !available[i]) {
                out.row_mut(i).copy_from_slice(&mean);
            }
            Ok(out)
        })
        .collect()
}

/// Per-row contiguous zero run used during training.
#[derive(Clone, Debug, PartialEq)]
pub struct FragmentMask {
    pub mask: Matrix,
    pub length: usize,
}

/// Zeroes a run of `length` consecutive entries in every row of `z`. The
/// run starts at a uniform position in `1..=d-length` (1-based), drawn
/// row by row from `rng`. Returns the masked matrix and the mask.
pub fn fragment_mask(z: &Matrix, length: usize, rng: &mut RngStream) -> Result<(Matrix, FragmentMask)> {
    let d = z.cols();
    if length >= d {
        return Err(Error::invalid(format!(
            "fragment length {length} must be below the view width {d}"
        )));
    }
    let mut mask = Matrix::ones(z.rows(), d);
    if length > 0 {
        for i in 0..z.rows() {
            let start = rng.int_inclusive(1, d - length) - 1;
            mask.row_mut(i)[start..start + length].fill(0.0);
        }
    }
    let masked = z.zip_map(&mask, |a, b| a * b)?;
    Ok((masked, FragmentMask { mask, length }))
}

/// Default fragment length `floor(fraction · d)`, kept below `d`.
pub fn fragment_length(d: usize, fraction: f64) -> usize {
    ((fraction * d as f64).floor() as usize).min(d.saturating_sub(1))
}
