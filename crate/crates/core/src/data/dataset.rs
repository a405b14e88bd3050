use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Which partition a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> f64 {
        match self {
            Split::Train => 0.0,
            Split::Val => 1.0,
            Split::Test => 2.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Split> {
        match code {
            c if c == 0.0 => Some(Split::Train),
            c if c == 1.0 => Some(Split::Val),
            c if c == 2.0 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Multi-view features, binary labels, and the availability masks.
///
/// `view_mask[i, v] == 1` means sample `i` has view `v`; missing entries of a
/// view matrix are stored as zeros and identified only through the mask.
/// `label_mask[i, c] == 1` means label `c` of sample `i` is observed.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<Matrix>,
    pub labels: Matrix,
    pub view_mask: Matrix,
    pub label_mask: Matrix,
    pub split: Vec<Split>,
}

impl MultiViewDataset {
    /// Fully observed dataset with every sample in the training split.
    pub fn new(views: Vec<Matrix>, labels: Matrix) -> Result<Self> {
        let n = labels.rows();
        let ds = MultiViewDataset {
            view_mask: Matrix::ones(n, views.len()),
            label_mask: Matrix::ones(n, labels.cols()),
            split: vec![Split::Train; n],
            views,
            labels,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.rows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::cols).collect()
    }

    pub fn has_view(&self, i: usize, v: usize) -> bool {
        self.view_mask[(i, v)] != 0.0
    }

    /// Indices of the samples in `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_samples();
        let v = self.n_views();
        let c = self.n_labels();
        if v == 0 {
            return Err(Error::invalid("dataset has no views"));
        }
        if n == 0 || c == 0 {
            return Err(Error::invalid("dataset has no samples or no labels"));
        }
        for (k, x) in self.views.iter().enumerate() {
            if x.rows() != n {
                return Err(Error::invalid(format!(
                    "view {k} has {} rows, labels have {n}",
                    x.rows()
                )));
            }
            if x.cols() == 0 {
                return Err(Error::invalid(format!("view {k} is empty")));
            }
            if !x.is_finite() {
                return Err(Error::invalid(format!("view {k} has non-finite values")));
            }
        }
        if self.view_mask.shape() != (n, v) {
            return Err(Error::invalid(format!(
                "view mask is {:?}, expected {:?}",
                self.view_mask.shape(),
                (n, v)
            )));
        }
        if self.label_mask.shape() != (n, c) {
            return Err(Error::invalid(format!(
                "label mask is {:?}, expected {:?}",
                self.label_mask.shape(),
                (n, c)
            )));
        }
        if !is_binary(&self.labels) {
            return Err(Error::invalid("labels must be binary"));
        }
        if !is_binary(&self.view_mask) || !is_binary(&self.label_mask) {
            return Err(Error::invalid("masks must be binary"));
        }
        if let Some(i) = (0..n).find(|&i| self.view_mask.row(i).iter().all(|&w| w == 0.0)) {
            return Err(Error::invalid(format!("sample {i} has no available view")));
        }
        if self.split.len() != n {
            return Err(Error::invalid("split tags do not cover every sample"));
        }
        Ok(())
    }
}

pub(crate) fn is_binary(m: &Matrix) -> bool {
    m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
}
