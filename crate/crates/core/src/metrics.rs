//! Multi-label evaluation: Average Precision, Hamming Loss, Ranking Loss,
//! macro AUC, OneError and Coverage, reported so that higher is better.
//!
//! Labels of a sample are ranked by descending score with ties broken by the
//! smaller label index. Samples without a relevant label are left out of the
//! rank-based measures (AP, RL, OE, Coverage). A sample whose labels are all
//! relevant contributes a ranking loss of 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Column headers, in the order of [`MetricsReport::values`].
pub const METRIC_NAMES: [&str; 6] = ["AP", "1-HL", "1-RL", "AUC", "1-OE", "1-Cov"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap: f64,
    pub one_minus_hl: f64,
    pub one_minus_rl: f64,
    pub auc: f64,
    pub one_minus_oe: f64,
    pub one_minus_cov: f64,
}

impl MetricsReport {
    pub fn values(&self) -> [f64; 6] {
        [
            self.ap,
            self.one_minus_hl,
            self.one_minus_rl,
            self.auc,
            self.one_minus_oe,
            self.one_minus_cov,
        ]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        MetricsReport {
            ap: v[0],
            one_minus_hl: v[1],
            one_minus_rl: v[2],
            auc: v[3],
            one_minus_oe: v[4],
            one_minus_cov: v[5],
        }
    }
}

/// Label order for one sample: descending score, ties by ascending index.
pub fn label_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Evaluates scores `p` against binary targets `y`.
pub fn evaluate(p: &Matrix, y: &Matrix) -> Result<MetricsReport> {
    let (n, c) = p.shape();
    if n == 0 || c == 0 {
        return Err(Error::invalid("metrics need at least one sample and one label"));
    }
    p.expect_same_shape("evaluate", y)?;
    if !y.as_slice().iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(Error::invalid("labels must be binary"));
    }
    if !p.is_finite() {
        return Err(Error::invalid("scores must be finite"));
    }

    let wrong = p
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .filter(|(&s, &t)| f64::from(s >= 0.5) != t)
        .count();
    let hl = wrong as f64 / (n * c) as f64;

    let (mut ap, mut rl, mut oe, mut cov) = (0.0, 0.0, 0.0, 0.0);
    let mut counted = 0usize;
    let mut rank = vec![0usize; c];
    for i in 0..n {
        let (scores, truth) = (p.row(i), y.row(i));
        let relevant: Vec<usize> = (0..c).filter(|&j| truth[j] == 1.0).collect();
        if relevant.is_empty() {
            continue;
        }
        counted += 1;
        let order = label_order(scores);
        for (pos, &j) in order.iter().enumerate() {
            rank[j] = pos + 1;
        }
        if truth[order[0]] != 1.0 {
            oe += 1.0;
        }
        let deepest = relevant.iter().map(|&j| rank[j]).max().unwrap_or(1);
        cov += (deepest - 1) as f64 / c as f64;

        let mut prec = 0.0;
        for &j in &relevant {
            let above = relevant.iter().filter(|&&q| rank[q] <= rank[j]).count();
            prec += above as f64 / rank[j] as f64;
        }
        ap += prec / relevant.len() as f64;

        let irrelevant = c - relevant.len();
        if irrelevant > 0 {
            let mut bad = 0.0;
            for &j in &relevant {
                for q in (0..c).filter(|&q| truth[q] != 1.0) {
                    if scores[j] < scores[q] {
                        bad += 1.0;
                    } else if scores[j] == scores[q] {
                        bad += 0.5;
                    }
                }
            }
            rl += bad / (relevant.len() * irrelevant) as f64;
        }
    }
    if counted == 0 {
        return Err(Error::invalid("no sample has a relevant label"));
    }
    let m = counted as f64;

    Ok(MetricsReport {
        ap: ap / m,
        one_minus_hl: 1.0 - hl,
        one_minus_rl: 1.0 - rl / m,
        auc: macro_auc(p, y)?,
        one_minus_oe: 1.0 - oe / m,
        one_minus_cov: 1.0 - cov / m,
    })
}

/// Mean over labels with both classes present of the fraction of
/// (positive, negative) sample pairs ordered correctly, ties counting 0.5.
/// When no label qualifies the result is 0.5.
pub fn macro_auc(p: &Matrix, y: &Matrix) -> Result<f64> {
    let (n, c) = p.shape();
    let mut total = 0.0;
    let mut labels = 0usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for j in 0..c {
        let pos = (0..n).filter(|&i| y[(i, j)] == 1.0).count();
        let neg = n - pos;
        if pos == 0 || neg == 0 {
            continue;
        }
        // Mann-Whitney statistic with midranks for ties.
        idx.sort_by(|&a, &b| p[(a, j)].total_cmp(&p[(b, j)]));
        let mut rank_sum = 0.0;
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && p[(idx[end], j)] == p[(idx[start], j)] {
                end += 1;
            }
            let mid = (start + end + 1) as f64 / 2.0;
            let hits = idx[start..end].iter().filter(|&&i| y[(i, j)] == 1.0).count();
            rank_sum += mid * hits as f64;
            start = end;
        }
        let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
        total += u / (pos * neg) as f64;
        labels += 1;
    }
    if labels == 0 {
        return Ok(0.5);
    }
    Ok(total / labels as f64)
}

/// Mean and standard deviation of one metric over repetitions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Population standard deviation (divides by the count).
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot summarize an empty list"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Summary { mean, std: var.sqrt() })
    }
}

impl std::fmt::Display for Summary {
    /// `0.438(0.006)`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}({:.3})", self.mean, self.std)
    }
}

/// Per-metric mean and standard deviation over a set of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub ap: Summary,
    pub one_minus_hl: Summary,
    pub one_minus_rl: Summary,
    pub auc: Summary,
    pub one_minus_oe: Summary,
    pub one_minus_cov: Summary,
}

impl MetricsSummary {
    pub fn from_reports(reports: &[MetricsReport]) -> Result<Self> {
        let col = |k: usize| Summary::of(&reports.iter().map(|r| r.values()[k]).collect::<Vec<_>>());
        Ok(MetricsSummary {
            runs: reports.len(),
            ap: col(0)?,
            one_minus_hl: col(1)?,
            one_minus_rl: col(2)?,
            auc: col(3)?,
            one_minus_oe: col(4)?,
            one_minus_cov: col(5)?,
        })
    }

    pub fn summaries(&self) -> [Summary; 6] {
        [
            self.ap,
            self.one_minus_hl,
            self.one_minus_rl,
            self.auc,
            self.one_minus_oe,
            self.one_minus_cov,
        ]
    }

    pub fn means(&self) -> MetricsReport {
        MetricsReport::from_values(self.summaries().map(|s| s.mean))
    }

    /// The six cells formatted as `mean(std)`.
    pub fn cells(&self) -> [String; 6] {
        self.summaries().map(|s| s.to_string())
    }
}

/// Mean rank of each method across the six metrics; rank 1 is best and tied
/// methods share the mean of the ranks they span.
pub fn average_rank(methods: &[MetricsReport]) -> Result<Vec<f64>> {
    if methods.len() < 2 {
        return Err(Error::invalid("average rank needs at least two methods"));
    }
    let m = methods.len();
    let mut ranks = vec![0.0; m];
    for k in 0..6 {
        let vals: Vec<f64> = methods.iter().map(|r| r.values()[k]).collect();
        for (i, r) in ranks.iter_mut().enumerate() {
            let better = vals.iter().filter(|&&v| v > vals[i]).count();
            let equal = vals.iter().filter(|&&v| v == vals[i]).count();
            *r += better as f64 + (equal as f64 + 1.0) / 2.0;
        }
    }
    Ok(ranks.into_iter().map(|r| r / 6.0).collect())
}

/// Aligned text table with one row per method and one `mean(std)` cell per
/// metric.
pub fn format_table(rows: &[(String, MetricsSummary)]) -> String {
    let mut cells: Vec<Vec<String>> = vec![std::iter::once("method".to_string())
        .chain(METRIC_NAMES.iter().map(|s| s.to_string()))
        .collect()];
    for (name, summary) in rows {
        cells.push(std::iter::once(name.clone()).chain(summary.cells()).collect());
    }
    let widths: Vec<usize> = (0..7)
        .map(|k| cells.iter().map(|r| r[k].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let mut line = format!("{:<w$}", row[0], w = widths[0]);
        for (cell, w) in row[1..].iter().zip(&widths[1..]) {
            let _ = write!(line, "  {cell:>w$}");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
