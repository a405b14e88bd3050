//! Helpers shared by several integration test targets.

#![allow(dead_code)]

use adrl::disentangle::{draw_shift, jsd_mi_estimate, precision_fuse};
use adrl::data::{apply_missingness, generate_synthetic, MissingnessSpec};
use adrl::harness::{repeat_protocol, TrainConfig};
use adrl::layers::Mlp;
use adrl::metrics::{MetricsReport, MetricsSummary};
use adrl::numerics::{forward_backward, Matrix, ParamStore, RngStream, Tape};

pub const SCORER_STEPS: usize = 200;

/// Trains a fresh scorer for `steps` full-batch steps to maximize the JSD
/// estimate between the rows of `a` and `b`, then returns the estimate
/// under a new negative-pair shift.
pub fn trained_estimate(a: &Matrix, b: &Matrix, steps: usize, lr: f64, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 40);
    let mut store = ParamStore::new();
    let scorer = Mlp::new(&mut store, "scorer", a.cols() + b.cols(), 16, 1, &mut rng);
    let n = a.rows();
    for _ in 0..steps {
        let shift = draw_shift(&mut rng, n).unwrap();
        forward_backward(&mut store, |t, s| {
            let (x, y) = (t.input(a.clone()), t.input(b.clone()));
            let est = jsd_mi_estimate(t, s, &scorer, x, y, &shift)?;
            t.neg(est)
        })
        .unwrap();
        store.sgd_step(lr).unwrap();
    }
    let shift = draw_shift(&mut rng, n).unwrap();
    let mut t = Tape::new();
    let (x, y) = (t.input(a.clone()), t.input(b.clone()));
    let est = jsd_mi_estimate(&mut t, &store, &scorer, x, y, &shift).unwrap();
    t.scalar(est)
}

/// Trained estimates for dependent pairs `(X, X + 0.1·η)` and for
/// independent Gaussian pairs, each with its own scorer.
pub fn dependent_vs_independent(seed: u64) -> (f64, f64) {
    let (n, d) = (256, 4);
    let mut rng = RngStream::new(seed, 41);
    let x = rng.normal_matrix(n, d);
    let noise = rng.normal_matrix(n, d);
    let y = Matrix::from_fn(n, d, |i, j| x[(i, j)] + 0.1 * noise[(i, j)]);
    let indep_a = rng.normal_matrix(n, d);
    let indep_b = rng.normal_matrix(n, d);
    (
        trained_estimate(&x, &y, SCORER_STEPS, 1.0, seed),
        trained_estimate(&indep_a, &indep_b, SCORER_STEPS, 1.0, seed),
    )
}

/// JSD estimate with every scorer weight set to zero, so `T ≡ 0`.
pub fn zero_scorer_estimate(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 42);
    let mut store = ParamStore::new();
    let scorer = Mlp::new(&mut store, "scorer", 6, 8, 1, &mut rng);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (r, c) = store.value(id).shape();
        store.get_mut(id).value = Matrix::zeros(r, c);
    }
    let (a, b) = (rng.normal_matrix(10, 3), rng.normal_matrix(10, 3));
    let shift = draw_shift(&mut rng, 10).unwrap();
    let mut t = Tape::new();
    let (x, y) = (t.input(a), t.input(b));
    let est = jsd_mi_estimate(&mut t, &store, &scorer, x, y, &shift).unwrap();
    t.scalar(est)
}

/// Number of fused entries outside the interval spanned by the sampled and
/// initial entries, over `draws` random draws with variances spread across
/// both sides of 1.
pub fn fusion_violations(draws: usize, seed: u64) -> usize {
    let mut rng = RngStream::new(seed, 43);
    let mut bad = 0;
    for _ in 0..draws {
        let (n, d) = (rng.int_inclusive(1, 4), rng.int_inclusive(1, 5));
        let sampled = rng.normal_matrix(n, d).map(|v| 3.0 * v);
        let initial = rng.normal_matrix(n, d).map(|v| 3.0 * v);
        let variance = Matrix::from_fn(n, d, |_, _| (rng.uniform_in(-4.0, 4.0)).exp());
        let mut t = Tape::new();
        let (s, i, v) = (t.input(sampled.clone()), t.input(initial.clone()), t.input(variance));
        let fused = precision_fuse(&mut t, s, i, v).unwrap();
        let fused = t.value(fused);
        for r in 0..n {
            for c in 0..d {
                let (lo, hi) = (sampled[(r, c)].min(initial[(r, c)]), sampled[(r, c)].max(initial[(r, c)]));
                let f = fused[(r, c)];
                if !(lo..=hi).contains(&f) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Problems with the view masks at FMR 0.9 on 1000 two-view samples: empty
/// samples, wrong per-view drop counts, or masks that change between two
/// calls with the same seed. Empty means the protocol holds.
pub fn missingness_problems(seed: u64) -> Vec<String> {
    let ds = generate_synthetic(1000, 2, 4, 3, 2, 0.1, seed).unwrap().dataset;
    let spec = MissingnessSpec::new(0.9, 0.5, seed).unwrap();
    let a = apply_missingness(&ds, &spec).unwrap();
    let b = apply_missingness(&ds, &spec).unwrap();
    let mut problems = Vec::new();
    let empty = (0..1000).filter(|&i| (0..2).all(|v| !a.has_view(i, v))).count();
    if empty > 0 {
        problems.push(format!("{empty} samples lost every view"));
    }
    for v in 0..2 {
        let dropped = (0..1000).filter(|&i| !a.has_view(i, v)).count();
        // 2 × 900 requested drops cannot all fit, so the repair returns some
        if dropped > 900 {
            problems.push(format!("view {v} dropped {dropped} rows, more than 900"));
        }
    }
    if a.view_mask != b.view_mask || a.label_mask != b.label_mask {
        problems.push("masks differ between calls with one seed".into());
    }
    let other = apply_missingness(&ds, &MissingnessSpec::new(0.9, 0.5, seed + 1).unwrap()).unwrap();
    if other.view_mask == a.view_mask {
        problems.push("a different seed gave the same view mask".into());
    }
    problems
}

/// Table cells from hand-built reports, plus cells from a short
/// repetition protocol, each compared with a hand-formatted mean(std).
pub fn reporting_problems() -> Vec<String> {
    let mut problems = Vec::new();
    let reports = [
        MetricsReport::from_values([0.4375, 0.91, 0.8, 0.70, 0.6, 0.25]),
        MetricsReport::from_values([0.4385, 0.93, 0.8, 0.74, 0.6, 0.75]),
    ];
    let cells = MetricsSummary::from_reports(&reports).unwrap().cells();
    let want = ["0.438(0.001)", "0.920(0.010)", "0.800(0.000)", "0.720(0.020)", "0.600(0.000)", "0.500(0.250)"];
    for (got, want) in cells.iter().zip(want) {
        if got != want {
            problems.push(format!("hand-built cell {got}, expected {want}"));
        }
    }

    let source = generate_synthetic(60, 2, 3, 3, 2, 0.1, 0).unwrap().dataset;
    let cfg = TrainConfig {
        d: 4,
        hidden: 8,
        heads: 2,
        k: 3,
        epochs: 2,
        repetitions: 3,
        ..TrainConfig::default()
    };
    let outcome = repeat_protocol(&source, &cfg).unwrap();
    if outcome.reports.len() != 3 {
        problems.push(format!("{} repetitions reported, expected 3", outcome.reports.len()));
    }
    let cells = outcome.summary.cells();
    for m in 0..6 {
        let values: Vec<f64> = outcome.reports.iter().map(|r| r.values()[m]).collect();
        let mean = values.iter().sum::<f64>() / 3.0;
        let std = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        let want = format!("{mean:.3}({std:.3})");
        if cells[m] != want {
            problems.push(format!("protocol cell {m}: {} vs {want}", cells[m]));
        }
    }
    problems
}
