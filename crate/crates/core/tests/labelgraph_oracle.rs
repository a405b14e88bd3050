//! Label co-occurrence against direct counting, and the graph attention
//! layer against a step-by-step evaluation of its formulas.

use adrl::labelgraph::{cooccurrence, neighborhood_mask, Gat};
use adrl::numerics::{Matrix, ParamStore, RngStream, Tape};
use proptest::prelude::*;

const SLOPE: f64 = 0.2;

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        SLOPE * x
    }
}

fn binary(rows: usize, cols: usize, density: f64, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| f64::from(rng.uniform() < density))
}

#[test]
fn cooccurrence_matches_counts() {
    check_cooccurrence_matches_counts();
}

pub fn check_cooccurrence_matches_counts() {
    for case in 0..40 {
        let mut rng = RngStream::new(case, 14);
        let (n, c) = (8, 4);
        let y = binary(n, c, 0.4, &mut rng);
        let g = binary(n, c, 0.7, &mut rng);
        let rows: Vec<usize> = (0..n).filter(|_| rng.uniform() < 0.8).collect();
        let q = cooccurrence(&y, &g, &rows).unwrap();
        for i in 0..c {
            let seen = rows.iter().filter(|&&k| y[(k, i)] == 1.0 && g[(k, i)] == 1.0).count();
            for j in 0..c {
                let both = rows
                    .iter()
                    .filter(|&&k| y[(k, i)] == 1.0 && g[(k, i)] == 1.0 && y[(k, j)] == 1.0 && g[(k, j)] == 1.0)
                    .count();
                let want = if seen == 0 { 0.0 } else { both as f64 / seen as f64 };
                assert!((q[(i, j)] - want).abs() <= 1e-12, "case {case} Q[{i},{j}]");
                assert!((0.0..=1.0).contains(&q[(i, j)]));
            }
            if seen > 0 {
                assert_eq!(q[(i, i)], 1.0, "case {case}: observed label {i} lacks self co-occurrence");
            } else {
                assert!(q.row(i).iter().all(|&v| v == 0.0), "case {case}: unobserved label {i}");
            }
        }
        let mut reversed = rows.clone();
        reversed.reverse();
        assert_eq!(cooccurrence(&y, &g, &reversed).unwrap(), q);
    }
}

#[test]
fn perfect_cooccurrence() {
    check_perfect_cooccurrence();
}

pub fn check_perfect_cooccurrence() {
    let y = Matrix::from_rows(&[[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 0.0]]);
    let q = cooccurrence(&y, &Matrix::ones(3, 3), &[0, 1, 2]).unwrap();
    assert_eq!(q[(0, 1)], 1.0);
    assert_eq!(q[(2, 0)], 1.0);
    assert_eq!(q[(1, 0)], 2.0 / 3.0);
}

struct Fixture {
    store: ParamStore,
    gat: Gat,
    z: Matrix,
    mask: Matrix,
}

fn fixture(seed: u64, c: usize, d: usize, heads: usize) -> Fixture {
    let mut rng = RngStream::new(seed, 15);
    let mut store = ParamStore::new();
    let gat = Gat::new(&mut store, "gat", d, heads, SLOPE, &mut rng);
    let y = binary(12, c, 0.4, &mut rng);
    // last label never observed, so its row needs the forced self-loop
    let g = Matrix::from_fn(12, c, |_, j| f64::from(j + 1 < c));
    let mask = neighborhood_mask(&cooccurrence(&y, &g, &(0..12).collect::<Vec<_>>()).unwrap());
    Fixture {
        store,
        gat,
        z: rng.normal_matrix(c, d),
        mask,
    }
}

/// Direct evaluation: returns (alpha, output).
fn oracle(f: &Fixture) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (c, d) = f.z.shape();
    let a = f.store.value(f.gat.attention);
    let wb = f.store.value(f.gat.projection);
    let mv = |w: &Matrix, x: &[f64]| -> Vec<f64> { (0..d).map(|r| (0..d).map(|s| w[(r, s)] * x[s]).sum()).collect() };
    let h: Vec<Vec<f64>> = (0..c).map(|i| mv(wb, f.z.row(i))).collect();
    let mut alpha = vec![vec![0.0; c]; c];
    for i in 0..c {
        let nbrs: Vec<usize> = (0..c).filter(|&j| f.mask[(i, j)] > 0.0).collect();
        let e: Vec<f64> = nbrs
            .iter()
            .map(|&j| {
                let cat: Vec<f64> = h[i].iter().chain(&h[j]).copied().collect();
                leaky((0..2 * d).map(|r| a[(r, 0)] * cat[r]).sum())
            })
            .collect();
        let total: f64 = e.iter().map(|v| v.exp()).sum();
        for (&j, v) in nbrs.iter().zip(&e) {
            alpha[i][j] = v.exp() / total;
        }
    }
    let k = f.gat.heads.len() as f64;
    let mut out = vec![vec![0.0; d]; c];
    for (i, row) in out.iter_mut().enumerate() {
        let mut acc = vec![0.0; d];
        for &head in &f.gat.heads {
            let w = f.store.value(head);
            for j in 0..c {
                if alpha[i][j] == 0.0 {
                    continue;
                }
                for (x, m) in acc.iter_mut().zip(mv(w, f.z.row(j))) {
                    *x += alpha[i][j] * m;
                }
            }
        }
        *row = acc.iter().map(|x| leaky(x / k)).collect();
    }
    (alpha, out)
}

#[test]
fn gat_matches_step_by_step() {
    check_gat_matches_step_by_step();
}

pub fn check_gat_matches_step_by_step() {
    for seed in 0..10 {
        let f = fixture(seed, 5, 4, 2);
        let mut t = Tape::new();
        let z = t.input(f.z.clone());
        let out = f.gat.forward(&mut t, &f.store, z, &f.mask).unwrap();
        let (alpha, want) = oracle(&f);
        let got_alpha = t.value(out.coefficients);
        let got = t.value(out.output);
        for i in 0..5 {
            for j in 0..5 {
                assert!((got_alpha[(i, j)] - alpha[i][j]).abs() <= 1e-12, "seed {seed} alpha[{i},{j}]");
            }
            assert!((got_alpha.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for r in 0..4 {
                assert!((got[(i, r)] - want[i][r]).abs() <= 1e-12, "seed {seed} out[{i},{r}]");
            }
        }
        assert_eq!(got_alpha[(4, 4)], 1.0, "unobserved label attends only to itself");
    }
}

#[test]
fn uniform_attention_averages_neighbors() {
    let mut rng = RngStream::new(0, 0);
    let mut store = ParamStore::new();
    let gat = Gat::new(&mut store, "gat", 2, 1, SLOPE, &mut rng);
    store.get_mut(gat.attention).value = Matrix::zeros(4, 1);
    store.get_mut(gat.projection).value = Matrix::identity(2);
    store.get_mut(gat.heads[0]).value = Matrix::identity(2);
    let z = Matrix::from_rows(&[[1.0, -3.0], [3.0, 1.0]]);
    let mut t = Tape::new();
    let zv = t.input(z);
    let out = gat.forward(&mut t, &store, zv, &Matrix::ones(2, 2)).unwrap();
    assert_eq!(t.value(out.coefficients).as_slice(), &[0.5; 4]);
    assert_eq!(t.value(out.output).row(0), &[2.0, leaky(-1.0)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..10_000, c in 2usize..7, d in 1usize..5, heads in 1usize..4) {
        let f = fixture(seed, c, d, heads);
        let mut t = Tape::new();
        let z = t.input(f.z.clone());
        let out = f.gat.forward(&mut t, &f.store, z, &f.mask).unwrap();
        let alpha = t.value(out.coefficients);
        for i in 0..c {
            let row = alpha.row(i);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for j in 0..c {
                if f.mask[(i, j)] == 0.0 {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
        }
    }
}
