//! Every differentiable tape operation against central finite differences,
//! on random inputs drawn from [-2, 2].

use adrl::numerics::{grad_check, Matrix, ParamStore, Tape, Var};
use adrl::Result;
use proptest::prelude::*;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

/// Contracts `out` with fixed weights so every output entry gets a distinct
/// upstream gradient.
fn contract(t: &mut Tape, out: Var) -> Result<Var> {
    let (r, c) = t.shape(out);
    let w = Matrix::from_fn(r, c, |i, j| 0.3 + 0.17 * i as f64 - 0.11 * j as f64);
    let w = t.input(w);
    let prod = t.mul(out, w)?;
    t.sum(prod)
}

/// Gradcheck of `f(x, y)` with both operands as parameters.
fn check2(x: &Matrix, y: &Matrix, f: impl Fn(&mut Tape, Var, Var) -> Result<Var>) -> std::result::Result<(), TestCaseError> {
    let mut store = ParamStore::new();
    let xid = store.add("x", x.clone());
    let yid = store.add("y", y.clone());
    let report = grad_check(
        |t: &mut Tape, s: &ParamStore| {
            let (a, b) = (t.param(s, xid), t.param(s, yid));
            let out = f(t, a, b)?;
            contract(t, out)
        },
        &store,
        STEP,
        TOL,
    )
    .unwrap();
    prop_assert!(report.passed(), "max rel error {:e}: {:?}", report.max_rel_error(), report.params);
    Ok(())
}

fn check1(x: &Matrix, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> std::result::Result<(), TestCaseError> {
    check2(x, &Matrix::zeros(1, 1), |t, a, _| f(t, a))
}

fn away_from(x: &Matrix, points: &[f64]) -> bool {
    x.as_slice().iter().all(|v| points.iter().all(|p| (v - p).abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_family(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 4)) {
        check2(&a, &b, |t, x, y| t.matmul(x, y))?;
        check2(&a, &c, |t, x, y| t.matmul_nt(x, y))?;
        check1(&a, |t, x| t.transpose(x))?;
    }

    #[test]
    fn elementwise_binary(a in matrix(3, 3), b in matrix(3, 3)) {
        check2(&a, &b, |t, x, y| t.add(x, y))?;
        check2(&a, &b, |t, x, y| t.sub(x, y))?;
        check2(&a, &b, |t, x, y| t.mul(x, y))?;
    }

    #[test]
    fn broadcasts(a in matrix(4, 3), row in matrix(1, 3), col in matrix(4, 1), u in matrix(3, 1)) {
        check2(&a, &row, |t, x, r| t.add_row(x, r))?;
        check2(&a, &row, |t, x, r| t.mul_row(x, r))?;
        check2(&a, &col, |t, x, c| t.mul_col(x, c))?;
        check2(&col, &u, |t, x, y| t.outer_add(x, y))?;
    }

    #[test]
    fn smooth_unary(a in matrix(3, 4)) {
        check1(&a, |t, x| t.scale(x, -1.7))?;
        check1(&a, |t, x| t.add_scalar(x, 0.4))?;
        check1(&a, |t, x| t.neg(x))?;
        check1(&a, |t, x| t.sigmoid(x))?;
        check1(&a, |t, x| t.softplus(x))?;
        check1(&a, |t, x| t.exp(x))?;
        check1(&a, |t, x| t.square(x))?;
    }

    #[test]
    fn positive_domain(a in matrix(3, 4)) {
        // shift into [0.5, 4.5] so log, sqrt and recip stay smooth
        let pos = a.map(|v| v + 2.5);
        check1(&pos, |t, x| t.log_clamped(x, 1e-12))?;
        check1(&pos, |t, x| t.sqrt(x))?;
        check1(&pos, |t, x| t.recip(x))?;
    }

    #[test]
    fn piecewise(a in matrix(3, 4)) {
        prop_assume!(away_from(&a, &[0.0, -0.5, 1.0]));
        check1(&a, |t, x| t.relu(x))?;
        check1(&a, |t, x| t.leaky_relu(x, 0.2))?;
        check1(&a, |t, x| t.clamp(x, -0.5, 1.0))?;
    }

    #[test]
    fn reductions_and_reshapes(a in matrix(4, 3), b in matrix(4, 2)) {
        check1(&a, |t, x| t.sum(x))?;
        check1(&a, |t, x| t.mean(x))?;
        check1(&a, |t, x| t.sum_rows(x))?;
        check2(&a, &b, |t, x, y| t.concat_cols(x, y))?;
        check1(&a, |t, x| t.select_rows(x, &[3, 0, 0, 2]))?;
    }

    #[test]
    fn normalize_and_softmax(a in matrix(4, 4)) {
        prop_assume!((0..4).all(|i| a.row(i).iter().map(|v| v * v).sum::<f64>() > 1e-2));
        check1(&a, |t, x| t.normalize_rows(x))?;
        let mask = Matrix::from_fn(4, 4, |i, j| f64::from((i + j) % 3 != 1));
        check1(&a, |t, x| t.masked_softmax(x, &mask))?;
    }

    #[test]
    fn manifold(z in matrix(5, 3), p in matrix(5, 2)) {
        prop_assume!((0..5).all(|i| z.row(i).iter().map(|v| v * v).sum::<f64>() > 1e-2));
        check2(&z, &p, |t, a, b| {
            let zn = t.normalize_rows(a)?;
            let sp = t.sigmoid(b)?;
            let pn = t.normalize_rows(sp)?;
            t.manifold_loss(zn, pn)
        })?;
    }

    #[test]
    fn manifold_matches_dense_formula(z in matrix(6, 3), p in matrix(6, 4)) {
        let zn = z.normalize_rows();
        let pn = p.map(|v| 1.0 / (1.0 + (-v).exp())).normalize_rows();
        let mut t = Tape::new();
        let (a, b) = (t.input(zn.clone()), t.input(pn.clone()));
        let l = t.manifold_loss(a, b).unwrap();
        let n = 6;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dz: f64 = zn.row(i).iter().zip(zn.row(j)).map(|(x, y)| x * y).sum();
                let dp: f64 = pn.row(i).iter().zip(pn.row(j)).map(|(x, y)| x * y).sum();
                let s = (1.0 + dz) / 2.0;
                let tt = dp.clamp(0.0, 1.0);
                let lg = |x: f64| x.clamp(1e-12, 1.0).ln();
                total += tt * lg(s) + (1.0 - tt) * lg(1.0 - s);
            }
        }
        let dense = -total / (n * (n - 1)) as f64;
        prop_assert!((t.scalar(l) - dense).abs() < 1e-12, "{} vs {}", t.scalar(l), dense);
    }
}
