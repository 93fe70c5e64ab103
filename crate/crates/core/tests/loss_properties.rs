use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setloss::autodiff::{logsumexp_axis, softmax_axis, Axis, Matrix, Tape};
use setloss::losses::{
    flattened_cross_entropy, hausdorff_distance, loss_node, set_average_distance, set_cross_entropy, LossKind,
    ObjectSet, Reduce, DEFAULT_EPSILON,
};

const EPS: f64 = DEFAULT_EPSILON;

/// Plain-loop cross entropy between two rows, clipped the same way.
fn naive_h(x: &[f64], y: &[f64]) -> f64 {
    let mut h = 0.0;
    for k in 0..x.len() {
        let p = y[k].clamp(EPS, 1.0 - EPS);
        let q = (1.0 - y[k]).clamp(EPS, 1.0 - EPS);
        h -= x[k] * p.ln() + (1.0 - x[k]) * q.ln();
    }
    h
}

fn naive_costs(x: &Matrix, y: &Matrix) -> Vec<Vec<f64>> {
    (0..x.rows()).map(|i| (0..y.rows()).map(|j| naive_h(x.row(i), y.row(j))).collect()).collect()
}

fn naive_sce(x: &Matrix, y: &Matrix) -> f64 {
    naive_costs(x, y).iter().map(|row| -row.iter().map(|h| (-h).exp()).sum::<f64>().ln()).sum()
}

fn naive_avg_sum(x: &Matrix, y: &Matrix) -> f64 {
    naive_costs(x, y).iter().map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min)).sum()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn set(m: &Matrix) -> ObjectSet {
    ObjectSet::new(m.clone()).unwrap()
}

prop_compose! {
    fn pair_with_perms()(n in 1usize..=8, f in 1usize..=8)
        (x in prop::collection::vec(0.0f64..=1.0, n * f),
         y in prop::collection::vec(0.0f64..=1.0, n * f),
         pi in Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
         sigma in Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
         n in Just(n), f in Just(f))
        -> (Matrix, Matrix, Vec<usize>, Vec<usize>)
    {
        (Matrix::from_vec(n, f, x).unwrap(), Matrix::from_vec(n, f, y).unwrap(), pi, sigma)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn set_losses_ignore_row_order((x, y, pi, sigma) in pair_with_perms()) {
        let (px, sy) = (set(&x.permute_rows(&pi)), set(&y.permute_rows(&sigma)));
        let (x, y) = (set(&x), set(&y));
        for kind in [LossKind::Sce, LossKind::SetAverage(Reduce::Mean), LossKind::SetAverage(Reduce::Sum), LossKind::Hausdorff] {
            let a = kind.evaluate(&x, &y, EPS).unwrap();
            let b = kind.evaluate(&px, &sy, EPS).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{kind}: {a} vs {b}");
        }
        let a = flattened_cross_entropy(&x, &y, EPS).unwrap();
        let b = flattened_cross_entropy(&x.permuted(&pi), &y.permuted(&pi), EPS).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn losses_match_plain_loop_oracles((x, y, _pi, _sigma) in pair_with_perms()) {
        let (xs, ys) = (set(&x), set(&y));
        let sce = set_cross_entropy(&xs, &ys, EPS).unwrap();
        prop_assert!((sce - naive_sce(&x, &y)).abs() <= 1e-9 * sce.abs().max(1.0));
        let avg = set_average_distance(&xs, &ys, EPS, Reduce::Sum).unwrap();
        prop_assert!((avg - naive_avg_sum(&x, &y)).abs() <= 1e-9 * avg.abs().max(1.0));
    }

    #[test]
    fn inequality_chain((x, y, _pi, _sigma) in pair_with_perms()) {
        let n = x.rows() as f64;
        let (x, y) = (set(&x), set(&y));
        let sce = set_cross_entropy(&x, &y, EPS).unwrap();
        let mean = set_average_distance(&x, &y, EPS, Reduce::Mean).unwrap();
        let sum = set_average_distance(&x, &y, EPS, Reduce::Sum).unwrap();
        let flat = flattened_cross_entropy(&x, &y, EPS).unwrap();
        let haus = hausdorff_distance(&x, &y, EPS).unwrap();
        prop_assert!(sce <= n * mean + 1e-9);
        prop_assert!((n * mean - sum).abs() < 1e-9 * sum.max(1.0));
        prop_assert!(sum <= flat + 1e-9);
        prop_assert!(mean <= haus + 1e-9);
    }

    #[test]
    fn logsumexp_lies_between_max_and_max_plus_log_len(
        r in 1usize..=6, c in 1usize..=6, seed in any::<u64>(), spread in 0.1f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(r, c, &mut rng).map(|v| (v - 0.5) * spread);
        for (axis, len) in [(Axis::Row, c), (Axis::Col, r)] {
            let lse = logsumexp_axis(&m, axis).unwrap();
            for k in 0..lse.len() {
                let line: Vec<f64> = match axis {
                    Axis::Row => m.row(k).to_vec(),
                    Axis::Col => (0..r).map(|i| m.get(i, k)).collect(),
                };
                let max = line.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = lse.data()[k];
                prop_assert!(v >= max - 1e-12 && v <= max + (len as f64).ln() + 1e-12);
            }
            let s = softmax_axis(&m, Axis::Row).unwrap();
            for row in s.row_iter() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let mut tape = Tape::new();
        let a = tape.constant(m);
        let s = tape.sigmoid(a);
        prop_assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn min_routes_the_whole_gradient_to_one_entry(
        r in 1usize..=6, c in 1usize..=6, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // coarse values so ties occur
        let m = random_matrix(r, c, &mut rng).map(|v| (v * 3.0).floor());
        let w = random_matrix(r, 1, &mut rng);
        let mut tape = Tape::new();
        let a = tape.param(m.clone());
        let mins = tape.min(a, Axis::Row).unwrap();
        let wn = tape.constant(w.clone());
        let p = tape.mul(mins, wn).unwrap();
        let root = tape.sum_all(p);
        let g = tape.backward(root).unwrap().wrt(a, &m);
        for i in 0..r {
            let row = m.row(i);
            let lowest = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = row.iter().position(|&v| v == lowest).unwrap();
            for j in 0..c {
                let expect = if j == first { w.get(i, 0) } else { 0.0 };
                prop_assert_eq!(g.get(i, j), expect);
            }
        }
    }
}

#[test]
fn worked_example_exponentials() {
    let x = ObjectSet::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
    let y1 = ObjectSet::from_rows(&[[0.1, 0.5], [0.1, 0.5]]).unwrap();
    let y2 = ObjectSet::from_rows(&[[0.1, 0.5], [0.9, 0.5]]).unwrap();
    assert!(((-set_cross_entropy(&x, &y1, EPS).unwrap()).exp() - 0.81).abs() < 1e-6);
    assert!(((-set_cross_entropy(&x, &y2, EPS).unwrap()).exp() - 0.25).abs() < 1e-6);
    for y in [&y1, &y2] {
        let a = set_average_distance(&x, y, EPS, Reduce::Sum).unwrap();
        assert!(((-a).exp() - 0.2025).abs() < 1e-6);
    }
}

/// Derivative of a loss along the `y` coordinate of `{[0, 0.5], [y, 0.5]}`
/// by autodiff and by central differences of the plain-loop oracle.
fn pathology_gradients(kind: LossKind, y: f64) -> (f64, f64) {
    let x = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
    let out = |v: f64| Matrix::from_rows(&[[0.0, 0.5], [v, 0.5]]).unwrap();
    let mut tape = Tape::new();
    let leaf = tape.param(out(y));
    let root = loss_node(&mut tape, kind, &x, leaf, EPS).unwrap();
    let auto = tape.backward(root).unwrap().wrt(leaf, &out(y)).get(1, 0);
    let oracle = |v: f64| match kind {
        LossKind::Sce => naive_sce(&x, &out(v)),
        _ => naive_avg_sum(&x, &out(v)),
    };
    let h = 1e-6;
    (auto, (oracle(y + h) - oracle(y - h)) / (2.0 * h))
}

#[test]
fn set_average_is_flat_along_the_unmatched_row() {
    for y in [0.1, 0.5, 0.9] {
        let (auto, numeric) = pathology_gradients(LossKind::SetAverage(Reduce::Sum), y);
        assert!(auto.abs() < 1e-9 && numeric.abs() < 1e-9, "y = {y}: {auto} {numeric}");
    }
    let (auto, numeric) = pathology_gradients(LossKind::Sce, 0.9);
    assert!(auto > 0.0 && numeric > 0.0);
    assert!((auto - numeric).abs() < 1e-6);
}

#[test]
fn n_equal_one_makes_sce_and_average_coincide_and_larger_sets_separate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut strict, mut multi) = (0, 0);
    for _ in 0..1000 {
        let (n, f) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (x, y) = (set(&random_matrix(n, f, &mut rng)), set(&random_matrix(n, f, &mut rng)));
        let sce = set_cross_entropy(&x, &y, EPS).unwrap();
        let sum = set_average_distance(&x, &y, EPS, Reduce::Sum).unwrap();
        if n == 1 {
            assert!((sce - sum).abs() < 1e-9);
        } else {
            multi += 1;
            strict += usize::from(sce < sum - 1e-9);
        }
    }
    assert!(strict * 100 >= 99 * multi, "{strict} of {multi}");
}

#[test]
fn permuted_binary_target_beats_random_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows = [[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 0.0], [1.0, 1.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]];
    let x = ObjectSet::from_rows(&rows).unwrap();
    let n = rows.len();
    let best = set_cross_entropy(&x, &x.permuted(&[2, 0, 3, 1]), EPS).unwrap();
    // every other row costs at least one clipped mismatch: -log(1 + (n-1) eps) from below
    let floor = -(n as f64) * (1.0 + (n as f64 - 1.0) * EPS).ln();
    assert!(best >= floor - 1e-12 && best <= 1e-5, "{best}");
    for _ in 0..1000 {
        let y = set(&random_matrix(n, 4, &mut rng));
        assert!(best <= set_cross_entropy(&x, &y, EPS).unwrap());
    }
}
