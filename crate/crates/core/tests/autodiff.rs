mod common;

use common::max_fd_error;
use envisions_core::autodiff::{log_softmax, AutodiffError, Elementwise, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let values = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::new(vec![rows, cols], values).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.leaf(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let id = tape.leaf(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let c = tape.matmul(a, id).unwrap();
    assert_eq!(tape.value(c).values(), &[1.0, 2.0, 3.0, 4.0]);

    let row = tape.leaf(mat(&[&[1.0, 2.0]]));
    let col = tape.leaf(mat(&[&[3.0], &[4.0]]));
    let dot = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(dot).values(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(2, 3));
    let b = tape.leaf(Tensor::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::Shape {
            op: "matmul",
            left: vec![2, 3],
            right: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a = mat(&[&[1.0, 2.0]]);
    let b = mat(&[&[3.0], &[4.0]]);
    let mut tape = Tape::new();
    let va = tape.leaf(a.clone().with_grad());
    let vb = tape.leaf(b.clone());
    let c = tape.matmul(va, vb).unwrap();
    let s = tape.sum(c);
    let grads = tape.backward(s).unwrap();
    let g = grads.get(va).unwrap().values().to_vec();

    // Oracle: central differences of sum(A x B) with respect to each entry of A.
    let f = |a0: f64, a1: f64| a0 * 3.0 + a1 * 4.0;
    let h = 1e-5;
    let fd = [
        (f(1.0 + h, 2.0) - f(1.0 - h, 2.0)) / (2.0 * h),
        (f(1.0, 2.0 + h) - f(1.0, 2.0 - h)) / (2.0 * h),
    ];
    for (analytic, numeric) in g.iter().zip(fd) {
        assert!((analytic - numeric).abs() < 1e-8);
    }
    assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] - 4.0).abs() < 1e-12);
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::scalar(0.0));
    let t = tape.tanh(z);
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(t).values(), &[0.0]);
    assert_eq!(tape.value(s).values(), &[0.5]);

    let x = tape.leaf(Tensor::scalar(0.3).with_grad());
    let y = tape.tanh(x);
    let g = tape.backward(y).unwrap();
    let expected = 1.0 - 0.3f64.tanh().powi(2);
    let fd = ((0.3f64 + 1e-5).tanh() - (0.3f64 - 1e-5).tanh()) / 2e-5;
    let got = g.get(x).unwrap().values()[0];
    assert!((got - expected).abs() < 1e-12);
    assert!((got - fd).abs() < 1e-9);
}

#[test]
fn elementwise_shape_and_arity_errors() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(2, 2));
    let b = tape.leaf(Tensor::zeros(3, 1));
    assert!(matches!(tape.add(a, b), Err(AutodiffError::Shape { .. })));
    assert!(matches!(
        tape.elementwise(Elementwise::Tanh, &[a, b]),
        Err(AutodiffError::Contract(_))
    ));
    // Scalar operands broadcast.
    let s = tape.leaf(Tensor::scalar(2.0));
    let m = tape.mul(a, s).unwrap();
    assert_eq!(tape.value(m).shape(), &[2, 2]);
}

#[test]
fn embedding_lookup_examples() {
    let table = mat(&[&[0.0, 0.1], &[1.0, 1.1], &[2.0, 2.1]]);
    let mut tape = Tape::new();
    let t = tape.leaf(table.clone());
    let rows = tape.embedding_lookup(t, &[2, 0]).unwrap();
    assert_eq!(tape.value(rows).values(), &[2.0, 2.1, 0.0, 0.1]);

    let empty = tape.embedding_lookup(t, &[]).unwrap();
    assert_eq!(tape.value(empty).shape(), &[0, 2]);

    let err = tape.embedding_lookup(t, &[1, 3]).unwrap_err();
    assert_eq!(err, AutodiffError::Index { id: 3, bound: 3 });
}

#[test]
fn embedding_gradient_sums_repeated_rows() {
    let table = mat(&[&[0.5, -0.2], &[1.0, 0.3], &[-0.7, 0.9]]);
    let weights = mat(&[&[1.5, -2.0], &[0.25, 4.0]]);
    let build = |tape: &mut Tape, v: &[envisions_core::autodiff::Var]| {
        let rows = tape.embedding_lookup(v[0], &[1, 1]).unwrap();
        let w = tape.leaf(weights.clone());
        let m = tape.mul(rows, w).unwrap();
        tape.sum(m)
    };
    assert!(max_fd_error(&[table.clone()], build) < 1e-4);

    let mut tape = Tape::new();
    let t = tape.leaf(table.with_grad());
    let loss = build(&mut tape, &[t]);
    let g = tape.backward(loss).unwrap();
    // Row 1 receives the summed upstream gradient; other rows none.
    assert_eq!(g.get(t).unwrap().values(), &[0.0, 0.0, 1.75, 2.0, 0.0, 0.0]);
}

#[test]
fn log_softmax_nll_examples() {
    let mut tape = Tape::new();
    let l = tape.leaf(mat(&[&[0.0, 0.0]]));
    let (_, lp) = tape.log_softmax_nll(l, &[0]).unwrap();
    assert!((lp[0] - 0.5f64.ln()).abs() < 1e-15);

    let big = tape.leaf(mat(&[&[1000.0, 0.0]]));
    let (loss, lp) = tape.log_softmax_nll(big, &[0]).unwrap();
    assert!(lp[0].abs() < 1e-300 || lp[0].abs() < 1e-12);
    assert!(tape.value(loss).is_finite());

    assert!(matches!(
        tape.log_softmax_nll(l, &[]),
        Err(AutodiffError::Precondition(_))
    ));
    assert!(tape.log_softmax_nll(l, &[2]).is_err());
}

#[test]
fn log_softmax_nll_matches_high_precision_oracle() {
    // Frozen from a 50-digit evaluation of -sum(l[t] - logsumexp(l)).
    let logits = mat(&[
        &[0.37, -1.92, 1.05, 0.004, -0.66],
        &[1.7, 1.69, -0.25, -1.11, 0.83],
        &[-0.05, 0.41, -1.38, 1.99, -0.77],
    ]);
    let expected_logp = [
        -0.7372245419760615142750217,
        -0.9599172815890256120314043,
        -3.120248202589737188869643,
    ];
    let expected_loss = 4.817390026154824315176069;

    let mut tape = Tape::new();
    let l = tape.leaf(logits);
    let (loss, lp) = tape.log_softmax_nll(l, &[2, 0, 4]).unwrap();
    for (got, want) in lp.iter().zip(expected_logp) {
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }
    assert!((tape.value(loss).values()[0] - expected_loss).abs() < 1e-13);
}

#[test]
fn log_softmax_rows_normalise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let row: Vec<f64> = (0..17).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let total: f64 = log_softmax(&row).iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0).with_grad());
    let p = tape.leaf(Tensor::scalar(7.0).with_grad());
    let sq = tape.mul(x, x).unwrap();
    let g = tape.backward(sq).unwrap();
    assert_eq!(g.get(x).unwrap().values(), &[6.0]);
    assert_eq!(g.get(p).unwrap().values(), &[0.0]);
}

#[test]
fn backward_rejects_second_pass_and_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(2, 2).with_grad());
    let t = tape.tanh(x);
    assert!(matches!(tape.backward(t), Err(AutodiffError::Contract(_))));
    let s = tape.sum(t);
    tape.backward(s).unwrap();
    assert_eq!(tape.backward(s).unwrap_err(), AutodiffError::TapeConsumed);
}

#[test]
fn every_op_matches_finite_differences_over_seeds() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 5);
        let c = random(&mut rng, 3, 4);
        let s = random(&mut rng, 1, 1);
        let targets: Vec<usize> = (0..3).map(|_| rng.gen_range(0..5)).collect();

        let err = max_fd_error(&[a.clone(), b.clone()], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            let w = t.tanh(m);
            t.sum(w)
        });
        assert!(err <= 1e-4, "matmul seed {seed}: {err}");

        for op in [Elementwise::Add, Elementwise::Sub, Elementwise::Mul] {
            let err = max_fd_error(&[a.clone(), c.clone()], |t, v| {
                let e = t.elementwise(op, &[v[0], v[1]]).unwrap();
                let sq = t.mul(e, e).unwrap();
                t.sum(sq)
            });
            assert!(err <= 1e-4, "{op:?} seed {seed}: {err}");
            let err = max_fd_error(&[a.clone(), s.clone()], |t, v| {
                let e = t.elementwise(op, &[v[0], v[1]]).unwrap();
                let sq = t.mul(e, e).unwrap();
                t.sum(sq)
            });
            assert!(err <= 1e-4, "broadcast {op:?} seed {seed}: {err}");
        }

        for op in [Elementwise::Tanh, Elementwise::Sigmoid, Elementwise::Softplus] {
            let err = max_fd_error(&[a.clone()], |t, v| {
                let e = t.elementwise(op, &[v[0]]).unwrap();
                let sq = t.mul(e, e).unwrap();
                t.sum(sq)
            });
            assert!(err <= 1e-4, "{op:?} seed {seed}: {err}");
        }

        let err = max_fd_error(&[a.clone(), b.clone()], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            let top = t.slice_rows(m, 0, 2).unwrap();
            let cols = t.slice_cols(m, 1, 3).unwrap();
            let sc = t.scale(cols, -0.7);
            let bottom = t.slice_rows(sc, 2, 1).unwrap();
            let top3 = t.slice_cols(top, 0, 3).unwrap();
            let stacked = t.concat_rows(&[top3, bottom]).unwrap();
            let (loss, _) = t.log_softmax_nll(stacked, &targets.iter().map(|x| x % 3).collect::<Vec<_>>()).unwrap();
            loss
        });
        assert!(err <= 1e-4, "slice/concat/nll seed {seed}: {err}");

        let table = random(&mut rng, 6, 5);
        let ids: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        let err = max_fd_error(&[table], |t, v| {
            let e = t.embedding_lookup(v[0], &ids).unwrap();
            let (loss, _) = t.log_softmax_nll(e, &[0, 1, 2, 3]).unwrap();
            loss
        });
        assert!(err <= 1e-4, "embedding seed {seed}: {err}");
    }
}
