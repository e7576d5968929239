use std::sync::Arc;

use ndgrad::{func, Adam, AdamState, GradCheck, ParamSet, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Fixed random weights so sums of op outputs exercise non-uniform upstream gradients.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> ndgrad::Result<Var> {
    let (r, c) = tape.value(x).dims2();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = tape.constant(rand_tensor(&mut rng, r, c))?;
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

type Builder = fn(&mut Tape, &[Var]) -> ndgrad::Result<Var>;

fn check_op(name: &str, shapes: &[(usize, usize)], build: Builder) {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| rand_tensor(&mut rng, r, c)).collect();
        let report = GradCheck::default()
            .run(&inputs, |tape, vars| {
                let out = build(tape, vars)?;
                weighted_sum(tape, out, seed)
            })
            .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "{name} seed {seed}: rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}

#[test]
fn matmul_gradients() {
    check_op("matmul", &[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]));
}

#[test]
fn elementwise_binary_gradients() {
    check_op("add", &[(2, 3), (2, 3)], |t, v| t.add(v[0], v[1]));
    check_op("sub", &[(2, 3), (2, 3)], |t, v| t.sub(v[0], v[1]));
    check_op("mul", &[(2, 3), (2, 3)], |t, v| t.mul(v[0], v[1]));
    check_op("mul_self", &[(2, 3)], |t, v| t.mul(v[0], v[0]));
}

#[test]
fn broadcast_gradients() {
    check_op("add_row", &[(4, 3), (1, 3)], |t, v| t.add_row(v[0], v[1]));
    check_op("mul_row", &[(4, 3), (1, 3)], |t, v| t.mul_row(v[0], v[1]));
    check_op("mul_col", &[(4, 3), (4, 1)], |t, v| t.mul_col(v[0], v[1]));
    check_op("scale", &[(2, 2)], |t, v| t.scale(v[0], -1.7));
}

#[test]
fn activation_gradients() {
    check_op("leaky_relu", &[(3, 5)], |t, v| t.leaky_relu(v[0], 0.2));
    check_op("sigmoid", &[(3, 5)], |t, v| t.sigmoid(v[0]));
    check_op("tanh", &[(3, 5)], |t, v| t.tanh(v[0]));
}

#[test]
fn leaky_relu_gradient_at_minus_one() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(-1.0).unwrap()).unwrap();
    let y = tape.leaky_relu(x, 0.2).unwrap();
    assert!((tape.value(y).item().unwrap() + 0.2).abs() < 1e-15);
    let g = tape.backward(y).unwrap();
    let analytic = g.wrt(x).unwrap().item().unwrap();
    let h = 1e-5;
    let numeric = (func::leaky_relu_scalar(-1.0 + h, 0.2) - func::leaky_relu_scalar(-1.0 - h, 0.2)) / (2.0 * h);
    assert!((analytic - 0.2).abs() < 1e-15);
    assert!((numeric - 0.2).abs() < 1e-9);
}

#[test]
fn structural_gradients() {
    check_op("concat_cols", &[(3, 2), (3, 4), (3, 1)], |t, v| t.concat_cols(v));
    check_op("slice_cols", &[(3, 5)], |t, v| t.slice_cols(v[0], 1, 3));
    check_op("slice_rows", &[(5, 2)], |t, v| t.slice_rows(v[0], 2, 2));
    check_op("gather_rows", &[(4, 3)], |t, v| {
        t.gather_rows(v[0], Arc::from(vec![3, 0, 0, 2, 3]))
    });
    check_op("scatter_add_rows", &[(5, 3)], |t, v| {
        t.scatter_add_rows(v[0], Arc::from(vec![1, 0, 1, 3, 1]), 4)
    });
}

#[test]
fn normalization_gradients() {
    check_op("segment_softmax", &[(6, 1)], |t, v| {
        t.segment_softmax(v[0], Arc::from(vec![0, 1, 0, 2, 1, 0]))
    });
    check_op("row_softmax", &[(3, 4)], |t, v| t.row_softmax(v[0]));
    check_op("row_l2_normalize", &[(3, 4)], |t, v| t.row_l2_normalize(v[0]));
    check_op("batch_norm", &[(5, 3)], |t, v| Ok(t.batch_norm(v[0], 1e-5)?.0));
}

#[test]
fn reduction_gradients() {
    check_op("sum", &[(3, 2)], |t, v| {
        let s = t.sum(v[0])?;
        t.mul(s, s)
    });
    check_op("mean", &[(3, 2)], |t, v| {
        let s = t.mean(v[0])?;
        t.mul(s, s)
    });
}

#[test]
fn bce_gradient() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = rand_tensor(&mut rng, 6, 1);
        let targets: Arc<[f64]> = (0..6).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let report = GradCheck::default()
            .run(&[logits], |t, v| {
                let p = t.sigmoid(v[0])?;
                t.bce_mean(p, targets.clone())
            })
            .unwrap();
        assert!(report.max_rel_err < 1e-4, "seed {seed}: {}", report.max_rel_err);
    }
}

/// Two-layer network `sigmoid(leaky(x W1 + b1) W2 + b2)` under BCE.
fn two_layer(tape: &mut Tape, v: &[Var], targets: Arc<[f64]>) -> ndgrad::Result<Var> {
    let h = tape.matmul(v[0], v[1])?;
    let h = tape.add_row(h, v[2])?;
    let h = tape.leaky_relu(h, 0.2)?;
    let o = tape.matmul(h, v[3])?;
    let o = tape.add_row(o, v[4])?;
    let p = tape.sigmoid(o)?;
    tape.bce_mean(p, targets)
}

#[test]
fn two_layer_network_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let inputs = vec![
            rand_tensor(&mut rng, 5, 3),
            rand_tensor(&mut rng, 3, 4),
            rand_tensor(&mut rng, 1, 4),
            rand_tensor(&mut rng, 4, 1),
            rand_tensor(&mut rng, 1, 1),
        ];
        let targets: Arc<[f64]> = Arc::from(vec![1.0, 0.0, 0.0, 1.0, 1.0]);
        let report = GradCheck::default()
            .run(&inputs, |t, v| two_layer(t, v, targets.clone()))
            .unwrap();
        assert!(report.max_rel_err < 1e-4, "seed {seed}: {}", report.max_rel_err);
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, 8, 3);
        let mut params = ParamSet::new();
        for (name, r, c) in [("w1", 3, 4), ("b1", 1, 4), ("w2", 4, 1), ("b2", 1, 1)] {
            params.push(name, rand_tensor(&mut rng, r, c), true).unwrap();
        }
        let targets: Arc<[f64]> = (0..8).map(|i| f64::from(i % 2)).collect();
        let mut state = AdamState::new(&params);
        for _ in 0..25 {
            let mut tape = Tape::new();
            let mut vars = vec![tape.constant(x.clone()).unwrap()];
            for slot in 0..params.len() {
                vars.push(tape.param(slot, params.value(slot).clone()).unwrap());
            }
            let loss = two_layer(&mut tape, &vars, targets.clone()).unwrap();
            let grads = tape.backward(loss).unwrap().dense(&params.shapes());
            Adam::default().step(&mut params, &grads, &mut state, 1e-2).unwrap();
        }
        params
    };
    assert!(run().bitwise_eq(&run()));
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        xs in prop::collection::vec(-30.0f64..30.0, 1..12),
        c in -50.0f64..50.0,
    ) {
        let a = func::softmax(&Tensor::vector(xs.clone()).unwrap()).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = func::softmax(&Tensor::vector(shifted).unwrap()).unwrap();
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
        prop_assert!(a.data().iter().all(|&p| p > 0.0));
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_has_unit_norm(xs in prop::collection::vec(-10.0f64..10.0, 1..16)) {
        let v = Tensor::vector(xs.clone()).unwrap();
        let norm: f64 = xs.iter().map(|x| x * x).sum::<f64>().sqrt();
        let out = func::l2_normalize(&v);
        if norm > func::NORM_EPS {
            let n2: f64 = out.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n2 - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(out, v);
        }
    }

    #[test]
    fn adam_with_zero_gradients_is_identity(
        xs in prop::collection::vec(-5.0f64..5.0, 1..8),
        steps in 1usize..6,
        lr in 1e-5f64..1.0,
    ) {
        let mut p = ParamSet::new();
        p.push("w", Tensor::vector(xs.clone()).unwrap(), true).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let zeros = vec![Tensor::zeros(&[xs.len()])];
        for _ in 0..steps {
            Adam::default().step(&mut p, &zeros, &mut st, lr).unwrap();
        }
        prop_assert!(p.bitwise_eq(&before));
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise(
        xs in prop::collection::vec(-1e6f64..1e6, 1..20),
        cols in 1usize..4,
    ) {
        let rows = xs.len() / cols;
        prop_assume!(rows > 0);
        let mut p = ParamSet::new();
        p.push("m", Tensor::matrix(rows, cols, xs[..rows * cols].to_vec()).unwrap(), true).unwrap();
        p.push("s", Tensor::scalar(xs[0]).unwrap(), false).unwrap();
        let bytes = p.to_bytes(&serde_json::json!({"x": 1})).unwrap();
        let (q, _) = ParamSet::from_bytes(&bytes).unwrap();
        prop_assert!(p.bitwise_eq(&q));
    }
}
