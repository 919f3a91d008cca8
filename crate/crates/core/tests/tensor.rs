use proptest::prelude::*;
use regnde_core::tensor::{check_gradients, Activation, Tape, Tensor, TensorError, Var};

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn matrix_strategy(lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    (1usize..4, 1usize..5).prop_flat_map(move |(r, c)| {
        prop::collection::vec(lo..hi, r * c).prop_map(move |d| tensor(vec![r, c], d))
    })
}

fn weighted(tape: &Tape, y: &Var) -> Result<Var, TensorError> {
    let n = y.value().len();
    let w = tape.constant(tensor(
        y.shape().to_vec(),
        (0..n).map(|i| 0.3 + 0.7 * ((i * 7 % 5) as f64) / 5.0).collect(),
    ));
    tape.sum(&tape.mul(y, &w)?)
}

fn max_error(errors: Vec<f64>) -> f64 {
    errors.into_iter().fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn smooth_elementwise_chain_gradients(x in matrix_strategy(-1.5, 1.5)) {
        let err = max_error(check_gradients(
            |t, v| {
                let a = t.tanh(&v[0])?;
                let b = t.sigmoid(&t.scale(&v[0], 2.0)?)?;
                let c = t.div(&t.mul(&a, &b)?, &t.offset(&t.pow(&v[0], 2.0)?, 1.0)?)?;
                weighted(t, &t.sub(&c, &a)?)
            },
            &[x],
            1e-6,
        ).unwrap());
        prop_assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn dense_layer_gradients(
        x in matrix_strategy(-1.0, 1.0),
        k in 1usize..4,
        act in 0usize..3,
        time in prop::option::of(-1.0f64..1.0),
        seed in 0u64..1000,
    ) {
        let cols = x.shape()[1] + usize::from(time.is_some());
        let w = tensor(vec![k, cols], (0..k * cols).map(|i| ((i as u64 * 31 + seed) % 17) as f64 / 8.5 - 1.0).collect());
        let b = tensor(vec![k], (0..k).map(|i| 0.1 * i as f64 - 0.1).collect());
        let activation = [Activation::Identity, Activation::Tanh, Activation::Sigmoid][act];
        let err = max_error(check_gradients(
            |t, v| weighted(t, &t.dense(&v[0], &v[1], &v[2], activation, time)?),
            &[x, w, b],
            1e-6,
        ).unwrap());
        prop_assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn dense_matches_explicit_time_column(x in matrix_strategy(-1.0, 1.0), time in -1.0f64..1.0) {
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let w = tensor(vec![2, c + 1], (0..2 * (c + 1)).map(|i| (i as f64).sin()).collect());
        let b = tensor(vec![2], vec![0.1, -0.2]);
        let tape = Tape::new();
        let (xv, wv, bv) = (tape.var(x), tape.var(w), tape.var(b));
        let fused = tape.dense(&xv, &wv, &bv, Activation::Tanh, Some(time)).unwrap();
        let column = tape.constant(Tensor::full(&[r, 1], time));
        let augmented = tape.concat(&[&xv, &column], 1).unwrap();
        let explicit = tape.tanh(&tape.affine(&augmented, &wv, &bv).unwrap()).unwrap();
        for (a, e) in fused.value().data().iter().zip(explicit.value().data()) {
            prop_assert!((a - e).abs() <= 1e-14);
        }
    }

    #[test]
    fn reductions_match_direct_formulas(x in matrix_strategy(-2.0, 2.0)) {
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let d = x.data();
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let sum: f64 = d.iter().sum();
        prop_assert!((tape.sum(&xv).unwrap().item() - sum).abs() <= 1e-12);
        prop_assert!((tape.mean(&xv).unwrap().item() - sum / (r * c) as f64).abs() <= 1e-12);
        let norm = d.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!((tape.norm2(&xv).unwrap().item() - norm).abs() <= 1e-12);
        let means = tape.mean_axis0(&xv).unwrap();
        let vars = tape.var_axis0(&xv).unwrap();
        for j in 0..c {
            let col: Vec<f64> = (0..r).map(|i| d[i * c + j]).collect();
            let m = col.iter().sum::<f64>() / r as f64;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / r as f64;
            prop_assert!((means.value().data()[j] - m).abs() <= 1e-12);
            prop_assert!((vars.value().data()[j] - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp(logits in matrix_strategy(-3.0, 3.0), pick in 0usize..100) {
        let (r, c) = (logits.shape()[0], logits.shape()[1]);
        let labels: Vec<usize> = (0..r).map(|i| (pick + i) % c).collect();
        let tape = Tape::new();
        let v = tape.var(logits.clone());
        let loss = tape.softmax_cross_entropy(&v, &labels).unwrap().item();
        let expected = (0..r)
            .map(|i| {
                let row = &logits.data()[i * c..(i + 1) * c];
                row.iter().map(|a| a.exp()).sum::<f64>().ln() - row[labels[i]]
            })
            .sum::<f64>()
            / r as f64;
        prop_assert!(loss >= 0.0);
        prop_assert!((loss - expected).abs() <= 1e-12);
    }

    #[test]
    fn gradients_of_linear_combinations_are_their_coefficients(
        coefs in prop::collection::vec(-3.0f64..3.0, 1..5),
        x in matrix_strategy(-1.0, 1.0),
    ) {
        let tape = Tape::new();
        let vars: Vec<Var> = coefs.iter().map(|_| tape.var(x.clone())).collect();
        let refs: Vec<&Var> = vars.iter().collect();
        let out = tape.sum(&tape.lincomb(&coefs, &refs).unwrap()).unwrap();
        let grads = tape.grad(&out).unwrap();
        for (v, c) in vars.iter().zip(&coefs) {
            prop_assert!(grads.wrt(v).data().iter().all(|g| g == c));
        }
    }

    #[test]
    fn shape_ops_preserve_entries(x in matrix_strategy(-1.0, 1.0)) {
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let tape = Tape::new();
        let v = tape.var(x.clone());
        let flat = tape.reshape(&v, &[r * c]).unwrap();
        prop_assert_eq!(flat.value().data(), x.data());
        let parts: Vec<Var> = (0..c).map(|j| tape.slice(&v, 1, j, j + 1).unwrap()).collect();
        let refs: Vec<&Var> = parts.iter().collect();
        let joined = tape.concat(&refs, 1).unwrap();
        prop_assert_eq!(joined.value().data(), x.data());
        let grads = tape.grad(&tape.sum(&joined).unwrap()).unwrap();
        prop_assert!(grads.wrt(&v).data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn replay_reproduces_recorded_values(x in matrix_strategy(-1.0, 1.0)) {
        let c = x.shape()[1];
        let tape = Tape::new();
        let v = tape.var(x);
        let w = tape.var(Tensor::identity(c));
        let h = tape.tanh(&tape.matmul(&v, &w).unwrap()).unwrap();
        let m = tape.maximum(&h, &tape.scale(&h, 0.5).unwrap()).unwrap();
        tape.sum(&tape.abs(&m).unwrap()).unwrap();
        prop_assert!(tape.is_topologically_ordered());
        prop_assert!(tape.replay_matches().unwrap());
    }
}

#[test]
fn matmul_gradients_are_transposed_products() {
    let a = tensor(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let b = tensor(vec![3, 2], vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
    let tape = Tape::new();
    let (av, bv) = (tape.var(a.clone()), tape.var(b.clone()));
    let grads = tape.grad(&tape.sum(&tape.matmul(&av, &bv).unwrap()).unwrap()).unwrap();
    // d/dA sum(AB) = 1 B^T, d/dB = A^T 1
    assert_eq!(grads.wrt(&av).data(), [-0.5, 2.0, 4.0, -0.5, 2.0, 4.0]);
    assert_eq!(grads.wrt(&bv).data(), [5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
}

#[test]
fn mismatched_shapes_are_reported() {
    let tape = Tape::new();
    let a = tape.var(Tensor::zeros(&[2, 3]));
    let b = tape.var(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.add(&a, &b), Err(TensorError::ShapeMismatch { .. })));
    assert!(tape.matmul(&a, &a).is_err());
    assert!(tape.concat(&[&a, &b], 1).is_err());
    assert!(tape.reshape(&a, &[5]).is_err());
}

#[test]
fn backward_on_an_inference_tape_fails() {
    let tape = Tape::inference();
    let a = tape.constant(Tensor::scalar(2.0));
    let y = tape.pow(&a, 2.0).unwrap();
    assert_eq!(y.item(), 4.0);
    assert!(tape.grad(&y).is_err());
}
