use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regnde_core::nde::{
    cross_entropy_loss, mlp_ode_layout, moment_loss, regularized_objective, sde_classifier_layout,
    spiral_sde_layout, steer_sample_endtime, MlpOde, ParamSet, RegCoefficients, SdeClassifier, SpiralSde,
};
use regnde_core::tensor::{check_gradients, Tape, Tensor, TensorError, Var};

/// Glorot weights with small random biases so bias gradients are exercised.
fn random_params(layout: &[(&'static str, Vec<usize>)], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::glorot(layout, &mut rng);
    for t in set.tensors_mut() {
        if t.rank() == 1 {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
    }
    set.tensors().to_vec()
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(tape: &Tape, y: &Var, seed: u64) -> Result<Var, TensorError> {
    let w = tape.constant(random_tensor(y.shape(), seed));
    tape.sum(&tape.mul(y, &w)?)
}

#[test]
fn mlp_dynamics_gradients() {
    let mut inputs = random_params(&mlp_ode_layout(7, 5, 3), 1);
    inputs.push(random_tensor(&[2, 7], 2));
    let errs = check_gradients(
        |tape, v| {
            let model = MlpOde::new(&v[..6]).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
            let dz = model.dynamics(tape, 0.37, &v[6])?;
            weighted_sum(tape, &dz, 3)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    // W3, B3 do not enter the dynamics
    for (i, e) in errs.iter().enumerate() {
        assert!(*e <= 1e-5, "input {i}: {e}");
    }
}

#[test]
fn mlp_classifier_cross_entropy_gradients() {
    let mut inputs = random_params(&mlp_ode_layout(6, 4, 3), 4);
    inputs.push(random_tensor(&[3, 6], 5));
    let errs = check_gradients(
        |tape, v| {
            let model = MlpOde::new(&v[..6]).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
            let logits = model.logits(tape, &v[6])?;
            let ce = cross_entropy_loss(tape, &logits, &[0, 2, 1])?;
            let probs = model.classify(tape, &v[6])?;
            tape.add(&ce, &weighted_sum(tape, &probs, 6)?)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e <= 1e-5), "{errs:?}");
}

#[test]
fn classifier_is_monotone_in_its_input_score() {
    let tape = Tape::new();
    let set = ParamSet::new(vec![
        ("W1".into(), Tensor::zeros(&[2, 3])),
        ("B1".into(), Tensor::zeros(&[2])),
        ("W2".into(), Tensor::zeros(&[2, 3])),
        ("B2".into(), Tensor::zeros(&[2])),
        ("W3".into(), Tensor::identity(2)),
        ("B3".into(), Tensor::zeros(&[2])),
    ]);
    let model = MlpOde::new(&set.bind(&tape)).unwrap();
    let low = tape.constant(Tensor::matrix(1, 2, vec![0.1, 0.0]).unwrap());
    let high = tape.constant(Tensor::matrix(1, 2, vec![0.9, 0.0]).unwrap());
    let p_low = model.classify(&tape, &low).unwrap().value().data()[0];
    let p_high = model.classify(&tape, &high).unwrap().value().data()[0];
    assert!(p_high > p_low);
}

#[test]
fn spiral_drift_and_diffusion_gradients() {
    let mut inputs = random_params(&spiral_sde_layout(2, 6), 7);
    inputs.push(random_tensor(&[3, 2], 8));
    let errs = check_gradients(
        |tape, v| {
            let model = SpiralSde::new(&v[..6]).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
            let f = model.drift(tape, 0.0, &v[6])?;
            let g = model.diffusion(tape, 0.0, &v[6])?;
            tape.add(&weighted_sum(tape, &f, 9)?, &weighted_sum(tape, &g, 10)?)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e <= 1e-5), "{errs:?}");
}

#[test]
fn sde_classifier_gradients() {
    let mut inputs = random_params(&sde_classifier_layout(5, 3, 4, 2), 11);
    inputs.push(random_tensor(&[2, 5], 12));
    let errs = check_gradients(
        |tape, v| {
            let model = SdeClassifier::new(&v[..10]).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
            let z = model.encode(tape, &v[10])?;
            let f = model.drift(tape, 0.0, &z)?;
            let g = model.diffusion(tape, 0.0, &z)?;
            let moved = tape.add(&tape.add(&z, &f)?, &tape.mul(&g, &tape.constant(random_tensor(&[2, 3], 13)))?)?;
            cross_entropy_loss(tape, &model.logits(tape, &moved)?, &[1, 0])
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e <= 1e-5), "{errs:?}");
}

#[test]
fn moment_loss_gradients() {
    let inputs = vec![random_tensor(&[4, 2], 14), random_tensor(&[4, 2], 15), Tensor::scalar(0.3)];
    let mu = [Tensor::vector(vec![0.1, -0.2]), Tensor::vector(vec![0.4, 0.0])];
    let var = [Tensor::vector(vec![0.2, 0.1]), Tensor::vector(vec![0.05, 0.3])];
    let errs = check_gradients(
        |tape, v| {
            moment_loss(tape, &v[..2], &mu, &var, Some(&v[2]), 2.5)
                .map_err(|e| TensorError::InvalidArgument(e.to_string()))
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(errs.iter().all(|&e| e <= 1e-5), "{errs:?}");
}

#[test]
fn zero_coefficients_give_identical_parameter_gradients() {
    let params = random_params(&spiral_sde_layout(2, 4), 16);
    let x = random_tensor(&[3, 2], 17);
    let grads = |coeffs: Option<RegCoefficients>| {
        let tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.var(p.clone())).collect();
        let model = SpiralSde::new(&vars).unwrap();
        let xv = tape.constant(x.clone());
        let f = model.drift(&tape, 0.0, &xv).unwrap();
        let task = tape.sum(&tape.mul(&f, &f).unwrap()).unwrap();
        let re = tape.norm2(&model.diffusion(&tape, 0.0, &xv).unwrap()).unwrap();
        let rs = tape.norm2(&f).unwrap();
        let obj = match coeffs {
            Some(c) => regularized_objective(&tape, &task, &re, &rs, &c).unwrap(),
            None => task,
        };
        let g = tape.grad(&obj).unwrap();
        (obj.item(), vars.iter().map(|v| g.wrt(v)).collect::<Vec<_>>())
    };
    assert_eq!(grads(None), grads(Some(RegCoefficients::default())));
}

#[test]
fn steer_samples_are_uniform_on_the_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws: Vec<f64> = (0..10_000).map(|_| steer_sample_endtime(1.0, 0.5, &mut rng).unwrap()).collect();
    assert!(draws.iter().all(|t| (0.5..=1.5).contains(t)));
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!((0.99..=1.01).contains(&mean), "mean {mean}");

    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        assert_eq!(steer_sample_endtime(1.0, 0.5, &mut a), steer_sample_endtime(1.0, 0.5, &mut b));
    }
}

proptest! {
    #[test]
    fn moment_loss_ignores_path_order(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 2]> = (0..6).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        let mu = [Tensor::vector(vec![0.3, -0.1])];
        let var = [Tensor::vector(vec![0.5, 1.0])];
        let loss = |rows: &[[f64; 2]]| {
            let tape = Tape::new();
            let p = tape.var(Tensor::matrix(rows.len(), 2, rows.iter().flatten().copied().collect()).unwrap());
            moment_loss(&tape, &[p], &mu, &var, None, 0.0).unwrap().item()
        };
        let (a, b) = (loss(&rows), loss(&shuffled));
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}
