use super::{Tape, Tensor, TensorError, Var};

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h` of a scalar function.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor, step: f64) -> Result<Tensor, TensorError>
where
    F: Fn(&Tensor) -> Result<f64, TensorError>,
{
    if !(step > 0.0) {
        return Err(TensorError::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TensorError::NonFinite { op: "finite_difference" });
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.zip_map(b, |x, y| x - y).norm();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Normwise relative error between taped and central-difference gradients of
/// `loss` for each input tensor.
///
/// `loss` receives a fresh tape and the inputs recorded as leaves, in order.
pub fn check_gradients<F>(loss: F, inputs: &[Tensor], step: f64) -> Result<Vec<f64>, TensorError>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, TensorError>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = loss(&tape, &vars)?;
    if out.value().len() != 1 {
        return Err(TensorError::InvalidArgument("gradient check needs a scalar loss".into()));
    }
    let grads = tape.grad(&out)?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, var) in vars.iter().enumerate() {
        let fd = finite_difference_gradient(
            |x| {
                let tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| tape.constant(if j == k { x.clone() } else { t.clone() }))
                    .collect();
                Ok(loss(&tape, &vars)?.item())
            },
            &inputs[k],
            step,
        )?;
        errors.push(relative_error(&grads.wrt(var), &fd));
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gives_ones() {
        let x = Tensor::vector(vec![0.3, -2.0, 7.5]);
        let g = finite_difference_gradient(|t| Ok(t.sum()), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cube_at_two() {
        let x = Tensor::scalar(2.0);
        let g = finite_difference_gradient(|t| Ok(t.item().powi(3)), &x, 1e-5).unwrap();
        assert!((g.item() - 12.0).abs() < 1e-6);
    }

    #[test]
    fn constant_gives_zero() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let g = finite_difference_gradient(|_| Ok(4.0), &x, 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_value_is_error() {
        let x = Tensor::scalar(0.0);
        let r = finite_difference_gradient(|t| Ok(1.0 / (t.item() - 1e-5)), &x, 1e-5);
        assert!(r.is_err());
    }

    #[test]
    fn step_must_be_positive() {
        let x = Tensor::scalar(0.0);
        assert!(finite_difference_gradient(|t| Ok(t.item()), &x, 0.0).is_err());
    }

    #[test]
    fn product_gradients_agree() {
        let a = Tensor::vector(vec![0.5, -1.5]);
        let b = Tensor::vector(vec![2.0, 0.25]);
        let errs = check_gradients(|tape, v| tape.sum(&tape.mul(&v[0], &v[1])?), &[a, b], 1e-6).unwrap();
        assert!(errs.iter().all(|&e| e < 1e-9));
    }
}
