use rand::Rng;

use super::NdeError;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Weights of the error and stiffness regularizers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegCoefficients {
    pub lambda_error: f64,
    pub lambda_stiffness: f64,
}

impl RegCoefficients {
    pub fn new(lambda_error: f64, lambda_stiffness: f64) -> Result<Self, NdeError> {
        let c = RegCoefficients {
            lambda_error,
            lambda_stiffness,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), NdeError> {
        for (name, v) in [("lambda_error", self.lambda_error), ("lambda_stiffness", self.lambda_stiffness)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NdeError::InvalidArgument(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// `task_loss + lambda_error * reg_error + lambda_stiffness * reg_stiffness`.
///
/// Zero-weight terms are not recorded, so with both weights zero the result
/// is `task_loss` itself.
pub fn regularized_objective(
    tape: &Tape,
    task_loss: &Var,
    reg_error: &Var,
    reg_stiffness: &Var,
    coeffs: &RegCoefficients,
) -> Result<Var, NdeError> {
    coeffs.validate()?;
    let mut weights = vec![1.0];
    let mut terms = vec![task_loss];
    if coeffs.lambda_error != 0.0 {
        weights.push(coeffs.lambda_error);
        terms.push(reg_error);
    }
    if coeffs.lambda_stiffness != 0.0 {
        weights.push(coeffs.lambda_stiffness);
        terms.push(reg_stiffness);
    }
    if terms.len() == 1 {
        return Ok(task_loss.clone());
    }
    Ok(tape.lincomb(&weights, &terms)?)
}

/// Mean softmax cross-entropy of `logits: (B, classes)` against `labels`.
pub fn cross_entropy_loss(tape: &Tape, logits: &Var, labels: &[usize]) -> Result<Var, TensorError> {
    tape.softmax_cross_entropy(logits, labels)
}

/// Method-of-moments loss
/// `sum_i sum_d (mu_id - mean_id)^2 + (var_id - pvar_id)^2 + lambda_r * reg`.
///
/// `predicted[i]` holds the sampled states at time point `i`, one trajectory
/// per row; `reg` is only recorded when `lambda_r` is non-zero.
pub fn moment_loss(
    tape: &Tape,
    predicted: &[Var],
    true_mean: &[Tensor],
    true_var: &[Tensor],
    reg: Option<&Var>,
    lambda_r: f64,
) -> Result<Var, NdeError> {
    if predicted.is_empty() || predicted.len() != true_mean.len() || predicted.len() != true_var.len() {
        return Err(NdeError::InvalidArgument(format!(
            "need matching time points, got {} predicted, {} means, {} variances",
            predicted.len(),
            true_mean.len(),
            true_var.len()
        )));
    }
    if !(lambda_r >= 0.0) {
        return Err(NdeError::InvalidArgument(format!("lambda_r must be non-negative, got {lambda_r}")));
    }
    let mut terms = Vec::with_capacity(2 * predicted.len() + 1);
    for ((p, mu), var) in predicted.iter().zip(true_mean).zip(true_var) {
        if p.shape().first().copied().unwrap_or(0) < 2 {
            return Err(NdeError::InvalidArgument("variance needs at least two trajectories".into()));
        }
        for (stat, target) in [(tape.mean_axis0(p)?, mu), (tape.var_axis0(p)?, var)] {
            let gap = tape.sub(&stat, &tape.constant(target.clone()))?;
            terms.push(tape.sum(&tape.mul(&gap, &gap)?)?);
        }
    }
    let mut weights = vec![1.0; terms.len()];
    if lambda_r != 0.0 {
        let reg = reg.ok_or_else(|| NdeError::InvalidArgument("lambda_r > 0 needs a regularizer".into()))?;
        terms.push(reg.clone());
        weights.push(lambda_r);
    }
    let refs: Vec<&Var> = terms.iter().collect();
    Ok(tape.lincomb(&weights, &refs)?)
}

/// End time drawn uniformly from `[end - half_width, end + half_width]`.
pub fn steer_sample_endtime<R: Rng + ?Sized>(end: f64, half_width: f64, rng: &mut R) -> Result<f64, NdeError> {
    if !(half_width >= 0.0 && half_width < end) {
        return Err(NdeError::InvalidArgument(format!(
            "need 0 <= b < T for end-time sampling, got T = {end}, b = {half_width}"
        )));
    }
    if half_width == 0.0 {
        return Ok(end);
    }
    Ok(rng.random_range(end - half_width..=end + half_width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_coefficients_return_task_loss() {
        let tape = Tape::new();
        let loss = tape.var(Tensor::scalar(1.25));
        let re = tape.var(Tensor::scalar(3.0));
        let rs = tape.var(Tensor::scalar(4.0));
        let obj = regularized_objective(&tape, &loss, &re, &rs, &RegCoefficients::default()).unwrap();
        assert_eq!(obj.id(), loss.id());
    }

    #[test]
    fn coefficients_scale_regularizers() {
        let tape = Tape::new();
        let loss = tape.var(Tensor::scalar(1.0));
        let re = tape.var(Tensor::scalar(0.5));
        let rs = tape.var(Tensor::scalar(2.0));
        let obj = regularized_objective(&tape, &loss, &re, &rs, &RegCoefficients::new(100.0, 0.0285).unwrap()).unwrap();
        assert!((obj.item() - (1.0 + 100.0 * 0.5 + 0.0285 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn negative_coefficients_rejected() {
        assert!(RegCoefficients::new(-1.0, 0.0).is_err());
        assert!(RegCoefficients::new(0.0, -0.1).is_err());
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let tape = Tape::new();
        let logits = tape.var(Tensor::zeros(&[4, 10]));
        let l = cross_entropy_loss(&tape, &logits, &[0, 3, 9, 5]).unwrap();
        assert!((l.item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_small_loss() {
        let tape = Tape::new();
        let mut data = vec![0.0; 10];
        data[7] = 50.0;
        let logits = tape.var(Tensor::matrix(1, 10, data).unwrap());
        assert!(cross_entropy_loss(&tape, &logits, &[7]).unwrap().item() < 1e-20);
    }

    #[test]
    fn moment_loss_single_point_gap() {
        let tape = Tape::new();
        // two paths at 1.0 and 1.2: mean 1.1, population variance 0.01
        let p = tape.var(Tensor::matrix(2, 1, vec![1.0, 1.2]).unwrap());
        let l = moment_loss(&tape, &[p], &[Tensor::vector(vec![1.0])], &[Tensor::vector(vec![0.01])], None, 0.0)
            .unwrap();
        assert!((l.item() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn moment_loss_zero_when_matched_and_needs_two_paths() {
        let tape = Tape::new();
        let p = tape.var(Tensor::matrix(2, 2, vec![1.0, 0.0, 3.0, 2.0]).unwrap());
        let l = moment_loss(
            &tape,
            &[p],
            &[Tensor::vector(vec![2.0, 1.0])],
            &[Tensor::vector(vec![1.0, 1.0])],
            None,
            0.0,
        )
        .unwrap();
        assert_eq!(l.item(), 0.0);
        let single = tape.var(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let mu = [Tensor::vector(vec![0.0, 0.0])];
        assert!(moment_loss(&tape, &[single], &mu, &mu, None, 0.0).is_err());
    }

    #[test]
    fn steer_degenerate_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(steer_sample_endtime(1.0, 0.0, &mut rng).unwrap(), 1.0);
        assert!(steer_sample_endtime(1.0, 1.0, &mut rng).is_err());
        assert!(steer_sample_endtime(1.0, -0.1, &mut rng).is_err());
    }
}
