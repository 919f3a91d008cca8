use super::TrainError;
use crate::nde::ParamSet;
use crate::tensor::Tensor;

/// Update rule and its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Momentum { mass: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
    AdaBelief { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn momentum() -> Self {
        OptimizerKind::Momentum { mass: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn adabelief() -> Self {
        OptimizerKind::AdaBelief { beta1: 0.9, beta2: 0.999, eps: 1e-16 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::AdaBelief { .. } => "adabelief",
        }
    }

    fn slots(&self) -> usize {
        match self {
            OptimizerKind::Momentum { .. } => 1,
            OptimizerKind::Adam { .. } | OptimizerKind::AdaBelief { .. } => 2,
        }
    }
}

/// Optimizer with its per-parameter slot tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    decay: f64,
    step: u64,
    /// `slots[k][i]` is slot `k` of parameter `i`.
    slots: Vec<Vec<Tensor>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, decay: f64, params: &ParamSet) -> Result<Self, TrainError> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(decay >= 0.0 && decay.is_finite()) {
            return Err(TrainError::Config(format!("decay must be non-negative, got {decay}")));
        }
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Ok(OptimizerState {
            kind,
            learning_rate,
            decay,
            step: 0,
            slots: vec![zeros; kind.slots()],
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn slots(&self) -> &[Vec<Tensor>] {
        &self.slots
    }

    /// `lr / (1 + decay * step)`.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        self.learning_rate / (1.0 + self.decay * step as f64)
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), TrainError> {
        if grads.len() != params.len() || self.slots[0].len() != params.len() {
            return Err(TrainError::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.names().iter().zip(params.tensors()).zip(grads) {
            if g.shape() != p.shape() {
                return Err(TrainError::Config(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient(name.clone()));
            }
        }

        let lr = self.learning_rate_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        match self.kind {
            OptimizerKind::Momentum { mass } => {
                for (i, p) in params.tensors_mut().iter_mut().enumerate() {
                    let v = &mut self.slots[0][i];
                    for ((v, p), g) in v.data_mut().iter_mut().zip(p.data_mut()).zip(grads[i].data()) {
                        *v = mass * *v - lr * g;
                        *p += *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } | OptimizerKind::AdaBelief { beta1, beta2, eps } => {
                let belief = matches!(self.kind, OptimizerKind::AdaBelief { .. });
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (first, second) = self.slots.split_at_mut(1);
                for (i, p) in params.tensors_mut().iter_mut().enumerate() {
                    let m = first[0][i].data_mut();
                    let s = second[0][i].data_mut();
                    for (((m, s), p), &g) in m.iter_mut().zip(s.iter_mut()).zip(p.data_mut()).zip(grads[i].data()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        if belief {
                            *s = beta2 * *s + (1.0 - beta2) * (g - *m).powi(2) + eps;
                        } else {
                            *s = beta2 * *s + (1.0 - beta2) * g * g;
                        }
                        *p -= lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        ParamSet::new(vec![("p".into(), Tensor::vector(vec![value]))])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::momentum(), OptimizerKind::adam(), OptimizerKind::adabelief()] {
            let mut p = single(0.7);
            let mut opt = OptimizerState::new(kind, 0.1, 0.0, &p).unwrap();
            for _ in 0..3 {
                opt.step(&mut p, &[Tensor::vector(vec![0.0])]).unwrap();
            }
            assert_eq!(p.tensors()[0].data(), &[0.7], "{}", kind.name());
        }
    }

    #[test]
    fn one_momentum_step() {
        let mut p = single(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::momentum(), 0.1, 0.0, &p).unwrap();
        opt.step(&mut p, &[Tensor::vector(vec![1.0])]).unwrap();
        assert!((p.tensors()[0].data()[0] - 0.9).abs() < 1e-15);
        // second step carries 0.9 of the first velocity
        opt.step(&mut p, &[Tensor::vector(vec![1.0])]).unwrap();
        assert!((p.tensors()[0].data()[0] - (0.9 - 0.19)).abs() < 1e-15);
    }

    #[test]
    fn inverse_decay_halves_at_reciprocal_step() {
        let opt = OptimizerState::new(OptimizerKind::momentum(), 0.1, 1e-5, &single(0.0)).unwrap();
        assert_eq!(opt.learning_rate_at(0), 0.1);
        assert!((opt.learning_rate_at(100_000) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        // bias-corrected moments give m/sqrt(v) = sign(g) on step one
        let mut p = single(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::adam(), 0.01, 0.0, &p).unwrap();
        opt.step(&mut p, &[Tensor::vector(vec![3.0])]).unwrap();
        assert!((p.tensors()[0].data()[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adabelief_takes_large_steps_on_constant_gradients() {
        let run = |kind| {
            let mut p = single(0.0);
            let mut opt = OptimizerState::new(kind, 0.01, 0.0, &p).unwrap();
            for _ in 0..20 {
                opt.step(&mut p, &[Tensor::vector(vec![1.0])]).unwrap();
            }
            -p.tensors()[0].data()[0]
        };
        assert!(run(OptimizerKind::adabelief()) > run(OptimizerKind::adam()));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single(0.0);
        let mut opt = OptimizerState::new(OptimizerKind::adam(), 0.01, 0.0, &p).unwrap();
        let err = opt.step(&mut p, &[Tensor::vector(vec![f64::NAN])]).unwrap_err();
        assert_eq!(err, TrainError::NonFiniteGradient("p".into()));
        assert_eq!(opt.step_count(), 0);
    }
}
