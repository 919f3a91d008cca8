use rand::Rng;

use super::params::ParamSet;
use super::NdeError;
use crate::tensor::{Activation, Tape, TensorError, Var};

/// Parameter names and shapes in binding order.
pub type Layout = Vec<(&'static str, Vec<usize>)>;

/// The three model families and their parameter layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Time-augmented two-layer tanh dynamics on flattened images plus a
    /// sigmoid classifier head.
    MlpOde,
    /// Cubic-feature drift network with linear diagonal diffusion.
    SpiralSde,
    /// Linear encoder, tanh drift network, linear diffusion and linear readout.
    SdeClassifier,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MlpOde => "mlp-ode",
            ModelKind::SpiralSde => "spiral-sde",
            ModelKind::SdeClassifier => "sde-classifier",
        }
    }

    pub fn layout(self) -> Layout {
        match self {
            ModelKind::MlpOde => mlp_ode_layout(784, 100, 10),
            ModelKind::SpiralSde => spiral_sde_layout(2, 50),
            ModelKind::SdeClassifier => sde_classifier_layout(784, 32, 64, 10),
        }
    }

    pub fn init<R: Rng + ?Sized>(self, rng: &mut R) -> ParamSet {
        ParamSet::glorot(&self.layout(), rng)
    }
}

pub fn mlp_ode_layout(features: usize, hidden: usize, classes: usize) -> Layout {
    vec![
        ("W1", vec![hidden, features + 1]),
        ("B1", vec![hidden]),
        ("W2", vec![features, hidden + 1]),
        ("B2", vec![features]),
        ("W3", vec![classes, features]),
        ("B3", vec![classes]),
    ]
}

pub fn spiral_sde_layout(dim: usize, hidden: usize) -> Layout {
    vec![
        ("W1", vec![hidden, dim]),
        ("B1", vec![hidden]),
        ("W2", vec![dim, hidden]),
        ("B2", vec![dim]),
        ("W3", vec![dim, dim]),
        ("B3", vec![dim]),
    ]
}

pub fn sde_classifier_layout(features: usize, latent: usize, hidden: usize, classes: usize) -> Layout {
    vec![
        ("W1", vec![latent, features]),
        ("B1", vec![latent]),
        ("W2", vec![hidden, latent]),
        ("B2", vec![hidden]),
        ("W3", vec![latent, hidden]),
        ("B3", vec![latent]),
        ("W4", vec![latent, latent]),
        ("B4", vec![latent]),
        ("W5", vec![classes, latent]),
        ("B5", vec![classes]),
    ]
}

fn take<const N: usize>(vars: &[Var], model: &str) -> Result<[Var; N], NdeError> {
    <[Var; N]>::try_from(vars.to_vec())
        .map_err(|v| NdeError::Params(format!("{model} expects {N} parameter tensors, got {}", v.len())))
}

fn expect_shape(v: &Var, name: &str, shape: &[usize]) -> Result<(), NdeError> {
    if v.shape() != shape {
        return Err(NdeError::Params(format!("{name}: expected shape {shape:?}, got {:?}", v.shape())));
    }
    Ok(())
}

fn check_layout(vars: &[Var], layout: &Layout) -> Result<(), NdeError> {
    for (v, (name, shape)) in vars.iter().zip(layout) {
        expect_shape(v, name, shape)?;
    }
    Ok(())
}

/// Image-classification neural ODE bound to tape variables.
#[derive(Clone, Debug)]
pub struct MlpOde {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    w3: Var,
    b3: Var,
}

impl MlpOde {
    /// Binds variables in layout order `W1, B1, W2, B2, W3, B3`.
    pub fn new(vars: &[Var]) -> Result<Self, NdeError> {
        let [w1, b1, w2, b2, w3, b3] = take::<6>(vars, "mlp-ode")?;
        let hidden = w1.shape().first().copied().unwrap_or(0);
        let features = w2.shape().first().copied().unwrap_or(0);
        let classes = w3.shape().first().copied().unwrap_or(0);
        check_layout(vars, &mlp_ode_layout(features, hidden, classes))?;
        Ok(MlpOde { w1, b1, w2, b2, w3, b3 })
    }

    pub fn vars(&self) -> [&Var; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    /// `tanh(W2 [tanh(W1 [x; t] + B1); t] + B2)` for `x: (B, features)`.
    pub fn dynamics(&self, tape: &Tape, t: f64, x: &Var) -> Result<Var, TensorError> {
        let hidden = tape.dense(x, &self.w1, &self.b1, Activation::Tanh, Some(t))?;
        tape.dense(&hidden, &self.w2, &self.b2, Activation::Tanh, Some(t))
    }

    /// Pre-sigmoid scores `W3 z + B3`.
    pub fn logits(&self, tape: &Tape, z: &Var) -> Result<Var, TensorError> {
        tape.affine(z, &self.w3, &self.b3)
    }

    /// Class probabilities `sigmoid(W3 z + B3)`.
    pub fn classify(&self, tape: &Tape, z: &Var) -> Result<Var, TensorError> {
        tape.dense(z, &self.w3, &self.b3, Activation::Sigmoid, None)
    }
}

/// Neural SDE for two-dimensional trajectories.
#[derive(Clone, Debug)]
pub struct SpiralSde {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    w3: Var,
    b3: Var,
}

impl SpiralSde {
    pub fn new(vars: &[Var]) -> Result<Self, NdeError> {
        let [w1, b1, w2, b2, w3, b3] = take::<6>(vars, "spiral-sde")?;
        let hidden = w1.shape().first().copied().unwrap_or(0);
        let dim = w2.shape().first().copied().unwrap_or(0);
        check_layout(vars, &spiral_sde_layout(dim, hidden))?;
        Ok(SpiralSde { w1, b1, w2, b2, w3, b3 })
    }

    pub fn vars(&self) -> [&Var; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    /// `W2 tanh(W1 x^3 + B1) + B2`, with the cube taken elementwise.
    pub fn drift(&self, tape: &Tape, _t: f64, x: &Var) -> Result<Var, TensorError> {
        let cube = tape.pow(x, 3.0)?;
        let hidden = tape.dense(&cube, &self.w1, &self.b1, Activation::Tanh, None)?;
        tape.affine(&hidden, &self.w2, &self.b2)
    }

    /// `W3 x + B3`.
    pub fn diffusion(&self, tape: &Tape, _t: f64, x: &Var) -> Result<Var, TensorError> {
        tape.affine(x, &self.w3, &self.b3)
    }
}

/// Image-classification neural SDE on a low-dimensional latent state.
#[derive(Clone, Debug)]
pub struct SdeClassifier {
    vars: [Var; 10],
}

impl SdeClassifier {
    pub fn new(vars: &[Var]) -> Result<Self, NdeError> {
        let vars = take::<10>(vars, "sde-classifier")?;
        let latent = vars[0].shape().first().copied().unwrap_or(0);
        let features = vars[0].shape().get(1).copied().unwrap_or(0);
        let hidden = vars[2].shape().first().copied().unwrap_or(0);
        let classes = vars[8].shape().first().copied().unwrap_or(0);
        check_layout(&vars, &sde_classifier_layout(features, latent, hidden, classes))?;
        Ok(SdeClassifier { vars })
    }

    pub fn vars(&self) -> Vec<&Var> {
        self.vars.iter().collect()
    }

    /// Input map `W1 x + B1` to the latent initial state.
    pub fn encode(&self, tape: &Tape, x: &Var) -> Result<Var, TensorError> {
        tape.affine(x, &self.vars[0], &self.vars[1])
    }

    /// `W3 tanh(W2 z + B2) + B3`.
    pub fn drift(&self, tape: &Tape, _t: f64, z: &Var) -> Result<Var, TensorError> {
        let hidden = tape.dense(z, &self.vars[2], &self.vars[3], Activation::Tanh, None)?;
        tape.affine(&hidden, &self.vars[4], &self.vars[5])
    }

    /// `W4 z + B4`, one noise coefficient per latent component.
    pub fn diffusion(&self, tape: &Tape, _t: f64, z: &Var) -> Result<Var, TensorError> {
        tape.affine(z, &self.vars[6], &self.vars[7])
    }

    /// Output map `W5 z + B5`.
    pub fn logits(&self, tape: &Tape, z: &Var) -> Result<Var, TensorError> {
        tape.affine(z, &self.vars[8], &self.vars[9])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mlp_has_zero_dynamics_and_half_probabilities() {
        let tape = Tape::new();
        let set = ParamSet::zeros(&mlp_ode_layout(6, 4, 3));
        let model = MlpOde::new(&set.bind(&tape)).unwrap();
        let x = tape.constant(Tensor::full(&[2, 6], 0.7));
        let dz = model.dynamics(&tape, 0.3, &x).unwrap();
        assert_eq!(dz.shape(), &[2, 6]);
        assert!(dz.value().data().iter().all(|&v| v == 0.0));
        let p = model.classify(&tape, &x).unwrap();
        assert_eq!(p.shape(), &[2, 3]);
        assert!(p.value().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn full_size_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tape = Tape::new();
        let mlp = ModelKind::MlpOde.init(&mut rng);
        assert_eq!(mlp.get("W1").unwrap().shape(), &[100, 785]);
        assert_eq!(mlp.get("W2").unwrap().shape(), &[784, 101]);
        let model = MlpOde::new(&mlp.bind(&tape)).unwrap();
        let x = tape.constant(Tensor::zeros(&[3, 784]));
        assert_eq!(model.dynamics(&tape, 0.0, &x).unwrap().shape(), &[3, 784]);
        assert_eq!(model.logits(&tape, &x).unwrap().shape(), &[3, 10]);

        let sde = ModelKind::SdeClassifier.init(&mut rng);
        let model = SdeClassifier::new(&sde.bind(&tape)).unwrap();
        let z = model.encode(&tape, &x).unwrap();
        assert_eq!(z.shape(), &[3, 32]);
        assert_eq!(model.drift(&tape, 0.0, &z).unwrap().shape(), &[3, 32]);
        assert_eq!(model.diffusion(&tape, 0.0, &z).unwrap().shape(), &[3, 32]);
        assert_eq!(model.logits(&tape, &z).unwrap().shape(), &[3, 10]);
    }

    #[test]
    fn zero_spiral_is_inert_and_diffusion_linear() {
        let tape = Tape::new();
        let set = ParamSet::zeros(&ModelKind::SpiralSde.layout());
        let model = SpiralSde::new(&set.bind(&tape)).unwrap();
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap());
        assert!(model.drift(&tape, 0.0, &x).unwrap().value().data().iter().all(|&v| v == 0.0));
        assert!(model.diffusion(&tape, 0.0, &x).unwrap().value().data().iter().all(|&v| v == 0.0));

        let set = ModelKind::SpiralSde.init(&mut ChaCha8Rng::seed_from_u64(3));
        let model = SpiralSde::new(&set.bind(&tape)).unwrap();
        let x2 = tape.scale(&x, 2.0).unwrap();
        let g1 = model.diffusion(&tape, 0.0, &x).unwrap();
        let g2 = model.diffusion(&tape, 0.0, &x2).unwrap();
        for (a, b) in g1.value().data().iter().zip(g2.value().data()) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_shapes_rejected() {
        let tape = Tape::new();
        let mut set = ParamSet::zeros(&mlp_ode_layout(6, 4, 3));
        set.tensors_mut()[1] = Tensor::zeros(&[5]);
        assert!(MlpOde::new(&set.bind(&tape)).is_err());
        assert!(SpiralSde::new(&set.bind(&tape)[..3]).is_err());
    }
}
