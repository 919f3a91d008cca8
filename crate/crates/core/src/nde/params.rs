use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NdeError;
use crate::tensor::{Tape, Tensor, Var};

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredParams {
    model: String,
    params: Vec<StoredTensor>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        ParamSet { names, tensors }
    }

    /// Glorot-uniform matrices and zero vectors for the given `(name, shape)` layout.
    pub fn glorot<R: Rng + ?Sized>(layout: &[(&str, Vec<usize>)], rng: &mut R) -> Self {
        let entries = layout
            .iter()
            .map(|(name, shape)| {
                let t = if shape.len() == 2 {
                    let (rows, cols) = (shape[0], shape[1]);
                    let limit = (6.0 / (rows + cols) as f64).sqrt();
                    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
                    Tensor::new(shape.clone(), data).expect("layout shape")
                } else {
                    Tensor::zeros(shape)
                };
                (name.to_string(), t)
            })
            .collect();
        ParamSet::new(entries)
    }

    pub fn zeros(layout: &[(&str, Vec<usize>)]) -> Self {
        ParamSet::new(layout.iter().map(|(n, s)| (n.to_string(), Tensor::zeros(s))).collect())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a differentiable leaf, in order.
    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.var(t.clone())).collect()
    }

    /// Records every tensor as a constant, in order.
    pub fn bind_constant(&self, tape: &Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Checks names and shapes against a layout and that every entry is finite.
    pub fn check(&self, layout: &[(&str, Vec<usize>)]) -> Result<(), NdeError> {
        if self.len() != layout.len() {
            return Err(NdeError::Params(format!("expected {} tensors, got {}", layout.len(), self.len())));
        }
        for ((name, t), (want_name, want_shape)) in self.names.iter().zip(&self.tensors).zip(layout) {
            if name != want_name || t.shape() != want_shape.as_slice() {
                return Err(NdeError::Params(format!(
                    "expected {want_name} {want_shape:?}, got {name} {:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(NdeError::Params(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self, model: &str) -> String {
        let stored = StoredParams {
            model: model.to_string(),
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| StoredTensor {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&stored).expect("parameters serialize")
    }

    /// Parses [`ParamSet::to_json`] output; returns the model tag and the set.
    pub fn from_json(text: &str) -> Result<(String, ParamSet), NdeError> {
        let stored: StoredParams = serde_json::from_str(text).map_err(|e| NdeError::Params(e.to_string()))?;
        let mut entries = Vec::with_capacity(stored.params.len());
        for p in stored.params {
            let t = Tensor::new(p.shape, p.data).map_err(|e| NdeError::Params(format!("{}: {e}", p.name)))?;
            entries.push((p.name, t));
        }
        Ok((stored.model, ParamSet::new(entries)))
    }
}
