use serde::{Deserialize, Serialize};

use super::{Matrix, RngStream};
use crate::error::{Error, Result};

/// Handle to a [`Parameter`] inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable matrix together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    #[serde(skip)]
    gradient: Option<Matrix>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        Parameter {
            name: name.into(),
            value,
            gradient: None,
        }
    }

    /// Accumulated gradient; zero before any backward pass.
    pub fn gradient(&self) -> Matrix {
        self.gradient
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.value.rows(), self.value.cols()))
    }

    pub(crate) fn gradient_mut(&mut self) -> &mut Matrix {
        let (r, c) = self.value.shape();
        self.gradient.get_or_insert_with(|| Matrix::zeros(r, c))
    }

    pub fn reset_gradient(&mut self) {
        self.gradient = None;
    }
}

/// Owns every trainable parameter of a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Adds a `rows x cols` parameter drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut RngStream,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = rng.uniform_matrix(rows, cols, -bound, bound);
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::reset_gradient);
    }

    /// Plain gradient descent: `value -= learning_rate * gradient`, then all
    /// gradients are reset.
    ///
    /// The step is all-or-nothing: if any gradient holds a NaN or infinity
    /// nothing is updated and the offending parameter is named in the error.
    pub fn sgd_step(&mut self, learning_rate: f64) -> Result<()> {
        if let Some(bad) = self
            .params
            .iter()
            .find(|p| p.gradient.as_ref().is_some_and(|g| !g.is_finite()))
        {
            return Err(Error::Divergence {
                op: format!("gradient of parameter `{}`", bad.name),
            });
        }
        for p in &mut self.params {
            if let Some(g) = p.gradient.take() {
                p.value.axpy(-learning_rate, &g)?;
            }
        }
        Ok(())
    }
}
