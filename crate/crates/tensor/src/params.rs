use crate::error::{KernelError, Result};
use crate::layer::LayerSpec;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub type ParamId = usize;

/// Ordered named parameter tensors, each with a gradient accumulator of the
/// same shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates every layer's parameters with uniform `±sqrt(1/fan_in)` values.
    pub fn init(layers: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let mut ps = Self::new();
        for layer in layers {
            layer.validate()?;
            let bound = (1.0 / layer.fan_in() as f64).sqrt();
            for (suffix, shape) in layer.param_shapes() {
                let mut t = Tensor::zeros(&shape);
                for v in t.data_mut() {
                    *v = rng.uniform_range(-bound, bound);
                }
                ps.push(format!("{}.{suffix}", layer.name), t);
            }
        }
        Ok(ps)
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name.into());
        self.names.len() - 1
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| KernelError::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub(crate) fn split_mut(&mut self) -> (&[Tensor], &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor], &[Tensor]) {
        (&mut self.values, &self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replaces values from `(name, tensor)` records, requiring an exact
    /// match of names and shapes.
    pub fn load_values(&mut self, records: &[(String, Tensor)]) -> Result<()> {
        if records.len() != self.len() {
            return Err(KernelError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.len(),
                records.len()
            )));
        }
        for (name, t) in records {
            let id = self.id(name)?;
            if t.shape() != self.values[id].shape() {
                return Err(KernelError::Checkpoint(format!(
                    "shape mismatch for `{name}`: checkpoint {:?}, model {:?}",
                    t.shape(),
                    self.values[id].shape()
                )));
            }
            self.values[id] = t.clone();
        }
        Ok(())
    }

    pub fn records(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }
}
