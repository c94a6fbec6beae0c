use serde::{Deserialize, Serialize};

use crate::error::{KernelError, Result};

/// Layer vocabulary used to describe the models declaratively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Conv1d { c_in: usize, c_out: usize, width: usize },
    /// 1×1 convolution.
    ConvPoint { c_in: usize, c_out: usize },
    Gru { inputs: usize, hidden: usize, return_all: bool },
    GraphConv { nodes: usize, c_in: usize, c_out: usize, width: usize },
    Dropout { rate: f64 },
    Relu,
    Sigmoid,
    Flatten,
    Add,
    Concat,
}

/// One layer of a model: a name, its kind, and the per-sample shape it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind, input_shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            kind,
            input_shape: input_shape.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(KernelError::InvalidLayer {
                layer: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return bad("input extents must be >= 1");
        }
        let extents: &[usize] = match &self.kind {
            LayerKind::Dense { inputs, outputs } => &[*inputs, *outputs],
            LayerKind::Conv1d { c_in, c_out, width } | LayerKind::GraphConv { c_in, c_out, width, .. } => {
                if width % 2 == 0 {
                    return bad("kernel width must be odd for same padding");
                }
                &[*c_in, *c_out, *width]
            }
            LayerKind::ConvPoint { c_in, c_out } => &[*c_in, *c_out],
            LayerKind::Gru { inputs, hidden, .. } => &[*inputs, *hidden],
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return bad("dropout rate must lie in [0, 1)");
                }
                &[]
            }
            _ => &[],
        };
        if extents.contains(&0) {
            return bad("all extents must be >= 1");
        }
        if let LayerKind::GraphConv { nodes, .. } = self.kind {
            if nodes == 0 {
                return bad("graph needs at least one node");
            }
        }
        Ok(())
    }

    /// Parameter tensors owned by the layer as `(suffix, shape)`.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => {
                vec![("weight", vec![inputs, outputs]), ("bias", vec![outputs])]
            }
            LayerKind::Conv1d { c_in, c_out, width } | LayerKind::GraphConv { c_in, c_out, width, .. } => {
                vec![("weight", vec![width, c_in, c_out]), ("bias", vec![c_out])]
            }
            LayerKind::ConvPoint { c_in, c_out } => {
                vec![("weight", vec![1, c_in, c_out]), ("bias", vec![c_out])]
            }
            LayerKind::Gru { inputs, hidden, .. } => vec![
                ("w_ih", vec![inputs, 3 * hidden]),
                ("w_hh", vec![hidden, 3 * hidden]),
                ("b_ih", vec![3 * hidden]),
                ("b_hh", vec![3 * hidden]),
            ],
            _ => Vec::new(),
        }
    }

    /// Fan-in used for the `±sqrt(1/fan_in)` uniform initializer. GRUs use
    /// the hidden width for all four tensors.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv1d { c_in, width, .. } | LayerKind::GraphConv { c_in, width, .. } => c_in * width,
            LayerKind::ConvPoint { c_in, .. } => c_in,
            LayerKind::Gru { hidden, .. } => hidden,
            _ => 1,
        }
    }
}
