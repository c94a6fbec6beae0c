//! Reverse-mode gradient tape over the fixed layer vocabulary.
//!
//! A tape records one forward pass of one sample. Parameters are not copied
//! onto the tape; ops refer to them by [`ParamId`] and `backward` writes
//! their gradients straight into the [`ParamSet`].

use std::sync::Arc;

use crate::error::{KernelError, Result};
use crate::kernels::{self, ConvDims, GruCache, GruGrads, GruParams, Mode};
use crate::params::{ParamId, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub type Var = usize;

#[derive(Debug)]
enum Op {
    Input,
    Dense { x: Var, w: ParamId, b: ParamId },
    Conv { x: Var, w: ParamId, b: ParamId, dims: ConvDims },
    Aggregate { x: Var, adj: Arc<Tensor> },
    Gru { x: Var, p: [ParamId; 4], return_all: bool, cache: GruCache },
    Relu { x: Var },
    Dropout { x: Var, mask: Option<Vec<f64>> },
    Add { a: Var, b: Var },
    Concat { parts: Vec<Var> },
    Reshape { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    layer: String,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn gru_params(ps: &ParamSet, p: [ParamId; 4]) -> GruParams<'_> {
    GruParams {
        w_ih: ps.value(p[0]),
        w_hh: ps.value(p[1]),
        b_ih: ps.value(p[2]),
        b_hh: ps.value(p[3]),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of the most recent node recorded under `layer`.
    pub fn layer_output(&self, layer: &str) -> Option<&Tensor> {
        self.nodes.iter().rev().find(|n| n.layer == layer).map(|n| &n.value)
    }

    /// Name of the first layer whose output holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.nodes
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| n.layer.as_str())
    }

    fn push(&mut self, value: Tensor, op: Op, layer: &str, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            layer: layer.to_string(),
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v].needs_grad
    }

    pub fn input(&mut self, value: Tensor, name: &str) -> Var {
        self.push(value, Op::Input, name, false)
    }

    pub fn dense(&mut self, ps: &ParamSet, x: Var, w: ParamId, b: ParamId, layer: &str) -> Result<Var> {
        let y = kernels::dense_forward(self.value(x), ps.value(w), ps.value(b))?;
        Ok(self.push(y, Op::Dense { x, w, b }, layer, true))
    }

    /// Time convolution with same padding on `[T, C]` or `[T, K, C]`.
    pub fn conv(&mut self, ps: &ParamSet, x: Var, w: ParamId, b: ParamId, layer: &str) -> Result<Var> {
        let dims = kernels::conv_dims(self.value(x), ps.value(w), ps.value(b))?;
        let y = kernels::conv_time(self.value(x), ps.value(w), ps.value(b))?;
        Ok(self.push(y, Op::Conv { x, w, b, dims }, layer, true))
    }

    pub fn aggregate(&mut self, x: Var, adj: &Arc<Tensor>, layer: &str) -> Result<Var> {
        let y = kernels::graph_aggregate(self.value(x), adj)?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Aggregate { x, adj: Arc::clone(adj) }, layer, needs))
    }

    /// GRU from a zero initial state.
    pub fn gru(&mut self, ps: &ParamSet, x: Var, p: [ParamId; 4], return_all: bool, layer: &str) -> Result<Var> {
        let gp = gru_params(ps, p);
        let h = gp.hidden();
        let cache = kernels::gru_run(self.value(x), &vec![0.0; h], gp)?;
        let steps = self.value(x).shape()[0];
        let y = if return_all {
            Tensor::new(vec![steps, h], cache.hs.clone())?
        } else {
            Tensor::vector(cache.hs[(steps - 1) * h..].to_vec())
        };
        Ok(self.push(y, Op::Gru { x, p, return_all, cache }, layer, true))
    }

    pub fn relu(&mut self, x: Var, layer: &str) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(y, Op::Relu { x }, layer, needs)
    }

    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut Rng, layer: &str) -> Result<Var> {
        let needs = self.needs(x);
        match mode {
            Mode::Eval => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(KernelError::DropoutRate(rate));
                }
                let y = self.value(x).clone();
                Ok(self.push(y, Op::Dropout { x, mask: None }, layer, needs))
            }
            Mode::Train => {
                let mask = kernels::dropout_mask(self.value(x).len(), rate, rng)?;
                let mut y = self.value(x).clone();
                for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                Ok(self.push(y, Op::Dropout { x, mask: Some(mask) }, layer, needs))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var, layer: &str) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(KernelError::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut y = ta.clone();
        for (v, w) in y.data_mut().iter_mut().zip(tb.data()) {
            *v += w;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add { a, b }, layer, needs))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var], layer: &str) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let lead = &first[..first.len() - 1];
        let rows: usize = lead.iter().product();
        let mut width = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(KernelError::ShapeMismatch {
                    op: "concat",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            width += s[s.len() - 1];
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let w = t.shape()[t.rank() - 1];
                data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { parts: parts.to_vec() }, layer, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>, layer: &str) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::Reshape { x }, layer, needs))
    }

    /// Back-propagates `dout` from `out`, accumulating parameter gradients.
    pub fn backward(&self, out: Var, dout: &[f64], ps: &mut ParamSet) {
        assert_eq!(dout.len(), self.nodes[out].value.len(), "seed gradient length");
        let mut grads: Vec<Option<Vec<f64>>> = (0..=out).map(|_| None).collect();
        grads[out] = Some(dout.to_vec());
        let (values, pgrads) = ps.split_mut();

        fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
            grads[v].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Dense { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let [dw, db] = pgrads.get_disjoint_mut([*w, *b]).expect("distinct params");
                    let dx = self.needs(*x).then(|| slot(&mut grads, *x, xv.len()));
                    kernels::dense_backward(xv.data(), values[*w].data(), &g, dx, dw.data_mut(), db.data_mut());
                }
                Op::Conv { x, w, b, dims } => {
                    let xv = &self.nodes[*x].value;
                    let [dw, db] = pgrads.get_disjoint_mut([*w, *b]).expect("distinct params");
                    let dx = self.needs(*x).then(|| slot(&mut grads, *x, xv.len()));
                    kernels::conv_time_backward(*dims, xv.data(), values[*w].data(), &g, dx, dw.data_mut(), db.data_mut());
                }
                Op::Aggregate { x, adj } => {
                    let s = self.nodes[*x].value.shape();
                    let (nodes, chans) = (s[1], s[2]);
                    let dx = slot(&mut grads, *x, self.nodes[*x].value.len());
                    kernels::aggregate_backward(nodes, chans, adj.data(), &g, dx);
                }
                Op::Gru { x, p, return_all, cache } => {
                    let xv = &self.nodes[*x].value;
                    let gp = GruParams {
                        w_ih: &values[p[0]],
                        w_hh: &values[p[1]],
                        b_ih: &values[p[2]],
                        b_hh: &values[p[3]],
                    };
                    let h = gp.hidden();
                    let steps = xv.shape()[0];
                    let dhs = if *return_all {
                        g
                    } else {
                        let mut d = vec![0.0; steps * h];
                        d[(steps - 1) * h..].copy_from_slice(&g);
                        d
                    };
                    let [dw_ih, dw_hh, db_ih, db_hh] = pgrads.get_disjoint_mut(*p).expect("distinct params");
                    let dx = self.needs(*x).then(|| slot(&mut grads, *x, xv.len()));
                    kernels::gru_backward(
                        xv,
                        gp,
                        cache,
                        &dhs,
                        GruGrads {
                            dx,
                            dw_ih: dw_ih.data_mut(),
                            dw_hh: dw_hh.data_mut(),
                            db_ih: db_ih.data_mut(),
                            db_hh: db_hh.data_mut(),
                        },
                    );
                }
                Op::Relu { x } => {
                    let xv = self.nodes[*x].value.data();
                    let dx = slot(&mut grads, *x, xv.len());
                    for ((d, &gv), &v) in dx.iter_mut().zip(&g).zip(xv) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = slot(&mut grads, *x, g.len());
                    match mask {
                        Some(m) => dx.iter_mut().zip(&g).zip(m).for_each(|((d, gv), mv)| *d += gv * mv),
                        None => dx.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv),
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            slot(&mut grads, v, g.len()).iter_mut().zip(&g).for_each(|(d, gv)| *d += gv);
                        }
                    }
                }
                Op::Concat { parts } => {
                    let shape = node.value.shape();
                    let width = shape[shape.len() - 1];
                    let rows = node.value.len() / width;
                    let mut offset = 0;
                    for &p in parts {
                        let pv = &self.nodes[p].value;
                        let pw = pv.shape()[pv.rank() - 1];
                        if self.needs(p) {
                            let dp = slot(&mut grads, p, pv.len());
                            for r in 0..rows {
                                let src = &g[r * width + offset..r * width + offset + pw];
                                for (d, s) in dp[r * pw..(r + 1) * pw].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        offset += pw;
                    }
                }
                Op::Reshape { x } => {
                    slot(&mut grads, *x, g.len()).iter_mut().zip(&g).for_each(|(d, gv)| *d += gv);
                }
            }
        }
    }
}
