//! Forward kernels and their hand-written vector-Jacobian products.
//!
//! Backward functions *accumulate* into the gradient buffers they are given.
//! Layouts follow `y = x W + b` everywhere: weights are stored input-major.

use crate::error::{KernelError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> KernelError {
    KernelError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

// ---------------------------------------------------------------- dense

/// `y = x W + b` for a single vector `x` of shape `[in]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 1 || w.rank() != 2 || w.shape()[0] != x.len() {
        return Err(mismatch("dense", x.shape(), w.shape()));
    }
    let out = w.shape()[1];
    if b.shape() != [out] {
        return Err(mismatch("dense bias", w.shape(), b.shape()));
    }
    let mut y = b.data().to_vec();
    dense_acc(x.data(), w.data(), &mut y);
    Ok(Tensor::vector(y))
}

pub(crate) fn dense_acc(x: &[f64], w: &[f64], y: &mut [f64]) {
    let out = y.len();
    // Four input rows per pass keep `y` in registers longer.
    let mut chunks = x.chunks_exact(4);
    let mut i = 0;
    for c in &mut chunks {
        let rows = &w[i * out..(i + 4) * out];
        let (r0, rest) = rows.split_at(out);
        let (r1, rest) = rest.split_at(out);
        let (r2, r3) = rest.split_at(out);
        for (j, yo) in y.iter_mut().enumerate() {
            *yo += c[0] * r0[j] + c[1] * r1[j] + c[2] * r2[j] + c[3] * r3[j];
        }
        i += 4;
    }
    for &xi in chunks.remainder() {
        let row = &w[i * out..(i + 1) * out];
        for (yo, &wo) in y.iter_mut().zip(row) {
            *yo += xi * wo;
        }
        i += 1;
    }
}

pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let out = dy.len();
    for (g, &d) in db.iter_mut().zip(dy) {
        *g += d;
    }
    for (i, &xi) in x.iter().enumerate() {
        let grow = &mut dw[i * out..(i + 1) * out];
        for (g, &d) in grow.iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
    if let Some(dx) = dx {
        for (i, g) in dx.iter_mut().enumerate() {
            let row = &w[i * out..(i + 1) * out];
            *g += row.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

// ---------------------------------------------------------------- temporal convolution

/// Geometry of a per-node convolution along the time axis of a `[T, K, C]`
/// tensor. A rank-2 `[T, C]` input is the `K = 1` case.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub steps: usize,
    pub nodes: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub width: usize,
}

pub(crate) fn conv_dims(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<ConvDims> {
    let (steps, nodes, c_in) = match x.shape() {
        [t, c] => (*t, 1, *c),
        [t, n, c] => (*t, *n, *c),
        s => return Err(mismatch("conv input", s, &[0, 0])),
    };
    let [width, kc, c_out] = *k.shape() else {
        return Err(mismatch("conv kernel", k.shape(), &[0, c_in, 0]));
    };
    if width % 2 == 0 {
        return Err(KernelError::EvenWidth(width));
    }
    if kc != c_in {
        return Err(mismatch("conv channels", x.shape(), k.shape()));
    }
    if b.shape() != [c_out] {
        return Err(mismatch("conv bias", k.shape(), b.shape()));
    }
    Ok(ConvDims {
        steps,
        nodes,
        c_in,
        c_out,
        width,
    })
}

pub(crate) fn conv_time_acc(d: ConvDims, x: &[f64], k: &[f64], b: &[f64], y: &mut [f64]) {
    let pad = d.width / 2;
    for t in 0..d.steps {
        for n in 0..d.nodes {
            let yo = &mut y[(t * d.nodes + n) * d.c_out..(t * d.nodes + n + 1) * d.c_out];
            yo.copy_from_slice(b);
        }
        for tap in 0..d.width {
            let Some(s) = (t + tap).checked_sub(pad) else { continue };
            if s >= d.steps {
                continue;
            }
            for n in 0..d.nodes {
                let xs = &x[(s * d.nodes + n) * d.c_in..(s * d.nodes + n + 1) * d.c_in];
                let yo = &mut y[(t * d.nodes + n) * d.c_out..(t * d.nodes + n + 1) * d.c_out];
                for (c, &xv) in xs.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let kr = &k[(tap * d.c_in + c) * d.c_out..(tap * d.c_in + c + 1) * d.c_out];
                    for (yv, &kv) in yo.iter_mut().zip(kr) {
                        *yv += xv * kv;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_time_backward(
    d: ConvDims,
    x: &[f64],
    k: &[f64],
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    dk: &mut [f64],
    db: &mut [f64],
) {
    let pad = d.width / 2;
    for row in dy.chunks_exact(d.c_out) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    for t in 0..d.steps {
        for tap in 0..d.width {
            let Some(s) = (t + tap).checked_sub(pad) else { continue };
            if s >= d.steps {
                continue;
            }
            for n in 0..d.nodes {
                let dyo = &dy[(t * d.nodes + n) * d.c_out..(t * d.nodes + n + 1) * d.c_out];
                let xbase = (s * d.nodes + n) * d.c_in;
                for c in 0..d.c_in {
                    let kbase = (tap * d.c_in + c) * d.c_out;
                    let xv = x[xbase + c];
                    let dkr = &mut dk[kbase..kbase + d.c_out];
                    for (g, &v) in dkr.iter_mut().zip(dyo) {
                        *g += xv * v;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let kr = &k[kbase..kbase + d.c_out];
                        dx[xbase + c] += kr.iter().zip(dyo).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
}

/// Convolution along time with zero "same" padding.
///
/// `x` is `[T, C_in]`, `k` is `[width, C_in, C_out]`, `b` is `[C_out]`;
/// the output is `[T, C_out]`.
pub fn conv1d_same(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(mismatch("conv1d input", x.shape(), &[0, 0]));
    }
    conv_time(x, k, b)
}

/// Per-node time convolution; accepts `[T, C]` or `[T, K, C]` input.
pub fn conv_time(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = conv_dims(x, k, b)?;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d.c_out;
    let mut y = Tensor::zeros(&shape);
    conv_time_acc(d, x.data(), k.data(), b.data(), y.data_mut());
    Ok(y)
}

// ---------------------------------------------------------------- graph aggregation

pub(crate) fn aggregate_acc(nodes: usize, chans: usize, a: &[f64], x: &[f64], y: &mut [f64]) {
    let frame = nodes * chans;
    for (xf, yf) in x.chunks_exact(frame).zip(y.chunks_exact_mut(frame)) {
        for i in 0..nodes {
            let yi = &mut yf[i * chans..(i + 1) * chans];
            for j in 0..nodes {
                let aij = a[i * nodes + j];
                if aij == 0.0 {
                    continue;
                }
                for (yv, &xv) in yi.iter_mut().zip(&xf[j * chans..(j + 1) * chans]) {
                    *yv += aij * xv;
                }
            }
        }
    }
}

pub(crate) fn aggregate_backward(nodes: usize, chans: usize, a: &[f64], dy: &[f64], dx: &mut [f64]) {
    let frame = nodes * chans;
    for (dyf, dxf) in dy.chunks_exact(frame).zip(dx.chunks_exact_mut(frame)) {
        for i in 0..nodes {
            let dyi = &dyf[i * chans..(i + 1) * chans];
            for j in 0..nodes {
                let aij = a[i * nodes + j];
                if aij == 0.0 {
                    continue;
                }
                for (g, &v) in dxf[j * chans..(j + 1) * chans].iter_mut().zip(dyi) {
                    *g += aij * v;
                }
            }
        }
    }
}

/// Neighbourhood aggregation `x'[t] = A x[t]` along the node axis.
pub fn graph_aggregate(x: &Tensor, a_norm: &Tensor) -> Result<Tensor> {
    let [_, nodes, chans] = *x.shape() else {
        return Err(mismatch("graph input", x.shape(), &[0, 0, 0]));
    };
    if a_norm.shape() != [nodes, nodes] {
        return Err(mismatch("graph adjacency", x.shape(), a_norm.shape()));
    }
    let mut y = Tensor::zeros(x.shape());
    aggregate_acc(nodes, chans, a_norm.data(), x.data(), y.data_mut());
    Ok(y)
}

/// Graph convolution: aggregate over adjacent keypoints with `a_norm`, then
/// convolve each node along time (same padding).
pub fn graph_conv(x: &Tensor, a_norm: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let agg = graph_aggregate(x, a_norm)?;
    conv_time(&agg, k, b)
}

// ---------------------------------------------------------------- GRU

/// GRU weights, gates packed in `(update, reset, candidate)` order.
///
/// `w_ih: [in, 3h]`, `w_hh: [h, 3h]`, `b_ih: [3h]`, `b_hh: [3h]`. The reset
/// gate multiplies the hidden state before the candidate projection:
///
/// ```text
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// n  = tanh(x W_in + b_in + (r ⊙ h) W_hn + b_hn)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub b_ih: &'a Tensor,
    pub b_hh: &'a Tensor,
}

impl GruParams<'_> {
    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[0]
    }

    fn check(&self, inputs: usize) -> Result<usize> {
        let h = self.hidden();
        let ok = self.w_ih.shape() == [inputs, 3 * h]
            && self.w_hh.shape() == [h, 3 * h]
            && self.b_ih.shape() == [3 * h]
            && self.b_hh.shape() == [3 * h];
        if ok {
            Ok(h)
        } else {
            Err(mismatch("gru weights", &[inputs, h], self.w_ih.shape()))
        }
    }
}

/// Activations recorded by the forward pass, one row of `h` per step.
#[derive(Debug, Clone, Default)]
pub(crate) struct GruCache {
    pub h0: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    pub hs: Vec<f64>,
}

pub(crate) fn gru_run(x: &Tensor, h0: &[f64], p: GruParams<'_>) -> Result<GruCache> {
    let [steps, inputs] = *x.shape() else {
        return Err(mismatch("gru input", x.shape(), &[0, 0]));
    };
    if steps == 0 {
        return Err(KernelError::EmptySequence);
    }
    let h = p.check(inputs)?;
    if h0.len() != h {
        return Err(mismatch("gru h0", &[h0.len()], &[h]));
    }
    let (w_ih, w_hh, b_ih, b_hh) = (p.w_ih.data(), p.w_hh.data(), p.b_ih.data(), p.b_hh.data());
    let h3 = 3 * h;
    let mut cache = GruCache {
        h0: h0.to_vec(),
        z: vec![0.0; steps * h],
        r: vec![0.0; steps * h],
        n: vec![0.0; steps * h],
        hs: vec![0.0; steps * h],
    };
    let mut gi = vec![0.0; h3];
    let mut gh = vec![0.0; h3];
    let mut rh = vec![0.0; h];
    let mut prev = h0.to_vec();
    for t in 0..steps {
        gi.copy_from_slice(b_ih);
        dense_acc(x.row(t), w_ih, &mut gi);
        gh[..2 * h].copy_from_slice(&b_hh[..2 * h]);
        for (i, &hv) in prev.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            let row = &w_hh[i * h3..i * h3 + 2 * h];
            for (g, &w) in gh[..2 * h].iter_mut().zip(row) {
                *g += hv * w;
            }
        }
        let z = &mut cache.z[t * h..(t + 1) * h];
        let r = &mut cache.r[t * h..(t + 1) * h];
        for j in 0..h {
            z[j] = sigmoid(gi[j] + gh[j]);
            r[j] = sigmoid(gi[h + j] + gh[h + j]);
            rh[j] = r[j] * prev[j];
        }
        let gn = &mut gh[2 * h..];
        gn.copy_from_slice(&b_hh[2 * h..]);
        for (i, &v) in rh.iter().enumerate() {
            let row = &w_hh[i * h3 + 2 * h..(i + 1) * h3];
            for (g, &w) in gn.iter_mut().zip(row) {
                *g += v * w;
            }
        }
        let n = &mut cache.n[t * h..(t + 1) * h];
        let hs = &mut cache.hs[t * h..(t + 1) * h];
        for j in 0..h {
            n[j] = (gi[2 * h + j] + gn[j]).tanh();
            hs[j] = (1.0 - z[j]) * n[j] + z[j] * prev[j];
        }
        prev.copy_from_slice(hs);
    }
    Ok(cache)
}

/// Gradients flowing into a GRU.
pub(crate) struct GruGrads<'a> {
    pub dx: Option<&'a mut [f64]>,
    pub dw_ih: &'a mut [f64],
    pub dw_hh: &'a mut [f64],
    pub db_ih: &'a mut [f64],
    pub db_hh: &'a mut [f64],
}

/// Backpropagation through time. `dhs` holds upstream gradients for every
/// hidden state (`[T, h]`, zero rows where the output was not used).
pub(crate) fn gru_backward(x: &Tensor, p: GruParams<'_>, cache: &GruCache, dhs: &[f64], g: GruGrads<'_>) {
    let [steps, inputs] = *x.shape() else { unreachable!() };
    let h = p.hidden();
    let h3 = 3 * h;
    let (w_ih, w_hh) = (p.w_ih.data(), p.w_hh.data());
    let GruGrads {
        mut dx,
        dw_ih,
        dw_hh,
        db_ih,
        db_hh,
    } = g;
    let mut dh = vec![0.0; h];
    let mut dprev = vec![0.0; h];
    let mut dgate = vec![0.0; h3];
    let mut drh = vec![0.0; h];
    for t in (0..steps).rev() {
        for j in 0..h {
            dh[j] += dhs[t * h + j];
        }
        let prev = if t == 0 { &cache.h0[..] } else { &cache.hs[(t - 1) * h..t * h] };
        let z = &cache.z[t * h..(t + 1) * h];
        let r = &cache.r[t * h..(t + 1) * h];
        let n = &cache.n[t * h..(t + 1) * h];
        for j in 0..h {
            let dn = dh[j] * (1.0 - z[j]);
            let dz = dh[j] * (prev[j] - n[j]);
            dprev[j] = dh[j] * z[j];
            dgate[2 * h + j] = dn * (1.0 - n[j] * n[j]);
            dgate[j] = dz * z[j] * (1.0 - z[j]);
        }
        // candidate: hidden-side projection of r ⊙ h
        let dan = &dgate[2 * h..];
        for i in 0..h {
            let rhi = r[i] * prev[i];
            let row = &w_hh[i * h3 + 2 * h..(i + 1) * h3];
            let grow = &mut dw_hh[i * h3 + 2 * h..(i + 1) * h3];
            let mut acc = 0.0;
            for j in 0..h {
                grow[j] += rhi * dan[j];
                acc += row[j] * dan[j];
            }
            drh[i] = acc;
        }
        for j in 0..h {
            db_hh[2 * h + j] += dgate[2 * h + j];
            let dr = drh[j] * prev[j];
            dprev[j] += drh[j] * r[j];
            dgate[h + j] = dr * r[j] * (1.0 - r[j]);
        }
        // hidden side of update and reset gates
        for i in 0..h {
            let row = &w_hh[i * h3..i * h3 + 2 * h];
            let grow = &mut dw_hh[i * h3..i * h3 + 2 * h];
            let mut acc = 0.0;
            for j in 0..2 * h {
                grow[j] += prev[i] * dgate[j];
                acc += row[j] * dgate[j];
            }
            dprev[i] += acc;
        }
        for j in 0..2 * h {
            db_hh[j] += dgate[j];
        }
        // input side of all three gates
        for (gb, &v) in db_ih.iter_mut().zip(&dgate) {
            *gb += v;
        }
        let xt = x.row(t);
        for i in 0..inputs {
            let grow = &mut dw_ih[i * h3..(i + 1) * h3];
            for (gw, &v) in grow.iter_mut().zip(&dgate) {
                *gw += xt[i] * v;
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxt = &mut dx[t * inputs..(t + 1) * inputs];
            for i in 0..inputs {
                let row = &w_ih[i * h3..(i + 1) * h3];
                dxt[i] += row.iter().zip(&dgate).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        std::mem::swap(&mut dh, &mut dprev);
    }
}

/// Runs a GRU over `x: [T, in]` from `h0: [h]`.
///
/// Returns every hidden state `[T, h]` when `return_all`, otherwise only the
/// final state `[h]`.
pub fn gru_sequence(x: &Tensor, h0: &Tensor, params: GruParams<'_>, return_all: bool) -> Result<Tensor> {
    if h0.rank() != 1 {
        return Err(mismatch("gru h0", h0.shape(), &[params.hidden()]));
    }
    let cache = gru_run(x, h0.data(), params)?;
    let h = params.hidden();
    let steps = x.shape()[0];
    if return_all {
        Tensor::new(vec![steps, h], cache.hs)
    } else {
        Ok(Tensor::vector(cache.hs[(steps - 1) * h..].to_vec()))
    }
}

// ---------------------------------------------------------------- dropout

/// Inverted-dropout mask: 0 for dropped units, `1 / (1 - rate)` for kept ones.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(KernelError::DropoutRate(rate));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rate > 0.0 && rng.uniform() < rate { 0.0 } else { keep })
        .collect())
}

/// Identity in eval mode; inverted dropout with a mask drawn from `rng` in
/// train mode.
pub fn dropout_apply(x: &Tensor, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(KernelError::DropoutRate(rate));
    }
    match mode {
        Mode::Eval => Ok(x.clone()),
        Mode::Train => {
            let mask = dropout_mask(x.len(), rate, rng)?;
            let mut y = x.clone();
            for (v, m) in y.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            Ok(y)
        }
    }
}
