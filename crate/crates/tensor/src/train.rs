//! Loss, one optimisation step, and the finite-difference gradient check.

use crate::error::{KernelError, Result};
use crate::kernels::{sigmoid, Mode};
use crate::optim::Adam;
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A differentiable model built from tape ops.
pub trait Module {
    fn name(&self) -> &str;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Records one sample's forward pass and returns the logits node.
    fn forward(&self, tape: &mut Tape, inputs: &[Tensor], mode: Mode, rng: &mut Rng) -> Result<Var>;
}

/// Per-unit sigmoid binary cross-entropy against a one-hot target, averaged
/// over the units. Returns the loss and its gradient with respect to the
/// logits.
pub fn sigmoid_bce(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let units = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (u, &l) in logits.iter().enumerate() {
        let t = if u == class { 1.0 } else { 0.0 };
        // log(1 + e^l) - t l, written to stay finite for large |l|
        loss += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
        grad.push((sigmoid(l) - t) / units);
    }
    (loss / units, grad)
}

fn check_finite(tape: &Tape, out: Var, loss: f64) -> Result<()> {
    if let Some(layer) = tape.first_non_finite() {
        return Err(KernelError::NonFinite {
            layer: layer.to_string(),
            loss,
        });
    }
    if !loss.is_finite() {
        return Err(KernelError::NonFinite {
            layer: format!("loss (logits node {out})"),
            loss,
        });
    }
    Ok(())
}

/// Forward pass in eval mode; returns the logits.
pub fn predict_logits<M: Module + ?Sized>(model: &M, inputs: &[Tensor]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut rng = Rng::new(0, 0);
    let out = model.forward(&mut tape, inputs, Mode::Eval, &mut rng)?;
    if let Some(layer) = tape.first_non_finite() {
        return Err(KernelError::NonFinite {
            layer: layer.to_string(),
            loss: f64::NAN,
        });
    }
    Ok(tape.value(out).data().to_vec())
}

/// Mean loss over a batch; gradients are accumulated into the model's
/// parameters (scaled by `1 / batch`) when `accumulate` is set.
pub fn batch_loss<M: Module + ?Sized>(
    model: &mut M,
    batch: &[&[Tensor]],
    labels: &[usize],
    mode: Mode,
    rng: &mut Rng,
    accumulate: bool,
) -> Result<f64> {
    assert_eq!(batch.len(), labels.len(), "batch and labels must align");
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (inputs, &label) in batch.iter().zip(labels) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, inputs, mode, rng)?;
        let (loss, mut grad) = sigmoid_bce(tape.value(out).data(), label);
        check_finite(&tape, out, loss)?;
        total += loss * scale;
        if accumulate {
            grad.iter_mut().for_each(|g| *g *= scale);
            tape.backward(out, &grad, model.params_mut());
        }
    }
    Ok(total)
}

/// Computes the batch loss, back-propagates, and applies one Adam update.
/// Returns the loss before the update.
pub fn train_step<M: Module + ?Sized>(
    model: &mut M,
    batch: &[&[Tensor]],
    labels: &[usize],
    opt: &mut Adam,
    rng: &mut Rng,
) -> Result<f64> {
    model.params_mut().zero_grads();
    let loss = batch_loss(model, batch, labels, Mode::Train, rng, true)?;
    opt.step(model.params_mut());
    Ok(loss)
}

/// Gradients smaller than this are compared on absolute error: central
/// differences at eps = 1e-5 carry roundoff near 1e-11, which swamps the
/// relative error of entries around 1e-9.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Central finite differences over every scalar parameter, compared with
/// the analytic gradient in eval mode. Returns the largest relative error
/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn grad_check<M: Module + ?Sized>(model: &mut M, batch: &[&[Tensor]], labels: &[usize], eps: f64) -> Result<f64> {
    grad_check_with_floor(model, batch, labels, eps, GRAD_FLOOR)
}

/// Eval-mode batch loss that only checks the final value; the unperturbed
/// pass has already scanned every node.
fn probe_loss<M: Module + ?Sized>(model: &mut M, batch: &[&[Tensor]], labels: &[usize], rng: &mut Rng) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (inputs, &label) in batch.iter().zip(labels) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, inputs, Mode::Eval, rng)?;
        total += sigmoid_bce(tape.value(out).data(), label).0 * scale;
    }
    if !total.is_finite() {
        return Err(KernelError::NonFinite {
            layer: "perturbed loss".to_string(),
            loss: total,
        });
    }
    Ok(total)
}

/// `grad_check` with an explicit denominator floor.
pub fn grad_check_with_floor<M: Module + ?Sized>(
    model: &mut M,
    batch: &[&[Tensor]],
    labels: &[usize],
    eps: f64,
    floor: f64,
) -> Result<f64> {
    if model.params().num_scalars() == 0 {
        return Err(KernelError::NoParameters);
    }
    let mut rng = Rng::new(0, 0);
    model.params_mut().zero_grads();
    batch_loss(model, batch, labels, Mode::Eval, &mut rng, true)?;
    let analytic: Vec<Vec<f64>> = model.params().grads().iter().map(|g| g.data().to_vec()).collect();

    let mut worst: f64 = 0.0;
    for (p, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = model.params().value(p).data()[i];
            model.params_mut().value_mut(p).data_mut()[i] = orig + eps;
            let plus = probe_loss(model, batch, labels, &mut rng)?;
            model.params_mut().value_mut(p).data_mut()[i] = orig - eps;
            let minus = probe_loss(model, batch, labels, &mut rng)?;
            model.params_mut().value_mut(p).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
