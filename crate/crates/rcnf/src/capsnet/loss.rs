//! Margin loss, reconstruction loss, and their weighted combination.
//!
//! The margin term per class is y·max(0, m−ŷ)² + λ·(1−y)·max(0, ŷ−(1−m))²
//! with m = 0.9 and λ = 0.5. Reconstruction is a plain sum of squared pixel
//! differences, scaled by 0.0005 so it never drowns the margin term. Per
//! sample the class terms are summed; the batch loss is the mean.

use super::ForwardPass;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const MARGIN_M: f64 = 0.9;
pub const MARGIN_LAMBDA: f64 = 0.5;
pub const RECONSTRUCTION_WEIGHT: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin_m: f64,
    pub margin_lambda: f64,
    pub reconstruction_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin_m: MARGIN_M,
            margin_lambda: MARGIN_LAMBDA,
            reconstruction_weight: RECONSTRUCTION_WEIGHT,
        }
    }
}

/// Margin loss of a single (class, prediction) pair, on plain numbers.
pub fn margin_term(y: f64, y_hat: f64, m: f64, lambda: f64) -> f64 {
    let pos = (m - y_hat).max(0.0);
    let neg = (y_hat - (1.0 - m)).max(0.0);
    y * pos * pos + lambda * (1.0 - y) * neg * neg
}

/// Per-sample margin loss on the tape: probs [N,J] -> [N], terms summed
/// over classes. Labels index the positive class of each sample.
pub fn margin_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    probs: Var,
    labels: &[usize],
    num_classes: usize,
    m: f64,
    lambda: f64,
) -> Result<Var> {
    let shape = tape.value(probs).shape().to_vec();
    if shape.len() != 2 || shape[1] != num_classes {
        return Err(Error::Shape {
            op: "margin_loss",
            detail: format!("probs must be [N,{num_classes}], got {shape:?}"),
        });
    }
    if labels.len() != shape[0] {
        return Err(Error::Shape {
            op: "margin_loss",
            detail: format!("{} labels for batch of {}", labels.len(), shape[0]),
        });
    }
    let mut pos_mask = Tensor::<F>::zeros(shape.clone());
    let mut neg_mask = Tensor::full(shape.clone(), F::from_f64(lambda));
    for (n, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        pos_mask.data_mut()[n * num_classes + label] = F::one();
        neg_mask.data_mut()[n * num_classes + label] = F::zero();
    }

    let present_gap = tape.affine(probs, -1.0, m)?;
    let present = tape.relu(present_gap)?;
    let present_sq = tape.square(present)?;
    let pos_mask = tape.constant(pos_mask);
    let pos_term = tape.mul(present_sq, pos_mask)?;

    let absent_gap = tape.affine(probs, 1.0, -(1.0 - m))?;
    let absent = tape.relu(absent_gap)?;
    let absent_sq = tape.square(absent)?;
    let neg_mask = tape.constant(neg_mask);
    let neg_term = tape.mul(absent_sq, neg_mask)?;

    let per_class = tape.add(pos_term, neg_term)?;
    tape.sum(per_class, Some(1))
}

/// Sum of squared differences between two same-shape tensors, on values.
pub fn reconstruction_loss_value<F: Scalar>(x: &Tensor<F>, x_hat: &Tensor<F>) -> Result<F> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Shape {
            op: "reconstruction_loss",
            detail: format!("{:?} vs {:?}", x.shape(), x_hat.shape()),
        });
    }
    let mut acc = F::zero();
    for (&a, &b) in x.data().iter().zip(x_hat.data()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc)
}

/// Per-sample reconstruction loss on the tape: x̂ [N,D] against a constant
/// target [N,D] -> [N].
pub fn reconstruction_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    reconstruction: Var,
    target: &Tensor<F>,
) -> Result<Var> {
    if tape.value(reconstruction).shape() != target.shape() {
        return Err(Error::Shape {
            op: "reconstruction_loss",
            detail: format!(
                "{:?} vs target {:?}",
                tape.value(reconstruction).shape(),
                target.shape()
            ),
        });
    }
    let target = tape.constant(target.clone());
    let diff = tape.sub(reconstruction, target)?;
    let sq = tape.square(diff)?;
    tape.sum(sq, Some(1))
}

/// Batch loss: mean over samples of (margin + weight·reconstruction).
pub fn total_loss_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    margin_per_sample: Var,
    reconstruction_per_sample: Option<Var>,
    reconstruction_weight: f64,
) -> Result<Var> {
    let per_sample = match reconstruction_per_sample {
        Some(recon) => {
            let weighted = tape.affine(recon, reconstruction_weight, 0.0)?;
            tape.add(margin_per_sample, weighted)?
        }
        None => margin_per_sample,
    };
    tape.mean(per_sample, None)
}

/// Full training objective for one forward pass. `images` are the same
/// tensors the forward consumed; the first line is the reconstruction
/// target when the decoder is active.
pub fn training_loss<F: Scalar>(
    tape: &mut Tape<F>,
    fwd: &ForwardPass<F>,
    images: &[&Tensor<F>],
    labels: &[usize],
    num_classes: usize,
    cfg: &LossConfig,
) -> Result<Var> {
    let margin = margin_loss_on_tape(
        tape,
        fwd.probs,
        labels,
        num_classes,
        cfg.margin_m,
        cfg.margin_lambda,
    )?;
    let recon = match fwd.reconstruction {
        Some(recon_var) => {
            let img = images.first().ok_or(Error::EmptyInput("images"))?;
            let n = img.shape()[0];
            let target = img.reshaped(vec![n, img.numel() / n])?;
            Some(reconstruction_loss_on_tape(tape, recon_var, &target)?)
        }
        None => None,
    };
    total_loss_on_tape(tape, margin, recon, cfg.reconstruction_weight)
}
