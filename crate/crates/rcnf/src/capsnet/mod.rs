//! Capsule-network classifier: convolution lines feed primary capsules,
//! a shared per-class transform produces predictions, dynamic routing
//! aggregates them into one output capsule per class, and class scores are
//! the capsule norms.
//!
//! Two stock layouts are provided. The single-line layout takes one 224 px
//! image through convs of [32,32,64,64] filters into 25 class capsules
//! (90,592 parameters). The dual-line layout takes a pair of 112 px images
//! through two identical [64,64,128,128] lines whose features are
//! concatenated, into 9 class capsules (527,232 parameters). All convs are
//! 3x3, stride 2, same-padding, ReLU.

mod loss;
mod routing;
mod squash;

pub use loss::{
    margin_loss_on_tape, margin_term, reconstruction_loss_on_tape, reconstruction_loss_value,
    total_loss_on_tape, training_loss, LossConfig, MARGIN_LAMBDA, MARGIN_M, RECONSTRUCTION_WEIGHT,
};
pub use routing::{dynamic_routing, final_couplings, routing_on_tape, routing_trace};
pub use squash::{squash_scalar_curve, write_curve, CurvePoint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Hidden width of the optional reconstruction decoder.
pub const DECODER_HIDDEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayerSpec {
    pub fn new(filters: usize, kernel: usize, stride: usize) -> Self {
        ConvLayerSpec { filters, kernel, stride }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    /// Pixels per side of each (square, single-channel) input image.
    pub input_size: usize,
    /// 1 for a single image per sample, 2 for a pair fed to identical lines.
    pub input_lines: usize,
    /// Convolution stack applied per line.
    pub conv_plan: Vec<ConvLayerSpec>,
    /// Length of each primary capsule vector.
    pub capsule_input_dim: usize,
    /// Class count.
    pub num_capsules: usize,
    /// Length of each class capsule vector.
    pub capsule_dim: usize,
    pub routing_iterations: usize,
    pub reconstruction_enabled: bool,
}

impl ModelSpec {
    /// Single-line layout for 224 px images, 25 classes.
    pub fn malimg() -> Self {
        ModelSpec {
            input_size: 224,
            input_lines: 1,
            conv_plan: [32, 32, 64, 64]
                .into_iter()
                .map(|f| ConvLayerSpec::new(f, 3, 2))
                .collect(),
            capsule_input_dim: 128,
            num_capsules: 25,
            capsule_dim: 8,
            routing_iterations: 3,
            reconstruction_enabled: false,
        }
    }

    /// Dual-line layout for 112 px image pairs, 9 classes.
    pub fn big2015() -> Self {
        ModelSpec {
            input_size: 112,
            input_lines: 2,
            conv_plan: [64, 64, 128, 128]
                .into_iter()
                .map(|f| ConvLayerSpec::new(f, 3, 2))
                .collect(),
            capsule_input_dim: 128,
            num_capsules: 9,
            capsule_dim: 8,
            routing_iterations: 3,
            reconstruction_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::InvalidSpec("input_size must be positive".into()));
        }
        if !(self.input_lines == 1 || self.input_lines == 2) {
            return Err(Error::InvalidSpec(format!(
                "input_lines must be 1 or 2, got {}",
                self.input_lines
            )));
        }
        if self.conv_plan.is_empty() {
            return Err(Error::InvalidSpec("conv_plan must not be empty".into()));
        }
        for (i, layer) in self.conv_plan.iter().enumerate() {
            if layer.filters == 0 || layer.kernel == 0 || layer.stride == 0 {
                return Err(Error::InvalidSpec(format!(
                    "conv layer {i}: filters, kernel and stride must be positive"
                )));
            }
        }
        if self.num_capsules < 2 {
            return Err(Error::InvalidSpec(format!(
                "num_capsules must be at least 2, got {}",
                self.num_capsules
            )));
        }
        if self.capsule_dim == 0 || self.capsule_input_dim == 0 {
            return Err(Error::InvalidSpec("capsule dimensions must be positive".into()));
        }
        if self.routing_iterations == 0 {
            return Err(Error::InvalidSpec("routing_iterations must be at least 1".into()));
        }
        let flat = self.flattened_len();
        if flat % self.capsule_input_dim != 0 {
            return Err(Error::InvalidSpec(format!(
                "flattened feature length {flat} is not divisible by capsule_input_dim {}",
                self.capsule_input_dim
            )));
        }
        Ok(())
    }

    /// Spatial extent after the conv stack (same-padding: ceil division per
    /// stride).
    pub fn feature_map_size(&self) -> usize {
        self.conv_plan
            .iter()
            .fold(self.input_size, |s, l| s.div_ceil(l.stride))
    }

    /// Length of the flattened feature vector entering the capsule stage,
    /// all lines included.
    pub fn flattened_len(&self) -> usize {
        let side = self.feature_map_size();
        let channels = self.conv_plan.last().map_or(0, |l| l.filters);
        self.input_lines * channels * side * side
    }

    pub fn num_primary_capsules(&self) -> usize {
        self.flattened_len() / self.capsule_input_dim
    }
}

#[derive(Debug, Clone)]
struct ConvLayer<F: Scalar> {
    weight: Tensor<F>,
    bias: Tensor<F>,
}

#[derive(Debug, Clone)]
struct Decoder<F: Scalar> {
    w1: Tensor<F>,
    b1: Tensor<F>,
    w2: Tensor<F>,
    b2: Tensor<F>,
}

/// A built model: the spec plus every trainable tensor.
#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    spec: ModelSpec,
    lines: Vec<Vec<ConvLayer<F>>>,
    capsule_weight: Tensor<F>,
    decoder: Option<Decoder<F>>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass<F: Scalar> {
    /// Parameter leaves, in `named_parameters` order.
    pub param_vars: Vec<Var>,
    /// Final conv features of each line, before concatenation.
    pub line_features: Vec<Var>,
    /// Squashed primary capsules [N,P,Din].
    pub primary: Var,
    /// Class capsules [N,J,D].
    pub v: Var,
    /// Class scores (capsule norms) [N,J].
    pub probs: Var,
    /// Decoder output [N, input_size²] when reconstruction is enabled.
    pub reconstruction: Option<Var>,
    /// Routing couplings actually applied, [N,P,J].
    pub couplings: Tensor<F>,
}

impl<F: Scalar> Model<F> {
    /// Initialize parameters from a seed: uniform He bounds for conv
    /// weights, zero biases, uniform Xavier bounds for the capsule
    /// transform and decoder.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut lines = Vec::with_capacity(spec.input_lines);
        for _ in 0..spec.input_lines {
            let mut layers = Vec::with_capacity(spec.conv_plan.len());
            let mut in_ch = 1usize;
            for l in &spec.conv_plan {
                let fan_in = (in_ch * l.kernel * l.kernel) as f64;
                let limit = (6.0 / fan_in).sqrt();
                let mut weight = Tensor::zeros(vec![l.filters, in_ch, l.kernel, l.kernel]);
                weight.fill_uniform(&mut rng, limit);
                layers.push(ConvLayer {
                    weight,
                    bias: Tensor::zeros(vec![l.filters]),
                });
                in_ch = l.filters;
            }
            lines.push(layers);
        }

        let limit = (6.0 / (spec.capsule_input_dim + spec.capsule_dim) as f64).sqrt();
        let mut capsule_weight =
            Tensor::zeros(vec![spec.num_capsules, spec.capsule_dim, spec.capsule_input_dim]);
        capsule_weight.fill_uniform(&mut rng, limit);

        let decoder = if spec.reconstruction_enabled {
            let out = spec.input_size * spec.input_size;
            let mut w1 = Tensor::zeros(vec![DECODER_HIDDEN, spec.capsule_dim]);
            w1.fill_uniform(&mut rng, (6.0 / (spec.capsule_dim + DECODER_HIDDEN) as f64).sqrt());
            let mut w2 = Tensor::zeros(vec![out, DECODER_HIDDEN]);
            w2.fill_uniform(&mut rng, (6.0 / (DECODER_HIDDEN + out) as f64).sqrt());
            Some(Decoder {
                w1,
                b1: Tensor::zeros(vec![DECODER_HIDDEN]),
                w2,
                b2: Tensor::zeros(vec![out]),
            })
        } else {
            None
        };

        Ok(Model { spec, lines, capsule_weight, decoder })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Trainable scalars in the classifier itself; the decoder is reported
    /// separately by `decoder_parameter_count`.
    pub fn count_parameters(&self) -> usize {
        self.conv_parameter_count() + self.capsule_parameter_count()
    }

    pub fn conv_parameter_count(&self) -> usize {
        self.lines
            .iter()
            .flatten()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }

    pub fn capsule_parameter_count(&self) -> usize {
        self.capsule_weight.numel()
    }

    pub fn decoder_parameter_count(&self) -> usize {
        self.decoder
            .as_ref()
            .map(|d| d.w1.numel() + d.b1.numel() + d.w2.numel() + d.b2.numel())
            .unwrap_or(0)
    }

    /// All trainable tensors with stable names, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (l, line) in self.lines.iter().enumerate() {
            for (i, layer) in line.iter().enumerate() {
                out.push((format!("line{l}.conv{i}.weight"), &layer.weight));
                out.push((format!("line{l}.conv{i}.bias"), &layer.bias));
            }
        }
        out.push(("capsule.weight".to_string(), &self.capsule_weight));
        if let Some(d) = &self.decoder {
            out.push(("decoder.fc1.weight".to_string(), &d.w1));
            out.push(("decoder.fc1.bias".to_string(), &d.b1));
            out.push(("decoder.fc2.weight".to_string(), &d.w2));
            out.push(("decoder.fc2.bias".to_string(), &d.b2));
        }
        out
    }

    /// Mutable view of the same tensors, same names, same order.
    pub fn named_parameters_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for (l, line) in self.lines.iter_mut().enumerate() {
            for (i, layer) in line.iter_mut().enumerate() {
                out.push((format!("line{l}.conv{i}.weight"), &mut layer.weight));
                out.push((format!("line{l}.conv{i}.bias"), &mut layer.bias));
            }
        }
        out.push(("capsule.weight".to_string(), &mut self.capsule_weight));
        if let Some(d) = &mut self.decoder {
            out.push(("decoder.fc1.weight".to_string(), &mut d.w1));
            out.push(("decoder.fc1.bias".to_string(), &mut d.b1));
            out.push(("decoder.fc2.weight".to_string(), &mut d.w2));
            out.push(("decoder.fc2.bias".to_string(), &mut d.b2));
        }
        out
    }

    /// Run the network on the tape. `images` holds one [N,1,s,s] tensor per
    /// input line. `labels`, when given, select the decoder's input capsule
    /// per sample (training); otherwise the predicted class is used.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        images: &[&Tensor<F>],
        labels: Option<&[usize]>,
    ) -> Result<ForwardPass<F>> {
        let spec = &self.spec;
        if images.len() != spec.input_lines {
            return Err(Error::Shape {
                op: "forward",
                detail: format!("expected {} input line(s), got {}", spec.input_lines, images.len()),
            });
        }
        let n = images[0].shape()[0];
        for (l, img) in images.iter().enumerate() {
            let want = [n, 1, spec.input_size, spec.input_size];
            if img.rank() != 4 || img.shape() != want {
                return Err(Error::Shape {
                    op: "forward",
                    detail: format!("line {l}: expected {:?}, got {:?}", want, img.shape()),
                });
            }
        }
        if let Some(labels) = labels {
            if labels.len() != n {
                return Err(Error::Shape {
                    op: "forward",
                    detail: format!("{} labels for batch of {n}", labels.len()),
                });
            }
            for &label in labels {
                if label >= spec.num_capsules {
                    return Err(Error::LabelOutOfRange {
                        label,
                        num_classes: spec.num_capsules,
                    });
                }
            }
        }

        // Registration order matches named_parameters.
        let mut param_vars = Vec::new();
        let mut line_vars = Vec::with_capacity(self.lines.len());
        for line in &self.lines {
            let mut lv = Vec::with_capacity(line.len());
            for layer in line {
                let w = tape.leaf(layer.weight.clone());
                let b = tape.leaf(layer.bias.clone());
                param_vars.push(w);
                param_vars.push(b);
                lv.push((w, b));
            }
            line_vars.push(lv);
        }
        let caps_w = tape.leaf(self.capsule_weight.clone());
        param_vars.push(caps_w);
        let dec_vars = self.decoder.as_ref().map(|d| {
            let vars = (
                tape.leaf(d.w1.clone()),
                tape.leaf(d.b1.clone()),
                tape.leaf(d.w2.clone()),
                tape.leaf(d.b2.clone()),
            );
            param_vars.extend([vars.0, vars.1, vars.2, vars.3]);
            vars
        });

        let mut line_features = Vec::with_capacity(images.len());
        for (l, image) in images.iter().enumerate() {
            let mut x = tape.constant((*image).clone());
            for ((w, b), layer_spec) in line_vars[l].iter().zip(&spec.conv_plan) {
                let c = tape.conv2d(x, *w, *b, layer_spec.stride)?;
                x = tape.relu(c)?;
            }
            line_features.push(x);
        }
        let features = match line_features.as_slice() {
            [single] => *single,
            [a, b] => tape.concat_channels(*a, *b)?,
            _ => unreachable!("validated input_lines"),
        };

        let flat = tape.reshape(features, vec![n, spec.flattened_len()])?;
        let primary = primary_capsules(tape, flat, spec.capsule_input_dim)?;
        let uhat = tape.capsule_transform(primary, caps_w)?;
        let (v, couplings) = routing_on_tape(tape, uhat, spec.routing_iterations)?;
        let probs = class_probabilities(tape, v)?;

        let reconstruction = match dec_vars {
            Some((w1, b1, w2, b2)) => {
                let indices: Vec<usize> = match labels {
                    Some(l) => l.to_vec(),
                    None => crate::tensor::argmax_rows(tape.value(probs)),
                };
                let selected = tape.select_capsule(v, &indices)?;
                let h = tape.linear(selected, w1, b1)?;
                let h = tape.relu(h)?;
                let o = tape.linear(h, w2, b2)?;
                Some(tape.sigmoid(o)?)
            }
            None => None,
        };

        Ok(ForwardPass {
            param_vars,
            line_features,
            primary,
            v,
            probs,
            reconstruction,
            couplings,
        })
    }

    /// Value-only forward; returns class scores [N,J].
    pub fn predict_probs(&self, images: &[&Tensor<F>]) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, images, None)?;
        Ok(tape.value(fwd.probs).clone())
    }
}

/// Group a flat feature tensor [N,F] into squashed capsules [N, F/dim, dim].
pub fn primary_capsules<F: Scalar>(
    tape: &mut Tape<F>,
    features: Var,
    capsule_input_dim: usize,
) -> Result<Var> {
    let shape = tape.value(features).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "primary_capsules",
            detail: format!("features must be [N,F], got {shape:?}"),
        });
    }
    let (n, f) = (shape[0], shape[1]);
    if f % capsule_input_dim != 0 {
        return Err(Error::Shape {
            op: "primary_capsules",
            detail: format!("feature length {f} not divisible by capsule size {capsule_input_dim}"),
        });
    }
    let grouped = tape.reshape(features, vec![n, f / capsule_input_dim, capsule_input_dim])?;
    tape.squash(grouped)
}

/// Class scores are the norms of the class capsules: [N,J,D] -> [N,J].
pub fn class_probabilities<F: Scalar>(tape: &mut Tape<F>, v: Var) -> Result<Var> {
    if tape.value(v).rank() != 3 {
        return Err(Error::Shape {
            op: "class_probabilities",
            detail: format!("expected [N,J,D], got {:?}", tape.value(v).shape()),
        });
    }
    tape.norm_last_axis(v)
}
