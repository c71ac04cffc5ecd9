//! Checkpoints: one trained estimator's parameters with the metadata
//! needed to rebuild it.
//!
//! On disk a checkpoint is a directory holding `checkpoint.txt` (format
//! version, architecture fields, named parameter list with shapes, best
//! validation score, epoch, seed) plus one `<name>.bin` blob per parameter:
//! little-endian 32-bit floats, row-major.

use std::collections::HashMap;
use std::path::Path;

use crate::capsnet::{ConvLayerSpec, Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST_NAME: &str = "checkpoint.txt";

#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar> {
    pub estimator: usize,
    pub spec: ModelSpec,
    /// Every trainable tensor, in the model's canonical parameter order.
    pub params: Vec<(String, Tensor<F>)>,
    /// Best validation accuracy seen, in [0,1].
    pub best_score: f64,
    /// Epoch (1-based) that produced `best_score`.
    pub best_epoch: usize,
    /// Seed the estimator was trained under.
    pub seed: u64,
}

impl<F: Scalar> Checkpoint<F> {
    /// Snapshot a model's current parameters.
    pub fn capture(
        estimator: usize,
        model: &Model<F>,
        best_score: f64,
        best_epoch: usize,
        seed: u64,
    ) -> Self {
        Checkpoint {
            estimator,
            spec: model.spec().clone(),
            params: model
                .named_parameters()
                .into_iter()
                .map(|(name, t)| (name, t.clone()))
                .collect(),
            best_score,
            best_epoch,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(0.0..=1.0).contains(&self.best_score) {
            return Err(Error::InvalidSpec(format!(
                "best validation score {} outside [0,1]",
                self.best_score
            )));
        }
        Ok(())
    }

    /// Error unless this checkpoint was trained under `expected`.
    pub fn ensure_spec(&self, expected: &ModelSpec) -> Result<()> {
        if &self.spec != expected {
            return Err(Error::SpecMismatch {
                detail: format!(
                    "checkpoint architecture {:?} does not match expected {:?}",
                    self.spec, expected
                ),
            });
        }
        Ok(())
    }

    /// Rebuild a runnable model carrying exactly these parameters.
    pub fn instantiate(&self) -> Result<Model<F>> {
        self.validate()?;
        let mut model = Model::build(self.spec.clone(), self.seed)?;
        let mut slots = model.named_parameters_mut();
        if slots.len() != self.params.len() {
            return Err(Error::SpecMismatch {
                detail: format!(
                    "checkpoint holds {} parameters, architecture needs {}",
                    self.params.len(),
                    slots.len()
                ),
            });
        }
        for ((slot_name, slot), (name, value)) in slots.iter_mut().zip(&self.params) {
            if slot_name != name {
                return Err(Error::SpecMismatch {
                    detail: format!("parameter '{name}' found where '{slot_name}' expected"),
                });
            }
            if slot.shape() != value.shape() {
                return Err(Error::SpecMismatch {
                    detail: format!(
                        "parameter '{name}': shape {:?} does not match {:?}",
                        value.shape(),
                        slot.shape()
                    ),
                });
            }
            **slot = value.clone();
        }
        Ok(model)
    }
}

/// Render a conv stack as comma-joined `{filters}k{kernel}s{stride}` terms.
pub fn conv_plan_to_text(plan: &[ConvLayerSpec]) -> String {
    plan.iter()
        .map(|l| format!("{}k{}s{}", l.filters, l.kernel, l.stride))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parse the syntax produced by [`conv_plan_to_text`].
pub fn conv_plan_from_text(text: &str) -> std::result::Result<Vec<ConvLayerSpec>, String> {
    text.split(',')
        .map(|part| {
            let (filters, rest) = part
                .split_once('k')
                .ok_or_else(|| format!("bad conv layer '{part}'"))?;
            let (kernel, stride) = rest
                .split_once('s')
                .ok_or_else(|| format!("bad conv layer '{part}'"))?;
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| format!("bad number '{s}' in conv layer '{part}'"))
            };
            Ok(ConvLayerSpec::new(parse(filters)?, parse(kernel)?, parse(stride)?))
        })
        .collect()
}

pub fn save_checkpoint<F: Scalar>(checkpoint: &Checkpoint<F>, dir: &Path) -> Result<()> {
    checkpoint.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let spec = &checkpoint.spec;
    let mut manifest = String::new();
    manifest.push_str(&format!("format_version {CHECKPOINT_FORMAT_VERSION}\n"));
    manifest.push_str(&format!("estimator {}\n", checkpoint.estimator));
    manifest.push_str(&format!("seed {}\n", checkpoint.seed));
    manifest.push_str(&format!("best_epoch {}\n", checkpoint.best_epoch));
    manifest.push_str(&format!("best_score {}\n", checkpoint.best_score));
    manifest.push_str(&format!("input_size {}\n", spec.input_size));
    manifest.push_str(&format!("input_lines {}\n", spec.input_lines));
    manifest.push_str(&format!("conv_plan {}\n", conv_plan_to_text(&spec.conv_plan)));
    manifest.push_str(&format!("capsule_input_dim {}\n", spec.capsule_input_dim));
    manifest.push_str(&format!("num_capsules {}\n", spec.num_capsules));
    manifest.push_str(&format!("capsule_dim {}\n", spec.capsule_dim));
    manifest.push_str(&format!("routing_iterations {}\n", spec.routing_iterations));
    manifest.push_str(&format!(
        "reconstruction {}\n",
        u8::from(spec.reconstruction_enabled)
    ));
    for (name, t) in &checkpoint.params {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("param {name} {}\n", dims.join(",")));
    }
    let manifest_path = dir.join(MANIFEST_NAME);
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    for (name, t) in &checkpoint.params {
        let mut bytes = Vec::with_capacity(t.numel() * 4);
        for &v in t.data() {
            bytes.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        let blob_path = dir.join(format!("{name}.bin"));
        std::fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))?;
    }
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<Checkpoint<F>> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: manifest_path.clone(),
        line,
        detail,
    };

    let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
    let mut params: Vec<(String, Vec<usize>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(lineno, format!("expected 'key value', found '{line}'")))?;
        if key == "param" {
            let (name, dims) = value
                .split_once(' ')
                .ok_or_else(|| parse_err(lineno, format!("bad param line '{value}'")))?;
            let shape = dims
                .split(',')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| parse_err(lineno, format!("bad dimension '{d}'")))
                })
                .collect::<Result<Vec<usize>>>()?;
            params.push((name.to_string(), shape));
        } else {
            fields.insert(key, (lineno, value));
        }
    }

    let field = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| parse_err(0, format!("missing field '{key}'")))
    };
    let numeric = |key: &str| -> Result<u64> {
        let (lineno, value) = field(key)?;
        value
            .parse::<u64>()
            .map_err(|_| parse_err(lineno, format!("bad value '{value}' for '{key}'")))
    };

    let (_, version) = field("format_version")?;
    if version != CHECKPOINT_FORMAT_VERSION.to_string() {
        return Err(Error::UnknownFormatVersion {
            found: version.to_string(),
            supported: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let (plan_line, plan_text) = field("conv_plan")?;
    let conv_plan = conv_plan_from_text(plan_text).map_err(|e| parse_err(plan_line, e))?;
    let spec = ModelSpec {
        input_size: numeric("input_size")? as usize,
        input_lines: numeric("input_lines")? as usize,
        conv_plan,
        capsule_input_dim: numeric("capsule_input_dim")? as usize,
        num_capsules: numeric("num_capsules")? as usize,
        capsule_dim: numeric("capsule_dim")? as usize,
        routing_iterations: numeric("routing_iterations")? as usize,
        reconstruction_enabled: numeric("reconstruction")? != 0,
    };
    let (score_line, score_text) = field("best_score")?;
    let best_score = score_text
        .parse::<f64>()
        .map_err(|_| parse_err(score_line, format!("bad score '{score_text}'")))?;

    let mut loaded = Vec::with_capacity(params.len());
    for (name, shape) in params {
        let blob_path = dir.join(format!("{name}.bin"));
        let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let numel: usize = shape.iter().product();
        if bytes.len() != numel * 4 {
            return Err(Error::CorruptBlob {
                name,
                expected: numel * 4,
                found: bytes.len(),
            });
        }
        let data: Vec<F> = bytes
            .chunks_exact(4)
            .map(|c| F::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        loaded.push((name, Tensor::new(shape, data)?));
    }

    let checkpoint = Checkpoint {
        estimator: numeric("estimator")? as usize,
        spec,
        params: loaded,
        best_score,
        best_epoch: numeric("best_epoch")? as usize,
        seed: numeric("seed")?,
    };
    checkpoint.validate()?;
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsnet::ConvLayerSpec;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            input_size: 8,
            input_lines: 1,
            conv_plan: vec![ConvLayerSpec::new(4, 3, 2)],
            capsule_input_dim: 32,
            num_capsules: 2,
            capsule_dim: 4,
            routing_iterations: 3,
            reconstruction_enabled: false,
        }
    }

    fn trained_like_checkpoint() -> Checkpoint<f32> {
        let model = Model::<f32>::build(tiny_spec(), 77).unwrap();
        Checkpoint::capture(3, &model, 0.875, 2, 77)
    }

    #[test]
    fn round_trip_is_bit_exact_and_runs_identically() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = trained_like_checkpoint();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(dir.path()).unwrap();

        assert_eq!(back.estimator, 3);
        assert_eq!(back.seed, 77);
        assert_eq!(back.best_epoch, 2);
        assert_eq!(back.best_score, 0.875);
        assert_eq!(back.spec, ckpt.spec);
        assert_eq!(back.params.len(), ckpt.params.len());
        for ((n1, t1), (n2, t2)) in ckpt.params.iter().zip(&back.params) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data(), "{n1} must survive bitwise");
        }

        let x = Tensor::<f32>::full(&[1, 1, 8, 8], 0.3);
        let before = ckpt.instantiate().unwrap().predict_probs(&[&x]).unwrap();
        let after = back.instantiate().unwrap().predict_probs(&[&x]).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn instantiated_model_carries_the_stored_parameters() {
        let ckpt = trained_like_checkpoint();
        let model = ckpt.instantiate().unwrap();
        for ((name, stored), (_, live)) in ckpt.params.iter().zip(model.named_parameters()) {
            assert_eq!(stored.data(), live.data(), "{name}");
        }
    }

    #[test]
    fn truncated_blob_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = trained_like_checkpoint();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let blob = dir.path().join("capsule.weight.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        match load_checkpoint::<f32>(dir.path()).unwrap_err() {
            Error::CorruptBlob { name, expected, found } => {
                assert_eq!(name, "capsule.weight");
                assert_eq!(expected, found + 4);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn future_format_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = trained_like_checkpoint();
        save_checkpoint(&ckpt, dir.path()).unwrap();
        let manifest = dir.path().join("checkpoint.txt");
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, text.replace("format_version 1", "format_version 2")).unwrap();
        match load_checkpoint::<f32>(dir.path()).unwrap_err() {
            Error::UnknownFormatVersion { found, supported } => {
                assert_eq!(found, "2");
                assert_eq!(supported, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn spec_mismatch_is_reported() {
        let ckpt = trained_like_checkpoint();
        assert!(ckpt.ensure_spec(&tiny_spec()).is_ok());
        let mut other = tiny_spec();
        other.input_size = 16;
        assert!(matches!(
            ckpt.ensure_spec(&other),
            Err(Error::SpecMismatch { .. })
        ));
    }

    #[test]
    fn out_of_range_scores_are_rejected() {
        let mut ckpt = trained_like_checkpoint();
        ckpt.best_score = 1.5;
        assert!(ckpt.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(save_checkpoint(&ckpt, dir.path()).is_err());
    }

    #[test]
    fn conv_plan_text_round_trips() {
        let plan = vec![
            ConvLayerSpec::new(32, 3, 2),
            ConvLayerSpec::new(64, 5, 1),
        ];
        let text = conv_plan_to_text(&plan);
        assert_eq!(text, "32k3s2,64k5s1");
        assert_eq!(conv_plan_from_text(&text).unwrap(), plan);
        assert!(conv_plan_from_text("32x3x2").is_err());
    }
}
