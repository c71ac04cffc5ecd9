//! Model layout selection: the built-in layouts by name, or a TOML file
//! describing a custom one.

use anyhow::{anyhow, Context, Result};
use rcnf::capsnet::{ModelSpec, ConvLayerSpec};
use rcnf::ensemble::conv_plan_from_text;
use serde::Deserialize;

/// On-disk form of a custom layout. `conv_plan` uses the checkpoint syntax,
/// comma-joined `{filters}k{kernel}s{stride}` terms.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    input_size: usize,
    #[serde(default = "one")]
    input_lines: usize,
    conv_plan: String,
    capsule_input_dim: usize,
    num_capsules: usize,
    capsule_dim: usize,
    #[serde(default = "three")]
    routing_iterations: usize,
    #[serde(default)]
    reconstruction: bool,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

/// Resolve `"malimg"`, `"big2015"`, or a layout file path into a validated
/// [`ModelSpec`]. `reconstruction`, when given, overrides the layout's switch.
pub fn resolve_spec(selector: &str, reconstruction: Option<bool>) -> Result<ModelSpec> {
    let mut spec = match selector {
        "malimg" => ModelSpec::malimg(),
        "big2015" => ModelSpec::big2015(),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| {
                format!(
                    "reading model layout '{path}' \
                     (expected \"malimg\", \"big2015\", or a TOML layout file)"
                )
            })?;
            let file: LayoutFile =
                toml::from_str(&text).with_context(|| format!("parsing model layout '{path}'"))?;
            let conv_plan: Vec<ConvLayerSpec> = conv_plan_from_text(&file.conv_plan)
                .map_err(|e| anyhow!("model layout '{path}': {e}"))?;
            ModelSpec {
                input_size: file.input_size,
                input_lines: file.input_lines,
                conv_plan,
                capsule_input_dim: file.capsule_input_dim,
                num_capsules: file.num_capsules,
                capsule_dim: file.capsule_dim,
                routing_iterations: file.routing_iterations,
                reconstruction_enabled: file.reconstruction,
            }
        }
    };
    if let Some(r) = reconstruction {
        spec.reconstruction_enabled = r;
    }
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_names_resolve() {
        assert_eq!(resolve_spec("malimg", None).unwrap(), ModelSpec::malimg());
        assert_eq!(resolve_spec("big2015", None).unwrap(), ModelSpec::big2015());
        let mut with_decoder = ModelSpec::malimg();
        with_decoder.reconstruction_enabled = true;
        assert_eq!(resolve_spec("malimg", Some(true)).unwrap(), with_decoder);
    }

    #[test]
    fn layout_file_resolves_with_defaults() {
        let dir = std::env::temp_dir().join(format!("rcnf-layout-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("layout.toml");
        std::fs::write(
            &path,
            "input_size = 32\nconv_plan = \"8k3s2,16k3s2\"\ncapsule_input_dim = 128\n\
             num_capsules = 3\ncapsule_dim = 8\n",
        )
        .unwrap();
        let spec = resolve_spec(path.to_str().unwrap(), None).unwrap();
        assert_eq!(spec.input_size, 32);
        assert_eq!(spec.input_lines, 1);
        assert_eq!(spec.conv_plan.len(), 2);
        assert_eq!(spec.routing_iterations, 3);
        assert!(!spec.reconstruction_enabled);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_layout_file_is_an_error() {
        assert!(resolve_spec("no-such-layout", None).is_err());
    }
}
