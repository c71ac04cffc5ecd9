//! Optional TOML config layer. Keys mirror the long command-line options
//! one-to-one (`batch-size` for `--batch-size`); explicit flags override
//! file values. `rcnf train` echoes its resolved configuration in this
//! format so a run can be reproduced with `--config`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub spec: Option<String>,
    pub manifest: Option<PathBuf>,
    pub estimators: Option<usize>,
    pub epochs: Option<usize>,
    #[serde(rename = "batch-size")]
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub averaging: Option<String>,
    pub reconstruction: Option<bool>,
    pub workers: Option<usize>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Fully-resolved `train` settings, after merging flags, file, and defaults.
#[derive(Debug, Clone)]
pub struct ResolvedTrain {
    pub spec_selector: String,
    pub manifest: PathBuf,
    pub estimators: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub reconstruction: bool,
    pub workers: usize,
}

/// Write the resolved configuration as a `--config`-loadable file. Derived
/// per-estimator seeds ride along as comments so they do not join the key
/// set, which stays one-to-one with the flags.
pub fn write_train_echo(path: &Path, resolved: &ResolvedTrain, seeds: &[u64]) -> Result<()> {
    let mut text = String::from("# resolved `rcnf train` configuration, reusable via --config\n");
    for (i, s) in seeds.iter().enumerate() {
        text.push_str(&format!("# estimator {i} derived seed {s}\n"));
    }
    text.push_str(&format!("spec = {}\n", toml_string(&resolved.spec_selector)));
    text.push_str(&format!(
        "manifest = {}\n",
        toml_string(&resolved.manifest.to_string_lossy())
    ));
    text.push_str(&format!("estimators = {}\n", resolved.estimators));
    text.push_str(&format!("epochs = {}\n", resolved.epochs));
    text.push_str(&format!("batch-size = {}\n", resolved.batch_size));
    text.push_str(&format!("seed = {}\n", resolved.seed));
    text.push_str(&format!(
        "out = {}\n",
        toml_string(&resolved.out.to_string_lossy())
    ));
    text.push_str(&format!("reconstruction = {}\n", resolved.reconstruction));
    text.push_str(&format!("workers = {}\n", resolved.workers));
    std::fs::write(path, text).with_context(|| format!("writing config echo {}", path.display()))
}

/// Quote a value as a TOML basic string.
fn toml_string(value: &str) -> String {
    let mut out = String::with_capacity(value.len() + 2);
    out.push('"');
    for c in value.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04X}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
