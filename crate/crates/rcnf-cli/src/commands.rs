//! The seven subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use rcnf::capsnet::{squash_scalar_curve, write_curve, Model};
use rcnf::data::{
    file_to_image, load_split, read_manifest, stratified_split, write_manifest, write_pgm,
    SampleSource, Split,
};
use rcnf::ensemble::{
    estimator_seed, predict_rcnf, train_rcnf, EnsembleModel, EpochRecord, TrainConfig,
    MAX_ESTIMATORS,
};
use rcnf::metrics::{compute_report, emit_report, f_score, Averaging, ConfusionMatrix};

use crate::config::{self, FileConfig, ResolvedTrain};
use crate::spec::resolve_spec;
use crate::{
    ConvertArgs, EvaluateArgs, InspectArgs, PredictArgs, SplitArgs, SquashCurveArgs, TrainArgs,
};

pub fn convert(args: ConvertArgs, cfg: &FileConfig) -> Result<()> {
    let out_dir = args
        .out
        .or_else(|| cfg.out.clone())
        .context("convert needs --out (output directory)")?;
    let mut files = Vec::new();
    collect_files(&args.input, &args.input, args.recurse, &mut files)
        .with_context(|| format!("scanning {}", args.input.display()))?;
    files.sort();
    if files.is_empty() {
        log::warn!("nothing to convert: no files under {}", args.input.display());
        return Ok(());
    }

    let mut failures = 0usize;
    for rel in &files {
        let src = args.input.join(rel);
        // foo/bar.bytes becomes foo/bar.bytes.pgm under the output root.
        let mut name = rel.file_name().expect("collected file path").to_os_string();
        name.push(".pgm");
        let dst = out_dir.join(rel.with_file_name(name));
        if let Err(e) = convert_one(&src, &dst) {
            log::error!("{}: {e:#}", src.display());
            failures += 1;
        }
    }
    println!(
        "converted {} of {} files into {}",
        files.len() - failures,
        files.len(),
        out_dir.display()
    );
    if failures > 0 {
        bail!("{failures} of {} files failed to convert", files.len());
    }
    Ok(())
}

fn convert_one(src: &Path, dst: &Path) -> Result<()> {
    let img = file_to_image(src)?;
    if let Some(parent) = dst.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_pgm(&img, dst)?;
    Ok(())
}

/// Regular files under `dir`, as paths relative to `root`.
fn collect_files(root: &Path, dir: &Path, recurse: bool, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let kind = entry.file_type()?;
        if kind.is_dir() {
            if recurse {
                collect_files(root, &path, true, out)?;
            }
        } else if kind.is_file() {
            let rel = path.strip_prefix(root).expect("path is under root");
            out.push(rel.to_path_buf());
        }
    }
    Ok(())
}

pub fn split(args: SplitArgs, cfg: &FileConfig) -> Result<()> {
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .context("split needs --out (manifest file)")?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let ratios = parse_ratios(&args.ratios)?;

    let mut class_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in
        fs::read_dir(&args.input).with_context(|| format!("reading {}", args.input.display()))?
    {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            class_dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    ensure!(
        !class_dirs.is_empty(),
        "no class subdirectories under {}",
        args.input.display()
    );
    class_dirs.sort();
    let class_names: Vec<String> = class_dirs.iter().map(|(n, _)| n.clone()).collect();

    // Record paths are stored relative to the manifest when possible, so the
    // manifest can move together with the corpus.
    let manifest_abs = std::path::absolute(&out)?;
    let manifest_parent = manifest_abs.parent().context("manifest path has no parent")?;
    let relativize = |p: &Path| -> Result<PathBuf> {
        let abs = std::path::absolute(p)?;
        Ok(abs
            .strip_prefix(manifest_parent)
            .map(Path::to_path_buf)
            .unwrap_or(abs))
    };

    let mut samples = Vec::new();
    for (label, (class, dir)) in class_dirs.iter().enumerate() {
        let mut files = Vec::new();
        collect_files(dir, dir, true, &mut files)?;
        files.sort();
        ensure!(!files.is_empty(), "class directory {} is empty", dir.display());
        if args.dual_input {
            // Group the two images of one sample by path up to the first dot
            // of the file name; file-name order fixes the line order.
            let mut groups: BTreeMap<PathBuf, Vec<PathBuf>> = BTreeMap::new();
            for rel in files {
                let name = rel.file_name().expect("collected file path").to_string_lossy();
                let stem = name.split('.').next().unwrap_or(&name).to_string();
                groups.entry(rel.with_file_name(stem)).or_default().push(rel);
            }
            for (stem, members) in groups {
                ensure!(
                    members.len() == 2,
                    "dual-input sample {}/{} has {} files, expected 2",
                    class,
                    stem.display(),
                    members.len()
                );
                samples.push(SampleSource {
                    id: format!("{class}/{}", stem.display()),
                    paths: members
                        .iter()
                        .map(|m| relativize(&dir.join(m)))
                        .collect::<Result<_>>()?,
                    label,
                });
            }
        } else {
            for rel in files {
                samples.push(SampleSource {
                    id: format!("{class}/{}", rel.display()),
                    paths: vec![relativize(&dir.join(&rel))?],
                    label,
                });
            }
        }
    }

    let manifest = stratified_split(samples, class_names, ratios, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_manifest(&manifest, &out)?;
    println!("seed {seed}");
    for split in Split::ALL {
        println!(
            "{split}: {} samples, per class {:?}",
            manifest.split_len(split),
            manifest.class_counts(Some(split))
        );
    }
    println!("manifest written to {}", out.display());
    Ok(())
}

fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("ratios '{text}' must be three comma-separated numbers"))?;
    ensure!(
        parts.len() == 3,
        "ratios '{text}' must name exactly three fractions"
    );
    Ok([parts[0], parts[1], parts[2]])
}

pub fn train(args: TrainArgs, cfg: &FileConfig) -> Result<()> {
    let spec_selector = args
        .spec
        .or_else(|| cfg.spec.clone())
        .unwrap_or_else(|| "malimg".to_string());
    let reconstruction_override = args.reconstruction.or(cfg.reconstruction);
    let spec = resolve_spec(&spec_selector, reconstruction_override)?;
    let resolved = ResolvedTrain {
        spec_selector,
        manifest: args
            .manifest
            .or_else(|| cfg.manifest.clone())
            .context("train needs --manifest")?,
        estimators: args.estimators.or(cfg.estimators).unwrap_or(5),
        epochs: args.epochs.or(cfg.epochs).unwrap_or(10),
        batch_size: args.batch_size.or(cfg.batch_size).unwrap_or(16),
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        out: args
            .out
            .or_else(|| cfg.out.clone())
            .context("train needs --out (output directory)")?,
        reconstruction: spec.reconstruction_enabled,
        workers: args.workers.or(cfg.workers).unwrap_or(1),
    };
    ensure!(
        (1..=MAX_ESTIMATORS).contains(&resolved.estimators),
        "--estimators must be in [1,{MAX_ESTIMATORS}], got {}",
        resolved.estimators
    );
    ensure!(resolved.epochs >= 1, "--epochs must be at least 1");
    ensure!(resolved.batch_size >= 1, "--batch-size must be at least 1");
    ensure!(resolved.workers >= 1, "--workers must be at least 1");

    let manifest = read_manifest(&resolved.manifest)?;
    ensure!(
        manifest.num_classes() == spec.num_capsules,
        "manifest has {} classes but the layout expects {}",
        manifest.num_classes(),
        spec.num_capsules
    );
    let train_data = load_split::<f32>(&manifest, &resolved.manifest, Split::Train, spec.input_size)?;
    let val_data = load_split::<f32>(&manifest, &resolved.manifest, Split::Val, spec.input_size)?;
    ensure!(
        train_data.dataset.num_lines() == spec.input_lines,
        "manifest provides {} image(s) per sample but the layout expects {}",
        train_data.dataset.num_lines(),
        spec.input_lines
    );

    let seeds: Vec<u64> = (0..resolved.estimators)
        .map(|i| estimator_seed(resolved.seed, i))
        .collect();
    log::info!(
        "training {} estimator(s), {} epochs each, on {} train / {} val samples (seed {})",
        resolved.estimators,
        resolved.epochs,
        train_data.dataset.len(),
        val_data.dataset.len(),
        resolved.seed
    );
    let train_config = TrainConfig {
        epochs: resolved.epochs,
        batch_size: resolved.batch_size,
        master_seed: resolved.seed,
        workers: resolved.workers,
        ..TrainConfig::default()
    };
    let outcome = train_rcnf(
        &spec,
        resolved.estimators,
        &train_data.dataset,
        &val_data.dataset,
        &train_config,
    )?;

    fs::create_dir_all(&resolved.out)?;
    outcome.ensemble.save(&resolved.out)?;
    write_training_log(&resolved.out.join("training_log.csv"), &outcome.log)?;
    config::write_train_echo(&resolved.out.join("config.toml"), &resolved, &seeds)?;

    for ckpt in outcome.ensemble.checkpoints() {
        println!(
            "estimator {} (seed {}): best val accuracy {:.4} at epoch {}",
            ckpt.estimator, ckpt.seed, ckpt.best_score, ckpt.best_epoch
        );
    }
    println!("ensemble written to {}", resolved.out.display());
    Ok(())
}

fn write_training_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut text = String::from("estimator,epoch,train_loss,val_accuracy,is_best\n");
    for rec in log {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.estimator, rec.epoch, rec.train_loss, rec.val_accuracy, rec.is_best
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn predict(args: PredictArgs, cfg: &FileConfig) -> Result<()> {
    let manifest_path = args
        .manifest
        .or_else(|| cfg.manifest.clone())
        .context("predict needs --manifest")?;
    let batch_size = args.batch_size.or(cfg.batch_size).unwrap_or(16);
    let split = parse_split(&args.split)?;
    let ensemble = EnsembleModel::<f32>::load(&args.ensemble)?;
    let manifest = read_manifest(&manifest_path)?;
    let data = load_split::<f32>(&manifest, &manifest_path, split, ensemble.spec().input_size)?;
    let predictions = predict_rcnf(&ensemble, &data.dataset, batch_size)?;

    let mut text = String::from("id,predicted\n");
    for (id, &p) in data.ids.iter().zip(&predictions) {
        text.push_str(&format!("{id},{}\n", manifest.class_names[p]));
    }
    match args.out.or_else(|| cfg.out.clone()) {
        Some(path) => {
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            log::info!("{} predictions written to {}", predictions.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs, cfg: &FileConfig) -> Result<()> {
    let manifest_path = args
        .manifest
        .or_else(|| cfg.manifest.clone())
        .context("evaluate needs --manifest")?;
    let out_dir = args
        .out
        .or_else(|| cfg.out.clone())
        .context("evaluate needs --out (report directory)")?;
    let batch_size = args.batch_size.or(cfg.batch_size).unwrap_or(16);
    let averaging = parse_averaging(
        &args
            .averaging
            .or_else(|| cfg.averaging.clone())
            .unwrap_or_else(|| "macro".to_string()),
    )?;
    let split = parse_split(&args.split)?;

    let ensemble = EnsembleModel::<f32>::load(&args.ensemble)?;
    let manifest = read_manifest(&manifest_path)?;
    let data = load_split::<f32>(&manifest, &manifest_path, split, ensemble.spec().input_size)?;
    let predictions = predict_rcnf(&ensemble, &data.dataset, batch_size)?;
    let cm = ConfusionMatrix::from_pairs(data.dataset.labels(), &predictions, manifest.num_classes())?;
    let parameter_count = Model::<f32>::build(ensemble.spec().clone(), 0)?.count_parameters();
    let report = compute_report(&cm, parameter_count)?;
    emit_report(&cm, &report, &out_dir)?;

    println!("split {split}, {} samples", data.dataset.len());
    println!("accuracy {:.4}", report.accuracy);
    println!("f_{averaging} {:.4}", f_score(&cm, averaging)?);
    println!("report written to {}", out_dir.display());
    Ok(())
}

fn parse_split(text: &str) -> Result<Split> {
    text.parse::<Split>().map_err(|e| anyhow!(e))
}

fn parse_averaging(text: &str) -> Result<Averaging> {
    match text {
        "macro" => Ok(Averaging::Macro),
        "micro" => Ok(Averaging::Micro),
        "weighted" => Ok(Averaging::Weighted),
        other => bail!("unknown averaging '{other}' (expected macro, micro, or weighted)"),
    }
}

pub fn inspect(args: InspectArgs, cfg: &FileConfig) -> Result<()> {
    let selector = args
        .spec
        .or_else(|| cfg.spec.clone())
        .unwrap_or_else(|| "malimg".to_string());
    let spec = resolve_spec(&selector, args.reconstruction.or(cfg.reconstruction))?;
    let model = Model::<f32>::build(spec, 0)?;

    // One row per layer: the conv and decoder entries pair a weight with its
    // bias under a shared prefix, the capsule transform stands alone.
    let mut rows: Vec<(String, usize)> = Vec::new();
    for (name, tensor) in model.named_parameters() {
        let layer = name
            .rsplit_once('.')
            .map_or(name.as_str(), |(prefix, _)| prefix)
            .to_string();
        match rows.last_mut() {
            Some((last, count)) if *last == layer => *count += tensor.numel(),
            _ => rows.push((layer, tensor.numel())),
        }
    }
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    println!("{:<width$}  parameters", "layer");
    for (layer, count) in &rows {
        println!("{layer:<width$}  {count}");
    }
    println!("{:<width$}  {}", "conv total", model.conv_parameter_count());
    println!("{:<width$}  {}", "capsule total", model.capsule_parameter_count());
    if model.decoder_parameter_count() > 0 {
        println!(
            "{:<width$}  {} (excluded from total)",
            "decoder total",
            model.decoder_parameter_count()
        );
    }
    println!("{:<width$}  {}", "total", model.count_parameters());
    Ok(())
}

pub fn squash_curve(args: SquashCurveArgs, cfg: &FileConfig) -> Result<()> {
    let points = squash_scalar_curve(args.s_min, args.s_max, args.points)?;
    match args.out.or_else(|| cfg.out.clone()) {
        Some(path) => {
            let file = fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_curve(&points, std::io::BufWriter::new(file))?;
            log::info!("{} curve points written to {}", points.len(), path.display());
        }
        None => write_curve(&points, std::io::stdout().lock())?,
    }
    Ok(())
}
