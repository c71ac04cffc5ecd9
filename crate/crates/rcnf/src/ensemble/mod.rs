//! Bagged capsule-network ensembles: per-estimator bootstrap training with
//! best-on-validation checkpointing, and average-ensemble prediction.

mod checkpoint;

pub use checkpoint::{
    conv_plan_from_text, conv_plan_to_text, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_FORMAT_VERSION,
};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::capsnet::{training_loss, LossConfig, Model, ModelSpec};
use crate::data::{bootstrap_indices, Dataset};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{argmax_rows, Scalar, Tape, Tensor};

/// Hard upper bound on ensemble size.
pub const MAX_ESTIMATORS: usize = 10;

const ENSEMBLE_MANIFEST: &str = "ensemble.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub master_seed: u64,
    /// Estimators trained concurrently. Results do not depend on this.
    pub workers: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            master_seed: 0,
            workers: 1,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

/// One training progress line.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub estimator: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub is_best: bool,
}

#[derive(Debug)]
pub struct TrainOutcome<F: Scalar> {
    pub ensemble: EnsembleModel<F>,
    pub log: Vec<EpochRecord>,
}

/// Keeps the strictly-best validation score; the first observation always
/// counts so a checkpoint exists even if training never improves.
#[derive(Debug, Clone, Default)]
pub struct BestScoreTracker {
    best: Option<f64>,
}

impl BestScoreTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// True when `score` should be persisted: first observation, or a
    /// strict improvement. Ties keep the earlier epoch.
    pub fn observe(&mut self, score: f64) -> bool {
        match self.best {
            Some(best) if score <= best => false,
            _ => {
                self.best = Some(score);
                true
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed mixing of (master seed, estimator index), so estimator-level
/// parallelism cannot change any estimator's randomness.
pub fn estimator_seed(master_seed: u64, index: usize) -> u64 {
    splitmix(master_seed ^ splitmix(index as u64))
}

/// Independent named randomness streams under one estimator seed.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix(seed ^ splitmix(stream.wrapping_add(1).wrapping_mul(GOLDEN)))
}

fn check_lines(spec: &ModelSpec, dataset: &Dataset<impl Scalar>, what: &str) -> Result<()> {
    if dataset.num_lines() != spec.input_lines {
        return Err(Error::SpecMismatch {
            detail: format!(
                "{what} has {} input line(s), architecture expects {}",
                dataset.num_lines(),
                spec.input_lines
            ),
        });
    }
    for l in 0..dataset.num_lines() {
        let shape = dataset.line(l).shape();
        if shape[2] != spec.input_size || shape[3] != spec.input_size {
            return Err(Error::SpecMismatch {
                detail: format!(
                    "{what} line {l} is {}x{}, architecture expects {}x{}",
                    shape[2], shape[3], spec.input_size, spec.input_size
                ),
            });
        }
    }
    Ok(())
}

fn check_labels(spec: &ModelSpec, dataset: &Dataset<impl Scalar>, what: &str) -> Result<()> {
    if let Some(&label) = dataset.labels().iter().find(|&&l| l >= spec.num_capsules) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: spec.num_capsules,
        });
    }
    let _ = what;
    Ok(())
}

/// Accuracy of `model` on `dataset`, evaluated in batches.
pub fn accuracy_on<F: Scalar>(
    model: &Model<F>,
    dataset: &Dataset<F>,
    batch_size: usize,
) -> Result<f64> {
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (lines, labels) = dataset.gather(chunk)?;
        let refs: Vec<&Tensor<F>> = lines.iter().collect();
        let probs = model.predict_probs(&refs)?;
        correct += argmax_rows(&probs)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Train one estimator: draw its bootstrap sample once, run `epochs`
/// epochs of minibatch Adam, and keep the parameters of the epoch with the
/// best validation accuracy.
pub fn train_estimator<F: Scalar>(
    spec: &ModelSpec,
    estimator: usize,
    seed: u64,
    trainset: &Dataset<F>,
    valset: &Dataset<F>,
    config: &TrainConfig,
) -> Result<(Checkpoint<F>, Vec<EpochRecord>)> {
    spec.validate()?;
    if config.epochs == 0 {
        return Err(Error::InvalidSpec("epochs must be at least 1".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidSpec("batch size must be at least 1".into()));
    }
    for (ds, what) in [(trainset, "train set"), (valset, "validation set")] {
        check_lines(spec, ds, what)?;
        check_labels(spec, ds, what)?;
    }

    let mut model = Model::build(spec.clone(), stream_seed(seed, 0))?;
    let bootstrap = bootstrap_indices(trainset.len(), stream_seed(seed, 1))?;
    let mut adam = Adam::new(config.adam);
    let mut tracker = BestScoreTracker::new();
    let mut best: Option<Checkpoint<F>> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order = bootstrap.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 1 + epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let (lines, labels) = trainset.gather(chunk)?;
            let refs: Vec<&Tensor<F>> = lines.iter().collect();
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &refs, Some(&labels))?;
            let loss = training_loss(&mut tape, &fwd, &refs, &labels, spec.num_capsules, &config.loss)?;
            loss_sum += tape.value(loss).item().as_f64() * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Option<&Tensor<F>>> =
                fwd.param_vars.iter().map(|&v| tape.grad(v)).collect();
            let mut params = model.named_parameters_mut();
            adam.step(&mut params, &grads)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_accuracy = accuracy_on(&model, valset, config.batch_size)?;
        let is_best = tracker.observe(val_accuracy);
        if is_best {
            best = Some(Checkpoint::capture(estimator, &model, val_accuracy, epoch, seed));
        }
        log::info!(
            "estimator {estimator} epoch {epoch}/{} train_loss {train_loss:.6} val_accuracy {val_accuracy:.4} best {is_best}",
            config.epochs
        );
        log.push(EpochRecord {
            estimator,
            epoch,
            train_loss,
            val_accuracy,
            is_best,
        });
    }
    Ok((best.expect("at least one epoch ran"), log))
}

/// Train the whole ensemble. Per-estimator seeds come from
/// [`estimator_seed`], so the outcome does not depend on `workers`.
pub fn train_rcnf<F: Scalar>(
    spec: &ModelSpec,
    n_estimators: usize,
    trainset: &Dataset<F>,
    valset: &Dataset<F>,
    config: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    if n_estimators == 0 || n_estimators > MAX_ESTIMATORS {
        return Err(Error::InvalidSpec(format!(
            "n_estimators must be in [1,{MAX_ESTIMATORS}], got {n_estimators}"
        )));
    }
    let seeds: Vec<u64> = (0..n_estimators)
        .map(|i| estimator_seed(config.master_seed, i))
        .collect();

    let train_one = |i: usize| train_estimator(spec, i, seeds[i], trainset, valset, config);
    let results: Vec<(Checkpoint<F>, Vec<EpochRecord>)> = if config.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers.min(n_estimators))
            .build()
            .map_err(|e| Error::InvalidSpec(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            (0..n_estimators)
                .into_par_iter()
                .map(train_one)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..n_estimators).map(train_one).collect::<Result<_>>()?
    };

    let mut checkpoints = Vec::with_capacity(n_estimators);
    let mut log = Vec::new();
    for (ckpt, records) in results {
        checkpoints.push(ckpt);
        log.extend(records);
    }
    Ok(TrainOutcome {
        ensemble: EnsembleModel::new(checkpoints)?,
        log,
    })
}

/// Elementwise mean of per-model class-score tensors of one shape.
pub fn average_probabilities<F: Scalar>(per_model: &[Tensor<F>]) -> Result<Tensor<F>> {
    let first = per_model.first().ok_or(Error::EmptyInput("probabilities"))?;
    let mut mean = first.clone();
    for t in &per_model[1..] {
        if t.shape() != first.shape() {
            return Err(Error::Shape {
                op: "average_probabilities",
                detail: format!("{:?} vs {:?}", t.shape(), first.shape()),
            });
        }
        for (m, &v) in mean.data_mut().iter_mut().zip(t.data()) {
            *m += v;
        }
    }
    let inv = F::from_f64(1.0 / per_model.len() as f64);
    for m in mean.data_mut() {
        *m *= inv;
    }
    Ok(mean)
}

#[derive(Debug, Clone)]
pub struct EnsembleModel<F: Scalar> {
    checkpoints: Vec<Checkpoint<F>>,
    num_classes: usize,
}

impl<F: Scalar> EnsembleModel<F> {
    /// All checkpoints must share one architecture; size is capped at
    /// [`MAX_ESTIMATORS`].
    pub fn new(checkpoints: Vec<Checkpoint<F>>) -> Result<Self> {
        if checkpoints.is_empty() || checkpoints.len() > MAX_ESTIMATORS {
            return Err(Error::InvalidSpec(format!(
                "ensemble must hold 1 to {MAX_ESTIMATORS} checkpoints, got {}",
                checkpoints.len()
            )));
        }
        let spec = checkpoints[0].spec.clone();
        for c in &checkpoints {
            c.validate()?;
            c.ensure_spec(&spec)?;
        }
        Ok(EnsembleModel {
            num_classes: spec.num_capsules,
            checkpoints,
        })
    }

    pub fn n_estimators(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.checkpoints[0].spec
    }

    pub fn checkpoints(&self) -> &[Checkpoint<F>] {
        &self.checkpoints
    }

    /// Mean class scores over all estimators, [N, num_classes].
    pub fn predict_probs(&self, testset: &Dataset<F>, batch_size: usize) -> Result<Tensor<F>> {
        check_lines(self.spec(), testset, "test set")?;
        let models: Vec<Model<F>> = self
            .checkpoints
            .iter()
            .map(Checkpoint::instantiate)
            .collect::<Result<_>>()?;
        let n = testset.len();
        let mut out = Tensor::<F>::zeros(&[n, self.num_classes]);
        let indices: Vec<usize> = (0..n).collect();
        for chunk in indices.chunks(batch_size.max(1)) {
            let (lines, _) = testset.gather(chunk)?;
            let refs: Vec<&Tensor<F>> = lines.iter().collect();
            let per_model = models
                .iter()
                .map(|m| m.predict_probs(&refs))
                .collect::<Result<Vec<_>>>()?;
            let mean = average_probabilities(&per_model)?;
            for (row, &i) in chunk.iter().enumerate() {
                let src = &mean.data()[row * self.num_classes..(row + 1) * self.num_classes];
                out.data_mut()[i * self.num_classes..(i + 1) * self.num_classes]
                    .copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Predicted class per sample; ties go to the lowest class index.
    pub fn predict(&self, testset: &Dataset<F>, batch_size: usize) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_probs(testset, batch_size)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = format!(
            "format_version {CHECKPOINT_FORMAT_VERSION}\nn_estimators {}\nnum_classes {}\n",
            self.n_estimators(),
            self.num_classes
        );
        let mpath = dir.join(ENSEMBLE_MANIFEST);
        std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        for (pos, ckpt) in self.checkpoints.iter().enumerate() {
            save_checkpoint(ckpt, &dir.join(format!("estimator_{pos}")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(ENSEMBLE_MANIFEST);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let mut version = None;
        let mut n_estimators = None;
        let mut num_classes = None;
        for (idx, line) in text.lines().enumerate() {
            let parse = |v: &str| {
                v.parse::<usize>().map_err(|_| Error::Parse {
                    path: mpath.clone(),
                    line: idx + 1,
                    detail: format!("bad value '{v}'"),
                })
            };
            match line.split_once(' ') {
                Some(("format_version", v)) => version = Some(parse(v)?),
                Some(("n_estimators", v)) => n_estimators = Some(parse(v)?),
                Some(("num_classes", v)) => num_classes = Some(parse(v)?),
                _ => {}
            }
        }
        match version {
            Some(v) if v as u32 == CHECKPOINT_FORMAT_VERSION => {}
            Some(v) => {
                return Err(Error::UnknownFormatVersion {
                    found: v.to_string(),
                    supported: CHECKPOINT_FORMAT_VERSION,
                })
            }
            None => {
                return Err(Error::Parse {
                    path: mpath.clone(),
                    line: 0,
                    detail: "missing format_version".into(),
                })
            }
        }
        let n = n_estimators.ok_or_else(|| Error::Parse {
            path: mpath.clone(),
            line: 0,
            detail: "missing n_estimators".into(),
        })?;
        let checkpoints = (0..n)
            .map(|pos| load_checkpoint(&dir.join(format!("estimator_{pos}"))))
            .collect::<Result<Vec<_>>>()?;
        let ensemble = EnsembleModel::new(checkpoints)?;
        if let Some(k) = num_classes {
            if k != ensemble.num_classes {
                return Err(Error::SpecMismatch {
                    detail: format!(
                        "ensemble manifest says {k} classes, checkpoints have {}",
                        ensemble.num_classes
                    ),
                });
            }
        }
        Ok(ensemble)
    }
}

/// Average-ensemble prediction over a test set.
pub fn predict_rcnf<F: Scalar>(
    ensemble: &EnsembleModel<F>,
    testset: &Dataset<F>,
    batch_size: usize,
) -> Result<Vec<usize>> {
    ensemble.predict(testset, batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsnet::ConvLayerSpec;
    use rand::Rng;

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

    /// Two classes distinguished by mean pixel density.
    fn density_dataset(n_per_class: usize, seed: u64) -> Dataset<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            let density = if class == 0 { 0.15 } else { 0.85 };
            for _ in 0..n_per_class {
                for _ in 0..64 {
                    let on: f64 = rng.random();
                    data.push(if on < density { 1.0f32 } else { 0.0 });
                }
                labels.push(class);
            }
        }
        let line = Tensor::new(vec![labels.len(), 1, 8, 8], data).unwrap();
        Dataset::new(vec![line], labels).unwrap()
    }

    fn quick_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            master_seed: 9,
            workers: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn estimator_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..10).map(|i| estimator_seed(42, i)).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 10);
        assert_eq!(seeds, (0..10).map(|i| estimator_seed(42, i)).collect::<Vec<_>>());
        assert_ne!(estimator_seed(42, 0), estimator_seed(43, 0));
    }

    #[test]
    fn tracker_keeps_first_epoch_and_strict_improvements_only() {
        let mut t = BestScoreTracker::new();
        let decisions: Vec<bool> = [0.5, 0.7, 0.7, 0.6].iter().map(|&s| t.observe(s)).collect();
        assert_eq!(decisions, vec![true, true, false, false]);
        assert_eq!(t.best(), Some(0.7));

        let mut monotone = BestScoreTracker::new();
        assert!([0.1, 0.2, 0.3].iter().all(|&s| monotone.observe(s)));

        let mut flat = BestScoreTracker::new();
        assert!(flat.observe(0.4));
        assert!(!flat.observe(0.4));
    }

    #[test]
    fn averaging_matches_hand_arithmetic_and_breaks_ties_low() {
        let a = Tensor::new(vec![1, 2], vec![0.6f64, 0.4]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![0.2, 0.8]).unwrap();
        let mean = average_probabilities(&[a.clone(), b]).unwrap();
        assert!((mean.data()[0] - 0.4).abs() < 1e-12);
        assert!((mean.data()[1] - 0.6).abs() < 1e-12);
        assert_eq!(argmax_rows(&mean), vec![1]);

        assert_eq!(average_probabilities(&[a.clone()]).unwrap().data(), a.data());

        let tie = Tensor::new(vec![1, 3], vec![0.5, 0.2, 0.5]).unwrap();
        assert_eq!(argmax_rows(&tie), vec![0]);
    }

    #[test]
    fn single_estimator_single_epoch_yields_that_epochs_checkpoint() {
        let train = density_dataset(12, 1);
        let val = density_dataset(6, 2);
        let out = train_rcnf(&tiny_spec(), 1, &train, &val, &quick_config(1)).unwrap();
        assert_eq!(out.ensemble.n_estimators(), 1);
        assert_eq!(out.log.len(), 1);
        let ckpt = &out.ensemble.checkpoints()[0];
        assert_eq!(ckpt.best_epoch, 1);
        assert!(out.log[0].is_best);
        assert_eq!(ckpt.best_score, out.log[0].val_accuracy);
    }

    #[test]
    fn persisted_epoch_is_the_first_maximum_of_the_log() {
        let train = density_dataset(12, 3);
        let val = density_dataset(6, 4);
        let out = train_rcnf(&tiny_spec(), 1, &train, &val, &quick_config(4)).unwrap();
        let ckpt = &out.ensemble.checkpoints()[0];
        let first_max = out
            .log
            .iter()
            .max_by(|a, b| {
                a.val_accuracy
                    .partial_cmp(&b.val_accuracy)
                    .unwrap()
                    .then(b.epoch.cmp(&a.epoch))
            })
            .unwrap();
        assert_eq!(ckpt.best_epoch, first_max.epoch);
        assert_eq!(ckpt.best_score, first_max.val_accuracy);
    }

    #[test]
    fn training_is_deterministic_at_one_worker() {
        let train = density_dataset(10, 5);
        let val = density_dataset(5, 6);
        let a = train_rcnf(&tiny_spec(), 2, &train, &val, &quick_config(2)).unwrap();
        let b = train_rcnf(&tiny_spec(), 2, &train, &val, &quick_config(2)).unwrap();
        assert_eq!(a.log, b.log);
        for (x, y) in a.ensemble.checkpoints().iter().zip(b.ensemble.checkpoints()) {
            for ((n1, t1), (_, t2)) in x.params.iter().zip(&y.params) {
                assert_eq!(t1.data(), t2.data(), "{n1}");
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_the_outcome() {
        let train = density_dataset(10, 7);
        let val = density_dataset(5, 8);
        let seq = train_rcnf(&tiny_spec(), 2, &train, &val, &quick_config(2)).unwrap();
        let mut par_cfg = quick_config(2);
        par_cfg.workers = 2;
        let par = train_rcnf(&tiny_spec(), 2, &train, &val, &par_cfg).unwrap();
        let mut par_log = par.log.clone();
        par_log.sort_by_key(|r| (r.estimator, r.epoch));
        assert_eq!(seq.log, par_log);
        for (x, y) in seq.ensemble.checkpoints().iter().zip(par.ensemble.checkpoints()) {
            for ((n1, t1), (_, t2)) in x.params.iter().zip(&y.params) {
                assert_eq!(t1.data(), t2.data(), "{n1}");
            }
        }
    }

    #[test]
    fn copies_of_one_checkpoint_predict_like_the_single_model() {
        let train = density_dataset(10, 11);
        let val = density_dataset(5, 12);
        let test = density_dataset(8, 13);
        let out = train_rcnf(&tiny_spec(), 1, &train, &val, &quick_config(1)).unwrap();
        let ckpt = out.ensemble.checkpoints()[0].clone();
        let single = out.ensemble.predict(&test, 4).unwrap();
        let copies =
            EnsembleModel::new(vec![ckpt.clone(), ckpt.clone(), ckpt]).unwrap();
        assert_eq!(copies.predict(&test, 4).unwrap(), single);
    }

    #[test]
    fn ensemble_size_bounds_are_enforced() {
        let train = density_dataset(8, 14);
        let val = density_dataset(4, 15);
        assert!(train_rcnf(&tiny_spec(), 0, &train, &val, &quick_config(1)).is_err());
        assert!(train_rcnf(&tiny_spec(), 11, &train, &val, &quick_config(1)).is_err());
        assert!(EnsembleModel::<f32>::new(vec![]).is_err());
    }

    #[test]
    fn dataset_architecture_mismatches_are_rejected_up_front() {
        let spec = tiny_spec();
        let train = density_dataset(8, 16);
        let val = density_dataset(4, 17);

        let mut wrong_size = spec.clone();
        wrong_size.input_size = 16;
        wrong_size.capsule_input_dim = 64;
        assert!(matches!(
            train_rcnf(&wrong_size, 1, &train, &val, &quick_config(1)),
            Err(Error::SpecMismatch { .. })
        ));

        let line = Tensor::<f32>::zeros(&[4, 1, 8, 8]);
        let bad_labels = Dataset::new(vec![line], vec![0, 1, 2, 1]).unwrap();
        assert!(matches!(
            train_rcnf(&spec, 1, &bad_labels, &val, &quick_config(1)),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
    }

    #[test]
    fn ensemble_save_load_round_trips_and_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        let train = density_dataset(10, 18);
        let val = density_dataset(5, 19);
        let test = density_dataset(6, 20);
        let out = train_rcnf(&tiny_spec(), 2, &train, &val, &quick_config(2)).unwrap();
        out.ensemble.save(dir.path()).unwrap();
        let back = EnsembleModel::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.n_estimators(), 2);
        assert_eq!(back.num_classes(), 2);
        assert_eq!(
            back.predict_probs(&test, 4).unwrap().data(),
            out.ensemble.predict_probs(&test, 4).unwrap().data()
        );
    }
}
