//! Dataset manifests: stratified train/val/test assignment and the on-disk
//! CSV listing that records it.
//!
//! Manifest format: a header line `id,path1,path2,label,split` followed by
//! one row per sample. `path2` is empty for single-input samples. Class
//! names live in a sibling file with `.classes` appended to the manifest
//! name, one name per line. Paths are stored relative to the manifest's
//! directory unless absolute.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "id,path1,path2,label,split";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

/// One labelled sample before split assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSource {
    pub id: String,
    pub paths: Vec<PathBuf>,
    pub label: usize,
}

/// One labelled sample with its assigned split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub paths: Vec<PathBuf>,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.records_in(split).count()
    }

    /// Per-class sample counts, whole dataset or one split.
    pub fn class_counts(&self, split: Option<Split>) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for r in &self.records {
            if split.is_none_or(|s| s == r.split) {
                counts[r.label] += 1;
            }
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let arity = self.records.first().map(|r| r.paths.len());
        for r in &self.records {
            if r.label >= self.num_classes() {
                return Err(Error::LabelOutOfRange {
                    label: r.label,
                    num_classes: self.num_classes(),
                });
            }
            if r.paths.is_empty() || r.paths.len() > 2 {
                return Err(Error::Dataset(format!(
                    "sample '{}' has {} paths, expected 1 or 2",
                    r.id,
                    r.paths.len()
                )));
            }
            if Some(r.paths.len()) != arity {
                return Err(Error::Dataset(format!(
                    "sample '{}' has {} paths but earlier samples have {}",
                    r.id,
                    r.paths.len(),
                    arity.unwrap()
                )));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate sample id '{}'", r.id)));
            }
        }
        Ok(())
    }
}

/// Split `n` items across three parts in proportion to `ratios`, rounding
/// by largest remainder. Ties go to the earlier part.
fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| n as f64 * r);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        quotas[b]
            .fract()
            .partial_cmp(&quotas[a].fract())
            .expect("finite quotas")
            .then(a.cmp(&b))
    });
    for &part in order.iter().take(n - assigned) {
        counts[part] += 1;
    }
    counts
}

/// Assign every sample to train, val, or test. Assignment is stratified:
/// each class is shuffled and divided by the ratios independently, so split
/// class proportions track the dataset's. Deterministic in `seed`; input
/// order is preserved in the output.
pub fn stratified_split(
    samples: Vec<SampleSource>,
    class_names: Vec<String>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| !r.is_finite() || r <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios {
            ratios: ratios.to_vec(),
            sum,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples"));
    }
    let num_classes = class_names.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, s) in samples.iter().enumerate() {
        if s.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                num_classes,
            });
        }
        by_class[s.label].push(i);
    }
    for (k, members) in by_class.iter().enumerate() {
        if members.len() < Split::ALL.len() {
            return Err(Error::ClassTooSmall {
                class: class_names[k].clone(),
                count: members.len(),
                required: Split::ALL.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Train; samples.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), ratios);
        let mut cursor = members.iter();
        for (split, &count) in Split::ALL.iter().zip(&counts) {
            for &i in cursor.by_ref().take(count) {
                assignment[i] = *split;
            }
        }
    }

    let records = samples
        .into_iter()
        .zip(assignment)
        .map(|(s, split)| SampleRecord {
            id: s.id,
            paths: s.paths,
            label: s.label,
            split,
        })
        .collect();
    let manifest = DatasetManifest {
        class_names,
        records,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Location of the class-name file that accompanies a manifest.
pub fn classes_path(manifest_path: &Path) -> PathBuf {
    let mut name = manifest_path.file_name().unwrap_or_default().to_owned();
    name.push(".classes");
    manifest_path.with_file_name(name)
}

/// Resolve a record path against the manifest's directory.
pub fn resolve_record_path(manifest_path: &Path, record_path: &Path) -> PathBuf {
    if record_path.is_absolute() {
        record_path.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(record_path)
    }
}

fn field_check(kind: &str, value: &str) -> Result<()> {
    if value.contains(',') || value.contains('\n') || value.contains('\r') {
        return Err(Error::Dataset(format!(
            "{kind} '{value}' contains a comma or newline and cannot be stored"
        )));
    }
    Ok(())
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let mut out = String::with_capacity(manifest.len() * 48);
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for r in &manifest.records {
        field_check("sample id", &r.id)?;
        let mut paths = [String::new(), String::new()];
        for (slot, p) in paths.iter_mut().zip(&r.paths) {
            let text = p
                .to_str()
                .ok_or_else(|| Error::Dataset(format!("path {} is not UTF-8", p.display())))?;
            field_check("path", text)?;
            *slot = text.to_string();
        }
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id, paths[0], paths[1], r.label, r.split
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;

    let mut classes = String::new();
    for name in &manifest.class_names {
        field_check("class name", name)?;
        classes.push_str(name);
        classes.push('\n');
    }
    let cpath = classes_path(path);
    std::fs::write(&cpath, classes).map_err(|e| Error::io(&cpath, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == MANIFEST_HEADER => {}
        Some((_, first)) => {
            return Err(parse_err(
                1,
                format!("expected header '{MANIFEST_HEADER}', found '{first}'"),
            ))
        }
        None => return Err(parse_err(1, "empty manifest".into())),
    }

    let mut records = Vec::new();
    let mut max_label = 0usize;
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(lineno, "id and path1 must be non-empty".into()));
        }
        let mut paths = vec![PathBuf::from(fields[1])];
        if !fields[2].is_empty() {
            paths.push(PathBuf::from(fields[2]));
        }
        let label: usize = fields[3]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label '{}'", fields[3])))?;
        let split = Split::from_str(fields[4]).map_err(|e| parse_err(lineno, e))?;
        max_label = max_label.max(label);
        records.push(SampleRecord {
            id: fields[0].to_string(),
            paths,
            label,
            split,
        });
    }

    let cpath = classes_path(path);
    let class_names = if cpath.is_file() {
        let text = std::fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
        text.lines().map(str::to_string).collect()
    } else {
        (0..=max_label).map(|k| format!("class_{k}")).collect()
    };

    let manifest = DatasetManifest {
        class_names,
        records,
    };
    manifest.validate().map_err(|e| Error::Dataset(format!(
        "{}: {e}",
        path.display()
    )))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sources(class_sizes: &[usize]) -> Vec<SampleSource> {
        let mut out = Vec::new();
        for (label, &n) in class_sizes.iter().enumerate() {
            for i in 0..n {
                out.push(SampleSource {
                    id: format!("c{label}s{i}"),
                    paths: vec![PathBuf::from(format!("imgs/c{label}s{i}.pgm"))],
                    label,
                });
            }
        }
        out
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("family{k}")).collect()
    }

    #[test]
    fn eight_samples_split_two_one_one_per_class() {
        let m = stratified_split(sources(&[4, 4]), names(2), [0.5, 0.25, 0.25], 7).unwrap();
        assert_eq!(m.split_len(Split::Train), 4);
        assert_eq!(m.split_len(Split::Val), 2);
        assert_eq!(m.split_len(Split::Test), 2);
        for split in Split::ALL {
            let counts = m.class_counts(Some(split));
            assert_eq!(counts[0], counts[1]);
        }
    }

    #[test]
    fn assignment_is_deterministic_in_the_seed() {
        let a = stratified_split(sources(&[10, 6]), names(2), [0.75, 0.125, 0.125], 3).unwrap();
        let b = stratified_split(sources(&[10, 6]), names(2), [0.75, 0.125, 0.125], 3).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(sources(&[10, 6]), names(2), [0.75, 0.125, 0.125], 4).unwrap();
        let moved = a
            .records
            .iter()
            .zip(&c.records)
            .filter(|(x, y)| x.split != y.split)
            .count();
        assert!(moved > 0, "different seeds should shuffle differently");
    }

    #[test]
    fn ratios_must_be_positive_and_sum_to_one() {
        let err = stratified_split(sources(&[4]), names(1), [0.5, 0.3, 0.1], 0).unwrap_err();
        match err {
            Error::BadRatios { sum, .. } => assert!((sum - 0.9).abs() < 1e-12),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(stratified_split(sources(&[4]), names(1), [1.5, -0.25, -0.25], 0).is_err());
    }

    #[test]
    fn tiny_class_is_rejected_by_name() {
        let err = stratified_split(sources(&[5, 2]), names(2), [0.75, 0.125, 0.125], 0).unwrap_err();
        match err {
            Error::ClassTooSmall { class, count, required } => {
                assert_eq!(class, "family1");
                assert_eq!(count, 2);
                assert_eq!(required, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn three_sample_class_follows_largest_remainder_exactly() {
        // 3 at (0.75, 0.125, 0.125): floors are (2,0,0); the leftover unit
        // goes to val on the remainder tie, leaving test empty.
        assert_eq!(largest_remainder(3, [0.75, 0.125, 0.125]), [2, 1, 0]);
        assert_eq!(largest_remainder(8, [0.5, 0.25, 0.25]), [4, 2, 2]);
        assert_eq!(largest_remainder(10, [0.75, 0.125, 0.125]), [8, 1, 1]);
    }

    #[test]
    fn split_sizes_match_ratio_totals_at_scale() {
        // 25 classes of 370 ≈ one dataset's scale; per-class rounding means
        // totals stay within one unit per class of the exact quotas.
        let sizes = vec![370usize; 25];
        let m = stratified_split(sources(&sizes), names(25), [0.75, 0.125, 0.125], 11).unwrap();
        let n = m.len() as f64;
        for (split, ratio) in Split::ALL.iter().zip([0.75, 0.125, 0.125]) {
            let got = m.split_len(*split) as f64;
            assert!((got - n * ratio).abs() <= 25.0, "{split}: {got}");
        }
    }

    #[test]
    fn manifest_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        let mut samples = sources(&[4, 5]);
        // Exercise the dual-input arity.
        for s in &mut samples {
            s.paths.push(PathBuf::from(format!("asm/{}.pgm", s.id)));
        }
        let m = stratified_split(samples, names(2), [0.5, 0.25, 0.25], 1).unwrap();
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, m);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,path1,path2,label,split\n"));
        assert!(text.contains("c0s0,imgs/c0s0.pgm,asm/c0s0.pgm,0,"));
    }

    #[test]
    fn single_input_rows_leave_path2_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.csv");
        let m = stratified_split(sources(&[3]), names(1), [0.4, 0.3, 0.3], 1).unwrap();
        write_manifest(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let row = text.lines().nth(1).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert!(fields[2].is_empty());
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn parse_errors_carry_the_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "id,path1,path2,label,split\na,x.pgm,,0,train\nb,y.pgm,,1,validation\n",
        )
        .unwrap();
        match read_manifest(&path).unwrap_err() {
            Error::Parse { line, detail, .. } => {
                assert_eq!(line, 3);
                assert!(detail.contains("validation"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_class_file_falls_back_to_numbered_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "id,path1,path2,label,split\na,x.pgm,,0,train\nb,y.pgm,,2,test\n",
        )
        .unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.class_names, vec!["class_0", "class_1", "class_2"]);
    }

    #[test]
    fn record_paths_resolve_against_the_manifest_directory() {
        let manifest = Path::new("/data/run1/split.csv");
        assert_eq!(
            resolve_record_path(manifest, Path::new("imgs/a.pgm")),
            PathBuf::from("/data/run1/imgs/a.pgm")
        );
        assert_eq!(
            resolve_record_path(manifest, Path::new("/abs/a.pgm")),
            PathBuf::from("/abs/a.pgm")
        );
        assert_eq!(classes_path(manifest), PathBuf::from("/data/run1/split.csv.classes"));
    }

    /// Largest deviation of any class's in-split share from its dataset
    /// share, in units of 1/|split|.
    fn worst_share_drift(m: &DatasetManifest) -> f64 {
        let total = m.len() as f64;
        let overall = m.class_counts(None);
        let mut worst = 0.0f64;
        for split in Split::ALL {
            let in_split = m.split_len(split) as f64;
            if in_split == 0.0 {
                continue;
            }
            for (k, &class_total) in overall.iter().enumerate() {
                let got = m.class_counts(Some(split))[k] as f64 / in_split;
                let want = class_total as f64 / total;
                worst = worst.max((got - want).abs() * in_split);
            }
        }
        worst
    }

    #[test]
    fn realistic_imbalanced_distribution_stays_stratified() {
        // 25 classes spanning 80 to 2,949 samples. Every class's share of
        // each split stays within 1/|split| of its share of the dataset.
        let sizes = [
            1591usize, 2949, 800, 213, 184, 123, 146, 200, 431, 132, 128, 408, 381, 198, 136,
            159, 125, 97, 177, 162, 142, 116, 106, 158, 80,
        ];
        let m = stratified_split(sources(&sizes), names(25), [0.75, 0.125, 0.125], 5).unwrap();
        let n = m.len() as f64;
        for (split, ratio) in Split::ALL.iter().zip([0.75, 0.125, 0.125]) {
            let got = m.split_len(*split) as f64;
            assert!((got - n * ratio).abs() <= 25.0);
        }
        assert!(worst_share_drift(&m) <= 1.0, "drift {}", worst_share_drift(&m));
    }

    proptest! {
        // Largest-remainder guarantee: every class sends within one sample
        // of its exact quota to each split, and the splits cover everything.
        #[test]
        fn per_class_allocation_tracks_the_ratios(
            sizes in proptest::collection::vec(3usize..40, 1..6),
            seed in 0u64..1000,
        ) {
            let total: usize = sizes.iter().sum();
            let m = stratified_split(
                sources(&sizes),
                names(sizes.len()),
                [0.75, 0.125, 0.125],
                seed,
            )
            .unwrap();
            let covered: usize = Split::ALL.iter().map(|&s| m.split_len(s)).sum();
            prop_assert_eq!(covered, total);
            for (split, ratio) in Split::ALL.iter().zip([0.75, 0.125, 0.125]) {
                for (k, &class_total) in sizes.iter().enumerate() {
                    let got = m
                        .records_in(*split)
                        .filter(|r| r.label == k)
                        .count() as f64;
                    prop_assert!(
                        (got - class_total as f64 * ratio).abs() < 1.0,
                        "class {} in {}: {} of {}", k, split, got, class_total
                    );
                }
            }
        }

        // Balanced classes split identically, so in-split class shares equal
        // dataset shares exactly.
        #[test]
        fn balanced_classes_have_exact_split_shares(
            per_class in 3usize..60,
            num_classes in 1usize..6,
            seed in 0u64..1000,
        ) {
            let sizes = vec![per_class; num_classes];
            let m = stratified_split(
                sources(&sizes),
                names(num_classes),
                [0.75, 0.125, 0.125],
                seed,
            )
            .unwrap();
            prop_assert!(worst_share_drift(&m) < 1e-9);
        }
    }
}
