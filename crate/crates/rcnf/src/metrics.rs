//! Multiclass evaluation: confusion matrices, accuracy, F-scores under
//! macro, micro, and weighted averaging, and report files.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// How per-class F-scores are combined. Macro is the default: it weighs
/// every class equally, the strictest choice under class imbalance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
    Weighted,
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
            Averaging::Weighted => "weighted",
        })
    }
}

/// J×J counts, rows = actual class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_pairs(actual: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::EmptyInput("classes"));
        }
        if actual.len() != predicted.len() {
            return Err(Error::Shape {
                op: "confusion_matrix",
                detail: format!(
                    "{} actual labels vs {} predictions",
                    actual.len(),
                    predicted.len()
                ),
            });
        }
        let mut counts = vec![0u64; num_classes * num_classes];
        for (&a, &p) in actual.iter().zip(predicted) {
            for label in [a, p] {
                if label >= num_classes {
                    return Err(Error::LabelOutOfRange { label, num_classes });
                }
            }
            counts[a * num_classes + p] += 1;
        }
        Ok(ConfusionMatrix { num_classes, counts })
    }

    /// Build directly from row-major counts.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::EmptyInput("classes"));
        }
        if counts.len() != num_classes * num_classes {
            return Err(Error::Shape {
                op: "confusion_matrix",
                detail: format!(
                    "{} counts for a {num_classes}x{num_classes} matrix",
                    counts.len()
                ),
            });
        }
        Ok(ConfusionMatrix { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Samples actually belonging to class `k`.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k * self.num_classes..(k + 1) * self.num_classes]
            .iter()
            .sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.count(k, k)
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        self.support(k) - self.true_positives(k)
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        (0..self.num_classes).map(|a| self.count(a, k)).sum::<u64>() - self.true_positives(k)
    }
}

/// Correct predictions over all predictions: trace / total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix"));
    }
    let trace: u64 = (0..cm.num_classes()).map(|k| cm.true_positives(k)).sum();
    Ok(trace as f64 / total as f64)
}

/// One-vs-rest F per class: 2·TP / (2·TP + FN + FP). A class with
/// TP = FN = FP = 0 scores 0 by convention, so degenerate splits evaluate
/// without errors.
pub fn per_class_f(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes())
        .map(|k| {
            let denom = 2 * cm.true_positives(k) + cm.false_negatives(k) + cm.false_positives(k);
            if denom == 0 {
                0.0
            } else {
                2.0 * cm.true_positives(k) as f64 / denom as f64
            }
        })
        .collect()
}

pub fn f_score(cm: &ConfusionMatrix, averaging: Averaging) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix"));
    }
    let j = cm.num_classes();
    Ok(match averaging {
        Averaging::Macro => per_class_f(cm).iter().sum::<f64>() / j as f64,
        Averaging::Micro => {
            let tp: u64 = (0..j).map(|k| cm.true_positives(k)).sum();
            let fn_: u64 = (0..j).map(|k| cm.false_negatives(k)).sum();
            let fp: u64 = (0..j).map(|k| cm.false_positives(k)).sum();
            2.0 * tp as f64 / (2 * tp + fn_ + fp) as f64
        }
        Averaging::Weighted => per_class_f(cm)
            .iter()
            .enumerate()
            .map(|(k, f)| cm.support(k) as f64 / total as f64 * f)
            .sum(),
    })
}

/// Everything the evaluation report carries.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f_macro: f64,
    pub f_micro: f64,
    pub f_weighted: f64,
    pub parameter_count: usize,
}

pub fn compute_report(cm: &ConfusionMatrix, parameter_count: usize) -> Result<MetricsReport> {
    Ok(MetricsReport {
        accuracy: accuracy(cm)?,
        f_macro: f_score(cm, Averaging::Macro)?,
        f_micro: f_score(cm, Averaging::Micro)?,
        f_weighted: f_score(cm, Averaging::Weighted)?,
        parameter_count,
    })
}

/// Write `confusion_matrix.csv` (header `actual,0,1,...`, one row per
/// actual class) and `summary.txt` (`key value` lines) into `dir`.
pub fn emit_report(cm: &ConfusionMatrix, report: &MetricsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let j = cm.num_classes();

    let mut grid = String::from("actual");
    for p in 0..j {
        grid.push_str(&format!(",{p}"));
    }
    grid.push('\n');
    for a in 0..j {
        grid.push_str(&a.to_string());
        for p in 0..j {
            grid.push_str(&format!(",{}", cm.count(a, p)));
        }
        grid.push('\n');
    }
    let grid_path = dir.join("confusion_matrix.csv");
    std::fs::write(&grid_path, grid).map_err(|e| Error::io(&grid_path, e))?;

    let summary = format!(
        "accuracy {}\nf_macro {}\nf_micro {}\nf_weighted {}\nparameter_count {}\n",
        report.accuracy, report.f_macro, report.f_micro, report.f_weighted, report.parameter_count
    );
    let summary_path = dir.join("summary.txt");
    std::fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))
}

/// Read back what [`emit_report`] wrote.
pub fn read_report(dir: &Path) -> Result<(ConfusionMatrix, MetricsReport)> {
    let grid_path = dir.join("confusion_matrix.csv");
    let text = std::fs::read_to_string(&grid_path).map_err(|e| Error::io(&grid_path, e))?;
    let parse_err = |path: &Path, line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(&grid_path, 1, "empty file".into()))?;
    let j = header.split(',').count() - 1;
    let mut counts = Vec::with_capacity(j * j);
    for (idx, line) in lines {
        for cell in line.split(',').skip(1) {
            counts.push(cell.parse::<u64>().map_err(|_| {
                parse_err(&grid_path, idx + 1, format!("bad count '{cell}'"))
            })?);
        }
    }
    let cm = ConfusionMatrix::from_counts(j, counts)?;

    let summary_path = dir.join("summary.txt");
    let text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let mut report = MetricsReport {
        accuracy: 0.0,
        f_macro: 0.0,
        f_micro: 0.0,
        f_weighted: 0.0,
        parameter_count: 0,
    };
    for (idx, line) in text.lines().enumerate() {
        let (key, value) = line.split_once(' ').ok_or_else(|| {
            parse_err(&summary_path, idx + 1, format!("expected 'key value', found '{line}'"))
        })?;
        let bad = |v: &str| parse_err(&summary_path, idx + 1, format!("bad value '{v}'"));
        match key {
            "accuracy" => report.accuracy = value.parse().map_err(|_| bad(value))?,
            "f_macro" => report.f_macro = value.parse().map_err(|_| bad(value))?,
            "f_micro" => report.f_micro = value.parse().map_err(|_| bad(value))?,
            "f_weighted" => report.f_weighted = value.parse().map_err(|_| bad(value))?,
            "parameter_count" => report.parameter_count = value.parse().map_err(|_| bad(value))?,
            other => return Err(parse_err(&summary_path, idx + 1, format!("unknown key '{other}'"))),
        }
    }
    Ok((cm, report))
}
