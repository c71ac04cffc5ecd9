//! In-memory datasets: one stacked [N,1,H,W] tensor per input line plus a
//! label per sample, with row gathering for batches and bootstrap draws.

use std::path::Path;

use super::image::resize;
use super::manifest::{resolve_record_path, DatasetManifest, Split};
use super::pgm::read_pgm;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Dataset<F: Scalar> {
    lines: Vec<Tensor<F>>,
    labels: Vec<usize>,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(lines: Vec<Tensor<F>>, labels: Vec<usize>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::EmptyInput("input lines"));
        }
        for t in &lines {
            if t.rank() != 4 || t.shape()[1] != 1 {
                return Err(Error::InvalidShape {
                    shape: t.shape().to_vec(),
                    detail: "dataset lines must be [N,1,H,W]".into(),
                });
            }
            if t.shape()[0] != labels.len() {
                return Err(Error::Dataset(format!(
                    "line holds {} samples but there are {} labels",
                    t.shape()[0],
                    labels.len()
                )));
            }
        }
        if labels.is_empty() {
            return Err(Error::EmptyInput("samples"));
        }
        Ok(Dataset { lines, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn line(&self, l: usize) -> &Tensor<F> {
        &self.lines[l]
    }

    /// Rows `indices` of every line plus the matching labels, in order.
    /// Indices may repeat, so this serves both batching and bootstrap draws.
    pub fn gather(&self, indices: &[usize]) -> Result<(Vec<Tensor<F>>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("batch indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Dataset(format!(
                "index {bad} out of range for {} samples",
                self.len()
            )));
        }
        let mut lines = Vec::with_capacity(self.lines.len());
        for t in &self.lines {
            let row = t.numel() / t.shape()[0];
            let mut data = Vec::with_capacity(indices.len() * row);
            for &i in indices {
                data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = indices.len();
            lines.push(Tensor::new(shape, data)?);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((lines, labels))
    }
}

/// One manifest split loaded into memory, record ids kept aligned with rows.
#[derive(Debug, Clone)]
pub struct SplitData<F: Scalar> {
    pub ids: Vec<String>,
    pub dataset: Dataset<F>,
}

/// Read every image of one split, resize to `input_size`, and normalize
/// into stacked line tensors. Record order follows the manifest.
pub fn load_split<F: Scalar>(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    split: Split,
    input_size: usize,
) -> Result<SplitData<F>> {
    let records: Vec<_> = manifest.records_in(split).collect();
    let first = records
        .first()
        .ok_or_else(|| Error::Dataset(format!("split '{split}' has no records")))?;
    let num_lines = first.paths.len();
    let row = input_size * input_size;
    let mut ids = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut data: Vec<Vec<F>> = vec![Vec::with_capacity(records.len() * row); num_lines];
    for r in &records {
        ids.push(r.id.clone());
        labels.push(r.label);
        for (l, p) in r.paths.iter().enumerate() {
            let img = read_pgm(&resolve_record_path(manifest_path, p))?;
            let img = resize(&img, input_size)?;
            data[l].extend(img.pixels().iter().map(|&b| F::from_f64(b as f64 / 255.0)));
        }
    }
    let n = records.len();
    let lines = data
        .into_iter()
        .map(|d| Tensor::new(vec![n, 1, input_size, input_size], d))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitData {
        ids,
        dataset: Dataset::new(lines, labels)?,
    })
}
