//! Data pipeline: binary files to grayscale images, on-disk PGM storage,
//! stratified split manifests, bootstrap draws, and in-memory datasets.

mod bootstrap;
mod dataset;
mod image;
mod manifest;
mod pgm;

pub use bootstrap::{bootstrap_indices, bootstrap_resample};
pub use dataset::{load_split, Dataset, SplitData};
pub use image::{
    bytes_to_image, file_to_image, normalize, resize, stack_images, GrayscaleImage,
    CONVERSION_WIDTH,
};
pub use manifest::{
    classes_path, read_manifest, resolve_record_path, stratified_split, write_manifest,
    DatasetManifest, SampleRecord, SampleSource, Split, MANIFEST_HEADER,
};
pub use pgm::{read_pgm, write_pgm};
