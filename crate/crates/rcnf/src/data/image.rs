//! Byte-stream to grayscale image conversion, bilinear resize, and
//! normalization.
//!
//! A binary file is read in 256-byte chunks; each chunk is one image row
//! with byte value = pixel value. The final partial chunk, if any, is
//! zero-padded so no byte is dropped. Text (assembly listing) files go
//! through the identical procedure on their raw bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Fixed row width of freshly converted images.
pub const CONVERSION_WIDTH: usize = 256;

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayscaleImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayscaleImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!(
                "degenerate image extent {width}x{height}"
            )));
        }
        if width * height != pixels.len() {
            return Err(Error::Image(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayscaleImage { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Lay a byte stream out as a 256-wide image, one chunk per row, final
/// partial row zero-padded.
pub fn bytes_to_image(bytes: &[u8]) -> Result<GrayscaleImage> {
    if bytes.is_empty() {
        return Err(Error::EmptyInput("byte stream"));
    }
    let height = bytes.len().div_ceil(CONVERSION_WIDTH);
    let mut pixels = vec![0u8; height * CONVERSION_WIDTH];
    pixels[..bytes.len()].copy_from_slice(bytes);
    GrayscaleImage::new(CONVERSION_WIDTH, height, pixels)
}

/// Read a file and convert it.
pub fn file_to_image(path: &Path) -> Result<GrayscaleImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Image(format!("{}: empty file", path.display())));
    }
    bytes_to_image(&bytes)
}

/// Bilinear resize to a square target. Sample positions use half-pixel
/// centers; results are rounded half-up and clamped to [0,255].
pub fn resize(img: &GrayscaleImage, target: usize) -> Result<GrayscaleImage> {
    if target == 0 {
        return Err(Error::Image("resize target must be positive".into()));
    }
    if img.width == target && img.height == target {
        return Ok(img.clone());
    }
    let scale_y = img.height as f64 / target as f64;
    let scale_x = img.width as f64 / target as f64;
    let mut pixels = Vec::with_capacity(target * target);
    for r in 0..target {
        let sy = ((r as f64 + 0.5) * scale_y - 0.5).max(0.0);
        let y0 = (sy.floor() as usize).min(img.height - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = sy - y0 as f64;
        for c in 0..target {
            let sx = ((c as f64 + 0.5) * scale_x - 0.5).max(0.0);
            let x0 = (sx.floor() as usize).min(img.width - 1);
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = sx - x0 as f64;
            let top = (1.0 - wx) * img.pixel(y0, x0) as f64 + wx * img.pixel(y0, x1) as f64;
            let bottom = (1.0 - wx) * img.pixel(y1, x0) as f64 + wx * img.pixel(y1, x1) as f64;
            let value = (1.0 - wy) * top + wy * bottom;
            pixels.push((value + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    GrayscaleImage::new(target, target, pixels)
}

/// Pixels scaled into [0,1] as a [1,H,W] tensor.
pub fn normalize<F: Scalar>(img: &GrayscaleImage) -> Tensor<F> {
    let data = img
        .pixels
        .iter()
        .map(|&p| F::from_f64(p as f64 / 255.0))
        .collect();
    Tensor::new(vec![1, img.height, img.width], data).expect("image extents are positive")
}

/// Stack same-sized images into one [N,1,H,W] batch tensor.
pub fn stack_images<F: Scalar>(images: &[GrayscaleImage]) -> Result<Tensor<F>> {
    let first = images.first().ok_or(Error::EmptyInput("images"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for (i, img) in images.iter().enumerate() {
        if img.width != w || img.height != h {
            return Err(Error::Image(format!(
                "image {i} is {}x{}, expected {w}x{h}",
                img.width, img.height
            )));
        }
        data.extend(img.pixels.iter().map(|&p| F::from_f64(p as f64 / 255.0)));
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_full_chunks_lay_out_as_two_identity_rows() {
        let bytes: Vec<u8> = (0..=255u8).chain(0..=255u8).collect();
        let img = bytes_to_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (256, 2));
        for r in 0..2 {
            for c in 0..256 {
                assert_eq!(img.pixel(r, c), c as u8);
            }
        }
    }

    #[test]
    fn partial_final_chunk_is_zero_padded() {
        // Reference loop: walk the byte stream once and compare every pixel.
        let bytes: Vec<u8> = (0..300u16).map(|i| (i % 251) as u8 + 1).collect();
        let img = bytes_to_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (256, 2));
        for (i, &b) in bytes.iter().enumerate() {
            assert_eq!(img.pixels()[i], b);
        }
        for i in bytes.len()..512 {
            assert_eq!(img.pixels()[i], 0);
        }
        // Second row: 44 payload bytes then 212 zeros.
        assert_ne!(img.pixel(1, 43), 0);
        assert_eq!(img.pixel(1, 44), 0);
    }

    #[test]
    fn single_chunk_of_ff_is_a_white_row() {
        let img = bytes_to_image(&[0xFF; 256]).unwrap();
        assert_eq!((img.width(), img.height()), (256, 1));
        assert!(img.pixels().iter().all(|&p| p == 255));
    }

    #[test]
    fn empty_stream_is_rejected() {
        assert!(matches!(bytes_to_image(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn conversion_is_injective_on_full_chunk_files() {
        // Pixel sequence equals byte sequence when length is a multiple of
        // 256, so distinct inputs give distinct images.
        let a: Vec<u8> = (0..512u16).map(|i| (i / 2) as u8).collect();
        let mut b = a.clone();
        b[300] ^= 1;
        assert_ne!(bytes_to_image(&a).unwrap(), bytes_to_image(&b).unwrap());
    }

    #[test]
    fn resizing_a_constant_image_changes_nothing_but_the_extent() {
        let img = GrayscaleImage::new(8, 3, vec![77; 24]).unwrap();
        for target in [1, 4, 16] {
            let out = resize(&img, target).unwrap();
            assert_eq!((out.width(), out.height()), (target, target));
            assert!(out.pixels().iter().all(|&p| p == 77));
        }
    }

    #[test]
    fn checkerboard_upscale_matches_hand_computed_weights() {
        let img = GrayscaleImage::new(2, 2, vec![0, 255, 255, 0]).unwrap();
        let out = resize(&img, 4).unwrap();
        // Corners hit the clamped sample positions, reproducing the nearest
        // source pixels.
        assert_eq!(out.pixel(0, 0), 0);
        assert_eq!(out.pixel(0, 3), 255);
        assert_eq!(out.pixel(3, 0), 255);
        assert_eq!(out.pixel(3, 3), 0);
        // Interior: weights (0.75, 0.25) per axis give
        // 0.75·0.25·255 + 0.25·0.75·255 = 95.625, rounded half-up to 96.
        assert_eq!(out.pixel(1, 1), 96);
        assert_eq!(out.pixel(2, 2), 96);
    }

    #[test]
    fn same_size_resize_is_pixel_exact() {
        let pixels: Vec<u8> = (0..36).map(|i| (i * 7) as u8).collect();
        let img = GrayscaleImage::new(6, 6, pixels).unwrap();
        assert_eq!(resize(&img, 6).unwrap(), img);
    }

    #[test]
    fn normalization_maps_the_endpoints_and_round_trips() {
        let img = GrayscaleImage::new(3, 1, vec![0, 128, 255]).unwrap();
        let t: Tensor<f64> = normalize(&img);
        assert_eq!(t.shape(), &[1, 1, 3]);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[2], 1.0);
        for (i, &v) in t.data().iter().enumerate() {
            let back = v * 255.0;
            assert!((back - img.pixels()[i] as f64).abs() < 0.5);
        }
    }

    #[test]
    fn stacking_requires_matching_extents() {
        let a = GrayscaleImage::new(4, 4, vec![1; 16]).unwrap();
        let b = GrayscaleImage::new(4, 4, vec![2; 16]).unwrap();
        let t: Tensor<f32> = stack_images(&[a.clone(), b]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 4, 4]);

        let c = GrayscaleImage::new(2, 8, vec![3; 16]).unwrap();
        assert!(stack_images::<f32>(&[a, c]).is_err());
    }
}
