//! Binary PGM (P5) reading and writing, maxval fixed at 255.
//!
//! Emitted header is exactly `P5\n{width} {height}\n255\n` followed by
//! row-major raw pixel bytes, so identical images produce identical files.
//! The reader additionally tolerates arbitrary whitespace and `#` comments
//! between header tokens, as other producers emit those.

use std::io::Write as _;
use std::path::Path;

use super::image::GrayscaleImage;
use crate::error::{Error, Result};

pub fn write_pgm(img: &GrayscaleImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(img.pixels().len() + 32);
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height()).expect("vec write");
    out.extend_from_slice(img.pixels());
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayscaleImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|detail| Error::Image(format!("{}: {detail}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayscaleImage, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut pos = 2;
    let width = next_header_value(bytes, &mut pos)?;
    let height = next_header_value(bytes, &mut pos)?;
    let maxval = next_header_value(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator before pixel data".into());
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| "image extent overflows".to_string())?;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(format!(
            "expected {expected} pixel bytes for {width}x{height}, found {}",
            raster.len()
        ));
    }
    GrayscaleImage::new(width, height, raster.to_vec()).map_err(|e| e.to_string())
}

/// Parse the next unsigned decimal header token, skipping whitespace and
/// `#` comments that run to end of line.
fn next_header_value(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_digit() => break,
            Some(b) => return Err(format!("unexpected byte {b:#04x} in header")),
            None => return Err("truncated header".into()),
        }
    }
    let mut value: usize = 0;
    while let Some(b) = bytes.get(*pos) {
        if !b.is_ascii_digit() {
            break;
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as usize))
            .ok_or_else(|| "header value overflows".to_string())?;
        *pos += 1;
    }
    Ok(value)
}
