//! Raster and raw-field file I/O.
//!
//! Images: 8/16-bit PGM (P2 and P5) and PNG. Samples are divided by the
//! maximum sample value of the format; color PNGs are reduced to luminance
//! `0.2126 R + 0.7152 G + 0.0722 B`. Saving clamps to `[0, 1]` and writes
//! 8-bit samples.
//!
//! Fields: a raw little-endian `f64` raster at `path`, plus a JSON sidecar at
//! `path.json` carrying the grid size and a free-form description.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        return parse_pgm(&bytes).map_err(|reason| Error::Corrupt { path: path.into(), reason });
    }
    let format = image::guess_format(&bytes)
        .map_err(|_| Error::UnsupportedFormat(path.display().to_string()))?;
    if format != ImageFormat::Png && format != ImageFormat::Pnm {
        return Err(Error::UnsupportedFormat(format!("{format:?}")));
    }
    let dynimg = image::load_from_memory_with_format(&bytes, format)?;
    Ok(from_dynamic(&dynimg))
}

fn from_dynamic(img: &DynamicImage) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(b) => b.pixels().map(|p| luma(p.0, 255.0)).collect(),
        DynamicImage::ImageRgba8(b) => b.pixels().map(|p| luma([p[0], p[1], p[2]], 255.0)).collect(),
        DynamicImage::ImageRgb16(b) => b.pixels().map(|p| luma(p.0, 65535.0)).collect(),
        DynamicImage::ImageRgba16(b) => {
            b.pixels().map(|p| luma([p[0], p[1], p[2]], 65535.0)).collect()
        }
        other => other.to_rgb32f().pixels().map(|p| luma(p.0, 1.0)).collect(),
    };
    Image::from_raw(h, w, data)
}

fn luma<T: Into<f64> + Copy>(rgb: [T; 3], max: f64) -> f64 {
    (LUMA[0] * rgb[0].into() + LUMA[1] * rgb[1].into() + LUMA[2] * rgb[2].into()) / max
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let binary = bytes.starts_with(b"P5");
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        *slot = next_token(bytes, &mut pos)?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("bad maxval {maxval}"));
    }
    let n = width.checked_mul(height).ok_or("dimension overflow")?;
    let scale = maxval as f64;
    let data: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let wide = maxval > 255;
        let need = n.checked_mul(if wide { 2 } else { 1 }).ok_or("dimension overflow")?;
        let raster = bytes.get(pos..pos + need).ok_or("truncated raster")?;
        if wide {
            raster
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / scale)
                .collect()
        } else {
            raster.iter().map(|&b| b as f64 / scale).collect()
        }
    } else {
        (0..n)
            .map(|_| next_token(bytes, &mut pos).map(|v| v as f64 / scale))
            .collect::<std::result::Result<_, _>>()?
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err("sample exceeds maxval".into());
    }
    Ok(Image::from_raw(height, width, data))
}

fn next_token(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("unexpected end of header".into()),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("expected a number at byte {start}"))
}

/// Writes an 8-bit image. The format follows the extension (`.pgm` or `.png`).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    match extension(path).as_deref() {
        Some("pgm") => {
            let mut out = format!("P5\n{} {}\n255\n", img.cols(), img.rows()).into_bytes();
            out.extend_from_slice(&bytes);
            fs::write(path, out)?;
        }
        Some("png") => {
            let buf = image::GrayImage::from_raw(img.cols() as u32, img.rows() as u32, bytes)
                .ok_or_else(|| Error::InvalidImage("raster size".into()))?;
            buf.save_with_format(path, ImageFormat::Png)?;
        }
        _ => return Err(Error::UnsupportedFormat(path.display().to_string())),
    }
    Ok(())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub n1: usize,
    pub n2: usize,
    pub kind: String,
    #[serde(default)]
    pub scale_notes: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

impl FieldHeader {
    pub fn new(n1: usize, n2: usize, kind: impl Into<String>, scale_notes: impl Into<String>) -> Self {
        Self {
            n1,
            n2,
            kind: kind.into(),
            scale_notes: scale_notes.into(),
            metadata: serde_json::Value::Null,
        }
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = metadata;
        self
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_field(path: impl AsRef<Path>, values: &[f64], header: &FieldHeader) -> Result<()> {
    let path = path.as_ref();
    if header.n1.checked_mul(header.n2) != Some(values.len()) {
        return Err(Error::InvalidParameter(format!(
            "header {}x{} does not match {} values",
            header.n1,
            header.n2,
            values.len()
        )));
    }
    let raw: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, raw)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(header)?)?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<(Vec<f64>, FieldHeader)> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let header: FieldHeader = serde_json::from_slice(&fs::read(&sidecar)?)?;
    let raw = fs::read(path)?;
    let expected = header
        .n1
        .checked_mul(header.n2)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Corrupt { path: sidecar.clone(), reason: "dimension overflow".into() })?;
    if raw.len() != expected {
        return Err(Error::Corrupt {
            path: path.into(),
            reason: format!("raster has {} bytes, header implies {expected}", raw.len()),
        });
    }
    let values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((values, header))
}

pub fn save_image_field(
    path: impl AsRef<Path>,
    img: &Image,
    kind: &str,
    scale_notes: &str,
    metadata: serde_json::Value,
) -> Result<()> {
    let header = FieldHeader::new(img.rows(), img.cols(), kind, scale_notes).with_metadata(metadata);
    save_field(path, img.data(), &header)
}

pub fn load_image_field(path: impl AsRef<Path>) -> Result<(Image, FieldHeader)> {
    let (values, header) = load_field(path)?;
    let img = Image::new(header.n1, header.n2, values)?;
    Ok((img, header))
}

/// Loads either a raw field (when a sidecar exists) or a raster image.
pub fn load_any(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if sidecar_path(path).exists() {
        Ok(load_image_field(path)?.0)
    } else {
        load_image(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_fixture_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 204, 255]);
        fs::write(&p, bytes).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.shape(), (2, 2));
        assert_eq!(img.data(), &[0.0, 0.2, 0.8, 1.0]);
    }

    #[test]
    fn ascii_and_sixteen_bit_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, "P2\n3 1\n4\n0 2 4\n").unwrap();
        assert_eq!(load_image(&p).unwrap().data(), &[0.0, 0.5, 1.0]);

        let mut bytes = b"P5 1 2 1000\n".to_vec();
        bytes.extend_from_slice(&250u16.to_be_bytes());
        bytes.extend_from_slice(&1000u16.to_be_bytes());
        fs::write(&p, bytes).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.shape(), (2, 1));
        assert_eq!(img.data(), &[0.25, 1.0]);
    }

    #[test]
    fn truncated_pgm_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        fs::write(&p, b"P5\n4 4\n255\n\x01\x02").unwrap();
        assert!(matches!(load_image(&p), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn quantized_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 5, |r, c| ((r * 5 + c) as f64 * 0.029).fract());
        for name in ["a.png", "a.pgm"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert_eq!(back.shape(), img.shape());
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn white_png_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        image::RgbImage::from_pixel(4, 3, image::Rgb([255, 255, 255])).save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.shape(), (3, 4));
        assert!(img.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn color_png_uses_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        image::RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0])).save(&p).unwrap();
        assert!((load_image(&p).unwrap().data()[0] - 0.2126).abs() < 1e-12);
    }

    #[test]
    fn save_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        save_image(&Image::new(1, 2, vec![-0.3, 1.7]).unwrap(), &p).unwrap();
        assert_eq!(load_image(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn unsupported_extension() {
        let dir = tempfile::tempdir().unwrap();
        let err = save_image(&Image::zeros(2, 2), dir.path().join("a.bmp"));
        assert!(matches!(err, Err(Error::UnsupportedFormat(_))));
        fs::write(dir.path().join("junk"), b"not an image").unwrap();
        assert!(load_image(dir.path().join("junk")).is_err());
    }

    #[test]
    fn field_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("beta.f64");
        let values: Vec<f64> = (0..256).map(|i| (i as f64 * 1.234567).sin() * 1e3).collect();
        let header = FieldHeader::new(16, 16, "beta", "natural log of lambda")
            .with_metadata(serde_json::json!({"seed": 4}));
        save_field(&p, &values, &header).unwrap();
        let (back, h) = load_field(&p).unwrap();
        assert_eq!(h, header);
        assert!(values.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn field_missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        fs::write(&p, [0u8; 32]).unwrap();
        assert!(load_field(&p).is_err());
    }

    #[test]
    fn field_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        save_field(&p, &[1.0; 4], &FieldHeader::new(2, 2, "x", "")).unwrap();
        fs::write(&p, [0u8; 24]).unwrap();
        assert!(matches!(load_field(&p), Err(Error::Corrupt { .. })));
        assert!(save_field(&p, &[1.0; 3], &FieldHeader::new(2, 2, "x", "")).is_err());
    }
}
