//! Linear float images, file export and comparison metrics.
//!
//! Every exported image gets a float sidecar next to it (same stem,
//! extension `f32`): raw little-endian binary32 rgb, row-major, no header.
//! Dimensions come from the sibling PPM or PNG header.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::math::Rgb;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Rgb) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        Rgb::from_f32(self.data[y * self.width + x])
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.data[y * self.width + x] = c.to_f32();
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height {
            return Err(Error::input("image buffer does not match its dimensions"));
        }
        if self
            .data
            .iter()
            .flatten()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::input("image values must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|&p| Rgb::from_f32(p).luminance())
            .collect()
    }

    pub fn mean_luminance(&self) -> f64 {
        self.luminance().iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// 8-bit quantization, optionally gamma-2.2 encoded.
pub fn to_byte(v: f32, gamma: bool) -> u8 {
    let v = (v as f64).clamp(0.0, 1.0);
    let v = if gamma { v.powf(1.0 / 2.2) } else { v };
    (v * 255.0).round() as u8
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("f32")
}

fn bytes(img: &Image, gamma: bool) -> Vec<u8> {
    img.data
        .iter()
        .flatten()
        .map(|&v| to_byte(v, gamma))
        .collect()
}

/// Writes the image and its float sidecar.
pub fn write_image(img: &Image, path: &Path, format: ImageFormat, gamma: bool) -> Result<()> {
    img.validate()?;
    match format {
        ImageFormat::Ppm => {
            let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
            out.extend(bytes(img, gamma));
            fs::write(path, out).map_err(|e| Error::io(path, e))?;
        }
        ImageFormat::Png => {
            image::save_buffer_with_format(
                path,
                &bytes(img, gamma),
                img.width as u32,
                img.height as u32,
                image::ExtendedColorType::Rgb8,
                image::ImageFormat::Png,
            )
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::format("png", other.to_string()),
            })?;
        }
    }
    let side = sidecar_path(path);
    let mut f = fs::File::create(&side).map_err(|e| Error::io(&side, e))?;
    let raw: Vec<u8> = img
        .data
        .iter()
        .flatten()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    f.write_all(&raw).map_err(|e| Error::io(&side, e))
}

fn ppm_dims(bytes: &[u8]) -> Result<(usize, usize)> {
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(64)]);
    let mut fields = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    let bad = || Error::format("ppm header", "expected P6 <width> <height> 255");
    if fields.next() != Some("P6") {
        return Err(bad());
    }
    let w = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let h = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    Ok((w, h))
}

/// Reads the float sidecar of an image written by [`write_image`]; `path`
/// names the PPM or PNG file.
pub fn read_image(path: &Path) -> Result<Image> {
    let (width, height) = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => {
            let (w, h) = image::image_dimensions(path).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::format("png", other.to_string()),
            })?;
            (w as usize, h as usize)
        }
        _ => ppm_dims(&fs::read(path).map_err(|e| Error::io(path, e))?)?,
    };
    let side = sidecar_path(path);
    let raw = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    if raw.len() != width * height * 12 {
        return Err(Error::format(
            "float sidecar",
            format!("{} bytes for a {width}x{height} image", raw.len()),
        ));
    }
    let data = raw
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().unwrap());
            [f(0), f(4), f(8)]
        })
        .collect();
    let img = Image {
        width,
        height,
        data,
    };
    img.validate()?;
    Ok(img)
}

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::input(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.data.is_empty() {
        return Err(Error::input("images are empty"));
    }
    Ok(())
}

/// Mean squared channel difference.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .flatten()
        .zip(b.data.iter().flatten())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / (3 * a.data.len()) as f64)
}

/// Per-pixel relative squared error `(a-b)^2 / (b^2 + 0.01)`, averaged over
/// the channels; `b` is the reference.
pub fn rse(a: &Image, b: &Image) -> Result<Vec<f64>> {
    same_dims(a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| {
            (0..3)
                .map(|c| {
                    let (x, y) = (p[c] as f64, q[c] as f64);
                    (x - y).powi(2) / (y * y + 0.01)
                })
                .sum::<f64>()
                / 3.0
        })
        .collect())
}

pub fn mean_rse(a: &Image, b: &Image) -> Result<f64> {
    let m = rse(a, b)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

const SSIM_RADIUS: isize = 5;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Single-scale SSIM of the luminance channels with an 11x11 Gaussian
/// window (sigma 1.5). At the borders the window is truncated to the image
/// and renormalized.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width as isize, a.height as isize);
    let la = a.luminance();
    let lb = b.luminance();
    let kernel: Vec<f64> = (-SSIM_RADIUS..=SSIM_RADIUS)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (mut sw, mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -SSIM_RADIUS..=SSIM_RADIUS {
                let yy = y + dy;
                if yy < 0 || yy >= h {
                    continue;
                }
                for dx in -SSIM_RADIUS..=SSIM_RADIUS {
                    let xx = x + dx;
                    if xx < 0 || xx >= w {
                        continue;
                    }
                    let k =
                        kernel[(dy + SSIM_RADIUS) as usize] * kernel[(dx + SSIM_RADIUS) as usize];
                    let i = (yy * w + xx) as usize;
                    let (p, q) = (la[i], lb[i]);
                    sw += k;
                    ma += k * p;
                    mb += k * q;
                    aa += k * p * p;
                    bb += k * q * q;
                    ab += k * p * q;
                }
            }
            let (ma, mb) = (ma / sw, mb / sw);
            let va = (aa / sw - ma * ma).max(0.0);
            let vb = (bb / sw - mb * mb).max(0.0);
            let cov = ab / sw - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    Ok(total / (w * h) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(seed: u32) -> Image {
        Image::from_fn(4, 4, |x, y| {
            let v = ((x as u32 * 7 + y as u32 * 13 + seed * 5) % 11) as f64 / 10.0;
            Rgb::new(v, 0.5 * v, 1.0 - v)
        })
    }

    #[test]
    fn ppm_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ppm");
        let img = Image::from_fn(1, 1, |_, _| Rgb::splat(1.0));
        write_image(&img, &path, ImageFormat::Ppm, false).unwrap();
        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[raw.len() - 3..], &[255, 255, 255]);
        assert!(raw.starts_with(b"P6\n1 1\n255\n"));
        assert_eq!(to_byte(0.5, true), 186);
        assert_eq!(to_byte(0.5, false), 128);
    }

    #[test]
    fn sidecar_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 3, |x, y| Rgb::new(x as f64 / 3.0, y as f64 * 1.7, 1e-7));
        for format in [ImageFormat::Ppm, ImageFormat::Png] {
            let path = dir.path().join(format!("a.{}", format.extension()));
            write_image(&img, &path, format, true).unwrap();
            assert_eq!(read_image(&path).unwrap(), img);
        }
    }

    #[test]
    fn metric_basics() {
        let a = pattern(1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let zero = Image::new(2, 2);
        let one = Image::from_fn(2, 2, |_, _| Rgb::splat(1.0));
        assert_eq!(mse(&zero, &one).unwrap(), 1.0);
        assert!(mse(&a, &zero).is_err());
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let (a, b) = (pattern(1), pattern(2));
        let ab = ssim(&a, &b).unwrap();
        assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
    }
}
