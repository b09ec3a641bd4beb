//! Image IO: 16-bit PNG for viewable exports, PFM for lossless float
//! round-trips, 8-bit gray PNG for masks.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::scene::ImageBuffer;

use super::IoError;

pub fn write_rgb16_png(path: &Path, img: &ImageBuffer) -> Result<(), IoError> {
    assert_eq!(img.channels, 3);
    let mut buf: Vec<u16> = Vec::with_capacity(img.data.len());
    for v in &img.data {
        buf.push((v.clamp(0.0, 1.0) * 65535.0).round() as u16);
    }
    let out: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_vec(img.width as u32, img.height as u32, buf)
            .expect("buffer size matches dimensions");
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn write_rgb8_png(path: &Path, img: &ImageBuffer) -> Result<(), IoError> {
    assert_eq!(img.channels, 3);
    let buf: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let out: image::RgbImage =
        image::ImageBuffer::from_vec(img.width as u32, img.height as u32, buf).expect("size");
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// 16-bit grayscale PNG; values are clamped to [0, 1] after dividing by
/// `scale` (use e.g. the max depth).
pub fn write_gray16_png(path: &Path, img: &ImageBuffer, scale: f64) -> Result<(), IoError> {
    assert_eq!(img.channels, 1);
    let s = if scale > 0.0 { scale } else { 1.0 };
    let buf: Vec<u16> = img.data.iter().map(|v| ((v / s).clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let out: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_vec(img.width as u32, img.height as u32, buf).expect("size");
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_rgb_png(path: &Path) -> Result<ImageBuffer, IoError> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageRgb16(b) => b.into_vec().iter().map(|&v| v as f64 / 65535.0).collect(),
        other => other.to_rgb16().into_vec().iter().map(|&v| v as f64 / 65535.0).collect(),
    };
    Ok(ImageBuffer::from_vec(w, h, 3, data))
}

/// Label mask PNG: 0 = background, `255 (label+1) / n_classes` per class.
pub fn write_mask_png(path: &Path, labels: &[u8], width: usize, height: usize, n_classes: usize) -> Result<(), IoError> {
    assert_eq!(labels.len(), width * height);
    let buf: Vec<u8> = labels
        .iter()
        .map(|&l| if l == 0 { 0 } else { ((255.0 * l as f64 / n_classes as f64).round() as u32).min(255) as u8 })
        .collect();
    let out: image::GrayImage = image::ImageBuffer::from_vec(width as u32, height as u32, buf).expect("size");
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Decode a label mask into per-class binary images.
pub fn read_mask_png(path: &Path, n_classes: usize) -> Result<Vec<ImageBuffer>, IoError> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![ImageBuffer::new(w, h, 1); n_classes];
    for (i, p) in img.into_vec().iter().enumerate() {
        if *p == 0 {
            continue;
        }
        let label = (*p as f64 * n_classes as f64 / 255.0).round() as usize;
        if label >= 1 && label <= n_classes {
            out[label - 1].data[i] = 1.0;
        }
    }
    Ok(out)
}

/// Portable float map, color variant, little-endian. Rows are written
/// bottom-up per the format spec.
pub fn write_pfm(path: &Path, img: &ImageBuffer) -> Result<(), IoError> {
    assert_eq!(img.channels, 3);
    let mut f = fs::File::create(path)?;
    write!(f, "PF\n{} {}\n-1.0\n", img.width, img.height)?;
    let mut bytes = Vec::with_capacity(img.n_pixels() * 12);
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for c in 0..3 {
                bytes.extend_from_slice(&(img.get(x, y, c) as f32).to_le_bytes());
            }
        }
    }
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ImageBuffer, IoError> {
    let data = fs::read(path)?;
    let header_err = |d: &str| IoError::Malformed { what: "pfm", detail: d.into() };
    // Three whitespace-terminated tokens: magic, "w h", scale.
    let mut pos = 0usize;
    let token = |data: &[u8], pos: &mut usize| -> Result<String, IoError> {
        let start = *pos;
        while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let t = String::from_utf8_lossy(&data[start..*pos]).into_owned();
        if *pos < data.len() {
            *pos += 1;
        }
        Ok(t)
    };
    let magic = token(&data, &mut pos)?;
    if magic != "PF" {
        return Err(header_err("not a color PFM"));
    }
    let w: usize = token(&data, &mut pos)?.parse().map_err(|_| header_err("bad width"))?;
    let h: usize = token(&data, &mut pos)?.parse().map_err(|_| header_err("bad height"))?;
    let scale: f64 = token(&data, &mut pos)?.parse().map_err(|_| header_err("bad scale"))?;
    let little = scale < 0.0;
    let need = w * h * 3 * 4;
    if data.len() < pos + need {
        return Err(header_err("truncated payload"));
    }
    let mut img = ImageBuffer::new(w, h, 3);
    let mut off = pos;
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..3 {
                let raw: [u8; 4] = data[off..off + 4].try_into().unwrap();
                let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
                img.set(x, y, c, v as f64);
                off += 4;
            }
        }
    }
    Ok(img)
}
