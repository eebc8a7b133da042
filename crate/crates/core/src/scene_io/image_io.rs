use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::SceneIoError;
use crate::image::Image;

fn decode(path: &Path) -> Result<image::DynamicImage, SceneIoError> {
    if !path.exists() {
        return Err(SceneIoError::io(
            path,
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    image::open(path).map_err(|e| SceneIoError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Decodes an 8-bit or 16-bit image to RGB in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Image, SceneIoError> {
    let rgb = decode(path)?.into_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|v| f64::from(v) / 255.0)
        .collect();
    Ok(Image::from_data(w as usize, h as usize, 3, data).expect("decoded buffer matches its size"))
}

/// Decodes a mask and binarizes it: values above 127 become 1.
pub fn load_mask(path: &Path) -> Result<Image, SceneIoError> {
    let gray = decode(path)?.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray
        .into_raw()
        .into_iter()
        .map(|v| if v > 127 { 1.0 } else { 0.0 })
        .collect();
    Ok(Image::from_data(w as usize, h as usize, 1, data).expect("decoded buffer matches its size"))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a one- or three-channel image as an 8-bit PNG.
pub fn save_png(path: &Path, img: &Image) -> Result<(), SceneIoError> {
    let (w, h) = (img.width as u32, img.height as u32);
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let result = match img.channels {
        1 => {
            let buf: GrayImage =
                ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).expect("size checked");
            buf.save(path)
        }
        3 => {
            let buf: RgbImage =
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).expect("size checked");
            buf.save(path)
        }
        c => {
            return Err(SceneIoError::Image {
                path: path.to_path_buf(),
                message: format!("cannot write {c}-channel PNG"),
            })
        }
    };
    result.map_err(|e| SceneIoError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a little-endian `f32` array in NPY format with shape `(H, W, C)`.
pub fn save_npy(path: &Path, img: &Image) -> Result<(), SceneIoError> {
    let file = fs::File::create(path).map_err(|e| SceneIoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
        img.height, img.width, img.channels
    );
    // magic (6) + version (2) + header length (2) + header, padded to 64 bytes
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        w.write_all(b"\x93NUMPY\x01\x00")?;
        w.write_all(&(header.len() as u16).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        for &v in &img.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| SceneIoError::io(path, e))
}

/// Averages non-overlapping `factor × factor` blocks. Trailing rows and
/// columns that do not fill a block are dropped.
pub fn box_downsample(img: &Image, factor: u32) -> Image {
    let f = factor.max(1) as usize;
    if f == 1 {
        return img.clone();
    }
    let (w, h, c) = (img.width / f, img.height / f, img.channels);
    let mut out = Image::new(w, h, c);
    let norm = 1.0 / (f * f) as f64;
    for y in 0..h {
        for x in 0..w {
            let dst = out.pixel_mut(x, y);
            for dy in 0..f {
                for dx in 0..f {
                    let src = img.pixel(x * f + dx, y * f + dy);
                    for k in 0..c {
                        dst[k] += src[k];
                    }
                }
            }
            for v in dst.iter_mut() {
                *v *= norm;
            }
        }
    }
    out
}
