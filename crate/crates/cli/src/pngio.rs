//! PNG image IO. Files are 8-bit; quantization rounds half to even so that
//! golden files are stable across platforms.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::ColorType;
use tarpro_core::image::{ColorSpace, Image};
use tarpro_core::tensor::Tensor;

pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

pub fn save_png(path: &Path, img: &Image<f32>) -> Result<()> {
    let (c, h, w) = img.shape();
    let data = img.data().data();
    let mut bytes = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes.push(quantize_u8(data[ch * h * w + y * w + x]));
            }
        }
    }
    let color = match img.color_space() {
        ColorSpace::Rgb => ColorType::Rgb8,
        ColorSpace::Grayscale => ColorType::L8,
    };
    image::save_buffer(path, &bytes, w as u32, h as u32, color)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn load_png(path: &Path) -> Result<Image<f32>> {
    let dynimg = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (color_space, c, raw): (ColorSpace, usize, Vec<u8>) = match dynimg {
        image::DynamicImage::ImageLuma8(buf) => (ColorSpace::Grayscale, 1, buf.into_raw()),
        image::DynamicImage::ImageRgb8(buf) => (ColorSpace::Rgb, 3, buf.into_raw()),
        other => {
            let buf = other.to_rgb8();
            (ColorSpace::Rgb, 3, buf.into_raw())
        }
    };
    if raw.len() != c * h * w {
        bail!("unexpected png payload size in {}", path.display());
    }
    let mut data = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[ch * h * w + y * w + x] = raw[(y * w + x) * c + ch] as f32 / 255.0;
            }
        }
    }
    Image::new(Tensor::from_vec(&[c, h, w], data)?, color_space).map_err(Into::into)
}
