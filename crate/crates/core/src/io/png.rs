//! 8-bit PNG images and binary masks.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use nalgebra::Vector3;

use crate::buffer::{ColorImage, Mask, Plane};
use crate::error::{Error, Result};

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, img: &ColorImage) -> Result<()> {
    super::create_parent(path)?;
    let mut out = RgbImage::new(img.width as u32, img.height as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let c = img.get(x as usize, y as usize);
        *px = Rgb([to_u8(c.x), to_u8(c.y), to_u8(c.z)]);
    }
    out.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_rgb(path: &Path) -> Result<ColorImage> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(ColorImage::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x as u32, y as u32);
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0
    }))
}

pub fn write_gray(path: &Path, plane: &Plane) -> Result<()> {
    super::create_parent(path)?;
    let mut out = GrayImage::new(plane.width as u32, plane.height as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        *px = Luma([to_u8(plane.get(x as usize, y as usize))]);
    }
    out.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let plane = Plane {
        width: mask.width,
        height: mask.height,
        data: mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    };
    write_gray(path, &plane)
}

/// Reads a 0/255 mask; any value ≥ 128 counts as set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_luma8();
    Ok(Mask {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.pixels().map(|p| p[0] >= 128).collect(),
    })
}
