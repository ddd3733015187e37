//! PNG overlay of predicted contours on an input image (debug output).

use std::path::Path;

use attnmesh_core::{LandmarkSet, Tensor, Topology};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Pixels per input pixel in the overlay.
pub const UPSCALE: u32 = 4;

fn to_rgb(image: &Tensor<f32>) -> RgbImage {
    let s = image.shape()[1];
    let d = image.data();
    let side = s as u32 * UPSCALE;
    RgbImage::from_fn(side, side, |x, y| {
        let (i, j) = ((y / UPSCALE) as usize, (x / UPSCALE) as usize);
        let px = |c: usize| (d[c * s * s + i * s + j].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

fn line(img: &mut RgbImage, a: [f32; 2], b: [f32; 2], color: Rgb<u8>) {
    let scale = (img.width() - 1) as f32;
    let (x0, y0) = (a[0] * scale, a[1] * scale);
    let (x1, y1) = (b[0] * scale, b[1] * scale);
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f32 / steps as f32;
        let (x, y) = ((x0 + t * (x1 - x0)).round(), (y0 + t * (y1 - y0)).round());
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Draws every topology chain (closed chains wrap) and the iris points.
pub fn render_overlay(image: &Tensor<f32>, mesh: &LandmarkSet, topo: &Topology) -> Result<RgbImage> {
    if mesh.len() < topo.base_count {
        return Err(Error::Mismatch(format!("overlay needs {} points, got {}", topo.base_count, mesh.len())));
    }
    let mut img = to_rgb(image);
    let green = Rgb([40, 230, 80]);
    for c in &topo.chains {
        let pts: Vec<[f32; 2]> = c.ids.iter().map(|&i| [mesh.points[i][0], mesh.points[i][1]]).collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], green);
        }
        if c.closed && pts.len() > 2 {
            line(&mut img, pts[pts.len() - 1], pts[0], green);
        }
    }
    let red = Rgb([240, 50, 50]);
    for p in mesh.points.iter().skip(topo.base_count) {
        let q = [p[0], p[1]];
        line(&mut img, q, q, red);
    }
    Ok(img)
}

pub fn write_overlay(path: &Path, image: &Tensor<f32>, mesh: &LandmarkSet, topo: &Topology) -> Result<()> {
    render_overlay(image, mesh, topo)?
        .save(path)
        .map_err(|e| Error::format(path, e.to_string()))
}
