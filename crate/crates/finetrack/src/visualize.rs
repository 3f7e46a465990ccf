//! PNG output: frames with boxes, mask grids, flow fields and distance
//! heatmaps.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

use finetrack_core::geometry::BBox;
use finetrack_core::synthetic_world::FrameRecord;

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn frame_image(frame: &FrameRecord) -> RgbImage {
    RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.image.clone()).expect("frame buffer size")
}

/// Outlines `boxes` in `color`.
pub fn draw_boxes(img: &mut RgbImage, boxes: &[BBox], color: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for b in boxes {
        let x1 = (b.x1.round() as i64).clamp(0, w - 1);
        let y1 = (b.y1.round() as i64).clamp(0, h - 1);
        let x2 = ((b.x2.round() as i64) - 1).clamp(0, w - 1);
        let y2 = ((b.y2.round() as i64) - 1).clamp(0, h - 1);
        for x in x1..=x2 {
            img.put_pixel(x as u32, y1 as u32, Rgb(color));
            img.put_pixel(x as u32, y2 as u32, Rgb(color));
        }
        for y in y1..=y2 {
            img.put_pixel(x1 as u32, y as u32, Rgb(color));
            img.put_pixel(x2 as u32, y as u32, Rgb(color));
        }
    }
}

pub fn save_frame(path: &Path, frame: &FrameRecord, boxes: &[BBox]) -> Result<()> {
    let mut img = frame_image(frame);
    draw_boxes(&mut img, boxes, [255, 255, 255]);
    save(&img, path)
}

fn blow_up(values: &[[u8; 3]], h: usize, w: usize, scale: u32) -> RgbImage {
    let s = scale.max(1);
    RgbImage::from_fn(w as u32 * s, h as u32 * s, |x, y| {
        Rgb(values[(y / s) as usize * w + (x / s) as usize])
    })
}

/// Grayscale image of an `h × w` map with values in `[0, 1]`.
pub fn save_mask(path: &Path, values: &[f64], h: usize, w: usize, scale: u32) -> Result<()> {
    let px: Vec<[u8; 3]> = values
        .iter()
        .map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g]
        })
        .collect();
    save(&blow_up(&px, h, w, scale), path)
}

/// Blue (0) to yellow (1) color ramp.
fn ramp(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [(255.0 * v) as u8, (200.0 * v + 30.0) as u8, (255.0 * (1.0 - v)) as u8]
}

/// Heatmap of a `rows × cols` matrix with entries in `[0, 1]`.
pub fn save_heatmap(path: &Path, values: &[f64], rows: usize, cols: usize, scale: u32) -> Result<()> {
    let px: Vec<[u8; 3]> = values.iter().map(|&v| ramp(v)).collect();
    save(&blow_up(&px, rows, cols, scale), path)
}

/// Flow field `(2, h, w)` as color: hue gives direction, brightness gives
/// magnitude relative to the largest vector.
pub fn save_flow(path: &Path, flow: &[f64], h: usize, w: usize, scale: u32) -> Result<()> {
    let hw = h * w;
    let mag: Vec<f64> = (0..hw).map(|p| flow[p].hypot(flow[hw + p])).collect();
    let top = mag.iter().copied().fold(0.0, f64::max);
    let px: Vec<[u8; 3]> = (0..hw)
        .map(|p| {
            let value = if top > 0.0 { mag[p] / top } else { 0.0 };
            let angle = flow[hw + p].atan2(flow[p]);
            let hue = (angle / std::f64::consts::TAU).rem_euclid(1.0) * 6.0;
            let x = 1.0 - ((hue % 2.0) - 1.0).abs();
            let (r, g, b) = match hue as u32 {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            [r, g, b].map(|c: f64| (c * value * 255.0).round() as u8)
        })
        .collect();
    save(&blow_up(&px, h, w, scale), path)
}
