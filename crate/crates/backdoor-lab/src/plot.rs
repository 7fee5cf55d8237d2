//! Minimal PNG emission for experiment figures: line charts with a tiny
//! built-in 5×7 pixel font, and side-by-side mask/pattern renderings of
//! learned patches. Plots are optional artifacts; nothing in the pipeline
//! depends on them.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::inspector::Patch;

pub const SERIES_COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [127, 127, 127],
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn series(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points });
        self
    }

    /// Renders a 640×420 PNG.
    pub fn render(&self, path: &Path) -> Result<()> {
        let (width, height) = (640u32, 420u32);
        let (left, right, top, bottom) = (56i32, 14i32, 24i32, 40i32);
        let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
        let plot_w = width as i32 - left - right;
        let plot_h = height as i32 - top - bottom;

        let points: Vec<(f64, f64)> =
            self.series.iter().flat_map(|s| s.points.iter().copied()).collect();
        if points.is_empty() {
            return Err(Error::config("cannot plot empty series"));
        }
        let (mut x_min, mut x_max) = min_max(points.iter().map(|p| p.0));
        let (mut y_min, mut y_max) = min_max(points.iter().map(|p| p.1));
        pad_range(&mut x_min, &mut x_max);
        pad_range(&mut y_min, &mut y_max);

        let to_px = |x: f64, y: f64| -> (i32, i32) {
            let fx = (x - x_min) / (x_max - x_min);
            let fy = (y - y_min) / (y_max - y_min);
            (left + (fx * plot_w as f64) as i32, top + plot_h - (fy * plot_h as f64) as i32)
        };

        // Axes.
        let black = Rgb([40u8, 40, 40]);
        let grey = Rgb([210u8, 210, 210]);
        draw_line(&mut img, left, top + plot_h, left + plot_w, top + plot_h, black);
        draw_line(&mut img, left, top, left, top + plot_h, black);

        // Ticks and grid.
        for i in 0..=4 {
            let fx = i as f64 / 4.0;
            let x_val = x_min + fx * (x_max - x_min);
            let px = left + (fx * plot_w as f64) as i32;
            draw_line(&mut img, px, top, px, top + plot_h, grey);
            draw_line(&mut img, px, top + plot_h, px, top + plot_h + 3, black);
            draw_text(&mut img, px - 12, top + plot_h + 7, &fmt_tick(x_val), black);

            let y_val = y_min + fx * (y_max - y_min);
            let py = top + plot_h - (fx * plot_h as f64) as i32;
            draw_line(&mut img, left, py, left + plot_w, py, grey);
            draw_line(&mut img, left - 3, py, left, py, black);
            draw_text(&mut img, 4, py - 3, &fmt_tick(y_val), black);
        }

        draw_text(&mut img, left, 8, &self.title, black);
        draw_text(
            &mut img,
            left + plot_w / 2 - 3 * self.x_label.len() as i32,
            height as i32 - 12,
            &self.x_label,
            black,
        );
        draw_text(&mut img, 4, 8, &self.y_label, black);

        for (si, series) in self.series.iter().enumerate() {
            let color = Rgb(SERIES_COLORS[si % SERIES_COLORS.len()]);
            let mut prev: Option<(i32, i32)> = None;
            for &(x, y) in &series.points {
                let (px, py) = to_px(x, y);
                draw_marker(&mut img, px, py, color);
                if let Some((qx, qy)) = prev {
                    draw_line(&mut img, qx, qy, px, py, color);
                }
                prev = Some((px, py));
            }
            // Legend entry.
            let ly = top + 6 + 12 * si as i32;
            let lx = left + plot_w - 120;
            draw_line(&mut img, lx, ly + 3, lx + 14, ly + 3, color);
            draw_text(&mut img, lx + 18, ly, &series.label, black);
        }

        img.save(path).map_err(|e| Error::format(format!("plot render failed: {e}")))
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn pad_range(lo: &mut f64, hi: &mut f64) {
    if *lo == *hi {
        *lo -= 0.5;
        *hi += 0.5;
    } else {
        let pad = (*hi - *lo) * 0.05;
        *lo -= pad;
        *hi += pad;
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn draw_marker(img: &mut RgbImage, x: i32, y: i32, color: Rgb<u8>) {
    for dy in -1..=1 {
        for dx in -1..=1 {
            put(img, x + dx, y + dy, color);
        }
    }
}

fn put(img: &mut RgbImage, x: i32, y: i32, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb<u8>) {
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// 5×7 glyphs, one byte per row, low 5 bits used.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '%' => [0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        _ => [0x00; 7],
    }
}

fn draw_text(img: &mut RgbImage, x: i32, y: i32, text: &str, color: Rgb<u8>) {
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        let gx = x + i as i32 * 6;
        for (ry, row) in rows.iter().enumerate() {
            for bit in 0..5 {
                if row & (1 << (4 - bit)) != 0 {
                    put(img, gx + bit, y + ry as i32, color);
                }
            }
        }
    }
}

/// Renders a learned patch as `[mask | pattern]` side by side, scaled up
/// 4× with nearest-neighbor.
pub fn save_patch_png(patch: &Patch, path: &Path) -> Result<()> {
    let (h, w, c) = (patch.shape.height, patch.shape.width, patch.shape.channels);
    let scale = 4u32;
    let gap = 4u32;
    let width = (2 * w as u32) * scale + gap;
    let height = h as u32 * scale;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for y in 0..h {
        for x in 0..w {
            let m = (patch.mask[y * w + x].clamp(0.0, 1.0) * 255.0) as u8;
            let base = (y * w + x) * c;
            let rgb = [
                (patch.pattern[base].clamp(0.0, 1.0) * 255.0) as u8,
                (patch.pattern[base + 1.min(c - 1)].clamp(0.0, 1.0) * 255.0) as u8,
                (patch.pattern[base + 2.min(c - 1)].clamp(0.0, 1.0) * 255.0) as u8,
            ];
            for sy in 0..scale {
                for sx in 0..scale {
                    let py = y as u32 * scale + sy;
                    img.put_pixel(x as u32 * scale + sx, py, Rgb([m, m, m]));
                    img.put_pixel(
                        (w as u32 + x as u32) * scale + gap + sx,
                        py,
                        Rgb(rgb),
                    );
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::format(format!("patch render failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageShape;

    #[test]
    fn line_plot_writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.png");
        LinePlot::new("demo", "x", "y")
            .series("a", vec![(0.0, 0.1), (1.0, 0.9), (2.0, 0.5)])
            .series("b", vec![(0.0, 0.8), (1.0, 0.2)])
            .render(&path)
            .unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), 640);
    }

    #[test]
    fn patch_png_has_mask_and_pattern_panels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patch.png");
        let shape = ImageShape::new(8, 8, 3);
        let patch = Patch {
            shape,
            mask: vec![0.5; 64],
            pattern: vec![0.25; shape.len()],
            lambda: 1e-4,
            mask_l1: 32.0,
            achieved_flip_rate: 1.0,
        };
        save_patch_png(&patch, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), 8 * 4 * 2 + 4);
    }
}
