//! Static PNG plots for reports: transition heatmaps, count bars and
//! metric/loss curves.
//!
//! Rendering is deliberately small and self-contained: solid fills, straight
//! lines and a 3x5 digit font. Axis tick labels are numeric only; the CSV
//! written next to each image carries the full token and class names. Output
//! bytes depend only on the input values, so reruns produce identical files.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{OscaError, Result};
use crate::labels::NUM_CLASSES;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([210, 210, 210]);
const UNOBSERVED: Rgb<u8> = Rgb([176, 176, 176]);
const BAR: Rgb<u8> = Rgb([70, 120, 180]);

/// Default series palette: blue, orange, green.
pub const SERIES_COLORS: [[u8; 3]; 3] = [[31, 119, 180], [255, 127, 14], [44, 160, 44]];

/// 3x5 bitmaps for '0'..'9', '.', '-', '%'. Each row is 3 bits, MSB left.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '%' => [0b101, 0b001, 0b010, 0b100, 0b101],
        _ => return None,
    })
}

const GLYPH_SCALE: u32 = 2;
const GLYPH_W: u32 = 3 * GLYPH_SCALE + GLYPH_SCALE; // advance incl. spacing
const GLYPH_H: u32 = 5 * GLYPH_SCALE;

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: u32, h: u32, color: Rgb<u8>) {
    for dy in 0..h {
        for dx in 0..w {
            put(img, x + dx as i64, y + dy as i64, color);
        }
    }
}

/// Draws `text` with its top-left corner at (x, y); unknown chars advance.
fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..3u32 {
                    if row >> (2 - rx) & 1 == 1 {
                        let s = GLYPH_SCALE;
                        fill_rect(
                            img,
                            cx + (rx * s) as i64,
                            y + (ry as u32 * s) as i64,
                            s,
                            s,
                            color,
                        );
                    }
                }
            }
        }
        cx += GLYPH_W as i64;
    }
}

fn text_width(text: &str) -> u32 {
    text.chars().count() as u32 * GLYPH_W
}

/// 2 px pen line from (x0, y0) to (x1, y1), coordinates in pixels.
fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as u32;
    for i in 0..=steps {
        let t = f64::from(i) / f64::from(steps);
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        fill_rect(img, x.round() as i64, y.round() as i64, 2, 2, color);
    }
}

/// Five-stop approximation of the viridis colormap, `t` in [0, 1].
fn viridis(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mut rgb = [0u8; 3];
    for (k, v) in rgb.iter_mut().enumerate() {
        *v = (STOPS[i][k] + (STOPS[i + 1][k] - STOPS[i][k]) * f).round() as u8;
    }
    Rgb(rgb)
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    img.save(path)
        .map_err(|e| OscaError::Format(format!("{}: png encode: {e}", path.display())))
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(OscaError::Validation(format!("{what}: non-finite value {v}")));
        }
    }
    Ok(())
}

/// 9x9 heatmap with class indices on both axes. `None` rows render gray;
/// observed cells use viridis scaled from 0 to the largest observed value.
pub fn save_heatmap(path: &Path, rows: &[Option<[f64; NUM_CLASSES]>; NUM_CLASSES]) -> Result<()> {
    check_finite("heatmap", rows.iter().flatten().flatten().copied())?;
    let cell: u32 = 32;
    let left: i64 = 24;
    let top: i64 = 24;
    let grid = cell * NUM_CLASSES as u32;
    let bar_x = left + grid as i64 + 10;
    let width = bar_x as u32 + 16 + text_width("0.00") + 6;
    let height = top as u32 + grid + 10;
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);

    let vmax = rows
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, &v| m.max(v))
        .max(1e-12);
    for r in 0..NUM_CLASSES {
        for c in 0..NUM_CLASSES {
            let x = left + (c as u32 * cell) as i64;
            let y = top + (r as u32 * cell) as i64;
            let color = match &rows[r] {
                Some(row) => viridis(row[c] / vmax),
                None => UNOBSERVED,
            };
            fill_rect(&mut img, x, y, cell - 1, cell - 1, color);
        }
    }
    for i in 0..NUM_CLASSES {
        let label = i.to_string();
        let cx = left + (i as u32 * cell) as i64 + (cell / 2) as i64 - (GLYPH_W / 2) as i64 + 1;
        draw_text(&mut img, cx, top - GLYPH_H as i64 - 4, &label, INK);
        let cy = top + (i as u32 * cell) as i64 + (cell / 2) as i64 - (GLYPH_H / 2) as i64;
        draw_text(&mut img, 6, cy, &label, INK);
    }
    // Color scale, max at the top.
    for dy in 0..grid {
        let t = 1.0 - f64::from(dy) / f64::from(grid - 1);
        let color = viridis(t);
        fill_rect(&mut img, bar_x, top + i64::from(dy), 12, 1, color);
    }
    draw_text(&mut img, bar_x + 16, top, &format!("{vmax:.2}"), INK);
    draw_text(
        &mut img,
        bar_x + 16,
        top + grid as i64 - GLYPH_H as i64,
        "0.00",
        INK,
    );
    save_png(&img, path)
}

/// Vertical bars indexed 0..n with the maximum labeled on the y axis.
pub fn save_bars(path: &Path, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(OscaError::Validation("bar plot needs at least one value".into()));
    }
    check_finite("bars", values.iter().copied())?;
    if values.iter().any(|&v| v < 0.0) {
        return Err(OscaError::Validation("bar plot values must be non-negative".into()));
    }
    let bar: u32 = 22;
    let gap: u32 = 8;
    let plot_h: u32 = 160;
    let left: i64 = 10 + text_width("0.00") as i64;
    let top: i64 = 12;
    let n = values.len() as u32;
    let width = left as u32 + n * (bar + gap) + 12;
    let height = top as u32 + plot_h + GLYPH_H + 12;
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);

    let vmax = values.iter().fold(0.0f64, |m, &v| m.max(v)).max(1e-12);
    let base = top + plot_h as i64;
    for (i, &v) in values.iter().enumerate() {
        let h = ((v / vmax) * f64::from(plot_h)).round() as u32;
        let x = left + (i as u32 * (bar + gap)) as i64 + gap as i64 / 2;
        fill_rect(&mut img, x, base - i64::from(h), bar, h, BAR);
        let label = i.to_string();
        let lx = x + i64::from(bar) / 2 - i64::from(text_width(&label)) / 2 + 1;
        draw_text(&mut img, lx, base + 4, &label, INK);
    }
    draw_line(&mut img, left as f64 - 2.0, top as f64, left as f64 - 2.0, base as f64, INK);
    draw_line(&mut img, left as f64 - 2.0, base as f64, (width - 8) as f64, base as f64, INK);
    draw_text(&mut img, 4, top - 2, &trim_number(vmax), INK);
    save_png(&img, path)
}

/// Compact tick label: two decimals, or integer form when exact.
fn trim_number(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 && v.abs() < 1e9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Line chart of one or more series over shared x values. Colors are given
/// per series (see [`SERIES_COLORS`]); callers document the order alongside.
pub fn save_lines(path: &Path, xs: &[f64], series: &[(Vec<f64>, [u8; 3])]) -> Result<()> {
    if xs.is_empty() || series.is_empty() {
        return Err(OscaError::Validation("line plot needs x values and series".into()));
    }
    check_finite("lines x", xs.iter().copied())?;
    for (ys, _) in series {
        if ys.len() != xs.len() {
            return Err(OscaError::Validation(format!(
                "series length {} does not match {} x values",
                ys.len(),
                xs.len()
            )));
        }
        check_finite("lines y", ys.iter().copied())?;
    }

    let width: u32 = 440;
    let height: u32 = 260;
    let left: f64 = 12.0 + f64::from(text_width("00.00"));
    let right: f64 = f64::from(width) - 14.0;
    let top: f64 = 14.0;
    let bottom: f64 = f64::from(height) - 16.0 - f64::from(GLYPH_H);
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);

    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in xs {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
    }
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (ys, _) in series {
        for &y in ys {
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if xmax - xmin < 1e-12 {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if ymax - ymin < 1e-12 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let pad = (ymax - ymin) * 0.05;
    ymin -= pad;
    ymax += pad;

    let to_px = |x: f64, y: f64| {
        (
            left + (x - xmin) / (xmax - xmin) * (right - left),
            bottom - (y - ymin) / (ymax - ymin) * (bottom - top),
        )
    };

    // Ticks and frame first so the series draw on top.
    for i in 0..=4u32 {
        let t = f64::from(i) / 4.0;
        let xv = xmin + t * (xmax - xmin);
        let (px, _) = to_px(xv, ymin);
        draw_line(&mut img, px, bottom, px, bottom + 4.0, INK);
        let label = trim_number(xv);
        draw_text(
            &mut img,
            px as i64 - i64::from(text_width(&label)) / 2,
            bottom as i64 + 7,
            &label,
            INK,
        );
        let yv = ymin + t * (ymax - ymin);
        let (_, py) = to_px(xmin, yv);
        draw_line(&mut img, left - 4.0, py, left, py, INK);
        draw_line(&mut img, left, py, right, py, GRID);
        draw_text(&mut img, 4, py as i64 - GLYPH_H as i64 / 2, &trim_number(yv), INK);
    }
    draw_line(&mut img, left, top, left, bottom, INK);
    draw_line(&mut img, left, bottom, right, bottom, INK);

    for (ys, rgb) in series {
        let color = Rgb(*rgb);
        let mut prev: Option<(f64, f64)> = None;
        for (&x, &y) in xs.iter().zip(ys) {
            let p = to_px(x, y);
            if let Some(q) = prev {
                draw_line(&mut img, q.0, q.1, p.0, p.1, color);
            }
            fill_rect(&mut img, p.0 as i64 - 1, p.1 as i64 - 1, 4, 4, color);
            prev = Some(p);
        }
    }
    save_png(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard() -> [Option<[f64; NUM_CLASSES]>; NUM_CLASSES] {
        let mut rows = [None; NUM_CLASSES];
        for (r, slot) in rows.iter_mut().enumerate() {
            if r == 4 {
                continue; // leave one row unobserved
            }
            let mut row = [0.0; NUM_CLASSES];
            for (c, v) in row.iter_mut().enumerate() {
                *v = ((r + c) % 2) as f64 * 0.8 + 0.1;
            }
            *slot = Some(row);
        }
        rows
    }

    #[test]
    fn the_three_chart_kinds_produce_decodable_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let heat = dir.path().join("heat.png");
        save_heatmap(&heat, &checkerboard()).unwrap();
        let bars = dir.path().join("bars.png");
        save_bars(&bars, &[3.0, 1.0, 4.0, 1.0, 5.0]).unwrap();
        let lines = dir.path().join("lines.png");
        save_lines(
            &lines,
            &[0.0, 1.0, 2.0, 3.0],
            &[
                (vec![2.2, 1.4, 1.1, 0.9], SERIES_COLORS[0]),
                (vec![2.2, 1.8, 1.7, 1.8], SERIES_COLORS[1]),
            ],
        )
        .unwrap();
        for path in [&heat, &bars, &lines] {
            let img = image::open(path).unwrap();
            assert!(img.width() > 50 && img.height() > 50, "{}", path.display());
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        save_heatmap(&a, &checkerboard()).unwrap();
        save_heatmap(&b, &checkerboard()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        assert!(save_bars(&p, &[]).is_err());
        assert!(save_bars(&p, &[1.0, f64::NAN]).is_err());
        assert!(save_lines(&p, &[], &[]).is_err());
        assert!(save_lines(&p, &[0.0, 1.0], &[(vec![1.0], SERIES_COLORS[0])]).is_err());
        assert!(!p.exists());
    }

    #[test]
    fn constant_series_and_single_points_still_render() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flat.png");
        save_lines(&p, &[1.0], &[(vec![5.0], SERIES_COLORS[2])]).unwrap();
        let q = dir.path().join("const.png");
        save_lines(&q, &[0.0, 1.0], &[(vec![2.0, 2.0], SERIES_COLORS[0])]).unwrap();
        assert!(p.exists() && q.exists());
    }
}
