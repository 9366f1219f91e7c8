//! Minimal static line charts rendered straight into PNG buffers. No text
//! beyond a 3x5 digit font for tick labels; good enough for CI artifacts.

use anyhow::Result;
use image::{Rgb, RgbImage};
use std::path::Path;

const W: u32 = 640;
const H: u32 = 420;
const MARGIN: u32 = 48;

const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const SERIES: [Rgb<u8>; 4] =
    [Rgb([214, 69, 65]), Rgb([31, 119, 180]), Rgb([44, 160, 44]), Rgb([148, 103, 189])];

// 3x5 bitmap glyphs for tick labels
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        'e' => [0b000, 0b111, 0b110, 0b100, 0b111],
        _ => [0; 5],
    }
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str) {
    let mut cx = x;
    for c in text.chars() {
        let g = glyph(c);
        for (ry, row) in g.iter().enumerate() {
            for rx in 0..3 {
                if row & (0b100 >> rx) != 0 {
                    let (px, py) = (cx + rx, y + ry as u32);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, AXIS);
                    }
                }
            }
        }
        cx += 4;
    }
}

fn draw_line(img: &mut RgbImage, x0: f32, y0: f32, x1: f32, y1: f32, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        let x = x0 + t * (x1 - x0);
        let y = y0 + t * (y1 - y0);
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.01..10000.0).contains(&a) {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// One or more named series over a shared x column.
pub fn line_chart(path: &Path, series: &[(&str, Vec<(f64, f64)>)]) -> Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    if pts.is_empty() {
        img.save(path)?;
        return Ok(());
    }
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        let (x, y) = (finite(x), finite(y));
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let pad_y = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad_y, y1 + pad_y);

    let to_px = |x: f64, y: f64| -> (f32, f32) {
        let fx = (x - x0) / (x1 - x0);
        let fy = (y - y0) / (y1 - y0);
        (
            MARGIN as f32 + fx as f32 * (W - 2 * MARGIN) as f32,
            (H - MARGIN) as f32 - fy as f32 * (H - 2 * MARGIN) as f32,
        )
    };

    // grid + ticks
    for i in 0..=4 {
        let gx = x0 + (x1 - x0) * i as f64 / 4.0;
        let gy = y0 + (y1 - y0) * i as f64 / 4.0;
        let (px, _) = to_px(gx, y0);
        let (_, py) = to_px(x0, gy);
        draw_line(&mut img, px, MARGIN as f32, px, (H - MARGIN) as f32, GRID);
        draw_line(&mut img, MARGIN as f32, py, (W - MARGIN) as f32, py, GRID);
        draw_text(&mut img, px.max(2.0) as u32 - 2, H - MARGIN + 6, &fmt_tick(gx));
        draw_text(&mut img, 4, py.max(3.0) as u32 - 3, &fmt_tick(gy));
    }
    // axes
    draw_line(&mut img, MARGIN as f32, MARGIN as f32, MARGIN as f32, (H - MARGIN) as f32, AXIS);
    draw_line(
        &mut img,
        MARGIN as f32,
        (H - MARGIN) as f32,
        (W - MARGIN) as f32,
        (H - MARGIN) as f32,
        AXIS,
    );

    for (si, (_, s)) in series.iter().enumerate() {
        let color = SERIES[si % SERIES.len()];
        for w in s.windows(2) {
            let (ax, ay) = to_px(finite(w[0].0), finite(w[0].1));
            let (bx, by) = to_px(finite(w[1].0), finite(w[1].1));
            draw_line(&mut img, ax, ay, bx, by, color);
        }
        for &(x, y) in s {
            let (px, py) = to_px(finite(x), finite(y));
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let (qx, qy) = (px as i32 + dx, py as i32 + dy);
                    if qx >= 0 && qy >= 0 && (qx as u32) < W && (qy as u32) < H {
                        img.put_pixel(qx as u32, qy as u32, color);
                    }
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

/// Renders every numeric column of a CSV against its first column, one chart
/// per column.
pub fn charts_from_csv(csv_path: &Path, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .map(|h| h.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    if header.len() < 2 {
        anyhow::bail!("csv {} has fewer than two columns", csv_path.display());
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            continue;
        }
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.trim().parse().ok()).collect();
        if let Some(vals) = parsed {
            for (c, v) in cols.iter_mut().zip(vals) {
                c.push(v);
            }
        }
    }
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("chart");
    let mut out = Vec::new();
    for (i, name) in header.iter().enumerate().skip(1) {
        let pts: Vec<(f64, f64)> = cols[0].iter().copied().zip(cols[i].iter().copied()).collect();
        if pts.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{stem}_{name}.png"));
        line_chart(&path, &[(name.as_str(), pts)])?;
        out.push(path);
    }
    Ok(out)
}
