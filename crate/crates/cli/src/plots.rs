//! Deterministic bar-chart PNGs for report sets. Everything is drawn
//! directly into a pixel buffer with a small embedded font; no timestamps,
//! no styling dependencies, so re-runs produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::harness::EvalReport;

const GLYPH_W: usize = 5;

/// Classic 5x7 glyph rows, five low bits used per row.
fn glyph(ch: char) -> [u8; 7] {
    match ch.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
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
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        _ => [0x00; 7],
    }
}

struct Canvas {
    w: usize,
    h: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Canvas {
            w,
            h,
            pixels: vec![255u8; w * h * 3],
        }
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, rw: usize, rh: usize, rgb: [u8; 3]) {
        for y in y0..(y0 + rh).min(self.h) {
            for x in x0..(x0 + rw).min(self.w) {
                let i = (y * self.w + x) * 3;
                self.pixels[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    fn text(&mut self, x0: usize, y0: usize, s: &str, rgb: [u8; 3]) {
        let mut x = x0;
        for ch in s.chars() {
            let rows = glyph(ch);
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..GLYPH_W {
                    if row & (1 << (GLYPH_W - 1 - dx)) != 0 {
                        let px = x + dx;
                        let py = y0 + dy;
                        if px < self.w && py < self.h {
                            let i = (py * self.w + px) * 3;
                            self.pixels[i..i + 3].copy_from_slice(&rgb);
                        }
                    }
                }
            }
            x += GLYPH_W + 1;
        }
    }

    fn text_width(s: &str) -> usize {
        s.chars().count() * (GLYPH_W + 1)
    }

    fn save(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.w as u32,
            self.h as u32,
            image::ColorType::Rgb8,
        )
        .with_context(|| format!("writing {}", path.display()))
    }
}

fn method_color(index: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [
        [66, 133, 244],
        [219, 68, 55],
        [244, 180, 0],
        [15, 157, 88],
        [171, 71, 188],
        [0, 172, 193],
    ];
    PALETTE[index % PALETTE.len()]
}

struct Panel<'a> {
    title: &'a str,
    max_value: f64,
    values: Vec<f64>,
}

fn draw_chart(panels: &[Panel], labels: &[String], path: &Path) -> Result<()> {
    const BAR_W: usize = 34;
    const GAP: usize = 14;
    const MARGIN: usize = 24;
    const PLOT_H: usize = 150;
    const TOP: usize = 28;
    let n = labels.len();
    let panel_w = MARGIN * 2 + n * BAR_W + (n.saturating_sub(1)) * GAP;
    let w = panel_w * panels.len();
    let h = TOP + PLOT_H + 34;
    let mut canvas = Canvas::new(w, h);

    for (pi, panel) in panels.iter().enumerate() {
        let x_base = pi * panel_w;
        canvas.text(x_base + MARGIN, 8, panel.title, [0, 0, 0]);
        // baseline
        canvas.fill_rect(x_base + MARGIN - 4, TOP + PLOT_H, panel_w - 2 * MARGIN + 8, 1, [0, 0, 0]);
        for (bi, (&value, label)) in panel.values.iter().zip(labels).enumerate() {
            let frac = (value / panel.max_value).clamp(0.0, 1.0);
            let bar_h = (frac * PLOT_H as f64).round() as usize;
            let x = x_base + MARGIN + bi * (BAR_W + GAP);
            let y = TOP + PLOT_H - bar_h;
            canvas.fill_rect(x, y, BAR_W, bar_h, method_color(bi));
            let value_text = format!("{value:.2}");
            let tx = x + BAR_W / 2 - Canvas::text_width(&value_text) / 2;
            canvas.text(tx, y.saturating_sub(10).max(TOP.saturating_sub(14)), &value_text, [0, 0, 0]);
            let short: String = label.chars().take(6).collect();
            let lx = x + BAR_W / 2 - Canvas::text_width(&short) / 2;
            canvas.text(lx, TOP + PLOT_H + 6, &short, [0, 0, 0]);
        }
    }
    canvas.save(path)
}

/// Write `perturb_quality.png` (perturbation SSIM and PSNR per method) and
/// `nsfw_ratio.png` into the output directory; returns the file paths.
pub fn emit_plots(reports: &[EvalReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        anyhow::bail!("no reports to plot");
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let labels: Vec<String> = reports.iter().map(|r| r.row.method.clone()).collect();

    let quality = out_dir.join("perturb_quality.png");
    draw_chart(
        &[
            Panel {
                title: "PERTURB SSIM",
                max_value: 1.0,
                values: reports.iter().map(|r| r.row.perturb_ssim).collect(),
            },
            Panel {
                title: "PERTURB PSNR DB",
                max_value: 100.0,
                values: reports.iter().map(|r| r.row.perturb_psnr_db).collect(),
            },
        ],
        &labels,
        &quality,
    )?;

    let nsfw = out_dir.join("nsfw_ratio.png");
    draw_chart(
        &[Panel {
            title: "NSFW RATIO",
            max_value: 1.0,
            values: reports.iter().map(|r| r.row.nsfw_ratio).collect(),
        }],
        &labels,
        &nsfw,
    )?;

    Ok(vec![quality, nsfw])
}
