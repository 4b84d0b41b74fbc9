//! PNG rendering of classified rasters.
//!
//! Maps use one `scale × scale` pixel block per cell, north up, colored by
//! quantile class; missing cells are fully transparent. The legend (class
//! ranges) and the value histogram go into a separate fixed-size panel so
//! the map keeps its exact `n_cols·scale × n_rows·scale` size. Encoding uses
//! fixed settings and no timestamps, so equal rasters give equal bytes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geocore::format_sig6;
use crate::geostat::{class_of, histogram, quantile_classes, GeostatError};
use crate::Raster;

pub const DEFAULT_SCALE: usize = 8;
pub const DEFAULT_CLASSES: usize = 5;
pub const PANEL_WIDTH: usize = 480;
pub const PANEL_HEIGHT: usize = 240;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("classing: {0}")]
    Classing(#[from] GeostatError),
    #[error("scale must be at least 1")]
    InvalidScale,
    #[error("image of {width}x{height} pixels is too large")]
    TooLarge { width: usize, height: usize },
    #[error("png encoding: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    /// Blue to red through yellow, the usual choice for ECa maps.
    #[default]
    Spectral,
    Viridis,
    Grayscale,
}

impl Palette {
    fn anchors(&self) -> &'static [[u8; 3]] {
        match self {
            Palette::Spectral => &[[43, 131, 186], [171, 221, 164], [255, 255, 191], [253, 174, 97], [215, 25, 28]],
            Palette::Viridis => &[[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]],
            Palette::Grayscale => &[[0, 0, 0], [255, 255, 255]],
        }
    }

    /// Color of class `k` of `n`, evenly spread along the palette.
    pub fn class_color(&self, k: usize, n: usize) -> [u8; 3] {
        let a = self.anchors();
        if n <= 1 {
            return a[a.len() / 2];
        }
        let t = k.min(n - 1) as f64 / (n - 1) as f64 * (a.len() - 1) as f64;
        let i = (t.floor() as usize).min(a.len() - 2);
        let f = t - i as f64;
        std::array::from_fn(|c| (a[i][c] as f64 * (1.0 - f) + a[i + 1][c] as f64 * f).round() as u8)
    }
}

/// RGBA pixel buffer.
struct Canvas {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize, fill: [u8; 4]) -> Self {
        let rgba = fill.iter().copied().cycle().take(width * height * 4).collect();
        Self { width, height, rgba }
    }

    fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize, color: [u8; 4]) {
        for yy in y..(y + h).min(self.height) {
            for xx in x..(x + w).min(self.width) {
                let o = (yy * self.width + xx) * 4;
                self.rgba[o..o + 4].copy_from_slice(&color);
            }
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str, px: usize, color: [u8; 4]) {
        let mut cx = x;
        for ch in s.chars() {
            let rows = glyph(ch);
            for (r, bits) in rows.iter().enumerate() {
                for c in 0..3 {
                    if bits & (0b100 >> c) != 0 {
                        self.fill_rect(cx + c * px, y + r * px, px, px, color);
                    }
                }
            }
            cx += 4 * px;
        }
    }

    fn encode(&self) -> Result<Vec<u8>, RenderError> {
        let mut out = Vec::new();
        {
            let w = u32::try_from(self.width).map_err(|_| RenderError::TooLarge { width: self.width, height: self.height })?;
            let h = u32::try_from(self.height).map_err(|_| RenderError::TooLarge { width: self.width, height: self.height })?;
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Balanced);
            enc.set_filter(png::Filter::Sub);
            let mut writer = enc.write_header().map_err(|e| RenderError::Encode(e.to_string()))?;
            writer.write_image_data(&self.rgba).map_err(|e| RenderError::Encode(e.to_string()))?;
            writer.finish().map_err(|e| RenderError::Encode(e.to_string()))?;
        }
        Ok(out)
    }
}

/// 3×5 bitmap glyphs for the characters used in numeric labels.
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
        'e' => [0b000, 0b111, 0b111, 0b100, 0b111],
        '<' => [0b001, 0b010, 0b100, 0b010, 0b001],
        '>' => [0b100, 0b010, 0b001, 0b010, 0b100],
        _ => [0; 5],
    }
}

/// Class breaks for rendering. One class needs no breaks, so a raster with a
/// single distinct value still renders as one colored block.
pub fn render_breaks(r: &Raster, n_classes: usize) -> Result<Vec<f64>, RenderError> {
    if n_classes == 1 {
        if r.n_present() == 0 {
            return Err(GeostatError::EmptyRaster.into());
        }
        return Ok(Vec::new());
    }
    Ok(quantile_classes(r, n_classes)?)
}

/// Classified map image.
pub fn render_map(r: &Raster, n_classes: usize, palette: Palette, scale: usize) -> Result<Vec<u8>, RenderError> {
    if scale == 0 {
        return Err(RenderError::InvalidScale);
    }
    let breaks = render_breaks(r, n_classes)?;
    let spec = r.spec();
    let (width, height) = (spec.n_cols * scale, spec.n_rows * scale);
    if width.saturating_mul(height) > 1 << 28 {
        return Err(RenderError::TooLarge { width, height });
    }
    let mut canvas = Canvas::new(width, height, [0, 0, 0, 0]);
    for (i, v) in r.values().iter().enumerate() {
        let Some(v) = v else { continue };
        let (col, row) = spec.col_row(i);
        let [cr, cg, cb] = palette.class_color(class_of(*v, &breaks), n_classes);
        // image row 0 is the northernmost grid row
        canvas.fill_rect(col * scale, (spec.n_rows - 1 - row) * scale, scale, scale, [cr, cg, cb, 255]);
    }
    canvas.encode()
}

/// Legend and histogram panel, `PANEL_WIDTH × PANEL_HEIGHT`.
pub fn render_panel(r: &Raster, n_classes: usize, palette: Palette, n_bins: usize) -> Result<Vec<u8>, RenderError> {
    let breaks = render_breaks(r, n_classes)?;
    let hist = histogram(r, n_bins)?;
    let mut canvas = Canvas::new(PANEL_WIDTH, PANEL_HEIGHT, [255, 255, 255, 255]);
    let ink = [0, 0, 0, 255];

    // legend: swatch then "lo-hi" range per class
    let (lx, ly, row_h) = (10, 12, 22);
    for k in 0..n_classes {
        let [cr, cg, cb] = palette.class_color(k, n_classes);
        let y = ly + k * row_h;
        canvas.fill_rect(lx, y, 16, 12, [cr, cg, cb, 255]);
        let lo = if k == 0 { hist.min } else { breaks[k - 1] };
        let hi = if k + 1 == n_classes { hist.max } else { breaks[k] };
        let label = format!("{} {}", format_sig6(round_label(lo)), format_sig6(round_label(hi)));
        canvas.text(lx + 22, y + 1, &label, 2, ink);
    }

    // histogram on the right half
    let (hx, hy, hw, hh) = (200, 12, 270, PANEL_HEIGHT - 40);
    canvas.fill_rect(hx, hy + hh, hw, 1, ink);
    canvas.fill_rect(hx, hy, 1, hh + 1, ink);
    let max_count = hist.counts.iter().copied().max().unwrap_or(0).max(1);
    let bar_w = ((hw - 2) / hist.counts.len()).max(1);
    let bin_w = (hist.max - hist.min) / hist.counts.len() as f64;
    for (b, &count) in hist.counts.iter().enumerate() {
        let h = (count as f64 / max_count as f64 * (hh - 1) as f64).round() as usize;
        let center = hist.min + (b as f64 + 0.5) * bin_w;
        let [cr, cg, cb] = palette.class_color(class_of(center, &breaks), n_classes);
        canvas.fill_rect(hx + 2 + b * bar_w, hy + hh - h, bar_w.saturating_sub(1).max(1), h, [cr, cg, cb, 255]);
    }
    canvas.text(hx, hy + hh + 8, &format_sig6(round_label(hist.min)), 2, ink);
    let max_label = format_sig6(round_label(hist.max));
    let label_w = max_label.chars().count() * 8;
    canvas.text((hx + hw).saturating_sub(label_w), hy + hh + 8, &max_label, 2, ink);
    canvas.encode()
}

fn round_label(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}
