//! Static chart rendering: accuracy curves and reliability diagrams as
//! PNG files. Charts are drawn directly onto an RGB raster with a small
//! built-in 5x7 bitmap font, so output bytes are identical across runs
//! and platforms.

use crate::calib::ReliabilityReport;
use crate::error::Result;
use image::{Rgb, RgbImage};
use std::path::Path;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const BAR: Rgb<u8> = Rgb([70, 120, 190]);
const DIAG: Rgb<u8> = Rgb([160, 160, 160]);

/// Line-series palette (red, blue, green, orange, purple, brown).
pub const SERIES_COLORS: [Rgb<u8>; 6] = [
    Rgb([214, 69, 65]),
    Rgb([31, 119, 180]),
    Rgb([44, 160, 44]),
    Rgb([255, 127, 14]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
];

// 5x7 font, one byte per row, low five bits used, bit 4 = leftmost pixel.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '.' => [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100],
        ',' => [0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b00100, 0b01000],
        '-' => [0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000],
        '_' => [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b11111],
        '%' => [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011],
        '/' => [0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000],
        ':' => [0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000],
        '=' => [0b00000, 0b00000, 0b11111, 0b00000, 0b11111, 0b00000, 0b00000],
        '(' => [0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010],
        ')' => [0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000],
        _ => [0; 7],
    }
}

/// Drawing surface with pixel-level primitives.
struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(w, h, WHITE),
        }
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, color);
        }
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = x0 + (x1 - x0) * t;
            let y = y0 + (y1 - y0) * t;
            self.put(x.round() as i64, y.round() as i64, color);
        }
    }

    /// A 2-pixel-thick line, for series curves.
    fn thick_line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
        self.line(x0, y0, x1, y1, color);
        self.line(x0 + 1.0, y0, x1 + 1.0, y1, color);
        self.line(x0, y0 + 1.0, x1, y1 + 1.0, color);
    }

    fn dashed_line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            if (s / 4) % 2 == 1 {
                continue;
            }
            let t = s as f64 / steps as f64;
            self.put(
                (x0 + (x1 - x0) * t).round() as i64,
                (y0 + (y1 - y0) * t).round() as i64,
                color,
            );
        }
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, color);
            }
        }
    }

    fn marker(&mut self, x: f64, y: f64, color: Rgb<u8>) {
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        self.fill_rect(cx - 2, cy - 2, cx + 2, cy + 2, color);
    }

    fn text(&mut self, x: i64, y: i64, s: &str, color: Rgb<u8>) {
        let mut cx = x;
        for c in s.chars() {
            let g = glyph(c);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..5 {
                    if bits & (1 << (4 - col)) != 0 {
                        self.put(cx + col as i64, y + row as i64, color);
                    }
                }
            }
            cx += 6;
        }
    }

    fn text_width(s: &str) -> i64 {
        s.chars().count() as i64 * 6
    }

    fn save(self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        self.img.save(path)?;
        Ok(())
    }
}

/// Short numeric label for an axis tick: up to three decimals, trailing
/// zeros trimmed.
fn fmt_tick(v: f64) -> String {
    let mut s = format!("{v:.3}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

struct Frame {
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.left + (v - self.x_min) / (self.x_max - self.x_min) * (self.right - self.left)
    }
    fn y(&self, v: f64) -> f64 {
        self.bottom - (v - self.y_min) / (self.y_max - self.y_min) * (self.bottom - self.top)
    }
}

/// Multi-series line chart written as a PNG file.
///
/// Each series is a name plus (x, y) points; points are drawn in the
/// given order. Y bounds widen to the data if it leaves [0, 100], so the
/// same helper serves accuracy-percentage and raw-metric curves.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let (w, h) = (720u32, 480u32);
    let mut canvas = Canvas::new(w, h);
    let frame = {
        let xs: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
        let ys: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).collect();
        let (mut x_min, mut x_max) = bounds(&xs, 0.0, 1.0);
        if (x_max - x_min).abs() < 1e-12 {
            x_min -= 0.5;
            x_max += 0.5;
        }
        let (y_lo, y_hi) = bounds(&ys, 0.0, 100.0);
        let y_min = y_lo.min(0.0);
        let y_max = y_hi.max(100.0).max(y_min + 1e-9);
        Frame {
            left: 72.0,
            right: w as f64 - 24.0,
            top: 56.0,
            bottom: h as f64 - 52.0,
            x_min,
            x_max,
            y_min,
            y_max,
        }
    };

    // Horizontal grid and y ticks.
    for i in 0..=5 {
        let v = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 5.0;
        let y = frame.y(v);
        canvas.line(frame.left, y, frame.right, y, GRID);
        let label = fmt_tick(v);
        canvas.text(frame.left as i64 - Canvas::text_width(&label) - 6, y as i64 - 3, &label, BLACK);
    }
    // X ticks: at each distinct data x if few, else six evenly spaced.
    let mut xs: Vec<f64> = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.0))
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let ticks: Vec<f64> = if xs.len() <= 10 && !xs.is_empty() {
        xs
    } else {
        (0..=5)
            .map(|i| frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 5.0)
            .collect()
    };
    for &v in &ticks {
        let x = frame.x(v);
        canvas.line(x, frame.bottom, x, frame.bottom + 4.0, BLACK);
        let label = fmt_tick(v);
        canvas.text(x as i64 - Canvas::text_width(&label) / 2, frame.bottom as i64 + 8, &label, BLACK);
    }
    // Axes.
    canvas.line(frame.left, frame.top, frame.left, frame.bottom, BLACK);
    canvas.line(frame.left, frame.bottom, frame.right, frame.bottom, BLACK);

    // Series.
    for (si, (_, points)) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        for pair in points.windows(2) {
            canvas.thick_line(
                frame.x(pair[0].0),
                frame.y(pair[0].1),
                frame.x(pair[1].0),
                frame.y(pair[1].1),
                color,
            );
        }
        for &(x, y) in points {
            canvas.marker(frame.x(x), frame.y(y), color);
        }
    }

    // Title, axis labels, legend.
    canvas.text(
        (w as i64 - Canvas::text_width(title)) / 2,
        12,
        title,
        BLACK,
    );
    canvas.text(
        (frame.left + (frame.right - frame.left) / 2.0) as i64 - Canvas::text_width(x_label) / 2,
        h as i64 - 22,
        x_label,
        BLACK,
    );
    canvas.text(8, 30, y_label, BLACK);
    let mut lx = frame.left as i64;
    let ly = 34;
    for (si, (name, _)) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        canvas.fill_rect(lx, ly, lx + 8, ly + 8, color);
        canvas.text(lx + 12, ly + 1, name, BLACK);
        lx += 12 + Canvas::text_width(name) + 16;
    }

    canvas.save(path)
}

fn bounds(values: &[f64], default_lo: f64, default_hi: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (default_lo, default_hi)
    } else {
        (lo, hi)
    }
}

/// Reliability diagram: per-bin accuracy bars over the unit square plus
/// the identity diagonal; the gap between bars and diagonal is the
/// calibration error the ECE summarizes.
pub fn reliability_diagram(path: &Path, report: &ReliabilityReport) -> Result<()> {
    let (w, h) = (560u32, 560u32);
    let mut canvas = Canvas::new(w, h);
    let frame = Frame {
        left: 64.0,
        right: w as f64 - 24.0,
        top: 56.0,
        bottom: h as f64 - 52.0,
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };

    for i in 0..=5 {
        let v = i as f64 / 5.0;
        canvas.line(frame.left, frame.y(v), frame.right, frame.y(v), GRID);
        let label = fmt_tick(v);
        canvas.text(
            frame.left as i64 - Canvas::text_width(&label) - 6,
            frame.y(v) as i64 - 3,
            &label,
            BLACK,
        );
        canvas.line(frame.x(v), frame.bottom, frame.x(v), frame.bottom + 4.0, BLACK);
        canvas.text(
            frame.x(v) as i64 - Canvas::text_width(&label) / 2,
            frame.bottom as i64 + 8,
            &label,
            BLACK,
        );
    }

    for bin in &report.bins {
        if bin.count == 0 {
            continue;
        }
        let x0 = frame.x(bin.lo).round() as i64 + 1;
        let x1 = frame.x(bin.hi).round() as i64 - 1;
        let y0 = frame.y(bin.accuracy).round() as i64;
        let y1 = frame.y(0.0).round() as i64;
        canvas.fill_rect(x0, y0, x1.max(x0), y1, BAR);
    }

    canvas.dashed_line(
        frame.x(0.0),
        frame.y(0.0),
        frame.x(1.0),
        frame.y(1.0),
        DIAG,
    );
    canvas.line(frame.left, frame.top, frame.left, frame.bottom, BLACK);
    canvas.line(frame.left, frame.bottom, frame.right, frame.bottom, BLACK);

    let title = "RELIABILITY DIAGRAM";
    canvas.text((w as i64 - Canvas::text_width(title)) / 2, 12, title, BLACK);
    canvas.text(
        frame.left as i64,
        30,
        &format!("ECE = {:.4}  N = {}", report.ece, report.total),
        BLACK,
    );
    canvas.text(
        (frame.left + (frame.right - frame.left) / 2.0) as i64 - Canvas::text_width("CONFIDENCE") / 2,
        h as i64 - 22,
        "CONFIDENCE",
        BLACK,
    );
    canvas.text(8, 30, "ACCURACY", BLACK);

    canvas.save(path)
}
