//! Minimal PNG chart rendering: a grouped score bar chart and the training
//! loss curve, drawn with a built-in 5x7 pixel font so the output has no
//! font dependencies.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::trainer::TrainHistory;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([210, 210, 210]);
const DICE_FILL: Rgb<u8> = Rgb([70, 120, 190]);
const IOU_FILL: Rgb<u8> = Rgb([225, 140, 50]);
const LOSS_LINE: Rgb<u8> = Rgb([70, 120, 190]);
const VAL_LINE: Rgb<u8> = Rgb([60, 155, 80]);

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;
const GLYPH_STEP: u32 = 6;

#[rustfmt::skip]
const GLYPHS: &[(char, [u8; 7])] = &[
    ('A', [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('B', [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110]),
    ('C', [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('D', [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110]),
    ('E', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]),
    ('F', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('G', [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111]),
    ('H', [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('I', [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('J', [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100]),
    ('K', [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]),
    ('L', [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111]),
    ('M', [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001]),
    ('N', [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001]),
    ('O', [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('P', [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('Q', [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101]),
    ('R', [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]),
    ('S', [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110]),
    ('T', [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('U', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('V', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('W', [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b11011, 0b10001]),
    ('X', [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001]),
    ('Y', [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('Z', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]),
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
    ('.', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100]),
    ('-', [0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000]),
    ('_', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b11111]),
    (':', [0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000]),
    ('/', [0b00001, 0b00010, 0b00010, 0b00100, 0b01000, 0b01000, 0b10000]),
    ('%', [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011]),
    (' ', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000]),
];

fn glyph(c: char) -> [u8; 7] {
    let upper = c.to_ascii_uppercase();
    GLYPHS
        .iter()
        .find(|(g, _)| *g == upper)
        .map(|(_, rows)| *rows)
        // Unknown characters render as a hollow box.
        .unwrap_or([0b11111, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11111])
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c);
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - dx)) != 0 {
                    put(
                        img,
                        x + i as i64 * GLYPH_STEP as i64 + dx as i64,
                        y + dy as i64,
                        color,
                    );
                }
            }
        }
    }
}

fn text_width(text: &str) -> i64 {
    text.chars().count() as i64 * GLYPH_STEP as i64 - 1
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, color: Rgb<u8>) {
    for dy in 0..h {
        for dx in 0..w {
            put(img, x + dx, y + dy, color);
        }
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
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

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

struct Frame {
    left: i64,
    top: i64,
    right: i64,
    bottom: i64,
}

impl Frame {
    fn width(&self) -> i64 {
        self.right - self.left
    }
    fn height(&self) -> i64 {
        self.bottom - self.top
    }
    /// Maps a fraction of the y range (0 at the axis floor) to a pixel row.
    fn y_at(&self, frac: f64) -> i64 {
        self.bottom - (frac.clamp(0.0, 1.0) * self.height() as f64).round() as i64
    }
}

fn draw_axes(img: &mut RgbImage, frame: &Frame, y_labels: &[(f64, String)]) {
    for (frac, label) in y_labels {
        let y = frame.y_at(*frac);
        draw_line(img, frame.left, y, frame.right, y, GRID);
        draw_text(
            img,
            frame.left - text_width(label) - 6,
            y - GLYPH_H as i64 / 2,
            label,
            INK,
        );
    }
    draw_line(img, frame.left, frame.top, frame.left, frame.bottom, INK);
    draw_line(img, frame.left, frame.bottom, frame.right, frame.bottom, INK);
}

/// Grouped Dice/IoU bars, one group per dataset, y axis in percent.
pub fn score_bars(path: &Path, report: &MetricsReport) -> Result<()> {
    let (w, h) = (640u32, 400u32);
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    let frame = Frame {
        left: 48,
        top: 28,
        right: w as i64 - 16,
        bottom: h as i64 - 48,
    };
    let y_labels: Vec<(f64, String)> = (0..=4)
        .map(|i| (i as f64 / 4.0, format!("{}", i * 25)))
        .collect();
    draw_axes(&mut img, &frame, &y_labels);

    let n = report.datasets.len().max(1) as i64;
    let group = frame.width() / n;
    let bar = (group / 3).clamp(4, 40);
    for (i, d) in report.datasets.iter().enumerate() {
        let x0 = frame.left + i as i64 * group + group / 2;
        for (j, (value, color)) in [(d.dice, DICE_FILL), (d.iou, IOU_FILL)].iter().enumerate() {
            let top = frame.y_at(*value);
            let x = x0 - bar + j as i64 * (bar + 2);
            fill_rect(&mut img, x, top, bar, frame.bottom - top, *color);
        }
        let label: String = d.name.chars().take((group / GLYPH_STEP as i64) as usize).collect();
        draw_text(
            &mut img,
            x0 - text_width(&label) / 2,
            frame.bottom + 8,
            &label,
            INK,
        );
    }

    let legend_x = frame.right - 120;
    for (j, (name, color)) in [("DICE", DICE_FILL), ("IOU", IOU_FILL)].iter().enumerate() {
        let y = 8 + j as i64 * 12;
        fill_rect(&mut img, legend_x, y, 8, 8, *color);
        draw_text(&mut img, legend_x + 12, y, name, INK);
    }
    draw_text(
        &mut img,
        frame.left,
        8,
        &format!("SCORES AT THRESHOLD {:.2}", report.threshold),
        INK,
    );
    save(&img, path)
}

/// Total loss per step, with validation Dice (0 to 1 against the right edge)
/// overlaid where it was measured.
pub fn training_curve(path: &Path, history: &TrainHistory) -> Result<()> {
    let (w, h) = (640u32, 400u32);
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    let frame = Frame {
        left: 48,
        top: 28,
        right: w as i64 - 16,
        bottom: h as i64 - 36,
    };
    let losses: Vec<(u64, f64)> = history
        .rows
        .iter()
        .map(|r| (r.step, r.losses.total()))
        .collect();
    let max_loss = losses
        .iter()
        .map(|(_, l)| *l)
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let max_step = losses.last().map(|(s, _)| *s).unwrap_or(1).max(1);
    let min_step = losses.first().map(|(s, _)| *s).unwrap_or(0);
    let span = (max_step - min_step).max(1) as f64;

    let y_labels: Vec<(f64, String)> = (0..=4)
        .map(|i| (i as f64 / 4.0, format!("{:.2}", max_loss * i as f64 / 4.0)))
        .collect();
    draw_axes(&mut img, &frame, &y_labels);

    let x_at = |step: u64| {
        frame.left + ((step - min_step) as f64 / span * frame.width() as f64).round() as i64
    };
    let mut prev: Option<(i64, i64)> = None;
    for (step, loss) in &losses {
        let pt = (x_at(*step), frame.y_at(loss / max_loss));
        if let Some((px, py)) = prev {
            draw_line(&mut img, px, py, pt.0, pt.1, LOSS_LINE);
        }
        prev = Some(pt);
    }

    let mut prev_val: Option<(i64, i64)> = None;
    for row in &history.rows {
        if let Some(dice) = row.val_dice {
            let pt = (x_at(row.step), frame.y_at(dice));
            fill_rect(&mut img, pt.0 - 1, pt.1 - 1, 3, 3, VAL_LINE);
            if let Some((px, py)) = prev_val {
                draw_line(&mut img, px, py, pt.0, pt.1, VAL_LINE);
            }
            prev_val = Some(pt);
        }
    }

    draw_text(&mut img, frame.left, 8, "TRAINING LOSS", INK);
    let legend = "LOSS / VAL DICE 0-1";
    draw_text(&mut img, frame.right - text_width(legend), 8, legend, INK);
    draw_text(
        &mut img,
        frame.right - text_width(&max_step.to_string()),
        frame.bottom + 8,
        &max_step.to_string(),
        INK,
    );
    save(&img, path)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SupervisionKind;
    use crate::losses::LossBreakdown;
    use crate::metrics::{DatasetScores, WavgScores};
    use crate::trainer::HistoryRow;

    fn sample_report() -> MetricsReport {
        MetricsReport {
            datasets: vec![
                DatasetScores {
                    name: "alpha".into(),
                    count: 3,
                    dice: 0.8,
                    iou: 0.7,
                },
                DatasetScores {
                    name: "beta".into(),
                    count: 2,
                    dice: 0.9,
                    iou: 0.85,
                },
            ],
            wavg: WavgScores { dice: 0.84, iou: 0.76 },
            threshold: 0.5,
        }
    }

    #[test]
    fn bar_chart_paints_bars_on_white() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.png");
        score_bars(&path, &sample_report()).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (640, 400));
        let mut dice_px = 0;
        let mut iou_px = 0;
        for p in img.pixels() {
            if *p == DICE_FILL {
                dice_px += 1;
            }
            if *p == IOU_FILL {
                iou_px += 1;
            }
        }
        assert!(dice_px > 100, "dice bars missing ({dice_px} px)");
        assert!(iou_px > 100, "iou bars missing ({iou_px} px)");
    }

    #[test]
    fn curve_chart_plots_losses_and_val_points() {
        let rows: Vec<HistoryRow> = (1..=50)
            .map(|step| HistoryRow {
                step,
                kind: SupervisionKind::Pixel,
                losses: LossBreakdown {
                    pixel: 1.0 / step as f64,
                    ..Default::default()
                },
                val_dice: (step % 10 == 0).then_some(0.5 + step as f64 / 200.0),
            })
            .collect();
        let history = TrainHistory { rows };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.png");
        training_curve(&path, &history).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        let loss_px = img.pixels().filter(|p| **p == LOSS_LINE).count();
        let val_px = img.pixels().filter(|p| **p == VAL_LINE).count();
        assert!(loss_px > 200, "loss line missing ({loss_px} px)");
        assert!(val_px > 20, "val markers missing ({val_px} px)");
    }

    #[test]
    fn text_renderer_marks_unknown_glyphs() {
        let mut img = RgbImage::from_pixel(60, 12, WHITE);
        draw_text(&mut img, 1, 1, "A?", INK);
        let ink_px = img.pixels().filter(|p| **p == INK).count();
        // 'A' has 18 lit pixels, the unknown-box fallback has 20.
        assert_eq!(ink_px, 38);
    }
}
