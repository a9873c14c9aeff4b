//! PNG rendering of attention heatmaps with the per-frame
//! probability/label strip underneath. CSV stays the normative
//! artifact; these are for eyeballing runs.

use anyhow::Result;
use dasmon::features::FeatureSequence;
use image::{Rgb, RgbImage};
use ndarray::Array2;
use std::path::Path;

const CLASS_COLORS: [[u8; 3]; 3] = [
    [120, 120, 120], // Noise
    [66, 135, 245],  // Car
    [235, 110, 50],  // Bus
];

// compact viridis-like ramp
fn colormap(v: f64) -> Rgb<u8> {
    let anchors: [(f64, [f64; 3]); 5] = [
        (0.00, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.50, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.00, [253.0, 231.0, 37.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    for pair in anchors.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if v <= t1 {
            let f = if t1 > t0 { (v - t0) / (t1 - t0) } else { 0.0 };
            return Rgb([
                (c0[0] + f * (c1[0] - c0[0])) as u8,
                (c0[1] + f * (c1[1] - c0[1])) as u8,
                (c0[2] + f * (c1[2] - c0[2])) as u8,
            ]);
        }
    }
    Rgb([253, 231, 37])
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Probability strip (3 rows) plus predicted/true label bands.
fn draw_strip(img: &mut RgbImage, probs: &Array2<f64>, seq: &FeatureSequence, y0: u32, cell: u32) {
    let t = probs.nrows() as u32;
    for x in 0..t {
        let row = probs.row(x as usize);
        for c in 0..3u32 {
            let px = colormap(row[c as usize]);
            for dx in 0..cell {
                for dy in 0..cell {
                    img.put_pixel(x * cell + dx, y0 + c * cell + dy, px);
                }
            }
        }
        let pred = argmax(row);
        let truth = seq.labels[x as usize].index();
        for dx in 0..cell {
            for dy in 0..cell {
                img.put_pixel(
                    x * cell + dx,
                    y0 + 3 * cell + dy,
                    Rgb(CLASS_COLORS[pred]),
                );
                img.put_pixel(
                    x * cell + dx,
                    y0 + 4 * cell + dy,
                    Rgb(CLASS_COLORS[truth]),
                );
            }
        }
    }
}

/// T×T temporal attention heatmap over the label strip.
pub fn heatmap_png(
    weights: &Array2<f64>,
    probs: &Array2<f64>,
    seq: &FeatureSequence,
    path: &Path,
) -> Result<()> {
    let t = weights.nrows() as u32;
    let cell = (800 / t.max(1)).clamp(1, 8);
    let max = weights.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    let strip = 5 * cell + 2;
    let mut img = RgbImage::new(t * cell, t * cell + strip);
    for (y, row) in weights.rows().into_iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            let px = colormap(v / max);
            for dx in 0..cell {
                for dy in 0..cell {
                    img.put_pixel(x as u32 * cell + dx, y as u32 * cell + dy, px);
                }
            }
        }
    }
    draw_strip(&mut img, probs, seq, t * cell + 2, cell);
    img.save(path)?;
    Ok(())
}

/// Spatial attention: 9 rows (the flattened 3×3 per frame) over time,
/// plus the label strip.
pub fn spatial_png(
    frames: &[Array2<f64>],
    probs: &Array2<f64>,
    seq: &FeatureSequence,
    path: &Path,
) -> Result<()> {
    let t = frames.len() as u32;
    let cell = (800 / t.max(1)).clamp(1, 8);
    let band = 9 * cell;
    let strip = 5 * cell + 2;
    let mut img = RgbImage::new(t * cell, band + strip);
    for (x, frame) in frames.iter().enumerate() {
        for (k, &v) in frame.iter().enumerate() {
            let px = colormap(v);
            for dx in 0..cell {
                for dy in 0..cell {
                    img.put_pixel(x as u32 * cell + dx, k as u32 * cell + dy, px);
                }
            }
        }
    }
    draw_strip(&mut img, probs, seq, band + 2, cell);
    img.save(path)?;
    Ok(())
}
