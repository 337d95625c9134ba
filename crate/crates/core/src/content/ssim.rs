//! Cheap single-scale SSIM between two frames of possibly different sizes.

use super::gray::resize_bilinear;
use crate::error::Result;
use crate::session::GrayFrame;

pub const SSIM_FLOOR: f64 = 0.01;
/// Widest working resolution for the comparison.
pub const SSIM_CAP_WIDTH: usize = 480;

const WINDOW: usize = 8;
const C_A: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C_B: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Both frames are resampled to the smaller one's size (capped at 480 px
/// wide), compared over non-overlapping 8x8 windows, and the mean window
/// score is clamped to `[0.01, 1]`.
pub fn fast_ssim(a: &GrayFrame, b: &GrayFrame) -> Result<f64> {
    let key = |f: &GrayFrame| (f.width() * f.height(), f.width(), f.height());
    let smaller = if key(a) <= key(b) { a } else { b };
    let (mut w, mut h) = (smaller.width(), smaller.height());
    if w > SSIM_CAP_WIDTH {
        h = ((h as f64 * SSIM_CAP_WIDTH as f64 / w as f64).round() as usize).max(1);
        w = SSIM_CAP_WIDTH;
    }
    let a = resize_bilinear(a, w, h)?;
    let b = resize_bilinear(b, w, h)?;

    let (win_w, win_h) = (WINDOW.min(w), WINDOW.min(h));
    let (nx, ny) = (w / win_w, h / win_h);
    let mut sum = 0.0;
    for wy in 0..ny {
        for wx in 0..nx {
            sum += window_ssim(&a, &b, wx * win_w, wy * win_h, win_w, win_h);
        }
    }
    Ok((sum / (nx * ny) as f64).clamp(SSIM_FLOOR, 1.0))
}

fn window_ssim(a: &GrayFrame, b: &GrayFrame, x0: usize, y0: usize, ww: usize, wh: usize) -> f64 {
    let n = (ww * wh) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y0 + wh {
        let (ra, rb) = (&a.row(y)[x0..x0 + ww], &b.row(y)[x0..x0 + ww]);
        sa += ra.iter().sum::<f64>();
        sb += rb.iter().sum::<f64>();
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for y in y0..y0 + wh {
        let (ra, rb) = (&a.row(y)[x0..x0 + ww], &b.row(y)[x0..x0 + ww]);
        for (pa, pb) in ra.iter().zip(rb) {
            let (da, db) = (pa - ma, pb - mb);
            vaa += da * da;
            vbb += db * db;
            vab += da * db;
        }
    }
    let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
    ((2.0 * ma * mb + C_A) * (2.0 * vab + C_B)) / ((ma * ma + mb * mb + C_A) * (vaa + vbb + C_B))
}
