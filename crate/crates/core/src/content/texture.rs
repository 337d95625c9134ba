//! Macroblock texture.
//!
//! For each complete 16x16 block the absolute deviations of the pixels from
//! the frame's row averages, column averages and their mean are summed; the
//! smallest of the three sums is the block's texture. Block textures are
//! summed over the frame and divided by the number of covered pixels.

use crate::error::{Error, Result};
use crate::session::GrayFrame;

pub const MACROBLOCK: usize = 16;

/// Texture settings. Only 16x16 blocks with partial edge blocks skipped
/// are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextureConfig {
    pub block: usize,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self { block: MACROBLOCK }
    }
}

pub fn texture(frame: &GrayFrame, cfg: TextureConfig) -> Result<f64> {
    if cfg.block != MACROBLOCK {
        return Err(Error::invalid(format!(
            "macroblock size {} unsupported, only {MACROBLOCK}",
            cfg.block
        )));
    }
    let (w, h) = (frame.width(), frame.height());
    if w < MACROBLOCK || h < MACROBLOCK {
        return Err(Error::invalid(format!(
            "frame {w}x{h} is smaller than one macroblock"
        )));
    }
    if frame.is_integral() {
        Ok(texture_exact(frame))
    } else {
        Ok(texture_float(frame))
    }
}

/// Integer evaluation for frames of whole-valued pixels. Every deviation is
/// scaled by `2*W*H`, which clears the averaging denominators, so block sums
/// and the min comparison are exact.
fn texture_exact(frame: &GrayFrame) -> f64 {
    let (w, h) = (frame.width(), frame.height());
    let px: Vec<i64> = frame.pixels().iter().map(|&p| p as i64).collect();
    let mut row_sum = vec![0i64; h];
    let mut col_sum = vec![0i64; w];
    for y in 0..h {
        for x in 0..w {
            let g = px[y * w + x];
            row_sum[y] += g;
            col_sum[x] += g;
        }
    }
    let (wi, hi) = (w as i128, h as i128);
    let (bw, bh) = (w / MACROBLOCK, h / MACROBLOCK);
    let mut total: i128 = 0;
    for by in 0..bh {
        for bx in 0..bw {
            let (mut hor, mut ver, mut dia) = (0i128, 0i128, 0i128);
            for y in by * MACROBLOCK..(by + 1) * MACROBLOCK {
                let rs = row_sum[y] as i128;
                for x in bx * MACROBLOCK..(bx + 1) * MACROBLOCK {
                    let g = px[y * w + x] as i128;
                    let cs = col_sum[x] as i128;
                    hor += (rs - wi * g).abs();
                    ver += (cs - hi * g).abs();
                    dia += (wi * cs + hi * rs - 2 * wi * hi * g).abs();
                }
            }
            total += (2 * hi * hor).min(2 * wi * ver).min(dia);
        }
    }
    let covered = (bw * bh * MACROBLOCK * MACROBLOCK) as i128;
    total as f64 / (2 * wi * hi * covered) as f64
}

fn texture_float(frame: &GrayFrame) -> f64 {
    let (w, h) = (frame.width(), frame.height());
    let mut ra = vec![0.0; h];
    let mut ca = vec![0.0; w];
    for y in 0..h {
        for (x, &g) in frame.row(y).iter().enumerate() {
            ra[y] += g;
            ca[x] += g;
        }
    }
    ra.iter_mut().for_each(|v| *v /= w as f64);
    ca.iter_mut().for_each(|v| *v /= h as f64);

    let (bw, bh) = (w / MACROBLOCK, h / MACROBLOCK);
    let mut total = 0.0;
    for by in 0..bh {
        for bx in 0..bw {
            let (mut hor, mut ver, mut dia) = (0.0, 0.0, 0.0);
            for y in by * MACROBLOCK..(by + 1) * MACROBLOCK {
                let row = frame.row(y);
                for x in bx * MACROBLOCK..(bx + 1) * MACROBLOCK {
                    let g = row[x];
                    hor += (ra[y] - g).abs();
                    ver += (ca[x] - g).abs();
                    dia += (0.5 * (ca[x] + ra[y]) - g).abs();
                }
            }
            total += f64::min(hor, ver).min(dia);
        }
    }
    total / (bw * bh * MACROBLOCK * MACROBLOCK) as f64
}

/// Mean texture over a segment's sampled frames.
pub fn texture_segment(frames: &[GrayFrame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames to compute texture over"));
    }
    let sum = frames
        .iter()
        .map(|f| texture(f, TextureConfig::default()))
        .sum::<Result<f64>>()?;
    Ok(sum / frames.len() as f64)
}
