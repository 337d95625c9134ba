use crate::error::{Error, Result};
use crate::session::GrayFrame;

/// Interleaved 8-bit image with 1 or 3 channels.
#[derive(Debug, Clone)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Luma conversion; gray input passes through unchanged, RGB uses BT.601
/// weights without quantizing the result.
pub fn to_gray(image: &ColorImage) -> Result<GrayFrame> {
    let expected = image.width * image.height * image.channels;
    if image.data.len() != expected {
        return Err(Error::invalid(format!(
            "image buffer holds {} bytes, expected {expected}",
            image.data.len()
        )));
    }
    match image.channels {
        1 => GrayFrame::from_bytes(image.width, image.height, &image.data),
        3 => {
            let luma = image
                .data
                .chunks_exact(3)
                .map(|px| {
                    (0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]))
                        .clamp(0.0, 255.0)
                })
                .collect();
            GrayFrame::new(image.width, image.height, luma)
        }
        c => Err(Error::invalid(format!("unsupported channel count {c}"))),
    }
}

/// Bilinear resampling with pixel-center alignment and clamped borders.
pub fn resize_bilinear(frame: &GrayFrame, width: usize, height: usize) -> Result<GrayFrame> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("cannot resize to {width}x{height}")));
    }
    if width == frame.width() && height == frame.height() {
        return Ok(frame.clone());
    }
    let (sw, sh) = (frame.width(), frame.height());
    let sx = sw as f64 / width as f64;
    let sy = sh as f64 / height as f64;

    let taps = |dst: usize, scale: f64, limit: usize| {
        let pos = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(limit - 1);
        let i1 = (i0 + 1).min(limit - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| taps(x, sx, sw)).collect();

    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, sh);
        let (r0, r1) = (frame.row(y0), frame.row(y1));
        for &(x0, x1, fx) in &cols {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push((top + (bottom - top) * fy).clamp(0.0, 255.0));
        }
    }
    GrayFrame::new(width, height, out)
}

/// Downscales so neither side exceeds `max_dim`, keeping the aspect ratio.
pub fn resize_to_max_dim(frame: &GrayFrame, max_dim: usize) -> Result<GrayFrame> {
    let longest = frame.width().max(frame.height());
    if longest <= max_dim {
        return Ok(frame.clone());
    }
    let scale = max_dim as f64 / longest as f64;
    let w = ((frame.width() as f64 * scale).round() as usize).clamp(1, max_dim);
    let h = ((frame.height() as f64 * scale).round() as usize).clamp(1, max_dim);
    resize_bilinear(frame, w, h)
}
