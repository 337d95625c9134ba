//! Non-uniform frame sampling.
//!
//! Each segment is split into a start half and an end half. A budget of `fr`
//! frames is divided between the halves by maximizing
//! `w_s * ln(fr_s) + w_e * ln(fr_e)` subject to `fr_s + fr_e = fr`, whose
//! real-valued optimum puts `fr_s / fr_e = w_s / w_e`. The integer split is
//! found by exhaustive search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::correlation::srocc;

/// Floor applied to calibrated weights so both stay positive.
pub const WEIGHT_FLOOR: f64 = 0.01;

/// Relative slack under which two objective values count as a tie.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub w_s: f64,
    pub w_e: f64,
}

impl SamplingWeights {
    pub fn new(w_s: f64, w_e: f64) -> Result<Self> {
        let w = Self { w_s, w_e };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.w_s) || !ok(self.w_e) {
            return Err(Error::invalid(format!(
                "sampling weights must be finite and non-negative, got ({}, {})",
                self.w_s, self.w_e
            )));
        }
        if self.w_s + self.w_e <= 0.0 {
            return Err(Error::invalid("sampling weights have zero total"));
        }
        Ok(())
    }
}

impl Default for SamplingWeights {
    /// End half weighted twice the start half.
    fn default() -> Self {
        Self { w_s: 1.0, w_e: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPlan {
    pub fr: usize,
    pub fr_s: usize,
    pub fr_e: usize,
    pub indices_s: Vec<usize>,
    pub indices_e: Vec<usize>,
}

impl SamplingPlan {
    /// All sampled indices in playback order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices_s.iter().chain(&self.indices_e).copied()
    }
}

/// Splits `fr` frames between the segment halves.
pub fn allocate(fr: usize, weights: SamplingWeights) -> Result<(usize, usize)> {
    let cap = fr.saturating_sub(1);
    allocate_bounded(fr, weights, cap, cap)
}

/// Like [`allocate`] with per-half capacity limits.
fn allocate_bounded(
    fr: usize,
    weights: SamplingWeights,
    max_s: usize,
    max_e: usize,
) -> Result<(usize, usize)> {
    if fr < 2 {
        return Err(Error::invalid(format!("frame budget {fr} is below 2")));
    }
    weights.validate()?;
    let lo = fr.saturating_sub(max_e).max(1);
    let hi = max_s.min(fr - 1);
    if lo > hi {
        return Err(Error::invalid(format!(
            "cannot place {fr} frames into halves of {max_s} and {max_e}"
        )));
    }
    let objective =
        |s: usize| weights.w_s * (s as f64).ln() + weights.w_e * ((fr - s) as f64).ln();

    // ascending fr_s, so the first maximum found has the larger fr_e
    let mut best = lo;
    let mut best_val = objective(lo);
    for s in lo + 1..=hi {
        let v = objective(s);
        if v - best_val > TIE_EPS * best_val.abs().max(1.0) {
            best = s;
            best_val = v;
        }
    }
    Ok((best, fr - best))
}

/// Chooses `fr` concrete frame indices for a segment of `frame_count`
/// frames, evenly spaced within each half.
pub fn plan(frame_count: usize, fr: usize, weights: SamplingWeights) -> Result<SamplingPlan> {
    if frame_count < 2 {
        return Err(Error::invalid(format!(
            "segment has {frame_count} frames, at least 2 are needed"
        )));
    }
    if fr > frame_count {
        return Err(Error::invalid(format!(
            "frame budget {fr} exceeds the segment's {frame_count} frames"
        )));
    }
    let mid = frame_count / 2;
    let (fr_s, fr_e) = allocate_bounded(fr, weights, mid, frame_count - mid)?;
    Ok(SamplingPlan {
        fr,
        fr_s,
        fr_e,
        indices_s: spread(0, mid, fr_s),
        indices_e: spread(mid, frame_count - mid, fr_e),
    })
}

/// `start + floor((k + 0.5) * len / count)` for `k in 0..count`.
fn spread(start: usize, len: usize, count: usize) -> Vec<usize> {
    (0..count)
        .map(|k| start + (2 * k + 1) * len / (2 * count))
        .collect()
}

/// Derives half weights from how well start-half and end-half quality scores
/// rank sessions against their subjective scores.
pub fn calibrate_weights(half_scores: &[(f64, f64)], mos: &[f64]) -> Result<SamplingWeights> {
    if half_scores.len() != mos.len() {
        return Err(Error::invalid(format!(
            "{} score pairs but {} MOS values",
            half_scores.len(),
            mos.len()
        )));
    }
    if mos.len() < 3 {
        return Err(Error::invalid(format!(
            "calibration needs at least 3 sessions, got {}",
            mos.len()
        )));
    }
    let q_s: Vec<f64> = half_scores.iter().map(|p| p.0).collect();
    let q_e: Vec<f64> = half_scores.iter().map(|p| p.1).collect();
    let w_s = srocc(&q_s, mos)?.max(WEIGHT_FLOOR);
    let w_e = srocc(&q_e, mos)?.max(WEIGHT_FLOOR);
    SamplingWeights::new(w_s, w_e)
}
