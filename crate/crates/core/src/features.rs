//! QoS rewards and penalties, and assembly of the 36-entry feature vector.
//!
//! Layout (segment-major inside each group, oldest window segment first):
//!
//! | slots   | content                                          |
//! |---------|--------------------------------------------------|
//! | f1-f5   | frame height of each window segment              |
//! | f6-f25  | four fused backbone statistics per segment       |
//! | f26-f30 | macroblock texture per segment                   |
//! | f31     | startup buffering                                |
//! | f32     | mean rebuffering over segments 2..T              |
//! | f33-f36 | switch/stall penalty at the four window boundaries |

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::content::{fast_ssim, GRU_HIDDEN};
use crate::error::{Error, Result};
use crate::session::{GrayFrame, Segment, SessionWindow, WINDOW_LEN};

pub const FEATURE_COUNT: usize = 36;

/// Identifies the slot layout above; stored in model files.
pub const FEATURE_ORDER_TAG: &str = "has-qoe/segment-major/f1-f36/v1";

/// Feature groups, used for ablation masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Resolution,
    SpatioTemporal,
    Texture,
    Buffering,
    Switching,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Resolution,
        FeatureGroup::SpatioTemporal,
        FeatureGroup::Texture,
        FeatureGroup::Buffering,
        FeatureGroup::Switching,
    ];

    /// Zero-based slot range.
    pub fn slots(self) -> std::ops::Range<usize> {
        match self {
            FeatureGroup::Resolution => 0..5,
            FeatureGroup::SpatioTemporal => 5..25,
            FeatureGroup::Texture => 25..30,
            FeatureGroup::Buffering => 30..32,
            FeatureGroup::Switching => 32..36,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Stall normalizer, seconds.
    pub c1_s: f64,
    /// Bitrate-drop normalizer, kbps.
    pub c2_kbps: f64,
}

impl PenaltyConfig {
    pub fn new(c1_s: f64, c2_kbps: f64) -> Result<Self> {
        let cfg = Self { c1_s, c2_kbps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("C1", self.c1_s), ("C2", self.c2_kbps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Copy with the given groups zeroed out.
    pub fn without(&self, groups: &[FeatureGroup]) -> Self {
        let mut f = self.0;
        for g in groups {
            f[g.slots()].fill(0.0);
        }
        Self(f)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature f{} is not finite", i + 1)));
        }
        Ok(())
    }
}

/// Per-segment features shared by every window the segment appears in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub resolution: f64,
    pub spatiotemporal: [f64; GRU_HIDDEN],
    pub texture: f64,
}

/// Resolution reward: the segment's frame height.
pub fn reward_resolution(seg: &Segment) -> f64 {
    seg.height as f64
}

/// Startup buffering `D_1` and mean rebuffering over `D_2..D_T`; the latter
/// is zero for a single-segment session.
pub fn penalty_buffering(stalls: &[f64]) -> Result<(f64, f64)> {
    let (&first, rest) = stalls
        .split_first()
        .ok_or_else(|| Error::invalid("stall history is empty"))?;
    if let Some(bad) = stalls.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::invalid(format!("stall duration {bad} is negative or not finite")));
    }
    let mean_rebuffer = if rest.is_empty() {
        0.0
    } else {
        rest.iter().sum::<f64>() / rest.len() as f64
    };
    Ok((first, mean_rebuffer))
}

/// Rectified bitrate drop between consecutive segments.
pub fn bitrate_drop(current: &Segment, next: &Segment) -> f64 {
    (current.bitrate_kbps - next.bitrate_kbps).max(0.0)
}

/// Penalty for the boundary `current -> next`: stall and bitrate drop each
/// scale the penalty up, and content similarity across the boundary divides
/// it.
pub fn penalty_switch(
    current: &Segment,
    next: &Segment,
    stall_s: f64,
    last_frame: &GrayFrame,
    first_frame: &GrayFrame,
    cfg: &PenaltyConfig,
) -> Result<f64> {
    cfg.validate()?;
    if !(stall_s.is_finite() && stall_s >= 0.0) {
        return Err(Error::invalid(format!("boundary stall {stall_s} is negative")));
    }
    let ssim = fast_ssim(last_frame, first_frame)?;
    Ok(switch_penalty_value(
        stall_s,
        bitrate_drop(current, next),
        ssim,
        cfg,
    ))
}

pub(crate) fn switch_penalty_value(stall_s: f64, drop_kbps: f64, ssim: f64, cfg: &PenaltyConfig) -> f64 {
    (1.0 + stall_s / cfg.c1_s) * (1.0 + drop_kbps / cfg.c2_kbps) / ssim
}

/// Builds the feature vector for `window`. `per_segment` follows the window
/// order; `stalls` is the session's stall history up to the window's newest
/// segment; `boundary_penalties[k]` belongs to the boundary between window
/// slots `k` and `k + 1`. Boundaries between repeated (padding) segments are
/// forced to the neutral value 1.
pub fn assemble(
    window: &SessionWindow,
    per_segment: &[SegmentFeatures],
    stalls: &[f64],
    boundary_penalties: &[f64],
) -> Result<FeatureVector> {
    if per_segment.len() != WINDOW_LEN {
        return Err(Error::invalid(format!(
            "expected features for {WINDOW_LEN} segments, got {}",
            per_segment.len()
        )));
    }
    if boundary_penalties.len() != WINDOW_LEN - 1 {
        return Err(Error::invalid(format!(
            "expected {} boundary penalties, got {}",
            WINDOW_LEN - 1,
            boundary_penalties.len()
        )));
    }
    let (startup, rebuffer) = penalty_buffering(stalls)?;

    let mut f = [0.0; FEATURE_COUNT];
    for (k, seg) in per_segment.iter().enumerate() {
        f[k] = seg.resolution;
        f[5 + 4 * k..9 + 4 * k].copy_from_slice(&seg.spatiotemporal);
        f[25 + k] = seg.texture;
    }
    f[30] = startup;
    f[31] = rebuffer;
    let idx = window.indices();
    for k in 0..WINDOW_LEN - 1 {
        f[32 + k] = if idx[k] == idx[k + 1] {
            1.0
        } else {
            boundary_penalties[k]
        };
    }
    let fv = FeatureVector(f);
    fv.validate()?;
    Ok(fv)
}

/// Writes feature vectors as CSV with header `f1..f36`.
pub fn write_csv<W: Write>(out: W, rows: &[FeatureVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=FEATURE_COUNT).map(|i| format!("f{i}")).collect();
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.0.iter().map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(())
}
