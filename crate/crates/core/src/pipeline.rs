//! The per-segment scoring pipeline.
//!
//! For every segment the sampled frames are loaded, run through the backbone
//! and texture measure (in parallel across frames), fused by the GRU, and
//! joined with the previous segment through the switching penalty. The newest
//! five-segment window is then assembled and regressed. Loading and feature
//! extraction of segment `t + 1` overlap with the regression of segment `t`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::content::{
    pooled_stats, resize_to_max_dim, texture, BackboneParams, GruParams, PooledStats,
    TextureConfig,
};
use crate::error::{Error, Result};
use crate::features::{
    assemble, penalty_switch, FeatureVector, PenaltyConfig, SegmentFeatures,
};
use crate::sampler::{plan, SamplingWeights};
use crate::session::{window_at, FrameSource, GrayFrame, Segment, SessionManifest, WINDOW_LEN};
use crate::svr::{SvrModel, SvrParams};

pub const TINY_BACKBONE: &str = "tiny";

fn default_fr() -> usize {
    10
}

fn default_backbone() -> String {
    TINY_BACKBONE.to_string()
}

fn default_c1() -> f64 {
    2.0
}

fn default_max_dim() -> usize {
    512
}

/// Pipeline settings as read from a JSON config file. Relative paths are
/// resolved against the config file's directory by [`PipelineConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_fr")]
    pub fr_per_segment: usize,
    /// Explicit half weights. Mutually exclusive with `sampling_weights_path`.
    #[serde(default)]
    pub sampling_weights: Option<SamplingWeights>,
    /// Weights file written by `calibrate-weights`.
    #[serde(default)]
    pub sampling_weights_path: Option<PathBuf>,
    /// `"tiny"` or a tensor container path.
    #[serde(default = "default_backbone")]
    pub backbone: String,
    #[serde(default)]
    pub backbone_seed: u64,
    #[serde(default)]
    pub gru_weights: Option<PathBuf>,
    #[serde(default)]
    pub gru_seed: u64,
    #[serde(default = "default_c1")]
    pub c1_s: f64,
    /// Defaults to the session's highest bitrate.
    #[serde(default)]
    pub c2_kbps: Option<f64>,
    #[serde(default = "default_max_dim")]
    pub max_backbone_dim: usize,
    #[serde(default)]
    pub realtime: bool,
    #[serde(default)]
    pub svr: SvrParams,
    #[serde(default)]
    pub grid_search: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fr_per_segment: default_fr(),
            sampling_weights: None,
            sampling_weights_path: None,
            backbone: default_backbone(),
            backbone_seed: 0,
            gru_weights: None,
            gru_seed: 0,
            c1_s: default_c1(),
            c2_kbps: None,
            max_backbone_dim: default_max_dim(),
            realtime: false,
            svr: SvrParams::default(),
            grid_search: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.sampling_weights_path {
            *p = base.join(&*p);
        }
        if let Some(p) = &mut self.gru_weights {
            *p = base.join(&*p);
        }
        if self.backbone != TINY_BACKBONE {
            self.backbone = base.join(&self.backbone).display().to_string();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("config: {m}")));
        if self.fr_per_segment < 2 {
            return bad(format!("fr_per_segment must be >= 2, got {}", self.fr_per_segment));
        }
        if self.sampling_weights.is_some() && self.sampling_weights_path.is_some() {
            return bad("give sampling_weights or sampling_weights_path, not both".into());
        }
        if let Some(w) = &self.sampling_weights {
            w.validate()?;
        }
        if self.max_backbone_dim == 0 {
            return bad("max_backbone_dim must be positive".into());
        }
        PenaltyConfig {
            c1_s: self.c1_s,
            c2_kbps: self.c2_kbps.unwrap_or(1.0),
        }
        .validate()?;
        let files = [
            self.sampling_weights_path.as_deref(),
            self.gru_weights.as_deref(),
            (self.backbone != TINY_BACKBONE).then(|| Path::new(&self.backbone)),
        ];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Canonical JSON, used for the config digest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Reads a weights file as written by `calibrate-weights`.
pub fn load_weights(path: &Path) -> Result<SamplingWeights> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let w: SamplingWeights = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        msg: e.to_string(),
    })?;
    w.validate()?;
    Ok(w)
}

/// Content features of one segment plus the frames needed at its
/// boundaries.
#[derive(Debug, Clone)]
struct SegmentOutput {
    features: SegmentFeatures,
    first: GrayFrame,
    last: GrayFrame,
    compute_s: f64,
}

/// One row of the assess output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub t: usize,
    pub qoe: f64,
    /// Compute seconds so far over playback seconds so far.
    pub time_ratio: f64,
}

/// Frames held in memory, keyed by frame reference.
#[derive(Debug, Default, Clone)]
pub struct MemoryFrames {
    pub frames: HashMap<String, GrayFrame>,
}

impl FrameSource for MemoryFrames {
    fn load(&self, _: &SessionManifest, segment: &Segment, frame: usize) -> Result<GrayFrame> {
        let name = segment
            .frame_refs
            .get(frame)
            .ok_or_else(|| Error::invalid(format!("segment {} has no frame {frame}", segment.index)))?;
        self.frames
            .get(name)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("frame {name} not in memory")))
    }
}

/// A ready-to-run pipeline with its parameters loaded.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub fr: usize,
    pub weights: SamplingWeights,
    pub backbone: BackboneParams,
    pub gru: GruParams,
    pub c1_s: f64,
    pub c2_kbps: Option<f64>,
    pub max_backbone_dim: usize,
    pub realtime: bool,
    /// Extra time spent inside the timed region of every segment. Only for
    /// exercising the deadline check.
    pub debug_delay: Duration,
}

impl Pipeline {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let weights = match (&cfg.sampling_weights, &cfg.sampling_weights_path) {
            (Some(w), _) => *w,
            (None, Some(p)) => load_weights(p)?,
            (None, None) => SamplingWeights::default(),
        };
        let backbone = if cfg.backbone == TINY_BACKBONE {
            BackboneParams::tiny(cfg.backbone_seed)
        } else {
            BackboneParams::load(Path::new(&cfg.backbone))?
        };
        let gru = match &cfg.gru_weights {
            Some(p) => GruParams::load(p)?,
            None => GruParams::seeded(cfg.gru_seed),
        };
        Ok(Self {
            fr: cfg.fr_per_segment,
            weights,
            backbone,
            gru,
            c1_s: cfg.c1_s,
            c2_kbps: cfg.c2_kbps,
            max_backbone_dim: cfg.max_backbone_dim,
            realtime: cfg.realtime,
            debug_delay: Duration::ZERO,
        })
    }

    fn penalty_config(&self, manifest: &SessionManifest) -> Result<PenaltyConfig> {
        let c2 = self.c2_kbps.unwrap_or_else(|| {
            let max = manifest.max_bitrate_kbps();
            // an all-zero ladder never produces a bitrate drop
            if max > 0.0 {
                max
            } else {
                1.0
            }
        });
        PenaltyConfig::new(self.c1_s, c2)
    }

    fn load_sampled(
        &self,
        manifest: &SessionManifest,
        seg: &Segment,
        source: &dyn FrameSource,
    ) -> Result<Vec<GrayFrame>> {
        let plan = plan(seg.frame_count(), self.fr, self.weights)?;
        let frames = plan
            .indices()
            .map(|i| source.load(manifest, seg, i))
            .collect::<Result<Vec<_>>>()?;
        if let Some(f) = frames.iter().find(|f| f.height() != seg.height) {
            return Err(Error::Validation(format!(
                "frame height {} does not match declared height {}",
                f.height(),
                seg.height
            )));
        }
        Ok(frames)
    }

    fn frame_stats(&self, frame: &GrayFrame) -> Result<(PooledStats, f64)> {
        let small = resize_to_max_dim(frame, self.max_backbone_dim)?;
        let map = self.backbone.forward(&small)?;
        let stats = pooled_stats(&map.data)?;
        Ok((stats, texture(frame, TextureConfig::default())?))
    }

    /// Timed part of a segment: everything after its frames are in memory.
    fn extract(&self, seg: &Segment, frames: Vec<GrayFrame>) -> Result<SegmentOutput> {
        let start = Instant::now();
        if !self.debug_delay.is_zero() {
            thread::sleep(self.debug_delay);
        }
        let per_frame = frames
            .par_iter()
            .map(|f| self.frame_stats(f))
            .collect::<Result<Vec<_>>>()?;
        let stats: Vec<PooledStats> = per_frame.iter().map(|p| p.0).collect();
        let tex = per_frame.iter().map(|p| p.1).sum::<f64>() / per_frame.len() as f64;
        let features = SegmentFeatures {
            resolution: crate::features::reward_resolution(seg),
            spatiotemporal: self.gru.fuse(&stats)?,
            texture: tex,
        };
        let first = frames[0].clone();
        let last = frames.into_iter().next_back().expect("plan has frames");
        Ok(SegmentOutput {
            features,
            first,
            last,
            compute_s: start.elapsed().as_secs_f64(),
        })
    }

    fn segment_output(
        &self,
        manifest: &SessionManifest,
        seg: &Segment,
        source: &dyn FrameSource,
    ) -> Result<SegmentOutput> {
        let frames = self
            .load_sampled(manifest, seg, source)
            .map_err(|e| e.in_segment(seg.index))?;
        self.extract(seg, frames).map_err(|e| e.in_segment(seg.index))
    }

    /// Penalty for the boundary into `next`; the stall charged to `next` is
    /// the one at this boundary.
    fn boundary(
        &self,
        prev: (&Segment, &SegmentOutput),
        next: (&Segment, &SegmentOutput),
        cfg: &PenaltyConfig,
    ) -> Result<f64> {
        penalty_switch(prev.0, next.0, next.0.stall_s, &prev.1.last, &next.1.first, cfg)
    }

    fn window_features(
        &self,
        manifest: &SessionManifest,
        t: usize,
        outputs: &HashMap<usize, SegmentOutput>,
        boundaries: &HashMap<usize, f64>,
    ) -> Result<FeatureVector> {
        let window = window_at(manifest, t)?;
        let idx = window.indices();
        let per_segment: Vec<SegmentFeatures> =
            idx.iter().map(|i| outputs[i].features).collect();
        // padded boundaries are overridden inside assemble
        let penalties: Vec<f64> = (1..WINDOW_LEN)
            .map(|k| boundaries.get(&idx[k]).copied().unwrap_or(1.0))
            .collect();
        assemble(&window, &per_segment, &manifest.stalls()[..t], &penalties)
    }

    /// Feature vector of the session's final window. Only the segments in
    /// that window are decoded.
    pub fn session_features(
        &self,
        manifest: &SessionManifest,
        source: &dyn FrameSource,
    ) -> Result<FeatureVector> {
        let cfg = self.penalty_config(manifest)?;
        let total = manifest.len();
        let first = total.saturating_sub(WINDOW_LEN - 1).max(1);
        let mut outputs = HashMap::new();
        let mut boundaries = HashMap::new();
        for t in first..=total {
            let seg = &manifest.segments[t - 1];
            let out = self.segment_output(manifest, seg, source)?;
            if t > first {
                let prev = &manifest.segments[t - 2];
                let p = self
                    .boundary((prev, &outputs[&(t - 1)]), (seg, &out), &cfg)
                    .map_err(|e| e.in_segment(t))?;
                boundaries.insert(t, p);
            }
            outputs.insert(t, out);
        }
        self.window_features(manifest, total, &outputs, &boundaries)
    }

    /// Scores every window `t = 1..T`. Frame loading runs ahead of the
    /// regression by one segment and is excluded from the time ratio.
    pub fn assess(
        &self,
        manifest: &SessionManifest,
        model: &SvrModel,
        source: &dyn FrameSource,
    ) -> Result<Vec<ScoreRow>> {
        let cfg = self.penalty_config(manifest)?;
        let (tx, rx) = sync_channel::<Result<SegmentOutput>>(1);
        // rx lives in the scope closure so an early return unblocks the sender
        thread::scope(move |scope| {
            scope.spawn(move || {
                for seg in &manifest.segments {
                    let out = self.segment_output(manifest, seg, source);
                    let failed = out.is_err();
                    if tx.send(out).is_err() || failed {
                        break;
                    }
                }
            });

            let mut rows = Vec::with_capacity(manifest.len());
            let mut outputs: HashMap<usize, SegmentOutput> = HashMap::new();
            let mut boundaries = HashMap::new();
            let (mut compute, mut playback) = (0.0, 0.0);
            for seg in &manifest.segments {
                let t = seg.index;
                let out = rx
                    .recv()
                    .map_err(|_| Error::invalid("extraction stage stopped early"))??;
                let start = Instant::now();
                let score = (|| {
                    if t > 1 {
                        let prev = &manifest.segments[t - 2];
                        let p = self.boundary((prev, &outputs[&(t - 1)]), (seg, &out), &cfg)?;
                        boundaries.insert(t, p);
                    }
                    let extract_s = out.compute_s;
                    outputs.insert(t, out);
                    // keep only what the next windows can reach
                    outputs.retain(|&i, _| i + WINDOW_LEN > t || i == 1);
                    let fv = self.window_features(manifest, t, &outputs, &boundaries)?;
                    model.predict(&fv).map(|q| (q, extract_s))
                })()
                .map_err(|e| e.in_segment(t))?;
                let (qoe, extract_s) = score;
                let seg_compute = extract_s + start.elapsed().as_secs_f64();
                if self.realtime && seg_compute > seg.duration_s {
                    return Err(Error::DeadlineExceeded {
                        index: t,
                        compute_s: seg_compute,
                        duration_s: seg.duration_s,
                    });
                }
                compute += seg_compute;
                playback += seg.duration_s;
                rows.push(ScoreRow {
                    t,
                    qoe,
                    time_ratio: compute / playback,
                });
            }
            Ok(rows)
        })
    }

    /// Compute seconds over playback seconds for scoring every window of
    /// `manifest`.
    pub fn time_ratio(
        &self,
        manifest: &SessionManifest,
        model: &SvrModel,
        source: &dyn FrameSource,
    ) -> Result<f64> {
        let rows = self.assess(manifest, model, source)?;
        Ok(rows.last().map_or(0.0, |r| r.time_ratio))
    }
}

/// Writes score rows as CSV with header `t,qoe`.
pub fn write_scores<W: std::io::Write>(out: W, rows: &[ScoreRow]) -> Result<()> {
    write_rows(out, ["t", "qoe"], rows.iter().map(|r| [r.t.to_string(), r.qoe.to_string()]))
}

/// Writes the cumulative time ratios as CSV with header `t,time_ratio`.
/// Kept apart from the scores because it depends on the wall clock.
pub fn write_timing<W: std::io::Write>(out: W, rows: &[ScoreRow]) -> Result<()> {
    write_rows(
        out,
        ["t", "time_ratio"],
        rows.iter().map(|r| [r.t.to_string(), format!("{:.6}", r.time_ratio)]),
    )
}

fn write_rows<W: std::io::Write>(
    out: W,
    header: [&str; 2],
    rows: impl Iterator<Item = [String; 2]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))
}
