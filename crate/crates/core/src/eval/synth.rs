//! Procedural streaming sessions with a known quality function.
//!
//! Every content is a pair of drifting sinusoidal gradients, one along each
//! axis. A session streams one content over a random walk on a bitrate
//! ladder; each rung has a resolution and a coding-noise level, and the
//! noise is further scaled by the content's complexity and a per-session
//! encoder factor. Startup and rebuffering stalls are drawn at random.
//!
//! The score of a session is
//!
//! ```text
//! V   = mean over the final five segments of
//!       0.4 * (height - h_min) / (h_max - h_min) + 0.6 * exp(-sigma / 8)
//! S   = total stall seconds over the session
//! W   = summed bitrate drops (kbps) between the final five segments
//! MOS = 40 + 60 V - 25 (1 - exp(-S / 4)) - 15 (1 - exp(-W / 1500))
//! ```
//!
//! which lies in `[0, 100]`, rises with every rung's height and falls
//! strictly with stall time and downswitch size.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::session::{
    write_frame, FrameSource, GrayFrame, Segment, SessionManifest, WINDOW_LEN,
};

use super::{DatasetIndex, IndexEntry, MIN_CONTENTS};

/// One rung of the bitrate ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rung {
    pub width: usize,
    pub height: usize,
    pub bitrate_kbps: f64,
    /// Coding-noise standard deviation before content and encoder scaling.
    pub noise: f64,
}

pub const DEFAULT_LADDER: [Rung; 4] = [
    Rung { width: 128, height: 72, bitrate_kbps: 300.0, noise: 9.0 },
    Rung { width: 192, height: 108, bitrate_kbps: 750.0, noise: 7.0 },
    Rung { width: 256, height: 144, bitrate_kbps: 1500.0, noise: 5.0 },
    Rung { width: 320, height: 180, bitrate_kbps: 3000.0, noise: 3.5 },
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_contents: usize,
    pub sessions_per_content: usize,
    pub seed: u64,
    pub segments: usize,
    pub fps: f64,
    pub segment_s: f64,
    pub ladder: Vec<Rung>,
}

impl SynthConfig {
    pub fn new(n_contents: usize, sessions_per_content: usize, seed: u64) -> Self {
        Self {
            n_contents,
            sessions_per_content,
            seed,
            segments: 10,
            fps: 8.0,
            segment_s: 2.0,
            ladder: DEFAULT_LADDER.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_contents < MIN_CONTENTS {
            return Err(Error::invalid(format!(
                "at least {MIN_CONTENTS} contents are needed, got {}",
                self.n_contents
            )));
        }
        if self.sessions_per_content < 1 || self.segments < 1 {
            return Err(Error::invalid("sessions per content and segments must be positive"));
        }
        if self.frames_per_segment() < 2 {
            return Err(Error::invalid("segments must hold at least 2 frames"));
        }
        if self.ladder.is_empty() {
            return Err(Error::invalid("empty bitrate ladder"));
        }
        if self.ladder.iter().any(|r| r.width < 16 || r.height < 16) {
            return Err(Error::invalid("ladder rungs must be at least 16x16"));
        }
        Ok(())
    }

    pub fn frames_per_segment(&self) -> usize {
        (self.fps * self.segment_s).round() as usize
    }

    pub fn max_bitrate_kbps(&self) -> f64 {
        self.ladder.iter().map(|r| r.bitrate_kbps).fold(0.0, f64::max)
    }
}

/// Picture parameters of one content.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Content {
    /// Spatial frequency, in cycles per frame width and height.
    pub freq: [f64; 2],
    pub amplitude: [f64; 2],
    pub phase: [f64; 2],
    /// Drift, in cycles per second.
    pub drift: [f64; 2],
    /// Noise multiplier.
    pub complexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub content: usize,
    pub content_id: String,
    /// Ladder rung per segment.
    pub rungs: Vec<usize>,
    /// Stall charged to each segment; the first is startup buffering.
    pub stalls: Vec<f64>,
    pub encoder_factor: f64,
    pub mos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub contents: Vec<Content>,
    pub sessions: Vec<SynthSession>,
}

/// The documented quality function (see the module docs).
pub fn session_mos(ladder: &[Rung], rungs: &[usize], stalls: &[f64], noise: &[f64]) -> f64 {
    let h_min = ladder.iter().map(|r| r.height).min().unwrap_or(0) as f64;
    let h_max = ladder.iter().map(|r| r.height).max().unwrap_or(0) as f64;
    let span = (h_max - h_min).max(1.0);
    let start = rungs.len().saturating_sub(WINDOW_LEN);
    let tail = &rungs[start..];
    let visual = tail
        .iter()
        .zip(&noise[start..])
        .map(|(&r, &sigma)| {
            0.4 * (ladder[r].height as f64 - h_min) / span + 0.6 * (-sigma / 8.0).exp()
        })
        .sum::<f64>()
        / tail.len() as f64;
    let stall: f64 = stalls.iter().sum();
    let drops: f64 = tail
        .windows(2)
        .map(|w| (ladder[w[0]].bitrate_kbps - ladder[w[1]].bitrate_kbps).max(0.0))
        .sum();
    let mos = 40.0 + 60.0 * visual
        - 25.0 * (1.0 - (-stall / 4.0).exp())
        - 15.0 * (1.0 - (-drops / 1500.0).exp());
    mos.clamp(0.0, 100.0)
}

/// Generates session plans. Frames are rendered on demand by
/// [`SynthDataset::render`].
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let contents: Vec<Content> = (0..cfg.n_contents)
        .map(|_| Content {
            freq: [rng.random_range(1.5..6.0), rng.random_range(1.0..4.0)],
            amplitude: {
                // one dominant axis, the other nearly flat
                let (strong, weak) = (rng.random_range(25.0..40.0), rng.random_range(0.0..4.0));
                if rng.random_bool(0.5) {
                    [strong, weak]
                } else {
                    [weak, strong]
                }
            },
            phase: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            drift: [rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3)],
            complexity: rng.random_range(0.6..1.6),
        })
        .collect();

    let top = cfg.ladder.len() - 1;
    let mut sessions = Vec::new();
    for (c, content) in contents.iter().enumerate() {
        for _ in 0..cfg.sessions_per_content {
            let mut rungs = Vec::with_capacity(cfg.segments);
            let mut r = rng.random_range(0..=top);
            for _ in 0..cfg.segments {
                rungs.push(r);
                let u: f64 = rng.random();
                r = if u < 0.2 {
                    r.saturating_sub(1)
                } else if u < 0.4 {
                    (r + 1).min(top)
                } else {
                    r
                };
            }
            let mut stalls = vec![0.0; cfg.segments];
            stalls[0] = rng.random_range(0.0..4.0);
            if cfg.segments > 1 {
                for _ in 0..rng.random_range(0..=2) {
                    let at = rng.random_range(1..cfg.segments);
                    stalls[at] += rng.random_range(0.5..5.0);
                }
            }
            let encoder_factor = rng.random_range(0.3..2.5);
            let noise: Vec<f64> = rungs
                .iter()
                .map(|&r| cfg.ladder[r].noise * content.complexity * encoder_factor)
                .collect();
            let mos = session_mos(&cfg.ladder, &rungs, &stalls, &noise);
            sessions.push(SynthSession {
                content: c,
                content_id: format!("content{c:02}"),
                rungs,
                stalls,
                encoder_factor,
                mos,
            });
        }
    }
    Ok(SynthDataset {
        config: cfg.clone(),
        contents,
        sessions,
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn frame_name(t: usize, j: usize) -> String {
    format!("t{t:02}_{j:03}.pgm")
}

impl SynthDataset {
    /// Noise level of segment `t` (1-based) of `session`.
    pub fn noise(&self, session: usize, t: usize) -> f64 {
        let s = &self.sessions[session];
        self.config.ladder[s.rungs[t - 1]].noise
            * self.contents[s.content].complexity
            * s.encoder_factor
    }

    pub fn manifest(&self, session: usize, frame_dir: impl Into<PathBuf>) -> SessionManifest {
        let s = &self.sessions[session];
        let n = self.config.frames_per_segment();
        let segments = s
            .rungs
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let rung = self.config.ladder[r];
                Segment {
                    index: k + 1,
                    bitrate_kbps: rung.bitrate_kbps,
                    width: rung.width,
                    height: rung.height,
                    fps: self.config.fps,
                    duration_s: self.config.segment_s,
                    stall_s: s.stalls[k],
                    frame_refs: (0..n).map(|j| frame_name(k + 1, j)).collect(),
                }
            })
            .collect();
        SessionManifest {
            segments,
            frame_dir: frame_dir.into(),
            mos: Some(s.mos),
        }
    }

    /// Frame `j` of segment `t` of `session`, quantized to whole values.
    pub fn render(&self, session: usize, t: usize, j: usize) -> GrayFrame {
        let s = &self.sessions[session];
        let rung = self.config.ladder[s.rungs[t - 1]];
        let content = &self.contents[s.content];
        let time = (t - 1) as f64 * self.config.segment_s + j as f64 / self.config.fps;
        let tau = std::f64::consts::TAU;
        let (w, h) = (rung.width, rung.height);
        let wave = |axis: usize, pos: f64| {
            content.amplitude[axis]
                * (tau * (content.freq[axis] * pos + content.drift[axis] * time + content.phase[axis])).sin()
        };
        let ax: Vec<f64> = (0..w).map(|x| wave(0, (x as f64 + 0.5) / w as f64)).collect();
        let by: Vec<f64> = (0..h).map(|y| wave(1, (y as f64 + 0.5) / h as f64)).collect();

        let key = splitmix(splitmix(splitmix(self.config.seed) ^ session as u64) ^ ((t as u64) << 20 | j as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let noise = Normal::new(0.0, self.noise(session, t)).expect("finite noise level");
        let mut px = Vec::with_capacity(w * h);
        for b in &by {
            for a in &ax {
                let v = 128.0 + a + b + noise.sample(&mut rng);
                px.push(v.round().clamp(0.0, 255.0));
            }
        }
        GrayFrame::new(w, h, px).expect("rendered frame is valid")
    }

    /// A frame source that renders `session` on demand.
    pub fn frames(&self, session: usize) -> SynthFrames<'_> {
        SynthFrames {
            data: self,
            session,
        }
    }

    /// Writes `index.json`, `config.json` and one directory per session
    /// holding its manifest and PGM frames. Returns the index path.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut entries = Vec::with_capacity(self.sessions.len());
        for (i, s) in self.sessions.iter().enumerate() {
            let name = format!("session{i:03}");
            let dir = out.join(&name);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let manifest = self.manifest(i, &dir);
            for seg in &manifest.segments {
                for (j, frame_ref) in seg.frame_refs.iter().enumerate() {
                    write_frame(&dir.join(frame_ref), &self.render(i, seg.index, j))?;
                }
            }
            let path = dir.join("manifest.json");
            fs::write(&path, manifest.to_json(".")).map_err(|e| Error::io(&path, e))?;
            entries.push(IndexEntry {
                manifest: PathBuf::from(name).join("manifest.json"),
                content_id: s.content_id.clone(),
                mos: s.mos,
            });
        }
        let index = DatasetIndex {
            sessions: entries,
            mos_range: None,
        };
        let index_path = out.join("index.json");
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        fs::write(&index_path, text).map_err(|e| Error::io(&index_path, e))?;

        let cfg = PipelineConfig {
            c2_kbps: Some(self.config.max_bitrate_kbps()),
            grid_search: true,
            ..Default::default()
        };
        let cfg_path = out.join("config.json");
        let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
        fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;

        let meta_path = out.join("simulation.json");
        let meta = json!({
            "seed": self.config.seed,
            "contents": self.config.n_contents,
            "sessions_per_content": self.config.sessions_per_content,
            "segments": self.config.segments,
            "fps": self.config.fps,
            "segment_s": self.config.segment_s,
        });
        fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("json"))
            .map_err(|e| Error::io(&meta_path, e))?;
        Ok(index_path)
    }
}

/// Renders one synthetic session's frames instead of reading files.
#[derive(Debug, Clone, Copy)]
pub struct SynthFrames<'a> {
    data: &'a SynthDataset,
    session: usize,
}

impl FrameSource for SynthFrames<'_> {
    fn load(&self, _: &SessionManifest, segment: &Segment, frame: usize) -> Result<GrayFrame> {
        if frame >= segment.frame_count() {
            return Err(Error::invalid(format!(
                "segment {} has no frame {frame}",
                segment.index
            )));
        }
        Ok(self.data.render(self.session, segment.index, frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            segments: 6,
            ..SynthConfig::new(5, 2, 11)
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_dataset(&small()).unwrap();
        let b = synth_dataset(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.render(3, 2, 5), b.render(3, 2, 5));
        assert_ne!(a.render(3, 2, 5), a.render(3, 2, 6));
    }

    #[test]
    fn manifests_validate() {
        let d = synth_dataset(&small()).unwrap();
        for i in 0..d.sessions.len() {
            let m = d.manifest(i, "x");
            m.validate().unwrap();
            assert_eq!(m.len(), 6);
            let f = d.render(i, 1, 0);
            assert_eq!(f.height(), m.segments[0].height);
            assert!(f.is_integral());
        }
    }

    #[test]
    fn extra_stall_lowers_score() {
        let ladder = DEFAULT_LADDER;
        let rungs = [1, 2, 2, 3, 1, 2];
        let noise = [5.0; 6];
        let stalls = [0.5, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mut more = stalls;
        more[3] += 4.0;
        assert!(session_mos(&ladder, &rungs, &more, &noise) < session_mos(&ladder, &rungs, &stalls, &noise));
    }

    #[test]
    fn higher_rung_raises_score() {
        let ladder = DEFAULT_LADDER;
        let stalls = [1.0, 0.0, 0.0, 2.0, 0.0, 0.0];
        for r in 0..3 {
            let lo = [r; 6];
            let hi = [r + 1; 6];
            let n_lo = [ladder[r].noise; 6];
            let n_hi = [ladder[r + 1].noise; 6];
            assert!(
                session_mos(&ladder, &hi, &stalls, &n_hi) > session_mos(&ladder, &lo, &stalls, &n_lo)
            );
        }
    }

    #[test]
    fn scores_stay_in_range() {
        let d = synth_dataset(&SynthConfig::new(8, 6, 7)).unwrap();
        assert!(d.sessions.iter().all(|s| (0.0..=100.0).contains(&s.mos)));
    }

    #[test]
    fn rejects_too_few_contents() {
        assert!(synth_dataset(&SynthConfig::new(4, 6, 7)).is_err());
    }
}
