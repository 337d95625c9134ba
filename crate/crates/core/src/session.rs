//! Streaming-session data model: frames, segments, manifests and the
//! five-segment scoring window.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FrameError, Result};

/// Number of segments the regression looks at.
pub const WINDOW_LEN: usize = 5;

/// Upper bound on pixels per decoded frame (16k x 16k).
const MAX_FRAME_PIXELS: u64 = 1 << 28;

/// Single-channel luminance image, row-major, values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "frame {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 255.0)
        {
            return Err(Error::invalid(format!(
                "pixel value {bad} outside [0, 255]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    /// Frame with every pixel set to `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// True when every pixel holds an integral value.
    pub fn is_integral(&self) -> bool {
        self.pixels.iter().all(|p| p.fract() == 0.0)
    }

    /// Pixels rounded to bytes, as written to PGM files.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| p.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Reads a binary PGM (`P5`, maxval 255) file.
pub fn load_frame(path: &Path) -> Result<GrayFrame> {
    let data = match fs::read(path) {
        Ok(d) => d,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(FrameError::Missing(path.to_path_buf()).into())
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_pgm(&data, path)
}

pub(crate) fn decode_pgm(data: &[u8], path: &Path) -> Result<GrayFrame> {
    if data.len() < 2 || &data[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&data[..data.len().min(2)]).into_owned();
        return Err(FrameError::Format {
            path: path.to_path_buf(),
            magic,
        }
        .into());
    }
    let header_err = |reason: &str| FrameError::Header {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while data.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(header_err("expected a decimal number").into());
        }
        let text = std::str::from_utf8(&data[start..pos]).expect("ascii digits");
        *field = text
            .parse::<u64>()
            .map_err(|_| header_err("number out of range"))?;
    }
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(header_err("missing whitespace after maxval").into()),
    }

    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(header_err(&format!("maxval {maxval} unsupported, expected 255")).into());
    }
    if width == 0 || height == 0 {
        return Err(header_err("zero dimension").into());
    }
    match width.checked_mul(height) {
        Some(n) if n <= MAX_FRAME_PIXELS => {}
        _ => {
            return Err(FrameError::DimensionOverflow {
                path: path.to_path_buf(),
                width,
                height,
            }
            .into())
        }
    }
    let expected = (width * height) as usize;
    let payload = &data[pos..];
    if payload.len() < expected {
        return Err(FrameError::Truncated {
            path: path.to_path_buf(),
            expected,
            got: payload.len(),
        }
        .into());
    }
    GrayFrame::from_bytes(width as usize, height as usize, &payload[..expected])
}

pub fn encode_pgm(frame: &GrayFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.to_bytes());
    out
}

/// Writes `frame` as binary PGM. Non-integral pixels are rounded.
pub fn write_frame(path: &Path, frame: &GrayFrame) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_pgm(frame))
        .map_err(|e| Error::io(path, e))
}

/// One media segment: QoS metadata plus the frames it decodes to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub bitrate_kbps: f64,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub duration_s: f64,
    /// Buffering charged to this segment; startup buffering for index 1.
    pub stall_s: f64,
    #[serde(rename = "frames")]
    pub frame_refs: Vec<String>,
}

impl Segment {
    pub fn frame_count(&self) -> usize {
        self.frame_refs.len()
    }

    fn validate(&self) -> Result<()> {
        let i = self.index;
        let bad = |msg: String| Err(Error::Validation(format!("segment {i}: {msg}")));
        if !(self.bitrate_kbps.is_finite() && self.bitrate_kbps >= 0.0) {
            return bad(format!("bitrate_kbps {} must be >= 0", self.bitrate_kbps));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("resolution {}x{} must be positive", self.width, self.height));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps {} must be > 0", self.fps));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s {} must be > 0", self.duration_s));
        }
        if !(self.stall_s.is_finite() && self.stall_s >= 0.0) {
            return bad(format!("stall_s {} must be >= 0", self.stall_s));
        }
        if self.frame_refs.is_empty() {
            return bad("frame list is empty".into());
        }
        let nominal = self.fps * self.duration_s;
        if (self.frame_refs.len() as f64 - nominal).abs() > 1.0 {
            warn!(
                "segment {i}: {} frames listed, nominal count is {nominal:.1}",
                self.frame_refs.len()
            );
        }
        Ok(())
    }
}

/// A whole session as described by a manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionManifest {
    pub segments: Vec<Segment>,
    /// Directory frame references resolve against.
    pub frame_dir: PathBuf,
    /// Subjective score on the 0..100 scale, when known.
    pub mos: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    frame_dir: String,
    #[serde(default)]
    mos: Option<f64>,
    segments: Vec<Segment>,
}

impl SessionManifest {
    pub fn new(segments: Vec<Segment>, frame_dir: PathBuf, mos: Option<f64>) -> Result<Self> {
        let manifest = Self {
            segments,
            frame_dir,
            mos,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Validation("manifest has no segments".into()));
        }
        for (pos, seg) in self.segments.iter().enumerate() {
            if seg.index != pos + 1 {
                return Err(Error::Validation(format!(
                    "non-contiguous segment index: expected {}, found {}",
                    pos + 1,
                    seg.index
                )));
            }
            seg.validate()?;
        }
        if let Some(mos) = self.mos {
            if !mos.is_finite() || !(0.0..=100.0).contains(&mos) {
                return Err(Error::Validation(format!("mos {mos} outside [0, 100]")));
            }
        }
        Ok(())
    }

    /// Number of segments, `T`.
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment by 1-based index.
    pub fn segment(&self, index: usize) -> Option<&Segment> {
        index.checked_sub(1).and_then(|i| self.segments.get(i))
    }

    pub fn playback_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    pub fn stalls(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.stall_s).collect()
    }

    pub fn max_bitrate_kbps(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.bitrate_kbps)
            .fold(0.0, f64::max)
    }

    pub fn frame_path(&self, frame_ref: &str) -> PathBuf {
        self.frame_dir.join(frame_ref)
    }

    /// Serializes the manifest; `frame_dir` is written as given.
    pub fn to_json(&self, frame_dir: &str) -> String {
        let doc = ManifestDoc {
            frame_dir: frame_dir.to_string(),
            mos: self.mos,
            segments: self.segments.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("manifest serializes")
    }
}

/// Parses and validates a manifest. A relative `frame_dir` resolves against
/// the manifest's own directory.
pub fn load_manifest(path: &Path) -> Result<SessionManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    SessionManifest::new(doc.segments, base.join(doc.frame_dir), doc.mos)
}

/// Linearly maps a score from `[lo, hi]` onto the engine's 0..100 scale.
pub fn remap_mos(value: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::invalid(format!("invalid MOS range [{lo}, {hi}]")));
    }
    Ok((value - lo) / (hi - lo) * 100.0)
}

/// The five most recent segments ending at some `t`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionWindow {
    pub segments: [Segment; WINDOW_LEN],
    /// Startup buffering of the whole session (`D_1`).
    pub session_initial_stall_s: f64,
}

impl SessionWindow {
    pub fn newest(&self) -> &Segment {
        &self.segments[WINDOW_LEN - 1]
    }

    pub fn indices(&self) -> [usize; WINDOW_LEN] {
        std::array::from_fn(|k| self.segments[k].index)
    }
}

/// Window of segments `max(1, t-4)..=t`, left-padded with segment 1.
pub fn window_at(manifest: &SessionManifest, t: usize) -> Result<SessionWindow> {
    let total = manifest.len();
    if t < 1 || t > total {
        return Err(Error::invalid(format!(
            "window end {t} outside segment range 1..={total}"
        )));
    }
    let segments = std::array::from_fn(|k| {
        // k = 4 is the newest slot
        let back = WINDOW_LEN - 1 - k;
        let index = t.saturating_sub(back).max(1);
        manifest.segments[index - 1].clone()
    });
    Ok(SessionWindow {
        segments,
        session_initial_stall_s: manifest.segments[0].stall_s,
    })
}

/// Where the pipeline gets decoded frames from.
pub trait FrameSource: Sync {
    /// Loads frame `frame` (0-based position within the segment).
    fn load(&self, manifest: &SessionManifest, segment: &Segment, frame: usize)
        -> Result<GrayFrame>;
}

/// Reads frames as PGM files under the manifest's `frame_dir`.
#[derive(Debug, Default, Clone, Copy)]
pub struct DiskFrames;

impl FrameSource for DiskFrames {
    fn load(
        &self,
        manifest: &SessionManifest,
        segment: &Segment,
        frame: usize,
    ) -> Result<GrayFrame> {
        let frame_ref = segment.frame_refs.get(frame).ok_or_else(|| {
            Error::invalid(format!(
                "segment {} has no frame {frame}",
                segment.index
            ))
        })?;
        load_frame(&manifest.frame_path(frame_ref))
    }
}
