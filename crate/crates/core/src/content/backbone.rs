//! Feed-forward convolutional backbone producing the feature map that gets
//! pooled into per-frame statistics.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::session::GrayFrame;
use crate::tensor::{Tensor, TensorFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    /// `out_ch x in_ch x kh x kw`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn validate(&self, pos: usize) -> Result<()> {
        let n = self.out_ch * self.in_ch * self.kh * self.kw;
        if n == 0 || self.stride == 0 {
            return Err(Error::invalid(format!("layer {pos}: degenerate shape")));
        }
        if self.weights.len() != n || self.bias.len() != self.out_ch {
            return Err(Error::invalid(format!(
                "layer {pos}: expected {n} weights and {} biases, got {} and {}",
                self.out_ch,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("layer {pos}: non-finite parameter")));
        }
        Ok(())
    }

    fn out_dim(&self, input: usize, kernel: usize) -> Option<usize> {
        (input + 2 * self.padding)
            .checked_sub(kernel)
            .map(|span| span / self.stride + 1)
    }

    fn forward(&self, input: &FeatureMap) -> FeatureMap {
        let (ih, iw) = (input.height, input.width);
        let oh = self.out_dim(ih, self.kh).expect("checked by caller");
        let ow = self.out_dim(iw, self.kw).expect("checked by caller");
        let (s, p) = (self.stride, self.padding);
        let mut out = vec![0.0; self.out_ch * oh * ow];

        for (oc, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
            plane.fill(self.bias[oc]);
            for ic in 0..self.in_ch {
                let src = &input.data[ic * ih * iw..(ic + 1) * ih * iw];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let w = self.weights[((oc * self.in_ch + ic) * self.kh + ky) * self.kw + kx];
                        // ox such that 0 <= ox*s + kx - p < iw
                        if iw + p <= kx {
                            continue;
                        }
                        let ox_lo = p.saturating_sub(kx).div_ceil(s);
                        let ox_hi = ((iw + p).saturating_sub(kx + 1) / s + 1).min(ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy * s + ky;
                            if iy < p || iy - p >= ih {
                                continue;
                            }
                            let row = &src[(iy - p) * iw..(iy - p + 1) * iw];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in ox_lo..ox_hi {
                                dst[ox] += w * row[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
            if self.activation == Activation::Relu {
                for v in plane.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        FeatureMap {
            channels: self.out_ch,
            height: oh,
            width: ow,
            data: out,
        }
    }
}

/// Channel-major activation volume.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub layers: Vec<ConvLayer>,
    /// Per-input-channel normalization applied to `pixel / 255`.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    stride: usize,
    padding: usize,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct BackboneMeta {
    layers: Vec<LayerMeta>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
}

impl BackboneParams {
    pub fn new(layers: Vec<ConvLayer>, input_mean: Vec<f64>, input_std: Vec<f64>) -> Result<Self> {
        let params = Self {
            layers,
            input_mean,
            input_std,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::invalid("backbone has no layers"))?;
        if first.in_ch != 1 && first.in_ch != 3 {
            return Err(Error::invalid(format!(
                "first layer takes {} channels, expected 1 or 3",
                first.in_ch
            )));
        }
        if self.input_mean.len() != first.in_ch || self.input_std.len() != first.in_ch {
            return Err(Error::invalid("normalization must list one mean/std per input channel"));
        }
        if self.input_std.iter().any(|s| !(s.is_finite() && *s > 0.0))
            || self.input_mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::invalid("normalization stds must be positive and finite"));
        }
        for (pos, layer) in self.layers.iter().enumerate() {
            layer.validate(pos + 1)?;
            if pos > 0 && layer.in_ch != self.layers[pos - 1].out_ch {
                return Err(Error::invalid(format!(
                    "layer {} expects {} channels but receives {}",
                    pos + 1,
                    layer.in_ch,
                    self.layers[pos - 1].out_ch
                )));
            }
        }
        Ok(())
    }

    /// Three stride-2 3x3 layers (8, 16, 32 channels) with seeded
    /// He-normal weights.
    pub fn tiny(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for out_ch in [8, 16, 32] {
            let fan_in = (in_ch * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            let weights = (0..out_ch * in_ch * 9)
                .map(|_| f64::from(normal.sample(&mut rng) as f32))
                .collect();
            let bias_dist = Normal::new(0.0, 0.05).expect("valid std");
            let bias = (0..out_ch)
                .map(|_| f64::from(bias_dist.sample(&mut rng) as f32))
                .collect();
            layers.push(ConvLayer {
                out_ch,
                in_ch,
                kh: 3,
                kw: 3,
                stride: 2,
                padding: 1,
                activation: Activation::Relu,
                weights,
                bias,
            });
            in_ch = out_ch;
        }
        Self {
            layers,
            input_mean: vec![0.5],
            input_std: vec![0.25],
        }
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    /// Output spatial size for an input of `height x width`, if every layer
    /// still has at least one output position.
    pub fn output_dims(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        self.layers.iter().try_fold((height, width), |(h, w), l| {
            Some((l.out_dim(h, l.kh)?, l.out_dim(w, l.kw)?))
        })
    }

    pub fn forward(&self, frame: &GrayFrame) -> Result<FeatureMap> {
        let (h, w) = (frame.height(), frame.width());
        if self.output_dims(h, w).is_none() {
            return Err(Error::invalid(format!(
                "frame {w}x{h} is too small for the backbone"
            )));
        }
        let channels = self.input_channels();
        let mut data = Vec::with_capacity(channels * h * w);
        for c in 0..channels {
            let (mean, std) = (self.input_mean[c], self.input_std[c]);
            data.extend(frame.pixels().iter().map(|p| (p / 255.0 - mean) / std));
        }
        let mut map = FeatureMap {
            channels,
            height: h,
            width: w,
            data,
        };
        for layer in &self.layers {
            map = layer.forward(&map);
        }
        Ok(map)
    }

    /// Tensors named `layer{N}.conv.weight` / `layer{N}.conv.bias`, with
    /// strides, paddings, activations and normalization in the metadata.
    pub fn to_tensor_file(&self) -> TensorFile {
        let mut tensors = Vec::new();
        for (pos, l) in self.layers.iter().enumerate() {
            let n = pos + 1;
            tensors.push(Tensor {
                name: format!("layer{n}.conv.weight"),
                shape: vec![l.out_ch, l.in_ch, l.kh, l.kw],
                data: l.weights.iter().map(|&v| v as f32).collect(),
            });
            tensors.push(Tensor {
                name: format!("layer{n}.conv.bias"),
                shape: vec![l.out_ch],
                data: l.bias.iter().map(|&v| v as f32).collect(),
            });
        }
        let meta = BackboneMeta {
            layers: self
                .layers
                .iter()
                .map(|l| LayerMeta {
                    stride: l.stride,
                    padding: l.padding,
                    activation: l.activation,
                })
                .collect(),
            input_mean: self.input_mean.clone(),
            input_std: self.input_std.clone(),
        };
        TensorFile::new(tensors, json!(meta))
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let meta: BackboneMeta = serde_json::from_value(file.meta.clone()).map_err(|e| Error::Parse {
            context: "backbone metadata".into(),
            msg: e.to_string(),
        })?;
        let expected: Vec<String> = (1..=meta.layers.len())
            .flat_map(|n| [format!("layer{n}.conv.weight"), format!("layer{n}.conv.bias")])
            .collect();
        if let Some(unknown) = file.tensors.iter().find(|t| !expected.contains(&t.name)) {
            return Err(Error::invalid(format!("unknown backbone tensor {}", unknown.name)));
        }

        let mut layers = Vec::with_capacity(meta.layers.len());
        for (pos, lm) in meta.layers.iter().enumerate() {
            let n = pos + 1;
            let weight = require(file, &format!("layer{n}.conv.weight"))?;
            let bias = require(file, &format!("layer{n}.conv.bias"))?;
            let [out_ch, in_ch, kh, kw] = weight.shape[..] else {
                return Err(Error::invalid(format!(
                    "{}: expected a 4-d shape, got {:?}",
                    weight.name, weight.shape
                )));
            };
            if bias.shape != [out_ch] {
                return Err(Error::invalid(format!(
                    "{}: shape {:?} does not match {out_ch} output channels",
                    bias.name, bias.shape
                )));
            }
            layers.push(ConvLayer {
                out_ch,
                in_ch,
                kh,
                kw,
                stride: lm.stride,
                padding: lm.padding,
                activation: lm.activation,
                weights: weight.data.iter().map(|&v| f64::from(v)).collect(),
                bias: bias.data.iter().map(|&v| f64::from(v)).collect(),
            });
        }
        Self::new(layers, meta.input_mean, meta.input_std)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file().write(path)
    }
}

fn require<'a>(file: &'a TensorFile, name: &str) -> Result<&'a Tensor> {
    file.get(name)
        .ok_or_else(|| Error::invalid(format!("missing tensor {name}")))
}
