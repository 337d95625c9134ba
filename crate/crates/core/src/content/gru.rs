//! Gated recurrent unit fusing per-frame pooled statistics over a segment.
//!
//! Gate order is update (`z`), reset (`r`), candidate (`n`). Each gate has a
//! `4 x 8` weight matrix applied to the concatenation `[x; h]` and a bias:
//!
//! ```text
//! z  = sigmoid(Wz [x; h] + bz)
//! r  = sigmoid(Wr [x; h] + br)
//! n  = tanh(Wn [x; r * h] + bn)
//! h' = z * h + (1 - z) * n
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::stats::PooledStats;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorFile};

pub const GRU_HIDDEN: usize = 4;
const GRU_INPUT: usize = 4;
const CONCAT: usize = GRU_INPUT + GRU_HIDDEN;

const GATES: [&str; 3] = ["update", "reset", "candidate"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub weight: [[f64; CONCAT]; GRU_HIDDEN],
    pub bias: [f64; GRU_HIDDEN],
}

impl Gate {
    const ZERO: Gate = Gate {
        weight: [[0.0; CONCAT]; GRU_HIDDEN],
        bias: [0.0; GRU_HIDDEN],
    };

    fn apply(&self, input: &[f64; CONCAT]) -> [f64; GRU_HIDDEN] {
        std::array::from_fn(|i| {
            self.weight[i]
                .iter()
                .zip(input)
                .fold(self.bias[i], |acc, (w, x)| acc + w * x)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub update: Gate,
    pub reset: Gate,
    pub candidate: Gate,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruParams {
    pub fn zeros() -> Self {
        Self {
            update: Gate::ZERO,
            reset: Gate::ZERO,
            candidate: Gate::ZERO,
        }
    }

    /// Weights uniform in `±1/sqrt(H)`, zero biases.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (GRU_HIDDEN as f64).sqrt();
        let mut gate = || {
            let mut g = Gate::ZERO;
            for row in g.weight.iter_mut() {
                for w in row.iter_mut() {
                    *w = f64::from(rng.random_range(-bound..bound) as f32);
                }
            }
            g
        };
        Self {
            update: gate(),
            reset: gate(),
            candidate: gate(),
        }
    }

    fn gates(&self) -> [&Gate; 3] {
        [&self.update, &self.reset, &self.candidate]
    }

    /// One recurrence step.
    pub fn step(&self, x: &[f64; GRU_INPUT], h: &[f64; GRU_HIDDEN]) -> [f64; GRU_HIDDEN] {
        let mut xh = [0.0; CONCAT];
        xh[..GRU_INPUT].copy_from_slice(x);
        xh[GRU_INPUT..].copy_from_slice(h);
        let z = self.update.apply(&xh).map(sigmoid);
        let r = self.reset.apply(&xh).map(sigmoid);
        for i in 0..GRU_HIDDEN {
            xh[GRU_INPUT + i] = r[i] * h[i];
        }
        let n = self.candidate.apply(&xh).map(f64::tanh);
        std::array::from_fn(|i| z[i] * h[i] + (1.0 - z[i]) * n[i])
    }

    /// Runs the recurrence from a zero state and returns the final hidden
    /// state.
    pub fn fuse(&self, sequence: &[PooledStats]) -> Result<[f64; GRU_HIDDEN]> {
        if sequence.is_empty() {
            return Err(Error::invalid("GRU input sequence is empty"));
        }
        Ok(sequence
            .iter()
            .fold([0.0; GRU_HIDDEN], |h, stats| self.step(&stats.as_array(), &h)))
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut tensors = Vec::new();
        for (name, gate) in GATES.iter().zip(self.gates()) {
            tensors.push(Tensor {
                name: format!("gru.{name}.weight"),
                shape: vec![GRU_HIDDEN, CONCAT],
                data: gate.weight.iter().flatten().map(|&v| v as f32).collect(),
            });
            tensors.push(Tensor {
                name: format!("gru.{name}.bias"),
                shape: vec![GRU_HIDDEN],
                data: gate.bias.iter().map(|&v| v as f32).collect(),
            });
        }
        TensorFile::new(tensors, json!({"hidden": GRU_HIDDEN, "gate_order": GATES}))
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let known: Vec<String> = GATES
            .iter()
            .flat_map(|g| [format!("gru.{g}.weight"), format!("gru.{g}.bias")])
            .collect();
        if let Some(t) = file.tensors.iter().find(|t| !known.contains(&t.name)) {
            return Err(Error::invalid(format!("unknown GRU tensor {}", t.name)));
        }
        let read_gate = |name: &str| -> Result<Gate> {
            let w = file
                .get(&format!("gru.{name}.weight"))
                .ok_or_else(|| Error::invalid(format!("missing gru.{name}.weight")))?;
            let b = file
                .get(&format!("gru.{name}.bias"))
                .ok_or_else(|| Error::invalid(format!("missing gru.{name}.bias")))?;
            if w.shape != [GRU_HIDDEN, CONCAT] || b.shape != [GRU_HIDDEN] {
                return Err(Error::invalid(format!(
                    "gru.{name}: shapes {:?}/{:?}, expected [4, 8]/[4]",
                    w.shape, b.shape
                )));
            }
            if w.data.iter().chain(&b.data).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("gru.{name}: non-finite parameter")));
            }
            let mut g = Gate::ZERO;
            for (i, row) in g.weight.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f64::from(w.data[i * CONCAT + j]);
                }
            }
            for (v, &src) in g.bias.iter_mut().zip(&b.data) {
                *v = f64::from(src);
            }
            Ok(g)
        };
        Ok(Self {
            update: read_gate("update")?,
            reset: read_gate("reset")?,
            candidate: read_gate("candidate")?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file().write(path)
    }
}
