use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max, min, mean and population standard deviation of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledStats {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub std: f64,
}

impl PooledStats {
    pub fn as_array(&self) -> [f64; 4] {
        [self.max, self.min, self.mean, self.std]
    }
}

pub fn pooled_stats(values: &[f64]) -> Result<PooledStats> {
    if values.is_empty() {
        return Err(Error::invalid("cannot pool an empty feature map"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature map contains non-finite values"));
    }
    let n = values.len() as f64;
    let (mut max, mut min) = (f64::NEG_INFINITY, f64::INFINITY);
    for &v in values {
        max = max.max(v);
        min = min.min(v);
    }
    if max == min {
        return Ok(PooledStats {
            max,
            min,
            mean: max,
            std: 0.0,
        });
    }
    let mean = (values.iter().sum::<f64>() / n).clamp(min, max);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(PooledStats {
        max,
        min,
        mean,
        std: var.sqrt(),
    })
}
