//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! Features are z-scored, and the dual problem is solved by sequential
//! minimal optimization over the usual `2n`-variable formulation
//! (`alpha` for the upper tube edge, `alpha*` for the lower one), picking
//! each working pair by maximal violation and second-order gain.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_COUNT, FEATURE_ORDER_TAG};

pub const MODEL_VERSION: u32 = 1;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrParams {
    #[serde(rename = "C")]
    pub c: f64,
    /// Tube half-width; `None` means `0.1 * std(y)`.
    pub epsilon: Option<f64>,
    /// Kernel width; `None` means one over the summed variance of the scaled
    /// features (1/36 when every feature varies).
    pub gamma: Option<f64>,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: None,
            gamma: None,
            tol: 1e-3,
        }
    }
}

impl SvrParams {
    fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::invalid(format!("C must be positive, got {}", self.c)));
        }
        if let Some(e) = self.epsilon {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::invalid(format!("epsilon must be >= 0, got {e}")));
            }
        }
        if let Some(g) = self.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::invalid(format!("gamma must be positive, got {g}")));
            }
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Constant features get std 1, which leaves them inert.
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[FeatureVector]) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; FEATURE_COUNT];
        let mut std = vec![0.0; FEATURE_COUNT];
        for j in 0..FEATURE_COUNT {
            let m = rows.iter().map(|r| r.0[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.0[j] - m) * (r.0[j] - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn transform(&self, x: &FeatureVector) -> Vec<f64> {
        x.0.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha - alpha*` per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub scaler: Scaler,
    pub c: f64,
    pub epsilon: f64,
    pub feature_order_tag: String,
}

/// Solver diagnostics.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective after every iteration, when tracing was requested.
    pub objective_trace: Vec<f64>,
    /// Final dual objective, `0.5 a'Qa + p'a`.
    pub objective: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

/// One over the summed variance of the scaled features, which is one over
/// the number of non-constant features.
fn default_gamma(scaled: &[Vec<f64>]) -> f64 {
    let n = scaled.len() as f64;
    let total_var: f64 = (0..FEATURE_COUNT)
        .map(|j| {
            let m = scaled.iter().map(|r| r[j]).sum::<f64>() / n;
            scaled.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n
        })
        .sum();
    if total_var > 0.0 {
        1.0 / total_var
    } else {
        1.0 / FEATURE_COUNT as f64
    }
}

/// The kernel width `train` picks when none is given.
pub fn default_gamma_for(x: &[FeatureVector]) -> f64 {
    let scaler = Scaler::fit(x);
    let scaled: Vec<Vec<f64>> = x.iter().map(|r| scaler.transform(r)).collect();
    default_gamma(&scaled)
}

pub fn train(x: &[FeatureVector], y: &[f64], params: &SvrParams) -> Result<SvrModel> {
    train_with_report(x, y, params, false).map(|(m, _)| m)
}

pub fn train_with_report(
    x: &[FeatureVector],
    y: &[f64],
    params: &SvrParams,
    trace: bool,
) -> Result<(SvrModel, TrainReport)> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid(format!(
            "training needs at least 2 samples, got {}",
            x.len()
        )));
    }
    for row in x {
        row.validate()?;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training target"));
    }

    let scaler = Scaler::fit(x);
    let scaled: Vec<Vec<f64>> = x.iter().map(|r| scaler.transform(r)).collect();
    let y_std = population_std(y);
    let epsilon = params.epsilon.unwrap_or(0.1 * y_std);
    let gamma = params.gamma.unwrap_or_else(|| default_gamma(&scaled));

    let mut model = SvrModel {
        support_vectors: Vec::new(),
        dual_coefs: Vec::new(),
        bias: y[0],
        gamma,
        scaler,
        c: params.c,
        epsilon,
        feature_order_tag: FEATURE_ORDER_TAG.to_string(),
    };
    if y_std == 0.0 {
        warn!("all training targets equal {}; fitting a constant model", y[0]);
        return Ok((
            model,
            TrainReport {
                converged: true,
                ..Default::default()
            },
        ));
    }

    let solver = Solver::new(&scaled, y, gamma, params.c, epsilon);
    let (alpha, bias, report) = solver.solve(params.tol, trace);
    let n = scaled.len();
    for i in 0..n {
        let coef = alpha[i] - alpha[i + n];
        if coef != 0.0 {
            model.support_vectors.push(scaled[i].clone());
            model.dual_coefs.push(coef);
        }
    }
    model.bias = bias;
    Ok((model, report))
}

struct Solver {
    n: usize,
    kernel: Vec<f64>,
    p: Vec<f64>,
    c: f64,
}

impl Solver {
    fn new(x: &[Vec<f64>], z: &[f64], gamma: f64, c: f64, epsilon: f64) -> Self {
        let n = x.len();
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            kernel[i * n + i] = 1.0;
            for j in 0..i {
                let k = (-gamma * sq_dist(&x[i], &x[j])).exp();
                kernel[i * n + j] = k;
                kernel[j * n + i] = k;
            }
        }
        let p = (0..2 * n)
            .map(|t| if t < n { epsilon - z[t] } else { epsilon + z[t - n] })
            .collect();
        Self { n, kernel, p, c }
    }

    #[inline]
    fn sign(&self, t: usize) -> f64 {
        if t < self.n {
            1.0
        } else {
            -1.0
        }
    }

    /// `Q[t][s] = y_t y_s K(t mod n, s mod n)`
    #[inline]
    fn q(&self, t: usize, s: usize) -> f64 {
        self.sign(t) * self.sign(s) * self.kernel[(t % self.n) * self.n + s % self.n]
    }

    fn objective(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        0.5 * alpha
            .iter()
            .zip(grad.iter().zip(&self.p))
            .map(|(a, (g, p))| a * (g + p))
            .sum::<f64>()
    }

    fn select(&self, alpha: &[f64], grad: &[f64], tol: f64) -> Option<(usize, usize)> {
        let c = self.c;
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..2 * self.n {
            let v = -self.sign(t) * grad[t];
            let up = if self.sign(t) > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up && v >= gmax {
                gmax = v;
                i = t;
            }
        }
        if i == usize::MAX {
            return None;
        }

        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        let q_ii = self.q(i, i);
        for t in 0..2 * self.n {
            let low = if self.sign(t) > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if !low {
                continue;
            }
            let v = self.sign(t) * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = q_ii + self.q(t, t) - 2.0 * self.sign(i) * self.sign(t) * self.q(i, t);
                let gain = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if gain <= best {
                    best = gain;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            return None;
        }
        Some((i, j))
    }

    fn solve(&self, tol: f64, trace: bool) -> (Vec<f64>, f64, TrainReport) {
        let m = 2 * self.n;
        let c = self.c;
        let mut alpha = vec![0.0; m];
        let mut grad = self.p.clone();
        let mut report = TrainReport::default();
        let max_iter = 10_000_000usize.max(100 * m);

        while report.iterations < max_iter {
            let Some((i, j)) = self.select(&alpha, &grad, tol) else {
                report.converged = true;
                break;
            };
            report.iterations += 1;
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let q_ij = self.q(i, j);
            let (q_ii, q_jj) = (self.q(i, i), self.q(j, j));

            if self.sign(i) != self.sign(j) {
                let quad = (q_ii + q_jj + 2.0 * q_ij).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (q_ii + q_jj - 2.0 * q_ij).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }

            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for (t, g) in grad.iter_mut().enumerate() {
                *g += self.q(t, i) * di + self.q(t, j) * dj;
            }
            if trace {
                report.objective_trace.push(self.objective(&alpha, &grad));
            }
        }
        if !report.converged {
            warn!("SMO stopped after {} iterations without converging", report.iterations);
        }
        report.objective = self.objective(&alpha, &grad);

        // bias from free variables, or the midpoint of the feasible interval
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for t in 0..m {
            let yg = self.sign(t) * grad[t];
            let positive = self.sign(t) > 0.0;
            if alpha[t] >= c {
                if positive {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if alpha[t] <= 0.0 {
                if positive {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        let rho = if free > 0 {
            sum_free / free as f64
        } else {
            (ub + lb) / 2.0
        };
        (alpha, -rho, report)
    }
}

impl SvrModel {
    pub fn predict(&self, x: &FeatureVector) -> Result<f64> {
        if self.feature_order_tag != FEATURE_ORDER_TAG {
            return Err(Error::FeatureLayout {
                model: self.feature_order_tag.clone(),
                engine: FEATURE_ORDER_TAG.to_string(),
            });
        }
        x.validate()?;
        let z = self.scaler.transform(x);
        Ok(self.predict_scaled(&z))
    }

    pub(crate) fn predict_scaled(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .fold(self.bias, |acc, (sv, coef)| {
                acc + coef * (-self.gamma * sq_dist(z, sv)).exp()
            })
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            version: MODEL_VERSION,
            gamma: self.gamma,
            c: self.c,
            epsilon: self.epsilon,
            bias: self.bias,
            scaler_mean: self.scaler.mean.clone(),
            scaler_std: self.scaler.std.clone(),
            feature_order_tag: self.feature_order_tag.clone(),
            support_vectors: self.support_vectors.clone(),
            dual_coefs: self.dual_coefs.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if v.version != MODEL_VERSION {
            return Err(Error::ModelVersion {
                found: v.version,
                expected: MODEL_VERSION,
            });
        }
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        let model = SvrModel {
            support_vectors: doc.support_vectors,
            dual_coefs: doc.dual_coefs,
            bias: doc.bias,
            gamma: doc.gamma,
            scaler: Scaler {
                mean: doc.scaler_mean,
                std: doc.scaler_std,
            },
            c: doc.c,
            epsilon: doc.epsilon,
            feature_order_tag: doc.feature_order_tag,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.scaler.mean.len() != FEATURE_COUNT || self.scaler.std.len() != FEATURE_COUNT {
            return bad(format!("scaler must have {FEATURE_COUNT} entries"));
        }
        if self.scaler.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("scaler stds must be positive".into());
        }
        if self.support_vectors.len() != self.dual_coefs.len() {
            return bad(format!(
                "{} support vectors but {} coefficients",
                self.support_vectors.len(),
                self.dual_coefs.len()
            ));
        }
        if let Some(sv) = self.support_vectors.iter().find(|v| v.len() != FEATURE_COUNT) {
            return bad(format!("support vector of length {}", sv.len()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) || !(self.c.is_finite() && self.c > 0.0) {
            return bad("gamma and C must be positive".into());
        }
        let slack = self.c * (1.0 + 1e-9);
        if self.dual_coefs.iter().any(|a| !a.is_finite() || a.abs() > slack) {
            return bad("dual coefficient outside [-C, C]".into());
        }
        let all = self
            .support_vectors
            .iter()
            .flatten()
            .chain(&self.scaler.mean)
            .chain([&self.bias, &self.epsilon]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    gamma: f64,
    #[serde(rename = "C")]
    c: f64,
    epsilon: f64,
    bias: f64,
    scaler_mean: Vec<f64>,
    scaler_std: Vec<f64>,
    feature_order_tag: String,
    support_vectors: Vec<Vec<f64>>,
    dual_coefs: Vec<f64>,
}
