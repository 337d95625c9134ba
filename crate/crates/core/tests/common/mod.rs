//! Reference implementations used as test oracles. Each one is written
//! straight from the definition, favoring obviousness over speed.

#![allow(dead_code)]

pub mod criteria;

use has_qoe::content::{BackboneParams, ConvLayer, GruParams, PooledStats};
use has_qoe::session::GrayFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The 15 ratios 1:8 .. 1:1 .. 8:1.
pub fn weight_grid() -> Vec<(u32, u32)> {
    let mut grid: Vec<(u32, u32)> = (2..=8).rev().map(|e| (1, e)).collect();
    grid.push((1, 1));
    grid.extend((2..=8).map(|s| (s, 1)));
    grid
}

/// Exhaustive split maximizing `fr_s^w_s * fr_e^w_e` in exact integers;
/// the smallest `fr_s` wins ties.
pub fn allocate_oracle(fr: usize, w_s: u32, w_e: u32) -> (usize, usize) {
    let mut best = (0u128, 0usize);
    for s in 1..fr {
        let v = (s as u128).pow(w_s) * ((fr - s) as u128).pow(w_e);
        if v > best.0 {
            best = (v, s);
        }
    }
    (best.1, fr - best.1)
}

/// Texture by direct evaluation in integers: every quantity is multiplied
/// by `2 W H`, the common denominator of the row, column and diagonal
/// averages.
pub fn texture_oracle(frame: &GrayFrame) -> f64 {
    let (w, h) = (frame.width(), frame.height());
    let g = |x: usize, y: usize| frame.get(x, y) as i128;
    let (wi, hi) = (w as i128, h as i128);
    let mut row = vec![0i128; h];
    for (y, r) in row.iter_mut().enumerate() {
        for x in 0..w {
            *r += g(x, y);
        }
    }
    let mut col = vec![0i128; w];
    for (x, c) in col.iter_mut().enumerate() {
        for y in 0..h {
            *c += g(x, y);
        }
    }
    let mut total = 0i128;
    let mut covered = 0i128;
    for by in 0..h / 16 {
        for bx in 0..w / 16 {
            let (mut hor, mut ver, mut dia) = (0i128, 0i128, 0i128);
            for y in 16 * by..16 * by + 16 {
                for x in 16 * bx..16 * bx + 16 {
                    // |Ra - g| * 2WH = 2H |R - W g|
                    hor += 2 * hi * (row[y] - wi * g(x, y)).abs();
                    ver += 2 * wi * (col[x] - hi * g(x, y)).abs();
                    dia += (wi * col[x] + hi * row[y] - 2 * wi * hi * g(x, y)).abs();
                    covered += 1;
                }
            }
            total += hor.min(ver).min(dia);
        }
    }
    total as f64 / (2 * wi * hi * covered) as f64
}

pub fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayFrame {
    let px = (0..w * h).map(|_| rng.random_range(0..=255u8) as f64).collect();
    GrayFrame::new(w, h, px).unwrap()
}

/// Kendall tau-b by counting every pair.
pub fn kendall_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0i64, 0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 {
                tie_a += 1;
            }
            if db == 0.0 {
                tie_b += 1;
            }
            if da * db > 0.0 {
                conc += 1;
            } else if da * db < 0.0 {
                disc += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as u64;
    ((conc - disc) as f64 / (((n0 - tie_a) as f64) * ((n0 - tie_b) as f64)).sqrt()).clamp(-1.0, 1.0)
}

/// Average ranks by counting: `1 + #smaller + (#equal - 1) / 2`.
pub fn rank_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Centered two-pass Pearson correlation.
pub fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Pearson correlation from raw sums.
pub fn pearson_direct(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

/// Naive convolution network forward pass on a gray frame: every output
/// element is an explicit sum over the receptive field with bounds checks.
pub fn conv_oracle(net: &BackboneParams, frame: &GrayFrame) -> (usize, usize, usize, Vec<f64>) {
    let (mut h, mut w) = (frame.height(), frame.width());
    let mut ch = net.input_channels();
    let mut data = Vec::new();
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                data.push((frame.get(x, y) / 255.0 - net.input_mean[c]) / net.input_std[c]);
            }
        }
    }
    for l in &net.layers {
        let oh = (h + 2 * l.padding - l.kh) / l.stride + 1;
        let ow = (w + 2 * l.padding - l.kw) / l.stride + 1;
        let mut out = vec![0.0; l.out_ch * oh * ow];
        for oc in 0..l.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = l.bias[oc];
                    for ic in 0..l.in_ch {
                        for ky in 0..l.kh {
                            for kx in 0..l.kw {
                                let iy = (oy * l.stride + ky) as isize - l.padding as isize;
                                let ix = (ox * l.stride + kx) as isize - l.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wgt = l.weights[((oc * l.in_ch + ic) * l.kh + ky) * l.kw + kx];
                                acc += wgt * data[(ic * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc.max(0.0);
                }
            }
        }
        data = out;
        ch = l.out_ch;
        h = oh;
        w = ow;
    }
    (ch, h, w, data)
}

/// A random fixture network of 3x3 and 1x1 layers with mixed strides and
/// paddings.
pub fn fixture_net(seed: u64, in_ch: usize) -> BackboneParams {
    use has_qoe::content::Activation;
    let mut r = rng(seed);
    let specs = [(4, 3, 1, 1), (6, 3, 2, 1), (5, 1, 1, 0), (3, 3, 2, 0)];
    let mut layers = Vec::new();
    let mut c = in_ch;
    for (out_ch, k, stride, padding) in specs {
        let n = out_ch * c * k * k;
        layers.push(ConvLayer {
            out_ch,
            in_ch: c,
            kh: k,
            kw: k,
            stride,
            padding,
            activation: Activation::Relu,
            weights: (0..n).map(|_| r.random_range(-0.5..0.5)).collect(),
            bias: (0..out_ch).map(|_| r.random_range(-0.1..0.2)).collect(),
        });
        c = out_ch;
    }
    BackboneParams::new(layers, vec![0.45; in_ch], vec![0.3; in_ch]).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU step written out from the gate equations.
pub fn gru_step_oracle(p: &GruParams, x: [f64; 4], h: [f64; 4]) -> [f64; 4] {
    let gate = |w: &[[f64; 8]; 4], b: &[f64; 4], i: usize, hh: [f64; 4]| {
        let mut a = b[i];
        for j in 0..4 {
            a += w[i][j] * x[j] + w[i][4 + j] * hh[j];
        }
        a
    };
    let r: [f64; 4] = std::array::from_fn(|i| sigmoid(gate(&p.reset.weight, &p.reset.bias, i, h)));
    let rh: [f64; 4] = std::array::from_fn(|i| r[i] * h[i]);
    let mut out = [0.0; 4];
    for i in 0..4 {
        let z = sigmoid(gate(&p.update.weight, &p.update.bias, i, h));
        let n = gate(&p.candidate.weight, &p.candidate.bias, i, rh).tanh();
        out[i] = z * h[i] + (1.0 - z) * n;
    }
    out
}

pub fn gru_oracle(p: &GruParams, seq: &[[f64; 4]]) -> [f64; 4] {
    seq.iter().fold([0.0; 4], |h, x| gru_step_oracle(p, *x, h))
}

pub fn stats(v: [f64; 4]) -> PooledStats {
    PooledStats {
        max: v[0],
        min: v[1],
        mean: v[2],
        std: v[3],
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}
