//! Spearman, Kendall tau-b and Pearson correlation.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::invalid(format!(
            "correlation needs at least 3 samples, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    for v in [a, b] {
        if v.iter().all(|x| *x == v[0]) {
            return Err(Error::invalid("constant input, correlation undefined"));
        }
    }
    Ok(())
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Pearson linear correlation coefficient.
pub fn plcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(pearson_unchecked(a, b))
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn srocc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(pearson_unchecked(&average_ranks(a), &average_ranks(b)))
}

/// Kendall tau-b, via Knight's O(n log n) merge-sort algorithm.
pub fn krocc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as u64;
    let n0 = n * (n - 1) / 2;

    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    // pairs tied in a, and tied in both
    let mut ties_a = 0u64;
    let mut ties_ab = 0u64;
    let mut run_a = 1u64;
    let mut run_ab = 1u64;
    for w in order.windows(2) {
        let (i, j) = (w[0], w[1]);
        if a[i] == a[j] {
            run_a += 1;
            if b[i] == b[j] {
                run_ab += 1;
            } else {
                ties_ab += run_ab * (run_ab - 1) / 2;
                run_ab = 1;
            }
        } else {
            ties_a += run_a * (run_a - 1) / 2;
            ties_ab += run_ab * (run_ab - 1) / 2;
            run_a = 1;
            run_ab = 1;
        }
    }
    ties_a += run_a * (run_a - 1) / 2;
    ties_ab += run_ab * (run_ab - 1) / 2;

    let mut seq: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let swaps = merge_count(&mut seq);

    let mut ties_b = 0u64;
    let mut run_b = 1u64;
    for w in seq.windows(2) {
        if w[0] == w[1] {
            run_b += 1;
        } else {
            ties_b += run_b * (run_b - 1) / 2;
            run_b = 1;
        }
    }
    ties_b += run_b * (run_b - 1) / 2;

    // concordant - discordant over pairs untied in both variables
    let numerator =
        n0 as i64 - ties_a as i64 - ties_b as i64 + ties_ab as i64 - 2 * swaps as i64;
    Ok(tau_b(numerator, n0 - ties_a, n0 - ties_b))
}

pub(crate) fn tau_b(numerator: i64, untied_a: u64, untied_b: u64) -> f64 {
    (numerator as f64 / ((untied_a as f64) * (untied_b as f64)).sqrt()).clamp(-1.0, 1.0)
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}
