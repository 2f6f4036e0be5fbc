//! Independent reference computations the library is checked against.

use std::f64::consts::PI;

use dmarf_core::storage::CanonicalValue;
use proptest::prelude::*;

/// Mean magnitude spectrum over non-overlapping windows by the O(n^2)
/// definition, first `bins` bins. Short input is zero-padded to one window.
pub fn dft_mean_magnitudes(x: &[f64], window: usize, bins: usize) -> Vec<f64> {
    let mut x = x.to_vec();
    if x.len() < window {
        x.resize(window, 0.0);
    }
    let frames: Vec<&[f64]> = x.chunks_exact(window).collect();
    let mut acc = vec![0.0; bins];
    for frame in &frames {
        for (k, a) in acc.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, s) in frame.iter().enumerate() {
                // Reduce the index product first so the angle stays exact.
                let angle = -2.0 * PI * ((k * n) % window) as f64 / window as f64;
                re += s * angle.cos();
                im += s * angle.sin();
            }
            *a += re.hypot(im);
        }
    }
    acc.iter().map(|a| a / frames.len() as f64).collect()
}

/// Predictor coefficients from the autocorrelation normal equations, solved
/// densely by Gaussian elimination with partial pivoting. The whole
/// (zero-padded) signal is Hamming weighted first.
pub fn lpc_dense(x: &[f64], order: usize, window: usize) -> Vec<f64> {
    let mut x = x.to_vec();
    if x.len() < window {
        x.resize(window, 0.0);
    }
    let n = x.len();
    let w: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 1.0 } else { 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos() })
        .collect();
    let y: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
    let r: Vec<f64> = (0..=order).map(|lag| (lag..n).map(|i| y[i] * y[i - lag]).sum()).collect();

    let mut m: Vec<Vec<f64>> = (0..order)
        .map(|i| {
            let mut row: Vec<f64> = (0..order).map(|j| r[i.abs_diff(j)]).collect();
            row.push(r[i + 1]);
            row
        })
        .collect();
    for col in 0..order {
        let pivot = (col..order).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, pivot);
        for row in col + 1..order {
            let f = m[row][col] / m[col][col];
            for k in col..=order {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut a = vec![0.0; order];
    for i in (0..order).rev() {
        let s: f64 = (i + 1..order).map(|j| m[i][j] * a[j]).sum();
        a[i] = (m[i][order] - s) / m[i][i];
    }
    a
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Arbitrary canonical values with finite floats, up to a few levels deep.
pub fn canonical_value() -> impl Strategy<Value = CanonicalValue> {
    use prop::num::f64::{NEGATIVE, NORMAL, POSITIVE, SUBNORMAL, ZERO};
    let finite = POSITIVE | NEGATIVE | NORMAL | SUBNORMAL | ZERO;
    let leaf = prop_oneof![
        any::<i64>().prop_map(CanonicalValue::I64),
        finite.prop_map(CanonicalValue::F64),
        ".{0,12}".prop_map(CanonicalValue::Str),
        prop::collection::vec(any::<u8>(), 0..24).prop_map(CanonicalValue::Bytes),
        prop::collection::vec(finite, 0..8).prop_map(CanonicalValue::F64Array),
    ];
    leaf.prop_recursive(3, 32, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(CanonicalValue::List),
            prop::collection::btree_map(".{0,6}", inner, 0..6).prop_map(CanonicalValue::Map),
        ]
    })
}
