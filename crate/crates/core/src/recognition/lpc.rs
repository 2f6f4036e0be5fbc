//! Autocorrelation linear prediction.

use std::f64::consts::PI;

use super::RecognitionError;

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos()).collect()
}

/// Biased autocorrelation r[0..=max_lag].
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| if lag >= x.len() { 0.0 } else { x[lag..].iter().zip(x).map(|(a, b)| a * b).sum() })
        .collect()
}

/// Levinson-Durbin recursion on `r[0..=order]`.
///
/// Returns predictor coefficients `a[1..=order]` with
/// `x[n] ~ sum_k a[k] * x[n - k]`, i.e. the solution of the Toeplitz normal
/// equations `R a = r[1..]`. A zero-energy input yields all-zero coefficients;
/// if the prediction error collapses the remaining coefficients stay zero.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<Vec<f64>, RecognitionError> {
    if r.len() < order + 1 {
        return Err(RecognitionError::InvalidParameter(format!(
            "need {} autocorrelation lags, got {}",
            order + 1,
            r.len()
        )));
    }
    let mut a = vec![0.0; order];
    if r[0] == 0.0 {
        return Ok(a);
    }
    let floor = r[0] * 1e-12;
    let mut err = r[0];
    let mut prev = vec![0.0; order];
    for i in 0..order {
        let acc = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let k = acc / err;
        if !k.is_finite() {
            return Err(RecognitionError::Numerical(format!("reflection coefficient {k} at step {}", i + 1)));
        }
        prev[..i].copy_from_slice(&a[..i]);
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
        if err <= floor {
            break;
        }
    }
    if a.iter().any(|c| !c.is_finite()) {
        return Err(RecognitionError::Numerical("non-finite LPC coefficient".into()));
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamming_endpoints() {
        let w = hamming(5);
        assert!((w[0] - 0.08).abs() < 1e-15);
        assert!((w[2] - 1.0).abs() < 1e-15);
        assert!((w[4] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn first_order_ar() {
        // r[k] = 0.9^k is the autocorrelation of an AR(1) process with a1 = 0.9.
        let r: Vec<f64> = (0..4).map(|k| 0.9f64.powi(k)).collect();
        let a = levinson_durbin(&r, 3).unwrap();
        assert!((a[0] - 0.9).abs() < 1e-12);
        assert!(a[1].abs() < 1e-12 && a[2].abs() < 1e-12);
    }

    #[test]
    fn zero_energy() {
        assert_eq!(levinson_durbin(&[0.0; 4], 3).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn autocorrelation_short_input() {
        assert_eq!(autocorrelation(&[1.0, 2.0], 3), vec![5.0, 2.0, 0.0, 0.0]);
    }
}
