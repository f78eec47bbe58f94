//! Sample skewness.

use super::EvalError;

/// Adjusted Fisher-Pearson sample skewness:
/// G1 = sqrt(n(n-1)) / (n-2) * m3 / m2^(3/2).
pub fn skewness(values: &[f32]) -> Result<f64, EvalError> {
    let n = values.len();
    if n < 3 {
        return Err(EvalError::Degenerate(format!(
            "skewness needs at least 3 values, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / nf;
    let m2 = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / nf;
    let m3 = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(3))
        .sum::<f64>()
        / nf;
    if m2 == 0.0 {
        return Err(EvalError::Degenerate(
            "skewness is undefined for zero variance".into(),
        ));
    }
    let g1 = m3 / m2.powf(1.5);
    Ok(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
}
