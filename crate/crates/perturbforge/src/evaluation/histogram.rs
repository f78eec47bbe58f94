//! Density histograms emitted as CSV.

use std::path::Path;

use super::EvalError;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// bins + 1 edges spanning [min, max].
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width bins over [min, max]; the last bin is right-inclusive so the
/// counts always sum to the sample size.
pub fn density_histogram(values: &[f32], bins: usize) -> Result<Histogram, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Degenerate("histogram needs values".into()));
    }
    if bins == 0 {
        return Err(EvalError::Degenerate("histogram needs at least one bin".into()));
    }
    let min = values.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
    let max = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| min + (max - min) * i as f64 / bins as f64)
        .collect();
    let mut counts = vec![0usize; bins];
    let width = (max - min) / bins as f64;
    for &v in values {
        let idx = if width == 0.0 {
            0
        } else {
            (((v as f64 - min) / width) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// edge_lo,edge_hi,count rows.
pub fn write_histogram_csv(h: &Histogram, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = String::from("edge_lo,edge_hi,count\n");
    for (i, &count) in h.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", h.edges[i], h.edges[i + 1], count));
    }
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
