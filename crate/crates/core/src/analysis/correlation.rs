//! Inter-level correlation of a feature pyramid: every level is resized to
//! the bottom level's grid and compared by Pearson correlation of the
//! flattened features. A qualitative diagnostic; no golden values are pinned
//! to it beyond the structural invariants.

use crate::error::{Error, Result};
use crate::pconv::FeaturePyramid;
use crate::tensor::{upsample_bilinear_x2, Tensor};

/// Correlation matrix plus the levels flagged as constant (zero variance),
/// which correlate 0 against everything by convention.
#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub matrix: Vec<Vec<f64>>,
    pub constant_levels: Vec<usize>,
}

/// Resize to the bottom level's dims by repeated x2 bilinear upsampling with
/// a top-left crop for odd mismatches.
fn resize_to(level: &Tensor, h: usize, w: usize) -> Tensor {
    let mut cur = level.clone();
    while cur.height() < h || cur.width() < w {
        cur = upsample_bilinear_x2(&cur);
    }
    cur.fit_spatial(h, w)
}

/// Pearson correlation matrix over levels, averaged across batch items.
/// Entry (i, j) correlates the flattened (c, h, w) features of levels i and
/// j after resizing to the bottom grid. The diagonal is exactly 1 and the
/// matrix is symmetric by construction.
pub fn correlation_matrix(p: &FeaturePyramid) -> Result<CorrelationReport> {
    if p.len() < 2 {
        return Err(Error::InsufficientLevels { need: 2, got: p.len() });
    }
    let (n, _, h, w) = p.level(0).dims();
    if n == 0 {
        return Err(Error::InvalidPyramid("correlation needs a non-empty batch".into()));
    }
    let count = p.len();
    let resized: Vec<Tensor> = p.levels().iter().map(|t| resize_to(t, h, w)).collect();

    // Per batch item and level: centered feature vector and its norm.
    let feature_len = p.channels() * h * w;
    let mut centered: Vec<Vec<Vec<f64>>> = Vec::with_capacity(count);
    let mut norms: Vec<Vec<f64>> = Vec::with_capacity(count);
    for level in &resized {
        let mut per_batch = Vec::with_capacity(n);
        let mut per_batch_norm = Vec::with_capacity(n);
        for b in 0..n {
            let start = b * feature_len;
            let slice = &level.data()[start..start + feature_len];
            let mean = slice.iter().sum::<f64>() / feature_len as f64;
            let vec: Vec<f64> = slice.iter().map(|v| v - mean).collect();
            let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
            per_batch.push(vec);
            per_batch_norm.push(norm);
        }
        centered.push(per_batch);
        norms.push(per_batch_norm);
    }

    let tiny = 1e-12;
    let constant_levels: Vec<usize> = (0..count)
        .filter(|&l| norms[l].iter().all(|&v| v <= tiny))
        .collect();

    let mut matrix = vec![vec![0.0; count]; count];
    for i in 0..count {
        matrix[i][i] = 1.0;
        for j in i + 1..count {
            let mut acc = 0.0;
            for b in 0..n {
                if norms[i][b] <= tiny || norms[j][b] <= tiny {
                    continue; // constant slice: correlation 0 by convention
                }
                let dot: f64 = centered[i][b]
                    .iter()
                    .zip(centered[j][b].iter())
                    .map(|(a, c)| a * c)
                    .sum();
                acc += dot / (norms[i][b] * norms[j][b]);
            }
            let value = acc / n as f64;
            matrix[i][j] = value;
            matrix[j][i] = value;
        }
    }
    Ok(CorrelationReport {
        matrix,
        constant_levels,
    })
}
