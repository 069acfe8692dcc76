//! Batch normalization over feature pyramids, in three flavors.
//!
//! - `Single`: statistics per level, one shared (gamma, beta).
//! - `Independent`: statistics and (gamma, beta) per level.
//! - `Integrated`: one statistic pool over every value in the pyramid,
//!   shared (gamma, beta); the pyramid treated as one 3-D feature map.
//!
//! Training mode normalizes with batch statistics and folds them into the
//! running estimates; evaluation mode normalizes with the running estimates
//! only. The reverse-mode derivative covers the training path.

use super::pyramid::FeaturePyramid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Single,
    Independent,
    Integrated,
}

impl BnMode {
    /// Number of (gamma, beta) parameter sets for a pyramid of `levels`.
    fn param_sets(self, levels: usize) -> usize {
        match self {
            BnMode::Independent => levels,
            _ => 1,
        }
    }

    /// Number of running-statistic sets.
    fn stat_sets(self, levels: usize) -> usize {
        match self {
            BnMode::Integrated => 1,
            _ => levels,
        }
    }
}

/// Per-channel affine parameters plus running statistics.
#[derive(Debug, Clone)]
pub struct BNState {
    pub mode: BnMode,
    /// [param_set][channel]; one set, or one per level for Independent.
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// [stat_set][channel]; one set for Integrated, else one per level.
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
    pub eps: f64,
    pub momentum: f64,
    pub training: bool,
}

impl BNState {
    /// Fresh state: gamma 1, beta 0, running mean 0, running var 1.
    pub fn new(mode: BnMode, channels: usize, levels: usize) -> Self {
        Self {
            mode,
            gamma: vec![vec![1.0; channels]; mode.param_sets(levels)],
            beta: vec![vec![0.0; channels]; mode.param_sets(levels)],
            running_mean: vec![vec![0.0; channels]; mode.stat_sets(levels)],
            running_var: vec![vec![1.0; channels]; mode.stat_sets(levels)],
            eps: 1e-5,
            momentum: 0.1,
            training: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma[0].len()
    }

    fn param_set(&self, level: usize) -> usize {
        match self.mode {
            BnMode::Independent => level,
            _ => 0,
        }
    }

    fn stat_set(&self, level: usize) -> usize {
        match self.mode {
            BnMode::Integrated => 0,
            _ => level,
        }
    }
}

/// Pooled per-channel mean and biased variance over every level of the
/// pyramid (the Integrated statistics).
pub fn ibn_statistics(p: &FeaturePyramid) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = p.channels();
    let mut count = 0usize;
    let mut sum = vec![0.0; c];
    let mut sum_sq = vec![0.0; c];
    for level in p.levels() {
        let (n, _, h, w) = level.dims();
        count += n * h * w;
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = level.at(b, ch, y, x);
                        sum[ch] += v;
                        sum_sq[ch] += v * v;
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidPyramid(
            "batch statistics need at least one element per channel".into(),
        ));
    }
    let inv = 1.0 / count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s * inv).collect();
    let var = sum_sq
        .iter()
        .zip(mean.iter())
        .map(|(sq, m)| (sq * inv - m * m).max(0.0))
        .collect();
    Ok((mean, var))
}

/// Per-channel mean/biased variance of a single level.
fn level_statistics(p: &FeaturePyramid, l: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let single = FeaturePyramid::new(vec![p.level(l).clone()])?;
    ibn_statistics(&single)
}

/// Batch-normalize the pyramid. Training mode uses batch statistics and
/// updates the running estimates in place; evaluation mode reads the running
/// estimates only.
pub fn bn_forward(p: &FeaturePyramid, s: &mut BNState) -> Result<FeaturePyramid> {
    if p.channels() != s.channels() {
        return Err(Error::ShapeMismatch {
            axis: "channel",
            expected: s.channels(),
            got: p.channels(),
        });
    }
    let batch_stats = if s.training {
        Some(compute_batch_stats(p, s.mode)?)
    } else {
        None
    };

    if let Some(stats) = &batch_stats {
        for (set, (mean, var)) in stats.iter().enumerate() {
            for ch in 0..s.channels() {
                s.running_mean[set][ch] =
                    (1.0 - s.momentum) * s.running_mean[set][ch] + s.momentum * mean[ch];
                s.running_var[set][ch] =
                    (1.0 - s.momentum) * s.running_var[set][ch] + s.momentum * var[ch];
            }
        }
    }

    let mut out_levels = Vec::with_capacity(p.len());
    for (l, level) in p.levels().iter().enumerate() {
        let stat_set = s.stat_set(l);
        let (mean, var): (&[f64], &[f64]) = match &batch_stats {
            Some(stats) => (&stats[stat_set].0, &stats[stat_set].1),
            None => (&s.running_mean[stat_set], &s.running_var[stat_set]),
        };
        let gamma = &s.gamma[s.param_set(l)];
        let beta = &s.beta[s.param_set(l)];
        let (n, c, h, w) = level.dims();
        let mut out = level.clone();
        for b in 0..n {
            for ch in 0..c {
                let inv_std = 1.0 / (var[ch] + s.eps).sqrt();
                for y in 0..h {
                    for x in 0..w {
                        let v = (level.at(b, ch, y, x) - mean[ch]) * inv_std;
                        out.set(b, ch, y, x, gamma[ch] * v + beta[ch]);
                    }
                }
            }
        }
        out_levels.push(out);
    }
    Ok(FeaturePyramid::from_levels_unchecked(out_levels))
}

/// Batch statistics per stat set: one pooled entry for Integrated, one per
/// level otherwise.
fn compute_batch_stats(p: &FeaturePyramid, mode: BnMode) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    match mode {
        BnMode::Integrated => Ok(vec![ibn_statistics(p)?]),
        _ => (0..p.len()).map(|l| level_statistics(p, l)).collect(),
    }
}

/// Gradients of [`bn_forward`] in training mode.
#[derive(Debug, Clone)]
pub struct BnGrads {
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl BnGrads {
    pub fn zeros_like(s: &BNState) -> Self {
        Self {
            gamma: s.gamma.iter().map(|g| vec![0.0; g.len()]).collect(),
            beta: s.beta.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Reverse-mode derivative of the training-mode normalization. Batch
/// statistics are recomputed from `p`, so the state passed here must hold the
/// same parameters that produced the forward output (running stats are
/// buffers, not differentiated).
pub fn bn_vjp(
    p: &FeaturePyramid,
    s: &BNState,
    grad_out: &FeaturePyramid,
) -> Result<(FeaturePyramid, BnGrads)> {
    if grad_out.len() != p.len() {
        return Err(Error::InsufficientLevels {
            need: p.len(),
            got: grad_out.len(),
        });
    }
    let stats = compute_batch_stats(p, s.mode)?;
    let c = s.channels();
    let mut grads = BnGrads::zeros_like(s);
    let mut grad_levels: Vec<_> = p.levels().iter().map(|t| t.clone().map(|_| 0.0)).collect();

    // Group levels by stat set: Integrated pools all levels into set 0.
    let sets = match s.mode {
        BnMode::Integrated => 1,
        _ => p.len(),
    };
    for set in 0..sets {
        let members: Vec<usize> = match s.mode {
            BnMode::Integrated => (0..p.len()).collect(),
            _ => vec![set],
        };
        let (mean, var) = &stats[set];
        let count: usize = members
            .iter()
            .map(|&l| {
                let (n, _, h, w) = p.level(l).dims();
                n * h * w
            })
            .sum();
        let m = count as f64;

        for ch in 0..c {
            let inv_std = 1.0 / (var[ch] + s.eps).sqrt();

            // First pass: accumulate sum(g) and sum(g * xhat) over the set.
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for &l in &members {
                let level = p.level(l);
                let g = grad_out.level(l);
                let (n, _, h, w) = level.dims();
                for b in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            let xhat = (level.at(b, ch, y, x) - mean[ch]) * inv_std;
                            let gv = g.at(b, ch, y, x);
                            sum_g += gv;
                            sum_gx += gv * xhat;
                        }
                    }
                }
            }

            // Parameter gradients. For Independent each level is its own set,
            // so sum_g/sum_gx already cover exactly that level.
            let pset_of_set = match s.mode {
                BnMode::Independent => set,
                _ => 0,
            };
            grads.beta[pset_of_set][ch] += sum_g;
            grads.gamma[pset_of_set][ch] += sum_gx;

            // Input gradients.
            let gamma = s.gamma[pset_of_set][ch];
            for &l in &members {
                let level = p.level(l);
                let g = grad_out.level(l);
                let (n, _, h, w) = level.dims();
                for b in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            let xhat = (level.at(b, ch, y, x) - mean[ch]) * inv_std;
                            let gv = g.at(b, ch, y, x);
                            let gi = gamma * inv_std * (gv - sum_g / m - xhat * sum_gx / m);
                            let idx = grad_levels[l].idx(b, ch, y, x);
                            grad_levels[l].data_mut()[idx] += gi;
                        }
                    }
                }
            }
        }
    }
    Ok((
        FeaturePyramid::from_levels_unchecked(grad_levels),
        grads,
    ))
}
