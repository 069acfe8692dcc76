//! The feature pyramid value type: an ordered list of feature maps with
//! shared batch/channel counts and (roughly) halving spatial dims.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered feature maps, bottom (largest) first. Every level shares n and c;
/// each level's spatial dims are within +-1 of half the previous level's
/// (ceil-halving pyramids satisfy this exactly).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InsufficientLevels { need: 1, got: 0 });
        }
        let (n, c, _, _) = levels[0].dims();
        for (i, pair) in levels.windows(2).enumerate() {
            let (n0, c0, h0, w0) = pair[0].dims();
            let (n1, c1, h1, w1) = pair[1].dims();
            if (n1, c1) != (n0, c0) {
                return Err(Error::InvalidPyramid(format!(
                    "levels {i} and {} disagree on batch/channel dims",
                    i + 1
                )));
            }
            for (axis, cur, next) in [("height", h0, h1), ("width", w0, w1)] {
                let ok = next >= 1
                    && next <= cur
                    && (2 * next).abs_diff(cur) <= 2;
                if !ok {
                    return Err(Error::InvalidPyramid(format!(
                        "level {} {axis} {next} is not within +-1 of half of level {i} {axis} {cur}",
                        i + 1
                    )));
                }
            }
        }
        let _ = (n, c);
        Ok(Self { levels })
    }

    /// Construct from levels already known to satisfy the invariants
    /// (outputs of pconv keep their input's level structure).
    pub(crate) fn from_levels_unchecked(levels: Vec<Tensor>) -> Self {
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub(crate) fn levels_mut(&mut self) -> &mut [Tensor] {
        &mut self.levels
    }

    pub fn level(&self, l: usize) -> &Tensor {
        &self.levels[l]
    }

    pub fn into_levels(self) -> Vec<Tensor> {
        self.levels
    }

    pub fn batch(&self) -> usize {
        self.levels[0].dims().0
    }

    pub fn channels(&self) -> usize {
        self.levels[0].dims().1
    }

    /// Zero pyramid with the same level structure.
    pub fn zeros_like(&self) -> Self {
        Self {
            levels: self.levels.iter().map(|t| Tensor::zeros(t.dims())).collect(),
        }
    }

    pub fn map_levels(&self, f: impl Fn(&Tensor) -> Tensor) -> Self {
        Self {
            levels: self.levels.iter().map(f).collect(),
        }
    }

    /// self += alpha * other, levelwise.
    pub fn axpy(&mut self, alpha: f64, other: &FeaturePyramid) {
        assert_eq!(self.len(), other.len(), "pyramid axpy level mismatch");
        for (a, b) in self.levels.iter_mut().zip(other.levels.iter()) {
            a.axpy(alpha, b);
        }
    }

    pub fn max_abs_diff(&self, other: &FeaturePyramid) -> f64 {
        assert_eq!(self.len(), other.len(), "pyramid diff level mismatch");
        self.levels
            .iter()
            .zip(other.levels.iter())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of all levels.
    pub fn bits_eq(&self, other: &FeaturePyramid) -> bool {
        self.len() == other.len()
            && self
                .levels
                .iter()
                .zip(other.levels.iter())
                .all(|(a, b)| {
                    a.dims() == b.dims()
                        && a.data()
                            .iter()
                            .zip(b.data().iter())
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }
}
