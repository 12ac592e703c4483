use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latentcodec::Modality;

pub const DEFAULT_THETA: f64 = 10_000.0;

/// First position component for rgb, normal and coord tokens.
pub const MODALITY_BIAS: [u32; 3] = [0, 32, 64];

/// Rotary frequencies for a three-axis position `(bias, row, col)`.
///
/// The feature vector is split into three consecutive blocks of
/// `axes_dim[a]` entries; block `a` is rotated pairwise by `p[a] * w_i` with
/// `w_i = theta^(-2i / axes_dim[a])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RopeConfig {
    pub theta: f64,
    pub axes_dim: [usize; 3],
}

impl RopeConfig {
    /// Equal split of a width-`d` feature over the three axes.
    pub fn for_dim(d: usize) -> Result<Self> {
        if d == 0 || d % 6 != 0 {
            return Err(Error::param(format!(
                "rotary width {d} does not split into three even axis blocks"
            )));
        }
        Ok(Self {
            theta: DEFAULT_THETA,
            axes_dim: [d / 3; 3],
        })
    }

    pub fn dim(&self) -> usize {
        self.axes_dim.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 1.0) {
            return Err(Error::param("rotary theta must be finite and > 1"));
        }
        if self.axes_dim.iter().any(|&n| n % 2 != 0) {
            return Err(Error::param(format!(
                "rotary axis widths {:?} must be even",
                self.axes_dim
            )));
        }
        Ok(())
    }

    /// Index range of axis `a`'s block.
    pub fn block(&self, a: usize) -> std::ops::Range<usize> {
        let start: usize = self.axes_dim[..a].iter().sum();
        start..start + self.axes_dim[a]
    }

    /// Rotation angle of every pair, axis by axis.
    pub fn angles(&self, p: [f64; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim() / 2);
        for (a, &n) in self.axes_dim.iter().enumerate() {
            for i in 0..n / 2 {
                let w = self.theta.powf(-2.0 * i as f64 / n as f64);
                out.push(p[a] * w);
            }
        }
        out
    }
}

/// Token position: modality bias on the first axis, latent pixel on the
/// other two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RopePosition {
    pub modality: Modality,
    pub row: u32,
    pub col: u32,
}

impl RopePosition {
    pub fn new(modality: Modality, row: u32, col: u32) -> Self {
        Self { modality, row, col }
    }

    pub fn bias(&self) -> u32 {
        MODALITY_BIAS[self.modality as usize]
    }

    pub fn vector(&self) -> [f64; 3] {
        [f64::from(self.bias()), f64::from(self.row), f64::from(self.col)]
    }
}

/// Rotates `v` by the angles of position `p`.
pub fn rope_apply(v: &[f64], p: [f64; 3], cfg: &RopeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if v.len() != cfg.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature width {} but rotary axes cover {}",
            v.len(),
            cfg.dim()
        )));
    }
    let mut out = v.to_vec();
    for (k, theta) in cfg.angles(p).into_iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let (x0, x1) = (v[2 * k], v[2 * k + 1]);
        out[2 * k] = x0 * c - x1 * s;
        out[2 * k + 1] = x0 * s + x1 * c;
    }
    Ok(out)
}
