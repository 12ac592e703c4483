//! Geometric and image metrics: surface sampling, Chamfer distance, F-score,
//! PSNR and SSIM.
//!
//! Chamfer distance is the sum of the two directed mean nearest-neighbour
//! distances (not halved). Nearest neighbours come from a uniform grid index
//! whose results are identical to a brute-force scan.

mod grid;
mod image;
mod report;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Vec3;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::rasterizer::NORMALIZED_LIMIT;

pub use self::image::{psnr, ssim, RgbImage, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use grid::PointGrid;
pub use report::{MetricReport, CD_CONVENTION};

pub const DEFAULT_SAMPLES: usize = 16_000;
pub const DEFAULT_TAU: f64 = 0.1;

/// Points sampled uniformly by area from a mesh surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCloud {
    pub points: Vec<Vec3>,
    pub seed: u64,
}

impl SampledCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self { points, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Picks triangles with probability proportional to area, then a uniform
/// barycentric point in each.
pub fn sample_surface(m: &TriMesh, k: usize, seed: u64) -> Result<SampledCloud> {
    if m.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !m.fits_in_cube(NORMALIZED_LIMIT) {
        let (lo, hi) = m.bbox().expect("non-empty mesh");
        return Err(Error::NotNormalized {
            min: lo.into(),
            max: hi.into(),
        });
    }
    let mut cumulative = Vec::with_capacity(m.faces.len());
    let mut total = 0.0;
    for f in 0..m.faces.len() {
        total += m.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidMesh("mesh has zero surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..k)
        .map(|_| {
            let t = rng.random::<f64>() * total;
            let f = cumulative.partition_point(|&c| c <= t).min(cumulative.len() - 1);
            let [a, b, c] = m.triangle(f);
            let s = rng.random::<f64>().sqrt();
            let r = rng.random::<f64>();
            a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r)
        })
        .collect();
    Ok(SampledCloud { points, seed })
}

fn check_nonempty(a: &SampledCloud, b: &SampledCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("point clouds must be non-empty"));
    }
    Ok(())
}

/// Distance from every point of `query` to its nearest point in `target`.
pub fn nearest_distances(query: &[Vec3], target: &[Vec3]) -> Vec<f64> {
    let grid = PointGrid::new(target);
    query
        .par_iter()
        .map(|q| grid.nearest_sq(q).sqrt())
        .collect()
}

/// Same as [`nearest_distances`] by exhaustive search.
pub fn nearest_distances_brute(query: &[Vec3], target: &[Vec3]) -> Vec<f64> {
    query
        .par_iter()
        .map(|q| {
            target
                .iter()
                .map(|t| grid::dist_sq(q, t))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn chamfer(a: &SampledCloud, b: &SampledCloud) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(mean(&nearest_distances(&a.points, &b.points)) + mean(&nearest_distances(&b.points, &a.points)))
}

pub fn chamfer_brute_force(a: &SampledCloud, b: &SampledCloud) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(mean(&nearest_distances_brute(&a.points, &b.points))
        + mean(&nearest_distances_brute(&b.points, &a.points)))
}

/// Harmonic mean of precision (share of `a` within `tau` of `b`) and recall
/// (share of `b` within `tau` of `a`).
pub fn fscore(a: &SampledCloud, b: &SampledCloud, tau: f64) -> Result<f64> {
    check_nonempty(a, b)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param(format!("fscore threshold {tau} must be positive")));
    }
    let within = |d: Vec<f64>| d.iter().filter(|&&x| x < tau).count() as f64 / d.len() as f64;
    let p = within(nearest_distances(&a.points, &b.points));
    let r = within(nearest_distances(&b.points, &a.points));
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}
