//! Post-generation coordinate correction.
//!
//! Decoded coordinate maps are lifted to a point field `C` in which every
//! point remembers its source pixel, and therefore its camera ray. The
//! correction chain is
//!
//! ```text
//! C'  = bilateral(C)
//! C'' = project_to_rays(C')
//! D   = C'' - C
//! D'  = bilateral(D)
//! C^  = C + D'
//! ```
//!
//! Both bilateral filters work on the image lattice of each view: the
//! spatial kernel is over pixel distance inside one view, the range kernel
//! over the filtered quantity (3D position, then displacement). Kernels are
//! Gaussians truncated at 3 sigma. A point is an outlier when no window
//! neighbour lies within `outlier_distance` and its distance to the
//! componentwise window median exceeds three normal-consistent median
//! absolute deviations of the neighbours. An outlier's range kernel is
//! centred on that median instead of on the point itself. When every
//! weight vanishes the point falls back to its range centre.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::MultiViewBundle;
use crate::camera::{CameraRig, Vec3};
use crate::error::{Error, PathContext, Result};
use crate::ply::{self, ElementDef, PropertyDef, ScalarType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelSource {
    pub view: u32,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointField {
    pub points: Vec<Vec3>,
    pub source: Vec<PixelSource>,
    pub valid: Vec<bool>,
}

/// Per-point displacement vectors, indexed like their point field.
pub type DisplacementField = Vec<Vec3>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionParams {
    /// Spatial sigma of the point filter, in pixels.
    pub sigma_spatial: f64,
    /// Range sigma of the point filter, in world units.
    pub sigma_range: f64,
    /// Spatial sigma of the displacement filter, in pixels.
    pub sigma_displacement: f64,
    /// Range sigma of the displacement filter, in world units.
    pub sigma_displacement_range: f64,
    /// Neighbour distance below which a point is not an outlier.
    pub outlier_distance: f64,
}

impl Default for CorrectionParams {
    fn default() -> Self {
        Self {
            sigma_spatial: 2.0,
            sigma_range: 0.004,
            sigma_displacement: 3.0,
            sigma_displacement_range: 0.001,
            outlier_distance: 0.1,
        }
    }
}

impl CorrectionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_spatial", self.sigma_spatial),
            ("sigma_range", self.sigma_range),
            ("sigma_displacement", self.sigma_displacement),
            ("sigma_displacement_range", self.sigma_displacement_range),
            ("outlier_distance", self.outlier_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl PointField {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// One valid point per masked pixel, in view, row, column order.
    pub fn from_bundle(bundle: &MultiViewBundle) -> Self {
        let mut f = PointField {
            points: Vec::new(),
            source: Vec::new(),
            valid: Vec::new(),
        };
        for (k, v) in bundle.views.iter().enumerate() {
            for y in 0..v.height {
                for x in 0..v.width {
                    let i = v.index(x, y);
                    if v.mask[i] {
                        let c = v.coord[i].map(f64::from);
                        f.points.push(Vec3::new(c[0], c[1], c[2]));
                        f.source.push(PixelSource { view: k as u32, x, y });
                        f.valid.push(true);
                    }
                }
            }
        }
        f
    }

    /// Copy of `bundle` with coordinates replaced by this field's points.
    /// Pixels of invalid points are unmasked and reset to background.
    pub fn apply_to_bundle(&self, bundle: &MultiViewBundle) -> Result<MultiViewBundle> {
        let mut out = bundle.clone();
        for (n, s) in self.source.iter().enumerate() {
            let v = out
                .views
                .get_mut(s.view as usize)
                .ok_or_else(|| Error::ShapeMismatch(format!("point {n} references view {}", s.view)))?;
            if s.x >= v.width || s.y >= v.height {
                return Err(Error::ShapeMismatch(format!("point {n} outside its view")));
            }
            let i = v.index(s.x, s.y);
            if self.valid[n] {
                let p = self.points[n];
                v.coord[i] = [p.x as f32, p.y as f32, p.z as f32].map(|c| c.clamp(-1.0, 1.0));
            } else {
                let bg = crate::bundle::ViewImages::empty(1, 1);
                v.mask[i] = false;
                v.coord[i] = bg.coord[0];
                v.normal[i] = bg.normal[0];
                v.rgb[i] = bg.rgb[0];
            }
        }
        Ok(out)
    }

    /// Mean distance of valid points to their pixel rays.
    pub fn mean_ray_residual(&self, rig: &CameraRig) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, p) in self.points.iter().enumerate() {
            if self.valid[i] {
                sum += source_ray(rig, self.source[i])?.line_distance(p);
                n += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    pub fn write_ply<W: Write>(&self, out: &mut W) -> Result<()> {
        let props = [
            ("x", ScalarType::F64),
            ("y", ScalarType::F64),
            ("z", ScalarType::F64),
            ("view_id", ScalarType::U32),
            ("px", ScalarType::U32),
            ("py", ScalarType::U32),
            ("valid", ScalarType::U8),
        ];
        let def = ElementDef {
            name: "vertex".into(),
            count: self.len(),
            properties: props.iter().map(|(n, t)| PropertyDef::scalar(n, *t)).collect(),
        };
        ply::write_header(out, &["coordinate point field"], &[def])?;
        let mut buf = Vec::with_capacity(self.len() * 37);
        for i in 0..self.len() {
            let p = self.points[i];
            let s = self.source[i];
            let row = [p.x, p.y, p.z, f64::from(s.view), f64::from(s.x), f64::from(s.y)];
            for ((_, t), v) in props.iter().zip(row) {
                t.encode(v, &mut buf);
            }
            buf.push(u8::from(self.valid[i]));
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_ply<R: BufRead>(input: R) -> Result<Self> {
        let data = ply::read(input)?;
        let v = data
            .element("vertex")
            .ok_or_else(|| Error::format("ply", "no vertex element"))?;
        let col = |n: &str| {
            v.scalar(n)
                .ok_or_else(|| Error::format("ply", format!("missing vertex property {n}")))
        };
        let (x, y, z) = (col("x")?, col("y")?, col("z")?);
        let (view, px, py, valid) = (col("view_id")?, col("px")?, col("py")?, col("valid")?);
        Ok(PointField {
            points: (0..x.len()).map(|i| Vec3::new(x[i], y[i], z[i])).collect(),
            source: (0..x.len())
                .map(|i| PixelSource {
                    view: view[i] as u32,
                    x: px[i] as u32,
                    y: py[i] as u32,
                })
                .collect(),
            valid: valid.iter().map(|&v| v != 0.0).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).at_path(path)?);
        self.write_ply(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_ply(std::io::BufReader::new(std::fs::File::open(path).at_path(path)?))
    }
}

fn source_ray(rig: &CameraRig, s: PixelSource) -> Result<crate::camera::Ray> {
    rig.views
        .get(s.view as usize)
        .ok_or_else(|| Error::ShapeMismatch(format!("no camera for view {}", s.view)))?
        .pixel_ray(s.x, s.y)
}

/// Per-view lookup from pixel to valid point index.
struct Lattice {
    views: Vec<(u32, u32, Vec<Option<u32>>)>,
}

impl Lattice {
    fn new(f: &PointField) -> Self {
        let nviews = f.source.iter().map(|s| s.view as usize + 1).max().unwrap_or(0);
        let mut dims = vec![(0u32, 0u32); nviews];
        for s in &f.source {
            let d = &mut dims[s.view as usize];
            *d = (d.0.max(s.x + 1), d.1.max(s.y + 1));
        }
        let mut views: Vec<_> = dims
            .into_iter()
            .map(|(w, h)| (w, h, vec![None; (w * h) as usize]))
            .collect();
        for (n, s) in f.source.iter().enumerate() {
            if f.valid[n] {
                let (w, _, grid) = &mut views[s.view as usize];
                grid[(s.y * *w + s.x) as usize] = Some(n as u32);
            }
        }
        Lattice { views }
    }

    /// Valid neighbours of `s` within `radius` pixels (inclusive of `s`),
    /// with their squared pixel distance.
    fn neighbours(&self, s: PixelSource, radius: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (w, h, grid) = &self.views[s.view as usize];
        let r = radius.floor() as i64;
        let r2 = radius * radius;
        for dy in -r..=r {
            let y = i64::from(s.y) + dy;
            if y < 0 || y >= i64::from(*h) {
                continue;
            }
            for dx in -r..=r {
                let x = i64::from(s.x) + dx;
                let d2 = (dx * dx + dy * dy) as f64;
                if x < 0 || x >= i64::from(*w) || d2 > r2 {
                    continue;
                }
                if let Some(j) = grid[(y as u32 * *w + x as u32) as usize] {
                    out.push((j as usize, d2));
                }
            }
        }
    }
}

// Hampel identifier: three normal-consistent median absolute deviations.
const OUTLIER_MADS: f64 = 3.0 * 1.4826;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Joint bilateral filter of `values` over the lattice of `f`.
fn bilateral(
    f: &PointField,
    values: &[Vec3],
    sigma_spatial: f64,
    sigma_range: f64,
    outlier_distance: Option<f64>,
) -> Vec<Vec3> {
    let lattice = Lattice::new(f);
    let radius = 3.0 * sigma_spatial;
    let range_cut2 = (3.0 * sigma_range).powi(2);
    let (ks, kr) = (-0.5 / sigma_spatial.powi(2), -0.5 / sigma_range.powi(2));
    (0..f.len())
        .into_par_iter()
        .map_init(Vec::new, |nb, i| {
            if !f.valid[i] {
                return values[i];
            }
            lattice.neighbours(f.source[i], radius, nb);
            let mut centre = values[i];
            if let Some(limit) = outlier_distance {
                let others = nb.iter().filter(|&&(j, _)| j != i).count();
                let close = nb
                    .iter()
                    .any(|&(j, _)| j != i && (values[j] - values[i]).norm() <= limit);
                if !close && others > 0 {
                    let mut m = Vec3::zeros();
                    let mut axis: Vec<f64> = Vec::with_capacity(others);
                    for a in 0..3 {
                        axis.clear();
                        axis.extend(nb.iter().filter(|&&(j, _)| j != i).map(|&(j, _)| values[j][a]));
                        m[a] = median(&mut axis);
                    }
                    axis.clear();
                    axis.extend(nb.iter().filter(|&&(j, _)| j != i).map(|&(j, _)| (values[j] - m).norm()));
                    let mad = median(&mut axis);
                    if (values[i] - m).norm() > OUTLIER_MADS * mad {
                        centre = m;
                    }
                }
            }
            let mut acc = Vec3::zeros();
            let mut wsum = 0.0;
            for &(j, d2) in nb.iter() {
                let r2 = (values[j] - centre).norm_squared();
                if r2 > range_cut2 {
                    continue;
                }
                let w = (ks * d2 + kr * r2).exp();
                acc += values[j] * w;
                wsum += w;
            }
            if wsum > 0.0 {
                acc / wsum
            } else {
                centre
            }
        })
        .collect()
}

fn check_sigmas(sigma_spatial: f64, sigma_range: f64) -> Result<()> {
    if !(sigma_spatial > 0.0 && sigma_range > 0.0) {
        return Err(Error::param(format!(
            "bilateral sigmas must be positive, got {sigma_spatial} / {sigma_range}"
        )));
    }
    Ok(())
}

/// Bilateral smoothing of point positions (`C -> C'`), with outlier
/// re-anchoring at the default outlier distance.
pub fn bilateral_filter_points(f: &PointField, sigma_spatial: f64, sigma_range: f64) -> Result<PointField> {
    bilateral_filter_points_with(f, sigma_spatial, sigma_range, CorrectionParams::default().outlier_distance)
}

pub fn bilateral_filter_points_with(
    f: &PointField,
    sigma_spatial: f64,
    sigma_range: f64,
    outlier_distance: f64,
) -> Result<PointField> {
    check_sigmas(sigma_spatial, sigma_range)?;
    let points = bilateral(f, &f.points, sigma_spatial, sigma_range, Some(outlier_distance));
    Ok(PointField {
        points,
        source: f.source.clone(),
        valid: f.valid.clone(),
    })
}

/// Bilateral smoothing of a displacement field on the lattice of `f`.
pub fn bilateral_filter_displacements(
    f: &PointField,
    d: &DisplacementField,
    sigma_spatial: f64,
    sigma_range: f64,
) -> Result<DisplacementField> {
    check_sigmas(sigma_spatial, sigma_range)?;
    if d.len() != f.len() {
        return Err(Error::ShapeMismatch("displacement field length".into()));
    }
    Ok(bilateral(f, d, sigma_spatial, sigma_range, None))
}

/// Replaces each valid point by its orthogonal projection onto its own
/// pixel ray (`C' -> C''`). A negative ray parameter clamps the point to
/// the ray origin and marks it invalid, as does an unresolvable ray.
pub fn project_to_rays(f: &PointField, rig: &CameraRig) -> PointField {
    let (points, valid) = f
        .points
        .par_iter()
        .zip(&f.source)
        .zip(&f.valid)
        .map(|((p, s), &ok)| {
            if !ok {
                return (*p, false);
            }
            match source_ray(rig, *s) {
                Ok(ray) => {
                    let t = ray.parameter_of(p);
                    if t < 0.0 {
                        (ray.origin, false)
                    } else {
                        (ray.at(t), true)
                    }
                }
                Err(_) => (*p, false),
            }
        })
        .unzip();
    PointField {
        points,
        source: f.source.clone(),
        valid,
    }
}

/// Intermediate products of [`correct`].
#[derive(Debug, Clone)]
pub struct CorrectionStages {
    pub smoothed: PointField,
    pub projected: PointField,
    pub displacement: DisplacementField,
    pub smoothed_displacement: DisplacementField,
    pub corrected: PointField,
}

/// Runs the full correction chain and returns every stage.
pub fn correct_stages(f: &PointField, rig: &CameraRig, params: &CorrectionParams) -> Result<CorrectionStages> {
    params.validate()?;
    if f.source.len() != f.len() || f.valid.len() != f.len() {
        return Err(Error::ShapeMismatch("point field field lengths".into()));
    }
    if let Some(s) = f.source.iter().find(|s| s.view as usize >= rig.len()) {
        return Err(Error::ShapeMismatch(format!("point references view {} of {}", s.view, rig.len())));
    }
    let smoothed = bilateral_filter_points_with(f, params.sigma_spatial, params.sigma_range, params.outlier_distance)?;
    let projected = project_to_rays(&smoothed, rig);
    let displacement: DisplacementField = projected
        .points
        .iter()
        .zip(&f.points)
        .zip(&projected.valid)
        .map(|((p, c), &ok)| if ok { p - c } else { Vec3::zeros() })
        .collect();
    let smoothed_displacement = bilateral_filter_displacements(
        &projected,
        &displacement,
        params.sigma_displacement,
        params.sigma_displacement_range,
    )?;
    let corrected = PointField {
        points: f
            .points
            .iter()
            .zip(&smoothed_displacement)
            .map(|(c, d)| c + d)
            .collect(),
        source: f.source.clone(),
        valid: projected.valid.clone(),
    };
    Ok(CorrectionStages {
        smoothed,
        projected,
        displacement,
        smoothed_displacement,
        corrected,
    })
}

/// The corrected point cloud `C + D'`.
pub fn correct(f: &PointField, rig: &CameraRig, params: &CorrectionParams) -> Result<PointField> {
    Ok(correct_stages(f, rig, params)?.corrected)
}
