//! Pinhole cameras and the fixed six-pose capture rig.
//!
//! Axis convention, used by every module in this crate: right-handed world,
//! `+Z` up. The camera at azimuth 0 and elevation 0 sits on the `-Y` axis and
//! looks along `+Y` toward the target; positive azimuth rotates the camera
//! counter-clockwise about `+Z` (azimuth 90 sits on `+X`).
//!
//! Image coordinates put the origin at the top-left corner with `v` growing
//! downward. Pixel `(x, y)` covers `[x, x+1) x [y, y+1)` and its center is at
//! `(x + 0.5, y + 0.5)`, so [`ViewCamera::pixel_ray`] and
//! [`ViewCamera::project`] are exact inverses at pixel centers.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PathContext, Result};

pub type Vec3 = Vector3<f64>;

/// Camera distance of the capture rig, in world units.
pub const RIG_DISTANCE: f64 = 4.5;
/// Vertical field of view of the capture rig, in degrees.
pub const RIG_FOV_DEG: f64 = 30.0;
/// Elevation of the four side views, in degrees.
pub const RIG_SIDE_ELEVATION_DEG: f64 = 5.0;
/// Elevation of the top-down view, in degrees.
pub const RIG_TOP_ELEVATION_DEG: f64 = 90.0;
/// Rendering resolution used for the original dataset.
pub const RIG_IMAGE_SIZE: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Ray parameter of the orthogonal projection of `p` onto the ray's line.
    pub fn parameter_of(&self, p: &Vec3) -> f64 {
        (p - self.origin).dot(&self.direction)
    }

    /// Distance from `p` to the (infinite) line carrying the ray.
    pub fn line_distance(&self, p: &Vec3) -> f64 {
        let t = self.parameter_of(p);
        (p - self.at(t)).norm()
    }
}

/// Result of projecting a world point into a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Continuous image coordinate; pixel centers sit at half-integers.
    pub u: f64,
    pub v: f64,
    /// Distance along the optical axis.
    pub depth: f64,
}

impl Projection {
    /// The pixel containing the projected point, if it falls inside the image.
    pub fn pixel(&self, width: u32, height: u32) -> Option<(u32, u32)> {
        if self.u < 0.0 || self.v < 0.0 {
            return None;
        }
        let (x, y) = (self.u.floor(), self.v.floor());
        (x < f64::from(width) && y < f64::from(height)).then_some((x as u32, y as u32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewCamera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    /// Vertical field of view.
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub look_at: [f64; 3],
}

impl ViewCamera {
    pub fn new(
        azimuth_deg: f64,
        elevation_deg: f64,
        distance: f64,
        fov_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            azimuth_deg,
            elevation_deg,
            distance,
            fov_deg,
            width,
            height,
            look_at: [0.0; 3],
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.azimuth_deg, self.elevation_deg, self.distance, self.fov_deg]
            .iter()
            .chain(self.look_at.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidCamera(format!(
                "fov {} outside (0, 180)",
                self.fov_deg
            )));
        }
        if self.distance <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "distance {} must be positive",
                self.distance
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image dimensions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn target(&self) -> Vec3 {
        Vec3::from(self.look_at)
    }

    /// Unit vector from the target toward the camera.
    fn back_direction(&self) -> Vec3 {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        Vec3::new(az.sin() * el.cos(), -az.cos() * el.cos(), el.sin())
    }

    pub fn position(&self) -> Vec3 {
        self.target() + self.back_direction() * self.distance
    }

    /// Orthonormal camera frame `(right, up, forward)`.
    ///
    /// `right` only depends on the azimuth, which keeps the top-down view
    /// well defined: it is the continuous limit of raising the frontal camera,
    /// so image-up points toward `+Y` for azimuth 0.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let az = self.azimuth_deg.to_radians();
        let forward = -self.back_direction();
        let right = Vec3::new(az.cos(), az.sin(), 0.0);
        let up = right.cross(&forward);
        (right, up, forward)
    }

    /// Focal length in pixels (vertical field of view).
    pub fn focal_px(&self) -> f64 {
        0.5 * f64::from(self.height) / (0.5 * self.fov_deg.to_radians()).tan()
    }

    fn principal_point(&self) -> (f64, f64) {
        (0.5 * f64::from(self.width), 0.5 * f64::from(self.height))
    }

    /// Ray through an arbitrary continuous image coordinate.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let (right, up, forward) = self.basis();
        let (cx, cy) = self.principal_point();
        let f = self.focal_px();
        let dir = forward + right * ((u - cx) / f) - up * ((v - cy) / f);
        Ray {
            origin: self.position(),
            direction: dir.normalize(),
        }
    }

    /// Ray from the camera center through the center of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: u32, y: u32) -> Result<Ray> {
        if x >= self.width || y >= self.height {
            return Err(Error::PixelOutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.ray_through(f64::from(x) + 0.5, f64::from(y) + 0.5))
    }

    /// Perspective projection. Returns `None` when the point is at or behind
    /// the camera plane.
    pub fn project(&self, p: &Vec3) -> Option<Projection> {
        let (right, up, forward) = self.basis();
        let rel = p - self.position();
        let depth = rel.dot(&forward);
        if !(depth > 0.0) {
            return None;
        }
        let (cx, cy) = self.principal_point();
        let f = self.focal_px();
        Some(Projection {
            u: cx + f * rel.dot(&right) / depth,
            v: cy - f * rel.dot(&up) / depth,
            depth,
        })
    }

    /// World-space width of one pixel at the target distance.
    pub fn pixel_footprint(&self) -> f64 {
        self.distance / self.focal_px()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub views: Vec<ViewCamera>,
}

impl CameraRig {
    /// The dataset capture rig: four side views at 90-degree azimuth steps
    /// (starting at the front) and elevation 5, plus one top-down view aligned
    /// with the frontal axis. All at distance 4.5 with a 30-degree FoV.
    pub fn rig_default() -> Self {
        Self::rig_with_size(RIG_IMAGE_SIZE)
    }

    pub fn rig_with_size(size: u32) -> Self {
        let view = |azimuth_deg: f64, elevation_deg: f64| ViewCamera {
            azimuth_deg,
            elevation_deg,
            distance: RIG_DISTANCE,
            fov_deg: RIG_FOV_DEG,
            width: size,
            height: size,
            look_at: [0.0; 3],
        };
        let mut views: Vec<_> = [0.0, 90.0, 180.0, 270.0]
            .into_iter()
            .map(|az| view(az, RIG_SIDE_ELEVATION_DEG))
            .collect();
        views.push(view(0.0, RIG_TOP_ELEVATION_DEG));
        Self { views }
    }

    /// Appends a bottom-up view, for setups that want a sixth render pose.
    pub fn with_bottom_view(mut self) -> Self {
        let mut bottom = self.views[0].clone();
        bottom.elevation_deg = -RIG_TOP_ELEVATION_DEG;
        self.views.push(bottom);
        self
    }

    pub fn with_image_size(&self, size: u32) -> Self {
        let mut rig = self.clone();
        for v in &mut rig.views {
            v.width = size;
            v.height = size;
        }
        rig
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::InvalidCamera("rig has no views".into()));
        }
        self.views.iter().try_for_each(ViewCamera::validate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rig: Self = serde_json::from_str(text)?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).at_path(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).at_path(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam(az: f64, el: f64) -> ViewCamera {
        ViewCamera::new(az, el, 4.5, 30.0, 128, 128).unwrap()
    }

    #[test]
    fn default_rig_constants() {
        let rig = CameraRig::rig_default();
        assert_eq!(rig.len(), 5);
        let front = &rig.views[0];
        assert_eq!(
            (front.azimuth_deg, front.elevation_deg, front.distance, front.fov_deg),
            (0.0, 5.0, 4.5, 30.0)
        );
        assert_eq!(rig.views[4].elevation_deg, 90.0);
        for v in &rig.views {
            assert_abs_diff_eq!(v.position().norm(), 4.5, epsilon = 1e-12);
        }
        assert_eq!(rig.clone().with_bottom_view().len(), 6);
    }

    #[test]
    fn front_camera_axis_convention() {
        let c = cam(0.0, 0.0);
        let p = c.position();
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, -4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z, 0.0, epsilon = 1e-12);
        // Odd-sized image: pixel 64 is the exact center pixel.
        let odd = ViewCamera::new(0.0, 0.0, 4.5, 30.0, 129, 129).unwrap();
        let r = odd.pixel_ray(64, 64).unwrap();
        assert_abs_diff_eq!(r.origin, Vec3::new(0.0, -4.5, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(r.direction, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn principal_ray_hits_target() {
        for c in CameraRig::rig_with_size(64).views {
            let r = c.ray_through(32.0, 32.0);
            let expected = (c.target() - c.position()).normalize();
            assert_abs_diff_eq!(r.direction, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn corner_ray_angle_matches_pinhole() {
        let c = cam(30.0, 20.0);
        let r = c.pixel_ray(0, 0).unwrap();
        let (_, _, forward) = c.basis();
        let angle = r.direction.dot(&forward).acos();
        // Corner pixel center is (size/2 - 0.5) pixels off-axis in each direction.
        let half_tan = (15f64).to_radians().tan();
        let off = half_tan * (63.5 / 64.0);
        let expected = (2f64.sqrt() * off).atan();
        assert_abs_diff_eq!(angle, expected, epsilon = 1e-12);
    }

    #[test]
    fn project_target_and_behind() {
        let c = cam(45.0, 10.0);
        let p = c.project(&Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(p.u, 64.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.v, 64.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.depth, 4.5, epsilon = 1e-12);
        let behind = c.position() * 2.0;
        assert!(c.project(&behind).is_none());
    }

    #[test]
    fn point_on_ray_projects_to_source_pixel() {
        let c = cam(120.0, 5.0);
        let r = c.pixel_ray(17, 101).unwrap();
        let p = c.project(&r.at(2.0)).unwrap();
        assert_eq!(p.pixel(128, 128), Some((17, 101)));
        assert_abs_diff_eq!(p.u, 17.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p.v, 101.5, epsilon = 1e-9);
    }

    #[test]
    fn out_of_bounds_pixel() {
        assert!(matches!(
            cam(0.0, 0.0).pixel_ray(128, 0),
            Err(Error::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn top_view_basis_is_orthonormal() {
        let (r, u, f) = cam(0.0, 90.0).basis();
        assert_abs_diff_eq!(f, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(u, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(r.dot(&u), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_cameras_rejected() {
        assert!(ViewCamera::new(0.0, 0.0, 4.5, 180.0, 8, 8).is_err());
        assert!(ViewCamera::new(0.0, 0.0, 0.0, 30.0, 8, 8).is_err());
        assert!(ViewCamera::new(0.0, 0.0, 4.5, 30.0, 0, 8).is_err());
    }

    #[test]
    fn rig_json_roundtrip() {
        let rig = CameraRig::rig_with_size(96);
        assert_eq!(CameraRig::from_json(&rig.to_json().unwrap()).unwrap(), rig);
    }
}
