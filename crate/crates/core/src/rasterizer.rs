//! Software renderer producing the multiview RGB / normal / coordinate bundle.
//!
//! One sample per pixel center, z-buffered. Every covered pixel is resolved
//! by intersecting its own camera ray with the winning triangle, so the
//! stored coordinate lies on the pixel ray up to `f32` rounding. Shading is
//! unlit: RGB is the interpolated vertex color (flat gray when the mesh has
//! none). Normals and coordinates are in world space.

use rayon::prelude::*;

use crate::bundle::{MultiViewBundle, ViewImages};
use crate::camera::{CameraRig, Vec3, ViewCamera};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Bounding-box tolerance for meshes handed to the renderer.
pub const NORMALIZED_LIMIT: f64 = 1.05;
pub const MIN_RENDER_SIZE: u32 = 8;

// Barycentric slack so shared edges never leave cracks.
const EDGE_EPS: f64 = 1e-10;

/// Renders `mesh` from every view of `rig` at `size x size` pixels.
pub fn render_bundle(mesh: &TriMesh, rig: &CameraRig, size: u32) -> Result<MultiViewBundle> {
    if size < MIN_RENDER_SIZE {
        return Err(Error::param(format!(
            "render size {size} below minimum {MIN_RENDER_SIZE}"
        )));
    }
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !mesh.fits_in_cube(NORMALIZED_LIMIT) {
        let (lo, hi) = mesh.bbox().unwrap();
        return Err(Error::NotNormalized {
            min: lo.into(),
            max: hi.into(),
        });
    }
    let rig = rig.with_image_size(size);
    rig.validate()?;
    let views = rig
        .views
        .par_iter()
        .map(|cam| render_view(mesh, cam))
        .collect();
    Ok(MultiViewBundle { rig, views })
}

struct Hit {
    t: f64,
    face: u32,
    b1: f64,
    b2: f64,
}

/// Möller-Trumbore; returns `(t, b1, b2)`.
fn intersect(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det == 0.0 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let b1 = s.dot(&p) * inv;
    if b1 < -EDGE_EPS || b1 > 1.0 + EDGE_EPS {
        return None;
    }
    let q = s.cross(&e1);
    let b2 = dir.dot(&q) * inv;
    if b2 < -EDGE_EPS || b1 + b2 > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some((t, b1, b2))
}

fn render_view(mesh: &TriMesh, cam: &ViewCamera) -> ViewImages {
    let (w, h) = (cam.width, cam.height);
    let origin = cam.position();
    let dirs: Vec<Vec3> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| cam.pixel_ray(x, y).unwrap().direction)
        .collect();
    let mut zbuf: Vec<Option<Hit>> = (0..w * h).map(|_| None).collect();

    for f in 0..mesh.faces.len() {
        let tri = mesh.triangle(f);
        let proj: Option<Vec<_>> = tri.iter().map(|p| cam.project(p)).collect();
        let (x0, x1, y0, y1) = match proj {
            Some(p) => {
                let (umin, umax) = p.iter().fold((f64::MAX, f64::MIN), |(a, b), q| (a.min(q.u), b.max(q.u)));
                let (vmin, vmax) = p.iter().fold((f64::MAX, f64::MIN), |(a, b), q| (a.min(q.v), b.max(q.v)));
                // Pixel x is sampled at x + 0.5; pad by one pixel for edge slack.
                let lo = |m: f64| ((m - 0.5).floor() - 1.0).max(0.0) as i64;
                let hi = |m: f64, n: u32| ((m - 0.5).ceil() + 1.0).min(f64::from(n) - 1.0) as i64;
                (lo(umin), hi(umax, w), lo(vmin), hi(vmax, h))
            }
            // Straddles the camera plane: fall back to the full image.
            None => (0, i64::from(w) - 1, 0, i64::from(h) - 1),
        };
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = (y as u32 * w + x as u32) as usize;
                if let Some((t, b1, b2)) = intersect(&origin, &dirs[i], &tri) {
                    if zbuf[i].as_ref().is_none_or(|hit| t < hit.t) {
                        zbuf[i] = Some(Hit { t, face: f as u32, b1, b2 });
                    }
                }
            }
        }
    }

    let mut view = ViewImages::empty(w, h);
    for (i, hit) in zbuf.iter().enumerate() {
        let Some(hit) = hit else { continue };
        let f = hit.face as usize;
        let [ia, ib, ic] = mesh.faces[f].map(|k| k as usize);
        let b0 = 1.0 - hit.b1 - hit.b2;
        let face_n = mesh.face_cross(f).normalize();
        let mut n = match &mesh.normals {
            Some(ns) => (ns[ia] * b0 + ns[ib] * hit.b1 + ns[ic] * hit.b2)
                .try_normalize(0.0)
                .unwrap_or(face_n),
            None => face_n,
        };
        if face_n.dot(&dirs[i]) > 0.0 {
            n = -n;
        }
        let p = origin + dirs[i] * hit.t;
        let (ca, cb, cc) = (mesh.vertex_color(ia), mesh.vertex_color(ib), mesh.vertex_color(ic));
        view.mask[i] = true;
        view.coord[i] = [p.x as f32, p.y as f32, p.z as f32];
        view.normal[i] = [n.x as f32, n.y as f32, n.z as f32];
        view.rgb[i] = std::array::from_fn(|k| {
            (f64::from(ca[k]) * b0 + f64::from(cb[k]) * hit.b1 + f64::from(cc[k]) * hit.b2)
                .clamp(0.0, 1.0) as f32
        });
    }
    view
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v3(a: [f32; 3]) -> Vec3 {
        Vec3::new(f64::from(a[0]), f64::from(a[1]), f64::from(a[2]))
    }

    #[test]
    fn cube_front_view_center_pixel() {
        // Analytic oracle: the central ray of the front view travels along
        // +Y (up to the half-pixel offset) and first meets the plane y = -0.5.
        let cube = TriMesh::cuboid(Vec3::repeat(0.5), 2);
        let rig = CameraRig::rig_with_size(129);
        let b = render_bundle(&cube, &rig, 129).unwrap();
        let front = &b.views[0];
        let i = front.index(64, 64);
        assert!(front.mask[i]);
        let cam = &b.rig.views[0];
        let ray = cam.pixel_ray(64, 64).unwrap();
        let t = (-0.5 - ray.origin.y) / ray.direction.y;
        let expected = ray.at(t);
        assert_abs_diff_eq!(v3(front.coord[i]), expected, epsilon = 1e-6);
        assert_abs_diff_eq!(v3(front.normal[i]), Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-6);
        assert_eq!(front.rgb[i], [0.7, 0.7, 0.7]);
    }

    #[test]
    fn background_pixels_are_documented_values() {
        let cube = TriMesh::cuboid(Vec3::repeat(0.3), 1);
        let b = render_bundle(&cube, &CameraRig::rig_default(), 32).unwrap();
        let v = &b.views[1];
        let i = v.index(0, 0);
        assert!(!v.mask[i]);
        assert_eq!((v.rgb[i], v.normal[i], v.coord[i]), ([1.0; 3], [0.0; 3], [0.0; 3]));
    }

    #[test]
    fn rejects_unnormalized_and_tiny() {
        let big = TriMesh::cuboid(Vec3::repeat(1.2), 1);
        assert!(matches!(
            render_bundle(&big, &CameraRig::rig_default(), 32),
            Err(Error::NotNormalized { .. })
        ));
        let ok = TriMesh::cuboid(Vec3::repeat(0.5), 1);
        assert!(render_bundle(&ok, &CameraRig::rig_default(), 4).is_err());
    }

    #[test]
    fn coordinates_lie_on_pixel_rays() {
        let sphere = TriMesh::icosphere(0.8, 3);
        let b = render_bundle(&sphere, &CameraRig::rig_default(), 48).unwrap();
        for (cam, v) in b.rig.views.iter().zip(&b.views) {
            for y in 0..v.height {
                for x in 0..v.width {
                    let i = v.index(x, y);
                    if v.mask[i] {
                        let ray = cam.pixel_ray(x, y).unwrap();
                        assert!(ray.line_distance(&v3(v.coord[i])) < 1e-6);
                        assert_abs_diff_eq!(v3(v.normal[i]).norm(), 1.0, epsilon = 1e-4);
                    }
                }
            }
        }
    }

    fn sphere_normal_error_deg(size: u32) -> f64 {
        let sphere = TriMesh::icosphere(0.8, 4);
        let b = render_bundle(&sphere, &CameraRig::rig_default(), size).unwrap();
        let mut worst: f64 = 0.0;
        for v in &b.views {
            for i in 0..v.pixel_count() {
                if v.mask[i] {
                    let c = v3(v.coord[i]).normalize();
                    let n = v3(v.normal[i]).normalize();
                    worst = worst.max(c.dot(&n).clamp(-1.0, 1.0).acos().to_degrees());
                }
            }
        }
        worst
    }

    #[test]
    fn sphere_normals_match_radial_direction() {
        assert!(sphere_normal_error_deg(256) < 3.0);
    }

    #[test]
    fn sphere_coordinate_error_shrinks_with_resolution() {
        let sphere = TriMesh::icosphere(0.8, 5);
        let radial_error = |size| {
            let b = render_bundle(&sphere, &CameraRig::rig_default(), size).unwrap();
            let v = &b.views[0];
            // Coverage error of the silhouette: masked pixel count vs the
            // analytic projected disk area.
            let cam = &b.rig.views[0];
            let d = cam.distance;
            let r = 0.8f64;
            let ang = (r / d).asin();
            let disk_px = std::f64::consts::PI * (ang.tan() * cam.focal_px()).powi(2);
            (v.masked_count() as f64 - disk_px).abs() / disk_px
        };
        let (e64, e128) = (radial_error(64), radial_error(128));
        assert!(e128 < e64, "{e128} !< {e64}");
    }
}
