//! Explicit 3D decoding of a refined sparse latent: signed distance field,
//! marching-cubes mesh with color transfer, and a Gaussian set.

mod gaussians;
mod tables;

pub use gaussians::{Gaussian, GaussianSet, SH_C0};

use std::collections::HashMap;

use crate::camera::Vec3;
use crate::edt::{squared_edt, Dims};
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, DEFAULT_GRAY};
use crate::voxelize::SparseVoxelLatent;

use tables::{EDGE_TABLE, TRI_TABLE};

/// One Gaussian per occupied cell; see [`GaussianSet::from_latent`].
pub fn to_gaussians(v: &SparseVoxelLatent) -> GaussianSet {
    GaussianSet::from_latent(v)
}

pub fn export_gaussians_ply(g: &GaussianSet, path: &std::path::Path) -> Result<()> {
    g.save(path)
}

/// Dense signed distance samples, negative inside, in cell units.
///
/// The grid carries one layer of empty padding around the latent's `R^3`
/// cells: sample `g` along an axis sits at the center of cell `g - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub resolution: usize,
    pub values: Vec<f32>,
}

impl ScalarField {
    pub fn samples(&self) -> usize {
        self.resolution + 2
    }

    pub fn dims(&self) -> Dims {
        Dims::cube(self.samples())
    }

    /// Value at the center of latent cell `ijk`.
    pub fn at_cell(&self, ijk: [u32; 3]) -> f32 {
        self.values[self.dims().index(ijk[0] as usize + 1, ijk[1] as usize + 1, ijk[2] as usize + 1)]
    }

    /// World position of sample coordinate `g` (fractional allowed).
    pub fn sample_to_world(&self, g: [f64; 3]) -> Vec3 {
        let w = 2.0 / self.resolution as f64;
        Vec3::new(-1.0 + (g[0] - 0.5) * w, -1.0 + (g[1] - 0.5) * w, -1.0 + (g[2] - 0.5) * w)
    }
}

/// Signed distance of the occupied set.
///
/// Distances are measured between cell centers with an exact Euclidean
/// transform and shifted by half a cell, so the zero level sits on the
/// faces between occupied and empty cells: an occupied cell stores
/// `-(distance to nearest empty cell - 0.5)`, an empty cell
/// `distance to nearest occupied cell - 0.5`. A lone cell reads `-0.5`.
pub fn occupancy_to_sdf(v: &SparseVoxelLatent) -> Result<ScalarField> {
    let r = v.resolution;
    let n = r + 2;
    let dims = Dims::cube(n);
    let mut occ = vec![false; dims.len()];
    let mut any = false;
    for (c, &o) in v.cells.iter().zip(&v.occupancy) {
        if o > 0.5 {
            occ[dims.index(c[0] as usize + 1, c[1] as usize + 1, c[2] as usize + 1)] = true;
            any = true;
        }
    }
    if !any {
        return Err(Error::NothingToExtract);
    }
    let empty: Vec<bool> = occ.iter().map(|o| !o).collect();
    let to_occ = squared_edt(&occ, dims);
    let to_empty = squared_edt(&empty, dims);
    let values = (0..dims.len())
        .map(|i| {
            if occ[i] {
                -(to_empty[i].sqrt() - 0.5) as f32
            } else {
                (to_occ[i].sqrt() - 0.5) as f32
            }
        })
        .collect();
    Ok(ScalarField { resolution: r, values })
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Marching cubes at iso 0 over `s`, with outward-facing triangles and
/// vertices shared between neighbouring cubes. Vertex colors come from the
/// rgb mean channels of `v`: trilinear over the occupied cells among the
/// eight around the vertex, else the nearest occupied cell.
pub fn extract_mesh(s: &ScalarField, v: &SparseVoxelLatent) -> Result<TriMesh> {
    let n = s.samples();
    let dims = s.dims();
    let inside = |i: usize| s.values[i] < 0.0;
    if s.values.iter().all(|&x| x < 0.0) || s.values.iter().all(|&x| x >= 0.0) {
        return Err(Error::NoZeroCrossing);
    }
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut positions: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for a in 0..n - 1 {
        for b in 0..n - 1 {
            for c in 0..n - 1 {
                let corner_idx = CORNERS.map(|o| dims.index(a + o[0], b + o[1], c + o[2]));
                let mut case = 0usize;
                for (k, &ci) in corner_idx.iter().enumerate() {
                    if inside(ci) {
                        case |= 1 << k;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, [p, q]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (lo, hi) = if corner_idx[*p] < corner_idx[*q] { (*p, *q) } else { (*q, *p) };
                    let axis = (0..3).find(|&x| CORNERS[lo][x] != CORNERS[hi][x]).unwrap();
                    let key = (corner_idx[lo], axis);
                    ids[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (f64::from(s.values[corner_idx[lo]]), f64::from(s.values[corner_idx[hi]]));
                        let t = va / (va - vb);
                        let mut g = [a as f64, b as f64, c as f64];
                        for x in 0..3 {
                            g[x] += CORNERS[lo][x] as f64;
                        }
                        g[axis] += t;
                        positions.push(g);
                        (positions.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    faces.push([ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]]);
                }
            }
        }
    }
    let vertices: Vec<Vec3> = positions.iter().map(|g| s.sample_to_world(*g)).collect();
    let colors = positions.iter().map(|g| vertex_color(v, *g)).collect();
    let mut mesh = TriMesh::new(vertices, faces)?;
    if mesh.signed_volume() < 0.0 {
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
    }
    mesh.with_colors(colors)
}

/// RGB at sample coordinate `g` (sample `g` is the center of cell `g - 1`).
fn vertex_color(v: &SparseVoxelLatent, g: [f64; 3]) -> [f32; 3] {
    if v.channels < 3 {
        return DEFAULT_GRAY;
    }
    let r = v.resolution as i64;
    let base = g.map(|x| (x - 1.0).floor() as i64);
    let frac: Vec<f64> = (0..3).map(|x| g[x] - 1.0 - base[x] as f64).collect();
    let lookup = |ijk: [i64; 3]| -> Option<usize> {
        if ijk.iter().any(|&i| i < 0 || i >= r) {
            return None;
        }
        let n = v.find(ijk.map(|i| i as u32))?;
        (v.occupancy[n] > 0.5).then_some(n)
    };
    let mut acc = [0f64; 3];
    let mut wsum = 0.0;
    for o in CORNERS {
        let ijk = [0, 1, 2].map(|x| base[x] + o[x] as i64);
        if let Some(n) = lookup(ijk) {
            let w: f64 = (0..3).map(|x| if o[x] == 1 { frac[x] } else { 1.0 - frac[x] }).product();
            let f = v.feature(n);
            for k in 0..3 {
                acc[k] += w * f64::from(f[k]);
            }
            wsum += w;
        }
    }
    if wsum > 1e-12 {
        return acc.map(|x| (x / wsum).clamp(0.0, 1.0) as f32);
    }
    let centre = g.map(|x| x - 1.0);
    let nearest = v
        .cells
        .iter()
        .enumerate()
        .filter(|(n, _)| v.occupancy[*n] > 0.5)
        .map(|(n, c)| {
            let d: f64 = (0..3).map(|x| (f64::from(c[x]) - centre[x]).powi(2)).sum();
            (d, n)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    match nearest {
        Some((_, n)) => {
            let f = v.feature(n);
            [f[0], f[1], f[2]].map(|x| x.clamp(0.0, 1.0))
        }
        None => DEFAULT_GRAY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelize::cell_center;
    use std::collections::HashMap;

    pub(crate) fn latent_from(r: usize, pred: impl Fn([u32; 3]) -> bool) -> SparseVoxelLatent {
        let mut v = SparseVoxelLatent::empty(r, 3);
        for i in 0..r as u32 {
            for j in 0..r as u32 {
                for k in 0..r as u32 {
                    if pred([i, j, k]) {
                        v.cells.push([i, j, k]);
                        v.features.extend([0.9, 0.2, 0.1]);
                        v.occupancy.push(1.0);
                        v.weight.push(1.0);
                    }
                }
            }
        }
        v
    }

    fn ball(r: usize, radius: f64) -> SparseVoxelLatent {
        let c = r as f64 / 2.0;
        latent_from(r, |p| {
            p.iter().map(|&i| (f64::from(i) + 0.5 - c).powi(2)).sum::<f64>() <= radius * radius
        })
    }

    #[test]
    fn single_cell_sdf_convention() {
        let v = latent_from(8, |p| p == [3, 4, 5]);
        let s = occupancy_to_sdf(&v).unwrap();
        assert_eq!(s.at_cell([3, 4, 5]), -0.5);
        assert_eq!(s.at_cell([4, 4, 5]), 0.5);
        let min = s.values.iter().cloned().fold(f32::INFINITY, f32::min);
        assert_eq!(min, -0.5);
    }

    #[test]
    fn half_space_sdf_is_plane_distance() {
        // The grid edge closes the half-space; probe only where the plane is
        // the nearest boundary.
        let v = latent_from(32, |p| p[0] < 16);
        let s = occupancy_to_sdf(&v).unwrap();
        for i in 8..24u32 {
            for j in [12u32, 16, 20] {
                let plane = f64::from(i) + 0.5 - 16.0;
                assert!((f64::from(s.at_cell([i, j, 16])) - plane).abs() < 1.0);
            }
        }
    }

    #[test]
    fn ball_sdf_matches_analytic_sphere() {
        let v = ball(64, 20.0);
        let s = occupancy_to_sdf(&v).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..64u32 {
            for j in 0..64u32 {
                for k in 0..64u32 {
                    let d = [i, j, k].iter().map(|&x| (f64::from(x) + 0.5 - 32.0).powi(2)).sum::<f64>().sqrt() - 20.0;
                    worst = worst.max((f64::from(s.at_cell([i, j, k])) - d).abs());
                }
            }
        }
        assert!(worst < 1.5, "{worst}");
    }

    #[test]
    fn empty_latent_has_nothing_to_extract() {
        let v = SparseVoxelLatent::empty(8, 3);
        assert!(matches!(occupancy_to_sdf(&v), Err(Error::NothingToExtract)));
    }

    fn edge_use(m: &TriMesh) -> HashMap<(u32, u32), (usize, usize)> {
        let mut edges: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
        for f in &m.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let e = edges.entry((a.min(b), a.max(b))).or_default();
                if a < b {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
        edges
    }

    #[test]
    fn single_cell_gives_closed_genus_zero_surface() {
        let v = latent_from(8, |p| p == [3, 4, 5]);
        let m = extract_mesh(&occupancy_to_sdf(&v).unwrap(), &v).unwrap();
        let edges = edge_use(&m);
        // Every edge used once in each direction: closed and consistently oriented.
        assert!(edges.values().all(|&u| u == (1, 1)));
        let euler = m.vertices.len() as i64 - edges.len() as i64 + m.faces.len() as i64;
        assert_eq!(euler, 2);
        assert!(m.signed_volume() > 0.0);
        let c = cell_center([3, 4, 5], 8);
        assert!(m.vertices.iter().all(|p| (p - c).amax() <= 2.0 / 8.0 + 1e-12));
        assert_eq!(m.colors.as_ref().unwrap()[0], [0.9, 0.2, 0.1]);
    }

    #[test]
    fn block_vertex_count_in_band() {
        let v = latent_from(64, |p| p.iter().all(|&i| (27..37).contains(&i)));
        let m = extract_mesh(&occupancy_to_sdf(&v).unwrap(), &v).unwrap();
        assert!((300..=3000).contains(&m.vertices.len()), "{}", m.vertices.len());
        assert!(edge_use(&m).values().all(|&u| u == (1, 1)));
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn vertices_stay_near_occupied_cells() {
        let v = latent_from(16, |p| (p[0] * 7 + p[1] * 3 + p[2] * 5) % 11 < 3);
        let m = extract_mesh(&occupancy_to_sdf(&v).unwrap(), &v).unwrap();
        let w = 2.0 / 16.0;
        for p in &m.vertices {
            let near = v
                .cells
                .iter()
                .any(|c| (p - cell_center(*c, 16)).amax() <= 1.5 * w + 1e-9);
            assert!(near);
        }
    }

    #[test]
    fn no_crossing_is_an_error() {
        let s = ScalarField {
            resolution: 2,
            values: vec![1.0; 64],
        };
        assert!(matches!(
            extract_mesh(&s, &SparseVoxelLatent::empty(2, 3)),
            Err(Error::NoZeroCrossing)
        ));
    }
}
