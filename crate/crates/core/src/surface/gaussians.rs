//! Per-cell Gaussians and the 3D Gaussian splatting PLY layout.
//!
//! Exported files are `binary_little_endian` with one `vertex` element and
//! float properties `x y z f_dc_0 f_dc_1 f_dc_2 opacity scale_0 scale_1
//! scale_2 rot_0 rot_1 rot_2 rot_3`, using the usual activations:
//!
//! * `x y z`: world position, cell center plus offset.
//! * `f_dc_k = (color_k - 0.5) / SH_C0`, the degree-0 spherical harmonic.
//! * `opacity = logit(opacity)`.
//! * `scale_k = ln(scale_k)`.
//! * `rot = (w, x, y, z)`, a unit quaternion.
//!
//! A `comment resolution R` header line records the grid so positions can
//! be split back into cell and offset on import.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::camera::Vec3;
use crate::error::{Error, PathContext, Result};
use crate::ply::{self, ElementDef, PropertyDef, ScalarType};
use crate::voxelize::{cell_center, cell_of, SparseVoxelLatent};

/// Zeroth-order real spherical harmonic, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const DEFAULT_OPACITY: f32 = 0.8;
const OPACITY_EPS: f64 = 1e-7;

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub cell: [u32; 3],
    /// Offset from the cell center, in world units.
    pub offset: Vec3,
    pub color: [f32; 3],
    pub opacity: f32,
    pub scale: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub resolution: usize,
    pub gaussians: Vec<Gaussian>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Gaussian {
    pub fn position(&self, resolution: usize) -> Vec3 {
        cell_center(self.cell, resolution) + self.offset
    }
}

impl GaussianSet {
    /// One Gaussian per occupied cell: zero offset, rgb mean channels
    /// clamped to `[0, 1]`, opacity 0.8, isotropic scale of one cell width,
    /// identity rotation.
    pub fn from_latent(v: &SparseVoxelLatent) -> Self {
        let width = (2.0 / v.resolution as f64) as f32;
        let gaussians = (0..v.len())
            .filter(|&n| v.occupancy[n] > 0.5)
            .map(|n| {
                let f = v.feature(n);
                let color = [0, 1, 2].map(|k| f.get(k).copied().unwrap_or(0.0).clamp(0.0, 1.0));
                Gaussian {
                    cell: v.cells[n],
                    offset: Vec3::zeros(),
                    color,
                    opacity: DEFAULT_OPACITY,
                    scale: [width; 3],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                }
            })
            .collect();
        Self {
            resolution: v.resolution,
            gaussians,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn write_ply<W: Write>(&self, out: &mut W) -> Result<()> {
        let def = ElementDef {
            name: "vertex".into(),
            count: self.len(),
            properties: PROPERTIES
                .iter()
                .map(|p| PropertyDef::scalar(p, ScalarType::F32))
                .collect(),
        };
        let comment = format!("resolution {}", self.resolution);
        ply::write_header(out, &[&comment], &[def])?;
        let mut buf = Vec::with_capacity(self.len() * 4 * PROPERTIES.len());
        for g in &self.gaussians {
            let p = g.position(self.resolution);
            let mut row = vec![p.x, p.y, p.z];
            row.extend(g.color.map(|c| (f64::from(c) - 0.5) / SH_C0));
            row.push(logit(f64::from(g.opacity)));
            row.extend(g.scale.map(|s| f64::from(s).ln()));
            row.extend(g.rotation.map(f64::from));
            for v in row {
                ScalarType::F32.encode(v, &mut buf);
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_ply<R: BufRead>(input: R) -> Result<Self> {
        let mut input = input;
        let mut header = Vec::new();
        // The resolution comment precedes the element lines; peek at the
        // header text, then hand the full stream to the PLY reader.
        loop {
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::format("gaussian ply", "missing end_header"));
            }
            header.extend_from_slice(line.as_bytes());
            if line.trim_end() == "end_header" {
                break;
            }
        }
        let text = String::from_utf8_lossy(&header);
        let resolution: usize = text
            .lines()
            .find_map(|l| l.strip_prefix("comment resolution "))
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| Error::format("gaussian ply", "missing resolution comment"))?;
        if resolution == 0 {
            return Err(Error::format("gaussian ply", "zero resolution"));
        }
        let data = ply::read(std::io::Cursor::new(header).chain(input))?;
        let v = data
            .element("vertex")
            .ok_or_else(|| Error::format("gaussian ply", "no vertex element"))?;
        let cols: Vec<&[f64]> = PROPERTIES
            .iter()
            .map(|p| {
                v.scalar(p)
                    .ok_or_else(|| Error::format("gaussian ply", format!("missing property {p}")))
            })
            .collect::<Result<_>>()?;
        let gaussians = (0..cols[0].len())
            .map(|i| {
                let p = Vec3::new(cols[0][i], cols[1][i], cols[2][i]);
                let cell = cell_of(&p, resolution);
                Gaussian {
                    cell,
                    offset: p - cell_center(cell, resolution),
                    color: [3, 4, 5].map(|k| (cols[k][i] * SH_C0 + 0.5) as f32),
                    opacity: sigmoid(cols[6][i]) as f32,
                    scale: [7, 8, 9].map(|k| cols[k][i].exp() as f32),
                    rotation: [10, 11, 12, 13].map(|k| cols[k][i] as f32),
                }
            })
            .collect();
        Ok(Self { resolution, gaussians })
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

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell(rgb: [f32; 3], cell: [u32; 3]) -> SparseVoxelLatent {
        let mut v = SparseVoxelLatent::empty(64, 6);
        v.cells.push(cell);
        v.features.extend(rgb);
        v.features.extend([0.3; 3]);
        v.occupancy.push(1.0);
        v.weight.push(1.0);
        v
    }

    #[test]
    fn direct_mapping() {
        let g = GaussianSet::from_latent(&one_cell([1.0, 0.0, 0.0], [32, 32, 32]));
        assert_eq!(g.len(), 1);
        let x = &g.gaussians[0];
        assert_eq!(x.color, [1.0, 0.0, 0.0]);
        assert_eq!(x.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(x.opacity, 0.8);
        assert_eq!(x.scale, [(2.0f64 / 64.0) as f32; 3]);
        let p = x.position(64);
        assert!((p - Vec3::repeat(0.015625)).norm() < 1e-12);
    }

    #[test]
    fn colors_are_clamped_and_unoccupied_cells_skipped() {
        let mut v = one_cell([1.5, -0.5, 0.5], [1, 2, 3]);
        v.cells.push([1, 2, 4]);
        v.features.extend([0.0; 6]);
        v.occupancy.push(0.0);
        v.weight.push(0.0);
        let g = GaussianSet::from_latent(&v);
        assert_eq!(g.len(), 1);
        assert_eq!(g.gaussians[0].color, [1.0, 0.0, 0.5]);
    }

    #[test]
    fn ply_stores_activated_values_and_roundtrips() {
        let mut g = GaussianSet::from_latent(&one_cell([0.25, 0.5, 0.75], [10, 20, 30]));
        g.gaussians.push(Gaussian {
            cell: [63, 0, 7],
            offset: Vec3::new(0.004, -0.003, 0.001),
            color: [0.1, 0.9, 0.4],
            opacity: 0.35,
            scale: [0.01, 0.02, 0.03],
            rotation: [0.5, 0.5, 0.5, 0.5],
        });
        let mut buf = Vec::new();
        g.write_ply(&mut buf).unwrap();
        let header_end = buf.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let first: Vec<f32> = buf[header_end..header_end + 56]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let logit_08 = (0.8f64 / 0.2).ln();
        assert!((f64::from(first[6]) - logit_08).abs() < 1e-6);
        assert!((f64::from(first[7]) - (2.0f64 / 64.0).ln()).abs() < 1e-6);
        assert!((f64::from(first[3]) - (0.25 - 0.5) / SH_C0).abs() < 1e-6);

        let back = GaussianSet::read_ply(buf.as_slice()).unwrap();
        assert_eq!(back.resolution, 64);
        for (a, b) in g.gaussians.iter().zip(&back.gaussians) {
            assert_eq!(a.cell, b.cell);
            assert!((a.offset - b.offset).amax() < 1e-6);
            for k in 0..3 {
                assert!((a.color[k] - b.color[k]).abs() < 1e-6);
                assert!((a.scale[k] - b.scale[k]).abs() < 1e-6);
            }
            assert!((a.opacity - b.opacity).abs() < 1e-6);
            assert_eq!(a.rotation, b.rotation);
        }
    }
}
