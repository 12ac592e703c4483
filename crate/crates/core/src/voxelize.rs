//! Multiview latent to sparse voxel projection and occupancy refinement.
//!
//! Grid cell `(i, j, k)` of an `R^3` grid covers
//! `[-1 + i*2/R, -1 + (i+1)*2/R)` along x (likewise y, z); its linear index
//! is `(i * R + j) * R + k`. Sparse cells are always stored in ascending
//! linear order.
//!
//! Sparse latent file layout, little-endian:
//!
//! ```text
//! u32 x 5   magic "SVXL", version 1, R, C_total, cell count
//! per cell  u32 i, j, k; f32 x C_total features; f32 occupancy; f32 weight
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::bundle::MultiViewBundle;
use crate::camera::Vec3;
use crate::edt::{squared_edt, Dims};
use crate::error::{Error, Result};
use crate::latentcodec::LatentGrid2D;

pub const DEFAULT_RESOLUTION: usize = 64;
pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 128;
/// Feature magnitude above which a cell counts as non-zero.
pub const FEATURE_EPS: f32 = 1e-8;

const FILE_MAGIC: u32 = u32::from_le_bytes(*b"SVXL");
const FILE_VERSION: u32 = 1;

/// Cell containing world coordinate `c` (clamped to the grid).
pub fn cell_of(c: &Vec3, resolution: usize) -> [u32; 3] {
    let r = resolution as f64;
    [c.x, c.y, c.z].map(|v| ((v + 1.0) * 0.5 * r).floor().clamp(0.0, r - 1.0) as u32)
}

/// World-space center of cell `ijk`.
pub fn cell_center(ijk: [u32; 3], resolution: usize) -> Vec3 {
    let w = 2.0 / resolution as f64;
    let c = ijk.map(|i| -1.0 + (f64::from(i) + 0.5) * w);
    Vec3::new(c[0], c[1], c[2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelLatent {
    pub resolution: usize,
    /// Feature width `3C`.
    pub channels: usize,
    pub cells: Vec<[u32; 3]>,
    /// Row-major `cells.len() x channels`.
    pub features: Vec<f32>,
    pub occupancy: Vec<f32>,
    pub weight: Vec<f32>,
}

impl SparseVoxelLatent {
    pub fn empty(resolution: usize, channels: usize) -> Self {
        Self {
            resolution,
            channels,
            cells: Vec::new(),
            features: Vec::new(),
            occupancy: Vec::new(),
            weight: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn dims(&self) -> Dims {
        Dims::cube(self.resolution)
    }

    pub fn linear(&self, ijk: [u32; 3]) -> usize {
        self.dims().index(ijk[0] as usize, ijk[1] as usize, ijk[2] as usize)
    }

    pub fn feature(&self, n: usize) -> &[f32] {
        &self.features[n * self.channels..(n + 1) * self.channels]
    }

    /// Position of cell `ijk` in the sparse list.
    pub fn find(&self, ijk: [u32; 3]) -> Option<usize> {
        let key = self.linear(ijk);
        self.cells.binary_search_by_key(&key, |&c| self.linear(c)).ok()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o > 0.5).count()
    }

    /// Dense `R^3` occupancy mask (`occupancy > 0.5`).
    pub fn occupied_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.dims().len()];
        for (c, &o) in self.cells.iter().zip(&self.occupancy) {
            if o > 0.5 {
                mask[self.linear(*c)] = true;
            }
        }
        mask
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cells.len();
        if self.features.len() != n * self.channels || self.occupancy.len() != n || self.weight.len() != n {
            return Err(Error::ShapeMismatch("voxel latent field lengths".into()));
        }
        let r = self.resolution as u32;
        if self.cells.iter().any(|c| c.iter().any(|&i| i >= r)) {
            return Err(Error::ShapeMismatch("cell index outside grid".into()));
        }
        if self.cells.windows(2).any(|w| self.linear(w[0]) >= self.linear(w[1])) {
            return Err(Error::ShapeMismatch("cells unsorted or duplicated".into()));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        self.validate()?;
        let mut buf = Vec::with_capacity(20 + self.len() * (20 + 4 * self.channels));
        for h in [
            FILE_MAGIC,
            FILE_VERSION,
            self.resolution as u32,
            self.channels as u32,
            self.len() as u32,
        ] {
            buf.extend(h.to_le_bytes());
        }
        for n in 0..self.len() {
            for i in self.cells[n] {
                buf.extend(i.to_le_bytes());
            }
            for f in self.feature(n) {
                buf.extend(f.to_le_bytes());
            }
            buf.extend(self.occupancy[n].to_le_bytes());
            buf.extend(self.weight[n].to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let word = |i: usize| -> Result<[u8; 4]> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| b.try_into().unwrap())
                .ok_or_else(|| Error::format("sparse voxel latent", "truncated"))
        };
        let u = |i: usize| word(i).map(u32::from_le_bytes);
        let f = |i: usize| word(i).map(f32::from_le_bytes);
        if u(0)? != FILE_MAGIC {
            return Err(Error::format("sparse voxel latent", "bad magic"));
        }
        if u(1)? != FILE_VERSION {
            return Err(Error::format("sparse voxel latent", "unsupported version"));
        }
        let (res, ch, count) = (u(2)? as usize, u(3)? as usize, u(4)? as usize);
        let rec = 5 + ch;
        if bytes.len() != 4 * (5 + count * rec) {
            return Err(Error::format("sparse voxel latent", "payload size mismatch"));
        }
        let mut v = Self::empty(res, ch);
        for n in 0..count {
            let o = 5 + n * rec;
            v.cells.push([u(o)?, u(o + 1)?, u(o + 2)?]);
            for c in 0..ch {
                v.features.push(f(o + 3 + c)?);
            }
            v.occupancy.push(f(o + 3 + ch)?);
            v.weight.push(f(o + 4 + ch)?);
        }
        v.validate()?;
        Ok(v)
    }
}

/// Dense per-cell occupancy bias over the `R^3` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyBias {
    pub resolution: usize,
    pub values: Vec<f32>,
}

impl OccupancyBias {
    pub fn zeros(resolution: usize) -> Self {
        Self {
            resolution,
            values: vec![0.0; Dims::cube(resolution).len()],
        }
    }

    pub fn get(&self, ijk: [u32; 3]) -> f32 {
        self.values[Dims::cube(self.resolution).index(ijk[0] as usize, ijk[1] as usize, ijk[2] as usize)]
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&b| b != 0.0).count()
    }
}

/// Scatters latent features into the voxel grid.
///
/// Every masked pixel of `coords` contributes one sample: the fused `3C`
/// feature of the latent pixel covering it, placed in the cell containing
/// its coordinate. Cell features are the arithmetic mean over samples and
/// `weight` counts them. Per cell and channel, samples are summed in sorted
/// order, so the result does not depend on view or pixel order.
pub fn project_to_voxels(
    lat: &LatentGrid2D,
    coords: &MultiViewBundle,
    resolution: usize,
) -> Result<SparseVoxelLatent> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(Error::param(format!(
            "voxel resolution {resolution} outside [{MIN_RESOLUTION}, {MAX_RESOLUTION}]"
        )));
    }
    if coords.views.len() != lat.views {
        return Err(Error::ShapeMismatch(format!(
            "{} coordinate views for {} latent views",
            coords.views.len(),
            lat.views
        )));
    }
    let p = lat.patch as usize;
    let mut samples = Vec::new();
    for (k, v) in coords.views.iter().enumerate() {
        if v.width as usize != lat.width * p || v.height as usize != lat.height * p {
            return Err(Error::ShapeMismatch(format!(
                "view {k}: {}x{} coordinates for {}x{} latent at patch {p}",
                v.width, v.height, lat.width, lat.height
            )));
        }
        for y in 0..v.height as usize {
            for x in 0..v.width as usize {
                let i = y * v.width as usize + x;
                if !v.mask[i] {
                    continue;
                }
                let c = v.coord[i].map(f64::from);
                let ijk = cell_of(&Vec3::new(c[0], c[1], c[2]), resolution);
                let lin = Dims::cube(resolution).index(ijk[0] as usize, ijk[1] as usize, ijk[2] as usize);
                samples.push((lin, ijk, k, y / p, x / p));
            }
        }
    }
    samples.sort_by_key(|s| s.0);
    let groups: Vec<&[_]> = samples.chunk_by(|a, b| a.0 == b.0).collect();
    let ch = lat.fused_channels();
    let means: Vec<Vec<f32>> = groups
        .par_iter()
        .map(|g| {
            let feats: Vec<Vec<f32>> = g.iter().map(|s| lat.fused(s.2, s.3, s.4)).collect();
            let mut column = vec![0f32; g.len()];
            (0..ch)
                .map(|c| {
                    for (dst, f) in column.iter_mut().zip(&feats) {
                        *dst = f[c];
                    }
                    column.sort_by(f32::total_cmp);
                    let sum: f64 = column.iter().map(|&x| f64::from(x)).sum();
                    (sum / g.len() as f64) as f32
                })
                .collect()
        })
        .collect();
    let mut out = SparseVoxelLatent::empty(resolution, ch);
    for (g, m) in groups.iter().zip(means) {
        out.cells.push(g[0].1);
        out.features.extend(m);
        out.occupancy.push(0.0);
        out.weight.push(g.len() as f32);
    }
    Ok(out)
}

/// Marks populated cells occupied: weight > 0, or any feature magnitude
/// above [`FEATURE_EPS`].
pub fn init_occupancy(v: &SparseVoxelLatent) -> SparseVoxelLatent {
    let mut out = v.clone();
    for n in 0..v.len() {
        let nonzero = v.feature(n).iter().any(|f| f.abs() > FEATURE_EPS);
        out.occupancy[n] = if v.weight[n] > 0.0 || nonzero { 1.0 } else { 0.0 };
    }
    out
}

/// The occupancy update `x_occ + b_occ > 0.5`, strict.
pub fn occupancy_rule(x_occ: f32, bias: f32) -> bool {
    x_occ + bias > 0.5
}

const NEIGHBOURS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn neighbours(ijk: [u32; 3], r: usize) -> impl Iterator<Item = [u32; 3]> {
    NEIGHBOURS.iter().filter_map(move |d| {
        let n = [0, 1, 2].map(|a| i64::from(ijk[a]) + d[a]);
        n.iter()
            .all(|&x| x >= 0 && x < r as i64)
            .then(|| n.map(|x| x as u32))
    })
}

/// Applies the occupancy rule on every grid cell.
///
/// Cells that end up unoccupied are dropped; survivors have occupancy 1.
/// Newly occupied cells get weight 0 and the mean feature of their
/// feature-carrying 6-neighbours, filled outward layer by layer from the
/// original cells; cells no layer reaches keep a zero feature.
pub fn refine_occupancy(v: &SparseVoxelLatent, bias: &OccupancyBias) -> Result<SparseVoxelLatent> {
    if bias.resolution != v.resolution || bias.values.len() != v.dims().len() {
        return Err(Error::ShapeMismatch(format!(
            "bias grid {} does not match latent grid {}",
            bias.resolution, v.resolution
        )));
    }
    let dims = v.dims();
    let mut x_occ = vec![0f32; dims.len()];
    for (c, &o) in v.cells.iter().zip(&v.occupancy) {
        x_occ[v.linear(*c)] = o;
    }
    let mut kept: HashMap<usize, usize> = HashMap::new();
    for (n, c) in v.cells.iter().enumerate() {
        kept.insert(v.linear(*c), n);
    }
    let ch = v.channels;
    // Feature for each newly occupied cell, keyed by linear index.
    let mut filled: HashMap<usize, Vec<f32>> = HashMap::new();
    let on: Vec<usize> = (0..dims.len())
        .filter(|&i| occupancy_rule(x_occ[i], bias.values[i]))
        .collect();
    let mut pending: Vec<usize> = on
        .iter()
        .copied()
        .filter(|i| !(kept.contains_key(i) && x_occ[*i] > 0.5))
        .collect();
    fn source<'a>(
        v: &'a SparseVoxelLatent,
        kept: &HashMap<usize, usize>,
        x_occ: &[f32],
        filled: &'a HashMap<usize, Vec<f32>>,
        i: usize,
    ) -> Option<&'a [f32]> {
        match kept.get(&i) {
            Some(&n) if x_occ[i] > 0.5 => Some(v.feature(n)),
            _ => filled.get(&i).map(Vec::as_slice),
        }
    }
    loop {
        let mut layer = Vec::new();
        let mut rest = Vec::new();
        for &i in &pending {
            let c = dims.coords(i).map(|a| a as u32);
            let mut acc = vec![0f64; ch];
            let mut n = 0usize;
            for nb in neighbours(c, v.resolution) {
                if let Some(f) = source(v, &kept, &x_occ, &filled, v.linear(nb)) {
                    n += 1;
                    for (a, x) in acc.iter_mut().zip(f) {
                        *a += f64::from(*x);
                    }
                }
            }
            if n > 0 {
                layer.push((i, acc.iter().map(|a| (a / n as f64) as f32).collect::<Vec<_>>()));
            } else {
                rest.push(i);
            }
        }
        if layer.is_empty() {
            for i in rest {
                filled.insert(i, vec![0.0; ch]);
            }
            break;
        }
        filled.extend(layer);
        pending = rest;
    }
    let mut out = SparseVoxelLatent::empty(v.resolution, ch);
    for i in on {
        let c = dims.coords(i).map(|a| a as u32);
        out.cells.push(c);
        out.occupancy.push(1.0);
        match kept.get(&i) {
            Some(&n) if x_occ[i] > 0.5 => {
                out.features.extend_from_slice(v.feature(n));
                out.weight.push(v.weight[n]);
            }
            _ => {
                out.features.extend_from_slice(&filled[&i]);
                out.weight.push(0.0);
            }
        }
    }
    Ok(out)
}

/// Morphological closing (dilate, then erode) of `mask` on an `R^3` grid
/// with a Euclidean ball of `radius` cells. Space outside the grid counts
/// as empty and is never clipped, so the operation is an exact closing.
pub fn closing(mask: &[bool], resolution: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let pad = radius + 1;
    let n = resolution + 2 * pad;
    let dims = Dims::cube(n);
    let inner = Dims::cube(resolution);
    let mut padded = vec![false; dims.len()];
    for i in 0..inner.len() {
        if mask[i] {
            let [a, b, c] = inner.coords(i);
            padded[dims.index(a + pad, b + pad, c + pad)] = true;
        }
    }
    let r2 = (radius * radius) as f64;
    let dilated: Vec<bool> = squared_edt(&padded, dims).into_iter().map(|d| d <= r2).collect();
    let outside: Vec<bool> = dilated.iter().map(|d| !d).collect();
    let to_outside = squared_edt(&outside, dims);
    (0..inner.len())
        .map(|i| {
            let [a, b, c] = inner.coords(i);
            to_outside[dims.index(a + pad, b + pad, c + pad)] > r2
        })
        .collect()
}

/// Bias that adds the cells of the occupied set's morphological closing:
/// `+1` on added cells, `0` elsewhere.
pub fn heuristic_bias(v: &SparseVoxelLatent, closing_radius: i64) -> Result<OccupancyBias> {
    if closing_radius < 0 || closing_radius as usize > v.resolution {
        return Err(Error::param(format!(
            "closing radius {closing_radius} outside [0, {}]",
            v.resolution
        )));
    }
    let mask = v.occupied_mask();
    let closed = closing(&mask, v.resolution, closing_radius as usize);
    let values = mask
        .iter()
        .zip(&closed)
        .map(|(&m, &c)| if c && !m { 1.0 } else { 0.0 })
        .collect();
    Ok(OccupancyBias {
        resolution: v.resolution,
        values,
    })
}
