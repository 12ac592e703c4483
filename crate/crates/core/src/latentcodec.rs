//! Deterministic patch codec standing in for the image VAE.
//!
//! Every `patch x patch` block of a modality image becomes one latent pixel
//! with `C` channels. Statistics are taken over the masked pixels of the
//! block (zero when the block has none):
//!
//! | channels | content                                          |
//! |----------|--------------------------------------------------|
//! | 0..3     | mean of the three value channels                 |
//! | 3        | mask fraction                                    |
//! | 4..7     | per-channel minimum                              |
//! | 7..10    | per-channel maximum                              |
//! | 10..12   | mask centroid offset from the block center / patch |
//! | 12..C    | zero                                             |
//!
//! With `C < 12` the table is truncated; `C >= 4` is required.
//!
//! Latent file layout, little-endian:
//!
//! ```text
//! u32 x 8   magic "LT2D", version 1, N, modalities 3, C, h, w, patch
//! f32 ...   view-major, then modality (rgb, normal, coord), channel, row, col
//! ```

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::bundle::{MultiViewBundle, ViewImages};
use crate::camera::CameraRig;
use crate::error::{Error, Result};

pub const DEFAULT_PATCH: u32 = 8;
pub const DEFAULT_CHANNELS: usize = 16;
pub const MODALITIES: usize = 3;
pub const MASK_CHANNEL: usize = 3;
const STAT_CHANNELS: usize = 12;

const FILE_MAGIC: u32 = u32::from_le_bytes(*b"LT2D");
const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb = 0,
    Normal = 1,
    Coord = 2,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Normal, Modality::Coord];

    fn values(self, v: &ViewImages) -> &[[f32; 3]] {
        match self {
            Modality::Rgb => &v.rgb,
            Modality::Normal => &v.normal,
            Modality::Coord => &v.coord,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid2D {
    pub views: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: u32,
    pub data: Vec<f32>,
}

impl LatentGrid2D {
    pub fn zeros(views: usize, channels: usize, height: usize, width: usize, patch: u32) -> Self {
        Self {
            views,
            channels,
            height,
            width,
            patch,
            data: vec![0.0; views * MODALITIES * channels * height * width],
        }
    }

    pub fn fused_channels(&self) -> usize {
        MODALITIES * self.channels
    }

    fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, view: usize, modality: usize, channel: usize, row: usize, col: usize) -> usize {
        (((view * MODALITIES + modality) * self.channels + channel) * self.height + row) * self.width
            + col
    }

    pub fn get(&self, view: usize, modality: Modality, channel: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(view, modality as usize, channel, row, col)]
    }

    /// The `3C` feature at one latent pixel: rgb, normal and coord channels
    /// concatenated.
    pub fn fused_into(&self, view: usize, row: usize, col: usize, out: &mut [f32]) {
        for m in 0..MODALITIES {
            for c in 0..self.channels {
                out[m * self.channels + c] = self.data[self.index(view, m, c, row, col)];
            }
        }
    }

    pub fn fused(&self, view: usize, row: usize, col: usize) -> Vec<f32> {
        let mut out = vec![0.0; self.fused_channels()];
        self.fused_into(view, row, col, &mut out);
        out
    }

    fn validate(&self) -> Result<()> {
        if self.channels < 4 || self.patch == 0 {
            return Err(Error::param("latent needs channels >= 4 and patch >= 1"));
        }
        if self.data.len() != self.views * MODALITIES * self.channels * self.plane_len() {
            return Err(Error::ShapeMismatch("latent data length".into()));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        self.validate()?;
        let header = [
            FILE_MAGIC,
            FILE_VERSION,
            self.views as u32,
            MODALITIES as u32,
            self.channels as u32,
            self.height as u32,
            self.width as u32,
            self.patch,
        ];
        for h in header {
            out.write_all(&h.to_le_bytes())?;
        }
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut raw = [0u8; 32];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::format("latent", "truncated header"))?;
        let h: Vec<u32> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if h[0] != FILE_MAGIC {
            return Err(Error::format("latent", "bad magic"));
        }
        if h[1] != FILE_VERSION || h[3] != MODALITIES as u32 {
            return Err(Error::format("latent", format!("unsupported version {} / modalities {}", h[1], h[3])));
        }
        let mut lat = Self::zeros(h[2] as usize, h[4] as usize, h[5] as usize, h[6] as usize, h[7]);
        let mut bytes = vec![0u8; lat.data.len() * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|_| Error::format("latent", "truncated payload"))?;
        for (d, c) in lat.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap());
        }
        lat.validate()?;
        Ok(lat)
    }
}

/// Encodes every view and modality of `bundle` into a latent grid.
pub fn encode(bundle: &MultiViewBundle, patch: u32, channels: usize) -> Result<LatentGrid2D> {
    bundle.validate()?;
    if channels < 4 {
        return Err(Error::param(format!("latent channels {channels} < 4")));
    }
    if patch == 0 {
        return Err(Error::param("patch must be >= 1"));
    }
    let (w, h) = bundle
        .uniform_size()
        .ok_or_else(|| Error::ShapeMismatch("views differ in size".into()))?;
    if w % patch != 0 || h % patch != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{w}x{h} image not divisible by patch {patch}"
        )));
    }
    let (lw, lh) = ((w / patch) as usize, (h / patch) as usize);
    let mut lat = LatentGrid2D::zeros(bundle.views.len(), channels, lh, lw, patch);
    let view_len = MODALITIES * channels * lh * lw;
    lat.data
        .par_chunks_mut(view_len)
        .zip(&bundle.views)
        .for_each(|(out, v)| encode_view(v, patch as usize, channels, lw, lh, out));
    Ok(lat)
}

fn encode_view(v: &ViewImages, patch: usize, channels: usize, lw: usize, lh: usize, out: &mut [f32]) {
    let plane = lw * lh;
    let width = v.width as usize;
    let center = 0.5 * (patch as f64 - 1.0);
    for (m, modality) in Modality::ALL.iter().enumerate() {
        let values = modality.values(v);
        for row in 0..lh {
            for col in 0..lw {
                let mut stats = [0f64; STAT_CHANNELS];
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                let mut n = 0usize;
                for dy in 0..patch {
                    for dx in 0..patch {
                        let i = (row * patch + dy) * width + col * patch + dx;
                        if !v.mask[i] {
                            continue;
                        }
                        n += 1;
                        for c in 0..3 {
                            let x = f64::from(values[i][c]);
                            stats[c] += x;
                            lo[c] = lo[c].min(x);
                            hi[c] = hi[c].max(x);
                        }
                        stats[10] += dx as f64 - center;
                        stats[11] += dy as f64 - center;
                    }
                }
                if n > 0 {
                    let nf = n as f64;
                    for c in 0..3 {
                        stats[c] /= nf;
                        stats[4 + c] = lo[c];
                        stats[7 + c] = hi[c];
                    }
                    stats[MASK_CHANNEL] = nf / (patch * patch) as f64;
                    stats[10] /= nf * patch as f64;
                    stats[11] /= nf * patch as f64;
                }
                for (c, s) in stats.iter().take(channels).enumerate() {
                    out[(m * channels + c) * plane + row * lw + col] = *s as f32;
                }
            }
        }
    }
}

/// Nearest-neighbour decode of the mean channels back to image resolution.
///
/// A pixel is masked when its latent coord mask channel exceeds 0.5. Colors
/// are clamped to `[0, 1]`, normals and coordinates to `[-1, 1]`, and normals
/// are renormalized. Unmasked pixels take the background values.
pub fn decode(lat: &LatentGrid2D, rig: &CameraRig) -> Result<MultiViewBundle> {
    lat.validate()?;
    if rig.len() != lat.views {
        return Err(Error::ShapeMismatch(format!(
            "latent has {} views, rig has {}",
            lat.views,
            rig.len()
        )));
    }
    let p = lat.patch as usize;
    let (w, h) = (lat.width * p, lat.height * p);
    let mut rig = rig.clone();
    for cam in &mut rig.views {
        cam.width = w as u32;
        cam.height = h as u32;
    }
    let views = (0..lat.views)
        .into_par_iter()
        .map(|k| {
            let mut v = ViewImages::empty(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    let (row, col) = (y / p, x / p);
                    let get = |m: Modality, c| lat.get(k, m, c, row, col);
                    if get(Modality::Coord, MASK_CHANNEL) <= 0.5 {
                        continue;
                    }
                    let i = y * w + x;
                    v.mask[i] = true;
                    v.rgb[i] = [0, 1, 2].map(|c| get(Modality::Rgb, c).clamp(0.0, 1.0));
                    v.coord[i] = [0, 1, 2].map(|c| get(Modality::Coord, c).clamp(-1.0, 1.0));
                    let n = [0, 1, 2].map(|c| get(Modality::Normal, c).clamp(-1.0, 1.0));
                    let len = n.iter().map(|a| a * a).sum::<f32>().sqrt();
                    v.normal[i] = if len > 0.0 { n.map(|a| a / len) } else { n };
                }
            }
            v
        })
        .collect();
    Ok(MultiViewBundle { rig, views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use crate::rasterizer::render_bundle;

    fn blank_bundle(size: u32) -> MultiViewBundle {
        let rig = CameraRig::rig_with_size(size);
        let views = (0..rig.len()).map(|_| ViewImages::empty(size, size)).collect();
        MultiViewBundle { rig, views }
    }

    #[test]
    fn constant_masked_image_gives_constant_means() {
        let mut b = blank_bundle(32);
        for v in &mut b.views {
            v.mask.fill(true);
            v.rgb.fill([0.2, 0.4, 0.6]);
        }
        let lat = encode(&b, 8, 16).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(lat.get(2, Modality::Rgb, 0, r, c), 0.2);
                assert_eq!(lat.get(2, Modality::Rgb, 2, r, c), 0.6);
                assert_eq!(lat.get(2, Modality::Rgb, MASK_CHANNEL, r, c), 1.0);
            }
        }
    }

    #[test]
    fn latent_shape_follows_patch() {
        let lat = encode(&blank_bundle(128), 8, 16).unwrap();
        assert_eq!((lat.views, lat.channels, lat.height, lat.width), (5, 16, 16, 16));
        assert_eq!(lat.fused_channels(), 48);
        assert!(encode(&blank_bundle(36), 8, 16).is_err());
        assert!(encode(&blank_bundle(32), 8, 3).is_err());
    }

    #[test]
    fn checkerboard_mask_halves_mask_channel() {
        let mut b = blank_bundle(32);
        for v in &mut b.views {
            for y in 0..32 {
                for x in 0..32 {
                    v.mask[(y * 32 + x) as usize] = (x + y) % 2 == 0;
                }
            }
        }
        let lat = encode(&b, 8, 16).unwrap();
        for k in 0..5 {
            for m in Modality::ALL {
                assert_eq!(lat.get(k, m, MASK_CHANNEL, 1, 2), 0.5);
                // Masked centroid of a checkerboard sits on the block center.
                assert_eq!(lat.get(k, m, 10, 1, 2), 0.0);
            }
        }
    }

    #[test]
    fn blockwise_constant_bundle_is_a_fixed_point() {
        let mut b = blank_bundle(16);
        for (k, v) in b.views.iter_mut().enumerate() {
            for y in 0..16usize {
                for x in 0..16usize {
                    let (bx, by) = (x / 4, y / 4);
                    if (bx + by + k) % 3 == 0 {
                        continue;
                    }
                    let i = y * 16 + x;
                    v.mask[i] = true;
                    v.rgb[i] = [0.25 * bx as f32, 0.5, 0.125 * by as f32];
                    v.normal[i] = [0.0, 0.6, 0.8];
                    v.coord[i] = [0.25 * bx as f32 - 0.5, -0.25, 0.25 * by as f32 - 0.5];
                }
            }
        }
        let lat = encode(&b, 4, 16).unwrap();
        assert_eq!(decode(&lat, &b.rig).unwrap(), b);
    }

    #[test]
    fn zero_latent_decodes_to_background() {
        let rig = CameraRig::rig_with_size(16);
        let lat = LatentGrid2D::zeros(5, 16, 2, 2, 8);
        let b = decode(&lat, &rig).unwrap();
        assert_eq!(b.masked_count(), 0);
        assert_eq!(b.views[0].width, 16);
    }

    #[test]
    fn sphere_roundtrip_error_bounded_by_block_diameter() {
        let sphere = TriMesh::icosphere(0.8, 4);
        let b = render_bundle(&sphere, &CameraRig::rig_default(), 64).unwrap();
        let lat = encode(&b, 8, 16).unwrap();
        let d = decode(&lat, &b.rig).unwrap();
        for (src, dec) in b.views.iter().zip(&d.views) {
            for by in 0..8usize {
                for bx in 0..8usize {
                    let pts: Vec<[f32; 3]> = (0..64)
                        .map(|j| (by * 8 + j / 8) * 64 + bx * 8 + j % 8)
                        .filter(|&i| src.mask[i])
                        .map(|i| src.coord[i])
                        .collect();
                    let dist = |a: &[f32; 3], b: &[f32; 3]| {
                        (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f32>().sqrt()
                    };
                    let diameter = pts
                        .iter()
                        .flat_map(|a| pts.iter().map(move |b| dist(a, b)))
                        .fold(0.0f32, f32::max);
                    for j in 0..64 {
                        let i = (by * 8 + j / 8) * 64 + bx * 8 + j % 8;
                        if src.mask[i] && dec.mask[i] {
                            assert!(dist(&src.coord[i], &dec.coord[i]) <= diameter + 1e-6);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn file_roundtrip_and_rejection() {
        let sphere = TriMesh::icosphere(0.5, 2);
        let b = render_bundle(&sphere, &CameraRig::rig_default(), 32).unwrap();
        let lat = encode(&b, 8, 16).unwrap();
        let mut buf = Vec::new();
        lat.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + lat.data.len() * 4);
        assert_eq!(LatentGrid2D::read(&mut buf.as_slice()).unwrap(), lat);
        assert!(LatentGrid2D::read(&mut &buf[..buf.len() - 1]).is_err());
        buf[0] ^= 0xff;
        assert!(LatentGrid2D::read(&mut buf.as_slice()).is_err());
    }
}
