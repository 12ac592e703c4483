//! The multiview RGB / normal / coordinate bundle and its on-disk layout.
//!
//! A bundle directory holds:
//!
//! * `rig.json`: the camera rig (see [`CameraRig`]).
//! * `bundle.bin`: lossless float sidecar, described below.
//! * `view{k}_rgb.png`, `view{k}_normal.png`, `view{k}_coord.png`: 8-bit
//!   previews. Normals and coordinates are mapped `[-1, 1] -> [0, 255]`.
//!
//! Sidecar layout, all fields little-endian:
//!
//! ```text
//! magic    4 bytes  "MVBD"
//! version  u32      1
//! views    u32      N
//! height   u32      H
//! width    u32      W
//! channels u32      10  (rgb 3 + normal 3 + coord 3 + mask 1)
//! payload  f32      view-major, then modality-major (rgb, normal, coord,
//!                   mask), then row-major pixels, channels interleaved.
//! ```

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::camera::CameraRig;
use crate::error::{Error, PathContext, Result};

pub const BACKGROUND_RGB: [f32; 3] = [1.0, 1.0, 1.0];
pub const BACKGROUND_NORMAL: [f32; 3] = [0.0; 3];
pub const BACKGROUND_COORD: [f32; 3] = [0.0; 3];

const SIDECAR_MAGIC: &[u8; 4] = b"MVBD";
const SIDECAR_VERSION: u32 = 1;
const SIDECAR_CHANNELS: u32 = 10;

/// One view's images, row-major with `y * width + x` indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImages {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f32; 3]>,
    pub normal: Vec<[f32; 3]>,
    pub coord: Vec<[f32; 3]>,
    pub mask: Vec<bool>,
}

impl ViewImages {
    /// All-background view.
    pub fn empty(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            rgb: vec![BACKGROUND_RGB; n],
            normal: vec![BACKGROUND_NORMAL; n],
            coord: vec![BACKGROUND_COORD; n],
            mask: vec![false; n],
        }
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewBundle {
    pub rig: CameraRig,
    pub views: Vec<ViewImages>,
}

impl MultiViewBundle {
    pub fn validate(&self) -> Result<()> {
        if self.rig.len() != self.views.len() {
            return Err(Error::ShapeMismatch(format!(
                "rig has {} views, bundle has {}",
                self.rig.len(),
                self.views.len()
            )));
        }
        for (k, (cam, v)) in self.rig.views.iter().zip(&self.views).enumerate() {
            let n = v.pixel_count();
            if cam.width != v.width || cam.height != v.height {
                return Err(Error::ShapeMismatch(format!(
                    "view {k}: camera is {}x{}, images are {}x{}",
                    cam.width, cam.height, v.width, v.height
                )));
            }
            if [v.rgb.len(), v.normal.len(), v.coord.len(), v.mask.len()] != [n; 4] {
                return Err(Error::ShapeMismatch(format!("view {k}: channel length mismatch")));
            }
        }
        Ok(())
    }

    /// Shared `(width, height)`, if every view has the same size.
    pub fn uniform_size(&self) -> Option<(u32, u32)> {
        let first = self.views.first()?;
        self.views
            .iter()
            .all(|v| v.width == first.width && v.height == first.height)
            .then_some((first.width, first.height))
    }

    pub fn masked_count(&self) -> usize {
        self.views.iter().map(ViewImages::masked_count).sum()
    }

    pub fn write_sidecar<W: Write>(&self, out: &mut W) -> Result<()> {
        self.validate()?;
        let (w, h) = self
            .uniform_size()
            .ok_or_else(|| Error::ShapeMismatch("sidecar needs equally sized views".into()))?;
        out.write_all(SIDECAR_MAGIC)?;
        for v in [SIDECAR_VERSION, self.views.len() as u32, h, w, SIDECAR_CHANNELS] {
            out.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity((w * h * SIDECAR_CHANNELS * 4) as usize);
        for v in &self.views {
            buf.clear();
            for block in [&v.rgb, &v.normal, &v.coord] {
                for px in block.iter() {
                    for c in px {
                        buf.extend(c.to_le_bytes());
                    }
                }
            }
            for &m in &v.mask {
                buf.extend(if m { 1f32 } else { 0f32 }.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_sidecar<R: Read>(input: &mut R, rig: CameraRig) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != SIDECAR_MAGIC {
            return Err(Error::format("bundle sidecar", "bad magic"));
        }
        let mut header = [0u32; 5];
        for h in &mut header {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *h = u32::from_le_bytes(b);
        }
        let [version, n, h, w, channels] = header;
        if version != SIDECAR_VERSION || channels != SIDECAR_CHANNELS {
            return Err(Error::format(
                "bundle sidecar",
                format!("unsupported version {version} / channels {channels}"),
            ));
        }
        let px = (w as usize) * (h as usize);
        let mut payload = vec![0u8; px * SIDECAR_CHANNELS as usize * 4];
        let mut views = Vec::with_capacity(n as usize);
        for _ in 0..n {
            input
                .read_exact(&mut payload)
                .map_err(|_| Error::format("bundle sidecar", "truncated payload"))?;
            let f = |i: usize| f32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().unwrap());
            let block = |b: usize| -> Vec<[f32; 3]> {
                (0..px)
                    .map(|p| {
                        let o = b * px * 3 + p * 3;
                        [f(o), f(o + 1), f(o + 2)]
                    })
                    .collect()
            };
            views.push(ViewImages {
                width: w,
                height: h,
                rgb: block(0),
                normal: block(1),
                coord: block(2),
                mask: (0..px).map(|p| f(9 * px + p) > 0.5).collect(),
            });
        }
        let bundle = Self { rig, views };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at_path(dir)?;
        self.rig.save(&dir.join("rig.json"))?;
        let sidecar = dir.join("bundle.bin");
        let mut out = BufWriter::new(std::fs::File::create(&sidecar).at_path(&sidecar)?);
        self.write_sidecar(&mut out)?;
        out.flush()?;
        for (k, v) in self.views.iter().enumerate() {
            let to_u8 = |x: f32| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
            let signed = |x: f32| to_u8((x + 1.0) * 0.5);
            save_png(&dir.join(format!("view{k}_rgb.png")), v, |p| v.rgb[p].map(to_u8))?;
            save_png(&dir.join(format!("view{k}_normal.png")), v, |p| v.normal[p].map(signed))?;
            save_png(&dir.join(format!("view{k}_coord.png")), v, |p| v.coord[p].map(signed))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let rig = CameraRig::load(&dir.join("rig.json"))?;
        let sidecar = dir.join("bundle.bin");
        let mut input = std::io::BufReader::new(std::fs::File::open(&sidecar).at_path(&sidecar)?);
        Self::read_sidecar(&mut input, rig)
    }
}

fn save_png(path: &Path, v: &ViewImages, pixel: impl Fn(usize) -> [u8; 3]) -> Result<()> {
    let mut img = image::RgbImage::new(v.width, v.height);
    for (x, y, p) in img.enumerate_pixels_mut() {
        *p = image::Rgb(pixel(v.index(x, y)));
    }
    img.save(path)?;
    Ok(())
}

/// Reads an 8-bit PNG as an RGB float image in `[0, 1]`.
pub fn load_png_rgb(path: &Path) -> Result<(u32, u32, Vec<[f32; 3]>)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = img
        .pixels()
        .map(|p| p.0.map(|c| f32::from(c) / 255.0))
        .collect();
    Ok((w, h, px))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_bundle() -> MultiViewBundle {
        let rig = CameraRig::rig_with_size(8);
        let views = (0..rig.len())
            .map(|k| {
                let mut v = ViewImages::empty(8, 8);
                for p in 0..64 {
                    if (p + k) % 3 == 0 {
                        v.mask[p] = true;
                        v.rgb[p] = [0.1 * k as f32, 0.25, 0.5];
                        v.normal[p] = [0.0, 0.6, -0.8];
                        v.coord[p] = [p as f32 / 64.0, -0.5, 0.125];
                    }
                }
                v
            })
            .collect();
        MultiViewBundle { rig, views }
    }

    #[test]
    fn sidecar_roundtrip_is_lossless() {
        let b = sample_bundle();
        let mut buf = Vec::new();
        b.write_sidecar(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 5 * 64 * 10 * 4);
        let back = MultiViewBundle::read_sidecar(&mut buf.as_slice(), b.rig.clone()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn sidecar_rejects_truncation_and_bad_magic() {
        let b = sample_bundle();
        let mut buf = Vec::new();
        b.write_sidecar(&mut buf).unwrap();
        let short = &buf[..buf.len() - 4];
        assert!(MultiViewBundle::read_sidecar(&mut &short[..], b.rig.clone()).is_err());
        buf[0] = b'X';
        assert!(MultiViewBundle::read_sidecar(&mut buf.as_slice(), b.rig.clone()).is_err());
    }

    #[test]
    fn directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample_bundle();
        b.save(dir.path()).unwrap();
        assert!(dir.path().join("view4_coord.png").exists());
        assert_eq!(MultiViewBundle::load(dir.path()).unwrap(), b);
        let (w, h, rgb) = load_png_rgb(&dir.path().join("view0_rgb.png")).unwrap();
        assert_eq!((w, h), (8, 8));
        assert_eq!(rgb[1], [1.0, 1.0, 1.0]);
    }
}
