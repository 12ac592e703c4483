//! Triangle meshes: construction, cleanup, normalization and OBJ/PLY I/O.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::camera::Vec3;
use crate::error::{Error, PathContext, Result};
use crate::ply::{self, ElementDef, PropertyDef, ScalarType};

/// Color used for meshes without per-vertex colors.
pub const DEFAULT_GRAY: [f32; 3] = [0.7, 0.7, 0.7];

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Optional per-vertex RGB in `[0, 1]`.
    pub colors: Option<Vec<[f32; 3]>>,
    /// Optional per-vertex unit normals. When absent, renderers use face normals.
    pub normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    /// Builds a mesh, checking indices and dropping zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mut mesh = Self {
            vertices,
            faces,
            colors: None,
            normals: None,
        };
        mesh.clean()?;
        Ok(mesh)
    }

    pub fn with_colors(mut self, colors: Vec<[f32; 3]>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        self.normals = Some(normals.into_iter().map(|n| n.normalize()).collect());
        Ok(self)
    }

    fn clean(&mut self) -> Result<()> {
        let n = self.vertices.len() as u64;
        if let Some(bad) = self.faces.iter().flatten().find(|&&i| u64::from(i) >= n) {
            return Err(Error::InvalidMesh(format!(
                "face index {bad} out of range for {n} vertices"
            )));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        let verts = &self.vertices;
        self.faces.retain(|f| {
            let [a, b, c] = f.map(|i| verts[i as usize]);
            (b - a).cross(&(c - a)).norm() > 0.0
        });
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.faces.is_empty()
    }

    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume; positive for closed meshes with outward winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Area-weighted vertex normals.
    pub fn compute_vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            let n = self.face_cross(f);
            for &i in face {
                acc[i as usize] += n;
            }
        }
        acc.into_iter()
            .map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::zeros))
            .collect()
    }

    pub fn vertex_color(&self, i: usize) -> [f32; 3] {
        self.colors.as_ref().map_or(DEFAULT_GRAY, |c| c[i])
    }

    /// Translates and uniformly scales the mesh so its bounding box is
    /// centered at the origin and its longest side spans exactly `[-1, 1]`.
    pub fn normalize_mesh(&self) -> Result<Self> {
        let (lo, hi) = self.bbox().filter(|_| !self.is_empty()).ok_or(Error::EmptyMesh)?;
        let extent = (hi - lo).max();
        if !(extent > 0.0) {
            return Err(Error::InvalidMesh("mesh has zero extent".into()));
        }
        let center = (lo + hi) * 0.5;
        let scale = 2.0 / extent;
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = (*v - center) * scale;
        }
        // Pin the longest axis exactly to +-1 against rounding.
        let axis = (hi - lo).imax();
        for (v, orig) in out.vertices.iter_mut().zip(&self.vertices) {
            if orig[axis] == lo[axis] {
                v[axis] = -1.0;
            } else if orig[axis] == hi[axis] {
                v[axis] = 1.0;
            }
        }
        Ok(out)
    }

    /// Whether the bounding box fits in `[-limit, limit]^3`.
    pub fn fits_in_cube(&self, limit: f64) -> bool {
        self.bbox()
            .is_some_and(|(lo, hi)| lo.min() >= -limit && hi.max() <= limit)
    }

    /// Icosphere with analytic normals.
    pub fn icosphere(radius: f64, subdivisions: u32) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoints = std::collections::HashMap::new();
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                    (verts.len() - 1) as u32
                })
            };
            faces = faces
                .iter()
                .flat_map(|&[a, b, c]| {
                    let ab = mid(a, b, &mut verts);
                    let bc = mid(b, c, &mut verts);
                    let ca = mid(c, a, &mut verts);
                    [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
                })
                .collect();
        }
        let normals = verts.clone();
        Self {
            vertices: verts.into_iter().map(|v| v * radius).collect(),
            faces,
            colors: None,
            normals: Some(normals),
        }
    }

    /// Axis-aligned box centered at the origin, `n x n` quads per side.
    /// Vertices are not shared between sides, so face normals stay sharp.
    pub fn cuboid(half_extents: Vec3, n: u32) -> Self {
        let n = n.max(1);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let (u_axis, v_axis) = ((axis + 1) % 3, (axis + 2) % 3);
                let base = vertices.len() as u32;
                for i in 0..=n {
                    for j in 0..=n {
                        let mut p = Vec3::zeros();
                        p[axis] = sign * half_extents[axis];
                        p[u_axis] = half_extents[u_axis] * (2.0 * f64::from(i) / f64::from(n) - 1.0);
                        p[v_axis] = half_extents[v_axis] * (2.0 * f64::from(j) / f64::from(n) - 1.0);
                        vertices.push(p);
                    }
                }
                let idx = |i: u32, j: u32| base + i * (n + 1) + j;
                for i in 0..n {
                    for j in 0..n {
                        let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                        // u x v points along +axis; flip for the negative side.
                        if sign > 0.0 {
                            faces.push([a, b, c]);
                            faces.push([a, c, d]);
                        } else {
                            faces.push([a, c, b]);
                            faces.push([a, d, c]);
                        }
                    }
                }
            }
        }
        Self {
            vertices,
            faces,
            colors: None,
            normals: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let file = std::fs::File::open(path).at_path(path)?;
        let reader = BufReader::new(file);
        match ext.as_deref() {
            Some("obj") => read_obj(reader),
            Some("ply") => read_ply(reader),
            _ => Err(Error::format(
                "mesh",
                format!("unsupported mesh extension for {}", path.display()),
            )),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let mut out = BufWriter::new(std::fs::File::create(path).at_path(path)?);
        match ext.as_deref() {
            Some("obj") => out.write_all(self.to_obj().as_bytes())?,
            Some("ply") => self.write_ply(&mut out)?,
            _ => {
                return Err(Error::format(
                    "mesh",
                    format!("unsupported mesh extension for {}", path.display()),
                ))
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Wavefront OBJ; vertex colors use the common `v x y z r g b` extension.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => {
                    let [r, g, b] = c[i];
                    writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, r, g, b).unwrap();
                }
                None => writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap(),
            }
        }
        for f in &self.faces {
            writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        s
    }

    /// Binary PLY with float positions and 8-bit vertex colors.
    pub fn write_ply<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut props = vec![
            PropertyDef::scalar("x", ScalarType::F32),
            PropertyDef::scalar("y", ScalarType::F32),
            PropertyDef::scalar("z", ScalarType::F32),
        ];
        if self.colors.is_some() {
            for c in ["red", "green", "blue"] {
                props.push(PropertyDef::scalar(c, ScalarType::U8));
            }
        }
        let elements = [
            ElementDef {
                name: "vertex".into(),
                count: self.vertices.len(),
                properties: props,
            },
            ElementDef {
                name: "face".into(),
                count: self.faces.len(),
                properties: vec![PropertyDef::list(
                    "vertex_indices",
                    ScalarType::U8,
                    ScalarType::I32,
                )],
            },
        ];
        ply::write_header(out, &[], &elements)?;
        let mut body = Vec::with_capacity(self.vertices.len() * 15 + self.faces.len() * 13);
        for (i, v) in self.vertices.iter().enumerate() {
            for c in v.iter() {
                ScalarType::F32.encode(*c, &mut body);
            }
            if let Some(colors) = &self.colors {
                for c in colors[i] {
                    ScalarType::U8.encode(f64::from(c.clamp(0.0, 1.0)) * 255.0, &mut body);
                }
            }
        }
        for f in &self.faces {
            body.push(3);
            for i in f {
                ScalarType::I32.encode(f64::from(*i), &mut body);
            }
        }
        out.write_all(&body)?;
        Ok(())
    }
}

fn read_obj<R: BufRead>(reader: R) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    let mut all_colored = true;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut tok = line.split_whitespace();
        let bad = |what: &str| Error::format("obj", format!("line {}: {what}", lineno + 1));
        match tok.next() {
            Some("v") => {
                let vals = tok
                    .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() < 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                if vals.len() >= 6 {
                    colors.push([vals[3] as f32, vals[4] as f32, vals[5] as f32]);
                } else {
                    all_colored = false;
                }
            }
            Some("f") => {
                let n = vertices.len() as i64;
                let idx = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        u32::try_from(resolved).map_err(|_| bad("face index out of range"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, faces)?;
    if all_colored && !colors.is_empty() {
        mesh = mesh.with_colors(colors)?;
    }
    Ok(mesh)
}

fn read_ply<R: BufRead>(reader: R) -> Result<TriMesh> {
    let data = ply::read(reader)?;
    let v = data
        .element("vertex")
        .ok_or_else(|| Error::format("ply", "no vertex element"))?;
    let col = |n: &str| {
        v.scalar(n)
            .ok_or_else(|| Error::format("ply", format!("missing vertex property {n}")))
    };
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    let vertices = (0..x.len()).map(|i| Vec3::new(x[i], y[i], z[i])).collect();
    let faces = match data.element("face") {
        Some(f) => {
            let lists = f
                .list("vertex_indices")
                .or_else(|| f.list("vertex_index"))
                .ok_or_else(|| Error::format("ply", "face element without vertex_indices"))?;
            let mut faces = Vec::new();
            for l in lists {
                if l.len() < 3 || l.iter().any(|&i| i < 0.0) {
                    return Err(Error::format("ply", "invalid face"));
                }
                for k in 1..l.len() - 1 {
                    faces.push([l[0] as u32, l[k] as u32, l[k + 1] as u32]);
                }
            }
            faces
        }
        None => Vec::new(),
    };
    let mut mesh = TriMesh::new(vertices, faces)?;
    if let (Some(r), Some(g), Some(b)) = (v.scalar("red"), v.scalar("green"), v.scalar("blue")) {
        // 8-bit colors are the norm; anything above 1 is taken as 0..255.
        let scale = if r.iter().chain(g).chain(b).any(|&c| c > 1.0) { 255.0 } else { 1.0 };
        let colors = (0..r.len())
            .map(|i| [(r[i] / scale) as f32, (g[i] / scale) as f32, (b[i] / scale) as f32])
            .collect();
        mesh = mesh.with_colors(colors)?;
    }
    Ok(mesh)
}
