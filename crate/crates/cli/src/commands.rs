//! Subcommand bodies. Each validates the configuration before touching any
//! file and writes a manifest next to its outputs.

use std::path::{Path, PathBuf};

use serde_json::json;
use twofive_core::bundle::MultiViewBundle;
use twofive_core::coordfix::{self, PointField};
use twofive_core::latentcodec;
use twofive_core::mesh::TriMesh;
use twofive_core::metrics::{self, MetricReport, RgbImage};
use twofive_core::voxelize::SparseVoxelLatent;
use twofive_core::PathContext;

use crate::adapter_check::{self, CheckRow};
use crate::config::PipelineConfig;
use crate::error::{CliError, StageResult};
use crate::manifest::Manifest;
use crate::pipeline::{self, Reconstruction};

/// Files written by [`reconstruct`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconstructOutputs {
    pub mesh: PathBuf,
    pub gaussians: PathBuf,
    pub manifest: PathBuf,
}

impl ReconstructOutputs {
    /// `<stem>.gaussians.ply` and `<stem>.manifest.json` beside the mesh.
    pub fn for_mesh(mesh: &Path) -> Self {
        let stem = mesh.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let sibling = |suffix: &str| mesh.with_file_name(format!("{stem}.{suffix}"));
        Self {
            mesh: mesh.to_path_buf(),
            gaussians: sibling("gaussians.ply"),
            manifest: sibling("manifest.json"),
        }
    }
}

fn bundle_inputs(m: &mut Manifest, dir: &Path) -> Result<(), CliError> {
    m.input(&dir.join("rig.json"))?;
    m.input(&dir.join("bundle.bin"))
}

fn load_bundle(dir: &Path) -> Result<MultiViewBundle, CliError> {
    MultiViewBundle::load(dir).stage("load")
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).at_path(p).stage("write"),
        _ => Ok(()),
    }
}

fn render_params(cfg: &PipelineConfig) -> serde_json::Value {
    json!({ "size": cfg.render.size, "rig": cfg.render.rig, "bottom_view": cfg.render.bottom_view })
}

/// Mesh file to bundle directory.
pub fn render(mesh_path: &Path, out_dir: &Path, cfg: &PipelineConfig, normalize: bool) -> Result<MultiViewBundle, CliError> {
    cfg.validate()?;
    let mut mesh = TriMesh::load(mesh_path).stage("load")?;
    if normalize {
        mesh = mesh.normalize_mesh().stage("render")?;
    }
    let bundle = pipeline::render(&mesh, cfg)?;
    bundle.save(out_dir).stage("write")?;

    let mut m = Manifest::new("render", cfg);
    m.input(mesh_path)?;
    m.stage("render", json!({ "normalize": normalize, "render": render_params(cfg) }));
    m.output(&out_dir.join("rig.json"))?;
    m.output(&out_dir.join("bundle.bin"))?;
    for k in 0..bundle.views.len() {
        for kind in ["rgb", "normal", "coord"] {
            m.output(&out_dir.join(format!("view{k}_{kind}.png")))?;
        }
    }
    m.summary = json!({ "views": bundle.views.len(), "masked_pixels": bundle.masked_count() });
    m.save(&out_dir.join("manifest.json"))?;
    Ok(bundle)
}

fn coordinate_stages(m: &mut Manifest, cfg: &PipelineConfig) {
    m.stage("encode", json!({ "patch": cfg.codec.patch, "channels": cfg.codec.channels }));
    m.stage("coordinates", json!({ "source": cfg.voxel.coord_source }));
    if cfg.coordfix.enabled {
        m.stage("correct", serde_json::to_value(cfg.coordfix.params()).expect("plain struct"));
    }
    m.stage("voxelize", json!({ "resolution": cfg.voxel.resolution }));
}

fn reconstruct_stages(m: &mut Manifest, cfg: &PipelineConfig) {
    coordinate_stages(m, cfg);
    m.stage("refine", json!({ "closing_radius": cfg.voxel.closing_radius() }));
    m.stage("extract", json!({ "method": "marching cubes on padded occupancy distance field" }));
    m.stage("gaussians", json!({ "per": "occupied cell" }));
}

/// Bundle directory to mesh, Gaussian PLY and manifest.
pub fn reconstruct(bundle_dir: &Path, out_mesh: &Path, cfg: &PipelineConfig) -> Result<(Reconstruction, ReconstructOutputs), CliError> {
    cfg.validate()?;
    let bundle = load_bundle(bundle_dir)?;
    let rec = pipeline::reconstruct(&bundle, cfg)?;
    let out = ReconstructOutputs::for_mesh(out_mesh);
    create_parent(out_mesh)?;
    rec.mesh.save(&out.mesh).stage("write")?;
    rec.gaussians.save(&out.gaussians).stage("write")?;

    let mut m = Manifest::new("reconstruct", cfg);
    bundle_inputs(&mut m, bundle_dir)?;
    reconstruct_stages(&mut m, cfg);
    m.output(&out.mesh)?;
    m.output(&out.gaussians)?;
    m.summary = json!({
        "views": bundle.views.len(),
        "projected_cells": rec.voxels.len(),
        "occupied_before_refine": rec.voxels.occupied_count(),
        "occupied_after_refine": rec.refined.occupied_count(),
        "mesh_vertices": rec.mesh.vertices.len(),
        "mesh_faces": rec.mesh.faces.len(),
        "gaussians": rec.gaussians.len(),
    });
    m.save(&out.manifest)?;
    Ok((rec, out))
}

/// Standalone coordinate correction: bundle directory to bundle directory,
/// plus the corrected points as PLY.
pub fn correct(bundle_dir: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<PointField, CliError> {
    cfg.validate()?;
    let bundle = load_bundle(bundle_dir)?;
    let field = PointField::from_bundle(&bundle);
    let fixed = coordfix::correct(&field, &bundle.rig, &cfg.coordfix.params()).stage("correct")?;
    let before = field.mean_ray_residual(&bundle.rig).stage("correct")?;
    let after = fixed.mean_ray_residual(&bundle.rig).stage("correct")?;
    fixed.apply_to_bundle(&bundle).stage("correct")?.save(out_dir).stage("write")?;
    let points = out_dir.join("points.ply");
    fixed.save(&points).stage("write")?;

    let mut m = Manifest::new("correct", cfg);
    bundle_inputs(&mut m, bundle_dir)?;
    m.stage("correct", serde_json::to_value(cfg.coordfix.params()).expect("plain struct"));
    m.output(&out_dir.join("bundle.bin"))?;
    m.output(&points)?;
    m.summary = json!({
        "points": fixed.len(),
        "valid": fixed.valid_count(),
        "mean_ray_residual_before": before,
        "mean_ray_residual_after": after,
    });
    m.save(&out_dir.join("manifest.json"))?;
    Ok(fixed)
}

/// Standalone voxelization: bundle directory to a sparse voxel latent file.
/// Runs the configured correction first; `refine` adds the closing step.
pub fn voxelize(bundle_dir: &Path, out: &Path, cfg: &PipelineConfig, refine: bool) -> Result<SparseVoxelLatent, CliError> {
    cfg.validate()?;
    let bundle = load_bundle(bundle_dir)?;
    let latent = latentcodec::encode(&bundle, cfg.codec.patch, cfg.codec.channels).stage("encode")?;
    let coords = pipeline::coordinates(&bundle, &latent, cfg)?;
    let (voxels, refined) = pipeline::voxelize(&latent, &coords, cfg)?;
    let result = if refine { refined } else { voxels };
    create_parent(out)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(out).at_path(out).stage("write")?);
    result.write(&mut file).stage("write")?;
    std::io::Write::flush(&mut file).stage("write")?;
    drop(file);

    let mut m = Manifest::new("voxelize", cfg);
    bundle_inputs(&mut m, bundle_dir)?;
    coordinate_stages(&mut m, cfg);
    if refine {
        m.stage("refine", json!({ "closing_radius": cfg.voxel.closing_radius() }));
    }
    m.output(out)?;
    m.summary = json!({ "cells": result.len(), "occupied": result.occupied_count() });
    m.save(&out.with_extension("manifest.json"))?;
    Ok(result)
}

fn load_eval_mesh(path: &Path, align: bool) -> Result<TriMesh, CliError> {
    let mesh = TriMesh::load(path).stage("load")?;
    if align {
        mesh.normalize_mesh().stage("align")
    } else {
        Ok(mesh)
    }
}

/// Geometry metrics between two meshes, plus image metrics when a pair of
/// PNGs is given.
pub fn eval(
    mesh_a: &Path,
    mesh_b: &Path,
    images: Option<(&Path, &Path)>,
    cfg: &PipelineConfig,
) -> Result<MetricReport, CliError> {
    cfg.validate()?;
    let mc = &cfg.metrics;
    let a = load_eval_mesh(mesh_a, mc.align)?;
    let b = load_eval_mesh(mesh_b, mc.align)?;
    let pa = metrics::sample_surface(&a, mc.samples, mc.seed).stage("sample")?;
    let pb = metrics::sample_surface(&b, mc.samples, mc.seed).stage("sample")?;
    let cd = metrics::chamfer(&pa, &pb).stage("metrics")?;
    let fs = metrics::fscore(&pa, &pb, mc.tau).stage("metrics")?;
    let mut report = MetricReport::new(cd, fs, mc.tau, mc.samples, mc.seed);
    if let Some((ia, ib)) = images {
        let ia = RgbImage::load_png(ia).stage("load")?;
        let ib = RgbImage::load_png(ib).stage("load")?;
        report.psnr = Some(metrics::psnr(&ia, &ib).stage("metrics")?);
        report.ssim = Some(metrics::ssim(&ia, &ib).stage("metrics")?);
    }
    Ok(report)
}

/// Runs the adapter suite; any failed row is an error after the table is
/// produced.
pub fn adapter_check(cfg: &PipelineConfig) -> Result<Vec<CheckRow>, CliError> {
    cfg.validate()?;
    adapter_check::run_checks(&cfg.adapters)
}
