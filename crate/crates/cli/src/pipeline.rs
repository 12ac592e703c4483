//! The reconstruction chain as a library call, stage by stage.

use twofive_core::bundle::MultiViewBundle;
use twofive_core::camera::CameraRig;
use twofive_core::coordfix::{self, PointField};
use twofive_core::latentcodec::{self, LatentGrid2D};
use twofive_core::mesh::TriMesh;
use twofive_core::surface::{self, GaussianSet};
use twofive_core::voxelize::{self, SparseVoxelLatent};

use crate::config::{CoordSource, PipelineConfig};
use crate::error::{CliError, StageResult};

/// Every intermediate of one reconstruction run.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub latent: LatentGrid2D,
    /// Coordinates fed to voxelization, after correction.
    pub coords: MultiViewBundle,
    pub voxels: SparseVoxelLatent,
    pub refined: SparseVoxelLatent,
    pub mesh: TriMesh,
    pub gaussians: GaussianSet,
}

/// The configured rig: the rig file if given, else the default rig, with an
/// optional bottom view, at the configured image size.
pub fn rig_from_config(cfg: &PipelineConfig) -> Result<CameraRig, CliError> {
    let rig = match &cfg.render.rig {
        Some(p) => CameraRig::load(p).stage("render")?,
        None => CameraRig::rig_default(),
    };
    let rig = if cfg.render.bottom_view { rig.with_bottom_view() } else { rig };
    Ok(rig.with_image_size(cfg.render.size))
}

pub fn render(mesh: &TriMesh, cfg: &PipelineConfig) -> Result<MultiViewBundle, CliError> {
    let rig = rig_from_config(cfg)?;
    twofive_core::rasterizer::render_bundle(mesh, &rig, cfg.render.size).stage("render")
}

/// Runs the coordinate correction on `bundle`'s coordinate images.
pub fn correct_bundle(bundle: &MultiViewBundle, cfg: &PipelineConfig) -> Result<MultiViewBundle, CliError> {
    let field = PointField::from_bundle(bundle);
    let fixed = coordfix::correct(&field, &bundle.rig, &cfg.coordfix.params()).stage("correct")?;
    fixed.apply_to_bundle(bundle).stage("correct")
}

/// Coordinate images for voxelization: the configured source, corrected
/// when correction is enabled.
pub fn coordinates(
    bundle: &MultiViewBundle,
    latent: &LatentGrid2D,
    cfg: &PipelineConfig,
) -> Result<MultiViewBundle, CliError> {
    let coords = match cfg.voxel.coord_source {
        CoordSource::Bundle => bundle.clone(),
        CoordSource::Decoded => latentcodec::decode(latent, &bundle.rig).stage("decode")?,
    };
    if cfg.coordfix.enabled {
        correct_bundle(&coords, cfg)
    } else {
        Ok(coords)
    }
}

/// Projects, initializes occupancy and refines with the closing bias.
pub fn voxelize(
    latent: &LatentGrid2D,
    coords: &MultiViewBundle,
    cfg: &PipelineConfig,
) -> Result<(SparseVoxelLatent, SparseVoxelLatent), CliError> {
    let projected = voxelize::project_to_voxels(latent, coords, cfg.voxel.resolution).stage("voxelize")?;
    let voxels = voxelize::init_occupancy(&projected);
    let bias = voxelize::heuristic_bias(&voxels, cfg.voxel.closing_radius()).stage("refine")?;
    let refined = voxelize::refine_occupancy(&voxels, &bias).stage("refine")?;
    Ok((voxels, refined))
}

pub fn reconstruct(bundle: &MultiViewBundle, cfg: &PipelineConfig) -> Result<Reconstruction, CliError> {
    cfg.validate()?;
    let latent = latentcodec::encode(bundle, cfg.codec.patch, cfg.codec.channels).stage("encode")?;
    let coords = coordinates(bundle, &latent, cfg)?;
    let (voxels, refined) = voxelize(&latent, &coords, cfg)?;
    let sdf = surface::occupancy_to_sdf(&refined).stage("extract")?;
    let mesh = surface::extract_mesh(&sdf, &refined).stage("extract")?;
    let gaussians = surface::to_gaussians(&refined);
    Ok(Reconstruction {
        latent,
        coords,
        voxels,
        refined,
        mesh,
        gaussians,
    })
}
