//! Shared fixtures for the stage benchmarks.

use twofive_core::bundle::MultiViewBundle;
use twofive_core::camera::{CameraRig, Vec3};
use twofive_core::latentcodec::{self, LatentGrid2D};
use twofive_core::mesh::TriMesh;
use twofive_core::rasterizer;

pub const SIZE: u32 = 128;
pub const RESOLUTION: usize = 64;

pub fn sphere() -> TriMesh {
    TriMesh::icosphere(0.8, 5)
}

pub fn cuboid() -> TriMesh {
    TriMesh::cuboid(Vec3::new(0.7, 0.5, 0.6), 16)
}

pub fn bundle(mesh: &TriMesh) -> MultiViewBundle {
    rasterizer::render_bundle(mesh, &CameraRig::rig_default(), SIZE).expect("fixture renders")
}

pub fn latent(bundle: &MultiViewBundle) -> LatentGrid2D {
    latentcodec::encode(bundle, latentcodec::DEFAULT_PATCH, latentcodec::DEFAULT_CHANNELS).expect("fixture encodes")
}
