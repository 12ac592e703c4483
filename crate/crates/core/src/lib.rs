//! Core algorithms for the multiview 2.5D representation: rendering,
//! latent coding, voxel projection and occupancy refinement, coordinate
//! correction, surface decoding, adapter math and evaluation metrics.

pub mod adapters;
pub mod bundle;
pub mod camera;
pub mod coordfix;
pub mod edt;
pub mod error;
pub mod latentcodec;
pub mod mesh;
pub mod metrics;
pub mod ply;
pub mod rasterizer;
pub mod surface;
pub mod voxelize;

pub use adapters::{ModalLatent, MolConfig, MolLayer, PlacementTable, Ranks, RopeConfig, RopePosition};
pub use bundle::{MultiViewBundle, ViewImages};
pub use camera::{CameraRig, Projection, Ray, Vec3, ViewCamera};
pub use coordfix::{CorrectionParams, PointField};
pub use error::{Error, PathContext, Result};
pub use latentcodec::LatentGrid2D;
pub use mesh::TriMesh;
pub use metrics::{MetricReport, SampledCloud};
pub use rasterizer::render_bundle;
pub use surface::{GaussianSet, ScalarField};
pub use voxelize::{OccupancyBias, SparseVoxelLatent};
