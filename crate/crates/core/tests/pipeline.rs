use twofive_core::camera::{CameraRig, Vec3};
use twofive_core::coordfix::{self, CorrectionParams, PointField};
use twofive_core::mesh::TriMesh;
use twofive_core::surface::{self, GaussianSet};
use twofive_core::voxelize::{self, cell_center, SparseVoxelLatent};
use twofive_core::{latentcodec, metrics, rasterizer};

fn solid_ball(resolution: usize, radius: f64) -> SparseVoxelLatent {
    let mut v = SparseVoxelLatent::empty(resolution, 3);
    let r = resolution as u32;
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                if cell_center([i, j, k], resolution).norm() < radius {
                    v.cells.push([i, j, k]);
                    v.features.extend([0.5f32; 3]);
                    v.occupancy.push(1.0);
                    v.weight.push(1.0);
                }
            }
        }
    }
    v
}

#[test]
fn voxel_ball_extracts_close_to_sphere() {
    let resolution = 32;
    let v = solid_ball(resolution, 0.625);
    let sdf = surface::occupancy_to_sdf(&v).unwrap();
    let mesh = surface::extract_mesh(&sdf, &v).unwrap();
    let a = metrics::sample_surface(&mesh, 4000, 1).unwrap();
    let b = metrics::sample_surface(&TriMesh::icosphere(0.625, 4), 4000, 1).unwrap();
    let cell = 2.0 / resolution as f64;
    let cd = metrics::chamfer(&a, &b).unwrap();
    assert!(cd < 2.0 * cell, "cd {cd}");
}

#[test]
fn decoded_coordinates_round_trip_through_voxels() {
    let sphere = TriMesh::icosphere(0.8, 4);
    let rig = CameraRig::rig_with_size(64);
    let bundle = rasterizer::render_bundle(&sphere, &rig, 64).unwrap();
    let latent = latentcodec::encode(&bundle, 8, 16).unwrap();
    let decoded = latentcodec::decode(&latent, &bundle.rig).unwrap();
    let field = PointField::from_bundle(&decoded);
    let fixed = coordfix::correct(&field, &decoded.rig, &CorrectionParams::default()).unwrap();
    let coords = fixed.apply_to_bundle(&decoded).unwrap();

    let projected = voxelize::project_to_voxels(&latent, &coords, 32).unwrap();
    let voxels = voxelize::init_occupancy(&projected);
    let bias = voxelize::heuristic_bias(&voxels, 32).unwrap();
    let refined = voxelize::refine_occupancy(&voxels, &bias).unwrap();
    assert!(refined.occupied_count() > voxels.occupied_count());

    let sdf = surface::occupancy_to_sdf(&refined).unwrap();
    let mesh = surface::extract_mesh(&sdf, &refined).unwrap();
    let a = metrics::sample_surface(&mesh, 4000, 2).unwrap();
    let b = metrics::sample_surface(&sphere, 4000, 2).unwrap();
    let cd = metrics::chamfer(&a, &b).unwrap();
    assert!(cd < 0.25, "cd {cd}");

    let mut buf = Vec::new();
    refined.write(&mut buf).unwrap();
    assert_eq!(SparseVoxelLatent::read(&mut buf.as_slice()).unwrap(), refined);

    let g = surface::to_gaussians(&refined);
    assert_eq!(g.len(), refined.len());
    let mut ply = Vec::new();
    g.write_ply(&mut ply).unwrap();
    assert_eq!(GaussianSet::read_ply(ply.as_slice()).unwrap().len(), g.len());
}

#[test]
fn bundle_saves_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let cube = TriMesh::cuboid(Vec3::new(0.4, 0.4, 0.4), 2);
    let bundle = rasterizer::render_bundle(&cube, &CameraRig::rig_default().with_bottom_view(), 24).unwrap();
    bundle.save(dir.path()).unwrap();
    let back = twofive_core::bundle::MultiViewBundle::load(dir.path()).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(back.views.len(), 6);
}
