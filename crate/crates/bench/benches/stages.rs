use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use twofive_bench::{bundle, cuboid, latent, sphere, RESOLUTION, SIZE};
use twofive_core::camera::CameraRig;
use twofive_core::coordfix::{self, CorrectionParams, PointField};
use twofive_core::{latentcodec, metrics, rasterizer, surface, voxelize};

fn render(c: &mut Criterion) {
    let mesh = sphere();
    let rig = CameraRig::rig_default();
    c.bench_function("render sphere 5x128", |b| {
        b.iter(|| rasterizer::render_bundle(black_box(&mesh), &rig, SIZE).unwrap())
    });
}

fn codec(c: &mut Criterion) {
    let b0 = bundle(&sphere());
    let lat = latent(&b0);
    c.bench_function("encode", |b| b.iter(|| latentcodec::encode(black_box(&b0), 8, 16).unwrap()));
    c.bench_function("decode", |b| b.iter(|| latentcodec::decode(black_box(&lat), &b0.rig).unwrap()));
}

fn correct(c: &mut Criterion) {
    let b0 = bundle(&sphere());
    let field = PointField::from_bundle(&b0);
    let params = CorrectionParams::default();
    c.bench_function("coordinate correction", |b| {
        b.iter(|| coordfix::correct(black_box(&field), &b0.rig, &params).unwrap())
    });
}

fn voxels(c: &mut Criterion) {
    let b0 = bundle(&cuboid());
    let lat = latent(&b0);
    let projected = voxelize::project_to_voxels(&lat, &b0, RESOLUTION).unwrap();
    let occ = voxelize::init_occupancy(&projected);
    c.bench_function("project to voxels", |b| {
        b.iter(|| voxelize::project_to_voxels(black_box(&lat), &b0, RESOLUTION).unwrap())
    });
    c.bench_function("closing bias", |b| {
        b.iter(|| voxelize::heuristic_bias(black_box(&occ), RESOLUTION as i64).unwrap())
    });
    let bias = voxelize::heuristic_bias(&occ, RESOLUTION as i64).unwrap();
    let refined = voxelize::refine_occupancy(&occ, &bias).unwrap();
    let sdf = surface::occupancy_to_sdf(&refined).unwrap();
    c.bench_function("occupancy sdf", |b| b.iter(|| surface::occupancy_to_sdf(black_box(&refined)).unwrap()));
    c.bench_function("marching cubes", |b| {
        b.iter(|| surface::extract_mesh(black_box(&sdf), &refined).unwrap())
    });
}

fn chamfer(c: &mut Criterion) {
    let a = metrics::sample_surface(&sphere(), metrics::DEFAULT_SAMPLES, 0).unwrap();
    let b = metrics::sample_surface(&cuboid(), metrics::DEFAULT_SAMPLES, 0).unwrap();
    c.bench_function("chamfer 16k", |bench| bench.iter(|| metrics::chamfer(black_box(&a), &b).unwrap()));
    c.bench_function("sample 16k", |bench| {
        bench.iter(|| metrics::sample_surface(black_box(&twofive_bench::sphere()), 16_000, 1).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = render, codec, correct, voxels, chamfer
}
criterion_main!(benches);
