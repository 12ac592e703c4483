use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use twofive_core::camera::Vec3;
use twofive_core::mesh::TriMesh;

fn twofive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twofive"))
        .args(args)
        .env_remove("TWOFIVE_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_mesh(dir: &Path, name: &str, mesh: &TriMesh) -> PathBuf {
    let path = dir.join(name);
    mesh.save(&path).unwrap();
    path
}

fn sphere_bundle(size: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mesh = write_mesh(dir.path(), "sphere.obj", &TriMesh::icosphere(0.8, 3));
    let bundle = dir.path().join("bundle");
    let o = twofive(&["render", p(&mesh), p(&bundle), "--size", size]);
    assert!(o.status.success(), "{}", stderr(&o));
    (dir, bundle)
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn render_writes_bundle_and_manifest() {
    let (_dir, bundle) = sphere_bundle("32");
    for f in ["rig.json", "bundle.bin", "manifest.json", "view0_rgb.png", "view4_coord.png"] {
        assert!(bundle.join(f).exists(), "{f}");
    }
    let m = manifest(&bundle.join("manifest.json"));
    assert_eq!(m["command"], "render");
    assert_eq!(m["summary"]["views"], 5);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2 + 15);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn size_flag_sets_image_resolution() {
    let (_dir, bundle) = sphere_bundle("512");
    let img = image::image_dimensions(bundle.join("view2_normal.png"));
    assert_eq!(img.unwrap(), (512, 512));
}

#[test]
fn reconstruct_writes_mesh_gaussians_and_manifest() {
    let (dir, bundle) = sphere_bundle("64");
    let out = dir.path().join("rec").join("sphere.obj");
    let o = twofive(&["reconstruct", p(&bundle), p(&out), "--resolution", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mesh = TriMesh::load(&out).unwrap();
    assert!(!mesh.faces.is_empty());
    let gaussians = dir.path().join("rec").join("sphere.gaussians.ply");
    let header = std::fs::read(&gaussians).unwrap();
    assert!(header.starts_with(b"ply\n"));
    let m = manifest(&dir.path().join("rec").join("sphere.manifest.json"));
    let stages: Vec<&str> = m["stages"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(stages, ["encode", "coordinates", "correct", "voxelize", "refine", "extract", "gaussians"]);
    assert_eq!(m["config"]["voxel"]["resolution"], 32);
}

#[test]
fn reconstruct_reruns_are_byte_identical() {
    let (dir, bundle) = sphere_bundle("64");
    let out = dir.path().join("sphere.obj");
    let mut digests = Vec::new();
    for threads in ["1", "3"] {
        let o = twofive(&["--threads", threads, "reconstruct", p(&bundle), p(&out), "--resolution", "32"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let m = manifest(&dir.path().join("sphere.manifest.json"));
        digests.push(m["outputs"].clone());
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn empty_bundle_has_nothing_to_extract() {
    let dir = tempfile::tempdir().unwrap();
    // Far smaller than a pixel and between pixel centres in every view.
    let speck = TriMesh::new(
        vec![Vec3::new(-1e-4, 0.0, -1e-4), Vec3::new(1e-4, 0.0, -1e-4), Vec3::new(0.0, 0.0, 1e-4)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let mesh = write_mesh(dir.path(), "speck.obj", &speck);
    let bundle = dir.path().join("bundle");
    let o = twofive(&["render", p(&mesh), p(&bundle), "--size", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = twofive(&["reconstruct", p(&bundle), p(&dir.path().join("x.obj")), "--resolution", "16"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: stage="), "{err}");
    assert!(err.contains("nothing to extract"), "{err}");
}

#[test]
fn missing_mesh_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = twofive(&["render", "/nonexistent/mesh.obj", p(&dir.path().join("b"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: stage=load kind=io"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn eval_requires_two_meshes() {
    let o = twofive(&["eval", "a.obj"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error: stage=usage kind=usage"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn invalid_config_value_is_a_usage_error() {
    let (dir, bundle) = sphere_bundle("32");
    let o = twofive(&["reconstruct", p(&bundle), p(&dir.path().join("x.obj")), "--resolution", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("voxel.resolution"), "{}", stderr(&o));
}

#[test]
fn config_file_is_read_and_flags_override() {
    let (dir, bundle) = sphere_bundle("32");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[voxel]\nresolution = 16\n[coordfix]\nenabled = false\n").unwrap();
    let out = dir.path().join("s.obj");
    let o = twofive(&["--config", p(&cfg), "reconstruct", p(&bundle), p(&out), "--resolution", "24"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&dir.path().join("s.manifest.json"));
    assert_eq!(m["config"]["voxel"]["resolution"], 24);
    assert_eq!(m["config"]["coordfix"]["enabled"], false);

    std::fs::write(&cfg, "[voxel]\nresolutoin = 16\n").unwrap();
    let o = twofive(&["--config", p(&cfg), "reconstruct", p(&bundle), p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_mesh_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = write_mesh(dir.path(), "box.obj", &TriMesh::cuboid(Vec3::new(0.5, 0.4, 0.3), 4));
    let o = twofive(&["eval", p(&mesh), p(&mesh), "--json", "--samples", "2000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["cd"], 0.0);
    assert_eq!(report["fs"], 1.0);
    assert_eq!(report["samples"], 2000);
}

#[test]
fn eval_images_identical_gives_infinite_psnr() {
    let (dir, bundle) = sphere_bundle("32");
    let mesh = write_mesh(dir.path(), "m.obj", &TriMesh::icosphere(0.5, 2));
    let img = bundle.join("view0_rgb.png");
    let out = dir.path().join("report.json");
    let o = twofive(&["eval", p(&mesh), p(&mesh), "--samples", "500", "--images", p(&img), p(&img), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = manifest(&out);
    assert_eq!(report["psnr"], "inf");
    assert_eq!(report["ssim"], 1.0);
}

#[test]
fn adapter_check_passes_and_detects_corruption() {
    let o = twofive(&["adapter-check", "--cases", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(!table.contains("FAIL"), "{table}");
    assert!(table.contains("equal parameters: true"), "{table}");

    let dir = tempfile::tempdir().unwrap();
    let blob = dir.path().join("w.bin");
    let o = twofive(&["adapter-check", "--export-weights", p(&blob)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = twofive(&["adapter-check", "--cases", "5", "--weights", p(&blob)]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("weight blob gradients"));

    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[60] ^= 0x40;
    std::fs::write(&blob, bytes).unwrap();
    let o = twofive(&["adapter-check", "--cases", "5", "--weights", p(&blob)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"), "{}", stdout(&o));
    assert!(stdout(&o).to_lowercase().contains("checksum"));
}

#[test]
fn correct_and_voxelize_subcommands() {
    let (dir, bundle) = sphere_bundle("64");
    let fixed = dir.path().join("fixed");
    let o = twofive(&["correct", p(&bundle), p(&fixed), "--sigma-spatial", "1.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fixed.join("points.ply").exists());
    let m = manifest(&fixed.join("manifest.json"));
    assert_eq!(m["config"]["coordfix"]["sigma_spatial"], 1.5);
    let before = m["summary"]["mean_ray_residual_before"].as_f64().unwrap();
    let after = m["summary"]["mean_ray_residual_after"].as_f64().unwrap();
    assert!(after <= before + 1e-12);

    let raw = dir.path().join("raw.svl");
    let refined = dir.path().join("refined.svl");
    for (out, extra) in [(&raw, Some("--no-refine")), (&refined, None)] {
        let mut args = vec!["voxelize", p(&bundle), p(out), "--resolution", "32"];
        args.extend(extra);
        let o = twofive(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let occupied = |path: &Path| manifest(&path.with_extension("manifest.json"))["summary"]["occupied"].as_u64().unwrap();
    assert!(occupied(&refined) > occupied(&raw));
}
