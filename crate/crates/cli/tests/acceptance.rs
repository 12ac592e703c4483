//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use twofive_cli::{commands, pipeline, PipelineConfig};
use twofive_core::adapters::{
    rope_apply, AdapterKind, ModalLatent, Modality, MolConfig, MolLayer, PlacementTable, Ranks, RopeConfig,
    RopePosition,
};
use twofive_core::camera::{CameraRig, Vec3};
use twofive_core::coordfix::{self, CorrectionParams, PointField};
use twofive_core::mesh::TriMesh;
use twofive_core::metrics::{self, SampledCloud};
use twofive_core::voxelize::occupancy_rule;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn sphere() -> TriMesh {
    TriMesh::icosphere(0.8, 5)
}

fn cuboid() -> TriMesh {
    TriMesh::cuboid(Vec3::new(0.7, 0.5, 0.6), 16)
}

fn round_trip() -> Outcome {
    let cfg = PipelineConfig::default();
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, mesh) in [("sphere", sphere()), ("box", cuboid())] {
        let rec = single_thread(|| {
            let bundle = pipeline::render(&mesh, &cfg).unwrap();
            pipeline::reconstruct(&bundle, &cfg).unwrap()
        });
        let a = metrics::sample_surface(&rec.mesh, 16_000, 0).unwrap();
        let b = metrics::sample_surface(&mesh, 16_000, 0).unwrap();
        let cd = metrics::chamfer(&a, &b).unwrap();
        let fs = metrics::fscore(&a, &b, 0.1).unwrap();
        ok &= cd < 0.06 && fs > 0.99;
        parts.push(format!("{name} cd {cd:.4} fs {fs:.4}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    parts.push(format!("{secs:.1} s single-threaded"));
    outcome(ok, parts.join(", "))
}

fn occupancy_truth_table() -> Outcome {
    // Hand-evaluated: x = 0 needs b > 0.5, x = 1 needs b > -0.5.
    let biases = [-1.0f32, -0.6, 0.0, 0.4, 0.5, 0.6, 1.0];
    let want = [
        [false, false, false, false, false, true, true],
        [false, false, true, true, true, true, true],
    ];
    let mut mismatches = 0;
    for (x, row) in want.iter().enumerate() {
        for (b, &expected) in biases.iter().zip(row) {
            if occupancy_rule(x as f32, *b) != expected {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("14 cases, {mismatches} mismatches"))
}

fn random_latent(rng: &mut ChaCha8Rng, per: usize, d: usize) -> ModalLatent {
    let mut part = || DMatrix::from_fn(per, d, |_, _| rng.random_range(-1.0..1.0));
    let (a, b, c) = (part(), part(), part());
    ModalLatent::from_parts(&a, &b, &c).unwrap()
}

fn layer(seed: u64, d: usize, r: usize) -> MolLayer {
    let mut cfg = MolConfig::new(d, d, Ranks::uniform(r));
    cfg.seed = seed;
    cfg.alphas = Some([4.0, 8.0, 2.0]);
    MolLayer::random(&cfg).unwrap()
}

fn dense_weight(l: &MolLayer, m: Modality) -> DMatrix<f64> {
    let mut w = l.base.clone();
    let extra: &[AdapterKind] = match m {
        Modality::Rgb => &[AdapterKind::General],
        Modality::Normal => &[AdapterKind::General, AdapterKind::Normal],
        Modality::Coord => &[AdapterKind::General, AdapterKind::Coord],
    };
    for &j in extra {
        let p = l.adapter(j);
        w += &p.a * &p.b * (p.alpha / p.a.ncols() as f64);
    }
    w
}

fn loss(l: &MolLayer, x: &ModalLatent) -> f64 {
    l.forward(x).unwrap().tokens.iter().map(|v| v * v).sum()
}

fn mol_exactness() -> Outcome {
    let (d, r) = (12, 4);
    let mut oracle = 0.0f64;
    for seed in 0..50u64 {
        let l = layer(seed, d, r);
        let x = random_latent(&mut ChaCha8Rng::seed_from_u64(1000 + seed), 3, d);
        let h = l.forward(&x).unwrap();
        for i in 0..x.len() {
            let want = x.tokens.row(i) * dense_weight(&l, x.modality[i].unwrap());
            oracle = oracle.max((h.tokens.row(i) - want).amax());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let l = layer(77, d, r);
    let x = random_latent(&mut rng, 4, d);
    let h = l.forward(&x).unwrap();
    let mut scrambled = l.clone();
    for j in [AdapterKind::Normal, AdapterKind::Coord] {
        let p = scrambled.adapter_mut(j);
        p.a = p.a.map(|_| rng.random_range(-3.0..3.0));
        p.b = p.b.map(|_| rng.random_range(-3.0..3.0));
    }
    let g = scrambled.forward(&x).unwrap();
    let invariant = (0..x.len())
        .filter(|&i| x.modality[i] == Some(Modality::Rgb))
        .all(|i| h.tokens.row(i).iter().zip(g.tokens.row(i).iter()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let grads = l.sum_squares_grads(&x).unwrap();
    let step = 1e-4;
    let mut grad_err = 0.0f64;
    let mut probe = l.clone();
    for j in AdapterKind::ALL {
        for in_b in [false, true] {
            let n = if in_b { l.adapter(j).b.len() } else { l.adapter(j).a.len() };
            for k in 0..n {
                let set = |p: &mut MolLayer, v: f64| {
                    let pair = p.adapter_mut(j);
                    if in_b {
                        pair.b[k] = v;
                    } else {
                        pair.a[k] = v;
                    }
                };
                let orig = if in_b { l.adapter(j).b[k] } else { l.adapter(j).a[k] };
                set(&mut probe, orig + step);
                let plus = loss(&probe, &x);
                set(&mut probe, orig - step);
                let minus = loss(&probe, &x);
                set(&mut probe, orig);
                let fd = (plus - minus) / (2.0 * step);
                let an = if in_b { &grads.b } else { &grads.a }[j as usize][k];
                grad_err = grad_err.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
            }
        }
    }
    outcome(
        oracle < 1e-6 && invariant && grad_err < 1e-4,
        format!("50 cases max |diff| {oracle:.2e}, rgb bitwise invariant {invariant}, grad rel err {grad_err:.2e}"),
    )
}

fn parameter_parity() -> Outcome {
    let table = PlacementTable::image_stream(3072);
    let mol = table.mol_params(Ranks::uniform(128));
    let single = table.single_lora_params(384);
    // to_q, to_k, to_v, to_out: 3072 -> 3072; ff in/out: 3072 <-> 12288.
    let hand = 384 * (4 * (3072 + 3072) + 2 * (3072 + 12288));
    outcome(
        mol == single && mol == hand,
        format!("mol (128,128,128) {mol}, single 384 {single}, hand count {hand}"),
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn extended_rope() -> Outcome {
    let d = 48;
    let cfg = RopeConfig::for_dim(d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vec = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let pos = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|_| f64::from(rng.random_range(0..96u32)));

    let mut norm_err = 0.0f64;
    let mut shift_err = 0.0f64;
    for _ in 0..100 {
        let (q, k) = (vec(&mut rng), vec(&mut rng));
        let (p1, p2) = (pos(&mut rng), pos(&mut rng));
        let rq = rope_apply(&q, p1, &cfg).unwrap();
        norm_err = norm_err.max((dot(&rq, &rq).sqrt() - dot(&q, &q).sqrt()).abs());
        let s = [0, 1, 2].map(|_| f64::from(rng.random_range(-50..50i32)));
        let shifted = |p: [f64; 3]| [p[0] + s[0], p[1] + s[1], p[2] + s[2]];
        let before = dot(&rq, &rope_apply(&k, p2, &cfg).unwrap());
        let after = dot(
            &rope_apply(&q, shifted(p1), &cfg).unwrap(),
            &rope_apply(&k, shifted(p2), &cfg).unwrap(),
        );
        shift_err = shift_err.max((before - after).abs());
    }

    let v = vec(&mut rng);
    let outs: Vec<Vec<f64>> = Modality::ALL
        .iter()
        .map(|&m| rope_apply(&v, RopePosition::new(m, 9, 4).vector(), &cfg).unwrap())
        .collect();
    let block = d / 3;
    let axis0_only = outs[1..]
        .iter()
        .all(|o| o[block..] == outs[0][block..] && o[..block] != outs[0][..block]);
    let biases = Modality::ALL.map(|m| RopePosition::new(m, 0, 0).vector()[0]);
    let ok = norm_err < 1e-9 && shift_err < 1e-6 && axis0_only && biases == [0.0, 32.0, 64.0];
    outcome(
        ok,
        format!(
            "norm {norm_err:.2e}, 100 shifts {shift_err:.2e}, axis-0 only {axis0_only}, biases {biases:?}"
        ),
    )
}

fn ray_distance(rig: &CameraRig, f: &PointField, k: usize) -> f64 {
    let s = f.source[k];
    let ray = rig.views[s.view as usize].pixel_ray(s.x, s.y).unwrap();
    ray.line_distance(&f.points[k])
}

fn coordinate_correction() -> Outcome {
    let mesh = TriMesh::icosphere(0.8, 4);
    let rig = CameraRig::rig_with_size(128);
    let bundle = twofive_core::rasterizer::render_bundle(&mesh, &rig, 128).unwrap();
    let clean = PointField::from_bundle(&bundle);
    let params = CorrectionParams::default();

    let fixed = coordfix::correct(&clean, &rig, &params).unwrap();
    let moved = clean.points.iter().zip(&fixed.points).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);

    let normal = Normal::new(0.0, 0.01).unwrap();
    let mut worst_ratio = 0.0f64;
    let mut worst_projected = 0.0f64;
    for trial in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut noisy = clean.clone();
        for k in 0..noisy.len() {
            let s = noisy.source[k];
            let d = rig.views[s.view as usize].pixel_ray(s.x, s.y).unwrap().direction;
            let helper = if d.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
            let a = d.cross(&helper).normalize();
            let b = d.cross(&a);
            noisy.points[k] += a * normal.sample(&mut rng) + b * normal.sample(&mut rng);
        }
        let mean = |f: &PointField| (0..f.len()).map(|k| ray_distance(&rig, f, k)).sum::<f64>() / f.len() as f64;
        let stages = coordfix::correct_stages(&noisy, &rig, &params).unwrap();
        worst_ratio = worst_ratio.max(mean(&stages.corrected) / mean(&noisy));
        let projected = &stages.projected;
        for k in (0..projected.len()).filter(|&k| projected.valid[k]) {
            worst_projected = worst_projected.max(ray_distance(&rig, projected, k));
        }
    }
    let reduction = 1.0 - worst_ratio;
    outcome(
        moved < 1e-6 && reduction >= 0.9 && worst_projected < 1e-9,
        format!(
            "clean moved {moved:.2e}, worst reduction {:.1}% over 10 trials, projected residual {worst_projected:.2e}",
            100.0 * reduction
        ),
    )
}

fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let directed = |p: &[Vec3], q: &[Vec3]| {
        p.iter()
            .map(|x| q.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / p.len() as f64
    };
    directed(a, b) + directed(b, a)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut cloud = || {
            (0..100)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect::<Vec<_>>()
        };
        let (a, b) = (cloud(), cloud());
        let fast = metrics::chamfer(&SampledCloud::from_points(a.clone()), &SampledCloud::from_points(b.clone())).unwrap();
        worst = worst.max((fast - brute_chamfer(&a, &b)).abs());
    }
    let s = metrics::sample_surface(&sphere(), 16_000, 3).unwrap();
    let fs = metrics::fscore(&s, &s, 0.1).unwrap();
    let again = metrics::sample_surface(&sphere(), 16_000, 3).unwrap();
    let other = metrics::sample_surface(&sphere(), 16_000, 4).unwrap();
    let deterministic = s.points == again.points && s.points != other.points && s.len() == 16_000;
    outcome(
        worst < 1e-9 && fs == 1.0 && deterministic,
        format!("chamfer vs brute force {worst:.2e}, fscore(identical) {fs}, K=16000 seed-deterministic {deterministic}"),
    )
}

fn rig_fidelity() -> Outcome {
    let rig = CameraRig::rig_default();
    let mut issues = Vec::new();
    let want = [(0.0, 5.0), (90.0, 5.0), (180.0, 5.0), (270.0, 5.0), (0.0, 90.0)];
    if rig.len() != want.len() {
        issues.push(format!("{} views", rig.len()));
    }
    for (k, (v, &(az, el))) in rig.views.iter().zip(&want).enumerate() {
        let p = v.position() - v.target();
        let dist = p.norm();
        let elev = (p.z / dist).asin().to_degrees();
        if (dist - 4.5).abs() > 1e-12 || (elev - el).abs() > 1e-9 {
            issues.push(format!("view {k}: distance {dist}, elevation {elev}"));
        }
        if el < 90.0 {
            // Azimuth 0 is the front camera on -Y; azimuth grows toward +X.
            let azim = p.x.atan2(-p.y).to_degrees().rem_euclid(360.0);
            if (azim - az).abs() > 1e-9 {
                issues.push(format!("view {k}: azimuth {azim}"));
            }
        }
        let (_, _, forward) = v.basis();
        let top = v.ray_through(0.5 * f64::from(v.width), 0.0).direction;
        let half_fov = top.angle(&forward).to_degrees();
        if (2.0 * half_fov - 30.0).abs() > 1e-9 {
            issues.push(format!("view {k}: fov {}", 2.0 * half_fov));
        }
    }
    let detail = if issues.is_empty() {
        "distance 4.5, fov 30, azimuths 0/90/180/270 at elevation 5, top at 90".to_string()
    } else {
        issues.join("; ")
    };
    outcome(issues.is_empty(), detail)
}

fn file_hash(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mesh_path = dir.path().join("box.obj");
    cuboid().save(&mesh_path).unwrap();
    let cfg = PipelineConfig::default();
    let bundle_dir = dir.path().join("bundle");
    commands::render(&mesh_path, &bundle_dir, &cfg, false).unwrap();
    let out = dir.path().join("out").join("box.obj");

    let mut runs = Vec::new();
    for threads in [1, 4, 1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let files = pool.install(|| commands::reconstruct(&bundle_dir, &out, &cfg).unwrap().1);
        let hashes = [&files.mesh, &files.gaussians, &files.manifest].map(|p| file_hash(p));
        runs.push(hashes);
    }
    let identical = runs.iter().all(|r| r == &runs[0]);
    outcome(
        identical,
        format!("4 runs at 1/4/1/4 threads, mesh sha256 {}", &runs[0][0][..16]),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("round-trip reconstruction", round_trip),
        ("occupancy rule truth table", occupancy_truth_table),
        ("MoL forward, invariance and gradients", mol_exactness),
        ("parameter parity", parameter_parity),
        ("extended RoPE", extended_rope),
        ("coordinate correction", coordinate_correction),
        ("metric oracles", metric_oracles),
        ("rig fidelity", rig_fidelity),
        ("reconstruct determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let mark = if o.passed { "PASS" } else { "FAIL" };
        println!("{mark} {}. {name}: {}", k + 1, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
