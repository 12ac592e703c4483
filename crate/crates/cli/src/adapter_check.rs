//! Property suite for the MoL layer, parameter accounting and rotary
//! embedding, reported as a pass/fail table.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofive_core::adapters::{
    self, route, AdapterKind, LoraPair, ModalLatent, Modality, MolConfig, MolLayer, PlacementTable, Ranks,
    RopeConfig, RopePosition, MODALITY_BIAS,
};

use crate::config::AdapterCheckConfig;
use crate::error::{CliError, StageResult};

pub const ORACLE_TOL: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-4;
pub const NORM_TOL: f64 = 1e-9;
pub const SHIFT_TOL: f64 = 1e-6;
pub const SHIFT_TRIALS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckRow {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

pub fn format_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{mark}  {:<width$}  {}\n", r.name, r.detail));
    }
    out
}

fn latent(rng: &mut ChaCha8Rng, per_modality: usize, d: usize) -> ModalLatent {
    let mut part = || DMatrix::from_fn(per_modality, d, |_, _| rng.random_range(-1.0..1.0));
    let (a, b, c) = (part(), part(), part());
    ModalLatent::from_parts(&a, &b, &c).expect("equal widths")
}

fn toy_config(cfg: &AdapterCheckConfig, seed: u64) -> MolConfig {
    let mut m = MolConfig::new(cfg.dim, cfg.dim, Ranks::uniform(cfg.toy_rank));
    m.seed = seed;
    m.alphas = Some([1.0, 2.0, 0.5].map(|s| s * cfg.toy_rank as f64));
    m
}

fn bitwise_rows_equal(a: &ModalLatent, b: &ModalLatent, keep: impl Fn(Modality) -> bool) -> bool {
    (0..a.len()).all(|i| {
        !keep(a.modality[i].expect("tagged"))
            || a.tokens
                .row(i)
                .iter()
                .zip(b.tokens.row(i).iter())
                .all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

/// Largest deviation of the routed forward pass from a dense-matrix oracle
/// over `cases` seeded layers.
pub fn dense_oracle_error(cfg: &AdapterCheckConfig) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for case in 0..cfg.cases as u64 {
        let seed = cfg.seed.wrapping_add(case);
        let layer = MolLayer::random(&toy_config(cfg, seed)).stage("adapters")?;
        let x = latent(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), 3, cfg.dim);
        let h = layer.forward(&x).stage("adapters")?;
        for i in 0..x.len() {
            let mut w = layer.base.clone();
            for &j in route(x.modality[i].expect("tagged")) {
                w += layer.adapter(j).delta();
            }
            let want = x.tokens.row(i) * w;
            worst = worst.max((h.tokens.row(i) - want).amax());
        }
    }
    Ok(worst)
}

fn mol_rows(cfg: &AdapterCheckConfig, rows: &mut Vec<CheckRow>) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = latent(&mut rng, 4, cfg.dim);

    let mut init_cfg = toy_config(cfg, cfg.seed);
    init_cfg.init_range = 0.5;
    let init = MolLayer::init(&init_cfg).stage("adapters")?;
    let h = init.forward(&x).stage("adapters")?;
    let err = (h.tokens - &x.tokens * &init.base).amax();
    rows.push(CheckRow::new("zero-B adapters give the base map", err < 1e-12, format!("max |diff| {err:.2e}")));

    let err = dense_oracle_error(cfg)?;
    rows.push(CheckRow::new(
        "forward matches dense oracle",
        err < ORACLE_TOL,
        format!("{} cases, max |diff| {err:.2e}", cfg.cases),
    ));

    let layer = MolLayer::random(&toy_config(cfg, cfg.seed)).stage("adapters")?;
    let h = layer.forward(&x).stage("adapters")?;
    let mut scrambled = layer.clone();
    for j in [AdapterKind::Normal, AdapterKind::Coord] {
        let p = scrambled.adapter_mut(j);
        p.a = DMatrix::from_fn(p.a.nrows(), p.a.ncols(), |_, _| rng.random_range(-5.0..5.0));
        p.b = DMatrix::from_fn(p.b.nrows(), p.b.ncols(), |_, _| rng.random_range(-5.0..5.0));
    }
    let g = scrambled.forward(&x).stage("adapters")?;
    rows.push(CheckRow::new(
        "rgb outputs ignore auxiliary adapters",
        bitwise_rows_equal(&h, &g, |m| m == Modality::Rgb),
        "bitwise comparison".into(),
    ));

    let mut ablated = layer.clone();
    *ablated.adapter_mut(AdapterKind::Normal) = LoraPair::zeros(cfg.dim, cfg.dim, cfg.toy_rank);
    let g = ablated.forward(&x).stage("adapters")?;
    let others_same = bitwise_rows_equal(&h, &g, |m| m != Modality::Normal);
    let normal_moved = !bitwise_rows_equal(&h, &g, |m| m == Modality::Normal);
    rows.push(CheckRow::new(
        "normal adapter only moves normal tokens",
        others_same && normal_moved,
        "bitwise comparison".into(),
    ));

    let err = layer.grad_check(&x, GRAD_STEP).stage("adapters")?;
    rows.push(CheckRow::new(
        "gradients match central differences",
        err < GRAD_TOL,
        format!("max relative error {err:.2e}"),
    ));

    let rgb = ModalLatent::new(1, x.tokens.rows(0, 4).into_owned(), vec![Some(Modality::Rgb); 4])
        .stage("adapters")?;
    let grads = layer.sum_squares_grads(&rgb).stage("adapters")?;
    let zero = [AdapterKind::Normal, AdapterKind::Coord]
        .iter()
        .all(|&j| grads.a[j as usize].iter().chain(grads.b[j as usize].iter()).all(|&v| v == 0.0));
    rows.push(CheckRow::new("rgb batch leaves auxiliary gradients zero", zero, String::new()));
    Ok(())
}

fn parity_rows(cfg: &AdapterCheckConfig, rows: &mut Vec<CheckRow>) {
    let table = PlacementTable::image_stream(cfg.parity_dim);
    let mol = table.mol_params(cfg.ranks);
    let single = table.single_lora_params(cfg.single_rank);
    let r = cfg.ranks;
    rows.push(CheckRow::new(
        "parameter parity",
        mol == single,
        format!(
            "mol ({},{},{})={mol} single {}={single} equal parameters: {}",
            r.general,
            r.normal,
            r.coord,
            cfg.single_rank,
            mol == single
        ),
    ));
    let base = PlacementTable::base(cfg.parity_dim);
    let lower = Ranks {
        general: 64,
        normal: 128,
        coord: 128,
    };
    rows.push(CheckRow::new(
        "base placement table",
        base.validate().is_ok(),
        format!(
            "{} layers, mol (64,128,128)={}",
            base.layers.len(),
            base.mol_params(lower)
        ),
    ));
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rope_rows(cfg: &AdapterCheckConfig, rows: &mut Vec<CheckRow>) -> Result<(), CliError> {
    let rope = RopeConfig::for_dim(cfg.dim).stage("adapters")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0907);
    let pos = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|_| f64::from(rng.random_range(0..128u32)));

    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let v = random_vec(&mut rng, cfg.dim);
        let out = adapters::rope_apply(&v, pos(&mut rng), &rope).stage("adapters")?;
        worst = worst.max((dot(&out, &out).sqrt() - dot(&v, &v).sqrt()).abs());
    }
    rows.push(CheckRow::new("rope preserves norm", worst < NORM_TOL, format!("max |diff| {worst:.2e}")));

    let mut worst = 0.0f64;
    for _ in 0..SHIFT_TRIALS {
        let (q, k) = (random_vec(&mut rng, cfg.dim), random_vec(&mut rng, cfg.dim));
        let (p1, p2) = (pos(&mut rng), pos(&mut rng));
        let d = [0, 1, 2].map(|_| f64::from(rng.random_range(-64..64i32)));
        let shift = |p: [f64; 3]| [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
        let score = |a, b| -> Result<f64, CliError> {
            Ok(dot(
                &adapters::rope_apply(&q, a, &rope).stage("adapters")?,
                &adapters::rope_apply(&k, b, &rope).stage("adapters")?,
            ))
        };
        worst = worst.max((score(p1, p2)? - score(shift(p1), shift(p2))?).abs());
    }
    rows.push(CheckRow::new(
        "rope relative-position invariance",
        worst < SHIFT_TOL,
        format!("{SHIFT_TRIALS} shifts, max |diff| {worst:.2e}"),
    ));

    let v = random_vec(&mut rng, cfg.dim);
    let outs: Vec<Vec<f64>> = Modality::ALL
        .iter()
        .map(|&m| adapters::rope_apply(&v, RopePosition::new(m, 7, 3).vector(), &rope))
        .collect::<Result<_, _>>()
        .stage("adapters")?;
    let axis0 = rope.block(0);
    let spatial_same = outs[1..].iter().all(|o| o[axis0.end..] == outs[0][axis0.end..]);
    let axis0_differs = outs[1..].iter().all(|o| o[axis0.clone()] != outs[0][axis0.clone()]);
    rows.push(CheckRow::new(
        "modality bias only rotates axis-0 block",
        spatial_same && axis0_differs,
        String::new(),
    ));
    rows.push(CheckRow::new(
        "modality bias values",
        MODALITY_BIAS == [0, 32, 64],
        format!("{MODALITY_BIAS:?}"),
    ));
    Ok(())
}

fn weight_rows(cfg: &AdapterCheckConfig, rows: &mut Vec<CheckRow>) {
    let Some(path) = &cfg.weights else { return };
    match MolLayer::load(path) {
        Ok(layer) => {
            rows.push(CheckRow::new("weight blob checksum", true, path.display().to_string()));
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let x = latent(&mut rng, 2, layer.d_in());
            let res = layer.grad_check(&x, GRAD_STEP);
            let (ok, detail) = match res {
                Ok(e) => (e < GRAD_TOL, format!("max relative error {e:.2e}")),
                Err(e) => (false, e.to_string()),
            };
            rows.push(CheckRow::new("weight blob gradients", ok, detail));
        }
        Err(e) => rows.push(CheckRow::new("weight blob checksum", false, e.to_string())),
    }
}

/// Runs every check; failures are rows, not errors.
pub fn run_checks(cfg: &AdapterCheckConfig) -> Result<Vec<CheckRow>, CliError> {
    let mut rows = Vec::new();
    mol_rows(cfg, &mut rows)?;
    parity_rows(cfg, &mut rows);
    rope_rows(cfg, &mut rows)?;
    weight_rows(cfg, &mut rows);
    Ok(rows)
}
