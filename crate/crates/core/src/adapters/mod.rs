//! Mixture-of-LoRA linear layers and the extended rotary embedding.
//!
//! A [`MolLayer`] wraps a frozen dense map `F` with three low-rank adapters.
//! Every token passes through `F` and the general adapter; normal and coord
//! tokens additionally pass through their own adapter:
//!
//! ```text
//! rgb:    h = F(x) + G(x)
//! normal: h = F(x) + G(x) + N(x)
//! coord:  h = F(x) + G(x) + C(x)
//! ```
//!
//! with `G(x) = (x A_g) B_g (alpha_g / r_g)` and likewise for `N` and `C`.

mod blob;
mod placement;
mod rope;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PathContext, Result};
pub use crate::latentcodec::Modality;

pub use blob::{read_weights, write_weights, WEIGHT_MAGIC};
pub use placement::{LayerPlacement, PlacementTable};
pub use rope::{rope_apply, RopeConfig, RopePosition, DEFAULT_THETA, MODALITY_BIAS};

/// Adapter slots in routing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    General = 0,
    Normal = 1,
    Coord = 2,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 3] = [AdapterKind::General, AdapterKind::Normal, AdapterKind::Coord];

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::General => "general",
            AdapterKind::Normal => "normal",
            AdapterKind::Coord => "coord",
        }
    }
}

/// Adapters applied to a token of the given modality, in summation order.
pub fn route(m: Modality) -> &'static [AdapterKind] {
    match m {
        Modality::Rgb => &[AdapterKind::General],
        Modality::Normal => &[AdapterKind::General, AdapterKind::Normal],
        Modality::Coord => &[AdapterKind::General, AdapterKind::Coord],
    }
}

/// Per-adapter ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ranks {
    pub general: usize,
    pub normal: usize,
    pub coord: usize,
}

impl Ranks {
    pub const fn uniform(r: usize) -> Self {
        Self {
            general: r,
            normal: r,
            coord: r,
        }
    }

    pub fn get(&self, j: AdapterKind) -> usize {
        match j {
            AdapterKind::General => self.general,
            AdapterKind::Normal => self.normal,
            AdapterKind::Coord => self.coord,
        }
    }
}

/// Shape and initialization of a single [`MolLayer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MolConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub ranks: Ranks,
    /// Adapter `alpha`; `None` means `alpha_j = r_j`, a scale of 1.
    #[serde(default)]
    pub alphas: Option<[f64; 3]>,
    /// Half-width of the uniform distribution for `A` entries.
    #[serde(default = "default_init_range")]
    pub init_range: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_init_range() -> f64 {
    0.01
}

impl MolConfig {
    pub fn new(d_in: usize, d_out: usize, ranks: Ranks) -> Self {
        Self {
            d_in,
            d_out,
            ranks,
            alphas: None,
            init_range: default_init_range(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::param("layer dimensions must be positive"));
        }
        if !(self.init_range.is_finite() && self.init_range >= 0.0) {
            return Err(Error::param("init_range must be finite and non-negative"));
        }
        if let Some(a) = self.alphas {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::param("alphas must be finite"));
            }
        }
        Ok(())
    }
}

/// Low-rank pair `A: d_in x r`, `B: r x d_out` with output scale `alpha / r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub alpha: f64,
}

impl LoraPair {
    pub fn zeros(d_in: usize, d_out: usize, rank: usize) -> Self {
        Self {
            a: DMatrix::zeros(d_in, rank),
            b: DMatrix::zeros(rank, d_out),
            alpha: rank as f64,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn scale(&self) -> f64 {
        if self.rank() == 0 {
            0.0
        } else {
            self.alpha / self.rank() as f64
        }
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// Dense equivalent `A B (alpha / r)`.
    pub fn delta(&self) -> DMatrix<f64> {
        &self.a * &self.b * self.scale()
    }

    fn matrix(&self, b: bool) -> &DMatrix<f64> {
        if b {
            &self.b
        } else {
            &self.a
        }
    }

    fn matrix_mut(&mut self, b: bool) -> &mut DMatrix<f64> {
        if b {
            &mut self.b
        } else {
            &mut self.a
        }
    }

    fn apply(&self, x: &RowDVector<f64>) -> RowDVector<f64> {
        (x * &self.a) * &self.b * self.scale()
    }
}

/// Frozen dense map plus the general, normal and coord adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct MolLayer {
    pub base: DMatrix<f64>,
    pub adapters: [LoraPair; 3],
}

/// Gradients of a scalar loss with respect to every adapter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub a: [DMatrix<f64>; 3],
    pub b: [DMatrix<f64>; 3],
}

/// Tokens of shape `batch x len x d`, stored as `batch * len` rows, each
/// tagged with its modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalLatent {
    pub batch: usize,
    pub tokens: DMatrix<f64>,
    pub modality: Vec<Option<Modality>>,
}

impl ModalLatent {
    pub fn new(batch: usize, tokens: DMatrix<f64>, modality: Vec<Option<Modality>>) -> Result<Self> {
        let n = tokens.nrows();
        if modality.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} tags for {n} tokens",
                modality.len()
            )));
        }
        if batch == 0 || n % batch != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{n} tokens do not split into {batch} batches"
            )));
        }
        Ok(Self {
            batch,
            tokens,
            modality,
        })
    }

    /// Concatenates rgb, normal and coord token blocks into one sequence.
    pub fn from_parts(rgb: &DMatrix<f64>, normal: &DMatrix<f64>, coord: &DMatrix<f64>) -> Result<Self> {
        let d = rgb.ncols();
        if normal.ncols() != d || coord.ncols() != d {
            return Err(Error::ShapeMismatch("modal parts differ in width".into()));
        }
        let n = rgb.nrows() + normal.nrows() + coord.nrows();
        let mut tokens = DMatrix::zeros(n, d);
        let mut modality = Vec::with_capacity(n);
        let mut row = 0;
        for (m, part) in [(Modality::Rgb, rgb), (Modality::Normal, normal), (Modality::Coord, coord)] {
            tokens.rows_mut(row, part.nrows()).copy_from(part);
            row += part.nrows();
            modality.extend(std::iter::repeat(Some(m)).take(part.nrows()));
        }
        Self::new(1, tokens, modality)
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.len() / self.batch
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    fn tags(&self) -> Result<Vec<Modality>> {
        self.modality
            .iter()
            .enumerate()
            .map(|(i, m)| m.ok_or(Error::UntaggedToken(i)))
            .collect()
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        if half == 0.0 {
            0.0
        } else {
            rng.random_range(-half..=half)
        }
    })
}

impl MolLayer {
    /// Random base map, small uniform `A`, zero `B`: the adapted layer starts
    /// exactly at the base layer.
    pub fn init(cfg: &MolConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let base = uniform_matrix(&mut rng, cfg.d_in, cfg.d_out, 1.0 / (cfg.d_in as f64).sqrt());
        let adapters = AdapterKind::ALL.map(|j| {
            let r = cfg.ranks.get(j);
            let mut p = LoraPair::zeros(cfg.d_in, cfg.d_out, r);
            p.a = uniform_matrix(&mut rng, cfg.d_in, r, cfg.init_range);
            p.alpha = cfg.alphas.map_or(r as f64, |a| a[j as usize]);
            p
        });
        Ok(Self { base, adapters })
    }

    /// Like [`MolLayer::init`] but with random `B` as well, for tests and
    /// checks that need non-trivial adapter outputs.
    pub fn random(cfg: &MolConfig) -> Result<Self> {
        let mut layer = Self::init(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        for p in &mut layer.adapters {
            p.a = uniform_matrix(&mut rng, p.a.nrows(), p.a.ncols(), 1.0);
            p.b = uniform_matrix(&mut rng, p.b.nrows(), p.b.ncols(), 1.0);
        }
        Ok(layer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).at_path(path)?);
        write_weights(self, &mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_weights(std::fs::File::open(path).at_path(path)?)
    }

    pub fn d_in(&self) -> usize {
        self.base.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.base.ncols()
    }

    pub fn adapter(&self, j: AdapterKind) -> &LoraPair {
        &self.adapters[j as usize]
    }

    pub fn adapter_mut(&mut self, j: AdapterKind) -> &mut LoraPair {
        &mut self.adapters[j as usize]
    }

    pub fn ranks(&self) -> Ranks {
        Ranks {
            general: self.adapters[0].rank(),
            normal: self.adapters[1].rank(),
            coord: self.adapters[2].rank(),
        }
    }

    /// Trainable parameters: all adapter matrices, not the base map.
    pub fn trainable_params(&self) -> usize {
        self.adapters.iter().map(LoraPair::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (d_in, d_out) = (self.d_in(), self.d_out());
        for (j, p) in AdapterKind::ALL.iter().zip(&self.adapters) {
            if p.a.nrows() != d_in || p.b.ncols() != d_out || p.a.ncols() != p.b.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} adapter is {}x{} then {}x{} for a {d_in}x{d_out} base",
                    j.name(),
                    p.a.nrows(),
                    p.a.ncols(),
                    p.b.nrows(),
                    p.b.ncols()
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &ModalLatent) -> Result<Vec<Modality>> {
        self.validate()?;
        if x.dim() != self.d_in() {
            return Err(Error::ShapeMismatch(format!(
                "token width {} but layer expects {}",
                x.dim(),
                self.d_in()
            )));
        }
        x.tags()
    }

    fn token_output(&self, x: &RowDVector<f64>, m: Modality) -> RowDVector<f64> {
        let mut h = x * &self.base;
        for &j in route(m) {
            h += self.adapter(j).apply(x);
        }
        h
    }

    /// Routed forward pass; token order and tags are preserved.
    pub fn forward(&self, x: &ModalLatent) -> Result<ModalLatent> {
        let tags = self.check_input(x)?;
        let rows: Vec<RowDVector<f64>> = (0..x.len())
            .into_par_iter()
            .map(|i| self.token_output(&x.tokens.row(i).into_owned(), tags[i]))
            .collect();
        let tokens = if rows.is_empty() {
            DMatrix::zeros(0, self.d_out())
        } else {
            DMatrix::from_rows(&rows)
        };
        Ok(ModalLatent {
            batch: x.batch,
            tokens,
            modality: x.modality.clone(),
        })
    }

    /// `sum(h^2)` over all output entries.
    pub fn sum_squares_loss(&self, x: &ModalLatent) -> Result<f64> {
        Ok(self.forward(x)?.tokens.iter().map(|v| v * v).sum())
    }

    /// Analytic gradients of [`MolLayer::sum_squares_loss`].
    pub fn sum_squares_grads(&self, x: &ModalLatent) -> Result<AdapterGrads> {
        let h = self.forward(x)?;
        let tags = x.tags()?;
        let mut grads = AdapterGrads {
            a: self.adapters.clone().map(|p| DMatrix::zeros(p.a.nrows(), p.a.ncols())),
            b: self.adapters.clone().map(|p| DMatrix::zeros(p.b.nrows(), p.b.ncols())),
        };
        for (i, &m) in tags.iter().enumerate() {
            let xi = x.tokens.row(i);
            let g = h.tokens.row(i) * 2.0;
            for &j in route(m) {
                let p = self.adapter(j);
                let s = p.scale();
                let u = xi * &p.a;
                grads.b[j as usize] += u.transpose() * &g * s;
                grads.a[j as usize] += xi.transpose() * (&g * p.b.transpose()) * s;
            }
        }
        Ok(grads)
    }

    /// Largest relative error between analytic gradients and central finite
    /// differences with the given step, over every adapter parameter.
    pub fn grad_check(&self, x: &ModalLatent, step: f64) -> Result<f64> {
        let grads = self.sum_squares_grads(x)?;
        let mut probe = self.clone();
        let mut worst = 0.0f64;
        for j in AdapterKind::ALL {
            for in_b in [false, true] {
                let n = self.adapter(j).matrix(in_b).len();
                for k in 0..n {
                    let orig = probe.adapter(j).matrix(in_b)[k];
                    probe.adapter_mut(j).matrix_mut(in_b)[k] = orig + step;
                    let plus = probe.sum_squares_loss(x)?;
                    probe.adapter_mut(j).matrix_mut(in_b)[k] = orig - step;
                    let minus = probe.sum_squares_loss(x)?;
                    probe.adapter_mut(j).matrix_mut(in_b)[k] = orig;
                    let fd = (plus - minus) / (2.0 * step);
                    let an = if in_b { &grads.b } else { &grads.a }[j as usize][k];
                    worst = worst.max((an - fd).abs() / (an.abs() + 1e-8));
                }
            }
        }
        Ok(worst)
    }
}

/// Trainable parameter count of a MoL adapter set on one `d_in x d_out`
/// layer: `sum_j r_j (d_in + d_out)`.
pub fn mol_param_count(d_in: usize, d_out: usize, ranks: Ranks) -> usize {
    (ranks.general + ranks.normal + ranks.coord) * (d_in + d_out)
}

/// Trainable parameter count of a single LoRA adapter: `r (d_in + d_out)`.
pub fn single_lora_param_count(d_in: usize, d_out: usize, rank: usize) -> usize {
    rank * (d_in + d_out)
}
