//! Pipeline configuration: one TOML or JSON file, every field optional,
//! validated as a whole before any stage runs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twofive_core::adapters::Ranks;
use twofive_core::coordfix::CorrectionParams;
use twofive_core::latentcodec::{DEFAULT_CHANNELS, DEFAULT_PATCH};
use twofive_core::metrics::{DEFAULT_SAMPLES, DEFAULT_TAU};
use twofive_core::rasterizer::MIN_RENDER_SIZE;
use twofive_core::voxelize::{DEFAULT_RESOLUTION, MAX_RESOLUTION, MIN_RESOLUTION};

pub const DEFAULT_RENDER_SIZE: u32 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub size: u32,
    /// Rig JSON file; the default five-view rig when absent.
    pub rig: Option<PathBuf>,
    pub bottom_view: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_RENDER_SIZE,
            rig: None,
            bottom_view: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub patch: u32,
    pub channels: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            patch: DEFAULT_PATCH,
            channels: DEFAULT_CHANNELS,
        }
    }
}

/// Where voxel positions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordSource {
    /// The bundle's full-resolution coordinate images.
    Bundle,
    /// Coordinates decoded back from the latent grid.
    Decoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoxelConfig {
    pub resolution: usize,
    /// Closing radius in cells; the grid resolution when absent.
    pub closing_radius: Option<i64>,
    pub coord_source: CoordSource,
}

impl VoxelConfig {
    pub fn closing_radius(&self) -> i64 {
        self.closing_radius.unwrap_or(self.resolution as i64)
    }
}

impl Default for VoxelConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            closing_radius: None,
            coord_source: CoordSource::Bundle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordfixConfig {
    pub enabled: bool,
    pub sigma_spatial: f64,
    pub sigma_range: f64,
    pub sigma_displacement: f64,
    pub sigma_displacement_range: f64,
    pub outlier_distance: f64,
}

impl Default for CoordfixConfig {
    fn default() -> Self {
        let p = CorrectionParams::default();
        Self {
            enabled: true,
            sigma_spatial: p.sigma_spatial,
            sigma_range: p.sigma_range,
            sigma_displacement: p.sigma_displacement,
            sigma_displacement_range: p.sigma_displacement_range,
            outlier_distance: p.outlier_distance,
        }
    }
}

impl CoordfixConfig {
    pub fn params(&self) -> CorrectionParams {
        CorrectionParams {
            sigma_spatial: self.sigma_spatial,
            sigma_range: self.sigma_range,
            sigma_displacement: self.sigma_displacement,
            sigma_displacement_range: self.sigma_displacement_range,
            outlier_distance: self.outlier_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub samples: usize,
    pub tau: f64,
    pub seed: u64,
    /// Normalize both meshes into the unit cube before comparing.
    pub align: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            tau: DEFAULT_TAU,
            seed: 0,
            align: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterCheckConfig {
    /// Token width of the toy layers; must be divisible by 6 for the
    /// three-axis rotary split.
    pub dim: usize,
    /// Adapter rank of the toy layers.
    pub toy_rank: usize,
    /// MoL ranks compared for parameter parity.
    pub ranks: Ranks,
    /// Single-adapter rank compared against the MoL ranks for parity.
    pub single_rank: usize,
    /// Layer width used for the parity tables.
    pub parity_dim: usize,
    pub cases: usize,
    pub seed: u64,
    /// Weight blob to verify and include in the checks.
    pub weights: Option<PathBuf>,
}

impl Default for AdapterCheckConfig {
    fn default() -> Self {
        Self {
            dim: 12,
            toy_rank: 4,
            ranks: Ranks::uniform(128),
            single_rank: 384,
            parity_dim: 3072,
            cases: 50,
            seed: 0,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub render: RenderConfig,
    pub codec: CodecConfig,
    pub voxel: VoxelConfig,
    pub coordfix: CoordfixConfig,
    pub metrics: MetricsConfig,
    pub adapters: AdapterCheckConfig,
}

/// One invalid field, addressed by its dotted path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

impl std::error::Error for ConfigErrors {}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn check(&mut self, ok: bool, path: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.0.push(ConfigIssue {
                path: path.into(),
                message: message(),
            });
        }
    }

    fn positive(&mut self, path: &str, v: f64) {
        self.check(v > 0.0 && v.is_finite(), path, || format!("must be positive and finite, got {v}"));
    }
}

impl PipelineConfig {
    /// Reads a `.toml` or `.json` file; other extensions are tried as TOML.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        }
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut is = Issues(Vec::new());
        let r = &self.render;
        is.check(r.size >= MIN_RENDER_SIZE, "render.size", || {
            format!("must be at least {MIN_RENDER_SIZE}, got {}", r.size)
        });
        if let Some(p) = &r.rig {
            is.check(p.is_file(), "render.rig", || format!("{} is not a file", p.display()));
        }

        let c = &self.codec;
        is.check(c.patch >= 1, "codec.patch", || "must be at least 1".into());
        is.check(c.patch == 0 || r.size % c.patch == 0, "codec.patch", || {
            format!("{} does not divide render.size {}", c.patch, r.size)
        });
        is.check(c.channels >= 4, "codec.channels", || format!("must be at least 4, got {}", c.channels));

        let v = &self.voxel;
        is.check((MIN_RESOLUTION..=MAX_RESOLUTION).contains(&v.resolution), "voxel.resolution", || {
            format!("must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {}", v.resolution)
        });
        is.check(
            (0..=v.resolution as i64).contains(&v.closing_radius()),
            "voxel.closing_radius",
            || format!("must be in [0, voxel.resolution], got {}", v.closing_radius()),
        );

        let f = &self.coordfix;
        is.positive("coordfix.sigma_spatial", f.sigma_spatial);
        is.positive("coordfix.sigma_range", f.sigma_range);
        is.positive("coordfix.sigma_displacement", f.sigma_displacement);
        is.positive("coordfix.sigma_displacement_range", f.sigma_displacement_range);
        is.positive("coordfix.outlier_distance", f.outlier_distance);

        let m = &self.metrics;
        is.check(m.samples >= 1, "metrics.samples", || "must be at least 1".into());
        is.positive("metrics.tau", m.tau);

        let a = &self.adapters;
        is.check(a.dim > 0 && a.dim % 6 == 0, "adapters.dim", || {
            format!("must be a positive multiple of 6, got {}", a.dim)
        });
        is.check((1..=a.dim).contains(&a.toy_rank), "adapters.toy_rank", || {
            format!("must be in [1, adapters.dim], got {}", a.toy_rank)
        });
        is.check(a.parity_dim > 0, "adapters.parity_dim", || "must be positive".into());
        is.check(a.cases > 0, "adapters.cases", || "must be positive".into());
        for (name, rank) in [
            ("general", a.ranks.general),
            ("normal", a.ranks.normal),
            ("coord", a.ranks.coord),
        ] {
            is.check(rank <= 4096, &format!("adapters.ranks.{name}"), || format!("{rank} exceeds 4096"));
        }
        is.check(a.single_rank <= 4096, "adapters.single_rank", || format!("{} exceeds 4096", a.single_rank));
        if let Some(p) = &a.weights {
            is.check(p.is_file(), "adapters.weights", || format!("{} is not a file", p.display()));
        }

        if is.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(is.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: PipelineConfig = toml::from_str("[voxel]\nresolution = 32\n").unwrap();
        assert_eq!(c.voxel.resolution, 32);
        assert_eq!(c.codec, CodecConfig::default());
        assert!(toml::from_str::<PipelineConfig>("[voxel]\nresolutoin = 32\n").is_err());
    }

    #[test]
    fn every_invalid_field_is_reported() {
        let mut c = PipelineConfig::default();
        c.render.size = 100;
        c.codec.channels = 2;
        c.voxel.resolution = 4;
        c.voxel.closing_radius = Some(6);
        c.coordfix.sigma_range = -1.0;
        c.metrics.tau = 0.0;
        c.adapters.dim = 10;
        let errs = c.validate().unwrap_err().0;
        let paths: Vec<&str> = errs.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(
            paths,
            [
                "codec.patch",
                "codec.channels",
                "voxel.resolution",
                "voxel.closing_radius",
                "coordfix.sigma_range",
                "metrics.tau",
                "adapters.dim"
            ]
        );
    }
}
