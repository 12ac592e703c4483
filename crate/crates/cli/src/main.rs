use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twofive_cli::adapter_check::format_table;
use twofive_cli::commands;
use twofive_cli::config::CoordSource;
use twofive_cli::{CliError, PipelineConfig};
use twofive_core::adapters::{MolConfig, MolLayer, Ranks};

#[derive(Parser)]
#[command(name = "twofive", version, about = "Multiview 2.5D bundle pipeline")]
struct Cli {
    /// Pipeline config, TOML or JSON. Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "TWOFIVE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a mesh into a bundle directory.
    Render {
        mesh: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        size: Option<u32>,
        /// Camera rig JSON instead of the default rig.
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long)]
        bottom_view: bool,
        /// Center and scale the mesh into [-1, 1]^3 first.
        #[arg(long)]
        normalize: bool,
    },
    /// Reconstruct a mesh and Gaussian PLY from a bundle directory.
    Reconstruct {
        bundle_dir: PathBuf,
        out_mesh: PathBuf,
        #[command(flatten)]
        voxel: VoxelFlags,
    },
    /// Compare two meshes, optionally also two images.
    Eval {
        mesh_a: PathBuf,
        mesh_b: PathBuf,
        /// Two PNGs to compare with PSNR and SSIM.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        images: Option<Vec<PathBuf>>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Normalize both meshes into the unit cube before sampling.
        #[arg(long)]
        align: bool,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Also write the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the adapter and rotary embedding property checks.
    AdapterCheck {
        /// Weight blob to verify.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write a toy layer's weight blob to this path and exit.
        #[arg(long)]
        export_weights: Option<PathBuf>,
    },
    /// Run coordinate correction on a bundle directory.
    Correct {
        bundle_dir: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        sigmas: SigmaFlags,
    },
    /// Project a bundle into a sparse voxel latent file.
    Voxelize {
        bundle_dir: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        voxel: VoxelFlags,
        /// Skip the closing refinement.
        #[arg(long)]
        no_refine: bool,
    },
}

#[derive(Args)]
struct VoxelFlags {
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    closing_radius: Option<i64>,
    #[arg(long)]
    patch: Option<u32>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long, value_parser = parse_source)]
    coord_source: Option<CoordSource>,
    /// Skip coordinate correction.
    #[arg(long)]
    no_correct: bool,
}

#[derive(Args)]
struct SigmaFlags {
    #[arg(long)]
    sigma_spatial: Option<f64>,
    #[arg(long)]
    sigma_range: Option<f64>,
    #[arg(long)]
    sigma_displacement: Option<f64>,
    #[arg(long)]
    sigma_displacement_range: Option<f64>,
}

fn parse_source(s: &str) -> Result<CoordSource, String> {
    match s {
        "bundle" => Ok(CoordSource::Bundle),
        "decoded" => Ok(CoordSource::Decoded),
        _ => Err(format!("expected bundle or decoded, got {s}")),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl VoxelFlags {
    fn apply(self, cfg: &mut PipelineConfig) {
        set(&mut cfg.voxel.resolution, self.resolution);
        if self.closing_radius.is_some() {
            cfg.voxel.closing_radius = self.closing_radius;
        }
        set(&mut cfg.codec.patch, self.patch);
        set(&mut cfg.codec.channels, self.channels);
        set(&mut cfg.voxel.coord_source, self.coord_source);
        if self.no_correct {
            cfg.coordfix.enabled = false;
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(CliError::Usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Render {
            mesh,
            out_dir,
            size,
            rig,
            bottom_view,
            normalize,
        } => {
            set(&mut cfg.render.size, size);
            if rig.is_some() {
                cfg.render.rig = rig;
            }
            cfg.render.bottom_view |= bottom_view;
            let b = commands::render(&mesh, &out_dir, &cfg, normalize)?;
            println!("rendered {} views at {}px to {}", b.views.len(), cfg.render.size, out_dir.display());
        }
        Command::Reconstruct {
            bundle_dir,
            out_mesh,
            voxel,
        } => {
            voxel.apply(&mut cfg);
            let (rec, out) = commands::reconstruct(&bundle_dir, &out_mesh, &cfg)?;
            println!(
                "mesh {} ({} vertices, {} faces), gaussians {} ({}), manifest {}",
                out.mesh.display(),
                rec.mesh.vertices.len(),
                rec.mesh.faces.len(),
                out.gaussians.display(),
                rec.gaussians.len(),
                out.manifest.display()
            );
        }
        Command::Eval {
            mesh_a,
            mesh_b,
            images,
            samples,
            tau,
            seed,
            align,
            json,
            out,
        } => {
            set(&mut cfg.metrics.samples, samples);
            set(&mut cfg.metrics.tau, tau);
            set(&mut cfg.metrics.seed, seed);
            cfg.metrics.align |= align;
            let pair = images.as_ref().map(|v| (v[0].as_path(), v[1].as_path()));
            let report = commands::eval(&mesh_a, &mesh_b, pair, &cfg)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(path) = out {
                std::fs::write(&path, format!("{text}\n")).map_err(|e| CliError::Stage {
                    stage: "write",
                    source: twofive_core::Error::File { path, source: e },
                })?;
            }
            if json {
                println!("{text}");
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::AdapterCheck {
            weights,
            cases,
            seed,
            export_weights,
        } => {
            if weights.is_some() {
                cfg.adapters.weights = weights;
            }
            set(&mut cfg.adapters.cases, cases);
            set(&mut cfg.adapters.seed, seed);
            if let Some(path) = export_weights {
                cfg.validate()?;
                let a = &cfg.adapters;
                let mut m = MolConfig::new(a.dim, a.dim, Ranks::uniform(a.toy_rank));
                m.seed = a.seed;
                let layer = MolLayer::random(&m).map_err(|source| CliError::Stage { stage: "adapters", source })?;
                layer.save(&path).map_err(|source| CliError::Stage { stage: "write", source })?;
                println!("wrote {}", path.display());
                return Ok(());
            }
            let rows = commands::adapter_check(&cfg)?;
            print!("{}", format_table(&rows));
            let failed = rows.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::Check(format!("{failed} of {} checks failed", rows.len())));
            }
        }
        Command::Correct {
            bundle_dir,
            out_dir,
            sigmas,
        } => {
            set(&mut cfg.coordfix.sigma_spatial, sigmas.sigma_spatial);
            set(&mut cfg.coordfix.sigma_range, sigmas.sigma_range);
            set(&mut cfg.coordfix.sigma_displacement, sigmas.sigma_displacement);
            set(&mut cfg.coordfix.sigma_displacement_range, sigmas.sigma_displacement_range);
            let f = commands::correct(&bundle_dir, &out_dir, &cfg)?;
            println!("corrected {} points ({} valid) into {}", f.len(), f.valid_count(), out_dir.display());
        }
        Command::Voxelize {
            bundle_dir,
            out,
            voxel,
            no_refine,
        } => {
            voxel.apply(&mut cfg);
            let v = commands::voxelize(&bundle_dir, &out, &cfg, !no_refine)?;
            println!("{} cells, {} occupied, written to {}", v.len(), v.occupied_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let summary: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .filter(|l| !l.is_empty())
                .collect();
            let text = summary.join(" ");
            eprintln!("{}", CliError::Usage(text.trim_start_matches("error: ").to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
